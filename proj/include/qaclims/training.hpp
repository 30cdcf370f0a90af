#pragma once

#include "qaclims/backbone.hpp"
#include "qaclims/corpus.hpp"
#include "qaclims/dataset.hpp"
#include "qaclims/encoders.hpp"
#include "qaclims/losses.hpp"
#include "qaclims/types.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace qaclims::train {

struct TrainConfig {
  double learning_rate = 3.5e-4;
  int epochs = 15;
  int batch_size = 8;
  double poly_power = 0.9;
  double momentum = 0.9;
  LossWeights weights;
  double omega = 0.1;
  std::uint64_t seed = 0;
  // Not config-file keys; set from the command line.
  bool fat = true;
  double grad_clip = 0;  // bound on the joint gradient L2 norm per step, 0 = off

  void validate() const;
  RegionOptions region() const { return {omega, fat ? RegionMode::adaptive_threshold : RegionMode::soft}; }
};

/// Flat "key = value" text. '#' starts a comment. Unknown keys, repeated keys
/// and malformed values are ConfigErrors. Missing keys keep their defaults.
TrainConfig parse_config(const std::string& text, const TrainConfig& defaults = {});
TrainConfig load_config(const std::string& path, const TrainConfig& defaults = {});
/// Canonical text form; parse_config(format_config(c)) == c for the file keys.
std::string format_config(const TrainConfig& c);

/// Hash of every effective parameter plus any caller-supplied context.
std::string config_fingerprint(const TrainConfig& c, const std::string& extra = "");

double poly_lr(double base_lr, long step, long total_steps, double power);

/// Small Gaussian init of the C x K classifier.
Eigen::MatrixXd init_classifier(int channels, int n_classes, std::uint64_t seed);

/// P_k for every class in `present`, at backbone resolution.
ActivationMap infer_cam(const Backbone& backbone, const Eigen::MatrixXd& W, const RasterImage& image,
                        const ClassSet& present);

// ---------------------------------------------------------------------------
// Classification pretraining
// ---------------------------------------------------------------------------

struct PretrainReport {
  std::vector<double> step_losses;  // mean BCE of each optimiser step
  double train_accuracy = 0;        // per (image, class) decisions at p = 0.5, after training
};

/// Multi-label BCE on sigmoid(GAP(W_k^T Z)). Uses the same optimiser and
/// schedule as RITC.
PretrainReport pretrain_classifier(Backbone& backbone, Eigen::MatrixXd& W, const std::vector<data::Sample>& dataset,
                                   const TrainConfig& config);

double classification_accuracy(const Backbone& backbone, const Eigen::MatrixXd& W,
                               const std::vector<data::Sample>& dataset);

// ---------------------------------------------------------------------------
// RITC
// ---------------------------------------------------------------------------

struct ImageObjective {
  LossBreakdown losses;
  Eigen::VectorXd d_params;
  Eigen::MatrixXd d_W;
  StepDiagnostics diag;
};

/// Total RITC objective of one image and, when `want_grad`, its gradient with
/// respect to the backbone parameters and W.
ImageObjective ritc_image_objective(const Backbone& backbone, const Eigen::MatrixXd& W, const RasterImage& image,
                                    const ClassSet& present, const Eigen::MatrixXd& pooling_basis,
                                    const std::map<ClassId, ClassTextEmbeddings>& texts, const TrainConfig& config,
                                    bool want_grad = true);

struct StepRecord {
  int epoch = 0;
  long step = 0;
  LossBreakdown losses;  // mean over the batch
  double lr = 0;
};

std::string to_jsonl(const StepRecord& r);

struct Checkpoint {
  static constexpr int kVersion = 1;

  ConvBackboneSpec backbone_spec;
  Eigen::VectorXd params;
  Eigen::MatrixXd W;
  Eigen::VectorXd velocity_params;
  Eigen::MatrixXd velocity_W;
  TrainConfig config;
  std::vector<std::string> class_names;
  int epoch = 0;   // completed epochs
  long step = 0;   // completed optimiser steps
  std::string rng_state;
  std::string stage;  // "pretrain" or "ritc"
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct RitcOptions {
  std::string metrics_path;     // JSONL per step; appended to when resuming
  std::string checkpoint_path;  // rewritten after every epoch when set
  int stop_after_epoch = 0;     // > 0: return after this many completed epochs
  const Checkpoint* resume = nullptr;
  std::function<void(const StepRecord&)> on_step;
};

struct RitcResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
};

/// Trains backbone and W in place. Every (image, present class) pair needs a
/// corpus record keyed by the sample id.
RitcResult train_ritc(ConvBackbone& backbone, Eigen::MatrixXd& W, const corpus::CorpusStore& store,
                      const std::vector<data::Sample>& dataset, const TrainConfig& config, EncoderPair& encoders,
                      const RitcOptions& options = {});

}  // namespace qaclims::train
