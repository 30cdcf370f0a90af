#pragma once

#include "qaclims/backbone.hpp"
#include "qaclims/corpus.hpp"
#include "qaclims/dataset.hpp"
#include "qaclims/encoders.hpp"
#include "qaclims/training.hpp"
#include "qaclims/types.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace qaclims::eval {

/// Per pixel, argmax over {bg_threshold} and every P_k; background wins ties,
/// and among classes the lower id wins. Planes must share one shape.
SegMask cam_to_mask(const ActivationMap& maps, double bg_threshold);

/// Confusion counts over n_classes labels (0 = background). Ground-truth
/// pixels equal to kIgnoreIndex are skipped.
class Confusion {
 public:
  explicit Confusion(int n_classes);

  void add(const SegMask& pred, const SegMask& gt);
  void merge(const Confusion& other);

  int classes() const { return n_; }
  /// counts(gt, pred)
  std::uint64_t count(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * n_ + pred]; }
  std::uint64_t total() const;
  bool operator==(const Confusion&) const = default;

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScore {
  int class_id = 0;
  std::string name;
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  std::uint64_t gt_pixels = 0;
  std::uint64_t pred_pixels = 0;
  double iou = 0;  // NaN when the union is empty
};

struct EvalReport {
  std::vector<ClassScore> classes;  // every label, background first
  double miou = 0;                  // over classes with a nonzero union
  std::uint64_t pixels = 0;         // counted (non-ignored) pixels
  double bg_threshold = 0;
  std::string fingerprint;
};

EvalReport make_report(const Confusion& c, const std::vector<std::string>& class_names = {});

/// Single-pair report; n_classes defaults to 1 + the largest label seen.
EvalReport miou(const SegMask& pred, const SegMask& gt, int n_classes = 0);

struct CamEvalOptions {
  double bg_threshold = 0.15;
  /// Divide each upsampled plane by its maximum before thresholding.
  bool max_normalize = true;
  /// When non-empty, every threshold is scored and the best is reported too.
  std::vector<double> sweep;
  unsigned max_threads = 0;
};

std::vector<double> default_sweep();

struct CamEvaluation {
  EvalReport report;                  // at options.bg_threshold
  std::optional<double> best_threshold;
  std::optional<EvalReport> best;     // at best_threshold
};

/// CAMs for each sample's labelled classes, upsampled to image size, turned
/// into masks and scored against the sample's ground truth.
CamEvaluation evaluate_cams(const Backbone& backbone, const Eigen::MatrixXd& W,
                            const std::vector<data::Sample>& samples, const std::vector<std::string>& class_names,
                            const CamEvalOptions& options = {});

std::string format_report(const EvalReport& r);
std::string report_json(const EvalReport& r);

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct LossSubset {
  bool frc = true, brc = true, reg = true;
  std::string label() const;
  bool operator==(const LossSubset&) const = default;
};

enum class CorpusVariant { full, baseline, restricted };

struct AblationCell {
  std::string name;
  LossSubset losses;
  CorpusVariant corpus = CorpusVariant::full;
  std::set<corpus::TextSource> keep;  // used when corpus == restricted
  bool fat = true;
  std::optional<double> omega;        // overrides the base config
};

/// Everything a cell needs besides its own settings. Training starts from a
/// copy of (init_backbone, init_W) for every cell.
struct Experiment {
  const std::vector<data::Sample>* train = nullptr;
  const std::vector<data::Sample>* eval = nullptr;
  const corpus::CorpusStore* corpus = nullptr;
  EncoderPair* encoders = nullptr;
  const ConvBackbone* init_backbone = nullptr;
  const Eigen::MatrixXd* init_W = nullptr;
  train::TrainConfig base;
  std::vector<std::string> class_names;
  CamEvalOptions eval_options;
  /// Reports of cells already run, keyed by fingerprint; shared across calls.
  std::map<std::string, EvalReport>* memo = nullptr;
};

struct AblationRow {
  AblationCell cell;
  EvalReport report;
};

/// Throws ConfigError for a cell with no loss term.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& matrix, const Experiment& ex);

/// Trains and evaluates one cell.
EvalReport run_cell(const AblationCell& cell, const Experiment& ex);

std::vector<AblationCell> loss_matrix();    // FRC, BRC, FRC+BRC, FRC+BRC+REG
std::vector<AblationCell> corpus_matrix();  // category only ... full corpus
std::vector<AblationCell> fat_matrix();     // FAT off / on

std::string format_ablation(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

struct OmegaPoint {
  double omega;
  EvalReport report;
};

std::vector<OmegaPoint> sweep_omega(const Experiment& ex, const std::vector<double>& omegas);
std::string format_sweep(const std::vector<OmegaPoint>& pts);

}  // namespace qaclims::eval
