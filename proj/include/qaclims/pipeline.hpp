#pragma once

#include "qaclims/backbone.hpp"
#include "qaclims/corpus.hpp"
#include "qaclims/dataset.hpp"
#include "qaclims/encoders.hpp"
#include "qaclims/evaluation.hpp"
#include "qaclims/training.hpp"
#include "qaclims/world.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace qaclims::pipeline {

/// Mock VQA backend that knows the descriptor of every sample that has one.
corpus::MockVqaBackend make_mock_vqa(const World& world, const std::vector<data::Sample>& samples,
                                     const corpus::TemplateSet& templates, std::uint64_t seed = 0);

std::vector<corpus::CorpusRequest> corpus_requests(const std::vector<data::Sample>& samples);

/// Runs the full question set for every (sample, label) through `backend`.
corpus::CorpusStore build_corpus(corpus::VqaBackend& backend, const std::vector<data::Sample>& samples,
                                 const std::vector<std::string>& class_names, const corpus::TemplateSet& templates,
                                 unsigned max_threads = 0);

struct BenchmarkSpec {
  int train_images = 64;
  int eval_images = 16;
  int n_classes = 3;
  std::uint64_t train_seed = 7;
  std::uint64_t eval_seed = 1007;
  data::SynthOptions synth;
};

struct Benchmark {
  data::DatasetManifest train_manifest, eval_manifest;
  std::vector<data::Sample> train, eval;
};

/// Writes <dir>/train and <dir>/eval and loads them back.
Benchmark make_benchmark(const BenchmarkSpec& spec, const std::string& dir);

/// Everything that fixes the shipped synthetic experiment.
struct BenchmarkRecipe {
  BenchmarkSpec data;
  ConvBackboneSpec backbone;
  std::uint64_t backbone_seed = 11;
  std::uint64_t classifier_seed = 11;
  train::TrainConfig pretrain;
  train::TrainConfig ritc;
  eval::CamEvalOptions eval;
};

BenchmarkRecipe default_recipe();

/// Synthetic data, mock corpus and the classification-pretrained model.
struct PreparedBenchmark {
  std::unique_ptr<World> world;
  std::unique_ptr<MockEncoderPair> encoders;
  Benchmark data;
  corpus::CorpusStore corpus;
  std::unique_ptr<ConvBackbone> backbone;
  Eigen::MatrixXd W;
  train::PretrainReport pretrain;

  /// Experiment starting from the pretrained model with the recipe's RITC
  /// config as base. The result points into *this.
  eval::Experiment experiment(const BenchmarkRecipe& recipe, std::map<std::string, eval::EvalReport>* memo) const;
};

PreparedBenchmark prepare_benchmark(const BenchmarkRecipe& recipe, const std::string& dir);

}  // namespace qaclims::pipeline
