#include "qaclims/pipeline.hpp"

#include <filesystem>

namespace qaclims::pipeline {

corpus::MockVqaBackend make_mock_vqa(const World& world, const std::vector<data::Sample>& samples,
                                     const corpus::TemplateSet& templates, std::uint64_t seed) {
  corpus::MockVqaBackend vqa(world, templates.templates, seed);
  for (const auto& s : samples)
    if (s.descriptor) vqa.register_scene(image_hash(s.image), *s.descriptor);
  return vqa;
}

std::vector<corpus::CorpusRequest> corpus_requests(const std::vector<data::Sample>& samples) {
  std::vector<corpus::CorpusRequest> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, &s.image, s.labels});
  return out;
}

corpus::CorpusStore build_corpus(corpus::VqaBackend& backend, const std::vector<data::Sample>& samples,
                                 const std::vector<std::string>& class_names, const corpus::TemplateSet& templates,
                                 unsigned max_threads) {
  auto label = [&](ClassId k) {
    if (k < 1 || k >= static_cast<ClassId>(class_names.size()))
      throw ConfigError("class id " + std::to_string(k) + " not in the class table");
    return class_names[k];
  };
  corpus::CorpusStore store =
      corpus::generate_corpus(backend, corpus_requests(samples), label, templates, {}, max_threads);
  store.template_version = templates.version;
  return store;
}

Benchmark make_benchmark(const BenchmarkSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  Benchmark b;
  b.train_manifest = data::generate_synthetic(spec.train_images, spec.n_classes, spec.train_seed,
                                              (fs::path(dir) / "train").string(), spec.synth);
  b.eval_manifest = data::generate_synthetic(spec.eval_images, spec.n_classes, spec.eval_seed,
                                             (fs::path(dir) / "eval").string(), spec.synth);
  b.train = data::load_samples(b.train_manifest);
  b.eval = data::load_samples(b.eval_manifest);
  return b;
}

BenchmarkRecipe default_recipe() {
  BenchmarkRecipe r;
  r.pretrain.learning_rate = 0.1;
  r.pretrain.epochs = 30;
  r.pretrain.seed = 3;
  r.ritc.learning_rate = 0.01;
  r.ritc.epochs = 15;
  r.ritc.momentum = 0;
  r.ritc.grad_clip = 5;
  return r;
}

PreparedBenchmark prepare_benchmark(const BenchmarkRecipe& recipe, const std::string& dir) {
  PreparedBenchmark p;
  p.data = make_benchmark(recipe.data, dir);
  p.world = std::make_unique<World>(recipe.data.n_classes);
  p.encoders = std::make_unique<MockEncoderPair>(*p.world);
  const corpus::TemplateSet templates{corpus::kDefaultTemplateVersion, corpus::default_templates()};
  auto vqa = make_mock_vqa(*p.world, p.data.train, templates);
  p.corpus = build_corpus(vqa, p.data.train, p.data.train_manifest.class_names, templates);

  p.backbone = std::make_unique<ConvBackbone>(recipe.backbone, recipe.backbone_seed);
  p.W = train::init_classifier(p.backbone->output_channels(), recipe.data.n_classes, recipe.classifier_seed);
  p.pretrain = train::pretrain_classifier(*p.backbone, p.W, p.data.train, recipe.pretrain);
  return p;
}

eval::Experiment PreparedBenchmark::experiment(const BenchmarkRecipe& recipe,
                                               std::map<std::string, eval::EvalReport>* memo) const {
  eval::Experiment ex;
  ex.train = &data.train;
  ex.eval = &data.eval;
  ex.corpus = &corpus;
  ex.encoders = encoders.get();
  ex.init_backbone = backbone.get();
  ex.init_W = &W;
  ex.base = recipe.ritc;
  ex.class_names = data.train_manifest.class_names;
  ex.eval_options = recipe.eval;
  ex.memo = memo;
  return ex;
}

}  // namespace qaclims::pipeline
