#include "qaclims/cli.hpp"

#include "qaclims/corpus.hpp"
#include "qaclims/dataset.hpp"
#include "qaclims/encoders.hpp"
#include "qaclims/evaluation.hpp"
#include "qaclims/image_io.hpp"
#include "qaclims/pipeline.hpp"
#include "qaclims/remote.hpp"
#include "qaclims/training.hpp"
#include "qaclims/visualize.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace qaclims {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// Content hash, so fingerprints do not depend on where files live.
std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int world_size(const data::DatasetManifest& m) {
  const int n = m.synthetic_classes > 0 ? m.synthetic_classes : static_cast<int>(m.class_names.size()) - 1;
  if (n > World::kMaxClasses)
    throw ConfigError("mock backends support at most " + std::to_string(World::kMaxClasses) + " classes, manifest has " +
                      std::to_string(n) + "; set " + remote::kVqaEndpointVar + " / " + remote::kEncoderEndpointVar);
  return n;
}

// World and encoders, mock or remote. The world outlives the encoders.
struct EncoderSetup {
  std::unique_ptr<World> world;
  std::unique_ptr<EncoderPair> encoders;
};

EncoderSetup make_encoders(const data::DatasetManifest& m) {
  EncoderSetup s;
  if (const auto ep = remote::endpoint_from_env(remote::kEncoderEndpointVar)) {
    s.encoders = std::make_unique<remote::HttpEncoderPair>(*ep);
  } else {
    s.world = std::make_unique<World>(world_size(m));
    s.encoders = std::make_unique<MockEncoderPair>(*s.world);
  }
  return s;
}

struct Model {
  std::unique_ptr<ConvBackbone> backbone;
  Eigen::MatrixXd W;
  train::Checkpoint checkpoint;
};

Model load_model(const std::string& path) {
  Model m;
  m.checkpoint = train::load_checkpoint(path);
  m.backbone = std::make_unique<ConvBackbone>(m.checkpoint.backbone_spec, 0);
  if (m.backbone->parameter_count() != m.checkpoint.params.size())
    throw FormatError("checkpoint " + path + " parameter count does not match its backbone spec");
  m.backbone->parameters() = m.checkpoint.params;
  m.W = m.checkpoint.W;
  return m;
}

// Training options shared by the commands that train.
struct TrainFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  bool no_fat = false;
  std::optional<double> grad_clip;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override one config key, e.g. --set omega=0.3")->take_all();
  }
  void add_ritc_flags(CLI::App* cmd) {
    cmd->add_flag("--no-fat", no_fat, "Use soft region masks instead of adaptive thresholding");
    cmd->add_option("--grad-clip", grad_clip, "Bound on the joint gradient norm per step, 0 = off")
        ->check(CLI::NonNegativeNumber);
  }

  train::TrainConfig resolve(train::TrainConfig c) const {
    if (!config_path.empty()) c = train::parse_config(read_file(config_path), c);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      c = train::parse_config(o.substr(0, eq) + " = " + o.substr(eq + 1) + "\n", c);
    }
    if (no_fat) c.fat = false;
    if (grad_clip) c.grad_clip = *grad_clip;
    c.validate();
    return c;
  }
};

std::vector<eval::AblationCell> matrix_by_name(const std::string& name) {
  if (name == "loss") return eval::loss_matrix();
  if (name == "corpus") return eval::corpus_matrix();
  if (name == "fat") return eval::fat_matrix();
  auto all = eval::loss_matrix();
  for (auto& c : eval::corpus_matrix()) all.push_back(c);
  for (auto& c : eval::fat_matrix()) all.push_back(c);
  return all;
}

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv);

 private:
  void build(CLI::App& app);
  void print_fingerprint(const std::string& fp) { out_ << "config fingerprint: " << fp << '\n'; }

  void corpus_generate();
  void corpus_inspect();
  void dataset_synth();
  void dataset_ingest();
  void train_pretrain();
  void train_ritc();
  void eval_run();
  void eval_ablate(bool sweep);
  void viz_overlay();

  std::ostream& out_;
  std::ostream& err_;
  CLI::App* app_ = nullptr;
  std::function<void()> action_;

  // Options; each subcommand reads the ones it registered.
  std::string manifest_, out_path_, templates_, cache_, corpus_path_, image_id_, root_, split_ = "train";
  std::string backend_, class_filter_;  // backend_ empty: external iff the endpoint is set
  std::string init_, resume_, metrics_, checkpoint_, train_manifest_, eval_manifest_, matrix_ = "loss";
  unsigned threads_ = 0;
  int images_ = 64, classes_ = 3, canvas_ = 64, stop_after_ = 0;
  std::uint64_t seed_ = 7, backbone_seed_ = 11, classifier_seed_ = 11;
  double scene_bias_ = 0.8, bg_threshold_ = 0.15, alpha_ = 0.5;
  bool sweep_ = false, no_max_normalize_ = false;
  std::vector<double> omegas_ = {0, 0.1, 0.3, 0.5};
  std::vector<std::string> ids_;
  TrainFlags train_flags_;
};

void Cli::build(CLI::App& app) {
  app.require_subcommand(1);
  app.fallthrough(false);
  auto on = [this](CLI::App* cmd, std::function<void()> f) { cmd->callback([this, f] { action_ = f; }); };

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Build and inspect QAPE text corpora")->require_subcommand(1);
  auto* gen = corpus->add_subcommand("generate", "Ask every template about every labelled image");
  gen->add_option("--manifest", manifest_, "Dataset manifest")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path_, "Corpus file (JSON lines) to write")->required();
  gen->add_option("--templates", templates_, "Template file (default: built-in table)")->check(CLI::ExistingFile);
  gen->add_option("--threads", threads_, "Worker threads, 0 = hardware concurrency");
  gen->add_option("--cache", cache_, "VQA answer cache, read if present and rewritten");
  gen->add_option("--backend", backend_, "mock or external; default external iff " + std::string(remote::kVqaEndpointVar) + " is set")
      ->check(CLI::IsMember({"mock", "external"}));
  on(gen, [this] { corpus_generate(); });

  auto* insp = corpus->add_subcommand("inspect", "Print corpus records");
  insp->add_option("--corpus,--in", corpus_path_, "Corpus file")->required()->check(CLI::ExistingFile);
  insp->add_option("--image", image_id_, "Only records of this image id");
  insp->add_option("--class", class_filter_, "Only records of this class label");
  on(insp, [this] { corpus_inspect(); });

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Create or ingest datasets")->require_subcommand(1);
  auto* synth = dataset->add_subcommand("synth", "Render a synthetic shapes dataset");
  synth->add_option("--out", out_path_, "Output directory")->required();
  synth->add_option("--images", images_, "Number of images")->check(CLI::Range(1, 1000000));
  synth->add_option("--classes", classes_, "Number of object classes")->check(CLI::Range(2, World::kMaxClasses));
  synth->add_option("--seed", seed_, "Generator seed");
  synth->add_option("--canvas", canvas_, "Image side in pixels")->check(CLI::Range(16, 1024));
  synth->add_option("--scene-bias", scene_bias_, "Probability of a class's preferred scene")
      ->check(CLI::Range(0.0, 1.0));
  on(synth, [this] { dataset_synth(); });

  auto* ingest = dataset->add_subcommand("ingest", "Index a VOC-style directory tree");
  ingest->add_option("--root", root_, "Dataset root")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--split", split_, "Split list name under ImageSets/Segmentation");
  ingest->add_option("--out", out_path_, "Manifest JSON to write")->required();
  on(ingest, [this] { dataset_ingest(); });

  // train
  auto* train = app.add_subcommand("train", "Classification pretraining and RITC")->require_subcommand(1);
  auto* pre = train->add_subcommand("pretrain", "Train backbone and classifier on image labels");
  pre->add_option("--manifest", manifest_, "Training manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out_path_, "Checkpoint to write")->required();
  pre->add_option("--backbone-seed", backbone_seed_, "Backbone init seed");
  pre->add_option("--classifier-seed", classifier_seed_, "Classifier init seed");
  pre->add_option("--metrics", metrics_, "JSONL log of per-step losses");
  train_flags_.add_to(pre);
  on(pre, [this] { train_pretrain(); });

  auto* ritc = train->add_subcommand("ritc", "Region-text contrastive training from a pretrained checkpoint");
  ritc->add_option("--manifest", manifest_, "Training manifest")->required()->check(CLI::ExistingFile);
  ritc->add_option("--corpus", corpus_path_, "Corpus file")->required()->check(CLI::ExistingFile);
  ritc->add_option("--init", init_, "Pretrained checkpoint")->check(CLI::ExistingFile);
  ritc->add_option("--resume", resume_, "Continue from a RITC checkpoint")->check(CLI::ExistingFile);
  ritc->add_option("--out", out_path_, "Checkpoint to write, updated after every epoch")->required();
  ritc->add_option("--metrics", metrics_, "JSONL log of per-step losses");
  ritc->add_option("--stop-after", stop_after_, "Stop after this many completed epochs")
      ->check(CLI::NonNegativeNumber);
  train_flags_.add_to(ritc);
  train_flags_.add_ritc_flags(ritc);
  on(ritc, [this] { train_ritc(); });

  // eval
  auto* ev = app.add_subcommand("eval", "Score CAMs and run ablations")->require_subcommand(1);
  auto* run = ev->add_subcommand("run", "CAM mIoU of a checkpoint");
  run->add_option("--manifest", manifest_, "Evaluation manifest with masks")->required()->check(CLI::ExistingFile);
  run->add_option("--checkpoint", checkpoint_, "Model checkpoint")->required()->check(CLI::ExistingFile);
  run->add_option("--bg-threshold", bg_threshold_, "Background score")->check(CLI::Range(0.0, 1.0));
  run->add_flag("--sweep", sweep_, "Also score thresholds 0.05 .. 0.95 and report the best");
  run->add_flag("--no-max-normalize", no_max_normalize_, "Threshold raw CAM values");
  run->add_option("--threads", threads_, "Worker threads, 0 = hardware concurrency");
  run->add_option("--out", out_path_, "Report JSON to write");
  on(run, [this] { eval_run(); });

  auto add_experiment = [this](CLI::App* cmd) {
    cmd->add_option("--train-manifest", train_manifest_, "Training manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--eval-manifest", eval_manifest_, "Evaluation manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--corpus", corpus_path_, "Corpus file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--init", init_, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_path_, "Result JSON to write");
    train_flags_.add_to(cmd);
    train_flags_.add_ritc_flags(cmd);
  };
  auto* abl = ev->add_subcommand("ablate", "Train and score every cell of an ablation matrix");
  add_experiment(abl);
  abl->add_option("--matrix", matrix_, "Which matrix")->check(CLI::IsMember({"loss", "corpus", "fat", "all"}));
  on(abl, [this] { eval_ablate(false); });

  auto* sw = ev->add_subcommand("sweep-omega", "Train and score one model per filter ratio");
  add_experiment(sw);
  sw->add_option("--omegas", omegas_, "Filter ratios")->check(CLI::Range(0.0, 1.0))->delimiter(',');
  on(sw, [this] { eval_ablate(true); });

  // viz
  auto* viz = app.add_subcommand("viz", "Visualisation")->require_subcommand(1);
  auto* ov = viz->add_subcommand("overlay", "Write CAM heat overlays and legends");
  ov->add_option("--manifest", manifest_, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ov->add_option("--checkpoint", checkpoint_, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ov->add_option("--id", ids_, "Image ids (default: the first entry)");
  ov->add_option("--corpus", corpus_path_, "Corpus file for the legend texts")->check(CLI::ExistingFile);
  ov->add_option("--alpha", alpha_, "Heat map opacity")->check(CLI::Range(0.0, 1.0));
  ov->add_option("--out", out_path_, "Output directory")->required();
  on(ov, [this] { viz_overlay(); });
}

int Cli::run(int argc, const char* const* argv) {
  CLI::App app{"Question-answer prompted CAM training on desk-scale data", "qaclims"};
  app_ = &app;
  build(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out_, err_);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out_, err_);
  } catch (const CLI::ParseError& e) {
    // CLI11 reports a stray word as a missing subcommand; name the word instead.
    const CLI::App* leaf = &app;
    for (bool deeper = true; deeper;) {
      deeper = false;
      for (const auto* sub : leaf->get_subcommands())
        if (sub->parsed()) {
          leaf = sub;
          deeper = true;
          break;
        }
    }
    const auto extra = leaf->remaining();
    if (!extra.empty() && !extra.front().starts_with("-") && leaf->get_require_subcommand_min() > 0)
      err_ << "qaclims: unknown subcommand '" << extra.front() << "' for '" << leaf->get_display_name(true)
           << "' (try --help)\n";
    else
      err_ << "qaclims: " << one_line(e.what()) << " (try --help)\n";
    return 2;
  }
  try {
    action_();
  } catch (const CLI::Error& e) {  // flag combinations checked after parsing
    err_ << "qaclims: " << one_line(e.what()) << " (try --help)\n";
    return 2;
  } catch (const std::exception& e) {
    err_ << "qaclims: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

void Cli::corpus_generate() {
  print_fingerprint(hex64(fnv1a(app_->config_to_str(true) + file_hash(manifest_))));
  const auto m = data::load_manifest(manifest_);
  const auto samples = data::load_samples(m);
  corpus::TemplateSet templates{corpus::kDefaultTemplateVersion, corpus::default_templates()};
  if (!templates_.empty()) templates = corpus::load_templates(templates_);

  std::unique_ptr<World> world;
  std::shared_ptr<corpus::VqaBackend> inner;
  const auto ep = remote::endpoint_from_env(remote::kVqaEndpointVar);
  if (backend_ == "external" && !ep) throw ConfigError(std::string("--backend external needs ") + remote::kVqaEndpointVar);
  if (ep && backend_ != "mock") {
    inner = std::make_shared<remote::HttpVqaBackend>(*ep);
  } else {
    world = std::make_unique<World>(world_size(m));
    inner = std::make_shared<corpus::MockVqaBackend>(pipeline::make_mock_vqa(*world, samples, templates));
  }
  corpus::CachingVqaBackend backend(inner);
  if (!cache_.empty() && fs::exists(cache_)) backend.load(cache_);

  auto store = pipeline::build_corpus(backend, samples, m.class_names, templates, threads_);
  store.backend_id = backend.id();
  corpus::save_corpus(store, out_path_);
  if (!cache_.empty()) backend.save(cache_);
  out_ << "records: " << store.records.size() << "  backend: " << store.backend_id
       << "  templates: " << store.template_version << "  answers cached: " << backend.hits() << " hit, "
       << backend.misses() << " miss\n";
}

void Cli::corpus_inspect() {
  print_fingerprint(hex64(fnv1a(app_->config_to_str(true) + file_hash(corpus_path_))));
  const auto store = corpus::load_corpus(corpus_path_);
  out_ << "backend: " << store.backend_id << "  templates: " << store.template_version
       << "  records: " << store.records.size() << '\n';
  std::size_t shown = 0;
  for (const auto& [key, c] : store.records) {
    if (!image_id_.empty() && key.first != image_id_) continue;
    if (!class_filter_.empty() && c.class_label != class_filter_) continue;
    ++shown;
    out_ << key.first << " / " << key.second << " " << c.class_label << '\n';
    for (std::size_t i = 0; i < c.fg_texts.size(); ++i)
      out_ << "  fg [" << corpus::to_string(c.fg_sources[i]) << "] " << c.fg_texts[i] << '\n';
    for (std::size_t i = 0; i < c.bg_texts.size(); ++i)
      out_ << "  bg [" << corpus::to_string(c.bg_sources[i]) << "] " << c.bg_texts[i] << '\n';
  }
  if ((!image_id_.empty() || !class_filter_.empty()) && shown == 0) throw ConfigError("no matching records");
}

void Cli::dataset_synth() {
  print_fingerprint(hex64(fnv1a(app_->config_to_str(true))));
  data::SynthOptions opts;
  opts.canvas = canvas_;
  opts.scene_bias = scene_bias_;
  const auto m = data::generate_synthetic(images_, classes_, seed_, out_path_, opts);
  out_ << "wrote " << m.entries.size() << " images to " << (fs::path(out_path_) / "manifest.json").string() << '\n';
}

void Cli::dataset_ingest() {
  print_fingerprint(hex64(fnv1a(app_->config_to_str(true))));
  auto m = data::ingest_voc_style(root_, split_);
  // Entry paths are relative to the root; rebase them onto the manifest's directory.
  const fs::path out_dir = fs::absolute(fs::path(out_path_)).parent_path();
  for (auto& e : m.entries)
    for (auto* p : {&e.image, &e.mask, &e.descriptor})
      if (!p->empty()) *p = fs::relative(fs::absolute(m.resolve(*p)), out_dir).generic_string();
  fs::create_directories(out_dir);
  data::save_manifest(m, out_path_);
  out_ << "indexed " << m.entries.size() << " images, " << m.class_names.size() - 1 << " classes\n";
}

void Cli::train_pretrain() {
  const auto cfg = train_flags_.resolve(pipeline::default_recipe().pretrain);
  print_fingerprint(train::config_fingerprint(
      cfg, "pretrain|" + file_hash(manifest_) + "|" + std::to_string(backbone_seed_) + "|" +
               std::to_string(classifier_seed_)));
  const auto m = data::load_manifest(manifest_);
  const auto samples = data::load_samples(m);
  ConvBackbone backbone({}, backbone_seed_);
  Eigen::MatrixXd W = train::init_classifier(backbone.output_channels(),
                                             static_cast<int>(m.class_names.size()) - 1, classifier_seed_);
  const auto report = train::pretrain_classifier(backbone, W, samples, cfg);

  train::Checkpoint c;
  c.stage = "pretrain";
  c.backbone_spec = backbone.spec();
  c.params = backbone.parameters();
  c.W = W;
  c.velocity_params = Eigen::VectorXd::Zero(c.params.size());
  c.velocity_W = Eigen::MatrixXd::Zero(W.rows(), W.cols());
  c.config = cfg;
  c.class_names = m.class_names;
  c.epoch = cfg.epochs;
  c.step = static_cast<long>(report.step_losses.size());
  train::save_checkpoint(c, out_path_);
  if (!metrics_.empty()) {
    std::string log;
    for (std::size_t i = 0; i < report.step_losses.size(); ++i)
      log += nlohmann::json{{"step", i}, {"bce", report.step_losses[i]}}.dump() + '\n';
    write_file(metrics_, log);
  }
  out_ << "steps: " << report.step_losses.size() << "  final bce: "
       << (report.step_losses.empty() ? 0.0 : report.step_losses.back())
       << "  train accuracy: " << report.train_accuracy << '\n';
}

void Cli::train_ritc() {
  if (init_.empty() == resume_.empty()) throw CLI::ValidationError("give exactly one of --init and --resume");
  const auto m = data::load_manifest(manifest_);
  const auto store = corpus::load_corpus(corpus_path_);
  Model model = load_model(resume_.empty() ? init_ : resume_);
  // A resumed run keeps the checkpoint's config unless flags override it.
  const auto cfg = train_flags_.resolve(resume_.empty() ? pipeline::default_recipe().ritc : model.checkpoint.config);
  print_fingerprint(train::config_fingerprint(
      cfg, "ritc|" + file_hash(manifest_) + "|" + file_hash(corpus_path_) + "|" +
               hex64(fnv1a(model.checkpoint.params.data(), sizeof(double) * model.checkpoint.params.size()))));

  const auto samples = data::load_samples(m);
  auto enc = make_encoders(m);
  train::RitcOptions opts;
  opts.metrics_path = metrics_;
  opts.checkpoint_path = out_path_;
  opts.stop_after_epoch = stop_after_;
  if (!resume_.empty()) opts.resume = &model.checkpoint;
  auto result = train::train_ritc(*model.backbone, model.W, store, samples, cfg, *enc.encoders, opts);
  result.checkpoint.class_names = m.class_names;
  train::save_checkpoint(result.checkpoint, out_path_);
  out_ << "epochs: " << result.checkpoint.epoch << "/" << cfg.epochs << "  steps: " << result.checkpoint.step;
  if (!result.log.empty()) {
    const auto& l = result.log.back().losses;
    out_ << "  last loss: " << l.total << " (frc " << l.frc << ", brc " << l.brc << ", reg " << l.reg << ")";
  }
  out_ << '\n';
}

void Cli::eval_run() {
  eval::CamEvalOptions opts;
  opts.bg_threshold = bg_threshold_;
  opts.max_normalize = !no_max_normalize_;
  if (sweep_) opts.sweep = eval::default_sweep();
  opts.max_threads = threads_;
  const std::string fp = hex64(fnv1a("eval|" + file_hash(manifest_) + "|" + file_hash(checkpoint_) + "|" +
                                     std::to_string(opts.bg_threshold) + "|" + (opts.max_normalize ? "1" : "0") +
                                     "|" + (sweep_ ? "sweep" : "")));
  print_fingerprint(fp);
  const auto m = data::load_manifest(manifest_);
  const auto samples = data::load_samples(m);
  const Model model = load_model(checkpoint_);
  auto ev = eval::evaluate_cams(*model.backbone, model.W, samples, m.class_names, opts);
  ev.report.fingerprint = fp;
  out_ << eval::format_report(ev.report);
  nlohmann::json j = nlohmann::json::parse(eval::report_json(ev.report));
  if (ev.best) {
    ev.best->fingerprint = fp;
    out_ << "best threshold " << *ev.best_threshold << ": mIoU " << std::fixed << std::setprecision(1)
         << 100 * ev.best->miou << std::defaultfloat << '\n';
    j = {{"report", j}, {"best_threshold", *ev.best_threshold}, {"best", nlohmann::json::parse(eval::report_json(*ev.best))}};
  }
  if (!out_path_.empty()) write_file(out_path_, j.dump(2) + '\n');
}

void Cli::eval_ablate(bool sweep) {
  const auto train_m = data::load_manifest(train_manifest_);
  const auto eval_m = data::load_manifest(eval_manifest_);
  const auto store = corpus::load_corpus(corpus_path_);
  const Model model = load_model(init_);
  const auto cfg = train_flags_.resolve(pipeline::default_recipe().ritc);
  std::string extra = (sweep ? "sweep-omega|" : "ablate|" + matrix_ + "|") + file_hash(train_manifest_) + "|" +
                      file_hash(eval_manifest_) + "|" + file_hash(corpus_path_) + "|" + file_hash(init_);
  if (sweep)
    for (double w : omegas_) extra += "|" + std::to_string(w);
  const std::string fp = train::config_fingerprint(cfg, extra);
  print_fingerprint(fp);

  const auto train_s = data::load_samples(train_m);
  const auto eval_s = data::load_samples(eval_m);
  auto enc = make_encoders(train_m);
  std::map<std::string, eval::EvalReport> memo;
  eval::Experiment ex;
  ex.train = &train_s;
  ex.eval = &eval_s;
  ex.corpus = &store;
  ex.encoders = enc.encoders.get();
  ex.init_backbone = model.backbone.get();
  ex.init_W = &model.W;
  ex.base = cfg;
  ex.class_names = train_m.class_names;
  ex.memo = &memo;

  const auto init = eval::evaluate_cams(*model.backbone, model.W, eval_s, train_m.class_names, ex.eval_options);
  out_ << "initial mIoU: " << init.report.miou << '\n';
  nlohmann::json j = {{"fingerprint", fp}, {"initial_miou", init.report.miou}};
  if (sweep) {
    const auto pts = eval::sweep_omega(ex, omegas_);
    out_ << eval::format_sweep(pts);
    j["sweep"] = nlohmann::json::array();
    for (const auto& p : pts) j["sweep"].push_back({{"omega", p.omega}, {"miou", p.report.miou}});
  } else {
    const auto rows = eval::run_ablation(matrix_by_name(matrix_), ex);
    out_ << eval::format_ablation(rows);
    j["ablation"] = nlohmann::json::parse(eval::ablation_json(rows));
  }
  if (!out_path_.empty()) write_file(out_path_, j.dump(2) + '\n');
}

void Cli::viz_overlay() {
  print_fingerprint(hex64(fnv1a(app_->config_to_str(true) + file_hash(manifest_) + file_hash(checkpoint_))));
  const auto m = data::load_manifest(manifest_);
  const Model model = load_model(checkpoint_);
  std::optional<corpus::CorpusStore> store;
  if (!corpus_path_.empty()) store = corpus::load_corpus(corpus_path_);
  if (m.entries.empty()) throw ConfigError("manifest has no entries");
  std::vector<std::string> ids = ids_;
  if (ids.empty()) ids.push_back(m.entries.front().id);

  fs::create_directories(out_path_);
  viz::OverlayOptions vo;
  vo.alpha = alpha_;
  for (const auto& id : ids) {
    const auto it = std::find_if(m.entries.begin(), m.entries.end(), [&](const auto& e) { return e.id == id; });
    if (it == m.entries.end()) throw ConfigError("no image '" + id + "' in the manifest");
    const RasterImage image = io::read_image(m.resolve(it->image));
    ActivationMap maps = train::infer_cam(*model.backbone, model.W, image, it->labels);
    for (auto& [k, p] : maps) p = upsample_map(p, image.height(), image.width());
    std::map<ClassId, viz::OverlayLegend> legends;
    for (ClassId k : it->labels) {
      viz::OverlayLegend l{m.class_name(k), {}, {}};
      if (store)
        if (const auto* c = store->find(id, k)) {
          l.fg_texts = c->fg_texts;
          l.bg_texts = c->bg_texts;
        }
      legends.emplace(k, std::move(l));
    }
    for (const auto& p : viz::export_overlay(image, maps, (fs::path(out_path_) / id).string(), legends, vo))
      out_ << p << '\n';
  }
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  return cli.run(argc, argv);
}

}  // namespace qaclims
