#include "qaclims/training.hpp"

#include "qaclims/activation.hpp"
#include "qaclims/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace qaclims::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(poly_power >= 0)) throw ConfigError("poly_power must be nonnegative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(omega >= 0 && omega <= 1)) throw ConfigError("omega must lie in [0, 1]");
  if (!(grad_clip >= 0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be nonnegative");
  weights.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

TrainConfig parse_config(const std::string& text, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  std::set<std::string> seen;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": repeated key " + key);

    if (key == "lr") c.learning_rate = parse_double(key, value);
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "poly_power") c.poly_power = parse_double(key, value);
    else if (key == "momentum") c.momentum = parse_double(key, value);
    else if (key == "alpha") c.weights.alpha = parse_double(key, value);
    else if (key == "beta") c.weights.beta = parse_double(key, value);
    else if (key == "gamma") c.weights.gamma = parse_double(key, value);
    else if (key == "tau") c.weights.tau = parse_double(key, value);
    else if (key == "omega") c.omega = parse_double(key, value);
    else if (key == "brc_tau_on_bf") c.weights.brc_tau_on_bf = parse_bool(key, value);
    else if (key == "seed") {
      const long long s = parse_int(key, value);
      if (s < 0) throw ConfigError("seed must be nonnegative");
      c.seed = static_cast<std::uint64_t>(s);
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path, const TrainConfig& defaults) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), defaults);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "lr = " << fmt(c.learning_rate) << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "poly_power = " << fmt(c.poly_power) << '\n'
     << "momentum = " << fmt(c.momentum) << '\n'
     << "alpha = " << fmt(c.weights.alpha) << '\n'
     << "beta = " << fmt(c.weights.beta) << '\n'
     << "gamma = " << fmt(c.weights.gamma) << '\n'
     << "tau = " << fmt(c.weights.tau) << '\n'
     << "omega = " << fmt(c.omega) << '\n'
     << "brc_tau_on_bf = " << (c.weights.brc_tau_on_bf ? "true" : "false") << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

std::string config_fingerprint(const TrainConfig& c, const std::string& extra) {
  const std::string all = format_config(c) + "fat = " + (c.fat ? "true" : "false") + '\n' +
                          "grad_clip = " + fmt(c.grad_clip) + '\n' + extra;
  return hex64(fnv1a(all));
}

double poly_lr(double base_lr, long step, long total_steps, double power) {
  if (total_steps <= 0) throw ConfigError("poly schedule needs a positive step count");
  if (step < 0 || step > total_steps) throw ConfigError("step outside the schedule");
  return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

Eigen::MatrixXd init_classifier(int channels, int n_classes, std::uint64_t seed) {
  if (channels < 1 || n_classes < 1) throw ConfigError("classifier needs positive channels and classes");
  Rng rng(seed ^ 0xc1a55ull);
  Eigen::MatrixXd W(channels, n_classes);
  for (Eigen::Index j = 0; j < W.cols(); ++j)
    for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = 0.01 * rng.normal();
  return W;
}

ActivationMap infer_cam(const Backbone& backbone, const Eigen::MatrixXd& W, const RasterImage& image,
                        const ClassSet& present) {
  return compute_cam(backbone.forward(image), W, present);
}

namespace {

void check_dataset(const std::vector<data::Sample>& dataset, const Eigen::MatrixXd& W) {
  if (dataset.empty()) throw ConfigError("training set is empty");
  for (const auto& s : dataset) {
    if (s.labels.empty()) throw ConfigError("image '" + s.id + "' has no labels");
    for (ClassId k : s.labels)
      if (k < 1 || k > W.cols())
        throw ConfigError("image '" + s.id + "' has label " + std::to_string(k) + " outside the classifier");
  }
}

/// Heavy-ball SGD over (backbone parameters, W) with the poly schedule.
/// With clip > 0 the joint gradient is rescaled to L2 norm at most clip first.
struct Sgd {
  Eigen::VectorXd v_params;
  Eigen::MatrixXd v_W;
  double momentum;
  double clip = 0;

  void step(Eigen::VectorXd& params, Eigen::MatrixXd& W, const Eigen::VectorXd& g_params, const Eigen::MatrixXd& g_W,
            double lr) {
    double scale = 1;
    if (clip > 0) {
      const double norm = std::sqrt(g_params.squaredNorm() + g_W.squaredNorm());
      if (norm > clip) scale = clip / norm;
    }
    v_params = momentum * v_params + scale * g_params;
    v_W = momentum * v_W + scale * g_W;
    params -= lr * v_params;
    W -= lr * v_W;
  }
};

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i - 1))]);
  return order;
}

long steps_per_epoch(std::size_t n, int batch) { return static_cast<long>((n + batch - 1) / batch); }

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng.engine();
  if (!is) throw FormatError("corrupt RNG state in checkpoint");
}

double bce(double logit, double y) { return std::max(logit, 0.0) - y * logit + std::log1p(std::exp(-std::abs(logit))); }

}  // namespace

// ---------------------------------------------------------------------------

double classification_accuracy(const Backbone& backbone, const Eigen::MatrixXd& W,
                               const std::vector<data::Sample>& dataset) {
  if (dataset.empty()) throw ConfigError("dataset is empty");
  long correct = 0, total = 0;
  for (const auto& s : dataset) {
    const FeatureMap z = backbone.forward(s.image);
    const Eigen::VectorXd pooled = (W.transpose() * z.data).rowwise().mean();
    for (Eigen::Index k = 0; k < W.cols(); ++k) {
      const bool predicted = pooled(k) > 0;
      correct += predicted == (s.labels.count(static_cast<ClassId>(k + 1)) > 0);
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

PretrainReport pretrain_classifier(Backbone& backbone, Eigen::MatrixXd& W, const std::vector<data::Sample>& dataset,
                                   const TrainConfig& config) {
  if (dataset.empty()) throw ConfigError("pretraining set is empty");
  PretrainReport report;
  if (config.epochs == 0) {
    report.train_accuracy = classification_accuracy(backbone, W, dataset);
    return report;
  }
  config.validate();
  check_dataset(dataset, W);
  if (W.rows() != backbone.output_channels()) throw DimensionError("classifier rows do not match backbone channels");

  Rng rng(config.seed ^ 0x9e7a1ull);
  Sgd opt{Eigen::VectorXd::Zero(backbone.parameter_count()), Eigen::MatrixXd::Zero(W.rows(), W.cols()),
          config.momentum, config.grad_clip};
  const long per_epoch = steps_per_epoch(dataset.size(), config.batch_size);
  const long total = per_epoch * config.epochs;
  const double K = static_cast<double>(W.cols());

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(dataset.size(), rng);
    for (long b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch_size, hi = std::min(dataset.size(), lo + config.batch_size);
      Eigen::VectorXd g_params = Eigen::VectorXd::Zero(backbone.parameter_count());
      Eigen::MatrixXd g_W = Eigen::MatrixXd::Zero(W.rows(), W.cols());
      double loss = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& s = dataset[order[i]];
        std::any cache;
        const FeatureMap z = backbone.forward(s.image, &cache);
        const Eigen::VectorXd z_mean = z.data.rowwise().mean();
        const Eigen::VectorXd logits = W.transpose() * z_mean;  // GAP commutes with the linear map
        Eigen::VectorXd d_logits(W.cols());
        for (Eigen::Index k = 0; k < W.cols(); ++k) {
          const double y = s.labels.count(static_cast<ClassId>(k + 1)) ? 1.0 : 0.0;
          loss += bce(logits(k), y) / K;
          d_logits(k) = (sigmoid(logits(k)) - y) / K;
        }
        g_W += z_mean * d_logits.transpose();
        const Eigen::VectorXd d_z_mean = W * d_logits;
        const Eigen::MatrixXd d_z = d_z_mean.replicate(1, z.data.cols()) / static_cast<double>(z.data.cols());
        g_params += backbone.backward(cache, d_z);
      }
      const double n = static_cast<double>(hi - lo);
      report.step_losses.push_back(loss / n);
      opt.step(backbone.parameters(), W, g_params / n, g_W / n,
               poly_lr(config.learning_rate, step, total, config.poly_power));
    }
  }
  report.train_accuracy = classification_accuracy(backbone, W, dataset);
  return report;
}

// ---------------------------------------------------------------------------

ImageObjective ritc_image_objective(const Backbone& backbone, const Eigen::MatrixXd& W, const RasterImage& image,
                                    const ClassSet& present, const Eigen::MatrixXd& pooling_basis,
                                    const std::map<ClassId, ClassTextEmbeddings>& texts, const TrainConfig& config,
                                    bool want_grad) {
  std::any cache;
  const FeatureMap z = backbone.forward(image, want_grad ? &cache : nullptr);
  const ActivationMap cam = compute_cam(z, W, present);
  const StepGradient sg = step_losses_with_grad(image, pooling_basis, cam, texts, config.region(), config.weights);

  ImageObjective out;
  out.losses = sg.losses;
  out.diag = sg.diag;
  if (!want_grad) return out;

  out.d_W = Eigen::MatrixXd::Zero(W.rows(), W.cols());
  Eigen::MatrixXd d_z = Eigen::MatrixXd::Zero(z.channels(), z.data.cols());
  for (const auto& [k, d_p] : sg.d_cam) {
    const Plane& p = cam.at(k);
    // d logit in the feature map's row-major pixel order
    const Plane d_logit_t = d_p.cwiseProduct(p).cwiseProduct((1.0 - p.array()).matrix()).transpose();
    const Eigen::Map<const Eigen::VectorXd> d_logit(d_logit_t.data(), d_logit_t.size());
    out.d_W.col(k - 1) += z.data * d_logit;
    d_z.noalias() += W.col(k - 1) * d_logit.transpose();
  }
  out.d_params = backbone.backward(cache, d_z);
  return out;
}

std::string to_jsonl(const StepRecord& r) {
  json j = {{"epoch", r.epoch},         {"step", r.step},         {"frc", r.losses.frc}, {"brc", r.losses.brc},
            {"reg", r.losses.reg},      {"total", r.losses.total}, {"lr", r.lr}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json vec_json(const double* p, Eigen::Index n) { return std::vector<double>(p, p + n); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", vec_json(m.data(), m.size())}};
}

Eigen::MatrixXd json_mat(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const Eigen::VectorXd d = json_vec(j.at("data"));
  if (d.size() != r * c) throw FormatError("matrix payload does not match its shape");
  return Eigen::Map<const Eigen::MatrixXd>(d.data(), r, c);
}

json config_json(const TrainConfig& c) {
  return {{"lr", c.learning_rate},  {"epochs", c.epochs},   {"batch_size", c.batch_size},
          {"poly_power", c.poly_power}, {"momentum", c.momentum}, {"alpha", c.weights.alpha},
          {"beta", c.weights.beta}, {"gamma", c.weights.gamma}, {"tau", c.weights.tau},
          {"omega", c.omega},       {"brc_tau_on_bf", c.weights.brc_tau_on_bf}, {"seed", c.seed},
          {"fat", c.fat},           {"grad_clip", c.grad_clip}};
}

TrainConfig json_config(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.poly_power = j.at("poly_power").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weights.alpha = j.at("alpha").get<double>();
  c.weights.beta = j.at("beta").get<double>();
  c.weights.gamma = j.at("gamma").get<double>();
  c.weights.tau = j.at("tau").get<double>();
  c.omega = j.at("omega").get<double>();
  c.weights.brc_tau_on_bf = j.at("brc_tau_on_bf").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.fat = j.value("fat", true);
  c.grad_clip = j.value("grad_clip", 0.0);
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json j;
  j["format"] = "qaclims-checkpoint";
  j["version"] = Checkpoint::kVersion;
  j["stage"] = c.stage;
  j["backbone"] = {{"widths", c.backbone_spec.widths},
                   {"strides", c.backbone_spec.strides},
                   {"activation", to_string(c.backbone_spec.activation)}};
  j["params"] = vec_json(c.params.data(), c.params.size());
  j["W"] = mat_json(c.W);
  j["velocity_params"] = vec_json(c.velocity_params.data(), c.velocity_params.size());
  j["velocity_W"] = mat_json(c.velocity_W);
  j["config"] = config_json(c.config);
  j["class_names"] = c.class_names;
  j["epoch"] = c.epoch;
  j["step"] = c.step;
  j["rng_state"] = c.rng_state;

  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  try {
    json j;
    in >> j;
    if (j.value("format", "") != "qaclims-checkpoint") throw FormatError(path + " is not a checkpoint");
    if (j.at("version").get<int>() != Checkpoint::kVersion)
      throw VersionError("checkpoint version " + std::to_string(j.at("version").get<int>()) + " is not supported");
    Checkpoint c;
    c.stage = j.value("stage", "");
    c.backbone_spec.widths = j.at("backbone").at("widths").get<std::vector<int>>();
    c.backbone_spec.strides = j.at("backbone").at("strides").get<std::vector<int>>();
    c.backbone_spec.activation = activation_from_string(j.at("backbone").at("activation").get<std::string>());
    c.params = json_vec(j.at("params"));
    c.W = json_mat(j.at("W"));
    c.velocity_params = json_vec(j.at("velocity_params"));
    c.velocity_W = json_mat(j.at("velocity_W"));
    c.config = json_config(j.at("config"));
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    c.epoch = j.at("epoch").get<int>();
    c.step = j.at("step").get<long>();
    c.rng_state = j.at("rng_state").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

RitcResult train_ritc(ConvBackbone& backbone, Eigen::MatrixXd& W, const corpus::CorpusStore& store,
                      const std::vector<data::Sample>& dataset, const TrainConfig& config, EncoderPair& encoders,
                      const RitcOptions& options) {
  config.validate();
  check_dataset(dataset, W);
  if (W.rows() != backbone.output_channels()) throw DimensionError("classifier rows do not match backbone channels");

  for (const auto& s : dataset)
    for (ClassId k : s.labels)
      if (!store.find(s.id, k))
        throw Error("no corpus record for image '" + s.id + "', class " + std::to_string(k));

  // Constant per image: pooling bases and text embeddings.
  std::vector<Eigen::MatrixXd> bases;
  std::vector<std::map<ClassId, ClassTextEmbeddings>> texts;
  bases.reserve(dataset.size());
  for (const auto& s : dataset) {
    auto basis = encoders.pooling_basis(s.image);
    if (!basis)
      throw ConfigError("encoder '" + encoders.id() + "' exposes no pooling basis; it can score but not train");
    bases.push_back(std::move(*basis));
    std::map<ClassId, ClassTextEmbeddings> t;
    for (ClassId k : s.labels) t.emplace(k, embed_corpus(encoders, store.at(s.id, k)));
    texts.push_back(std::move(t));
  }

  Rng rng(config.seed ^ 0x417cull);
  Sgd opt{Eigen::VectorXd::Zero(backbone.parameter_count()), Eigen::MatrixXd::Zero(W.rows(), W.cols()),
          config.momentum, config.grad_clip};
  int start_epoch = 0;
  long step = 0;
  if (const Checkpoint* r = options.resume) {
    if (r->params.size() != backbone.parameter_count() || r->W.rows() != W.rows() || r->W.cols() != W.cols())
      throw DimensionError("checkpoint does not match the model being trained");
    if (config_fingerprint(r->config) != config_fingerprint(config))
      throw ConfigError("resume config differs from the checkpoint's config");
    backbone.parameters() = r->params;
    W = r->W;
    opt.v_params = r->velocity_params;
    opt.v_W = r->velocity_W;
    start_epoch = r->epoch;
    step = r->step;
    restore_rng(rng, r->rng_state);
  }

  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path, options.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics log " + options.metrics_path);
  }

  const long per_epoch = steps_per_epoch(dataset.size(), config.batch_size);
  const long total = per_epoch * config.epochs;
  RitcResult result;

  auto snapshot = [&](int epochs_done) {
    Checkpoint c;
    c.stage = "ritc";
    c.backbone_spec = backbone.spec();
    c.params = backbone.parameters();
    c.W = W;
    c.velocity_params = opt.v_params;
    c.velocity_W = opt.v_W;
    c.config = config;
    c.epoch = epochs_done;
    c.step = step;
    c.rng_state = rng_state(rng);
    return c;
  };

  int epoch = start_epoch;
  for (; epoch < config.epochs; ++epoch) {
    if (options.stop_after_epoch > 0 && epoch >= options.stop_after_epoch) break;
    const auto order = shuffled(dataset.size(), rng);
    for (long b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch_size, hi = std::min(dataset.size(), lo + config.batch_size);
      Eigen::VectorXd g_params = Eigen::VectorXd::Zero(backbone.parameter_count());
      Eigen::MatrixXd g_W = Eigen::MatrixXd::Zero(W.rows(), W.cols());
      LossBreakdown mean;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t idx = order[i];
        const auto& s = dataset[idx];
        const ImageObjective obj = ritc_image_objective(backbone, W, s.image, s.labels, bases[idx], texts[idx], config);
        g_params += obj.d_params;
        g_W += obj.d_W;
        mean.frc += obj.losses.frc;
        mean.brc += obj.losses.brc;
        mean.reg += obj.losses.reg;
        mean.total += obj.losses.total;
      }
      const double n = static_cast<double>(hi - lo);
      mean.frc /= n;
      mean.brc /= n;
      mean.reg /= n;
      mean.total /= n;

      const double lr = poly_lr(config.learning_rate, step, total, config.poly_power);
      opt.step(backbone.parameters(), W, g_params / n, g_W / n, lr);

      StepRecord rec{epoch, step, mean, lr};
      if (metrics.is_open()) metrics << to_jsonl(rec) << '\n';
      if (options.on_step) options.on_step(rec);
      result.log.push_back(rec);
    }
    if (!options.checkpoint_path.empty()) save_checkpoint(snapshot(epoch + 1), options.checkpoint_path);
  }
  result.checkpoint = snapshot(epoch);
  return result;
}

}  // namespace qaclims::train
