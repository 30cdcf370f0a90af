#include "qaclims/evaluation.hpp"

#include "qaclims/activation.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace qaclims::eval {

SegMask cam_to_mask(const ActivationMap& maps, double bg_threshold) {
  if (!(bg_threshold >= 0 && bg_threshold <= 1)) throw ConfigError("background threshold must lie in [0, 1]");
  if (maps.empty()) throw DimensionError("no activation planes");
  const Eigen::Index h = maps.begin()->second.rows(), w = maps.begin()->second.cols();
  for (const auto& [k, p] : maps) {
    if (p.rows() != h || p.cols() != w) throw DimensionError("activation planes differ in shape");
    if (k < 1 || k >= kIgnoreIndex) throw DimensionError("class id " + std::to_string(k) + " cannot be stored in a mask");
  }

  SegMask mask = SegMask::Zero(h, w);
  Plane best = Plane::Constant(h, w, bg_threshold);
  for (const auto& [k, p] : maps)  // ascending class id; strict > keeps earlier winners on ties
    for (Eigen::Index x = 0; x < w; ++x)
      for (Eigen::Index y = 0; y < h; ++y)
        if (p(y, x) > best(y, x)) {
          best(y, x) = p(y, x);
          mask(y, x) = static_cast<std::uint8_t>(k);
        }
  return mask;
}

Confusion::Confusion(int n_classes) : n_(n_classes) {
  if (n_classes < 1 || n_classes > kIgnoreIndex) throw ConfigError("class count must lie in [1, 255]");
  counts_.assign(static_cast<std::size_t>(n_) * n_, 0);
}

void Confusion::add(const SegMask& pred, const SegMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw DimensionError("prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                         ", ground truth is " + std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  for (Eigen::Index i = 0; i < gt.size(); ++i) {
    const int g = gt.data()[i];
    if (g == kIgnoreIndex) continue;
    const int p = pred.data()[i];
    if (g >= n_ || p >= n_)
      throw DimensionError("label " + std::to_string(std::max(g, p)) + " outside " + std::to_string(n_) + " classes");
    ++counts_[static_cast<std::size_t>(g) * n_ + p];
  }
}

void Confusion::merge(const Confusion& other) {
  if (other.n_ != n_) throw DimensionError("merging confusion counts of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t Confusion::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

EvalReport make_report(const Confusion& c, const std::vector<std::string>& class_names) {
  EvalReport r;
  r.pixels = c.total();
  const int n = c.classes();
  double sum = 0;
  int counted = 0;
  for (int k = 0; k < n; ++k) {
    ClassScore s;
    s.class_id = k;
    s.name = k < static_cast<int>(class_names.size()) ? class_names[k] : std::to_string(k);
    for (int j = 0; j < n; ++j) {
      s.gt_pixels += c.count(k, j);
      s.pred_pixels += c.count(j, k);
    }
    s.intersection = c.count(k, k);
    s.union_ = s.gt_pixels + s.pred_pixels - s.intersection;
    if (s.union_ > 0) {
      s.iou = static_cast<double>(s.intersection) / static_cast<double>(s.union_);
      sum += s.iou;
      ++counted;
    } else {
      s.iou = std::numeric_limits<double>::quiet_NaN();
    }
    r.classes.push_back(std::move(s));
  }
  r.miou = counted ? sum / counted : 0.0;
  return r;
}

EvalReport miou(const SegMask& pred, const SegMask& gt, int n_classes) {
  if (n_classes == 0) {
    int hi = 0;
    for (Eigen::Index i = 0; i < gt.size(); ++i)
      if (gt.data()[i] != kIgnoreIndex) hi = std::max<int>(hi, gt.data()[i]);
    for (Eigen::Index i = 0; i < pred.size(); ++i) hi = std::max<int>(hi, pred.data()[i]);
    n_classes = hi + 1;
  }
  Confusion c(n_classes);
  c.add(pred, gt);
  return make_report(c);
}

std::vector<double> default_sweep() {
  std::vector<double> t;
  for (int i = 1; i <= 19; ++i) t.push_back(i * 0.05);
  return t;
}

CamEvaluation evaluate_cams(const Backbone& backbone, const Eigen::MatrixXd& W,
                            const std::vector<data::Sample>& samples, const std::vector<std::string>& class_names,
                            const CamEvalOptions& options) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  const int n_classes = static_cast<int>(class_names.size());
  if (n_classes != W.cols() + 1) throw DimensionError("class table does not match the classifier");
  for (const auto& s : samples)
    if (!s.gt) throw ConfigError("image '" + s.id + "' has no ground-truth mask");

  std::vector<double> thresholds{options.bg_threshold};
  thresholds.insert(thresholds.end(), options.sweep.begin(), options.sweep.end());

  auto score = [&](std::size_t begin, std::size_t end) {
    std::vector<Confusion> out(thresholds.size(), Confusion(n_classes));
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples[i];
      ActivationMap up;
      for (auto& [k, p] : train::infer_cam(backbone, W, s.image, s.labels)) {
        Plane u = upsample_map(p, s.image.height(), s.image.width());
        if (options.max_normalize) u /= u.maxCoeff() + 1e-5;
        up.emplace(k, std::move(u));
      }
      for (std::size_t t = 0; t < thresholds.size(); ++t) out[t].add(cam_to_mask(up, thresholds[t]), *s.gt);
    }
    return out;
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.max_threads ? options.max_threads
                                                                               : std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(samples.size())));
  std::vector<std::future<std::vector<Confusion>>> parts;
  const std::size_t chunk = (samples.size() + threads - 1) / threads;
  for (std::size_t b = 0; b < samples.size(); b += chunk)
    parts.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, score, b,
                               std::min(samples.size(), b + chunk)));
  std::vector<Confusion> total(thresholds.size(), Confusion(n_classes));
  for (auto& f : parts) {
    const auto part = f.get();
    for (std::size_t t = 0; t < thresholds.size(); ++t) total[t].merge(part[t]);
  }

  CamEvaluation ev;
  ev.report = make_report(total[0], class_names);
  ev.report.bg_threshold = options.bg_threshold;
  for (std::size_t t = 1; t < thresholds.size(); ++t) {
    EvalReport r = make_report(total[t], class_names);
    r.bg_threshold = thresholds[t];
    if (!ev.best || r.miou > ev.best->miou) {
      ev.best_threshold = thresholds[t];
      ev.best = std::move(r);
    }
  }
  return ev;
}

namespace {

std::string pct(double v) {
  if (std::isnan(v)) return "    -";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%5.1f", 100.0 * v);
  return buf;
}

json class_json(const ClassScore& s) {
  json j = {{"class_id", s.class_id},       {"name", s.name},
            {"intersection", s.intersection}, {"union", s.union_},
            {"gt_pixels", s.gt_pixels},     {"pred_pixels", s.pred_pixels}};
  j["iou"] = std::isnan(s.iou) ? json(nullptr) : json(s.iou);
  return j;
}

json report_obj(const EvalReport& r) {
  json j;
  j["miou"] = r.miou;
  j["pixels"] = r.pixels;
  j["bg_threshold"] = r.bg_threshold;
  j["fingerprint"] = r.fingerprint;
  j["classes"] = json::array();
  for (const auto& c : r.classes) j["classes"].push_back(class_json(c));
  return j;
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "class                 IoU%   gt_px  pred_px\n";
  for (const auto& c : r.classes) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-20s %s %7llu %8llu\n", c.name.c_str(), pct(c.iou).c_str(),
                  static_cast<unsigned long long>(c.gt_pixels), static_cast<unsigned long long>(c.pred_pixels));
    os << line;
  }
  char tail[96];
  std::snprintf(tail, sizeof(tail), "mIoU %s  (bg_threshold %.2f, %llu px)\n", pct(r.miou).c_str(), r.bg_threshold,
                static_cast<unsigned long long>(r.pixels));
  os << tail;
  if (!r.fingerprint.empty()) os << "fingerprint " << r.fingerprint << '\n';
  return os.str();
}

std::string report_json(const EvalReport& r) { return report_obj(r).dump(1); }

// ---------------------------------------------------------------------------

std::string LossSubset::label() const {
  std::string s;
  for (auto [on, name] : {std::pair{frc, "FRC"}, std::pair{brc, "BRC"}, std::pair{reg, "REG"}})
    if (on) s += (s.empty() ? "" : "+") + std::string(name);
  return s.empty() ? "none" : s;
}

std::vector<AblationCell> loss_matrix() {
  return {{"FRC", {true, false, false}},
          {"BRC", {false, true, false}},
          {"FRC+BRC", {true, true, false}},
          {"FRC+BRC+REG", {true, true, true}}};
}

std::vector<AblationCell> corpus_matrix() {
  using corpus::TextSource;
  auto cell = [](std::string name, std::set<TextSource> keep) {
    AblationCell c{std::move(name), {}, CorpusVariant::restricted, std::move(keep)};
    return c;
  };
  const auto cat = TextSource::category, fine = TextSource::fine_grained, alias = TextSource::alias,
             obj = TextSource::surrounding_object, scene = TextSource::scene;
  std::vector<AblationCell> m;
  m.push_back({"category only", {}, CorpusVariant::baseline});
  m.push_back(cell("+fine-grained", {cat, fine}));
  m.push_back(cell("+alias", {cat, alias}));
  m.push_back(cell("+object", {cat, obj}));
  m.push_back(cell("+scene", {cat, scene}));
  m.push_back(cell("+fine-grained+alias", {cat, fine, alias}));
  m.push_back(cell("+fine-grained+alias+object", {cat, fine, alias, obj}));
  m.push_back({"full corpus", {}, CorpusVariant::full});
  return m;
}

std::vector<AblationCell> fat_matrix() {
  AblationCell off{"FAT off"};
  off.fat = false;
  return {off, {"FAT on"}};
}

namespace {

std::string corpus_tag(const AblationCell& c) {
  switch (c.corpus) {
    case CorpusVariant::full: return "full";
    case CorpusVariant::baseline: return "baseline";
    case CorpusVariant::restricted: {
      std::string s = "keep:";
      for (auto k : c.keep) s += corpus::to_string(k) + ",";
      return s;
    }
  }
  return "?";
}

train::TrainConfig cell_config(const AblationCell& cell, const train::TrainConfig& base) {
  if (!cell.losses.frc && !cell.losses.brc && !cell.losses.reg)
    throw ConfigError("ablation cell '" + cell.name + "' enables no loss term");
  train::TrainConfig c = base;
  if (!cell.losses.frc) c.weights.alpha = 0;
  if (!cell.losses.brc) c.weights.beta = 0;
  if (!cell.losses.reg) c.weights.gamma = 0;
  c.fat = cell.fat;
  if (cell.omega) c.omega = *cell.omega;
  c.validate();
  return c;
}

}  // namespace

EvalReport run_cell(const AblationCell& cell, const Experiment& ex) {
  if (!ex.train || !ex.eval || !ex.corpus || !ex.encoders || !ex.init_backbone || !ex.init_W)
    throw ConfigError("experiment is missing an input");
  const train::TrainConfig config = cell_config(cell, ex.base);

  const auto& p = ex.init_backbone->parameters();
  std::uint64_t h = fnv1a(p.data(), sizeof(double) * p.size());
  h = fnv1a(ex.init_W->data(), sizeof(double) * ex.init_W->size(), h);
  for (const auto& s : *ex.train) h = fnv1a(s.id, h);
  for (const auto& s : *ex.eval) h = fnv1a(s.id, h);
  const std::string fp = train::config_fingerprint(
      config, corpus_tag(cell) + "|" + ex.encoders->id() + "|" + ex.corpus->backend_id + "|" + hex64(h));
  if (ex.memo)
    if (auto it = ex.memo->find(fp); it != ex.memo->end()) return it->second;

  corpus::CorpusStore variant;
  const corpus::CorpusStore* store = ex.corpus;
  if (cell.corpus == CorpusVariant::baseline) {
    variant = corpus::baseline_store(*ex.corpus);
    store = &variant;
  } else if (cell.corpus == CorpusVariant::restricted) {
    variant = corpus::restrict_store(*ex.corpus, cell.keep);
    store = &variant;
  }

  ConvBackbone backbone = *ex.init_backbone;
  Eigen::MatrixXd W = *ex.init_W;
  train::train_ritc(backbone, W, *store, *ex.train, config, *ex.encoders);
  EvalReport r = evaluate_cams(backbone, W, *ex.eval, ex.class_names, ex.eval_options).report;
  r.fingerprint = fp;
  if (ex.memo) ex.memo->emplace(fp, r);
  return r;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& matrix, const Experiment& ex) {
  // Reject bad cells before spending time on training.
  for (const auto& c : matrix) cell_config(c, ex.base);
  std::vector<AblationRow> rows;
  for (const auto& c : matrix) rows.push_back({c, run_cell(c, ex)});
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "config                          losses        FAT  omega   mIoU%\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-31s %-13s %-4s %5s  %s\n", r.cell.name.c_str(),
                  r.cell.losses.label().c_str(), r.cell.fat ? "on" : "off",
                  r.cell.omega ? std::to_string(*r.cell.omega).substr(0, 4).c_str() : "base",
                  pct(r.report.miou).c_str());
    os << line;
  }
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    json cell = {{"name", r.cell.name},
                 {"losses", r.cell.losses.label()},
                 {"corpus", corpus_tag(r.cell)},
                 {"fat", r.cell.fat}};
    cell["omega"] = r.cell.omega ? json(*r.cell.omega) : json(nullptr);
    cell["report"] = report_obj(r.report);
    j.push_back(std::move(cell));
  }
  return j.dump(1);
}

std::vector<OmegaPoint> sweep_omega(const Experiment& ex, const std::vector<double>& omegas) {
  if (omegas.empty()) throw ConfigError("omega sweep needs at least one value");
  for (double w : omegas)
    if (!(w >= 0 && w <= 1)) throw ConfigError("omega values must lie in [0, 1]");
  std::vector<OmegaPoint> out;
  for (double w : omegas) {
    AblationCell cell{"omega"};
    cell.omega = w;
    out.push_back({w, run_cell(cell, ex)});
  }
  return out;
}

std::string format_sweep(const std::vector<OmegaPoint>& pts) {
  std::ostringstream os;
  os << "omega   mIoU%\n";
  for (const auto& p : pts) {
    char line[48];
    std::snprintf(line, sizeof(line), "%5.2f   %s\n", p.omega, pct(p.report.miou).c_str());
    os << line;
  }
  return os.str();
}

}  // namespace qaclims::eval
