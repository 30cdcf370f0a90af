// Runs the acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include "qaclims/activation.hpp"
#include "qaclims/cli.hpp"
#include "qaclims/corpus.hpp"
#include "qaclims/evaluation.hpp"
#include "qaclims/losses.hpp"
#include "qaclims/pipeline.hpp"
#include "qaclims/rng.hpp"
#include "qaclims/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#ifndef QACLIMS_DATA_DIR
#error "QACLIMS_DATA_DIR must point at the shipped data directory"
#endif

using namespace qaclims;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kLossTol = 1e-10;
constexpr double kLn2Tol = 1e-12;
constexpr double kGradRelTol = 1e-3;
constexpr double kFdStep = 1e-5;
constexpr double kMiouTol = 1e-12;
constexpr double kMinGain = 0.10;  // mIoU as a fraction
constexpr double kBudgetLoss = 5, kBudgetGrad = 60, kBudgetE2E = 600;  // seconds

struct Outcome {
  bool pass = true;
  std::string detail;
  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("qaclims-acceptance-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------

double frc_oracle(double s_ff, const std::vector<double>& s_fb, double tau) {
  double den = std::exp(s_ff / tau);
  for (double s : s_fb) den += std::exp(s / tau);
  return -std::log(std::exp(s_ff / tau) / den);
}

double brc_oracle(double s_bf, const std::vector<double>& s_bb, double tau) {
  double m = 0;
  for (double s : s_bb) m += s;
  m /= static_cast<double>(s_bb.size());
  return -std::log(std::exp(m / tau) / (std::exp(s_bf / tau) + std::exp(m / tau)));
}

double reg_oracle(const ActivationMap& maps) {
  double sum = 0;
  long n = 0;
  for (const auto& [k, p] : maps)
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        sum += p(i, j);
        ++n;
      }
  return sum / static_cast<double>(n);
}

Outcome c1_loss_oracles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const double tau = 0.05 + rng.uniform();
    const int n = 1 + static_cast<int>(rng.uniform() * 12);
    std::vector<double> neg(n);
    for (double& v : neg) v = 2 * rng.uniform() - 1;
    const double pos = 2 * rng.uniform() - 1;
    worst = std::max(worst, std::abs(frc_loss<double>(pos, neg, tau) - frc_oracle(pos, neg, tau)));
    worst = std::max(worst, std::abs(brc_loss<double>(pos, neg, tau) - brc_oracle(pos, neg, tau)));

    ActivationMap maps;
    const int planes = 1 + static_cast<int>(rng.uniform() * 3);
    for (int k = 1; k <= planes; ++k) {
      Plane p(1 + static_cast<int>(rng.uniform() * 9), 1 + static_cast<int>(rng.uniform() * 9));
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
      maps.emplace(k, p);
    }
    worst = std::max(worst, std::abs(reg_loss(maps) - reg_oracle(maps)));
  }
  if (worst > kLossTol) o.fail("max |loss - oracle| = " + std::to_string(worst));

  const double ln2 = std::log(2.0);
  for (double s : {-0.8, 0.0, 0.3, 1.0}) {
    const std::vector<double> one{s};
    if (std::abs(frc_loss<double>(s, one, 0.7) - ln2) > kLn2Tol) o.fail("FRC symmetry case is not ln 2");
    const std::vector<double> bb{s - 0.2, s + 0.2};
    if (std::abs(brc_loss<double>(s, bb, 0.7) - ln2) > kLn2Tol) o.fail("BRC symmetry case is not ln 2");
  }
  const double secs = seconds_since(t0);
  if (secs > kBudgetLoss) o.fail("took " + std::to_string(secs) + " s");
  if (o.pass) {
    std::ostringstream s;
    s << "max error " << worst << ", " << secs << " s";
    o.detail = s.str();
  }
  return o;
}

// ---------------------------------------------------------------------------

Outcome c2_gradient_check() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = scratch_dir("grad");
  const World world(3);
  const auto m = data::generate_synthetic(4, 3, 5, dir.string());
  const auto samples = data::load_samples(m);
  const corpus::TemplateSet ts{corpus::kDefaultTemplateVersion, corpus::default_templates()};
  auto vqa = pipeline::make_mock_vqa(world, samples, ts);
  const auto store = pipeline::build_corpus(vqa, samples, m.class_names, ts);
  MockEncoderPair enc(world);

  double worst = 0;
  int resampled = 0;
  for (int seed = 0; seed < 20 && o.pass; ++seed) {
    ConvBackboneSpec spec;
    spec.activation = Activation::silu;
    const ConvBackbone bb(spec, seed);
    // Scaled up so the CAMs have contrast and FAT splits the plane.
    const Eigen::MatrixXd W = train::init_classifier(bb.output_channels(), 3, seed) * 30;
    const auto& s = samples[seed % samples.size()];
    const Eigen::MatrixXd basis = *enc.pooling_basis(s.image);
    std::map<ClassId, ClassTextEmbeddings> texts;
    for (ClassId k : s.labels) texts.emplace(k, embed_corpus(enc, store.at(s.id, k)));
    train::TrainConfig cfg;
    cfg.seed = seed;
    const auto obj = train::ritc_image_objective(bb, W, s.image, s.labels, basis, texts, cfg);

    auto binaries = [&](const ConvBackbone& b, const Eigen::MatrixXd& w) {
      std::vector<Plane> out;
      for (const auto& [k, p] : train::infer_cam(b, w, s.image, s.labels))
        out.push_back(fat_threshold(upsample_map(p, s.image.height(), s.image.width()), cfg.omega).binary);
      return out;
    };
    const auto b0 = binaries(bb, W);

    Rng rng(1000 + seed);
    for (int part = 0; part < 2; ++part) {  // 0: backbone parameters, 1: classifier
      bool done = false;
      for (int attempt = 0; attempt < 20 && !done; ++attempt) {
        Eigen::VectorXd dp = Eigen::VectorXd::Zero(bb.parameter_count());
        Eigen::MatrixXd dW = Eigen::MatrixXd::Zero(W.rows(), W.cols());
        if (part == 0)
          for (auto& v : dp) v = rng.normal();
        else
          for (Eigen::Index i = 0; i < dW.size(); ++i) dW.data()[i] = rng.normal();
        dp /= std::max(dp.norm(), 1e-300);
        dW /= std::max(dW.norm(), 1e-300);
        if (part == 0) dW.setZero();
        if (part == 1) dp.setZero();

        auto shifted = [&](double t, bool* same_binary) {
          ConvBackbone b2 = bb;
          b2.parameters() += t * dp;
          const Eigen::MatrixXd W2 = W + t * dW;
          if (same_binary) *same_binary = binaries(b2, W2) == b0;
          return train::ritc_image_objective(b2, W2, s.image, s.labels, basis, texts, cfg, false).losses.total;
        };
        bool same_p = false, same_m = false;
        const double fp = shifted(kFdStep, &same_p), fm = shifted(-kFdStep, &same_m);
        if (!same_p || !same_m) {  // direction crosses a FAT tie
          ++resampled;
          continue;
        }
        const double fd = (fp - fm) / (2 * kFdStep);
        const double an = part == 0 ? obj.d_params.dot(dp) : (obj.d_W.array() * dW.array()).sum();
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
        worst = std::max(worst, rel);
        if (rel > kGradRelTol) {
          std::ostringstream d;
          d << "seed " << seed << (part == 0 ? " params" : " W") << ": analytic " << an << " vs fd " << fd;
          o.fail(d.str());
        }
        done = true;
      }
      if (!done) o.fail("seed " + std::to_string(seed) + ": no direction away from FAT ties");
    }
  }
  const double secs = seconds_since(t0);
  if (secs > kBudgetGrad) o.fail("took " + std::to_string(secs) + " s");
  if (o.pass) {
    std::ostringstream s;
    s << "max rel error " << worst << " over 40 checks, " << resampled << " directions resampled, " << secs << " s";
    o.detail = s.str();
  }
  fs::remove_all(dir);
  return o;
}

// ---------------------------------------------------------------------------

Outcome c3_fat() {
  Outcome o;
  Rng rng(303);
  auto check = [&](const Plane& p, double omega) {
    const auto r = fat_threshold(p, omega);
    double mx = p(0, 0);
    for (Eigen::Index i = 0; i < p.size(); ++i) mx = std::max(mx, p.data()[i]);
    const double theta = omega * mx;
    if (r.threshold != theta) return false;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double b = p(i, j) >= theta ? 1.0 : 0.0;
        if (r.binary(i, j) != b || r.fg(i, j) != p(i, j) * b || r.bg(i, j) != (1 - p(i, j)) * (1 - b)) return false;
      }
    return true;
  };
  int n = 0;
  for (int t = 0; t < 1000; ++t) {
    Plane p(1 + static_cast<int>(rng.uniform() * 12), 1 + static_cast<int>(rng.uniform() * 12));
    switch (t % 4) {
      case 0: p.setZero(); break;
      case 1: p.setConstant(rng.uniform()); break;
      case 2: p.setConstant(0.2 * rng.uniform()); p(static_cast<int>(rng.uniform() * p.rows()), 0) = 0.9; break;
      default:
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
    }
    const double omega = t % 10 == 0 ? 0.0 : t % 10 == 1 ? 1.0 : rng.uniform();
    if (!check(p, omega)) o.fail("plane " + std::to_string(t) + " differs from the oracle");
    ++n;
  }

  Plane p(1, 4);
  p << 0.9, 0.6, 0.4, 0.1;
  const auto r = fat_threshold(p, 0.5);
  Plane b(1, 4), fg(1, 4), bg(1, 4);
  b << 1, 1, 0, 0;
  fg << 0.9, 0.6, 0, 0;
  bg << 0, 0, 1 - 0.4, 1 - 0.1;
  if (r.threshold != 0.45 || r.binary != b || r.fg != fg || r.bg != bg) o.fail("worked example does not reproduce");
  if (o.pass) o.detail = std::to_string(n) + " planes bit-exact, worked example exact";
  return o;
}

// ---------------------------------------------------------------------------

Outcome c4_corpus_golden() {
  Outcome o;
  using K = corpus::QuestionKind;
  const std::vector<corpus::QuestionTemplate> table = {
      {K::surrounding_object, "What is above the {class}?"},
      {K::surrounding_object, "What is under the {class}?"},
      {K::surrounding_object, "What is behind the {class}?"},
      {K::surrounding_object, "What is around the {class}?"},
      {K::surrounding_object, "What is next to the {class}?"},
      {K::surrounding_object, "What is the left side of {class}?"},
      {K::surrounding_object, "What is the right side of {class}?"},
      {K::scene, "What scene is the {class} in?"},
      {K::scene, "What enviroment is the {class} in?"},
      {K::scene, "What place is the {class} in?"},
      {K::fine_grained, "What kind of {class} is in the photo?"},
      {K::fine_grained, "What type of {class} is in the photo?"},
      {K::alias, "What is this {class} also called?"},
      {K::alias, "What is this {class} usually called?"},
      {K::alias, "What is another word for this {class}?"},
      {K::alias, "What is another name for this {class}?"},
  };
  const auto shipped = corpus::load_templates(std::string(QACLIMS_DATA_DIR) + "/templates.json");
  if (shipped.templates != table) o.fail("shipped template file differs from the table");
  if (corpus::default_templates() != table) o.fail("built-in templates differ from the table");
  int bg = 0, fg = 0;
  for (const auto& t : shipped.templates) (corpus::is_background(t.kind) ? bg : fg)++;
  if (bg != 10 || fg != 6) o.fail("expected 10 BG + 6 FG templates");

  const auto fgt = corpus::postprocess_fg({"passenger"}, "train");
  if (fgt != std::vector<std::string>{"a photo of passenger train", "a photo of train"})
    o.fail("'passenger' does not become the FG prompt");
  const auto base = corpus::build_baseline_corpus("train");
  if (base.bg_texts != std::vector<std::string>{"a photo of no train"} ||
      base.fg_texts != std::vector<std::string>{"a photo of train"})
    o.fail("baseline corpus is not the category / no-category pair");
  if (o.pass) o.detail = "16 templates verbatim, prompt transforms exact";
  return o;
}

// ---------------------------------------------------------------------------

Outcome c5_miou() {
  Outcome o;
  Rng rng(505);
  const int n_classes = 5;
  eval::Confusion conf(n_classes);
  std::vector<std::pair<SegMask, SegMask>> pairs;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + static_cast<int>(rng.uniform() * 20), w = 1 + static_cast<int>(rng.uniform() * 20);
    SegMask pred(h, w), gt(h, w);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      pred.data()[i] = static_cast<std::uint8_t>(rng.uniform() * n_classes);
      gt.data()[i] = rng.uniform() < 0.1 ? kIgnoreIndex : static_cast<std::uint8_t>(rng.uniform() * n_classes);
    }
    conf.add(pred, gt);
    pairs.emplace_back(pred, gt);
  }
  // Brute force: count each class's intersection and union pixel by pixel.
  double sum = 0;
  int present = 0;
  for (int k = 0; k < n_classes; ++k) {
    std::uint64_t inter = 0, uni = 0;
    for (const auto& [pred, gt] : pairs)
      for (Eigen::Index i = 0; i < pred.size(); ++i) {
        if (gt.data()[i] == kIgnoreIndex) continue;
        const bool a = pred.data()[i] == k, b = gt.data()[i] == k;
        inter += a && b;
        uni += a || b;
      }
    if (uni > 0) {
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
  }
  const double oracle = sum / present;
  const double got = eval::make_report(conf).miou;
  worst = std::abs(got - oracle);
  if (worst > kMiouTol) o.fail("dataset mIoU " + std::to_string(got) + " vs oracle " + std::to_string(oracle));

  for (const auto& [pred, gt] : pairs) {
    SegMask clean = gt;
    for (Eigen::Index i = 0; i < clean.size(); ++i)
      if (clean.data()[i] == kIgnoreIndex) clean.data()[i] = 0;
    if (eval::miou(clean, clean, n_classes).miou != 1.0) o.fail("identity masks do not score exactly 1");
  }
  if (o.pass) {
    std::ostringstream s;
    s << "|mIoU - oracle| = " << worst << ", identity = 1 exactly";
    o.detail = s.str();
  }
  return o;
}

// ---------------------------------------------------------------------------

struct Benchmark {
  pipeline::BenchmarkRecipe recipe = pipeline::default_recipe();
  fs::path dir = scratch_dir("benchmark");
  pipeline::PreparedBenchmark prepared = pipeline::prepare_benchmark(recipe, dir.string());
  std::map<std::string, eval::EvalReport> memo;
  eval::Experiment ex = prepared.experiment(recipe, &memo);
};

std::string pct(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.1f", 100 * v);
  return b;
}

Outcome c6_end_to_end(Benchmark& bm, double prepare_seconds) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto init = eval::evaluate_cams(*bm.prepared.backbone, bm.prepared.W, bm.prepared.data.eval,
                                        bm.ex.class_names, bm.recipe.eval);
  const auto rows = eval::run_ablation(eval::loss_matrix(), bm.ex);
  std::map<std::string, double> score;
  for (const auto& r : rows) score[r.cell.name] = r.report.miou;
  const auto baseline = eval::run_ablation({eval::corpus_matrix().front()}, bm.ex).front().report.miou;
  const double full = score.at("FRC+BRC+REG");

  if (full - init.report.miou < kMinGain)
    o.fail("full corpus gains " + pct(full - init.report.miou) + " points over init, need " + pct(kMinGain));
  if (score.at("FRC+BRC") < std::max(score.at("FRC"), score.at("BRC")))
    o.fail("FRC+BRC " + pct(score.at("FRC+BRC")) + " below a single term");
  if (full < baseline) o.fail("full corpus " + pct(full) + " below the baseline corpus " + pct(baseline));
  const double secs = prepare_seconds + seconds_since(t0);
  if (secs > kBudgetE2E) o.fail("took " + std::to_string(secs) + " s");
  std::string d = "init " + pct(init.report.miou) + ", FRC " + pct(score["FRC"]) + ", BRC " + pct(score["BRC"]) +
                  ", FRC+BRC " + pct(score["FRC+BRC"]) + ", full " + pct(full) + ", baseline corpus " +
                  pct(baseline) + ", " + std::to_string(static_cast<int>(secs)) + " s";
  if (o.pass) o.detail = d;
  else o.detail += " (" + d + ")";
  return o;
}

Outcome c7_omega(Benchmark& bm) {
  Outcome o;
  const auto pts = eval::sweep_omega(bm.ex, {0, 0.1, 0.3, 0.5});
  std::size_t best = 0;
  std::string d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].report.miou > pts[best].report.miou) best = i;
    char b[48];
    std::snprintf(b, sizeof b, "%s%g: %s", i ? ", " : "", pts[i].omega, pct(pts[i].report.miou).c_str());
    d += b;
  }
  if (!(pts[best].omega > 0 && best + 1 < pts.size()))
    o.fail("maximum at omega " + std::to_string(pts[best].omega) + " is not interior");
  o.detail = (o.pass ? "" : o.detail + " ") + "(" + d + ")";
  return o;
}

// ---------------------------------------------------------------------------

int run_cli(std::vector<std::string> args, std::string* out) {
  args.insert(args.begin(), "qaclims");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = cli_main(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str() + e.str();
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome c8_determinism() {
  Outcome o;
  std::vector<std::map<std::string, std::string>> runs;
  for (int r = 0; r < 2 && o.pass; ++r) {
    const fs::path d = scratch_dir("determinism-" + std::to_string(r));
    const std::string D = d.string() + "/";
    const std::vector<std::vector<std::string>> steps = {
        {"dataset", "synth", "--out", D + "train", "--images", "8", "--classes", "3", "--seed", "7"},
        {"dataset", "synth", "--out", D + "eval", "--images", "4", "--classes", "3", "--seed", "8"},
        {"corpus", "generate", "--manifest", D + "train/manifest.json", "--out", D + "corpus.json"},
        {"train", "pretrain", "--manifest", D + "train/manifest.json", "--out", D + "pre.json", "--set", "epochs=4",
         "--metrics", D + "pretrain.jsonl"},
        {"train", "ritc", "--manifest", D + "train/manifest.json", "--corpus", D + "corpus.json", "--init",
         D + "pre.json", "--out", D + "ritc.json", "--metrics", D + "ritc.jsonl", "--set", "epochs=3"},
        {"eval", "run", "--manifest", D + "eval/manifest.json", "--checkpoint", D + "ritc.json", "--out",
         D + "report.json", "--sweep"},
    };
    for (const auto& s : steps) {
      std::string log;
      if (run_cli(s, &log) != 0) {
        o.fail(s[0] + " " + s[1] + " failed: " + log);
        break;
      }
    }
    std::map<std::string, std::string> files;
    for (const char* f : {"train/manifest.json", "corpus.json", "pretrain.jsonl", "ritc.jsonl", "pre.json",
                          "ritc.json", "report.json"})
      files[f] = slurp(d / f);
    runs.push_back(std::move(files));
    fs::remove_all(d);
  }
  if (o.pass) {
    for (const auto& [name, bytes] : runs[0]) {
      if (bytes.empty()) o.fail(name + " is empty");
      if (runs[1].at(name) != bytes) o.fail(name + " differs between runs");
    }
  }
  if (o.pass) o.detail = std::to_string(runs[0].size()) + " artifacts byte-identical across two runs";
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << id << " " << name << ": " << o.detail << std::endl;
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Outcome o;
      o.fail(std::string("exception: ") + e.what());
      return o;
    }
  };

  report(1, "loss oracles", guarded(c1_loss_oracles));
  report(2, "gradient check", guarded(c2_gradient_check));
  report(3, "FAT equivalence", guarded(c3_fat));
  report(4, "corpus golden", guarded(c4_corpus_golden));
  report(5, "mIoU oracle", guarded(c5_miou));

  std::unique_ptr<Benchmark> bm;
  double prepare_seconds = 0;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    bm = std::make_unique<Benchmark>();
    prepare_seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    Outcome o;
    o.fail(std::string("benchmark setup: ") + e.what());
    report(6, "end-to-end directional", o);
    report(7, "omega interior optimum", o);
  }
  if (bm) {
    report(6, "end-to-end directional", guarded([&] { return c6_end_to_end(*bm, prepare_seconds); }));
    report(7, "omega interior optimum", guarded([&] { return c7_omega(*bm); }));
    fs::remove_all(bm->dir);
  }
  report(8, "determinism", guarded(c8_determinism));

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
