#include "doctest.h"
#include "support.hpp"

#include "qaclims/activation.hpp"
#include "qaclims/evaluation.hpp"
#include "qaclims/pipeline.hpp"
#include "qaclims/rng.hpp"

#include "json.hpp"

#include <cmath>

using namespace qaclims;
using namespace qaclims::eval;

namespace {

SegMask random_mask(Rng& rng, int h, int w, int n_classes, bool ignore = false) {
  SegMask m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    int v = std::min(static_cast<int>(rng.uniform() * n_classes), n_classes - 1);
    if (ignore && rng.uniform() < 0.1) v = kIgnoreIndex;
    m.data()[i] = static_cast<std::uint8_t>(v);
  }
  return m;
}

// Per-pixel loop: IoU per class over non-ignored pixels, mean over nonzero unions.
double brute_miou(const std::vector<std::pair<SegMask, SegMask>>& pairs, int n_classes) {
  std::vector<double> inter(n_classes, 0), uni(n_classes, 0);
  for (const auto& [p, g] : pairs)
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < p.cols(); ++j) {
        if (g(i, j) == kIgnoreIndex) continue;
        for (int c = 0; c < n_classes; ++c) {
          const bool a = p(i, j) == c, b = g(i, j) == c;
          inter[c] += a && b;
          uni[c] += a || b;
        }
      }
  double s = 0;
  int n = 0;
  for (int c = 0; c < n_classes; ++c)
    if (uni[c] > 0) {
      s += inter[c] / uni[c];
      ++n;
    }
  return s / n;
}

struct Bench {
  testing::TempDir dir;
  World world{3};
  std::vector<data::Sample> train, test;
  std::vector<std::string> names;
  corpus::CorpusStore store;
  MockEncoderPair enc{world};
  ConvBackbone backbone{{}, 11};
  Eigen::MatrixXd W;

  explicit Bench(const std::string& name) : dir(name) {
    const auto mt = data::generate_synthetic(4, 3, 21, dir / "train");
    const auto me = data::generate_synthetic(3, 3, 22, dir / "eval");
    train = data::load_samples(mt);
    test = data::load_samples(me);
    names = mt.class_names;
    const corpus::TemplateSet ts{corpus::kDefaultTemplateVersion, corpus::default_templates()};
    auto vqa = pipeline::make_mock_vqa(world, train, ts);
    store = pipeline::build_corpus(vqa, train, names, ts);
    W = train::init_classifier(backbone.output_channels(), 3, 11);
    train::TrainConfig c;
    c.learning_rate = 0.1;
    c.epochs = 2;
    c.batch_size = 4;
    train::pretrain_classifier(backbone, W, train, c);
  }

  Experiment experiment(std::map<std::string, EvalReport>* memo = nullptr) {
    Experiment ex;
    ex.train = &train;
    ex.eval = &test;
    ex.corpus = &store;
    ex.encoders = &enc;
    ex.init_backbone = &backbone;
    ex.init_W = &W;
    ex.base.learning_rate = 0.01;
    ex.base.momentum = 0;
    ex.base.epochs = 1;
    ex.base.batch_size = 2;
    ex.base.grad_clip = 5;
    ex.class_names = names;
    ex.memo = memo;
    return ex;
  }
};

}  // namespace

TEST_SUITE("cam_to_mask") {
  TEST_CASE("all below the threshold is background") {
    ActivationMap m{{1, Plane::Constant(3, 4, 0.1)}, {2, Plane::Constant(3, 4, 0.14)}};
    CHECK((cam_to_mask(m, 0.15).array() == 0).all());
  }

  TEST_CASE("a saturated single class covers everything") {
    ActivationMap m{{4, Plane::Ones(5, 2)}};
    CHECK((cam_to_mask(m, 0.15).array() == 4).all());
  }

  TEST_CASE("argmax among classes; background wins ties") {
    Plane a(1, 3), b(1, 3);
    a << 0.9, 0.4, 0.3;
    b << 0.6, 0.7, 0.3;
    const auto m = cam_to_mask(ActivationMap{{1, a}, {2, b}}, 0.3);
    CHECK(m(0, 0) == 1);
    CHECK(m(0, 1) == 2);
    CHECK(m(0, 2) == 0);
    // equal class scores go to the lower id
    CHECK(cam_to_mask(ActivationMap{{1, Plane::Constant(1, 1, 0.5)}, {3, Plane::Constant(1, 1, 0.5)}}, 0.1)(0, 0) == 1);
  }

  TEST_CASE("threshold 1 gives all background for any P <= 1") {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
      Plane p(4, 4);
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
      p(0, 0) = 1.0;
      CHECK((cam_to_mask(ActivationMap{{1, p}, {2, Plane::Ones(4, 4)}}, 1.0).array() == 0).all());
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(cam_to_mask(ActivationMap{{1, Plane::Zero(2, 2)}}, 1.5), ConfigError);
    CHECK_THROWS_AS(cam_to_mask(ActivationMap{}, 0.5), DimensionError);
    CHECK_THROWS_AS(cam_to_mask(ActivationMap{{1, Plane::Zero(2, 2)}, {2, Plane::Zero(2, 3)}}, 0.5), DimensionError);
  }
}

TEST_SUITE("miou") {
  TEST_CASE("identity scores exactly 1") {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
      const auto m = random_mask(rng, 7, 9, 5);
      CHECK(miou(m, m).miou == 1.0);
    }
  }

  TEST_CASE("half of a four-pixel object") {
    SegMask gt = SegMask::Zero(4, 4), pred = SegMask::Zero(4, 4);
    gt(0, 0) = gt(0, 1) = gt(1, 0) = gt(1, 1) = 1;
    pred(0, 0) = pred(0, 1) = 1;
    const auto r = miou(pred, gt);
    REQUIRE(r.classes.size() == 2);
    CHECK(r.classes[1].iou == 0.5);
    CHECK(r.classes[1].intersection == 2);
    CHECK(r.classes[1].union_ == 4);
    CHECK(r.classes[0].iou == 12.0 / 14.0);
    CHECK(r.miou == doctest::Approx((0.5 + 12.0 / 14.0) / 2).epsilon(1e-15));
    CHECK(r.pixels == 16);
  }

  TEST_CASE("dataset accumulation matches a per-pixel loop on 100 random pairs") {
    Rng rng(3);
    std::vector<std::pair<SegMask, SegMask>> pairs;
    Confusion c(6);
    for (int t = 0; t < 100; ++t) {
      const int h = 2 + t % 7, w = 3 + t % 5;
      pairs.emplace_back(random_mask(rng, h, w, 6), random_mask(rng, h, w, 6, true));
      c.add(pairs.back().first, pairs.back().second);
    }
    CHECK(std::abs(make_report(c).miou - brute_miou(pairs, 6)) <= 1e-12);
  }

  TEST_CASE("classes absent from both masks are left out of the mean") {
    SegMask a = SegMask::Zero(2, 2);
    a(0, 0) = 3;
    const auto r = miou(a, a, 6);
    CHECK(r.miou == 1.0);
    CHECK(std::isnan(r.classes[1].iou));
    CHECK(std::isnan(r.classes[5].iou));
  }

  TEST_CASE("ignored pixels count nowhere") {
    SegMask gt(1, 3), pred(1, 3);
    gt << 1, 255, 0;
    pred << 1, 0, 0;
    const auto r = miou(pred, gt, 2);
    CHECK(r.miou == 1.0);
    CHECK(r.pixels == 2);
  }

  TEST_CASE("symmetric under relabelling both masks") {
    Rng rng(4);
    const std::array<std::uint8_t, 4> perm{2, 0, 3, 1};
    for (int t = 0; t < 20; ++t) {
      const auto p = random_mask(rng, 6, 6, 4), g = random_mask(rng, 6, 6, 4);
      SegMask pp = p, gg = g;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        pp.data()[i] = perm[p.data()[i]];
        gg.data()[i] = perm[g.data()[i]];
      }
      CHECK(miou(pp, gg, 4).miou == doctest::Approx(miou(p, g, 4).miou).epsilon(1e-15));
    }
  }

  TEST_CASE("score 1 exactly when the masks agree") {
    Rng rng(5);
    const auto g = random_mask(rng, 5, 5, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      SegMask p = g;
      p.data()[i] = static_cast<std::uint8_t>((p.data()[i] + 1) % 3);
      CHECK(miou(p, g, 3).miou < 1.0);
    }
  }

  TEST_CASE("merging confusion counts equals adding everything to one") {
    Rng rng(6);
    Confusion a(4), b(4), all(4);
    for (int t = 0; t < 10; ++t) {
      const auto p = random_mask(rng, 3, 3, 4), g = random_mask(rng, 3, 3, 4);
      (t % 2 ? a : b).add(p, g);
      all.add(p, g);
    }
    a.merge(b);
    CHECK(a == all);
  }

  TEST_CASE("shape and label errors") {
    CHECK_THROWS_AS(miou(SegMask::Zero(2, 2), SegMask::Zero(2, 3)), DimensionError);
    Confusion c(2);
    SegMask bad = SegMask::Zero(1, 1);
    bad(0, 0) = 5;
    CHECK_THROWS_AS(c.add(bad, SegMask::Zero(1, 1)), DimensionError);
    CHECK_THROWS_AS(Confusion(0), ConfigError);
  }

  TEST_CASE("report json carries per-class counts") {
    SegMask m = SegMask::Zero(2, 2);
    m(1, 1) = 1;
    auto r = make_report([&] {
      Confusion c(2);
      c.add(m, m);
      return c;
    }(), {"background", "cat"});
    const auto j = nlohmann::json::parse(report_json(r));
    CHECK(j["miou"].get<double>() == 1.0);
    CHECK(j["classes"].size() == 2);
    CHECK(format_report(r).find("cat") != std::string::npos);
  }
}

TEST_SUITE("cam evaluation") {
  TEST_CASE("default sweep") {
    const auto s = default_sweep();
    CHECK(s.size() == 19);
    CHECK(s.front() == doctest::Approx(0.05));
    CHECK(s.back() == doctest::Approx(0.95));
  }

  TEST_CASE("matches composing the steps by hand, at any thread count") {
    testing::TempDir dir("eval-compose");
    const auto m = data::generate_synthetic(5, 3, 31, dir / "d");
    const auto samples = data::load_samples(m);
    const ConvBackbone b({}, 4);
    const Eigen::MatrixXd W = train::init_classifier(b.output_channels(), 3, 4) * 10;

    Confusion c(4);
    for (const auto& s : samples) {
      ActivationMap up;
      for (const auto& [k, p] : train::infer_cam(b, W, s.image, s.labels)) {
        Plane u = upsample_map(p, s.image.height(), s.image.width());
        up.emplace(k, u / (u.maxCoeff() + 1e-5));
      }
      c.add(cam_to_mask(up, 0.3), *s.gt);
    }
    CamEvalOptions o;
    o.bg_threshold = 0.3;
    o.max_threads = 1;
    const auto one = evaluate_cams(b, W, samples, m.class_names, o);
    CHECK(one.report.miou == make_report(c).miou);
    CHECK_FALSE(one.best);
    o.max_threads = 3;
    o.sweep = {0.2, 0.3, 0.6};
    const auto three = evaluate_cams(b, W, samples, m.class_names, o);
    CHECK(three.report.miou == one.report.miou);
    REQUIRE(three.best);
    CHECK(three.best->miou >= three.report.miou);
    CHECK(three.best->bg_threshold == *three.best_threshold);
  }

  TEST_CASE("class table must match the classifier") {
    testing::TempDir dir("eval-table");
    const auto m = data::generate_synthetic(1, 3, 32, dir / "d");
    const auto samples = data::load_samples(m);
    const ConvBackbone b({}, 4);
    CHECK_THROWS_AS(evaluate_cams(b, train::init_classifier(64, 2, 1), samples, m.class_names), DimensionError);
    CHECK_THROWS_AS(evaluate_cams(b, train::init_classifier(64, 3, 1), {}, m.class_names), ConfigError);
  }
}

TEST_SUITE("ablation and sweep") {
  TEST_CASE("matrices have the expected cells") {
    CHECK(loss_matrix().size() == 4);
    CHECK(fat_matrix().size() == 2);
    CHECK(corpus_matrix().size() >= 5);
    CHECK(loss_matrix().back().losses == LossSubset{});
  }

  TEST_CASE("an empty loss subset is rejected before any training") {
    Experiment ex;  // no inputs at all: would fail later if training started
    AblationCell none{"none", {false, false, false}};
    CHECK_THROWS_AS(run_ablation({loss_matrix()[0], none}, ex), ConfigError);
  }

  TEST_CASE("one cell gives one row; memo reuses it; single omega gives one point") {
    Bench b("ablate-small");
    std::map<std::string, EvalReport> memo;
    const auto ex = b.experiment(&memo);
    AblationCell full{"full"};
    const auto rows = run_ablation({full}, ex);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].cell.name == "full");
    CHECK(memo.size() == 1);
    const auto again = run_cell(full, ex);
    CHECK(again.miou == rows[0].report.miou);
    CHECK(again.fingerprint == rows[0].report.fingerprint);
    CHECK(memo.size() == 1);

    const auto pts = sweep_omega(ex, {0.3});
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].omega == 0.3);
    CHECK(memo.size() == 2);
    CHECK(format_sweep(pts).find("0.3") != std::string::npos);
    CHECK_THROWS_AS(sweep_omega(ex, {}), ConfigError);
    CHECK_THROWS_AS(sweep_omega(ex, {1.2}), ConfigError);
  }

  TEST_CASE("the memo does not change results") {
    Bench b("ablate-memo");
    std::map<std::string, EvalReport> memo;
    const auto with = b.experiment(&memo), without = b.experiment();
    const auto cells = std::vector<AblationCell>{{"frc", {true, false, false}}, {"frc", {true, false, false}}};
    const auto r1 = run_ablation(cells, with);
    const auto r2 = run_ablation(cells, without);
    CHECK(memo.size() == 1);
    CHECK(r1[0].report.miou == r2[0].report.miou);
    CHECK(r1[1].report.miou == r2[1].report.miou);
    CHECK(nlohmann::json::parse(ablation_json(r1)).size() == 2);
  }
}
