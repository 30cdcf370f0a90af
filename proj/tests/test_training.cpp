#include "doctest.h"
#include "support.hpp"

#include "qaclims/pipeline.hpp"
#include "qaclims/rng.hpp"
#include "qaclims/training.hpp"

#include "json.hpp"

#include <cmath>

using namespace qaclims;
using namespace qaclims::train;

namespace {

// Small synthetic set with its mock corpus and encoders.
struct Setup {
  testing::TempDir dir;
  World world;
  data::DatasetManifest manifest;
  std::vector<data::Sample> samples;
  corpus::CorpusStore store;
  MockEncoderPair enc;

  Setup(const std::string& name, int images, int classes, std::uint64_t seed)
      : dir(name),
        world(classes),
        manifest(data::generate_synthetic(images, classes, seed, dir / "d")),
        samples(data::load_samples(manifest)),
        enc(world) {
    const corpus::TemplateSet ts{corpus::kDefaultTemplateVersion, corpus::default_templates()};
    auto vqa = pipeline::make_mock_vqa(world, samples, ts);
    store = pipeline::build_corpus(vqa, samples, manifest.class_names, ts);
  }

  int classes() const { return static_cast<int>(manifest.class_names.size()) - 1; }
};

// A pretrained starting point shared by the RITC tests.
struct Pretrained {
  ConvBackbone backbone{{}, 11};
  Eigen::MatrixXd W;
  Pretrained(const Setup& s, int epochs) {
    W = init_classifier(backbone.output_channels(), s.classes(), 11);
    TrainConfig c;
    c.learning_rate = 0.1;
    c.epochs = epochs;
    c.batch_size = 4;
    pretrain_classifier(backbone, W, s.samples, c);
  }
};

double mean_activation(const Backbone& b, const Eigen::MatrixXd& W, const std::vector<data::Sample>& samples) {
  double s = 0;
  long n = 0;
  for (const auto& x : samples)
    for (const auto& [k, p] : infer_cam(b, W, x.image, x.labels)) {
      s += p.sum();
      n += p.size();
    }
  return s / n;
}

TrainConfig ritc_config() {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.momentum = 0;
  c.grad_clip = 5;
  c.batch_size = 2;
  c.epochs = 2;
  return c;
}

}  // namespace

TEST_SUITE("schedule and config") {
  TEST_CASE("poly schedule") {
    CHECK(poly_lr(3.5e-4, 0, 100, 0.9) == 3.5e-4);
    CHECK(poly_lr(3.5e-4, 100, 100, 0.9) == 0.0);
    CHECK(poly_lr(3.5e-4, 50, 100, 0.9) == doctest::Approx(3.5e-4 * std::pow(0.5, 0.9)).epsilon(1e-14));
    CHECK(poly_lr(3.5e-4, 50, 100, 0.9) == doctest::Approx(1.875e-4).epsilon(1e-3));
    double prev = 1;
    for (long s = 0; s <= 40; ++s) {
      const double lr = poly_lr(1.0, s, 40, 0.9);
      CHECK(lr <= prev);
      prev = lr;
    }
    CHECK_THROWS_AS(poly_lr(1, 5, 0, 0.9), ConfigError);
    CHECK_THROWS_AS(poly_lr(1, 6, 5, 0.9), ConfigError);
  }

  TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.learning_rate == 3.5e-4);
    CHECK(c.epochs == 15);
    CHECK(c.batch_size == 8);
    CHECK(c.poly_power == 0.9);
    CHECK(c.momentum == 0.9);
    CHECK(c.omega == 0.1);
    CHECK(c.weights.alpha == 10);
    CHECK(c.weights.beta == 8);
    CHECK(c.weights.gamma == 0.2);
    CHECK(c.weights.tau == 0.7);
    CHECK(c.weights.brc_tau_on_bf);
  }

  TEST_CASE("config text round-trip") {
    TrainConfig c;
    c.learning_rate = 0.0125;
    c.epochs = 7;
    c.batch_size = 3;
    c.poly_power = 1.5;
    c.momentum = 0.5;
    c.weights.alpha = 30;
    c.weights.beta = 24;
    c.weights.gamma = 0.25;
    c.weights.tau = 0.07;
    c.omega = 0.3;
    c.weights.brc_tau_on_bf = false;
    c.seed = 123456789012345ull;
    const auto back = parse_config(format_config(c));
    CHECK(format_config(back) == format_config(c));
    CHECK(config_fingerprint(back) == config_fingerprint(c));
    CHECK(back.weights.tau == 0.07);
    CHECK(back.seed == c.seed);
  }

  TEST_CASE("config file keys, comments and missing keys") {
    const auto c = parse_config("# desk run\nlr = 0.5\n\nomega=0.3   # ratio\nbrc_tau_on_bf = false\n");
    CHECK(c.learning_rate == 0.5);
    CHECK(c.omega == 0.3);
    CHECK_FALSE(c.weights.brc_tau_on_bf);
    CHECK(c.epochs == 15);
  }

  TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("learning_rate = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr = 1\nlr = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr = fast\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs = 2.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("omega = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("brc_tau_on_bf = maybe\n"), ConfigError);
  }

  TEST_CASE("fingerprint sees every parameter") {
    const TrainConfig base;
    std::set<std::string> seen{config_fingerprint(base)};
    auto vary = [&](auto f) {
      TrainConfig c;
      f(c);
      seen.insert(config_fingerprint(c));
    };
    vary([](TrainConfig& c) { c.learning_rate *= 2; });
    vary([](TrainConfig& c) { c.epochs += 1; });
    vary([](TrainConfig& c) { c.batch_size += 1; });
    vary([](TrainConfig& c) { c.poly_power = 1; });
    vary([](TrainConfig& c) { c.momentum = 0; });
    vary([](TrainConfig& c) { c.weights.alpha = 1; });
    vary([](TrainConfig& c) { c.weights.beta = 1; });
    vary([](TrainConfig& c) { c.weights.gamma = 1; });
    vary([](TrainConfig& c) { c.weights.tau = 1; });
    vary([](TrainConfig& c) { c.weights.brc_tau_on_bf = false; });
    vary([](TrainConfig& c) { c.omega = 0.5; });
    vary([](TrainConfig& c) { c.seed = 9; });
    vary([](TrainConfig& c) { c.fat = false; });
    vary([](TrainConfig& c) { c.grad_clip = 1; });
    CHECK(seen.size() == 15);
    CHECK(config_fingerprint(base, "a") != config_fingerprint(base, "b"));
  }
}

TEST_SUITE("backbone") {
  TEST_CASE("output grid follows the strides") {
    const ConvBackbone b({}, 1);
    CHECK(b.output_stride() == 8);
    RasterImage img(64, 48);
    const auto z = b.forward(img);
    CHECK(z.channels() == 64);
    CHECK(z.height == 8);
    CHECK(z.width == 6);
    CHECK(ConvBackbone::output_size(65, 8) == 9);
  }

  TEST_CASE("backward matches finite differences") {
    ConvBackboneSpec spec;
    spec.widths = {4, 6};
    spec.strides = {1, 2};
    spec.activation = Activation::silu;
    ConvBackbone b(spec, 3);
    Rng rng(9);
    RasterImage img(9, 7);
    for (auto& c : img.rgb)
      for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
    std::any cache;
    const auto z = b.forward(img, &cache);
    Eigen::MatrixXd gz(z.data.rows(), z.data.cols());
    for (Eigen::Index i = 0; i < gz.size(); ++i) gz.data()[i] = rng.normal();
    const Eigen::VectorXd g = b.backward(cache, gz);
    for (int t = 0; t < 25; ++t) {
      const auto i = static_cast<Eigen::Index>(rng.uniform() * b.parameter_count());
      const double keep = b.parameters()(i), h = 1e-6;
      b.parameters()(i) = keep + h;
      const double fp = (b.forward(img).data.array() * gz.array()).sum();
      b.parameters()(i) = keep - h;
      const double fm = (b.forward(img).data.array() * gz.array()).sum();
      b.parameters()(i) = keep;
      CHECK(g(i) == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5));
    }
  }

  TEST_CASE("bad specs") {
    ConvBackboneSpec s;
    s.strides = {1};
    CHECK_THROWS_AS(ConvBackbone(s, 0), ConfigError);
  }
}

TEST_SUITE("pretraining") {
  TEST_CASE("zero epochs leaves the model untouched") {
    Setup s("pre-zero", 4, 2, 3);
    ConvBackbone b({}, 1);
    Eigen::MatrixXd W = init_classifier(b.output_channels(), 2, 1);
    const Eigen::VectorXd p0 = b.parameters();
    const Eigen::MatrixXd W0 = W;
    TrainConfig c;
    c.epochs = 0;
    const auto r = pretrain_classifier(b, W, s.samples, c);
    CHECK(r.step_losses.empty());
    CHECK(b.parameters() == p0);
    CHECK(W == W0);
  }

  TEST_CASE("single image: loss falls over the first five steps at a small rate") {
    Setup s("pre-single", 1, 2, 4);
    ConvBackbone b({}, 2);
    Eigen::MatrixXd W = init_classifier(b.output_channels(), 2, 2);
    TrainConfig c;
    c.learning_rate = 0.01;
    c.momentum = 0;
    c.epochs = 5;
    c.batch_size = 1;
    const auto r = pretrain_classifier(b, W, s.samples, c);
    REQUIRE(r.step_losses.size() == 5);
    for (std::size_t i = 1; i < 5; ++i) CHECK(r.step_losses[i] < r.step_losses[i - 1]);
  }

  TEST_CASE("two-class synthetic set is learned") {
    Setup s("pre-2class", 16, 2, 5);
    ConvBackbone b({}, 11);
    Eigen::MatrixXd W = init_classifier(b.output_channels(), 2, 11);
    TrainConfig c;
    c.learning_rate = 0.1;
    c.epochs = 40;
    c.batch_size = 4;
    c.seed = 3;
    const auto r = pretrain_classifier(b, W, s.samples, c);
    CHECK(r.train_accuracy >= 0.95);
    CHECK(r.step_losses.back() < r.step_losses.front());
  }
}

TEST_SUITE("ritc") {
  TEST_CASE("objective: doubling gamma doubles the REG contribution") {
    Setup s("ritc-gamma", 2, 3, 6);
    const ConvBackbone b({}, 1);
    const Eigen::MatrixXd W = init_classifier(b.output_channels(), 3, 1) * 20;
    const auto& x = s.samples[0];
    const Eigen::MatrixXd basis = *s.enc.pooling_basis(x.image);
    std::map<ClassId, ClassTextEmbeddings> texts;
    for (ClassId k : x.labels) texts.emplace(k, embed_corpus(s.enc, s.store.at(x.id, k)));
    TrainConfig c;
    const auto a = ritc_image_objective(b, W, x.image, x.labels, basis, texts, c);
    c.weights.gamma *= 2;
    const auto d = ritc_image_objective(b, W, x.image, x.labels, basis, texts, c);
    CHECK(d.losses.reg == a.losses.reg);
    CHECK(d.losses.total - a.losses.total == doctest::Approx(0.2 * a.losses.reg).epsilon(1e-12));
  }

  TEST_CASE("one epoch on four images lowers the loss") {
    Setup s("ritc-epoch", 4, 3, 8);
    Pretrained m(s, 10);
    TrainConfig c = ritc_config();
    c.epochs = 1;
    c.batch_size = 1;
    const auto first = [&] {
      ConvBackbone b = m.backbone;
      Eigen::MatrixXd W = m.W;
      TrainConfig one = c;
      return train_ritc(b, W, s.store, s.samples, one, s.enc).log;
    }();
    // score every image before and after with the same objective
    auto total = [&](const ConvBackbone& b, const Eigen::MatrixXd& W) {
      double t = 0;
      for (const auto& x : s.samples) {
        std::map<ClassId, ClassTextEmbeddings> texts;
        for (ClassId k : x.labels) texts.emplace(k, embed_corpus(s.enc, s.store.at(x.id, k)));
        t += ritc_image_objective(b, W, x.image, x.labels, *s.enc.pooling_basis(x.image), texts, c, false)
                 .losses.total;
      }
      return t;
    };
    const double before = total(m.backbone, m.W);
    ConvBackbone b = m.backbone;
    Eigen::MatrixXd W = m.W;
    const auto r = train_ritc(b, W, s.store, s.samples, c, s.enc);
    CHECK(r.log.size() == 4);
    CHECK(total(b, W) < before);
    CHECK(first.size() == r.log.size());
  }

  TEST_CASE("area term alone drives activations down") {
    Setup s("ritc-reg", 4, 3, 9);
    Pretrained m(s, 5);
    TrainConfig c = ritc_config();
    c.weights.alpha = 0;
    c.weights.beta = 0;
    c.weights.gamma = 1;
    c.learning_rate = 0.5;
    c.grad_clip = 0;
    ConvBackbone b = m.backbone;
    Eigen::MatrixXd W = m.W;
    const double before = mean_activation(b, W, s.samples);
    const auto r = train_ritc(b, W, s.store, s.samples, c, s.enc);
    CHECK(mean_activation(b, W, s.samples) < before);
    for (const auto& rec : r.log) {
      CHECK(rec.losses.total == doctest::Approx(rec.losses.reg).epsilon(1e-12));
    }
  }

  TEST_CASE("two runs are identical, and a resumed run matches an uninterrupted one") {
    Setup s("ritc-resume", 6, 3, 10);
    Pretrained m(s, 4);
    const TrainConfig c = [] {
      TrainConfig c = ritc_config();
      c.momentum = 0.5;  // exercise the velocity in the checkpoint
      c.epochs = 3;
      return c;
    }();

    ConvBackbone b1 = m.backbone;
    Eigen::MatrixXd W1 = m.W;
    RitcOptions o1;
    o1.metrics_path = s.dir / "full.jsonl";
    const auto full = train_ritc(b1, W1, s.store, s.samples, c, s.enc, o1);

    ConvBackbone b2 = m.backbone;
    Eigen::MatrixXd W2 = m.W;
    RitcOptions o2;
    o2.metrics_path = s.dir / "again.jsonl";
    train_ritc(b2, W2, s.store, s.samples, c, s.enc, o2);
    CHECK(b2.parameters() == b1.parameters());
    CHECK(W2 == W1);
    CHECK(testing::slurp(s.dir / "again.jsonl") == testing::slurp(s.dir / "full.jsonl"));

    ConvBackbone b3 = m.backbone;
    Eigen::MatrixXd W3 = m.W;
    RitcOptions part;
    part.metrics_path = s.dir / "split.jsonl";
    part.checkpoint_path = s.dir / "ck.json";
    part.stop_after_epoch = 1;
    const auto half = train_ritc(b3, W3, s.store, s.samples, c, s.enc, part);
    CHECK(half.checkpoint.epoch == 1);

    const Checkpoint ck = load_checkpoint(s.dir / "ck.json");
    ConvBackbone b4({}, 999);  // different init; the checkpoint overrides it
    Eigen::MatrixXd W4 = Eigen::MatrixXd::Zero(m.W.rows(), m.W.cols());
    RitcOptions rest;
    rest.metrics_path = s.dir / "split.jsonl";
    rest.resume = &ck;
    const auto done = train_ritc(b4, W4, s.store, s.samples, c, s.enc, rest);
    CHECK(done.checkpoint.epoch == 3);
    CHECK(b4.parameters() == b1.parameters());
    CHECK(W4 == W1);
    CHECK(testing::slurp(s.dir / "split.jsonl") == testing::slurp(s.dir / "full.jsonl"));
    CHECK(full.log.size() == half.log.size() + done.log.size());
  }

  TEST_CASE("resume refuses a different config") {
    Setup s("ritc-resume-cfg", 2, 3, 12);
    Pretrained m(s, 2);
    TrainConfig c = ritc_config();
    ConvBackbone b = m.backbone;
    Eigen::MatrixXd W = m.W;
    RitcOptions o;
    o.stop_after_epoch = 1;
    const auto r = train_ritc(b, W, s.store, s.samples, c, s.enc, o);
    c.omega = 0.4;
    RitcOptions rest;
    rest.resume = &r.checkpoint;
    CHECK_THROWS_AS(train_ritc(b, W, s.store, s.samples, c, s.enc, rest), ConfigError);
  }

  TEST_CASE("metrics records carry the step fields") {
    StepRecord r;
    r.epoch = 2;
    r.step = 17;
    r.losses = total_loss(0.5, 0.25, 0.125, LossWeights{});
    r.lr = 0.001;
    const auto j = nlohmann::json::parse(to_jsonl(r));
    for (const char* k : {"epoch", "step", "frc", "brc", "reg", "total", "lr"}) CHECK(j.contains(k));
    CHECK(j["step"] == 17);
    CHECK(j["total"].get<double>() == doctest::Approx(10 * 0.5 + 8 * 0.25 + 0.2 * 0.125));
  }

  TEST_CASE("missing corpus records are reported") {
    Setup s("ritc-missing", 2, 3, 13);
    Pretrained m(s, 1);
    corpus::CorpusStore empty;
    ConvBackbone b = m.backbone;
    Eigen::MatrixXd W = m.W;
    CHECK_THROWS_AS(train_ritc(b, W, empty, s.samples, ritc_config(), s.enc), Error);
  }
}

TEST_SUITE("checkpoints") {
  TEST_CASE("round-trip") {
    testing::TempDir dir("ckpt");
    Checkpoint c;
    c.backbone_spec.activation = Activation::silu;
    c.params = Eigen::VectorXd::LinSpaced(10, -1, 1);
    c.W = Eigen::MatrixXd::Random(3, 2);
    c.velocity_params = Eigen::VectorXd::Constant(10, 1.0 / 3.0);
    c.velocity_W = Eigen::MatrixXd::Random(3, 2);
    c.config.omega = 0.3;
    c.config.grad_clip = 2.5;
    c.config.fat = false;
    c.class_names = {"background", "cat"};
    c.epoch = 4;
    c.step = 40;
    c.rng_state = "123 456";
    c.stage = "ritc";
    save_checkpoint(c, dir / "c.json");
    const auto b = load_checkpoint(dir / "c.json");
    CHECK(b.params == c.params);
    CHECK(b.W == c.W);
    CHECK(b.velocity_params == c.velocity_params);
    CHECK(b.velocity_W == c.velocity_W);
    CHECK(config_fingerprint(b.config) == config_fingerprint(c.config));
    CHECK(b.class_names == c.class_names);
    CHECK(b.epoch == 4);
    CHECK(b.step == 40);
    CHECK(b.rng_state == c.rng_state);
    CHECK(b.stage == "ritc");
    CHECK(b.backbone_spec.activation == Activation::silu);
    CHECK_FALSE(std::filesystem::exists(dir / "c.json.tmp"));
  }

  TEST_CASE("bad files") {
    testing::TempDir dir("ckpt-bad");
    CHECK_THROWS_AS(load_checkpoint(dir / "none.json"), IoError);
    testing::spit(dir / "x.json", "{\"format\":\"something-else\"}");
    CHECK_THROWS_AS(load_checkpoint(dir / "x.json"), FormatError);
    testing::spit(dir / "v.json", "{\"format\":\"qaclims-checkpoint\",\"version\":99}");
    CHECK_THROWS_AS(load_checkpoint(dir / "v.json"), VersionError);
  }
}
