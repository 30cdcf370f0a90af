#include "doctest.h"
#include "support.hpp"

#include "qaclims/pipeline.hpp"
#include "qaclims/remote.hpp"
#include "qaclims/training.hpp"

#include "httplib.h"
#include "json.hpp"

#include <cstdlib>
#include <thread>

using namespace qaclims;
using nlohmann::json;

namespace {

// Local stand-in for the model services, on an ephemeral port.
struct FakeServer {
  httplib::Server srv;
  std::thread worker;
  int port = 0;
  int dim = 4;
  std::string last_question;

  FakeServer() {
    srv.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
      const auto j = json::parse(req.body);
      last_question = j.at("question");
      const auto& img = j.at("image");
      const std::string ans = img.at("height").get<int>() == 3 ? "kitchen" : "";
      res.set_content(json{{"answer", ans}}.dump(), "application/json");
    });
    srv.Get("/info", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"dim", dim}}.dump(), "application/json");
    });
    srv.Post("/encode_text", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string t = json::parse(req.body).at("text");
      std::vector<double> e(dim, 0.0);
      e[t.size() % dim] = 1.0;
      if (t == "short") e.pop_back();
      if (t == "garbage") return res.set_content("not json", "text/plain");
      if (t == "fail") {
        res.status = 500;
        return;
      }
      res.set_content(json{{"embedding", e}}.dump(), "application/json");
    });
    srv.Post("/encode_image", [this](const httplib::Request& req, httplib::Response& res) {
      const auto j = json::parse(req.body).at("image");
      const auto& rgb = j.at("rgb");
      std::vector<double> e(dim, 0.0);
      e[0] = rgb.at(0).get<double>();
      e[1] = static_cast<double>(rgb.size());
      res.set_content(json{{"embedding", e}}.dump(), "application/json");
    });
    port = srv.bind_to_any_port("127.0.0.1");
    worker = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~FakeServer() {
    srv.stop();
    worker.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_SUITE("remote adapters") {
  TEST_CASE("image payload layout") {
    RasterImage x(2, 3);
    x.rgb[0](1, 2) = 0.25;
    x.rgb[2](0, 1) = 0.5;
    const auto j = json::parse(remote::image_payload(x));
    CHECK(j["height"] == 2);
    CHECK(j["width"] == 3);
    REQUIRE(j["rgb"].size() == 18);
    CHECK(j["rgb"][5].get<double>() == 0.25);       // red (1, 2)
    CHECK(j["rgb"][12 + 1].get<double>() == 0.5);  // blue (0, 1)
    CHECK(j["rgb"][0].get<double>() == 0.0);
  }

  TEST_CASE("environment lookup") {
    ::setenv("QACLIMS_TEST_EP", "http://x:1", 1);
    CHECK(remote::endpoint_from_env("QACLIMS_TEST_EP") == "http://x:1");
    ::setenv("QACLIMS_TEST_EP", "", 1);
    CHECK_FALSE(remote::endpoint_from_env("QACLIMS_TEST_EP"));
    ::unsetenv("QACLIMS_TEST_EP");
    CHECK_FALSE(remote::endpoint_from_env("QACLIMS_TEST_EP"));
  }

  TEST_CASE("vqa backend round trip") {
    FakeServer s;
    remote::HttpVqaBackend vqa(s.endpoint());
    CHECK(vqa.answer(RasterImage(3, 3), "where is it?") == "kitchen");
    CHECK(s.last_question == "where is it?");
    CHECK(vqa.answer(RasterImage(4, 3), "where is it?").empty());
    CHECK(vqa.id() == "http:" + s.endpoint());
  }

  TEST_CASE("encoder pair round trip and reply checks") {
    FakeServer s;
    remote::HttpEncoderPair enc(s.endpoint());
    CHECK(enc.dim() == 4);
    CHECK(enc.encode_text("abc")(3) == 1.0);
    RasterImage x(2, 5);
    x.rgb[0](0, 0) = 0.75;
    const auto e = enc.encode_image(x);
    CHECK(e(0) == 0.75);
    CHECK(e(1) == 30);
    CHECK_FALSE(enc.pooling_basis(x));
    CHECK_THROWS_AS(enc.encode_text("short"), DimensionError);
    CHECK_THROWS_AS(enc.encode_text("garbage"), FormatError);
    CHECK_THROWS_AS(enc.encode_text("fail"), IoError);
  }

  TEST_CASE("unreachable service") {
    int port;
    {
      FakeServer s;
      port = s.port;
    }
    const std::string ep = "http://127.0.0.1:" + std::to_string(port);
    remote::HttpVqaBackend vqa(ep, 2);
    CHECK_THROWS_AS(vqa.answer(RasterImage(1, 1), "q"), IoError);
    CHECK_THROWS_AS(remote::HttpEncoderPair(ep, 2), IoError);
  }

  TEST_CASE("training refuses encoders without a pooling basis") {
    FakeServer s;
    testing::TempDir dir("remote-train");
    const World world(2);
    const auto m = data::generate_synthetic(2, 2, 3, dir / "d");
    const auto samples = data::load_samples(m);
    const corpus::TemplateSet ts{corpus::kDefaultTemplateVersion, corpus::default_templates()};
    auto vqa = pipeline::make_mock_vqa(world, samples, ts);
    const auto store = pipeline::build_corpus(vqa, samples, m.class_names, ts);
    remote::HttpEncoderPair enc(s.endpoint());
    ConvBackbone b({}, 1);
    Eigen::MatrixXd W = train::init_classifier(b.output_channels(), 2, 1);
    train::TrainConfig c;
    c.epochs = 1;
    CHECK_THROWS_AS(train::train_ritc(b, W, store, samples, c, enc), ConfigError);
  }
}
