#include "doctest.h"
#include "support.hpp"

#include "qaclims/image_io.hpp"
#include "qaclims/rng.hpp"
#include "qaclims/visualize.hpp"

#include <filesystem>

using namespace qaclims;

namespace {

RasterImage random_image(Rng& rng, int h, int w) {
  RasterImage x(h, w);
  for (auto& c : x.rgb)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
  return x;
}

}  // namespace

TEST_SUITE("colormap") {
  TEST_CASE("ends and clamping") {
    CHECK(viz::jet(0.0) == Eigen::Vector3d(0, 0, 0.5));
    CHECK(viz::jet(1.0) == Eigen::Vector3d(0.5, 0, 0));
    CHECK(viz::jet(0.5) == Eigen::Vector3d(0.5, 1, 0.5));
    CHECK(viz::jet(-3.0) == viz::jet(0.0));
    CHECK(viz::jet(7.0) == viz::jet(1.0));
  }

  TEST_CASE("blue falls and red rises along the map") {
    for (double v = 0.5; v <= 1.0; v += 0.01) CHECK(viz::jet(v)(2) <= viz::jet(v - 0.01)(2) + 1e-15);
    for (double v = 0.01; v <= 0.5; v += 0.01) CHECK(viz::jet(v)(0) >= viz::jet(v - 0.01)(0) - 1e-15);
  }
}

TEST_SUITE("overlay") {
  TEST_CASE("zero activation gives a cold tint") {
    Rng rng(1);
    const auto img = random_image(rng, 5, 6);
    const auto o = viz::heat_overlay(img, Plane::Zero(5, 6), 0.4);
    const Eigen::Vector3d cold = viz::jet(0);
    for (int c = 0; c < 3; ++c)
      CHECK((o.rgb[c].array() - (0.6 * img.rgb[c].array() + 0.4 * cold(c))).abs().maxCoeff() < 1e-15);
  }

  TEST_CASE("full activation gives the hottest colour") {
    Rng rng(2);
    const auto img = random_image(rng, 4, 4);
    const auto o = viz::heat_overlay(img, Plane::Ones(4, 4), 1.0);
    const Eigen::Vector3d hot = viz::jet(1);
    for (int c = 0; c < 3; ++c) CHECK((o.rgb[c].array() == hot(c)).all());
  }

  TEST_CASE("alpha 0 returns the image") {
    Rng rng(3);
    const auto img = random_image(rng, 3, 7);
    CHECK(viz::heat_overlay(img, Plane::Constant(3, 7, 0.3), 0.0) == img);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(viz::heat_overlay(RasterImage(4, 4), Plane::Zero(4, 5)), DimensionError);
    CHECK_THROWS_AS(viz::heat_overlay(RasterImage(4, 4), Plane::Zero(4, 4), 1.5), ConfigError);
    CHECK_THROWS_AS(viz::text_strip({"x"}, 0, 0), ConfigError);
  }

  TEST_CASE("text strip geometry") {
    const auto t = viz::text_strip({"ab", "c"});
    const auto wide = viz::text_strip({"ab", "c"}, 300);
    CHECK(wide.width() == 300);
    CHECK(wide.height() == t.height());
    const auto big = viz::text_strip({"ab", "c"}, 0, 2);
    CHECK(big.height() > t.height());
    CHECK(t.rgb[0].maxCoeff() == 1.0);
    CHECK(viz::text_strip({}).rgb[0].maxCoeff() == 0.0);
  }

  TEST_CASE("export writes one file per class plus a legend") {
    testing::TempDir dir("overlay-export");
    Rng rng(4);
    const auto img = random_image(rng, 9, 13);
    Plane p(9, 13);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
    const ActivationMap maps{{2, p}, {5, Plane::Ones(9, 13)}};
    std::map<ClassId, viz::OverlayLegend> legends;
    legends[2] = {"cat", {"a photo of cat"}, {"a photo of sofa"}};
    const auto files = viz::export_overlay(img, maps, dir / "x", legends);
    REQUIRE(files.size() == 3);
    CHECK(files[0] == dir / "x_2.png");
    CHECK(files[1] == dir / "x_5.png");
    CHECK(files[2] == dir / "x_legend.png");

    const auto back = io::read_image(files[0]);
    CHECK(back.height() == 9);
    CHECK(back.width() == 13);
    CHECK(back == io::quantize8(viz::heat_overlay(img, p, 0.5)));

    const auto text = io::read_png_text(files[0]);
    CHECK(std::find(text.begin(), text.end(), std::pair<std::string, std::string>{"Title", "cat"}) != text.end());
    const auto text5 = io::read_png_text(files[1]);
    CHECK(std::find(text5.begin(), text5.end(), std::pair<std::string, std::string>{"Title", "class 5"}) !=
          text5.end());
    const auto legend = io::read_image(files[2]);
    CHECK(legend.width() >= 13);
    CHECK(legend.height() > 8);
  }

  TEST_CASE("unwritable destination") {
    testing::TempDir dir("overlay-bad");
    const ActivationMap maps{{1, Plane::Zero(2, 2)}};
    CHECK_THROWS_AS(viz::export_overlay(RasterImage(2, 2), maps, dir / "missing/dir/x"), IoError);
  }
}
