#include "qaclims/visualize.hpp"

#include "qaclims/image_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

namespace qaclims::viz {

namespace {

struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;  // bit 4 is the leftmost column
};

// clang-format off
constexpr Glyph kFont[] = {
  {'A', {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
  {'B', {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}},
  {'C', {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}},
  {'D', {0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110}},
  {'E', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}},
  {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
  {'G', {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}},
  {'H', {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
  {'I', {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
  {'J', {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100}},
  {'K', {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001}},
  {'L', {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}},
  {'M', {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}},
  {'N', {0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001}},
  {'O', {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
  {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
  {'Q', {0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101}},
  {'R', {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}},
  {'S', {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}},
  {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
  {'U', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
  {'V', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
  {'W', {0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
  {'X', {0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001}},
  {'Y', {0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100}},
  {'Z', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111}},
  {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
  {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
  {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
  {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
  {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
  {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
  {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
  {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
  {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
  {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
  {' ', {0, 0, 0, 0, 0, 0, 0}},
  {'.', {0, 0, 0, 0, 0, 0b01100, 0b01100}},
  {',', {0, 0, 0, 0, 0b01100, 0b00100, 0b01000}},
  {'-', {0, 0, 0, 0b11111, 0, 0, 0}},
  {'_', {0, 0, 0, 0, 0, 0, 0b11111}},
  {'\'', {0b00100, 0b00100, 0b01000, 0, 0, 0, 0}},
  {'"', {0b01010, 0b01010, 0, 0, 0, 0, 0}},
  {':', {0, 0b01100, 0b01100, 0, 0b01100, 0b01100, 0}},
  {'(', {0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010}},
  {')', {0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000}},
  {'/', {0, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0}},
  {'?', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0, 0b00100}},
  {'=', {0, 0, 0b11111, 0, 0b11111, 0, 0}},
  {'+', {0, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0}},
  {'%', {0b11000, 0b11001, 0b00010, 0b00100, 0b01000, 0b10011, 0b00011}},
};
// clang-format on

const Glyph& glyph(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.c == u) return g;
  for (const auto& g : kFont)
    if (g.c == '?') return g;
  return kFont[0];
}

constexpr int kAdvance = 6, kLineHeight = 9, kMargin = 2;

}  // namespace

Eigen::Vector3d jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  return {ramp(4 * v - 3), ramp(4 * v - 2), ramp(4 * v - 1)};
}

RasterImage heat_overlay(const RasterImage& image, const Plane& p, double alpha) {
  if (p.rows() != image.height() || p.cols() != image.width())
    throw DimensionError("activation plane is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                         ", image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()));
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("overlay alpha must lie in [0, 1]");
  RasterImage out(image.height(), image.width());
  for (Eigen::Index y = 0; y < p.rows(); ++y)
    for (Eigen::Index x = 0; x < p.cols(); ++x) {
      const Eigen::Vector3d h = jet(p(y, x));
      for (int c = 0; c < 3; ++c) out.rgb[c](y, x) = (1 - alpha) * image.rgb[c](y, x) + alpha * h[c];
    }
  return out;
}

RasterImage text_strip(const std::vector<std::string>& lines, int width, int scale) {
  if (scale < 1) throw ConfigError("text scale must be at least 1");
  std::size_t longest = 0;
  for (const auto& l : lines) longest = std::max(longest, l.size());
  const int natural = static_cast<int>(longest) * kAdvance * scale + 2 * kMargin;
  const int w = std::max({width, natural, 1});
  const int h = static_cast<int>(lines.size()) * kLineHeight * scale + 2 * kMargin;
  RasterImage img(h, w);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const int top = kMargin + static_cast<int>(li) * kLineHeight * scale;
    for (std::size_t ci = 0; ci < lines[li].size(); ++ci) {
      const Glyph& g = glyph(lines[li][ci]);
      const int left = kMargin + static_cast<int>(ci) * kAdvance * scale;
      for (int gy = 0; gy < 7; ++gy)
        for (int gx = 0; gx < 5; ++gx) {
          if (!(g.rows[gy] >> (4 - gx) & 1)) continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) {
              const int y = top + gy * scale + sy, x = left + gx * scale + sx;
              if (x >= w) continue;
              for (auto& ch : img.rgb) ch(y, x) = 1.0;
            }
        }
    }
  }
  return img;
}

std::vector<std::string> export_overlay(const RasterImage& image, const ActivationMap& maps, const std::string& stem,
                                        const std::map<ClassId, OverlayLegend>& legends,
                                        const OverlayOptions& options) {
  std::vector<std::string> written;
  std::vector<std::string> lines;
  for (const auto& [k, p] : maps) {
    const auto it = legends.find(k);
    const std::string name = it != legends.end() ? it->second.class_name : "class " + std::to_string(k);
    const std::string path = stem + "_" + std::to_string(k) + ".png";
    io::write_png(path, heat_overlay(image, p, options.alpha),
                  {{"Title", name}, {"Class", std::to_string(k)}, {"Colormap", "jet"},
                   {"Alpha", std::to_string(options.alpha)}});
    written.push_back(path);

    lines.push_back(std::to_string(k) + ": " + name);
    if (it != legends.end()) {
      for (const auto& t : it->second.fg_texts) lines.push_back("  fg " + t);
      for (const auto& t : it->second.bg_texts) lines.push_back("  bg " + t);
    }
  }
  // Colour bar from 0 to 1 above the text.
  RasterImage text = text_strip(lines, static_cast<int>(image.width()), options.legend_scale);
  const int bar = 8;
  RasterImage legend(text.height() + bar, text.width());
  for (Eigen::Index x = 0; x < legend.width(); ++x) {
    const Eigen::Vector3d c = jet(legend.width() > 1 ? double(x) / double(legend.width() - 1) : 0.0);
    for (int y = 0; y < bar; ++y)
      for (int ch = 0; ch < 3; ++ch) legend.rgb[ch](y, x) = c[ch];
  }
  for (int ch = 0; ch < 3; ++ch) legend.rgb[ch].bottomRows(text.height()) = text.rgb[ch];
  const std::string legend_path = stem + "_legend.png";
  io::write_png(legend_path, legend, {{"Title", "legend"}});
  written.push_back(legend_path);
  return written;
}

}  // namespace qaclims::viz
