#pragma once

#include "qaclims/types.hpp"

#include <string>
#include <vector>

namespace qaclims::viz {

/// Jet colormap: 0 is dark blue, 1 is dark red. Input is clamped to [0, 1].
Eigen::Vector3d jet(double v);

/// (1 - alpha) * image + alpha * jet(P) per pixel. P must match the image size.
RasterImage heat_overlay(const RasterImage& image, const Plane& p, double alpha = 0.5);

/// Renders lines of text in a 5x7 bitmap font, white on black. Lower case is
/// drawn as upper case; characters without a glyph become '?'.
RasterImage text_strip(const std::vector<std::string>& lines, int width = 0, int scale = 1);

struct OverlayLegend {
  std::string class_name;
  std::vector<std::string> fg_texts;
  std::vector<std::string> bg_texts;
};

struct OverlayOptions {
  double alpha = 0.5;
  int legend_scale = 1;
};

/// Writes <stem>_<class id>.png for every plane and <stem>_legend.png. Planes
/// must already be at image resolution. `legends` is keyed by class id;
/// missing entries are drawn as "class <id>". Returns the written paths.
std::vector<std::string> export_overlay(const RasterImage& image, const ActivationMap& maps,
                                        const std::string& stem,
                                        const std::map<ClassId, OverlayLegend>& legends = {},
                                        const OverlayOptions& options = {});

}  // namespace qaclims::viz
