#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace qaclims {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TemplateError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Dense planes and images
// ---------------------------------------------------------------------------

/// Single-channel H x W plane. Row index is y, column index is x.
template <typename Scalar>
using PlaneT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Plane = PlaneT<double>;

using ClassId = int;
using ClassSet = std::set<ClassId>;

/// RGB image with real channel values in [0, 1].
template <typename Scalar>
struct RasterImageT {
  std::array<PlaneT<Scalar>, 3> rgb;

  RasterImageT() = default;
  RasterImageT(Eigen::Index height, Eigen::Index width) {
    for (auto& c : rgb) c = PlaneT<Scalar>::Zero(height, width);
  }

  Eigen::Index height() const { return rgb[0].rows(); }
  Eigen::Index width() const { return rgb[0].cols(); }
  Eigen::Index pixels() const { return height() * width(); }

  bool operator==(const RasterImageT& o) const {
    for (int c = 0; c < 3; ++c) {
      if (rgb[c].rows() != o.rgb[c].rows() || rgb[c].cols() != o.rgb[c].cols()) return false;
      if (rgb[c] != o.rgb[c]) return false;
    }
    return true;
  }
};
using RasterImage = RasterImageT<double>;

/// Backbone output: C channels over an H x W grid. Column p holds the feature
/// vector of pixel (p / W, p % W).
template <typename Scalar>
struct FeatureMapT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> data;  // C x (H*W)
  Eigen::Index height = 0;
  Eigen::Index width = 0;

  Eigen::Index channels() const { return data.rows(); }
};
using FeatureMap = FeatureMapT<double>;

/// Per-class activation planes, only for the classes present in an image.
template <typename Scalar>
using ActivationMapT = std::map<ClassId, PlaneT<Scalar>>;
using ActivationMap = ActivationMapT<double>;

/// Per-pixel class-index plane. 0 is background; kIgnoreIndex is excluded from
/// all evaluation counts.
using SegMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
inline constexpr std::uint8_t kIgnoreIndex = 255;

/// 64-bit FNV-1a, stable across platforms. Used for content hashes and
/// config fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::uint64_t image_hash(const RasterImage& image);
std::string hex64(std::uint64_t v);

}  // namespace qaclims
