#pragma once

#include "qaclims/types.hpp"

#include <algorithm>
#include <string>

namespace qaclims {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Split on sign so neither branch overflows exp().
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Class activation maps P_k(h, w) = sigmoid(W_k . Z(h, w)) for each present
/// class. Class id k reads column k - 1 of `weights` (C x K).
template <typename Scalar>
ActivationMapT<Scalar> compute_cam(const FeatureMapT<Scalar>& z,
                                   const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& weights,
                                   const ClassSet& present) {
  if (z.channels() < 1 || z.height < 1 || z.width < 1 || z.data.cols() != z.height * z.width)
    throw DimensionError("feature map has inconsistent shape");
  if (weights.rows() != z.channels())
    throw DimensionError("classifier has " + std::to_string(weights.rows()) + " rows, feature map has " +
                         std::to_string(z.channels()) + " channels");
  if (present.empty()) throw DimensionError("no present classes");

  ActivationMapT<Scalar> out;
  for (ClassId k : present) {
    if (k < 1 || k > weights.cols()) throw DimensionError("class id " + std::to_string(k) + " outside classifier");
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> logits = weights.col(k - 1).transpose() * z.data;
    PlaneT<Scalar> p(z.height, z.width);
    for (Eigen::Index i = 0; i < z.height; ++i)
      for (Eigen::Index j = 0; j < z.width; ++j) p(i, j) = sigmoid(logits(i * z.width + j));
    out.emplace(k, std::move(p));
  }
  return out;
}

template <typename Scalar>
struct RegionMaskPairT {
  PlaneT<Scalar> fg;      // R^f = P * b
  PlaneT<Scalar> bg;      // R^b = (1 - P) * (1 - b)
  PlaneT<Scalar> binary;  // b, entries exactly 0 or 1; empty for soft masks
  Scalar threshold{};     // theta = omega * max(P)
};
using RegionMaskPair = RegionMaskPairT<double>;

/// Foreground adaptive thresholding: theta = omega * max(P), b = [P >= theta].
template <typename Scalar>
RegionMaskPairT<Scalar> fat_threshold(const PlaneT<Scalar>& p, Scalar omega) {
  if (p.size() == 0) throw DimensionError("empty activation plane");
  if (!(omega >= Scalar(0) && omega <= Scalar(1))) throw ConfigError("filter ratio must lie in [0, 1]");

  RegionMaskPairT<Scalar> r;
  r.threshold = omega * p.maxCoeff();
  r.binary = (p.array() >= r.threshold).template cast<Scalar>().matrix();
  r.fg = p.cwiseProduct(r.binary);
  r.bg = (Scalar(1) - p.array()).matrix().cwiseProduct((Scalar(1) - r.binary.array()).matrix());
  return r;
}

/// Un-thresholded region masks (R^f = P, R^b = 1 - P), used when adaptive
/// thresholding is switched off.
template <typename Scalar>
RegionMaskPairT<Scalar> soft_region_masks(const PlaneT<Scalar>& p) {
  RegionMaskPairT<Scalar> r;
  r.threshold = Scalar(0);
  // binary stays empty: there is no hard split in this mode
  r.fg = p;
  r.bg = (Scalar(1) - p.array()).matrix();
  return r;
}

/// Row-stochastic (dst x src) matrix of 1-D linear interpolation with
/// end points aligned. Bilinear upsampling is A_y * P * A_x^T.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> interpolation_matrix(Eigen::Index src, Eigen::Index dst) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> a =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(dst, src);
  if (src == 1 || dst == 1) {
    a.col(0).setOnes();
    return a;
  }
  for (Eigen::Index i = 0; i < dst; ++i) {
    const Scalar pos = Scalar(i) * Scalar(src - 1) / Scalar(dst - 1);
    const Eigen::Index lo = std::min<Eigen::Index>(static_cast<Eigen::Index>(pos), src - 2);
    const Scalar t = pos - Scalar(lo);
    a(i, lo) = Scalar(1) - t;
    a(i, lo + 1) = t;
  }
  return a;
}

/// Bilinear upsampling with corners aligned; convex weights keep values in
/// the input range.
template <typename Scalar>
PlaneT<Scalar> upsample_map(const PlaneT<Scalar>& p, Eigen::Index target_h, Eigen::Index target_w) {
  if (target_h < 1 || target_w < 1) throw DimensionError("upsample target must be non-empty");
  if (p.size() == 0) throw DimensionError("empty plane");
  if (target_h < p.rows() || target_w < p.cols()) throw DimensionError("upsample target smaller than source");
  const auto ay = interpolation_matrix<Scalar>(p.rows(), target_h);
  const auto ax = interpolation_matrix<Scalar>(p.cols(), target_w);
  const Scalar lo = p.minCoeff(), hi = p.maxCoeff();
  return (ay * p * ax.transpose()).cwiseMax(lo).cwiseMin(hi);
}

/// Multiplies every colour channel by the region mask.
template <typename Scalar>
RasterImageT<Scalar> mask_image(const RasterImageT<Scalar>& x, const PlaneT<Scalar>& r) {
  if (r.rows() != x.height() || r.cols() != x.width())
    throw DimensionError("mask is " + std::to_string(r.rows()) + "x" + std::to_string(r.cols()) + ", image is " +
                         std::to_string(x.height()) + "x" + std::to_string(x.width()));
  RasterImageT<Scalar> out;
  for (int c = 0; c < 3; ++c) out.rgb[c] = x.rgb[c].cwiseProduct(r);
  return out;
}

}  // namespace qaclims
