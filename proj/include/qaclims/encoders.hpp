#pragma once

#include "qaclims/types.hpp"
#include "qaclims/world.hpp"

#include <optional>
#include <string>

namespace qaclims {

using Embedding = Eigen::VectorXd;

/// Frozen image/text encoder pair mapping both modalities into one space.
class EncoderPair {
 public:
  virtual ~EncoderPair() = default;

  virtual Embedding encode_image(const RasterImage& image) = 0;
  virtual Embedding encode_text(const std::string& text) = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;

  /// For encoders that are a linear pooling of per-pixel features: the
  /// D x (H*W) matrix G with encode_image(mask_image(x, r)) == G * vec(r) for
  /// every nonnegative mask r (vec is Eigen's column-major order). Training
  /// needs this to backpropagate into the mask; encoders without it can only
  /// score losses.
  virtual std::optional<Eigen::MatrixXd> pooling_basis(const RasterImage& /*image*/) { return std::nullopt; }
};

/// Deterministic encoders aligned with a World's concepts.
///
/// Image side: each pixel y contributes phi(y) with
///   phi_c(y) = |y| * exp(kappa * (cos(y, u_c) - 1)),
/// u_c the colour signature of concept c. phi is positively homogeneous, so
/// masking a pixel by r scales its contribution by exactly r. The mean of phi
/// over pixels is mapped to D dims by a fixed random projection.
///
/// Text side: each token adds the projection of its concept (if the world
/// lexicon knows it) plus a hashed token-specific vector, so the prompt
/// prefix and words like "no" shift every text the same way a real text
/// encoder would.
class MockEncoderPair final : public EncoderPair {
 public:
  explicit MockEncoderPair(const World& world, int dim = 64, std::uint64_t seed = 0x5eed, double kappa = 40.0);

  Embedding encode_image(const RasterImage& image) override;
  Embedding encode_text(const std::string& text) override;
  int dim() const override { return dim_; }
  std::string id() const override { return "mock-linear-v1"; }
  std::optional<Eigen::MatrixXd> pooling_basis(const RasterImage& image) override;

  /// Per-pixel concept responses, C x (H*W), column-major pixel order.
  Eigen::MatrixXd concept_responses(const RasterImage& image) const;

 private:
  const World& world_;
  int dim_;
  double kappa_;
  Eigen::MatrixXd colors_;      // 3 x C, unit columns
  Eigen::MatrixXd projection_;  // D x C
  Eigen::MatrixXd hashed_;      // D x kHashBuckets
  static constexpr int kHashBuckets = 97;
};

}  // namespace qaclims
