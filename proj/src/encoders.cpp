#include "qaclims/encoders.hpp"

#include "qaclims/rng.hpp"

#include <cmath>

namespace qaclims {

namespace {
constexpr double kConceptTokenNoise = 0.3;
constexpr double kUnknownTokenWeight = 0.6;
}  // namespace

MockEncoderPair::MockEncoderPair(const World& world, int dim, std::uint64_t seed, double kappa)
    : world_(world), dim_(dim), kappa_(kappa) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  const auto n = static_cast<Eigen::Index>(world.concepts().size());
  colors_.resize(3, n);
  for (Eigen::Index c = 0; c < n; ++c) colors_.col(c) = world.concepts()[c].rgb().normalized();

  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  projection_.resize(dim, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (int i = 0; i < dim; ++i) projection_(i, j) = rng.normal() * scale;
  hashed_.resize(dim, kHashBuckets);
  for (int j = 0; j < kHashBuckets; ++j)
    for (int i = 0; i < dim; ++i) hashed_(i, j) = rng.normal() * scale;
}

Eigen::MatrixXd MockEncoderPair::concept_responses(const RasterImage& image) const {
  const Eigen::Index n = image.pixels();
  Eigen::MatrixXd px(3, n);
  for (int c = 0; c < 3; ++c) px.row(c) = Eigen::Map<const Eigen::RowVectorXd>(image.rgb[c].data(), n);
  const Eigen::RowVectorXd norms = px.colwise().norm();
  Eigen::MatrixXd cosines = colors_.transpose() * px;  // C x N, before dividing by |y|
  Eigen::MatrixXd out(colors_.cols(), n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const double r = norms(p);
    if (r == 0.0) {
      out.col(p).setZero();
      continue;
    }
    out.col(p) = r * (kappa_ * (cosines.col(p).array() / r - 1.0)).exp();
  }
  return out;
}

std::optional<Eigen::MatrixXd> MockEncoderPair::pooling_basis(const RasterImage& image) {
  return Eigen::MatrixXd(projection_ * concept_responses(image) / static_cast<double>(image.pixels()));
}

Embedding MockEncoderPair::encode_image(const RasterImage& image) {
  if (image.pixels() == 0) throw DimensionError("cannot encode an empty image");
  const Eigen::VectorXd pooled = concept_responses(image).rowwise().mean();
  return projection_ * pooled;
}

Embedding MockEncoderPair::encode_text(const std::string& text) {
  Embedding v = Embedding::Zero(dim_);
  for (const auto& tok : tokenize(text)) {
    const auto bucket = static_cast<Eigen::Index>(fnv1a(tok) % kHashBuckets);
    if (const auto c = world_.concept_of_word(tok)) {
      v += projection_.col(*c) + kConceptTokenNoise * hashed_.col(bucket);
    } else {
      v += kUnknownTokenWeight * hashed_.col(bucket);
    }
  }
  return v;
}

}  // namespace qaclims
