#pragma once

#include "qaclims/activation.hpp"
#include "qaclims/corpus.hpp"
#include "qaclims/encoders.hpp"
#include "qaclims/types.hpp"

#include <cmath>
#include <map>
#include <span>
#include <vector>

namespace qaclims {

struct LossWeights {
  double alpha = 10.0;
  double beta = 8.0;
  double gamma = 0.2;
  double tau = 0.7;
  bool brc_tau_on_bf = true;

  void validate() const;
};

struct LossBreakdown {
  double frc = 0;
  double brc = 0;
  double reg = 0;
  double total = 0;
};

// ---------------------------------------------------------------------------
// Scalar building blocks
// ---------------------------------------------------------------------------

template <typename Derived1, typename Derived2>
typename Derived1::Scalar cosine_sim(const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b) {
  using Scalar = typename Derived1::Scalar;
  if (a.size() != b.size()) throw DimensionError("cosine similarity of vectors with different dimensions");
  const Scalar na = a.norm(), nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) throw DimensionError("cosine similarity undefined for a zero-norm vector");
  return a.dot(b) / (na * nb);
}

/// d cos(a, b) / d a.
template <typename Derived1, typename Derived2>
Eigen::Matrix<typename Derived1::Scalar, Eigen::Dynamic, 1> cosine_sim_grad(const Eigen::MatrixBase<Derived1>& a,
                                                                             const Eigen::MatrixBase<Derived2>& b) {
  using Scalar = typename Derived1::Scalar;
  const Scalar na = a.norm(), nb = b.norm();
  const Scalar cos = a.dot(b) / (na * nb);
  return b / (na * nb) - cos * a / (na * na);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_fg_text(const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& embs) {
  if (embs.empty()) throw DimensionError("mean of an empty embedding list");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(embs.front().size());
  for (const auto& e : embs) {
    if (e.size() != sum.size()) throw DimensionError("embeddings of different dimensions");
    sum += e;
  }
  return sum / Scalar(embs.size());
}

/// Value of a contrastive loss and its partial derivatives with respect to
/// the positive similarity and each negative similarity.
template <typename Scalar>
struct ContrastiveTerm {
  Scalar value{};
  Scalar d_positive{};
  std::vector<Scalar> d_negatives;
};

/// -log( exp(s_ff / tau) / (sum_n exp(s_fb_n / tau) + exp(s_ff / tau)) ),
/// evaluated as logsumexp(all logits) - positive logit.
template <typename Scalar>
ContrastiveTerm<Scalar> frc_term(Scalar s_ff, std::span<const Scalar> s_fb, Scalar tau) {
  if (!(tau > Scalar(0))) throw ConfigError("temperature must be positive");
  if (s_fb.empty()) throw DimensionError("foreground contrast needs at least one negative");
  const Scalar z0 = s_ff / tau;
  Scalar zmax = z0;
  for (Scalar s : s_fb) zmax = std::max(zmax, s / tau);
  Scalar denom = std::exp(z0 - zmax), rest{0};
  for (Scalar s : s_fb) denom += std::exp(s / tau - zmax);
  for (Scalar s : s_fb) rest += std::exp(s / tau - z0);
  const Scalar lse = zmax + std::log(denom);

  ContrastiveTerm<Scalar> t;
  // log1p form when the positive leads, otherwise lse - z0 cancels to 0
  t.value = zmax == z0 ? std::log1p(rest) : lse - z0;
  Scalar neg_mass{0};
  for (Scalar s : s_fb) neg_mass += std::exp(s / tau - lse);
  t.d_positive = -neg_mass / tau;
  t.d_negatives.reserve(s_fb.size());
  for (Scalar s : s_fb) t.d_negatives.push_back(std::exp(s / tau - lse) / tau);
  return t;
}

template <typename Scalar>
Scalar frc_loss(Scalar s_ff, std::span<const Scalar> s_fb, Scalar tau) {
  return frc_term(s_ff, s_fb, tau).value;
}

/// -log( exp(mean(s_bb) / tau) / (exp(s_bf / tau') + exp(mean(s_bb) / tau)) )
/// with tau' = tau when `tau_on_bf`, else 1. The positive here is the mean BG
/// similarity; the single negative is s_bf. d_positive is with respect to the
/// mean, d_negatives holds one entry per s_bb_n (d_positive / N) followed by
/// d/ds_bf as the last element.
template <typename Scalar>
ContrastiveTerm<Scalar> brc_term(Scalar s_bf, std::span<const Scalar> s_bb, Scalar tau, bool tau_on_bf) {
  if (!(tau > Scalar(0))) throw ConfigError("temperature must be positive");
  if (s_bb.empty()) throw DimensionError("background contrast needs at least one BG text");
  Scalar mean{0};
  for (Scalar s : s_bb) mean += s;
  mean /= Scalar(s_bb.size());

  const Scalar tau_bf = tau_on_bf ? tau : Scalar(1);
  const Scalar za = mean / tau, zb = s_bf / tau_bf;
  const Scalar zmax = std::max(za, zb);
  const Scalar lse = zmax + std::log(std::exp(za - zmax) + std::exp(zb - zmax));

  ContrastiveTerm<Scalar> t;
  t.value = za >= zb ? std::log1p(std::exp(zb - za)) : lse - za;
  t.d_positive = -std::exp(zb - lse) / tau;
  t.d_negatives.assign(s_bb.size(), t.d_positive / Scalar(s_bb.size()));
  t.d_negatives.push_back(std::exp(zb - lse) / tau_bf);
  return t;
}

template <typename Scalar>
Scalar brc_loss(Scalar s_bf, std::span<const Scalar> s_bb, Scalar tau, bool tau_on_bf = true) {
  return brc_term(s_bf, s_bb, tau, tau_on_bf).value;
}

/// Mean activation over every present plane and pixel.
template <typename Scalar>
Scalar reg_loss(const ActivationMapT<Scalar>& maps) {
  if (maps.empty()) throw DimensionError("area regularisation needs at least one plane");
  Scalar sum{0};
  Eigen::Index count = 0;
  for (const auto& [k, p] : maps) {
    sum += p.sum();
    count += p.size();
  }
  return sum / Scalar(count);
}

LossBreakdown total_loss(double frc, double brc, double reg, const LossWeights& w);

// ---------------------------------------------------------------------------
// Region contrast for one image
// ---------------------------------------------------------------------------

struct ClassTextEmbeddings {
  Embedding fg_mean;
  std::vector<Embedding> bg;
};

ClassTextEmbeddings embed_corpus(EncoderPair& encoders, const corpus::ClassCorpus& c);

enum class RegionMode { adaptive_threshold, soft };

struct RegionOptions {
  double omega = 0.1;
  RegionMode mode = RegionMode::adaptive_threshold;
};

struct StepDiagnostics {
  int empty_fg_regions = 0;  // classes whose FG region encoded to a zero vector
  int empty_bg_regions = 0;
};

/// Losses for one image, following the literal path: upsample each plane to
/// image resolution, threshold, mask the image, encode the masked images and
/// compare with the corpus texts. A region that encodes to the zero vector
/// contributes 0 to its term.
LossBreakdown step_losses(const RasterImage& image, const ActivationMap& cam,
                          const std::map<ClassId, corpus::ClassCorpus>& corpus, const RegionOptions& region,
                          const LossWeights& weights, EncoderPair& encoders, StepDiagnostics* diag = nullptr);

struct StepGradient {
  LossBreakdown losses;
  std::map<ClassId, Plane> d_cam;  // d total / d P_k at CAM resolution
  StepDiagnostics diag;
};

/// Same objective as step_losses, evaluated through the pooling basis of a
/// linear-pooling encoder so the gradient with respect to every CAM entry is
/// available. The binary mask b is held constant.
StepGradient step_losses_with_grad(const RasterImage& image, const Eigen::MatrixXd& pooling_basis,
                                   const ActivationMap& cam, const std::map<ClassId, ClassTextEmbeddings>& texts,
                                   const RegionOptions& region, const LossWeights& weights);

}  // namespace qaclims
