#include "qaclims/losses.hpp"

namespace qaclims {

void LossWeights::validate() const {
  if (!(tau > 0)) throw ConfigError("temperature tau must be positive");
  if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be nonnegative");
}

LossBreakdown total_loss(double frc, double brc, double reg, const LossWeights& w) {
  if (!std::isfinite(frc) || !std::isfinite(brc) || !std::isfinite(reg))
    throw Error("loss components must be finite");
  return {frc, brc, reg, w.alpha * frc + w.beta * brc + w.gamma * reg};
}

ClassTextEmbeddings embed_corpus(EncoderPair& encoders, const corpus::ClassCorpus& c) {
  if (c.fg_texts.empty() || c.bg_texts.empty()) throw Error("corpus for '" + c.class_label + "' has an empty text list");
  std::vector<Embedding> fg;
  for (const auto& t : c.fg_texts) fg.push_back(encoders.encode_text(t));
  ClassTextEmbeddings out;
  out.fg_mean = mean_fg_text(fg);
  for (const auto& t : c.bg_texts) out.bg.push_back(encoders.encode_text(t));
  return out;
}

namespace {

RegionMaskPair regions_for(const Plane& upsampled, const RegionOptions& region) {
  return region.mode == RegionMode::adaptive_threshold ? fat_threshold(upsampled, region.omega)
                                                       : soft_region_masks(upsampled);
}

struct RegionScores {
  double frc = 0, brc = 0;
  Embedding d_vf, d_vb;  // gradients of (alpha * frc + beta * brc) w.r.t. region embeddings
  bool fg_empty = false, bg_empty = false;
};

/// Both contrastive terms for one class given its region embeddings.
RegionScores score_regions(const Embedding& vf, const Embedding& vb, const ClassTextEmbeddings& t,
                           const LossWeights& w, bool want_grad) {
  RegionScores r;
  const auto n = t.bg.size();
  r.d_vf = Embedding::Zero(vf.size());
  r.d_vb = Embedding::Zero(vb.size());

  r.fg_empty = vf.norm() == 0.0;
  r.bg_empty = vb.norm() == 0.0;

  if (!r.fg_empty) {
    const double s_ff = cosine_sim(vf, t.fg_mean);
    std::vector<double> s_fb(n);
    for (std::size_t i = 0; i < n; ++i) s_fb[i] = cosine_sim(vf, t.bg[i]);
    const auto term = frc_term<double>(s_ff, s_fb, w.tau);
    r.frc = term.value;
    if (want_grad) {
      r.d_vf += w.alpha * term.d_positive * cosine_sim_grad(vf, t.fg_mean);
      for (std::size_t i = 0; i < n; ++i) r.d_vf += w.alpha * term.d_negatives[i] * cosine_sim_grad(vf, t.bg[i]);
    }
  }
  if (!r.bg_empty) {
    const double s_bf = cosine_sim(vb, t.fg_mean);
    std::vector<double> s_bb(n);
    for (std::size_t i = 0; i < n; ++i) s_bb[i] = cosine_sim(vb, t.bg[i]);
    const auto term = brc_term<double>(s_bf, s_bb, w.tau, w.brc_tau_on_bf);
    r.brc = term.value;
    if (want_grad) {
      for (std::size_t i = 0; i < n; ++i) r.d_vb += w.beta * term.d_negatives[i] * cosine_sim_grad(vb, t.bg[i]);
      r.d_vb += w.beta * term.d_negatives.back() * cosine_sim_grad(vb, t.fg_mean);
    }
  }
  return r;
}

void check_classes(const ActivationMap& cam, const auto& per_class) {
  if (cam.empty()) throw DimensionError("activation map has no planes");
  if (cam.size() != per_class.size()) throw Error("corpus classes do not match activation-map classes");
  for (const auto& [k, p] : cam)
    if (!per_class.count(k)) throw Error("no corpus for class " + std::to_string(k));
}

}  // namespace

LossBreakdown step_losses(const RasterImage& image, const ActivationMap& cam,
                          const std::map<ClassId, corpus::ClassCorpus>& corpus, const RegionOptions& region,
                          const LossWeights& weights, EncoderPair& encoders, StepDiagnostics* diag) {
  weights.validate();
  check_classes(cam, corpus);
  double frc = 0, brc = 0;
  for (const auto& [k, p] : cam) {
    const Plane up = upsample_map(p, image.height(), image.width());
    const RegionMaskPair masks = regions_for(up, region);
    const Embedding vf = encoders.encode_image(mask_image(image, masks.fg));
    const Embedding vb = encoders.encode_image(mask_image(image, masks.bg));
    const auto texts = embed_corpus(encoders, corpus.at(k));
    const auto s = score_regions(vf, vb, texts, weights, false);
    frc += s.frc;
    brc += s.brc;
    if (diag) diag->empty_fg_regions += s.fg_empty, diag->empty_bg_regions += s.bg_empty;
  }
  const double n = static_cast<double>(cam.size());
  return total_loss(frc / n, brc / n, reg_loss(cam), weights);
}

StepGradient step_losses_with_grad(const RasterImage& image, const Eigen::MatrixXd& basis, const ActivationMap& cam,
                                   const std::map<ClassId, ClassTextEmbeddings>& texts, const RegionOptions& region,
                                   const LossWeights& weights) {
  weights.validate();
  check_classes(cam, texts);
  const Eigen::Index ih = image.height(), iw = image.width();
  if (basis.cols() != ih * iw) throw DimensionError("pooling basis does not match the image size");

  StepGradient out;
  const double n = static_cast<double>(cam.size());
  const LossWeights per_class{weights.alpha / n, weights.beta / n, weights.gamma, weights.tau, weights.brc_tau_on_bf};

  Eigen::Index cam_pixels = 0;
  for (const auto& [k, p] : cam) cam_pixels += p.size();

  double frc = 0, brc = 0;
  for (const auto& [k, p] : cam) {
    const Eigen::MatrixXd ay = interpolation_matrix<double>(p.rows(), ih);
    const Eigen::MatrixXd ax = interpolation_matrix<double>(p.cols(), iw);
    const Plane up = upsample_map(p, ih, iw);
    const RegionMaskPair masks = regions_for(up, region);

    const Embedding vf = basis * Eigen::Map<const Eigen::VectorXd>(masks.fg.data(), masks.fg.size());
    const Embedding vb = basis * Eigen::Map<const Eigen::VectorXd>(masks.bg.data(), masks.bg.size());
    const auto s = score_regions(vf, vb, texts.at(k), per_class, true);
    frc += s.frc;
    brc += s.brc;
    out.diag.empty_fg_regions += s.fg_empty;
    out.diag.empty_bg_regions += s.bg_empty;

    const Eigen::VectorXd d_rf = basis.transpose() * s.d_vf;
    const Eigen::VectorXd d_rb = basis.transpose() * s.d_vb;
    const Eigen::Map<const Plane> d_rf_plane(d_rf.data(), ih, iw);
    const Eigen::Map<const Plane> d_rb_plane(d_rb.data(), ih, iw);

    // R^f = U b and R^b = (1 - U)(1 - b) with b constant.
    Plane d_up;
    if (masks.binary.size() == 0) {
      d_up = d_rf_plane - d_rb_plane;
    } else {
      d_up = d_rf_plane.cwiseProduct(masks.binary) -
             d_rb_plane.cwiseProduct((1.0 - masks.binary.array()).matrix());
    }
    Plane d_p = ay.transpose() * d_up * ax;
    d_p.array() += weights.gamma / static_cast<double>(cam_pixels);
    out.d_cam.emplace(k, std::move(d_p));
  }
  out.losses = total_loss(frc / n, brc / n, reg_loss(cam), weights);
  return out;
}

}  // namespace qaclims
