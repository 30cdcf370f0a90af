#include "qaclims/backbone.hpp"

#include "qaclims/rng.hpp"

#include <cmath>
#include <sstream>

namespace qaclims {

namespace {

using Matrix = Eigen::MatrixXd;

struct LayerCache {
  Matrix cols;  // (in * 9) x (Ho * Wo)
  Matrix pre;   // out x (Ho * Wo), before the activation
  Eigen::Index in_h, in_w, out_h, out_w;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
};

/// Input is channels x (H*W) with row-major pixel order.
Matrix im2col(const Matrix& x, Eigen::Index h, Eigen::Index w, int stride, Eigen::Index oh, Eigen::Index ow) {
  const Eigen::Index c = x.rows();
  Matrix cols = Matrix::Zero(c * 9, oh * ow);
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ch * 9 + ky * 3 + kx;
        for (Eigen::Index oy = 0; oy < oh; ++oy) {
          const Eigen::Index iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (Eigen::Index ox = 0; ox < ow; ++ox) {
            const Eigen::Index ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * ow + ox) = x(ch, iy * w + ix);
          }
        }
      }
  return cols;
}

Matrix col2im(const Matrix& cols, Eigen::Index c, Eigen::Index h, Eigen::Index w, int stride, Eigen::Index oh,
              Eigen::Index ow) {
  Matrix x = Matrix::Zero(c, h * w);
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ch * 9 + ky * 3 + kx;
        for (Eigen::Index oy = 0; oy < oh; ++oy) {
          const Eigen::Index iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (Eigen::Index ox = 0; ox < ow; ++ox) {
            const Eigen::Index ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            x(ch, iy * w + ix) += cols(row, oy * ow + ox);
          }
        }
      }
  return x;
}

double act(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::silu: return x / (1.0 + std::exp(-x));
  }
  return x;
}

double act_grad(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0 ? 1.0 : 0.0;
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
  }
  return 1.0;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "'");
}

ConvBackbone::ConvBackbone(ConvBackboneSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.widths.empty() || spec_.widths.size() != spec_.strides.size())
    throw ConfigError("backbone widths and strides must be non-empty and of equal length");
  Eigen::Index offset = 0;
  int in = 3;
  for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
    if (spec_.widths[i] < 1 || spec_.strides[i] < 1) throw ConfigError("backbone widths and strides must be positive");
    Layer l{in, spec_.widths[i], spec_.strides[i], offset, 0};
    offset += static_cast<Eigen::Index>(l.out) * l.in * 9;
    l.bias_offset = offset;
    offset += l.out;
    layers_.push_back(l);
    in = l.out;
  }

  params_ = Eigen::VectorXd::Zero(offset);
  Rng rng(seed);
  for (const auto& l : layers_) {
    const double std = std::sqrt(2.0 / (l.in * 9.0));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(l.out) * l.in * 9; ++i)
      params_(l.weight_offset + i) = rng.normal() * std;
  }
}

int ConvBackbone::output_stride() const {
  int s = 1;
  for (int v : spec_.strides) s *= v;
  return s;
}

std::string ConvBackbone::describe() const {
  std::ostringstream os;
  os << "conv3x3[";
  for (std::size_t i = 0; i < layers_.size(); ++i)
    os << (i ? "," : "") << layers_[i].out << "/s" << layers_[i].stride;
  os << "] " << to_string(spec_.activation) << " params=" << params_.size();
  return os.str();
}

FeatureMap ConvBackbone::forward(const RasterImage& image, std::any* cache) const {
  Eigen::Index h = image.height(), w = image.width();
  if (h < 1 || w < 1) throw DimensionError("backbone input is empty");

  Matrix x(3, h * w);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index xx = 0; xx < w; ++xx) x(c, y * w + xx) = image.rgb[c](y, xx) - 0.5;

  ForwardCache fc;
  for (const auto& l : layers_) {
    const Eigen::Index oh = output_size(h, l.stride), ow = output_size(w, l.stride);
    Eigen::Map<const Matrix> weight(params_.data() + l.weight_offset, l.out, static_cast<Eigen::Index>(l.in) * 9);
    Eigen::Map<const Eigen::VectorXd> bias(params_.data() + l.bias_offset, l.out);

    LayerCache lc{im2col(x, h, w, l.stride, oh, ow), Matrix(), h, w, oh, ow};
    lc.pre.noalias() = weight * lc.cols;
    lc.pre.colwise() += bias;
    x = lc.pre.unaryExpr([a = spec_.activation](double v) { return act(a, v); });
    if (cache) fc.layers.push_back(std::move(lc));
    h = oh;
    w = ow;
  }
  if (cache) *cache = std::move(fc);
  return FeatureMap{std::move(x), h, w};
}

Eigen::VectorXd ConvBackbone::backward(const std::any& cache, const Eigen::MatrixXd& d_features) const {
  const auto& fc = std::any_cast<const ForwardCache&>(cache);
  if (fc.layers.size() != layers_.size()) throw Error("backward called with a cache from a different network");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());

  Matrix d_out = d_features;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const auto& lc = fc.layers[i];
    if (d_out.rows() != l.out || d_out.cols() != lc.out_h * lc.out_w)
      throw DimensionError("feature gradient has the wrong shape");
    const Matrix d_pre =
        d_out.cwiseProduct(lc.pre.unaryExpr([a = spec_.activation](double v) { return act_grad(a, v); }));

    Eigen::Map<Matrix> d_weight(grad.data() + l.weight_offset, l.out, static_cast<Eigen::Index>(l.in) * 9);
    Eigen::Map<Eigen::VectorXd> d_bias(grad.data() + l.bias_offset, l.out);
    d_weight.noalias() = d_pre * lc.cols.transpose();
    d_bias = d_pre.rowwise().sum();

    if (i == 0) break;
    Eigen::Map<const Matrix> weight(params_.data() + l.weight_offset, l.out, static_cast<Eigen::Index>(l.in) * 9);
    const Matrix d_cols = weight.transpose() * d_pre;
    d_out = col2im(d_cols, l.in, lc.in_h, lc.in_w, l.stride, lc.out_h, lc.out_w);
  }
  return grad;
}

}  // namespace qaclims
