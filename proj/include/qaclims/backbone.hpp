#pragma once

#include "qaclims/types.hpp"

#include <any>
#include <memory>
#include <string>
#include <vector>

namespace qaclims {

/// Trainable feature extractor. Parameters live in one flat vector so that
/// optimisers, checkpoints and gradient checks can treat them uniformly.
class Backbone {
 public:
  virtual ~Backbone() = default;

  /// Forward pass. `cache` receives whatever backward() needs.
  virtual FeatureMap forward(const RasterImage& image, std::any* cache = nullptr) const = 0;

  /// Gradient of a scalar loss with respect to the parameters, given the
  /// gradient with respect to the output features (C x H*W).
  virtual Eigen::VectorXd backward(const std::any& cache, const Eigen::MatrixXd& d_features) const = 0;

  virtual Eigen::VectorXd& parameters() = 0;
  virtual const Eigen::VectorXd& parameters() const = 0;
  Eigen::Index parameter_count() const { return parameters().size(); }

  virtual int output_channels() const = 0;
  /// Output grid is ceil-style (H - 1) / stride + 1 per dimension.
  virtual int output_stride() const = 0;
  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

enum class Activation { relu, silu };
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ConvBackboneSpec {
  std::vector<int> widths = {16, 32, 48, 64};
  std::vector<int> strides = {1, 2, 2, 2};
  Activation activation = Activation::relu;
};

/// Stack of 3x3 convolutions (padding 1), each followed by the activation.
class ConvBackbone final : public Backbone {
 public:
  ConvBackbone(ConvBackboneSpec spec, std::uint64_t seed);

  FeatureMap forward(const RasterImage& image, std::any* cache = nullptr) const override;
  Eigen::VectorXd backward(const std::any& cache, const Eigen::MatrixXd& d_features) const override;

  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }
  int output_channels() const override { return spec_.widths.back(); }
  int output_stride() const override;
  std::string describe() const override;
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<ConvBackbone>(*this); }
  const ConvBackboneSpec& spec() const { return spec_; }

  static Eigen::Index output_size(Eigen::Index input, int stride) { return (input - 1) / stride + 1; }

 private:
  struct Layer {
    int in, out, stride;
    Eigen::Index weight_offset, bias_offset;
  };
  ConvBackboneSpec spec_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
};

}  // namespace qaclims
