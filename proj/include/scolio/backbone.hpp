#pragma once

#include <utility>
#include <vector>

#include "scolio/layers.hpp"

namespace scolio {

struct StageConfig {
  Index channels = 16;
  Index blocks = 2;  // first block downsamples, the rest are residual
  Index stride = 2;
};

struct BackboneConfig {
  std::vector<StageConfig> stages{{16, 2, 2}, {32, 2, 2}, {64, 2, 2}};
  Index input_channels = 1;
  double drop_path = 0.1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  Index total_stride() const;
  Index out_channels() const;
  void validate() const;
};

/// conv3x3 -> BN -> ReLU; residual blocks add their input back through DropPath.
template <typename Scalar>
struct ConvBlock {
  Conv2d<Scalar> conv;
  BatchNorm2d<Scalar> bn;
  bool residual = false;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx, double drop_path);
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

/// Plain residual conv stack standing in for the swappable backbone. One
/// parameter set serves both the original and the mirrored path.
template <typename Scalar>
class Backbone {
 public:
  static Backbone init(const BackboneConfig& cfg, Rng& rng);

  /// [N x c x h x w] -> [N x C x h/s x w/s]; h and w must divide by the total stride.
  Tensor<Scalar> forward(const Tensor<Scalar>& images, const Context<Scalar>& ctx);

  /// (backbone(img), backbone(flip_width(img))) with the same weights.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> dual_path(const Tensor<Scalar>& images,
                                                      const Context<Scalar>& ctx);

  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<std::vector<ConvBlock<Scalar>>> stages_;
};

}  // namespace scolio
