#include "scolio/backbone.hpp"

#include <stdexcept>
#include <string>

namespace scolio {

Index BackboneConfig::total_stride() const {
  Index s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

Index BackboneConfig::out_channels() const {
  return stages.empty() ? input_channels : stages.back().channels;
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("backbone needs at least one stage");
  for (const auto& st : stages) {
    if (st.channels < 1 || st.blocks < 1 || st.stride < 1) {
      throw std::invalid_argument("backbone stage needs channels, blocks, stride >= 1");
    }
  }
  if (input_channels < 1) throw std::invalid_argument("backbone input_channels must be >= 1");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) {
    throw std::invalid_argument("backbone drop_path must be in [0, 1)");
  }
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx,
                                          double drop_path) {
  Tensor<Scalar> y = relu(bn.forward(conv.forward(x, ctx), ctx));
  if (!residual) return y;
  if (!ctx.training() || drop_path == 0.0) return add(x, y);
  if (ctx.rng == nullptr) throw std::logic_error("train-mode DropPath needs an rng");
  return droppath(x, y, DropPathConfig{drop_path, ctx.mode}, *ctx.rng);
}

template <typename Scalar>
void ConvBlock<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

template <typename Scalar>
Backbone<Scalar> Backbone<Scalar>::init(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  Backbone b;
  b.cfg_ = cfg;
  Index in = cfg.input_channels;
  for (const auto& st : cfg.stages) {
    std::vector<ConvBlock<Scalar>> blocks;
    for (Index i = 0; i < st.blocks; ++i) {
      ConvBlock<Scalar> blk;
      blk.conv = Conv2d<Scalar>::init(i == 0 ? in : st.channels, st.channels, 3,
                                      i == 0 ? st.stride : 1, rng);
      blk.bn = BatchNorm2d<Scalar>::init(st.channels, static_cast<Scalar>(cfg.bn_eps),
                                         static_cast<Scalar>(cfg.bn_momentum));
      blk.residual = i > 0;
      blocks.push_back(std::move(blk));
    }
    b.stages_.push_back(std::move(blocks));
    in = st.channels;
  }
  return b;
}

template <typename Scalar>
Tensor<Scalar> Backbone<Scalar>::forward(const Tensor<Scalar>& images, const Context<Scalar>& ctx) {
  if (images.rank() != 4 || images.dim(1) != cfg_.input_channels) {
    throw std::invalid_argument("backbone expects N x " + std::to_string(cfg_.input_channels) +
                                " x H x W, got " + shape_str(images.shape()));
  }
  const Index s = cfg_.total_stride();
  if (images.dim(2) % s != 0 || images.dim(3) % s != 0) {
    throw std::invalid_argument("backbone: image size " + std::to_string(images.dim(2)) + "x" +
                                std::to_string(images.dim(3)) + " not divisible by stride " +
                                std::to_string(s));
  }
  Tensor<Scalar> x = images;
  for (auto& stage : stages_) {
    for (auto& blk : stage) x = blk.forward(x, ctx, cfg_.drop_path);
  }
  return x;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> Backbone<Scalar>::dual_path(const Tensor<Scalar>& images,
                                                                      const Context<Scalar>& ctx) {
  Tensor<Scalar> f = forward(images, ctx);
  Tensor<Scalar> ff = forward(flip_width(images), ctx);
  return {f, ff};
}

template <typename Scalar>
void Backbone<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b),
                            out);
    }
  }
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace scolio
