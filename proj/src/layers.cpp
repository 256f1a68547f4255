#include "scolio/layers.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace scolio {

namespace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapM = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const Mat<Scalar>>;

template <typename Scalar>
bool needs_grad(const Tensor<Scalar>& t) {
  return t.defined() && t.tracked();
}

struct ConvGeometry {
  Index batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  for (Index c = 0; c < g.cin; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          Scalar* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* x) {
  for (Index c = 0; c < g.cin; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          Scalar* dst = x + (c * g.h + iy) * g.w;
          const Scalar* src = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index padding) {
  if (x.rank() == 3) {
    Tensor<Scalar> batched = reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
    Tensor<Scalar> y = conv2d(batched, weight, bias, stride, padding);
    return reshape(y, Shape{y.dim(1), y.dim(2), y.dim(3)});
  }
  if (x.rank() != 4 || weight.rank() != 4) {
    throw std::invalid_argument("conv2d: expected N x C x H x W input and 4-d weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(1)) +
                                " do not match weight " + shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), stride, padding, 0, 0};
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (bias.defined() && bias.numel() != g.cout) {
    throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " vs " +
                                std::to_string(g.cout) + " output channels");
  }

  const Index in_size = g.cin * g.h * g.w;
  const Index out_size = g.cout * g.pixels();
  const Index col_size = g.patch() * g.pixels();
  // Columns are kept for the weight gradient; pointwise convs read x directly.
  auto cols = std::make_shared<Buffer<Scalar>>();
  if (!g.pointwise()) cols->resize(static_cast<std::size_t>(g.batch * col_size));

  Tensor<Scalar> out(Shape{g.batch, g.cout, g.ho, g.wo});
  CMapM<Scalar> W(weight.data().data(), g.cout, g.patch());
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* col = x.data().data() + n * in_size;
    if (!g.pointwise()) {
      im2col(x.data().data() + n * in_size, g, cols->data() + n * col_size);
      col = cols->data() + n * col_size;
    }
    MapM<Scalar> Y(out.data().data() + n * out_size, g.cout, g.pixels());
    Y.noalias() = W * CMapM<Scalar>(col, g.patch(), g.pixels());
    if (bias.defined()) Y.colwise() += bias.vec();
  }

  return detail::record<Scalar>(
      out, {&x, &weight, &bias},
      [x, weight, bias, g, cols, in_size, out_size, col_size](const Tensor<Scalar>& o) {
        const Scalar* gout = o.grad().data();
        CMapM<Scalar> W(weight.data().data(), g.cout, g.patch());
        const bool gx_on = needs_grad(x), gw_on = needs_grad(weight), gb_on = needs_grad(bias);
        Buffer<Scalar> dcol;
        if (gx_on && !g.pointwise()) dcol.resize(static_cast<std::size_t>(col_size));
        for (Index n = 0; n < g.batch; ++n) {
          CMapM<Scalar> G(gout + n * out_size, g.cout, g.pixels());
          const Scalar* col =
              g.pointwise() ? x.data().data() + n * in_size : cols->data() + n * col_size;
          if (gw_on) {
            MapM<Scalar>(weight.grad_buffer().data(), g.cout, g.patch()).noalias() +=
                G * CMapM<Scalar>(col, g.patch(), g.pixels()).transpose();
          }
          if (gb_on) {
            Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.grad_buffer().data(),
                                                                 g.cout) += G.rowwise().sum();
          }
          if (gx_on) {
            Scalar* gx = x.grad_buffer().data() + n * in_size;
            if (g.pointwise()) {
              MapM<Scalar>(gx, g.cin, g.pixels()).noalias() += W.transpose() * G;
            } else {
              MapM<Scalar>(dcol.data(), g.patch(), g.pixels()).noalias() = W.transpose() * G;
              col2im_add(dcol.data(), g, gx);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                           Tensor<Scalar>& running_var, Mode mode, Scalar momentum, Scalar eps) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm2d needs N x C x H x W");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw std::invalid_argument("batchnorm2d: parameter size does not match " +
                                std::to_string(c) + " channels");
  }
  const bool train = mode == Mode::train;
  if (train && n < 2) throw std::invalid_argument("batchnorm2d: train mode needs batch >= 2");
  const Index m = n * plane;

  // mean/invstd actually used for normalization
  auto stats = std::make_shared<Buffer<Scalar>>(static_cast<std::size_t>(2 * c));
  Scalar* mu = stats->data();
  Scalar* invstd = stats->data() + c;
  const Scalar* in = x.data().data();
  for (Index ch = 0; ch < c; ++ch) {
    if (train) {
      Scalar s = 0;
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = in + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const Scalar mean = s / static_cast<Scalar>(m);
      Scalar ss = 0;
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = in + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      const Scalar var = ss / static_cast<Scalar>(m);
      mu[ch] = mean;
      invstd[ch] = Scalar(1) / std::sqrt(var + eps);
      running_mean[ch] = (Scalar(1) - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (Scalar(1) - momentum) * running_var[ch] +
                        momentum * var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1);
    } else {
      mu[ch] = running_mean[ch];
      invstd[ch] = Scalar(1) / std::sqrt(running_var[ch] + eps);
    }
  }

  Tensor<Scalar> out(x.shape());
  Scalar* y = out.data().data();
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar a = gamma[ch] * invstd[ch];
      const Scalar shift = beta[ch] - a * mu[ch];
      const Scalar* p = in + (b * c + ch) * plane;
      Scalar* q = y + (b * c + ch) * plane;
      for (Index i = 0; i < plane; ++i) q[i] = a * p[i] + shift;
    }
  }

  return detail::record<Scalar>(
      out, {&x, &gamma, &beta}, [x, gamma, beta, stats, n, c, plane, m, train](const Tensor<Scalar>& o) {
        const Scalar* g = o.grad().data();
        const Scalar* in = x.data().data();
        const Scalar* mu = stats->data();
        const Scalar* invstd = stats->data() + c;
        const bool gx_on = needs_grad(x), gg_on = needs_grad(gamma), gb_on = needs_grad(beta);
        Scalar* gx = gx_on ? x.grad_buffer().data() : nullptr;
        for (Index ch = 0; ch < c; ++ch) {
          Scalar sum_g = 0, sum_gx = 0;
          for (Index b = 0; b < n; ++b) {
            const Scalar* gp = g + (b * c + ch) * plane;
            const Scalar* p = in + (b * c + ch) * plane;
            for (Index i = 0; i < plane; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * (p[i] - mu[ch]) * invstd[ch];
            }
          }
          if (gg_on) gamma.grad_buffer()[ch] += sum_gx;
          if (gb_on) beta.grad_buffer()[ch] += sum_g;
          if (!gx_on) continue;
          const Scalar a = gamma[ch] * invstd[ch];
          for (Index b = 0; b < n; ++b) {
            const Scalar* gp = g + (b * c + ch) * plane;
            const Scalar* p = in + (b * c + ch) * plane;
            Scalar* q = gx + (b * c + ch) * plane;
            if (train) {
              const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
              for (Index i = 0; i < plane; ++i) {
                const Scalar xhat = (p[i] - mu[ch]) * invstd[ch];
                q[i] += a * (gp[i] - inv_m * sum_g - xhat * inv_m * sum_gx);
              }
            } else {
              for (Index i = 0; i < plane; ++i) q[i] += a * gp[i];
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> attention_scores(const Tensor<Scalar>& q, const Tensor<Scalar>& k, Index d) {
  if (d <= 0) throw std::invalid_argument("attention: d must be positive");
  if (q.dim(-1) != d || k.dim(-1) != d || q.rank() != k.rank()) {
    throw std::invalid_argument("attention: dim mismatch " + shape_str(q.shape()) + " vs " +
                                shape_str(k.shape()) + " with d=" + std::to_string(d));
  }
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  return softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), -1);
}

template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         Index d) {
  if (k.shape() != v.shape()) {
    throw std::invalid_argument("attention: key " + shape_str(k.shape()) + " vs value " +
                                shape_str(v.shape()));
  }
  return matmul(attention_scores(q, k, d), v);
}

template <typename Scalar>
Tensor<Scalar> droppath(const Tensor<Scalar>& x, const Tensor<Scalar>& residual,
                        const DropPathConfig& cfg, Rng& rng) {
  if (!(cfg.drop_prob >= 0.0 && cfg.drop_prob < 1.0)) {
    throw std::invalid_argument("droppath: drop_prob must be in [0, 1)");
  }
  if (x.shape() != residual.shape()) {
    throw std::invalid_argument("droppath: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(residual.shape()));
  }
  if (cfg.mode == Mode::eval || cfg.drop_prob == 0.0) return add(x, residual);
  const Index samples = x.dim(0);
  const Index per = x.numel() / samples;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - cfg.drop_prob));
  Tensor<Scalar> mask(x.shape());
  for (Index s = 0; s < samples; ++s) {
    const Scalar v = rng.bernoulli(cfg.drop_prob) ? Scalar(0) : keep_scale;
    std::fill_n(mask.data().data() + s * per, per, v);
  }
  return add(x, mul(residual, mask));
}

// ---- modules ---------------------------------------------------------------

template <typename Scalar>
Conv2d<Scalar> Conv2d<Scalar>::init(Index in_channels, Index out_channels, Index kernel,
                                    Index stride, Rng& rng) {
  Conv2d c;
  c.weight = Tensor<Scalar>(Shape{out_channels, in_channels, kernel, kernel});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel));
  for (Scalar& v : c.weight.data()) v = static_cast<Scalar>(rng.normal() * std_dev);
  c.bias = Tensor<Scalar>(Shape{out_channels});
  c.stride = stride;
  c.padding = kernel / 2;
  return c;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const {
  return conv2d(x, ctx.param(weight), ctx.param(bias), stride, padding);
}

template <typename Scalar>
void Conv2d<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, true});
}

template <typename Scalar>
BatchNorm2d<Scalar> BatchNorm2d<Scalar>::init(Index channels, Scalar eps, Scalar momentum) {
  BatchNorm2d bn;
  bn.gamma = Tensor<Scalar>(Shape{channels}, Scalar(1));
  bn.beta = Tensor<Scalar>(Shape{channels});
  bn.running_mean = Tensor<Scalar>(Shape{channels});
  bn.running_var = Tensor<Scalar>(Shape{channels}, Scalar(1));
  bn.eps = eps;
  bn.momentum = momentum;
  return bn;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx) {
  return batchnorm2d(x, ctx.param(gamma), ctx.param(beta), running_mean, running_var, ctx.mode,
                     momentum, eps);
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

template <typename Scalar>
Attention<Scalar> Attention<Scalar>::init(const AttentionConfig& cfg, Rng& rng) {
  if (cfg.d <= 0) throw std::invalid_argument("attention: d must be positive");
  Attention a;
  a.cfg = cfg;
  if (cfg.use_projections) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (Tensor<Scalar>* w : {&a.wq, &a.wk, &a.wv}) {
      *w = Tensor<Scalar>(Shape{cfg.d, cfg.d});
      for (Scalar& v : w->data()) v = static_cast<Scalar>(rng.normal() * std_dev);
    }
  }
  return a;
}

template <typename Scalar>
Tensor<Scalar> Attention<Scalar>::query(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const {
  return cfg.use_projections ? linear(x, ctx.param(wq), Tensor<Scalar>()) : x;
}

template <typename Scalar>
Tensor<Scalar> Attention<Scalar>::key(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const {
  return cfg.use_projections ? linear(x, ctx.param(wk), Tensor<Scalar>()) : x;
}

template <typename Scalar>
Tensor<Scalar> Attention<Scalar>::value(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const {
  return cfg.use_projections ? linear(x, ctx.param(wv), Tensor<Scalar>()) : x;
}

template <typename Scalar>
Tensor<Scalar> Attention<Scalar>::scores(const Tensor<Scalar>& q, const Tensor<Scalar>& kv,
                                         const Context<Scalar>& ctx) const {
  return attention_scores(query(q, ctx), key(kv, ctx), cfg.d);
}

template <typename Scalar>
Tensor<Scalar> Attention<Scalar>::forward(const Tensor<Scalar>& q, const Tensor<Scalar>& kv,
                                          const Context<Scalar>& ctx) const {
  return matmul(scores(q, kv, ctx), value(kv, ctx));
}

template <typename Scalar>
void Attention<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  if (!cfg.use_projections) return;
  out.push_back({prefix + ".wq", wq, true});
  out.push_back({prefix + ".wk", wk, true});
  out.push_back({prefix + ".wv", wv, true});
}

template <typename Scalar>
CatConv<Scalar> CatConv<Scalar>::init(Index channels, Rng& rng) {
  CatConv cc;
  cc.reduce = Conv2d<Scalar>::init(2 * channels, channels, 1, 1, rng);
  cc.spatial = Conv2d<Scalar>::init(channels, channels, 3, 1, rng);
  cc.bn = BatchNorm2d<Scalar>::init(channels);
  return cc;
}

template <typename Scalar>
Tensor<Scalar> CatConv<Scalar>::forward(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                        const Context<Scalar>& ctx) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("cat_conv: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  if (a.rank() == 3) {
    Shape batched{1};
    batched.insert(batched.end(), a.shape().begin(), a.shape().end());
    return reshape(forward(reshape(a, batched), reshape(b, batched), ctx), a.shape());
  }
  return relu(bn.forward(spatial.forward(reduce.forward(concat_channels(a, b), ctx), ctx), ctx));
}

template <typename Scalar>
void CatConv<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  reduce.collect(prefix + ".reduce", out);
  spatial.collect(prefix + ".spatial", out);
  bn.collect(prefix + ".bn", out);
}

#define SCOLIO_INSTANTIATE_LAYERS(S)                                                          \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index,      \
                            Index);                                                           \
  template Tensor<S> batchnorm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,        \
                                 Tensor<S>&, Tensor<S>&, Mode, S, S);                         \
  template Tensor<S> attention_scores(const Tensor<S>&, const Tensor<S>&, Index);             \
  template Tensor<S> attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index);  \
  template Tensor<S> droppath(const Tensor<S>&, const Tensor<S>&, const DropPathConfig&,      \
                              Rng&);                                                          \
  template struct Conv2d<S>;                                                                  \
  template struct BatchNorm2d<S>;                                                             \
  template struct Attention<S>;                                                               \
  template struct CatConv<S>;

SCOLIO_INSTANTIATE_LAYERS(float)
SCOLIO_INSTANTIATE_LAYERS(double)

}  // namespace scolio
