#pragma once

#include <string>
#include <vector>

#include "scolio/ops.hpp"
#include "scolio/rng.hpp"

namespace scolio {

enum class Mode { train, eval };

/// Per-forward state: the tape to record on (null for inference), the mode
/// for BN/DropPath, and the stream DropPath masks are drawn from.
template <typename Scalar>
struct Context {
  Tape<Scalar>* tape = nullptr;
  Mode mode = Mode::eval;
  Rng* rng = nullptr;

  bool training() const { return mode == Mode::train; }
  Tensor<Scalar> param(const Tensor<Scalar>& p) const { return tape ? tape->track(p) : p; }
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
  bool trainable = true;
};

template <typename Scalar>
using ParamList = std::vector<NamedTensor<Scalar>>;

// ---- tensor-level layer ops ------------------------------------------------

/// Direct cross-correlation (no kernel flip) of x [N x Cin x H x W] (or an
/// unbatched [Cin x H x W]) with weight [Cout x Cin x kh x kw]. `bias` may be
/// undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index padding);

/// Per-channel normalization over (N, H, W). Train mode normalizes with batch
/// statistics and updates the running buffers in place (unbiased variance);
/// eval mode uses the running buffers only.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                           Tensor<Scalar>& running_var, Mode mode, Scalar momentum, Scalar eps);

/// Row-stochastic softmax(Q K^T / sqrt(d)); q [.. x Tq x d], k [.. x Tk x d].
template <typename Scalar>
Tensor<Scalar> attention_scores(const Tensor<Scalar>& q, const Tensor<Scalar>& k, Index d);

/// softmax(Q K^T / sqrt(d)) V
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         Index d);

struct DropPathConfig {
  double drop_prob = 0.1;
  Mode mode = Mode::eval;
};

/// x + residual in eval mode; x + mask * residual / (1 - p) in train mode,
/// with one Bernoulli(1 - p) draw per sample along the leading axis.
template <typename Scalar>
Tensor<Scalar> droppath(const Tensor<Scalar>& x, const Tensor<Scalar>& residual,
                        const DropPathConfig& cfg, Rng& rng);

// ---- parameterised modules -------------------------------------------------

template <typename Scalar>
struct Conv2d {
  Tensor<Scalar> weight;  // Cout x Cin x k x k
  Tensor<Scalar> bias;    // Cout
  Index stride = 1;
  Index padding = 0;

  /// He-normal weights, zero bias; padding keeps H x W at stride 1.
  static Conv2d init(Index in_channels, Index out_channels, Index kernel, Index stride, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

template <typename Scalar>
struct BatchNorm2d {
  Tensor<Scalar> gamma, beta;
  Tensor<Scalar> running_mean, running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  static BatchNorm2d init(Index channels, Scalar eps = Scalar(1e-5), Scalar momentum = Scalar(0.1));

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Context<Scalar>& ctx);
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

struct AttentionConfig {
  Index d = 0;                   // channel dim, the sqrt(d) denominator
  bool use_projections = false;  // learned d x d Wq, Wk, Wv
};

template <typename Scalar>
struct Attention {
  AttentionConfig cfg;
  Tensor<Scalar> wq, wk, wv;  // defined only with use_projections

  static Attention init(const AttentionConfig& cfg, Rng& rng);

  /// q [N x Tq x d], kv [N x Tk x d]; K and V both come from `kv`.
  Tensor<Scalar> forward(const Tensor<Scalar>& q, const Tensor<Scalar>& kv,
                         const Context<Scalar>& ctx) const;
  Tensor<Scalar> scores(const Tensor<Scalar>& q, const Tensor<Scalar>& kv,
                        const Context<Scalar>& ctx) const;

  // Identity when projections are disabled.
  Tensor<Scalar> query(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const;
  Tensor<Scalar> key(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const;
  Tensor<Scalar> value(const Tensor<Scalar>& x, const Context<Scalar>& ctx) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

/// cat -> 1x1 conv (2C -> C) -> 3x3 conv (C -> C, pad 1) -> BN -> ReLU
template <typename Scalar>
struct CatConv {
  Conv2d<Scalar> reduce;
  Conv2d<Scalar> spatial;
  BatchNorm2d<Scalar> bn;

  static CatConv init(Index channels, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                         const Context<Scalar>& ctx);
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

}  // namespace scolio
