#pragma once

#include "scolio/tape.hpp"
#include "scolio/tensor.hpp"

namespace scolio {

// Differentiable free functions over Tensor. Every op records itself on the
// tape its inputs are attached to; inputs on no tape are treated as constants.
//
// Binary ops accept `b` either with the same shape as `a` or with a shape
// equal to the trailing dims of `a` (bias-style broadcast).

enum class ElementwiseOp { add, sub, mul, relu, log, exp, neg };

template <typename Scalar>
Tensor<Scalar> elementwise(ElementwiseOp op, const Tensor<Scalar>& a,
                           const Tensor<Scalar>& b = Tensor<Scalar>());

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);
/// Throws on any non-positive entry; clamp first.
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
/// Gradient passes where lo <= a <= hi and is zero elsewhere.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

/// [m x k] * [k x n], or batched [B x m x k] * [B x k x n]. A rank-2 `b` is
/// shared across the batch of a rank-3 `a`.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Swap the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);
/// x [.. x in] * w[out x in]^T + bias[out]
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// Max-subtracted softmax along `axis` (negative counts from the back).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1);

/// Concatenate along the channel axis of [C x H x W] or [N x C x H x W].
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Reverse the last axis.
template <typename Scalar>
Tensor<Scalar> flip_width(const Tensor<Scalar>& x);
/// Global average pool over the trailing H x W: [.. x C x H x W] -> [.. x C].
template <typename Scalar>
Tensor<Scalar> mean_spatial(const Tensor<Scalar>& x);

/// [N x C x H x W] -> [N x (H*W) x C], tokens in row-major (H, W) order.
template <typename Scalar>
Tensor<Scalar> to_tokens(const Tensor<Scalar>& x);
/// Inverse of to_tokens.
template <typename Scalar>
Tensor<Scalar> from_tokens(const Tensor<Scalar>& tokens, Index height, Index width);

}  // namespace scolio
