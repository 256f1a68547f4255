#pragma once

#include "scolio/layers.hpp"

namespace scolio {

/// Intermediates of one SFMM pass, kept for inspection.
template <typename Scalar>
struct SfmmTrace {
  Tensor<Scalar> fused;          // F^c
  Tensor<Scalar> scores;         // softmax(F F^c^T / sqrt d), N x T x T
  Tensor<Scalar> scores_flipped; // same with F^f as the query
  Tensor<Scalar> matched;        // F'
  Tensor<Scalar> matched_flipped;// F^f'
};

/// Symmetric feature matching: fuse F and F^f with a cat-conv into F^c, use F
/// and F^f as queries against F^c (key and value), fuse the two matched maps
/// with a second cat-conv. Shape is preserved end to end.
template <typename Scalar>
class Sfmm {
 public:
  static Sfmm init(Index channels, bool use_projections, Rng& rng);

  /// f, f_flipped: [N x C x H x W] or unbatched [C x H x W].
  Tensor<Scalar> forward(const Tensor<Scalar>& f, const Tensor<Scalar>& f_flipped,
                         const Context<Scalar>& ctx, SfmmTrace<Scalar>* trace = nullptr);

  /// Row-stochastic matching scores of query map `fq` against fused map `fc`.
  Tensor<Scalar> attention_scores(const Tensor<Scalar>& fq, const Tensor<Scalar>& fc,
                                  const Context<Scalar>& ctx) const;

  void collect(const std::string& prefix, ParamList<Scalar>& out) const;

  CatConv<Scalar>& fuse_in() { return fuse_in_; }
  CatConv<Scalar>& fuse_out() { return fuse_out_; }
  const Attention<Scalar>& attention() const { return attn_; }

 private:
  CatConv<Scalar> fuse_in_;
  CatConv<Scalar> fuse_out_;
  Attention<Scalar> attn_;
};

}  // namespace scolio
