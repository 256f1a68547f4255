#include "scolio/sfmm.hpp"

#include <stdexcept>

namespace scolio {

namespace {

template <typename Scalar>
Tensor<Scalar> batched(const Tensor<Scalar>& x) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  throw std::invalid_argument("sfmm expects C x H x W or N x C x H x W, got " +
                              shape_str(x.shape()));
}

}  // namespace

template <typename Scalar>
Sfmm<Scalar> Sfmm<Scalar>::init(Index channels, bool use_projections, Rng& rng) {
  Sfmm s;
  s.fuse_in_ = CatConv<Scalar>::init(channels, rng);
  s.fuse_out_ = CatConv<Scalar>::init(channels, rng);
  s.attn_ = Attention<Scalar>::init(AttentionConfig{channels, use_projections}, rng);
  return s;
}

template <typename Scalar>
Tensor<Scalar> Sfmm<Scalar>::forward(const Tensor<Scalar>& f, const Tensor<Scalar>& f_flipped,
                                     const Context<Scalar>& ctx, SfmmTrace<Scalar>* trace) {
  if (f.shape() != f_flipped.shape()) {
    throw std::invalid_argument("sfmm: shape mismatch " + shape_str(f.shape()) + " vs " +
                                shape_str(f_flipped.shape()));
  }
  const bool unbatched = f.rank() == 3;
  Tensor<Scalar> a = batched(f), b = batched(f_flipped);
  const Index h = a.dim(2), w = a.dim(3);

  Tensor<Scalar> fused = fuse_in_.forward(a, b, ctx);
  Tensor<Scalar> tokens = to_tokens(fused);
  Tensor<Scalar> keys = attn_.key(tokens, ctx);
  Tensor<Scalar> values = attn_.value(tokens, ctx);
  Tensor<Scalar> scores = scolio::attention_scores(attn_.query(to_tokens(a), ctx), keys, attn_.cfg.d);
  Tensor<Scalar> scores_f = scolio::attention_scores(attn_.query(to_tokens(b), ctx), keys, attn_.cfg.d);
  Tensor<Scalar> matched = from_tokens(matmul(scores, values), h, w);
  Tensor<Scalar> matched_f = from_tokens(matmul(scores_f, values), h, w);
  Tensor<Scalar> out = fuse_out_.forward(matched, matched_f, ctx);

  if (trace != nullptr) {
    trace->fused = fused;
    trace->scores = scores;
    trace->scores_flipped = scores_f;
    trace->matched = matched;
    trace->matched_flipped = matched_f;
  }
  if (unbatched) return reshape(out, f.shape());
  return out;
}

template <typename Scalar>
Tensor<Scalar> Sfmm<Scalar>::attention_scores(const Tensor<Scalar>& fq, const Tensor<Scalar>& fc,
                                              const Context<Scalar>& ctx) const {
  if (fq.shape() != fc.shape()) {
    throw std::invalid_argument("sfmm scores: shape mismatch " + shape_str(fq.shape()) + " vs " +
                                shape_str(fc.shape()));
  }
  return attn_.scores(to_tokens(batched(fq)), to_tokens(batched(fc)), ctx);
}

template <typename Scalar>
void Sfmm<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  fuse_in_.collect(prefix + ".fuse_in", out);
  fuse_out_.collect(prefix + ".fuse_out", out);
  attn_.collect(prefix + ".attn", out);
}

template class Sfmm<float>;
template class Sfmm<double>;

}  // namespace scolio
