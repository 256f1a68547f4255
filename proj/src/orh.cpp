#include "scolio/orh.hpp"

#include <cmath>
#include <stdexcept>

namespace scolio {

std::vector<double> OrdinalTarget::positives() const {
  std::vector<double> out(static_cast<std::size_t>(rows.rows()));
  for (Index k = 0; k < rows.rows(); ++k) out[static_cast<std::size_t>(k)] = rows(k, 0);
  return out;
}

OrdinalTarget encode_rank(int rank, int levels) {
  if (levels < 2) throw std::invalid_argument("ordinal target needs K >= 2");
  if (rank < 1 || rank > levels) {
    throw std::out_of_range("rank " + std::to_string(rank) + " outside [1, " +
                            std::to_string(levels) + "]");
  }
  OrdinalTarget t;
  t.levels = levels;
  t.rank = rank;
  t.rows.resize(levels - 1, 2);
  for (int k = 1; k < levels; ++k) {
    const bool above = rank > k;
    t.rows(k - 1, 0) = above ? 1.0 : 0.0;
    t.rows(k - 1, 1) = above ? 0.0 : 1.0;
  }
  return t;
}

int decode_rank(std::span<const double> positive_probs) {
  int r = 1;
  for (double p : positive_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::out_of_range("decode_rank: probability " + std::to_string(p) +
                              " outside [0, 1]");
    }
    if (p >= 0.5) ++r;
  }
  return r;
}

std::vector<double> level_probabilities(std::span<const double> positive_probs) {
  const std::size_t k = positive_probs.size() + 1;
  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double above_prev = j == 0 ? 1.0 : positive_probs[j - 1];
    const double above_this = j + 1 == k ? 0.0 : positive_probs[j];
    p[j] = std::max(0.0, above_prev - above_this);
    total += p[j];
  }
  if (total > 0.0) {
    for (double& v : p) v /= total;
  } else {
    for (double& v : p) v = 1.0 / static_cast<double>(k);
  }
  return p;
}

LossWeights LossWeights::from_ratio(const std::string& ratio) {
  const auto colon = ratio.find(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("loss ratio must look like a:b, got '" + ratio + "'");
  }
  double a = 0, b = 0;
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string sa = ratio.substr(0, colon), sb = ratio.substr(colon + 1);
    a = std::stod(sa, &used_a);
    b = std::stod(sb, &used_b);
    if (used_a != sa.size() || used_b != sb.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw std::invalid_argument("loss ratio must look like a:b, got '" + ratio + "'");
  }
  if (a < 0 || b < 0 || a + b <= 0) {
    throw std::invalid_argument("loss ratio needs non-negative parts with a positive sum");
  }
  LossWeights w{a / (a + b), b / (a + b)};
  return w;
}

void LossWeights::validate() const {
  if (general < 0 || fine < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (std::abs(general + fine - 1.0) > 1e-12) {
    throw std::invalid_argument("loss weights must sum to 1, got " +
                                std::to_string(general + fine));
  }
}

double joint_loss(double general, double fine, const LossWeights& w) {
  w.validate();
  return w.general * general + w.fine * fine;
}

template <typename Scalar>
Tensor<Scalar> joint_loss(const Tensor<Scalar>& general, const Tensor<Scalar>& fine,
                          const LossWeights& w) {
  w.validate();
  return add(scale(general, static_cast<Scalar>(w.general)),
             scale(fine, static_cast<Scalar>(w.fine)));
}

template <typename Scalar>
Tensor<Scalar> level_loss(const Tensor<Scalar>& probs, std::span<const int> ranks) {
  if (probs.rank() != 3 || probs.dim(2) != 2 || probs.dim(0) != static_cast<Index>(ranks.size())) {
    throw std::invalid_argument("level_loss: probs " + shape_str(probs.shape()) + " vs " +
                                std::to_string(ranks.size()) + " targets");
  }
  const Index n = probs.dim(0), classifiers = probs.dim(1);
  const int levels = static_cast<int>(classifiers) + 1;
  Tensor<Scalar> y(probs.shape());
  for (Index i = 0; i < n; ++i) {
    const OrdinalTarget t = encode_rank(ranks[static_cast<std::size_t>(i)], levels);
    for (Index k = 0; k < classifiers; ++k) {
      y[(i * classifiers + k) * 2] = static_cast<Scalar>(t.rows(k, 0));
      y[(i * classifiers + k) * 2 + 1] = static_cast<Scalar>(t.rows(k, 1));
    }
  }
  const Scalar lo = static_cast<Scalar>(kProbClamp);
  Tensor<Scalar> logp = log(clamp(probs, lo, Scalar(1) - lo));
  return scale(sum(mul(logp, y)), Scalar(-1) / static_cast<Scalar>(n * classifiers));
}

template <typename Scalar>
Tensor<Scalar> level_loss(const Tensor<Scalar>& probs, const OrdinalTarget& target) {
  if (probs.rank() != 2 || probs.dim(0) != target.levels - 1 || probs.dim(1) != 2) {
    throw std::invalid_argument("level_loss: prediction " + shape_str(probs.shape()) +
                                " does not match K=" + std::to_string(target.levels));
  }
  const int r = target.rank;
  return level_loss(reshape(probs, Shape{1, probs.dim(0), 2}), std::span<const int>(&r, 1));
}

template <typename Scalar>
std::vector<double> OrdinalPrediction<Scalar>::positives(Index sample) const {
  const Index k = probs.dim(1);
  std::vector<double> out(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    out[static_cast<std::size_t>(j)] = static_cast<double>(probs[(sample * k + j) * 2]);
  }
  return out;
}

template <typename Scalar>
OrdinalHead<Scalar> OrdinalHead<Scalar>::init(Index channels, int levels, Rng& rng) {
  if (levels < 2) throw std::invalid_argument("ordinal head needs K >= 2");
  OrdinalHead h;
  h.levels_ = levels;
  h.weight = Tensor<Scalar>(Shape{levels - 1, 2, channels});
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(channels));
  for (Scalar& v : h.weight.data()) v = static_cast<Scalar>(rng.normal() * std_dev);
  h.bias = Tensor<Scalar>(Shape{levels - 1, 2});
  return h;
}

template <typename Scalar>
OrdinalPrediction<Scalar> OrdinalHead<Scalar>::forward(const Tensor<Scalar>& feat,
                                                       const Context<Scalar>& ctx) const {
  Tensor<Scalar> pooled = mean_spatial(feat);
  if (pooled.rank() == 1) pooled = reshape(pooled, Shape{1, pooled.dim(0)});
  return forward_pooled(pooled, ctx);
}

template <typename Scalar>
OrdinalPrediction<Scalar> OrdinalHead<Scalar>::forward_pooled(const Tensor<Scalar>& pooled,
                                                              const Context<Scalar>& ctx) const {
  const Index classifiers = levels_ - 1;
  const Index channels = weight.dim(2);
  if (pooled.rank() != 2 || pooled.dim(1) != channels) {
    throw std::invalid_argument("ordinal head expects N x " + std::to_string(channels) +
                                " features, got " + shape_str(pooled.shape()));
  }
  Tensor<Scalar> w = reshape(ctx.param(weight), Shape{2 * classifiers, channels});
  Tensor<Scalar> b = reshape(ctx.param(bias), Shape{2 * classifiers});
  const Index n = pooled.dim(0);
  OrdinalPrediction<Scalar> pred;
  pred.logits = reshape(linear(pooled, w, b), Shape{n, classifiers, 2});
  pred.probs = softmax(pred.logits, -1);
  pred.ranks.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto pos = pred.positives(i);
    pred.ranks[static_cast<std::size_t>(i)] = decode_rank(pos);
  }
  return pred;
}

template <typename Scalar>
void OrdinalHead<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, true});
}

#define SCOLIO_INSTANTIATE_ORH(S)                                                          \
  template Tensor<S> joint_loss(const Tensor<S>&, const Tensor<S>&, const LossWeights&);   \
  template Tensor<S> level_loss(const Tensor<S>&, std::span<const int>);                   \
  template Tensor<S> level_loss(const Tensor<S>&, const OrdinalTarget&);                   \
  template struct OrdinalPrediction<S>;                                                    \
  template class OrdinalHead<S>;

SCOLIO_INSTANTIATE_ORH(float)
SCOLIO_INSTANTIATE_ORH(double)

}  // namespace scolio
