#pragma once

#include <span>
#include <string>
#include <vector>

#include "scolio/layers.hpp"

namespace scolio {

/// Ordinal label of one sample: K levels, rank r in [1, K], and the
/// (K-1) x 2 matrix whose row k is [1, 0] when r > k and [0, 1] otherwise.
struct OrdinalTarget {
  int levels = 0;
  int rank = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 2> rows;

  /// First column, one entry per binary classifier.
  std::vector<double> positives() const;
};

OrdinalTarget encode_rank(int rank, int levels);

/// 1 + sum_k round(p_k), rounding 0.5 up. Entries need not be monotone.
int decode_rank(std::span<const double> positive_probs);

/// Per-level pseudo-probabilities from the K-1 "rank > k" outputs:
/// p(j) = P(>j-1) - P(>j) with P(>0) = 1 and P(>K) = 0, negatives clamped to
/// zero and the vector renormalised.
std::vector<double> level_probabilities(std::span<const double> positive_probs);

struct LossWeights {
  double general = 0.5;
  double fine = 0.5;

  /// Parses "a:b" and normalises to sum 1.
  static LossWeights from_ratio(const std::string& ratio);
  /// Throws unless both are >= 0 and they sum to 1.
  void validate() const;
};

double joint_loss(double general, double fine, const LossWeights& w);

template <typename Scalar>
Tensor<Scalar> joint_loss(const Tensor<Scalar>& general, const Tensor<Scalar>& fine,
                          const LossWeights& w);

/// Probability clamp applied before every log.
inline constexpr double kProbClamp = 1e-12;

/// Mean over the batch of -(1/(K-1)) sum_k [Y_k1 log p_k1 + (1 - Y_k1) log(1 - p_k1)].
/// probs: [N x (K-1) x 2] softmax outputs; ranks: N ground-truth ranks.
template <typename Scalar>
Tensor<Scalar> level_loss(const Tensor<Scalar>& probs, std::span<const int> ranks);

/// Single-sample form against an encoded target; probs is [(K-1) x 2].
template <typename Scalar>
Tensor<Scalar> level_loss(const Tensor<Scalar>& probs, const OrdinalTarget& target);

template <typename Scalar>
struct OrdinalPrediction {
  Tensor<Scalar> logits;  // N x (K-1) x 2
  Tensor<Scalar> probs;   // N x (K-1) x 2, rows sum to 1
  std::vector<int> ranks; // decoded, in [1, K]

  std::vector<double> positives(Index sample) const;
};

/// Global average pool followed by K-1 independent two-way linear + softmax
/// classifiers.
template <typename Scalar>
class OrdinalHead {
 public:
  static OrdinalHead init(Index channels, int levels, Rng& rng);

  /// feat: [N x C x H x W] or [C x H x W].
  OrdinalPrediction<Scalar> forward(const Tensor<Scalar>& feat, const Context<Scalar>& ctx) const;
  /// Same head applied to already pooled features [N x C].
  OrdinalPrediction<Scalar> forward_pooled(const Tensor<Scalar>& pooled,
                                           const Context<Scalar>& ctx) const;

  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
  int levels() const { return levels_; }

  Tensor<Scalar> weight;  // (K-1) x 2 x C
  Tensor<Scalar> bias;    // (K-1) x 2

 private:
  int levels_ = 0;
};

}  // namespace scolio
