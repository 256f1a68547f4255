#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scolio/backbone.hpp"
#include "scolio/orh.hpp"
#include "scolio/sfmm.hpp"

namespace scolio {

enum class HeadKind { ordinal, softmax };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);

/// Network layout. The default is the full dual-path model; turning off
/// `use_sfmm` gives a single-path network on the original image only, and
/// `head = softmax` replaces the ordinal head with a plain K-way classifier.
struct ModelConfig {
  BackboneConfig backbone;
  bool use_sfmm = true;
  bool use_projections = false;
  HeadKind head = HeadKind::ordinal;
  int general_levels = 4;
  int fine_levels = 10;

  std::string variant_name() const;
};

/// Plain K-way classifier: global average pool -> linear -> softmax.
template <typename Scalar>
struct SoftmaxHead {
  Tensor<Scalar> weight;  // K x C
  Tensor<Scalar> bias;    // K

  static SoftmaxHead init(Index channels, int levels, Rng& rng);
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

/// Mean over the batch of -log p[r], probabilities clamped like level_loss.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& probs, std::span<const int> ranks);

template <typename Scalar>
struct BranchOutput {
  int levels = 0;
  HeadKind head = HeadKind::ordinal;
  Tensor<Scalar> feature;  // SFMM output (or backbone output without SFMM)
  Tensor<Scalar> logits;   // ordinal: N x (K-1) x 2; softmax: N x K
  Tensor<Scalar> probs;
  std::vector<int> ranks;

  /// Per-level scores used for ROC curves.
  std::vector<double> level_scores(Index sample) const;
  /// Ordinal: first softmax column per classifier. Empty for softmax heads.
  std::vector<double> positives(Index sample) const;
};

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> features;          // F
  Tensor<Scalar> features_flipped;  // F^f (undefined without SFMM)
  BranchOutput<Scalar> general;
  BranchOutput<Scalar> fine;
};

template <typename Scalar>
class Model {
 public:
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  /// images: N x c x h x w.
  ModelOutput<Scalar> forward(const Tensor<Scalar>& images, const Context<Scalar>& ctx);

  /// Loss of one branch against ground-truth ranks (ordinal or cross-entropy).
  Tensor<Scalar> branch_loss(const BranchOutput<Scalar>& out, std::span<const int> ranks) const;

  /// Every named tensor, trainable parameters and BN buffers alike.
  ParamList<Scalar> parameters() const;
  /// Number of trainable scalars.
  Index parameter_count() const;

  const ModelConfig& config() const { return cfg_; }
  Backbone<Scalar>& backbone() { return backbone_; }
  Sfmm<Scalar>& sfmm(bool general);

 private:
  struct Branch {
    std::optional<Sfmm<Scalar>> sfmm;
    std::optional<OrdinalHead<Scalar>> ordinal;
    std::optional<SoftmaxHead<Scalar>> classifier;
    int levels = 0;
  };

  BranchOutput<Scalar> run_branch(Branch& b, const Tensor<Scalar>& f, const Tensor<Scalar>& ff,
                                  const Context<Scalar>& ctx);

  ModelConfig cfg_;
  Backbone<Scalar> backbone_;
  Branch general_;
  Branch fine_;
};

/// Copy every named tensor of `src` into `dst` (same config), converting dtype.
template <typename To, typename From>
void copy_parameters(const Model<From>& src, Model<To>& dst);

/// 32-bit inference copy of a trained model.
template <typename To, typename From>
Model<To> cast_model(const Model<From>& src) {
  Model<To> dst = Model<To>::init(src.config(), 0);
  copy_parameters(src, dst);
  return dst;
}

}  // namespace scolio
