#include "scolio/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scolio {

std::string to_string(HeadKind kind) { return kind == HeadKind::ordinal ? "ordinal" : "softmax"; }

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "ordinal") return HeadKind::ordinal;
  if (s == "softmax") return HeadKind::softmax;
  throw std::invalid_argument("unknown head kind '" + s + "' (ordinal|softmax)");
}

std::string ModelConfig::variant_name() const {
  if (use_sfmm && head == HeadKind::ordinal) return "full";
  if (use_sfmm) return "baseline+sfmm";
  if (head == HeadKind::ordinal) return "baseline+orh";
  return "baseline";
}

template <typename Scalar>
SoftmaxHead<Scalar> SoftmaxHead<Scalar>::init(Index channels, int levels, Rng& rng) {
  SoftmaxHead h;
  h.weight = Tensor<Scalar>(Shape{levels, channels});
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(channels));
  for (Scalar& v : h.weight.data()) v = static_cast<Scalar>(rng.normal() * std_dev);
  h.bias = Tensor<Scalar>(Shape{levels});
  return h;
}

template <typename Scalar>
void SoftmaxHead<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, true});
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& probs, std::span<const int> ranks) {
  if (probs.rank() != 2 || probs.dim(0) != static_cast<Index>(ranks.size())) {
    throw std::invalid_argument("cross entropy: probs " + shape_str(probs.shape()) + " vs " +
                                std::to_string(ranks.size()) + " targets");
  }
  const Index n = probs.dim(0), k = probs.dim(1);
  Tensor<Scalar> onehot(probs.shape());
  for (Index i = 0; i < n; ++i) {
    const int r = ranks[static_cast<std::size_t>(i)];
    if (r < 1 || r > k) throw std::out_of_range("cross entropy: rank out of range");
    onehot[i * k + (r - 1)] = Scalar(1);
  }
  const Scalar lo = static_cast<Scalar>(kProbClamp);
  return scale(sum(mul(log(clamp(probs, lo, Scalar(1) - lo)), onehot)),
               Scalar(-1) / static_cast<Scalar>(n));
}

template <typename Scalar>
std::vector<double> BranchOutput<Scalar>::positives(Index sample) const {
  if (head != HeadKind::ordinal) return {};
  const Index k = probs.dim(1);
  std::vector<double> out(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    out[static_cast<std::size_t>(j)] = static_cast<double>(probs[(sample * k + j) * 2]);
  }
  return out;
}

template <typename Scalar>
std::vector<double> BranchOutput<Scalar>::level_scores(Index sample) const {
  if (head == HeadKind::ordinal) return level_probabilities(positives(sample));
  std::vector<double> out(static_cast<std::size_t>(levels));
  for (int j = 0; j < levels; ++j) {
    out[static_cast<std::size_t>(j)] = static_cast<double>(probs[sample * levels + j]);
  }
  return out;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::init(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.general_levels < 2 || cfg.fine_levels < 2) {
    throw std::invalid_argument("model needs at least two levels per branch");
  }
  Rng rng = Rng::derive(seed, 0x1417);
  Model m;
  m.cfg_ = cfg;
  m.backbone_ = Backbone<Scalar>::init(cfg.backbone, rng);
  const Index c = cfg.backbone.out_channels();
  for (auto [branch, levels] : {std::pair{&m.general_, cfg.general_levels},
                                std::pair{&m.fine_, cfg.fine_levels}}) {
    branch->levels = levels;
    if (cfg.use_sfmm) branch->sfmm = Sfmm<Scalar>::init(c, cfg.use_projections, rng);
    if (cfg.head == HeadKind::ordinal) {
      branch->ordinal = OrdinalHead<Scalar>::init(c, levels, rng);
    } else {
      branch->classifier = SoftmaxHead<Scalar>::init(c, levels, rng);
    }
  }
  return m;
}

template <typename Scalar>
BranchOutput<Scalar> Model<Scalar>::run_branch(Branch& b, const Tensor<Scalar>& f,
                                               const Tensor<Scalar>& ff,
                                               const Context<Scalar>& ctx) {
  BranchOutput<Scalar> out;
  out.levels = b.levels;
  out.head = cfg_.head;
  out.feature = b.sfmm ? b.sfmm->forward(f, ff, ctx) : f;
  if (b.ordinal) {
    auto pred = b.ordinal->forward(out.feature, ctx);
    out.logits = pred.logits;
    out.probs = pred.probs;
    out.ranks = std::move(pred.ranks);
  } else {
    Tensor<Scalar> pooled = mean_spatial(out.feature);
    out.logits = linear(pooled, ctx.param(b.classifier->weight), ctx.param(b.classifier->bias));
    out.probs = softmax(out.logits, -1);
    const Index n = out.probs.dim(0);
    out.ranks.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      auto row = out.probs.data().subspan(static_cast<std::size_t>(i * b.levels),
                                          static_cast<std::size_t>(b.levels));
      out.ranks[static_cast<std::size_t>(i)] =
          1 + static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

template <typename Scalar>
ModelOutput<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images,
                                           const Context<Scalar>& ctx) {
  ModelOutput<Scalar> out;
  if (cfg_.use_sfmm) {
    std::tie(out.features, out.features_flipped) = backbone_.dual_path(images, ctx);
  } else {
    out.features = backbone_.forward(images, ctx);
  }
  out.general = run_branch(general_, out.features, out.features_flipped, ctx);
  out.fine = run_branch(fine_, out.features, out.features_flipped, ctx);
  return out;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::branch_loss(const BranchOutput<Scalar>& out,
                                          std::span<const int> ranks) const {
  if (out.head == HeadKind::ordinal) return level_loss(out.probs, ranks);
  return softmax_cross_entropy(out.probs, ranks);
}

template <typename Scalar>
ParamList<Scalar> Model<Scalar>::parameters() const {
  ParamList<Scalar> out;
  backbone_.collect("backbone", out);
  for (auto [branch, name] : {std::pair{&general_, "general"}, std::pair{&fine_, "fine"}}) {
    const std::string prefix = name;
    if (branch->sfmm) branch->sfmm->collect(prefix + ".sfmm", out);
    if (branch->ordinal) branch->ordinal->collect(prefix + ".orh", out);
    if (branch->classifier) branch->classifier->collect(prefix + ".classifier", out);
  }
  return out;
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters()) {
    if (p.trainable) n += p.tensor.numel();
  }
  return n;
}

template <typename Scalar>
Sfmm<Scalar>& Model<Scalar>::sfmm(bool general) {
  Branch& b = general ? general_ : fine_;
  if (!b.sfmm) throw std::logic_error("model variant has no SFMM");
  return *b.sfmm;
}

template <typename To, typename From>
void copy_parameters(const Model<From>& src, Model<To>& dst) {
  auto from = src.parameters();
  auto to = dst.parameters();
  if (from.size() != to.size()) throw std::invalid_argument("copy_parameters: layout differs");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
      throw std::invalid_argument("copy_parameters: mismatch at " + from[i].name);
    }
    auto s = from[i].tensor.data();
    auto d = to[i].tensor.data();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<To>(s[j]);
  }
}

template struct SoftmaxHead<float>;
template struct SoftmaxHead<double>;
template Tensor<float> softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template Tensor<double> softmax_cross_entropy(const Tensor<double>&, std::span<const int>);
template struct BranchOutput<float>;
template struct BranchOutput<double>;
template class Model<float>;
template class Model<double>;
template void copy_parameters(const Model<double>&, Model<float>&);
template void copy_parameters(const Model<float>&, Model<double>&);
template void copy_parameters(const Model<double>&, Model<double>&);

}  // namespace scolio
