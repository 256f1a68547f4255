#include "scolio/explain.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace scolio {

double Heatmap::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

template <typename Scalar>
Heatmap gradcam_map(const Tensor<Scalar>& activation, const Tensor<Scalar>& grad) {
  if (activation.shape() != grad.shape()) {
    throw std::invalid_argument("gradcam: activation " + shape_str(activation.shape()) +
                                " vs gradient " + shape_str(grad.shape()));
  }
  const Index r = activation.rank();
  if (!(r == 3 || (r == 4 && activation.dim(0) == 1))) {
    throw std::invalid_argument("gradcam expects C x H x W activations, got " +
                                shape_str(activation.shape()));
  }
  const Index c = activation.dim(-3), h = activation.dim(-2), w = activation.dim(-1);
  const auto a = activation.data();
  const auto g = grad.data();
  Heatmap out;
  out.height = static_cast<int>(h);
  out.width = static_cast<int>(w);
  out.values.assign(static_cast<std::size_t>(h * w), 0.0);
  for (Index ch = 0; ch < c; ++ch) {
    const std::size_t base = static_cast<std::size_t>(ch * h * w);
    double weight = 0.0;
    for (Index i = 0; i < h * w; ++i) weight += static_cast<double>(g[base + i]);
    weight /= static_cast<double>(h * w);
    for (Index i = 0; i < h * w; ++i) {
      out.values[static_cast<std::size_t>(i)] += weight * static_cast<double>(a[base + i]);
    }
  }
  for (double& v : out.values) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
  const double mn = *lo, mx = *hi;
  for (double& v : out.values) v = mx > mn ? (v - mn) / (mx - mn) : 0.0;
  return out;
}

template <typename Scalar>
Tensor<Scalar> decoded_level_score(const BranchOutput<Scalar>& out) {
  if (out.ranks.empty()) throw std::invalid_argument("decoded_level_score: empty batch");
  const int rank = out.ranks.front();
  Tensor<Scalar> mask(out.logits.shape());
  if (out.head == HeadKind::ordinal) {
    // logits: N x (K-1) x 2; column 0 is "rank exceeds k"
    for (int k = 0; k + 1 < rank; ++k) mask[k * 2] = Scalar(1);
  } else {
    mask[rank - 1] = Scalar(1);
  }
  return sum(mul(out.logits, mask));
}

template <typename Scalar>
Heatmap gradcam(Model<Scalar>& model, const Tensor<Scalar>& image, const std::string& layer,
                const ScoreFn<Scalar>& score) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw std::invalid_argument("gradcam expects one 1 x c x h x w image, got " +
                                shape_str(image.shape()));
  }
  const bool has_sfmm = model.config().use_sfmm;
  const std::string name = layer.empty() ? (has_sfmm ? "general.sfmm" : "backbone") : layer;
  if (name != "backbone" && !(name == "general.sfmm" && has_sfmm)) {
    throw std::invalid_argument("unknown Grad-CAM layer '" + name + "'" +
                                (has_sfmm ? " (general.sfmm|backbone)" : " (backbone)"));
  }
  Tape<Scalar> tape;
  const Context<Scalar> ctx{&tape, Mode::eval, nullptr};
  const ModelOutput<Scalar> out = model.forward(image, ctx);
  const Tensor<Scalar>& act = name == "backbone" ? out.features : out.general.feature;
  const Tensor<Scalar> s = score ? score(out) : decoded_level_score(out.general);
  if (s.numel() != 1) throw std::invalid_argument("Grad-CAM score must be a scalar");

  Tensor<Scalar> grad;
  if (s.tracked()) {
    tape.backward(s);
    grad = act.grad_tensor();
  } else {
    grad = Tensor<Scalar>(act.shape());
  }
  Heatmap h = gradcam_map(act.detach(), grad);
  h.layer = name;
  h.target = score ? "custom" : "decoded-level score (rank " +
                                    std::to_string(out.general.ranks.front()) + ")";
  return h;
}

GrayImage overlay_image(const Heatmap& heat, const Sample& s, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (heat.height <= 0 || heat.width <= 0) throw std::invalid_argument("empty heatmap");
  check_bbox(s.bbox, s.width(), s.height());
  TensorD small(Shape{1, heat.height, heat.width}, heat.values);
  const TensorD up = resize_bilinear(small, s.bbox.h, s.bbox.w);
  TensorD blended = s.image.clone();
  auto dst = blended.data();
  auto hv = up.data();
  for (int y = 0; y < s.bbox.h; ++y) {
    for (int x = 0; x < s.bbox.w; ++x) {
      double& px = dst[static_cast<std::size_t>(s.bbox.y + y) * s.width() + (s.bbox.x + x)];
      px = (1.0 - alpha) * px + alpha * hv[static_cast<std::size_t>(y) * s.bbox.w + x];
    }
  }
  return to_gray(blended);
}

void overlay(const Heatmap& heat, const Sample& s, const std::filesystem::path& path,
             double alpha) {
  write_png(path, overlay_image(heat, s, alpha));
}

#define SCOLIO_INSTANTIATE_EXPLAIN(S)                                                      \
  template Heatmap gradcam_map(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> decoded_level_score(const BranchOutput<S>&);                          \
  template Heatmap gradcam(Model<S>&, const Tensor<S>&, const std::string&, const ScoreFn<S>&);

SCOLIO_INSTANTIATE_EXPLAIN(float)
SCOLIO_INSTANTIATE_EXPLAIN(double)

}  // namespace scolio
