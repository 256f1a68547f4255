#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scolio/data.hpp"
#include "scolio/model.hpp"

namespace scolio {

/// Grad-CAM map at the resolution of the chosen feature map, values in [0, 1].
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major
  std::string layer;
  std::string target;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
};

/// ReLU(sum_c mean(grad_c) * act_c), min-max normalized. A flat map (all
/// values equal) comes back as zeros. act and grad: C x H x W, or 1 x C x H x W.
template <typename Scalar>
Heatmap gradcam_map(const Tensor<Scalar>& activation, const Tensor<Scalar>& grad);

/// Sum of the positive-class logits of every ordinal classifier below the
/// decoded rank of sample 0 (zero when the rank is 1). Softmax heads use the
/// logit of the predicted level.
template <typename Scalar>
Tensor<Scalar> decoded_level_score(const BranchOutput<Scalar>& out);

template <typename Scalar>
using ScoreFn = std::function<Tensor<Scalar>(const ModelOutput<Scalar>&)>;

/// Layers: "general.sfmm" (default when the model has an SFMM) and
/// "backbone" (default otherwise). `image`: 1 x 1 x h x w.
template <typename Scalar>
Heatmap gradcam(Model<Scalar>& model, const Tensor<Scalar>& image, const std::string& layer = "",
                const ScoreFn<Scalar>& score = {});

/// Heat upsampled over the bbox and blended as (1 - alpha) * img + alpha * heat.
GrayImage overlay_image(const Heatmap& heat, const Sample& s, double alpha = 0.4);
void overlay(const Heatmap& heat, const Sample& s, const std::filesystem::path& path,
             double alpha = 0.4);

}  // namespace scolio
