#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scolio/layers.hpp"
#include "scolio/rng.hpp"

namespace scolio::test {

inline TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Loss builder for the gradient checker. It must route every tensor under
/// test through ctx.param so they are tracked when a tape is present.
using LossFn = std::function<TensorD(const Context<double>&)>;

struct GradCheck {
  double worst = 0.0;  // worst per-tensor relative error
  std::string where;   // tensor index holding the worst error
  int coordinates = 0;
};

/// Analytic gradient against central differences for the tensors in `wrt`.
/// Each tensor is compared on at most `per_tensor` coordinates (all when 0),
/// with error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
/// Below `floor` the comparison is absolute.
inline GradCheck check_gradients(const std::vector<TensorD>& wrt, const LossFn& loss,
                                 Mode mode = Mode::eval, std::uint64_t seed = 0,
                                 int per_tensor = 0, double h = 1e-6,
                                 double floor = 1e-3) {
  for (TensorD t : wrt) t.zero_grad();
  {
    Tape<double> tape;
    const Context<double> ctx{&tape, mode, nullptr};
    tape.backward(loss(ctx));
  }
  const Context<double> plain{nullptr, mode, nullptr};
  Rng pick(seed);
  GradCheck out;
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    TensorD t = wrt[i];
    const std::vector<double> analytic(t.grad_buffer().begin(), t.grad_buffer().end());
    std::vector<Index> coords(static_cast<std::size_t>(t.numel()));
    for (Index j = 0; j < t.numel(); ++j) coords[static_cast<std::size_t>(j)] = j;
    if (per_tensor > 0 && coords.size() > static_cast<std::size_t>(per_tensor)) {
      pick.shuffle(coords.begin(), coords.end());
      coords.resize(static_cast<std::size_t>(per_tensor));
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (Index j : coords) {
      const double x0 = t[j];
      t[j] = x0 + h;
      const double up = loss(plain).item();
      t[j] = x0 - h;
      const double down = loss(plain).item();
      t[j] = x0;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[static_cast<std::size_t>(j)];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
      ++out.coordinates;
    }
    const double err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    if (err >= out.worst) {
      out.worst = err;
      out.where = "tensor " + std::to_string(i);
    }
  }
  for (TensorD t : wrt) t.zero_grad();
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("scolio_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace scolio::test
