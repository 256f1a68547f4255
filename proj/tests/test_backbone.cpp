#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scolio/backbone.hpp"
#include "scolio/data.hpp"
#include "support.hpp"

using namespace scolio;
using scolio::test::random_tensor;

namespace {

std::vector<double> pooled(const TensorD& f) {
  const TensorD p = mean_spatial(f);
  return {p.data().begin(), p.data().end()};
}

TensorD as_batch(const Sample& s) {
  return reshape(s.image.clone(), Shape{1, 1, s.height(), s.width()});
}

}  // namespace

TEST_CASE("default backbone maps 64x64 to 64x8x8") {
  Rng rng(0);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  const Context<double> ctx{};
  const TensorD img = random_tensor({1, 1, 64, 64}, rng);
  const TensorD f = bb.forward(img, ctx);
  CHECK(f.shape() == Shape{1, 64, 8, 8});
  CHECK(bb.config().total_stride() == 8);
  CHECK(bb.config().out_channels() == 64);
  CHECK_THROWS_AS(bb.forward(random_tensor({1, 1, 60, 64}, rng), ctx), std::invalid_argument);
  CHECK_THROWS_AS(bb.forward(random_tensor({1, 2, 64, 64}, rng), ctx), std::invalid_argument);
}

TEST_CASE("eval forward is bit-identical across calls") {
  Rng rng(1);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  const TensorD img = random_tensor({2, 1, 32, 32}, rng);
  const Context<double> ctx{};
  const TensorD a = bb.forward(img, ctx);
  const TensorD b = bb.forward(img, ctx);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("dual path shares one parameter set") {
  Rng rng(2);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  const TensorD img = random_tensor({1, 1, 32, 32}, rng);
  const Context<double> ctx{};
  auto [f, ff] = bb.dual_path(img, ctx);
  CHECK(f.shape() == ff.shape());
  const TensorD direct = bb.forward(flip_width(img), ctx);
  CHECK(std::equal(ff.data().begin(), ff.data().end(), direct.data().begin()));

  ParamList<double> params;
  bb.collect("backbone", params);
  Index scalars = 0;
  for (const auto& p : params)
    if (p.trainable) scalars += p.tensor.numel();
  CHECK(scalars > 0);

  // mutating the single set changes both outputs
  TensorD w = params.front().tensor;
  for (double& v : w.data()) v *= 1.5;
  auto [f2, ff2] = bb.dual_path(img, ctx);
  CHECK(scolio::test::max_abs_diff(f.data(), f2.data()) > 0.0);
  CHECK(scolio::test::max_abs_diff(ff.data(), ff2.data()) > 0.0);
}

TEST_CASE("pooled features of a mirror-symmetric image agree") {
  Rng rng(3);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  SynthConfig cfg;
  cfg.noise = 0.0;
  cfg.skin_jitter = 0.0;
  const Sample s = synth_back(0.0, cfg, 5);
  const Context<double> ctx{};
  auto [f, ff] = bb.dual_path(as_batch(s), ctx);
  CHECK(scolio::test::max_abs_diff(pooled(f), pooled(ff)) < 1e-9);
}

TEST_CASE("pooled features of a strongly asymmetric image differ") {
  Rng rng(4);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  SynthConfig cfg;
  cfg.noise = 0.0;
  const Sample s = synth_back(60.0, cfg, 5);
  const Context<double> ctx{};
  auto [f, ff] = bb.dual_path(as_batch(s), ctx);
  CHECK(scolio::test::max_abs_diff(pooled(f), pooled(ff)) > 0.0);
}

TEST_CASE("train mode needs an rng for DropPath and updates BN buffers") {
  Rng rng(5);
  auto bb = Backbone<double>::init(BackboneConfig{}, rng);
  const TensorD img = random_tensor({2, 1, 16, 16}, rng);
  CHECK_THROWS_AS(bb.forward(img, Context<double>{nullptr, Mode::train, nullptr}),
                  std::logic_error);
  ParamList<double> params;
  bb.collect("b", params);
  const auto buffer = std::find_if(params.begin(), params.end(),
                                   [](const auto& p) { return !p.trainable; });
  REQUIRE(buffer != params.end());
  const std::vector<double> before(buffer->tensor.data().begin(), buffer->tensor.data().end());
  Rng drop(6);
  (void)bb.forward(img, Context<double>{nullptr, Mode::train, &drop});
  CHECK(scolio::test::max_abs_diff(before, buffer->tensor.data()) > 0.0);
}

TEST_CASE("config validation") {
  BackboneConfig cfg;
  cfg.stages.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = BackboneConfig{};
  cfg.drop_path = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
