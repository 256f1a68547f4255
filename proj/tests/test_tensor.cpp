#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scolio/ops.hpp"
#include "support.hpp"

using namespace scolio;
using scolio::test::check_gradients;
using scolio::test::random_tensor;

namespace {

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction and shape contract") {
  TensorD t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK(t.dim(0) == 2);
  CHECK_THROWS_AS(TensorD(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(t.dim(2), std::out_of_range);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
  CHECK(TensorD::scalar(4.0).item() == 4.0);
}

TEST_CASE("copies share storage, clone does not") {
  TensorD a(Shape{2}, std::vector<double>{1, 2});
  TensorD b = a;
  b[0] = 9;
  CHECK(a[0] == 9);
  TensorD c = a.clone();
  c[1] = -1;
  CHECK(a[1] == 2);
  CHECK_FALSE(c.same_storage(a));
}

TEST_CASE("elementwise examples") {
  const TensorD v(Shape{3}, std::vector<double>{-1, 0, 2});
  CHECK(values(relu(v)) == std::vector<double>{0, 0, 2});
  const TensorD a(Shape{2}, std::vector<double>{1, 2});
  const TensorD b(Shape{2}, std::vector<double>{3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});
  CHECK(values(sub(a, b)) == std::vector<double>{-2, -2});
  CHECK(values(mul(a, b)) == std::vector<double>{3, 8});
  CHECK(values(neg(a)) == std::vector<double>{-1, -2});
  CHECK(values(elementwise(ElementwiseOp::add, a, b)) == std::vector<double>{4, 6});
  CHECK(exp(TensorD(Shape{1}, 0.0))[0] == 1.0);
  CHECK(log(TensorD(Shape{1}, 1.0))[0] == 0.0);
}

TEST_CASE("elementwise errors") {
  const TensorD a(Shape{2}, 1.0);
  const TensorD c(Shape{3}, 1.0);
  try {
    (void)add(a, c);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(log(TensorD(Shape{2}, std::vector<double>{1, 0})), std::domain_error);
  CHECK_THROWS_AS(log(TensorD(Shape{1}, -2.0)), std::domain_error);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::mul, a), std::invalid_argument);
}

TEST_CASE("bias-style broadcast along leading dims") {
  const TensorD x(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const TensorD b(Shape{3}, std::vector<double>{10, 20, 30});
  CHECK(values(add(x, b)) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK_THROWS_AS(add(x, TensorD(Shape{2}, 0.0)), std::invalid_argument);
}

TEST_CASE("matmul examples") {
  const TensorD eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  const TensorD m(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(values(matmul(eye, m)) == values(m));
  const TensorD row(Shape{1, 2}, std::vector<double>{1, 2});
  const TensorD col(Shape{2, 1}, std::vector<double>{3, 4});
  CHECK(matmul(row, col).item() == 11.0);
  CHECK_THROWS_AS(matmul(row, row), std::invalid_argument);
}

TEST_CASE("softmax examples") {
  const auto s0 = softmax(TensorD(Shape{2}, std::vector<double>{0, 0}));
  CHECK(values(s0) == std::vector<double>{0.5, 0.5});
  const auto big = softmax(TensorD(Shape{2}, std::vector<double>{1000, 1000}));
  CHECK(values(big) == std::vector<double>{0.5, 0.5});
  const auto s = softmax(TensorD(Shape{2}, std::vector<double>{std::log(1.0), std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(softmax(TensorD(Shape{2}, std::vector<double>{0, std::nan("")})),
                  std::domain_error);
}

TEST_CASE("softmax slices sum to one along any axis") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD x = random_tensor({3, 4, 5}, rng, 10.0);
    for (Index axis : {0, 1, 2}) {
      const TensorD s = softmax(x, axis);
      for (double v : s.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    const TensorD s = softmax(x, -1);
    for (Index r = 0; r < 12; ++r) {
      double total = 0.0;
      for (Index c = 0; c < 5; ++c) total += s[r * 5 + c];
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("concat_channels examples") {
  const TensorD a(Shape{1, 1, 1}, 1.0);
  const TensorD b(Shape{1, 1, 1}, 2.0);
  const TensorD c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 1, 1});
  CHECK(values(c) == std::vector<double>{1, 2});
  CHECK(concat_channels(TensorD(Shape{8, 4, 4}), TensorD(Shape{8, 4, 4})).shape() ==
        Shape{16, 4, 4});
  CHECK_THROWS_AS(concat_channels(TensorD(Shape{8, 4, 4}), TensorD(Shape{8, 4, 3})),
                  std::invalid_argument);
}

TEST_CASE("flip_width examples") {
  const TensorD v(Shape{3}, std::vector<double>{1, 2, 3});
  CHECK(values(flip_width(v)) == std::vector<double>{3, 2, 1});
  Rng rng(11);
  const TensorD x = random_tensor({2, 3, 5, 7}, rng);
  CHECK(values(flip_width(flip_width(x))) == values(x));
}

TEST_CASE("backward examples") {
  TensorD x = TensorD::scalar(3.0);
  {
    Tape<double> tape;
    const TensorD tx = tape.track(x);
    tape.backward(mul(tx, tx));
  }
  CHECK(x.grad()[0] == 6.0);

  Rng rng(5);
  TensorD s = random_tensor({6}, rng);
  {
    Tape<double> tape;
    tape.backward(sum(softmax(tape.track(s))));
  }
  for (double g : s.grad()) CHECK(std::abs(g) < 1e-15);

  Tape<double> tape;
  const TensorD t = tape.track(random_tensor({2}, rng));
  CHECK_THROWS_AS(tape.backward(relu(t)), std::invalid_argument);
}

TEST_CASE("leaf gradients accumulate until zeroed") {
  TensorD x = TensorD::scalar(2.0);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(scale(tape.track(x), 3.0));
  }
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad_buffer()[0] == 0.0);
}

TEST_CASE("every ancestor is visited once per backward") {
  TensorD x = TensorD::scalar(1.5);
  Tape<double> tape;
  const TensorD tx = tape.track(x);
  const TensorD y = add(tx, tx);
  const TensorD z = mul(y, y);  // 4 x^2
  tape.backward(z);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  CHECK(y.grad()[0] == doctest::Approx(6.0));
  CHECK(tape.size() == 2);
  tape.clear();
  CHECK(tape.size() == 0);
}

TEST_CASE("relu gradient at [-1, 2] matches central differences") {
  TensorD a(Shape{2}, std::vector<double>{-1, 2});
  const auto r = check_gradients({a}, [&](const Context<double>& ctx) {
    return sum(relu(ctx.param(a)));
  });
  CHECK(r.worst < 1e-9);
  Tape<double> tape;
  tape.backward(sum(relu(tape.track(a))));
  CHECK(values(a.grad_tensor()) == std::vector<double>{0, 1});
}

TEST_CASE("op gradients match central differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    TensorD a = random_tensor({3, 4}, rng);
    TensorD b = random_tensor({3, 4}, rng);
    TensorD bias = random_tensor({4}, rng);
    TensorD m = random_tensor({4, 5}, rng);
    TensorD w = random_tensor({3, 4}, rng);
    TensorD pos(Shape{3, 4});
    for (double& v : pos.data()) v = 0.5 + rng.uniform();
    TensorD img = random_tensor({2, 3, 4}, rng);
    TensorD img2 = random_tensor({1, 3, 4}, rng);
    TensorD weights = random_tensor({3, 3, 4}, rng);

    auto check = [](const std::vector<TensorD>& wrt, const scolio::test::LossFn& f) {
      return check_gradients(wrt, f).worst;
    };
    CHECK(check({a, b}, [&](auto& c) { return sum(mul(add(c.param(a), c.param(b)), w)); }) < 1e-5);
    CHECK(check({a, b}, [&](auto& c) { return sum(mul(sub(c.param(a), c.param(b)), w)); }) < 1e-5);
    CHECK(check({a, b}, [&](auto& c) { return sum(mul(mul(c.param(a), c.param(b)), w)); }) < 1e-5);
    CHECK(check({a, bias}, [&](auto& c) { return sum(mul(add(c.param(a), c.param(bias)), w)); }) <
          1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(relu(c.param(a)), w)); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(neg(c.param(a)), w)); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(exp(c.param(a)), w)); }) < 1e-5);
    CHECK(check({pos}, [&](auto& c) { return sum(mul(log(c.param(pos)), w)); }) < 1e-5);
    CHECK(check({a, m}, [&](auto& c) { return sum(mul(matmul(c.param(a), c.param(m)),
                                                      TensorD(Shape{3, 5}, 0.7))); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(softmax(c.param(a)), w)); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(softmax(c.param(a), 0), w)); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(flip_width(c.param(a)), w)); }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return sum(mul(transpose(transpose(c.param(a))), w)); }) <
          1e-5);
    CHECK(check({img, img2}, [&](auto& c) {
      return sum(mul(concat_channels(c.param(img), c.param(img2)), weights));
    }) < 1e-5);
    CHECK(check({img}, [&](auto& c) {
      return sum(mul(mean_spatial(c.param(img)), TensorD(Shape{2}, std::vector<double>{1, -2})));
    }) < 1e-5);
    CHECK(check({a}, [&](auto& c) { return mean(mul(c.param(a), c.param(a))); }) < 1e-5);
  }
}

TEST_CASE("flip gradient equals the flipped weights") {
  Rng rng(2);
  TensorD x = random_tensor({4, 6}, rng);
  const TensorD w = random_tensor({4, 6}, rng);
  Tape<double> tape;
  tape.backward(sum(mul(flip_width(tape.track(x)), w)));
  CHECK(values(x.grad_tensor()) == values(flip_width(w)));
}

TEST_CASE("concat backward restores ones to both inputs") {
  TensorD a(Shape{2, 3, 3}, 0.3);
  TensorD b(Shape{1, 3, 3}, -0.2);
  Tape<double> tape;
  tape.backward(sum(concat_channels(tape.track(a), tape.track(b))));
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);
}

TEST_CASE("matmul gradients follow G B^T and A^T G") {
  Rng rng(9);
  TensorD a = random_tensor({3, 2}, rng);
  TensorD b = random_tensor({2, 4}, rng);
  Tape<double> tape;
  tape.backward(sum(matmul(tape.track(a), tape.track(b))));
  const auto A = a.matrix(3, 2);
  const auto B = b.matrix(2, 4);
  const Eigen::MatrixXd G = Eigen::MatrixXd::Ones(3, 4);
  const Eigen::MatrixXd da = G * B.transpose();
  const Eigen::MatrixXd db = A.transpose() * G;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(a.grad()[i * 2 + j] == doctest::Approx(da(i, j)));
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(b.grad()[i * 4 + j] == doctest::Approx(db(i, j)));
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(42);
    TensorD a = random_tensor({5, 5}, rng);
    TensorD b = random_tensor({5, 5}, rng);
    Tape<double> tape;
    tape.backward(sum(softmax(matmul(tape.track(a), relu(tape.track(b))))));
    std::vector<double> g(a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("tokens round-trip") {
  Rng rng(4);
  const TensorD x = random_tensor({2, 3, 4, 5}, rng);
  const TensorD t = to_tokens(x);
  CHECK(t.shape() == Shape{2, 20, 3});
  CHECK(t[1 * 3 + 2] == x[2 * 20 + 1]);  // token (0,1), channel 2
  CHECK(values(from_tokens(t, 4, 5)) == values(x));
}

TEST_CASE("float mode works for inference") {
  const TensorF a(Shape{2}, std::vector<float>{1.f, 3.f});
  const TensorF s = softmax(a);
  CHECK(s[0] + s[1] == doctest::Approx(1.0f));
}
