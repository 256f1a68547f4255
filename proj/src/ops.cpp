#include "scolio/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace scolio {

namespace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapM = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const Mat<Scalar>>;

template <typename Scalar>
bool needs_grad(const Tensor<Scalar>& t) {
  return t.defined() && t.tracked();
}

// Number of elements of `b` when it is broadcastable onto `a`.
template <typename Scalar>
Index broadcast_len(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " +
                                shape_str(sb));
  }
  return b.numel();
}

template <typename Scalar, typename F, typename DF>
Tensor<Scalar> unary(const Tensor<Scalar>& a, F f, DF df) {
  Tensor<Scalar> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return detail::record<Scalar>(out, {&a}, [a, df](const Tensor<Scalar>& o) {
    if (!needs_grad(a)) return;
    auto g = o.grad();
    auto ga = a.grad_buffer();
    auto x = a.data();
    auto y = o.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

void check_axis(Index& axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax axis out of range");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Index nb = broadcast_len(a, b, "add");
  Tensor<Scalar> out(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i % nb];
  return detail::record<Scalar>(out, {&a, &b}, [a, b, nb](const Tensor<Scalar>& o) {
    auto g = o.grad();
    if (needs_grad(a)) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs_grad(b)) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Index nb = broadcast_len(a, b, "sub");
  Tensor<Scalar> out(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - z[i % nb];
  return detail::record<Scalar>(out, {&a, &b}, [a, b, nb](const Tensor<Scalar>& o) {
    auto g = o.grad();
    if (needs_grad(a)) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs_grad(b)) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Index nb = broadcast_len(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i % nb];
  return detail::record<Scalar>(out, {&a, &b}, [a, b, nb](const Tensor<Scalar>& o) {
    auto g = o.grad();
    auto x = a.data();
    auto z = b.data();
    if (needs_grad(a)) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[i % nb];
    }
    if (needs_grad(b)) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * x[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  return unary(a, [](Scalar v) { return -v; }, [](Scalar, Scalar) { return Scalar(-1); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return unary(
      a, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  for (Scalar v : a.data()) {
    if (!(v > Scalar(0))) {
      throw std::domain_error("log of non-positive value " + std::to_string(v));
    }
  }
  return unary(
      a, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return unary(
      a, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return unary(
      a, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      a, [lo, hi](Scalar v) { return std::clamp(v, lo, hi); },
      [lo, hi](Scalar v, Scalar) { return (v >= lo && v <= hi) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> elementwise(ElementwiseOp op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub ||
                      op == ElementwiseOp::mul;
  if (binary && !b.defined()) throw std::invalid_argument("binary elementwise op needs two inputs");
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::neg: return neg(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Scalar s = a.vec().sum();
  Tensor<Scalar> out = Tensor<Scalar>::scalar(s);
  return detail::record<Scalar>(out, {&a}, [a](const Tensor<Scalar>& o) {
    if (!needs_grad(a)) return;
    const Scalar g = o.grad()[0];
    for (Scalar& v : a.grad_buffer()) v += g;
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " cannot become " +
                                shape_str(shape));
  }
  std::vector<Scalar> copy(a.data().begin(), a.data().end());
  Tensor<Scalar> out(std::move(shape), std::move(copy));
  return detail::record<Scalar>(out, {&a}, [a](const Tensor<Scalar>& o) {
    if (!needs_grad(a)) return;
    auto g = o.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const bool batched = a.rank() == 3;
  if (!(a.rank() == 2 || batched) || !(b.rank() == 2 || (batched && b.rank() == 3))) {
    throw std::invalid_argument("matmul: unsupported ranks " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  const Index batch = batched ? a.dim(0) : 1;
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k || (!shared_b && b.dim(0) != batch)) {
    throw std::invalid_argument("matmul: dim mismatch " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<Scalar> out(out_shape);
  for (Index i = 0; i < batch; ++i) {
    CMapM<Scalar> A(a.data().data() + i * m * k, m, k);
    CMapM<Scalar> B(b.data().data() + (shared_b ? 0 : i * k * n), k, n);
    MapM<Scalar> C(out.data().data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return detail::record<Scalar>(
      out, {&a, &b}, [a, b, batch, m, k, n, shared_b](const Tensor<Scalar>& o) {
        const Scalar* g = o.grad().data();
        const bool ga_on = needs_grad(a), gb_on = needs_grad(b);
        Scalar* ga = ga_on ? a.grad_buffer().data() : nullptr;
        Scalar* gb = gb_on ? b.grad_buffer().data() : nullptr;
        for (Index i = 0; i < batch; ++i) {
          CMapM<Scalar> G(g + i * m * n, m, n);
          const Index boff = shared_b ? 0 : i * k * n;
          if (ga_on) {
            CMapM<Scalar> B(b.data().data() + boff, k, n);
            MapM<Scalar>(ga + i * m * k, m, k).noalias() += G * B.transpose();
          }
          if (gb_on) {
            CMapM<Scalar> A(a.data().data() + i * m * k, m, k);
            MapM<Scalar>(gb + boff, k, n).noalias() += A.transpose() * G;
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose needs rank >= 2");
  const Index r = a.dim(-2), c = a.dim(-1);
  const Index batch = a.numel() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor<Scalar> out(shape);
  for (Index i = 0; i < batch; ++i) {
    MapM<Scalar>(out.data().data() + i * r * c, c, r) =
        CMapM<Scalar>(a.data().data() + i * r * c, r, c).transpose();
  }
  return detail::record<Scalar>(out, {&a}, [a, r, c, batch](const Tensor<Scalar>& o) {
    if (!needs_grad(a)) return;
    Scalar* ga = a.grad_buffer().data();
    for (Index i = 0; i < batch; ++i) {
      MapM<Scalar>(ga + i * r * c, r, c) +=
          CMapM<Scalar>(o.grad().data() + i * r * c, c, r).transpose();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " vs weight " +
                                shape_str(weight.shape()));
  }
  const Index in = weight.dim(1), outf = weight.dim(0), rows = x.numel() / in;
  if (bias.defined() && bias.numel() != outf) {
    throw std::invalid_argument("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                                shape_str(weight.shape()));
  }
  Shape shape = x.shape();
  shape.back() = outf;
  Tensor<Scalar> out(shape);
  MapM<Scalar> Y(out.data().data(), rows, outf);
  Y.noalias() = x.matrix(rows, in) * weight.matrix(outf, in).transpose();
  if (bias.defined()) Y.rowwise() += bias.vec().transpose();
  return detail::record<Scalar>(
      out, {&x, &weight, &bias}, [x, weight, bias, rows, in, outf](const Tensor<Scalar>& o) {
        CMapM<Scalar> G(o.grad().data(), rows, outf);
        if (needs_grad(x)) {
          MapM<Scalar>(x.grad_buffer().data(), rows, in).noalias() +=
              G * weight.matrix(outf, in);
        }
        if (needs_grad(weight)) {
          MapM<Scalar>(weight.grad_buffer().data(), outf, in).noalias() +=
              G.transpose() * x.matrix(rows, in);
        }
        if (needs_grad(bias)) {
          MapM<Scalar>(bias.grad_buffer().data(), 1, outf) += G.colwise().sum();
        }
      });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  check_axis(axis, x.rank());
  const Index n = x.dim(axis);
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<Scalar> out(x.shape());
  auto in = x.data();
  auto y = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) {
      const Index base = o * n * inner + j;
      Scalar mx = in[base];
      for (Index t = 0; t < n; ++t) {
        const Scalar v = in[base + t * inner];
        if (std::isnan(v)) throw std::domain_error("softmax: NaN input");
        mx = std::max(mx, v);
      }
      Scalar total = 0;
      for (Index t = 0; t < n; ++t) {
        const Scalar e = std::exp(in[base + t * inner] - mx);
        y[base + t * inner] = e;
        total += e;
      }
      for (Index t = 0; t < n; ++t) y[base + t * inner] /= total;
    }
  }
  return detail::record<Scalar>(out, {&x}, [x, n, outer, inner](const Tensor<Scalar>& o) {
    if (!needs_grad(x)) return;
    auto g = o.grad();
    auto y = o.data();
    auto gx = x.grad_buffer();
    for (Index ob = 0; ob < outer; ++ob) {
      for (Index j = 0; j < inner; ++j) {
        const Index base = ob * n * inner + j;
        Scalar dot = 0;
        for (Index t = 0; t < n; ++t) dot += g[base + t * inner] * y[base + t * inner];
        for (Index t = 0; t < n; ++t) {
          const Index idx = base + t * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != b.rank() || (a.rank() != 3 && a.rank() != 4) || a.dim(-1) != b.dim(-1) ||
      a.dim(-2) != b.dim(-2) || (a.rank() == 4 && a.dim(0) != b.dim(0))) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const Index batch = a.rank() == 4 ? a.dim(0) : 1;
  const Index plane = a.dim(-1) * a.dim(-2);
  const Index na = a.dim(-3) * plane, nb = b.dim(-3) * plane;
  Shape shape = a.shape();
  shape[shape.size() - 3] = a.dim(-3) + b.dim(-3);
  Tensor<Scalar> out(shape);
  Scalar* y = out.data().data();
  for (Index i = 0; i < batch; ++i) {
    std::copy_n(a.data().data() + i * na, na, y + i * (na + nb));
    std::copy_n(b.data().data() + i * nb, nb, y + i * (na + nb) + na);
  }
  return detail::record<Scalar>(out, {&a, &b}, [a, b, batch, na, nb](const Tensor<Scalar>& o) {
    const Scalar* g = o.grad().data();
    for (Index i = 0; i < batch; ++i) {
      if (needs_grad(a)) {
        Scalar* ga = a.grad_buffer().data() + i * na;
        for (Index j = 0; j < na; ++j) ga[j] += g[i * (na + nb) + j];
      }
      if (needs_grad(b)) {
        Scalar* gb = b.grad_buffer().data() + i * nb;
        for (Index j = 0; j < nb; ++j) gb[j] += g[i * (na + nb) + na + j];
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> flip_width(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw std::invalid_argument("flip_width needs rank >= 1");
  const Index w = x.dim(-1);
  const Index rows = x.numel() / std::max<Index>(w, 1);
  Tensor<Scalar> out(x.shape());
  for (Index r = 0; r < rows; ++r) {
    std::reverse_copy(x.data().data() + r * w, x.data().data() + (r + 1) * w,
                      out.data().data() + r * w);
  }
  return detail::record<Scalar>(out, {&x}, [x, w, rows](const Tensor<Scalar>& o) {
    if (!needs_grad(x)) return;
    auto g = o.grad();
    auto gx = x.grad_buffer();
    for (Index r = 0; r < rows; ++r) {
      for (Index j = 0; j < w; ++j) gx[r * w + j] += g[r * w + (w - 1 - j)];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mean_spatial(const Tensor<Scalar>& x) {
  if (x.rank() < 3) throw std::invalid_argument("mean_spatial needs [.. x C x H x W]");
  const Index plane = x.dim(-1) * x.dim(-2);
  const Index maps = x.numel() / plane;
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  Tensor<Scalar> out(shape);
  out.vec() = x.matrix(maps, plane).rowwise().mean();
  return detail::record<Scalar>(out, {&x}, [x, plane, maps](const Tensor<Scalar>& o) {
    if (!needs_grad(x)) return;
    MapM<Scalar> gx(x.grad_buffer().data(), maps, plane);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
    for (Index m = 0; m < maps; ++m) gx.row(m).array() += o.grad()[m] * inv;
  });
}

template <typename Scalar>
Tensor<Scalar> to_tokens(const Tensor<Scalar>& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("to_tokens needs [C x H x W] or [N x C x H x W], got " +
                                shape_str(x.shape()));
  }
  const Index c = x.dim(-3), t = x.dim(-1) * x.dim(-2);
  Shape flat = x.rank() == 4 ? Shape{x.dim(0), c, t} : Shape{c, t};
  return transpose(reshape(x, flat));
}

template <typename Scalar>
Tensor<Scalar> from_tokens(const Tensor<Scalar>& tokens, Index height, Index width) {
  if ((tokens.rank() != 2 && tokens.rank() != 3) || tokens.dim(-2) != height * width) {
    throw std::invalid_argument("from_tokens: " + shape_str(tokens.shape()) + " is not " +
                                std::to_string(height * width) + " tokens");
  }
  const Index c = tokens.dim(-1);
  Shape shape = tokens.rank() == 3 ? Shape{tokens.dim(0), c, height, width}
                                   : Shape{c, height, width};
  return reshape(transpose(tokens), shape);
}

#define SCOLIO_INSTANTIATE_OPS(S)                                                             \
  template Tensor<S> elementwise(ElementwiseOp, const Tensor<S>&, const Tensor<S>&);          \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> neg(const Tensor<S>&);                                                   \
  template Tensor<S> relu(const Tensor<S>&);                                                  \
  template Tensor<S> log(const Tensor<S>&);                                                   \
  template Tensor<S> exp(const Tensor<S>&);                                                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                              \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                           \
  template Tensor<S> sum(const Tensor<S>&);                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                  \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                        \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> transpose(const Tensor<S>&);                                             \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                        \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> flip_width(const Tensor<S>&);                                            \
  template Tensor<S> mean_spatial(const Tensor<S>&);                                          \
  template Tensor<S> to_tokens(const Tensor<S>&);                                             \
  template Tensor<S> from_tokens(const Tensor<S>&, Index, Index);

SCOLIO_INSTANTIATE_OPS(float)
SCOLIO_INSTANTIATE_OPS(double)

}  // namespace scolio
