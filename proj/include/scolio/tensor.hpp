#pragma once

#include <Eigen/Core>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace scolio {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Contiguous buffer aligned for Eigen's packet loads, so vectorized
/// reductions see the same peeling on every run.
template <typename Scalar>
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Storage {
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty until something accumulates into it
};

template <typename Scalar>
struct TapeState;

}  // namespace detail

/// Dense row-major N-d array. A Tensor is a cheap handle: copies share the
/// same storage. A handle may be attached to a live Tape, in which case ops
/// consuming it are recorded for reverse-mode differentiation.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, std::vector<Scalar>{value}); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  /// Size of dimension i; negative i counts from the back.
  Index dim(Index i) const;
  Index numel() const { return storage_ ? static_cast<Index>(storage_->data.size()) : 0; }

  std::span<Scalar> data() { return storage_->data; }
  std::span<const Scalar> data() const { return storage_->data; }
  Scalar operator[](Index i) const { return storage_->data[static_cast<std::size_t>(i)]; }
  Scalar& operator[](Index i) { return storage_->data[static_cast<std::size_t>(i)]; }
  Scalar item() const;

  VectorMap vec() { return VectorMap(storage_->data.data(), numel()); }
  ConstVectorMap vec() const { return ConstVectorMap(storage_->data.data(), numel()); }
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;

  bool has_grad() const { return storage_ && !storage_->grad.empty(); }
  std::span<const Scalar> grad() const { return storage_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<Scalar> grad_buffer() const;
  void zero_grad();
  /// Gradient as a detached tensor (zeros if none accumulated).
  Tensor grad_tensor() const;

  /// Same storage, detached from any tape.
  Tensor detach() const;
  /// Deep copy of data with no gradient and no tape.
  Tensor clone() const;
  /// True when attached to a tape that is still alive.
  bool tracked() const { return !tape_.expired(); }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(storage_->data.begin(), storage_->data.end());
    return Tensor<To>(shape_, std::move(out));
  }

 private:
  std::shared_ptr<detail::Storage<Scalar>> storage_;
  Shape shape_;
  std::weak_ptr<detail::TapeState<Scalar>> tape_;

  friend class Tape<Scalar>;
  template <typename S>
  friend std::shared_ptr<detail::TapeState<S>> tape_of(const Tensor<S>& t);
  template <typename S>
  friend Tensor<S> attach(Tensor<S> t, const std::shared_ptr<detail::TapeState<S>>& state);
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace scolio
