#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "scolio/tensor.hpp"

namespace scolio {

namespace detail {

template <typename Scalar>
struct TapeNode {
  Tensor<Scalar> output;
  std::function<void(const Tensor<Scalar>&)> backward;
};

template <typename Scalar>
struct TapeState {
  std::vector<TapeNode<Scalar>> nodes;
};

}  // namespace detail

template <typename S>
std::shared_ptr<detail::TapeState<S>> tape_of(const Tensor<S>& t) {
  return t.tape_.lock();
}

template <typename S>
Tensor<S> attach(Tensor<S> t, const std::shared_ptr<detail::TapeState<S>>& state) {
  t.tape_ = state;
  return t;
}

/// Explicit recording of one forward pass. Ops whose inputs are attached to a
/// tape append a node; backward replays the nodes in reverse record order.
/// Destroying or clearing the tape frees every node and detaches all handles.
template <typename Scalar>
class Tape {
 public:
  Tape() : state_(std::make_shared<detail::TapeState<Scalar>>()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Handle to `leaf` sharing its storage, attached to this tape. Gradients
  /// land in the shared storage, so the caller's original handle sees them.
  Tensor<Scalar> track(const Tensor<Scalar>& leaf) const { return attach(leaf, state_); }

  /// Populate gradients of every ancestor of `loss`. Interior gradients are
  /// reset first; leaf gradients accumulate across calls.
  void backward(const Tensor<Scalar>& loss);

  void clear() { state_->nodes.clear(); }
  std::size_t size() const { return state_->nodes.size(); }

 private:
  std::shared_ptr<detail::TapeState<Scalar>> state_;
};

namespace detail {

/// Attach `out` to the tape shared by `inputs` (if any) and record `backward`.
/// Inputs attached to different live tapes are rejected.
template <typename Scalar>
Tensor<Scalar> record(Tensor<Scalar> out, std::initializer_list<const Tensor<Scalar>*> inputs,
                      std::function<void(const Tensor<Scalar>&)> backward);

}  // namespace detail

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace scolio
