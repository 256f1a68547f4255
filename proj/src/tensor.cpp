#include "scolio/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "scolio/tape.hpp"

namespace scolio {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill)
    : storage_(std::make_shared<detail::Storage<Scalar>>()), shape_(std::move(shape)) {
  storage_->data.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values)
    : storage_(std::make_shared<detail::Storage<Scalar>>()), shape_(std::move(shape)) {
  if (static_cast<Index>(values.size()) != shape_numel(shape_)) {
    throw std::invalid_argument("tensor of shape " + shape_str(shape_) + " cannot hold " +
                                std::to_string(values.size()) + " values");
  }
  storage_->data.assign(values.begin(), values.end());
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index i) const {
  const Index r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw std::out_of_range("dim " + std::to_string(i) + " of shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(i)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
  return storage_->data[0];
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor");
  return MatrixMap(storage_->data.data(), rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor");
  return ConstMatrixMap(storage_->data.data(), rows, cols);
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::grad_buffer() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), Scalar(0));
  return storage_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  if (storage_) storage_->grad.clear();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape_);
  Tensor out(shape_);
  std::copy(storage_->grad.begin(), storage_->grad.end(), out.storage_->data.begin());
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  Tensor out = *this;
  out.tape_.reset();
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor out(shape_);
  std::copy(storage_->data.begin(), storage_->data.end(), out.storage_->data.begin());
  return out;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_str(loss.shape()));
  }
  if (tape_of(loss) != state_) throw std::invalid_argument("loss was not recorded on this tape");
  auto& nodes = state_->nodes;
  for (auto& node : nodes) node.output.zero_grad();
  Tensor<Scalar> seed = loss;
  seed.grad_buffer()[0] += Scalar(1);
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output.has_grad() && it->backward) it->backward(it->output);
  }
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> record(Tensor<Scalar> out, std::initializer_list<const Tensor<Scalar>*> inputs,
                      std::function<void(const Tensor<Scalar>&)> backward) {
  std::shared_ptr<TapeState<Scalar>> state;
  for (const Tensor<Scalar>* in : inputs) {
    if (in == nullptr || !in->defined()) continue;
    auto s = tape_of(*in);
    if (!s) continue;
    if (state && s != state) throw std::logic_error("op inputs are attached to different tapes");
    state = std::move(s);
  }
  if (!state) return out;
  out = attach(std::move(out), state);
  state->nodes.push_back({out, std::move(backward)});
  return out;
}

template Tensor<float> record(Tensor<float>, std::initializer_list<const Tensor<float>*>,
                              std::function<void(const Tensor<float>&)>);
template Tensor<double> record(Tensor<double>, std::initializer_list<const Tensor<double>*>,
                               std::function<void(const Tensor<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace scolio
