#include "actlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace actlab {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " given " + std::to_string(data_.size()) +
                     " elements");
  }
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw ShapeError("rows() on tensor of shape " + shape_to_string(shape_));
  return shape_[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() > 2) throw ShapeError("cols() on tensor of shape " + shape_to_string(shape_));
  return shape_.back();
}

template <typename T>
void Tensor<T>::set_requires_grad(bool enabled) {
  if (enabled && !grad_) grad_.emplace(data_.size(), T{0});
  if (!enabled) grad_.reset();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!grad_) throw std::logic_error("tensor has no gradient accumulator");
  return *grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!grad_) throw std::logic_error("tensor has no gradient accumulator");
  return *grad_;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace actlab
