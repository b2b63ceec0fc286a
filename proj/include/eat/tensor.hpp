#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eat/errors.hpp"

namespace eat {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major n-d array; the one value type used for inputs, weights,
// activations and gradients. Scalars are shape [1].
template <class S>
class BasicTensor {
 public:
  using value_type = S;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, S fill = S(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_shape();
  }

  BasicTensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor scalar(S v) {
    BasicTensor t(Shape{1});
    t.data_[0] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& raw() { return data_; }
  const std::vector<S>& raw() const { return data_; }

  S& operator[](size_t i) { return data_[i]; }
  S operator[](size_t i) const { return data_[i]; }

  template <class... Ix>
  S& operator()(Ix... ix) {
    return data_[flat_index(ix...)];
  }
  template <class... Ix>
  S operator()(Ix... ix) const {
    return data_[flat_index(ix...)];
  }

  // Value of a single-element tensor.
  S item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
  }

  bool same_shape(const BasicTensor& o) const { return shape_ == o.shape_; }

  void fill(S v) {
    for (S& x : data_) x = v;
  }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // Same data viewed under a new shape (element count must match).
  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                       shape_to_string(shape));
    }
    BasicTensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool operator==(const BasicTensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  void check_shape() const {
    for (size_t d : shape_) {
      if (d == 0) {
        throw ShapeError("tensor extents must be positive, got " +
                         shape_to_string(shape_));
      }
    }
  }

  template <class... Ix>
  size_t flat_index(Ix... ix) const {
    constexpr size_t k = sizeof...(Ix);
    const size_t idx[k] = {static_cast<size_t>(ix)...};
    size_t flat = 0;
    for (size_t d = 0; d < k; ++d) flat = flat * shape_[d] + idx[d];
    return flat;
  }

  Shape shape_;
  std::vector<S> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

}  // namespace eat
