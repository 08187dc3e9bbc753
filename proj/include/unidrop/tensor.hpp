#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace unidrop {

// Base error type for the library. Subclasses carry the failure category;
// the message always names the offending operation and operands.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Dense double-precision tensor, row-major. Rank 0 (shape {}) is a scalar
// holding exactly one value; rank 2 is the common case throughout the model.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
  }

  static Tensor filled(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  // 2-D accessors; only valid for rank-2 tensors.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double item() const {
    if (data_.size() != 1)
      throw ShapeError("item(): tensor " + shape_string(shape_) + " is not a scalar");
    return data_[0];
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static std::string shape_string(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) { return Tensor::shape_string(t.shape()); }

bool all_finite(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);

}  // namespace unidrop
