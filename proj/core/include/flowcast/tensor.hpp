#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowcast {

#ifdef FLOWCAST_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

/// Validation failures (bad shapes, bad config, bad user input). CLI maps
/// these to exit code 2.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Runtime failures (I/O, numerical divergence). CLI maps these to exit
/// code 3.
class RuntimeFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of Real. Small fixed-rank helper, not a general
/// tensor library: rank <= 4, contiguous storage, value semantics.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), Real(0));
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor full(std::vector<int> shape, Real value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  Real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const Real& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  Real& operator()(int i, int j) { return data_[idx2(i, j)]; }
  const Real& operator()(int i, int j) const { return data_[idx2(i, j)]; }
  Real& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const Real& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  Real& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const Real& operator()(int i, int j, int k, int l) const {
    return data_[idx4(i, j, k, l)];
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(Real(0)); }

  /// Reinterpret as a different shape with the same element count.
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != size())
      throw ValidationError("reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ValidationError("negative dimension");
      n *= d;
    }
    return n;
  }

private:
  size_t idx2(int i, int j) const {
    return static_cast<size_t>(i) * shape_[1] + j;
  }
  size_t idx3(int i, int j, int k) const {
    return (static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<Real> data_;
};

inline bool all_finite(const Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

}  // namespace flowcast
