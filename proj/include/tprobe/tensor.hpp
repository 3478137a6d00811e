#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tprobe {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Element type is the storage type; reductions
/// in the numeric kernels accumulate in double regardless of T.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(std::size_t rows, std::size_t cols, T fill = T{0})
      : Tensor(Shape{rows, cols}, fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : data_.size() / std::max<std::size_t>(rows(), 1); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Trainable tensor with its gradient and Adam moment estimates.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::size_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  const Shape& shape() const { return value.shape(); }
  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

/// C = A·B for 2-D tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.rows(), "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor<T> c(n, m);
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const T* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) c(i, j) = static_cast<T>(acc[j]);
  }
  return c;
}

/// C = Aᵀ·B.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rows() == b.rows(), "matmul_tn: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> acc(k * m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* arow = a.data() + r * k;
    const T* brow = b.data() + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* out = acc.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
    }
  }
  return Tensor<T>({k, m}, std::vector<T>(acc.begin(), acc.end()));
}

/// C = A·Bᵀ.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor<T> c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * brow[p];
      c(i, j) = static_cast<T>(s);
    }
  }
  return c;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.shape() == src.shape(), "add: " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
  add_inplace(a, b);
  return a;
}

/// Copies columns [begin, begin+width) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t width) {
  Tensor<T> out(a.rows(), width);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy_n(a.data() + i * a.cols() + begin, width, out.data() + i * width);
  return out;
}

template <typename T>
void add_into_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t begin) {
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) += src(i, j);
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  Tensor<T> out(count, a.cols());
  std::copy_n(a.data() + begin * a.cols(), count * a.cols(), out.data());
  return out;
}

template <typename T>
void add_into_rows(Tensor<T>& dst, const Tensor<T>& src, std::size_t begin) {
  T* d = dst.data() + begin * dst.cols();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

}  // namespace tprobe
