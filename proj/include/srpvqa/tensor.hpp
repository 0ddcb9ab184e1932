#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace srpvqa {

// Raised on any shape/extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a forward value leaves the finite reals.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Rank 0 is a scalar, rank 1 behaves as a single row, rank 2 is a matrix.
/// Higher ranks can be stored but the algebra in this library only consumes
/// ranks 0-2. Extents of zero are allowed so that empty row sets (an image
/// with no relationships) have a natural representation.
class Tensor {
 public:
  Tensor() : shape_{0, 0} {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " does not hold " +
                           std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
  static Tensor row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
  }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view of ranks 0-2: scalars are 1x1 and vectors are single rows.
  std::size_t rows() const {
    if (shape_.size() == 2) return shape_[0];
    return 1;
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw DimensionError("item: tensor holds " + std::to_string(data_.size()) + " values");
    return data_[0];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {

// c (+)= a * b; a is m x k, b is k x n. i-k-j order keeps the inner loop contiguous.
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c (+)= a * b^T; a is m x k, b is n x k.
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

// c (+)= a^T * b; a is k x m, b is k x n.
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t k,
                    std::size_t m, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * m;
    const double* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace kernels

// Plain (untaped) matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor c = Tensor::zeros(a.rows(), b.cols());
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

}  // namespace srpvqa
