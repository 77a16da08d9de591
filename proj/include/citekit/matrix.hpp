#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <vector>

#include "citekit/errors.hpp"

namespace citekit::numeric {

// Dense row-major matrix of doubles. The only storage type used by the
// network; vectors are 1xN or Nx1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  // Entries drawn i.i.d. uniform on [-range, range].
  static Matrix random_uniform(std::size_t rows, std::size_t cols, double range,
                               std::mt19937_64& rng);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& at_flat(std::size_t i) { return data_[i]; }
  double at_flat(std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  std::string shape_str() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Standard product. Summation over the inner dimension runs left to right,
// so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

// A * B^T and A^T * B without materializing the transpose. Same fixed
// summation order as matmul.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);

// Row-wise softmax with max-subtraction. Total on finite input.
Matrix softmax_rows(const Matrix& m);

// x*W + b with b (1 x d_out) broadcast over rows.
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);

// -log softmax(logits)[label] for a single 1xC logit row.
double cross_entropy(const Matrix& logits, int label);

void throw_shape(const std::string& op, const Matrix& a, const Matrix& b);

}  // namespace citekit::numeric
