#include "citekit/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace citekit::numeric {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix init: " + std::to_string(data_.size()) +
                     " values for shape " + shape_str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw ShapeError("matrix init: ragged rows");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::random_uniform(std::size_t rows, std::size_t cols, double range,
                              std::mt19937_64& rng) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& v : m.data_) v = dist(rng);
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void throw_shape(const std::string& op, const Matrix& a, const Matrix& b) {
  throw ShapeError(op + ": " + a.shape_str() + " by " + b.shape_str());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_shape("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out.at_flat(i * m);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* brow = &b.data()[p * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_shape("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = &a.data()[i * k];
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = &b.data()[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw_shape("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = &a.data()[p * n];
    const double* brow = &b.data()[p * m];
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = &out.at_flat(i * m);
      const double aip = arow[i];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape("add", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.at_flat(i) += b.at_flat(i);
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape("subtract", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.at_flat(i) -= b.at_flat(i);
  return out;
}

Matrix scale(const Matrix& a, double c) {
  Matrix out = a;
  for (auto& v : out.data()) v *= c;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_shape("hadamard", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.at_flat(i) *= b.at_flat(i);
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = m(i, 0);
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double e = std::exp(m(i, j) - mx);
      out(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= denom;
  }
  return out;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) throw_shape("linear bias", w, b);
  Matrix out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
  return out;
}

double cross_entropy(const Matrix& logits, int label) {
  if (logits.rows() != 1) {
    throw ShapeError("cross_entropy: logits must be a single row, got " +
                     logits.shape_str());
  }
  if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) +
                      " outside 0.." + std::to_string(logits.cols() - 1));
  }
  double mx = logits(0, 0);
  for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(0, j));
  double denom = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) denom += std::exp(logits(0, j) - mx);
  return std::log(denom) + mx - logits(0, static_cast<std::size_t>(label));
}

}  // namespace citekit::numeric
