#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "citekit/matrix.hpp"

namespace citekit::numeric {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  // Gradient accumulated by Tape::backward. Empty matrix if none reached it.
  Matrix grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Reverse-mode tape over Matrix values. Nodes are appended in evaluation
// order, which is already a topological order, so backward() is a single
// reverse sweep. All inner loops run in fixed order: identical inputs give
// bit-identical values and gradients.
class Tape {
 public:
  // Leaf that owns a copy of the value and accumulates its gradient
  // internally (read back via Var::grad()).
  Var leaf(Matrix value);
  // Leaf over caller-owned storage. The gradient is accumulated directly
  // into *grad_sink (which must match the value's shape and be zeroed by
  // the caller); both pointers must outlive the tape.
  Var leaf(const Matrix* value, Matrix* grad_sink);
  // Tracked value with no gradient.
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  // a * b^T without materializing the transpose.
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // x (n x d) + bias (1 x d) broadcast over rows.
  Var add_rowvec(Var x, Var bias);
  Var scale(Var a, double c);
  Var mul_elem(Var a, Var b);
  // a + c / a .* c with an untracked constant (attention masks, dropout
  // masks, position encodings).
  Var add_constm(Var a, const Matrix& c);
  Var mul_constm(Var a, const Matrix& c);

  Var softmax_rows(Var a);
  Var gelu(Var a);
  // Row-wise layer norm with per-column gain/bias (both 1 x d).
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  Var concat_cols(const std::vector<Var>& parts);
  // Rows of `table` selected by id, in order.
  Var gather_rows(Var table, std::vector<int> ids);
  // Rows shifted by `offset` (out[i] = in[i - offset]), zero fill.
  Var shift_rows(Var a, int offset);

  Var abs_elem(Var a);
  Var row_sums(Var a);  // n x d -> n x 1
  // Elementwise num/denom over n x 1 columns. Positions where denom is
  // below `zero_eps` yield 0.5 and pass no gradient.
  Var ratio_rows(Var num, Var denom, double zero_eps = 1e-12);
  // Row i of x scaled by s(i, 0).
  Var scale_rows(Var x, Var s);

  Var sum_all(Var a);                           // -> 1 x 1
  Var mean_rows_prefix(Var a, std::size_t n);   // mean over first n rows -> 1 x d
  Var cross_entropy(Var logits, int label);     // 1 x C -> 1 x 1

  // Seeds d(scalar)/d(scalar) = 1 and sweeps the tape in reverse.
  void backward(Var scalar);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    std::shared_ptr<const Matrix> value;
    Matrix grad;               // lazily sized on first contribution
    Matrix* grad_ext = nullptr;
    bool needs_grad = true;
    std::function<void(Tape&)> backprop;
  };

  Var push(std::shared_ptr<const Matrix> value, bool needs_grad,
           std::function<void(Tape&)> backprop);
  const Matrix& val(std::size_t i) const { return *nodes_[i].value; }
  // Gradient accumulated at node i; only called by closures that know it
  // has been written.
  const Matrix& grad_at(std::size_t i) const;
  // Destination for gradient accumulation, or nullptr if node i does not
  // track gradients.
  Matrix* grad_sink(std::size_t i);
  bool grad_present(std::size_t i) const;

  std::vector<Node> nodes_;
};

}  // namespace citekit::numeric
