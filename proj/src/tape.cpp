#include "citekit/tape.hpp"

#include <cmath>
#include <numbers>

namespace citekit::numeric {

namespace {

std::shared_ptr<const Matrix> owned(Matrix m) {
  return std::make_shared<const Matrix>(std::move(m));
}

void accumulate(Matrix* dst, const Matrix& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < dst->size(); ++i) dst->at_flat(i) += src.at_flat(i);
}

}  // namespace

const Matrix& Var::value() const { return tape_->val(idx_); }

Matrix Var::grad() const {
  if (!tape_->grad_present(idx_)) return Matrix();
  return tape_->grad_at(idx_);
}

Var Tape::push(std::shared_ptr<const Matrix> value, bool needs_grad,
               std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::grad_at(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.grad_ext ? *n.grad_ext : n.grad;
}

Matrix* Tape::grad_sink(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.needs_grad) return nullptr;
  if (n.grad_ext) return n.grad_ext;
  if (n.grad.empty()) n.grad = Matrix(n.value->rows(), n.value->cols());
  return &n.grad;
}

bool Tape::grad_present(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.grad_ext != nullptr || !n.grad.empty();
}

Var Tape::leaf(Matrix value) { return push(owned(std::move(value)), true, nullptr); }

Var Tape::leaf(const Matrix* value, Matrix* grad_sink) {
  if (!value->same_shape(*grad_sink)) throw_shape("leaf grad sink", *value, *grad_sink);
  std::shared_ptr<const Matrix> alias(value, [](const Matrix*) {});
  Node n;
  n.value = std::move(alias);
  n.grad_ext = grad_sink;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return push(owned(std::move(value)), false, nullptr); }

Var Tape::matmul(Var a, Var b) {
  Matrix y = numeric::matmul(a.value(), b.value());
  const std::size_t ia = a.idx_, ib = b.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, ib, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    // dA = G * B^T, dB = A^T * G
    if (Matrix* ga = t.grad_sink(ia)) accumulate(ga, numeric::matmul_nt(g, t.val(ib)));
    if (Matrix* gb = t.grad_sink(ib)) accumulate(gb, numeric::matmul_tn(t.val(ia), g));
  };
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix y = numeric::matmul_nt(a.value(), b.value());
  const std::size_t ia = a.idx_, ib = b.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, ib, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    if (Matrix* ga = t.grad_sink(ia)) accumulate(ga, numeric::matmul(g, t.val(ib)));
    if (Matrix* gb = t.grad_sink(ib)) accumulate(gb, numeric::matmul_tn(g, t.val(ia)));
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  Matrix y = numeric::add(a.value(), b.value());
  const std::size_t ia = a.idx_, ib = b.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, ib, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    accumulate(t.grad_sink(ia), g);
    accumulate(t.grad_sink(ib), g);
  };
  return out;
}

Var Tape::add_rowvec(Var x, Var bias) {
  const Matrix& xm = x.value();
  const Matrix& bm = bias.value();
  if (bm.rows() != 1 || bm.cols() != xm.cols()) throw_shape("add_rowvec", xm, bm);
  Matrix y = xm;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bm(0, j);
  const std::size_t ix = x.idx_, ib = bias.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ix, ib, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    accumulate(t.grad_sink(ix), g);
    if (Matrix* gb = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gb)(0, j) += g(i, j);
    }
  };
  return out;
}

Var Tape::scale(Var a, double c) {
  Matrix y = numeric::scale(a.value(), c);
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io, c](Tape& t) {
    const Matrix& g = t.grad_at(io);
    if (Matrix* ga = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga->at_flat(i) += c * g.at_flat(i);
    }
  };
  return out;
}

Var Tape::mul_elem(Var a, Var b) {
  Matrix y = numeric::hadamard(a.value(), b.value());
  const std::size_t ia = a.idx_, ib = b.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, ib, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    const Matrix& av = t.val(ia);
    const Matrix& bv = t.val(ib);
    if (Matrix* ga = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i)
        ga->at_flat(i) += g.at_flat(i) * bv.at_flat(i);
    }
    if (Matrix* gb = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i)
        gb->at_flat(i) += g.at_flat(i) * av.at_flat(i);
    }
  };
  return out;
}

Var Tape::add_constm(Var a, const Matrix& c) {
  Matrix y = numeric::add(a.value(), c);
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) { accumulate(t.grad_sink(ia), t.grad_at(io)); };
  return out;
}

Var Tape::mul_constm(Var a, const Matrix& c) {
  Matrix y = numeric::hadamard(a.value(), c);
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  Matrix mask = c;
  nodes_[io].backprop = [ia, io, mask = std::move(mask)](Tape& t) {
    const Matrix& g = t.grad_at(io);
    if (Matrix* ga = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i)
        ga->at_flat(i) += g.at_flat(i) * mask.at_flat(i);
    }
  };
  return out;
}

Var Tape::softmax_rows(Var a) {
  Matrix y = numeric::softmax_rows(a.value());
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    const Matrix& y = t.val(io);
    // dx_j = y_j * (g_j - sum_k g_k y_k), row by row
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        (*ga)(i, j) += y(i, j) * (g(i, j) - dot);
    }
  };
  return out;
}

Var Tape::gelu(Var a) {
  const Matrix& x = a.value();
  Matrix y = x;
  for (auto& v : y.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    const Matrix& x = t.val(ia);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.at_flat(i);
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      ga->at_flat(i) += g.at_flat(i) * (cdf + v * pdf);
    }
  };
  return out;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xm = x.value();
  const Matrix& gm = gamma.value();
  const Matrix& bm = beta.value();
  if (gm.rows() != 1 || gm.cols() != xm.cols()) throw_shape("layer_norm gamma", xm, gm);
  if (bm.rows() != 1 || bm.cols() != xm.cols()) throw_shape("layer_norm beta", xm, bm);
  const std::size_t d = xm.cols();
  Matrix y(xm.rows(), d);
  Matrix xhat(xm.rows(), d);
  std::vector<double> inv_std(xm.rows());
  for (std::size_t i = 0; i < xm.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xm(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xm(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xm(i, j) - mean) * is;
      y(i, j) = gm(0, j) * xhat(i, j) + bm(0, j);
    }
  }
  const std::size_t ix = x.idx_, ig = gamma.idx_, ib = beta.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ix, ig, ib, io, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Tape& t) {
    const Matrix& g = t.grad_at(io);
    const Matrix& gm = t.val(ig);
    const std::size_t d = g.cols();
    if (Matrix* gg = t.grad_sink(ig)) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*gg)(0, j) += g(i, j) * xhat(i, j);
    }
    if (Matrix* gb = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*gb)(0, j) += g(i, j);
    }
    if (Matrix* gx = t.grad_sink(ix)) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = g(i, j) * gm(0, j);
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat(i, j);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = g(i, j) * gm(0, j);
          (*gx)(i, j) += inv_std[i] *
                         (dxh - inv_d * sum_dxhat - xhat(i, j) * inv_d * sum_dxhat_xhat);
        }
      }
    }
  };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw_shape("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::size_t> idx, offs;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pm = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pm.cols(); ++j) y(i, off + j) = pm(i, j);
    idx.push_back(p.idx_);
    offs.push_back(off);
    off += pm.cols();
  }
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [idx = std::move(idx), offs = std::move(offs), io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      Matrix* gp = t.grad_sink(idx[p]);
      if (!gp) continue;
      for (std::size_t i = 0; i < gp->rows(); ++i)
        for (std::size_t j = 0; j < gp->cols(); ++j) (*gp)(i, j) += g(i, offs[p] + j);
    }
  };
  return out;
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Matrix& tm = table.value();
  Matrix y(ids.size(), tm.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = static_cast<std::size_t>(ids[i]);
    if (r >= tm.rows()) {
      throw DomainError("gather_rows: id " + std::to_string(ids[i]) +
                        " outside table of " + std::to_string(tm.rows()) + " rows");
    }
    for (std::size_t j = 0; j < tm.cols(); ++j) y(i, j) = tm(r, j);
  }
  const std::size_t it = table.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [it, io, ids = std::move(ids)](Tape& t) {
    Matrix* gt = t.grad_sink(it);
    if (!gt) return;
    const Matrix& g = t.grad_at(io);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto r = static_cast<std::size_t>(ids[i]);
      for (std::size_t j = 0; j < g.cols(); ++j) (*gt)(r, j) += g(i, j);
    }
  };
  return out;
}

Var Tape::shift_rows(Var a, int offset) {
  const Matrix& am = a.value();
  const auto n = static_cast<long>(am.rows());
  Matrix y(am.rows(), am.cols());
  for (long i = 0; i < n; ++i) {
    const long src = i - offset;
    if (src < 0 || src >= n) continue;
    for (std::size_t j = 0; j < am.cols(); ++j)
      y(static_cast<std::size_t>(i), j) = am(static_cast<std::size_t>(src), j);
  }
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io, offset, n](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    for (long i = 0; i < n; ++i) {
      const long src = i - offset;
      if (src < 0 || src >= n) continue;
      for (std::size_t j = 0; j < g.cols(); ++j)
        (*ga)(static_cast<std::size_t>(src), j) += g(static_cast<std::size_t>(i), j);
    }
  };
  return out;
}

Var Tape::abs_elem(Var a) {
  Matrix y = a.value();
  for (auto& v : y.data()) v = std::abs(v);
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    const Matrix& x = t.val(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.at_flat(i);
      const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      ga->at_flat(i) += g.at_flat(i) * s;
    }
  };
  return out;
}

Var Tape::row_sums(Var a) {
  const Matrix& am = a.value();
  Matrix y(am.rows(), 1);
  for (std::size_t i = 0; i < am.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < am.cols(); ++j) acc += am(i, j);
    y(i, 0) = acc;
  }
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    for (std::size_t i = 0; i < ga->rows(); ++i)
      for (std::size_t j = 0; j < ga->cols(); ++j) (*ga)(i, j) += g(i, 0);
  };
  return out;
}

Var Tape::ratio_rows(Var num, Var denom, double zero_eps) {
  const Matrix& nm = num.value();
  const Matrix& dm = denom.value();
  if (!nm.same_shape(dm) || nm.cols() != 1) throw_shape("ratio_rows", nm, dm);
  Matrix y(nm.rows(), 1);
  for (std::size_t i = 0; i < nm.rows(); ++i)
    y(i, 0) = dm(i, 0) < zero_eps ? 0.5 : nm(i, 0) / dm(i, 0);
  const std::size_t in = num.idx_, id = denom.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [in, id, io, zero_eps](Tape& t) {
    const Matrix& g = t.grad_at(io);
    const Matrix& nv = t.val(in);
    const Matrix& dv = t.val(id);
    Matrix* gn = t.grad_sink(in);
    Matrix* gd = t.grad_sink(id);
    for (std::size_t i = 0; i < nv.rows(); ++i) {
      const double d = dv(i, 0);
      if (d < zero_eps) continue;  // constant 0.5 branch
      if (gn) (*gn)(i, 0) += g(i, 0) / d;
      if (gd) (*gd)(i, 0) -= g(i, 0) * nv(i, 0) / (d * d);
    }
  };
  return out;
}

Var Tape::scale_rows(Var x, Var s) {
  const Matrix& xm = x.value();
  const Matrix& sm = s.value();
  if (sm.rows() != xm.rows() || sm.cols() != 1) throw_shape("scale_rows", xm, sm);
  Matrix y = xm;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= sm(i, 0);
  const std::size_t ix = x.idx_, is = s.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ix, is, io](Tape& t) {
    const Matrix& g = t.grad_at(io);
    const Matrix& xv = t.val(ix);
    const Matrix& sv = t.val(is);
    if (Matrix* gx = t.grad_sink(ix)) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gx)(i, j) += g(i, j) * sv(i, 0);
    }
    if (Matrix* gs = t.grad_sink(is)) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) acc += g(i, j) * xv(i, j);
        (*gs)(i, 0) += acc;
      }
    }
  };
  return out;
}

Var Tape::sum_all(Var a) {
  const Matrix& am = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < am.size(); ++i) acc += am.at_flat(i);
  Matrix y(1, 1);
  y(0, 0) = acc;
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const double g = t.grad_at(io)(0, 0);
    for (std::size_t i = 0; i < ga->size(); ++i) ga->at_flat(i) += g;
  };
  return out;
}

Var Tape::mean_rows_prefix(Var a, std::size_t n) {
  const Matrix& am = a.value();
  if (n == 0 || n > am.rows()) {
    throw ShapeError("mean_rows_prefix: n=" + std::to_string(n) + " over " +
                     am.shape_str());
  }
  Matrix y(1, am.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < am.cols(); ++j) y(0, j) += am(i, j);
  for (std::size_t j = 0; j < am.cols(); ++j) y(0, j) /= static_cast<double>(n);
  const std::size_t ia = a.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [ia, io, n](Tape& t) {
    Matrix* ga = t.grad_sink(ia);
    if (!ga) return;
    const Matrix& g = t.grad_at(io);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(i, j) += g(0, j) * inv;
  };
  return out;
}

Var Tape::cross_entropy(Var logits, int label) {
  const double loss = numeric::cross_entropy(logits.value(), label);
  Matrix y(1, 1);
  y(0, 0) = loss;
  const std::size_t il = logits.idx_;
  Var out = push(owned(std::move(y)), true, nullptr);
  const std::size_t io = out.idx_;
  nodes_[io].backprop = [il, io, label](Tape& t) {
    Matrix* gl = t.grad_sink(il);
    if (!gl) return;
    const double g = t.grad_at(io)(0, 0);
    const Matrix probs = numeric::softmax_rows(t.val(il));
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double onehot = j == static_cast<std::size_t>(label) ? 1.0 : 0.0;
      (*gl)(0, j) += g * (probs(0, j) - onehot);
    }
  };
  return out;
}

void Tape::backward(Var scalar) {
  if (scalar.rows() != 1 || scalar.cols() != 1) {
    throw ShapeError("backward: output must be 1x1, got " +
                     scalar.value().shape_str());
  }
  Matrix* seed = grad_sink(scalar.idx_);
  if (!seed) return;
  (*seed)(0, 0) += 1.0;
  for (std::size_t i = scalar.idx_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && grad_present(i)) n.backprop(*this);
  }
}

}  // namespace citekit::numeric
