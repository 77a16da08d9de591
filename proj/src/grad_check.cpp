#include "citekit/grad_check.hpp"

#include <cmath>

namespace citekit::numeric {

namespace {

double evaluate(const TapeFunction& f, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.leaf(p));
  Var y = f(tape, vars);
  if (y.rows() != 1 || y.cols() != 1) {
    throw ShapeError("grad_check: f must return a 1x1 value, got " +
                     y.value().shape_str());
  }
  const double v = y.value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("grad_check: f evaluated non-finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const TapeFunction& f, const std::vector<Matrix>& params,
                           double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw DomainError("grad_check: eps must be in (0, 1e-2], got " +
                      std::to_string(eps));
  }

  // Analytic pass.
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.leaf(p));
  Var y = f(tape, vars);
  if (y.rows() != 1 || y.cols() != 1) {
    throw ShapeError("grad_check: f must return a 1x1 value, got " +
                     y.value().shape_str());
  }
  if (!std::isfinite(y.value()(0, 0))) {
    throw NumericError("grad_check: f evaluated non-finite");
  }
  tape.backward(y);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix g = vars[p].grad();
    if (g.empty()) g = Matrix(params[p].rows(), params[p].cols());
    analytic.push_back(std::move(g));
  }

  GradCheckResult result;
  std::vector<Matrix> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = work[p].at_flat(i);
      work[p].at_flat(i) = orig + eps;
      const double plus = evaluate(f, work);
      work[p].at_flat(i) = orig - eps;
      const double minus = evaluate(f, work);
      work[p].at_flat(i) = orig;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[p].at_flat(i);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double rel = denom < 1e-10 ? 0.0 : std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.param_index = p;
        result.flat_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace citekit::numeric
