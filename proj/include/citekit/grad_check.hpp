#pragma once

#include <functional>
#include <vector>

#include "citekit/tape.hpp"

namespace citekit::numeric {

// A scalar-valued function of a list of parameter matrices, expressed as a
// tape program so both the value and the reverse-mode gradient fall out of
// the same definition.
using TapeFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;  // parameter matrix holding the worst coordinate
  std::size_t flat_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of f against central differences
// (f(p+eps) - f(p-eps)) / (2 eps), coordinate by coordinate, and reports the
// worst relative error. eps must lie in (0, 1e-2]. Throws NumericError if f
// evaluates to a non-finite value anywhere.
GradCheckResult grad_check(const TapeFunction& f, const std::vector<Matrix>& params,
                           double eps);

}  // namespace citekit::numeric
