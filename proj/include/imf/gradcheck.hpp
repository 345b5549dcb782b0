#pragma once

#include <functional>

#include "imf/tape.hpp"

namespace imf {

struct GradCheckReport {
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Builds a computation from one input Var on a fresh tape.
using TapeFn = std::function<Var(Tape&, Var)>;
// Builds a computation whose parameters are captured externally.
using TapeBuildFn = std::function<Var(Tape&)>;

// Central-difference check of the analytic gradient of sum(projection * f(x))
// with respect to x. If projection is empty, a seeded random projection is
// used (scalar outputs get projection 1). Relative error is measured against
// max(|analytic|, |numeric|, 1e-3); the floor absorbs roundoff on near-zero
// entries.
GradCheckReport finite_diff_check(const TapeFn& f, const Tensor& x,
                                  double eps = 1e-5,
                                  const Tensor& projection = Tensor());

// Same check for a Parameter captured inside `build`. The parameter's values
// are perturbed in place for the numeric side and restored afterwards.
GradCheckReport finite_diff_check_param(const TapeBuildFn& build, Parameter& p,
                                        double eps = 1e-5,
                                        const Tensor& projection = Tensor());

}  // namespace imf
