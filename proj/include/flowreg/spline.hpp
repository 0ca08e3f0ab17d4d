#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flowreg {

//! Hyperparameters of one monotonic rational-quadratic spline transform.
struct SplineConfig {
  std::size_t bins = 8;          // M
  double tail_bound = 3.0;       // B; the transform is identity outside [-B, B]
  double min_bin = 1e-3;         // floor on bin width/height fractions
  double min_derivative = 1e-3;  // floor on interior knot derivatives
};

//! Number of unconstrained parameters per spline: M widths, M heights and
//! M-1 interior derivatives. Boundary derivatives are pinned to 1 so the
//! transform is C1 across the identity tails.
inline std::size_t raw_param_count(std::size_t bins) { return 3 * bins - 1; }

//! Constrained knots of one monotonic rational-quadratic spline on
//! [-B, B] -> [-B, B]: strictly increasing knot_x/knot_y with
//! knot_x[0] = knot_y[0] = -B, knot_x[M] = knot_y[M] = B, and positive
//! derivatives whose boundary entries are exactly 1.
struct SplineParameterization {
  double tail_bound = 3.0;
  std::vector<double> knot_x;      // M+1
  std::vector<double> knot_y;      // M+1
  std::vector<double> derivative;  // M+1

  std::size_t bins() const { return knot_x.empty() ? 0 : knot_x.size() - 1; }
  //! Throws StructuralError if any invariant is violated.
  void validate(double min_bin = 0.0, double min_derivative = 0.0) const;
};

//! Shift applied to derivative logits so a zero logit maps to a derivative
//! of exactly 1 after the min_derivative floor is added.
double derivative_logit_shift(double min_derivative);

//! Map 3M-1 unconstrained reals to a valid spline. A zero vector yields the
//! identity transform.
SplineParameterization constrain(std::span<const double> raw,
                                 const SplineConfig& config);

struct SplineResult {
  double value = 0.0;
  double log_abs_det = 0.0;
};

//! z -> y with log|f'(z)|. Identity with zero log-det outside [-B, B].
SplineResult spline_forward(double z, const SplineParameterization& p);

//! y -> z with log|d f^{-1}/dy| via the stable quadratic root.
SplineResult spline_inverse(double y, const SplineParameterization& p);

//! Composition of layers applied in order (inverse applies them in reverse).
//! log_abs_det accumulates additively.
SplineResult stack_forward(double z,
                           std::span<const SplineParameterization> layers);
SplineResult stack_inverse(double y,
                           std::span<const SplineParameterization> layers);

}  // namespace flowreg
