#include "flowreg/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

double softplus_stable(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Locate the bin m with knots[m] <= v < knots[m+1], clamped so boundary
// values fall into the first/last bin.
std::size_t find_bin(const std::vector<double>& knots, double v) {
  auto it = std::upper_bound(knots.begin(), knots.end(), v);
  std::ptrdiff_t m = (it - knots.begin()) - 1;
  m = std::clamp<std::ptrdiff_t>(m, 0,
                                 static_cast<std::ptrdiff_t>(knots.size()) - 2);
  return static_cast<std::size_t>(m);
}

// log of the forward derivative at interpolation position zeta in bin m.
double log_derivative(const SplineParameterization& p, std::size_t m,
                      double zeta) {
  const double w = p.knot_x[m + 1] - p.knot_x[m];
  const double h = p.knot_y[m + 1] - p.knot_y[m];
  const double s = h / w;
  const double d0 = p.derivative[m];
  const double d1 = p.derivative[m + 1];
  const double omz = 1.0 - zeta;
  const double numerator =
      s * s * (d1 * zeta * zeta + 2.0 * s * zeta * omz + d0 * omz * omz);
  const double denom = s + (d1 + d0 - 2.0 * s) * zeta * omz;
  return std::log(numerator) - 2.0 * std::log(denom);
}

}  // namespace

void SplineParameterization::validate(double min_bin,
                                      double min_derivative) const {
  const std::size_t m = bins();
  if (m < 1) throw StructuralError("spline: at least one bin required");
  if (knot_y.size() != m + 1 || derivative.size() != m + 1) {
    throw StructuralError("spline: knot array sizes disagree");
  }
  if (!(tail_bound > 0.0)) throw StructuralError("spline: tail bound must be > 0");
  const double b = tail_bound;
  if (knot_x.front() != -b || knot_y.front() != -b || knot_x.back() != b ||
      knot_y.back() != b) {
    throw StructuralError("spline: knots must span [-B, B] exactly");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!(knot_x[i + 1] - knot_x[i] >= min_bin) ||
        !(knot_y[i + 1] - knot_y[i] >= min_bin)) {
      throw StructuralError("spline: bin " + std::to_string(i) +
                            " is not monotone or too small");
    }
  }
  for (std::size_t i = 0; i <= m; ++i) {
    if (!(derivative[i] >= min_derivative) || !std::isfinite(derivative[i])) {
      throw StructuralError("spline: derivative " + std::to_string(i) +
                            " below floor");
    }
  }
  if (derivative.front() != 1.0 || derivative.back() != 1.0) {
    throw StructuralError("spline: boundary derivatives must equal 1");
  }
}

double derivative_logit_shift(double min_derivative) {
  // softplus(shift) == 1 - min_derivative, so a zero logit constrains to 1.
  return std::log(std::expm1(1.0 - min_derivative));
}

SplineParameterization constrain(std::span<const double> raw,
                                 const SplineConfig& config) {
  const std::size_t m = config.bins;
  if (m < 1) throw ConfigError("spline: bin count must be >= 1");
  if (static_cast<double>(m) * config.min_bin >= 1.0) {
    throw ConfigError("spline: bins * min_bin must be < 1");
  }
  if (raw.size() != raw_param_count(m)) {
    throw StructuralError("spline: expected " +
                          std::to_string(raw_param_count(m)) +
                          " raw parameters, got " + std::to_string(raw.size()));
  }
  for (double v : raw) {
    if (!std::isfinite(v)) throw NumericError("spline: non-finite raw parameter");
  }
  const double b = config.tail_bound;

  // Normalized-exponential over the logits, floored at min_bin, rescaled to
  // keep the total at 2B; cumulative sums place the interior knots and the
  // endpoints are pinned to -B / B exactly.
  auto fractions = [&](std::span<const double> logits) {
    std::vector<double> f(m);
    double mx = logits[0];
    for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      f[i] = std::exp(logits[i] - mx);
      sum += f[i];
    }
    for (std::size_t i = 0; i < m; ++i) {
      f[i] = config.min_bin + (1.0 - static_cast<double>(m) * config.min_bin) *
                                  (f[i] / sum);
    }
    return f;
  };
  auto knots_from = [&](const std::vector<double>& f) {
    std::vector<double> k(m + 1);
    k[0] = -b;
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      cum += f[i];
      k[i + 1] = -b + 2.0 * b * cum;
    }
    k[m] = b;
    return k;
  };

  SplineParameterization p;
  p.tail_bound = b;
  p.knot_x = knots_from(fractions(raw.subspan(0, m)));
  p.knot_y = knots_from(fractions(raw.subspan(m, m)));
  p.derivative.assign(m + 1, 1.0);
  const double shift = derivative_logit_shift(config.min_derivative);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    p.derivative[i + 1] =
        config.min_derivative + softplus_stable(raw[2 * m + i] + shift);
  }
  return p;
}

SplineResult spline_forward(double z, const SplineParameterization& p) {
  if (!std::isfinite(z)) throw NumericError("spline_forward: non-finite input");
  const double b = p.tail_bound;
  if (z < -b || z > b) return {z, 0.0};
  const std::size_t m = find_bin(p.knot_x, z);
  const double w = p.knot_x[m + 1] - p.knot_x[m];
  const double h = p.knot_y[m + 1] - p.knot_y[m];
  const double s = h / w;
  const double d0 = p.derivative[m];
  const double d1 = p.derivative[m + 1];
  const double zeta = (z - p.knot_x[m]) / w;
  const double omz = 1.0 - zeta;
  const double denom = s + (d1 + d0 - 2.0 * s) * zeta * omz;
  const double y =
      p.knot_y[m] + h * (s * zeta * zeta + d0 * zeta * omz) / denom;
  return {y, log_derivative(p, m, zeta)};
}

SplineResult spline_inverse(double y, const SplineParameterization& p) {
  if (!std::isfinite(y)) throw NumericError("spline_inverse: non-finite input");
  const double b = p.tail_bound;
  if (y < -b || y > b) return {y, 0.0};
  const std::size_t m = find_bin(p.knot_y, y);
  const double w = p.knot_x[m + 1] - p.knot_x[m];
  const double h = p.knot_y[m + 1] - p.knot_y[m];
  const double s = h / w;
  const double d0 = p.derivative[m];
  const double d1 = p.derivative[m + 1];
  const double dy = y - p.knot_y[m];
  const double k = d1 + d0 - 2.0 * s;
  // Quadratic a*zeta^2 + b*zeta + c = 0 induced by the forward map.
  const double qa = h * (s - d0) + dy * k;
  const double qb = h * d0 - dy * k;
  const double qc = -s * dy;
  double disc = qb * qb - 4.0 * qa * qc;
  if (disc < -1e-12) {
    throw NumericError("spline_inverse: negative discriminant " +
                       std::to_string(disc));
  }
  disc = std::max(disc, 0.0);
  double zeta = std::clamp(2.0 * qc / (-qb - std::sqrt(disc)), 0.0, 1.0);
  // One Newton step on the forward map tightens the root to the
  // representation floor; flat spline regions amplify y-side rounding.
  {
    const double omz = 1.0 - zeta;
    const double den = s + k * zeta * omz;
    const double val = h * (s * zeta * zeta + d0 * zeta * omz) / den;
    const double slope =
        s * s * (d1 * zeta * zeta + 2.0 * s * zeta * omz + d0 * omz * omz) /
        (den * den);
    zeta = std::clamp(zeta - (val - dy) / (w * slope), 0.0, 1.0);
  }
  const double z = p.knot_x[m] + w * zeta;
  return {z, -log_derivative(p, m, zeta)};
}

SplineResult stack_forward(double z,
                           std::span<const SplineParameterization> layers) {
  if (layers.empty()) throw StructuralError("stack_forward: no layers");
  SplineResult acc{z, 0.0};
  for (const auto& layer : layers) {
    const SplineResult r = spline_forward(acc.value, layer);
    acc.value = r.value;
    acc.log_abs_det += r.log_abs_det;
  }
  return acc;
}

SplineResult stack_inverse(double y,
                           std::span<const SplineParameterization> layers) {
  if (layers.empty()) throw StructuralError("stack_inverse: no layers");
  SplineResult acc{y, 0.0};
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    const SplineResult r = spline_inverse(acc.value, *it);
    acc.value = r.value;
    acc.log_abs_det += r.log_abs_det;
  }
  return acc;
}

}  // namespace flowreg
