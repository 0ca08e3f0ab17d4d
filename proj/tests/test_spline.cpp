#include <cmath>
#include <vector>

#include "doctest.h"
#include "flowreg/errors.hpp"
#include "flowreg/rng.hpp"
#include "flowreg/spline.hpp"
#include "oracles.hpp"

using namespace flowreg;

namespace {

std::vector<double> random_raw(std::size_t m, Rng& rng, double scale = 2.0) {
  std::vector<double> raw(raw_param_count(m));
  for (double& v : raw) v = rng.normal() * scale;
  return raw;
}

}  // namespace

TEST_CASE("constrain: zero logits give uniform bins and unit derivatives") {
  SplineConfig cfg;
  cfg.bins = 8;
  cfg.tail_bound = 3.0;
  std::vector<double> raw(raw_param_count(8), 0.0);
  SplineParameterization p = constrain(raw, cfg);
  p.validate(cfg.min_bin, cfg.min_derivative);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(p.knot_x[i + 1] - p.knot_x[i] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(p.knot_y[i + 1] - p.knot_y[i] == doctest::Approx(0.75).epsilon(1e-12));
  }
  for (double d : p.derivative) CHECK(d == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("constrain: identity transform at zero logits") {
  for (std::size_t m : {std::size_t{1}, std::size_t{8}, std::size_t{32}}) {
    SplineConfig cfg;
    cfg.bins = m;
    std::vector<double> raw(raw_param_count(m), 0.0);
    SplineParameterization p = constrain(raw, cfg);
    for (double z : {-2.9, -1.0, 0.0, 0.3, 0.7, 1.7, 2.999}) {
      const SplineResult r = spline_forward(z, p);
      CHECK(std::abs(r.value - z) < 1e-12);
      CHECK(std::abs(r.log_abs_det) < 1e-12);
    }
  }
}

TEST_CASE("constrain: single-bin degenerate case") {
  SplineConfig cfg;
  cfg.bins = 1;
  std::vector<double> raw = {0.4, -1.2};  // one width, one height, no derivs
  SplineParameterization p = constrain(raw, cfg);
  CHECK(p.knot_x == std::vector<double>{-3.0, 3.0});
  CHECK(p.knot_y == std::vector<double>{-3.0, 3.0});
  CHECK(p.derivative.front() == 1.0);
  CHECK(p.derivative.back() == 1.0);
}

TEST_CASE("constrain: every random raw satisfies the invariants") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    Rng r = rng.stream(i);
    SplineParameterization p = constrain(random_raw(8, r, 4.0), cfg);
    p.validate(0.0, cfg.min_derivative);  // widths shrink by 2B scaling
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(p.knot_x[k + 1] - p.knot_x[k] >=
            cfg.min_bin * 2.0 * cfg.tail_bound * 0.999);
    }
  }
}

TEST_CASE("constrain: configuration and numeric errors") {
  SplineConfig bad;
  bad.bins = 2000;
  bad.min_bin = 1e-3;  // 2000 * 1e-3 >= 1
  std::vector<double> raw(raw_param_count(2000), 0.0);
  CHECK_THROWS_AS(constrain(raw, bad), ConfigError);

  SplineConfig cfg;
  cfg.bins = 4;
  std::vector<double> nan_raw(raw_param_count(4), 0.0);
  nan_raw[3] = std::nan("");
  CHECK_THROWS_AS(constrain(nan_raw, cfg), NumericError);
  std::vector<double> short_raw(3, 0.0);
  CHECK_THROWS_AS(constrain(short_raw, cfg), StructuralError);
}

TEST_CASE("forward: knot values, knot derivatives, and tails") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(5);
  SplineParameterization p = constrain(random_raw(8, rng), cfg);
  for (std::size_t m = 0; m <= 8; ++m) {
    const SplineResult r = spline_forward(p.knot_x[m], p);
    CHECK(r.value == doctest::Approx(p.knot_y[m]).epsilon(1e-12));
    CHECK(r.log_abs_det ==
          doctest::Approx(std::log(p.derivative[m])).epsilon(1e-10));
  }
  const SplineResult tail = spline_forward(5.0, p);
  CHECK(tail.value == 5.0);
  CHECK(tail.log_abs_det == 0.0);
  CHECK_THROWS_AS(spline_forward(std::nan(""), p), NumericError);
}

TEST_CASE("forward derivative matches a finite difference of the map") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(29);
  for (int i = 0; i < 200; ++i) {
    Rng r = rng.stream(i);
    SplineParameterization p = constrain(random_raw(8, r), cfg);
    const double z = (2.0 * r.uniform() - 1.0) * 2.9;
    const double fd = oracles::central_diff(
        [&](double v) { return spline_forward(v, p).value; }, z, 1e-6);
    const double ad = std::exp(spline_forward(z, p).log_abs_det);
    CHECK(std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd)) <
          1e-6);
  }
}

TEST_CASE("inverse: identity spline and round trips") {
  SplineConfig cfg;
  cfg.bins = 8;
  std::vector<double> zeros(raw_param_count(8), 0.0);
  SplineParameterization ident = constrain(zeros, cfg);
  const SplineResult r = spline_inverse(-1.2, ident);
  CHECK(std::abs(r.value + 1.2) < 1e-12);
  CHECK(std::abs(r.log_abs_det) < 1e-12);

  Rng rng(31);
  for (int i = 0; i < 5000; ++i) {
    Rng rr = rng.stream(i);
    SplineParameterization p = constrain(random_raw(8, rr), cfg);
    const double z = (2.0 * rr.uniform() - 1.0) * 3.5;  // includes tails
    const SplineResult fwd = spline_forward(z, p);
    const SplineResult inv = spline_inverse(fwd.value, p);
    CHECK(std::abs(inv.value - z) < 1e-8);
    CHECK(std::abs(fwd.log_abs_det + inv.log_abs_det) < 1e-8);
  }
}

TEST_CASE("monotonicity over random pairs") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(37);
  for (int i = 0; i < 2000; ++i) {
    Rng rr = rng.stream(i);
    SplineParameterization p = constrain(random_raw(8, rr), cfg);
    double z1 = (2.0 * rr.uniform() - 1.0) * 3.0;
    double z2 = (2.0 * rr.uniform() - 1.0) * 3.0;
    if (z1 == z2) continue;
    if (z1 > z2) std::swap(z1, z2);
    CHECK(spline_forward(z1, p).value < spline_forward(z2, p).value);
  }
}

namespace {

// Left limit of (value, derivative) at knot m+1, i.e. the rational-quadratic
// formulas of bin m evaluated at interpolation position 1. An independent
// re-derivation used as the continuity oracle.
std::pair<double, double> left_limit_at_upper_knot(
    const SplineParameterization& p, std::size_t m) {
  const double w = p.knot_x[m + 1] - p.knot_x[m];
  const double h = p.knot_y[m + 1] - p.knot_y[m];
  const double s = h / w;
  const double value = p.knot_y[m] + h * (s * 1.0) / s;
  const double deriv = s * s * p.derivative[m + 1] / (s * s);
  return {value, deriv};
}

}  // namespace

TEST_CASE("C1 continuity at knots and the tail bound (one-sided limits)") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(41);
  for (int i = 0; i < 2000; ++i) {
    Rng rr = rng.stream(i);
    SplineParameterization p = constrain(random_raw(8, rr), cfg);
    for (std::size_t m = 1; m <= 8; ++m) {
      // Right side: evaluation at the knot itself (interpolant 0 in bin m,
      // identity tail at the last knot). Left side: bin m-1 at interpolant 1.
      const auto [lv, ld] = left_limit_at_upper_knot(p, m - 1);
      const SplineResult right = spline_forward(p.knot_x[m], p);
      CHECK(std::abs(lv - right.value) < 1e-10);
      CHECK(std::abs(std::log(ld) - right.log_abs_det) < 1e-10);
    }
    // Tails: value and derivative are continuous at -B from the left.
    const double b = cfg.tail_bound;
    const SplineResult at_lo = spline_forward(-b, p);
    CHECK(std::abs(at_lo.value + b) < 1e-10);
    CHECK(std::abs(at_lo.log_abs_det) < 1e-10);  // derivative 1 by pinning
  }
}

TEST_CASE("stacks compose and invert") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(43);
  SplineParameterization single = constrain(random_raw(8, rng), cfg);
  std::vector<SplineParameterization> one = {single};
  const SplineResult a = stack_forward(0.37, one);
  const SplineResult b = spline_forward(0.37, single);
  CHECK(a.value == b.value);
  CHECK(a.log_abs_det == b.log_abs_det);

  std::vector<double> zeros(raw_param_count(8), 0.0);
  std::vector<SplineParameterization> ident = {constrain(zeros, cfg),
                                               constrain(zeros, cfg)};
  const SplineResult id = stack_forward(0.9, ident);
  CHECK(std::abs(id.value - 0.9) < 1e-12);
  CHECK(std::abs(id.log_abs_det) < 1e-12);

  for (int i = 0; i < 1000; ++i) {
    Rng rr = rng.stream(1000 + i);
    std::vector<SplineParameterization> layers;
    for (int k = 0; k < 3; ++k) {
      layers.push_back(constrain(random_raw(8, rr), cfg));
    }
    const double z = (2.0 * rr.uniform() - 1.0) * 3.2;
    const SplineResult fwd = stack_forward(z, layers);
    const SplineResult inv = stack_inverse(fwd.value, layers);
    CHECK(std::abs(inv.value - z) < 1e-7);
    CHECK(std::abs(fwd.log_abs_det + inv.log_abs_det) < 1e-7);
  }
  CHECK_THROWS_AS(stack_forward(0.0, {}), StructuralError);
}

TEST_CASE("inverse rejects invalid inputs") {
  SplineConfig cfg;
  cfg.bins = 4;
  std::vector<double> raw(raw_param_count(4), 0.0);
  SplineParameterization p = constrain(raw, cfg);
  CHECK_THROWS_AS(spline_inverse(std::nan(""), p), NumericError);
}
