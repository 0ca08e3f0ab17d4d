#include "flowreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "flowreg/errors.hpp"

namespace flowreg {

std::string to_string(ConfidenceMethod m) {
  return m == ConfidenceMethod::InvStd ? "inv_std" : "neg_entropy";
}

std::string to_string(RiskMeasure m) {
  return m == RiskMeasure::Mape ? "mape" : "rmse";
}

double nll_metric(std::span<const double> log_densities) {
  if (log_densities.empty()) throw StructuralError("nll_metric: empty input");
  double sum = 0.0;
  for (double v : log_densities) sum += v;
  return -sum / static_cast<double>(log_densities.size());
}

double rmse(std::span<const double> predictions, std::span<const double> y) {
  if (predictions.size() != y.size() || y.empty()) {
    throw StructuralError("rmse: inputs must be non-empty and equal length");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = predictions[i] - y[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(y.size()));
}

double mape(std::span<const double> predictions, std::span<const double> y) {
  if (predictions.size() != y.size() || y.empty()) {
    throw StructuralError("mape: inputs must be non-empty and equal length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) <= 1e-9) {
      throw StructuralError("mape: |y| <= 1e-9 at index " + std::to_string(i) +
                            "; filter such rows or use an absolute risk");
    }
    sum += std::abs(predictions[i] - y[i]) / std::abs(y[i]);
  }
  return 100.0 * sum / static_cast<double>(y.size());
}

double crps_sample(std::span<const double> samples, double y) {
  const std::size_t s = samples.size();
  if (s < 2) throw StructuralError("crps_sample: need at least 2 samples");
  double term1 = 0.0;
  for (double v : samples) term1 += std::abs(v - y);
  term1 /= static_cast<double>(s);
  double term2 = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      term2 += std::abs(samples[i] - samples[j]);
    }
  }
  term2 /= 2.0 * static_cast<double>(s) * static_cast<double>(s);
  return term1 - term2;
}

std::vector<double> confidence_scores(
    std::span<const PredictiveDistribution> distributions,
    ConfidenceMethod method, std::size_t n, Rng& rng) {
  if (n < 2) throw StructuralError("confidence_scores: need n >= 2");
  std::vector<double> out;
  out.reserve(distributions.size());
  for (std::size_t i = 0; i < distributions.size(); ++i) {
    const PredictiveDistribution& d = distributions[i];
    Rng local = rng.stream(i);
    if (method == ConfidenceMethod::InvStd) {
      out.push_back(1.0 / d.stddev(n, local));
    } else {
      // Monte Carlo differential entropy: H = -mean log p(y_s), score = -H.
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        sum += d.log_density(d.sample(local));
      }
      out.push_back(sum / static_cast<double>(n));
    }
  }
  return out;
}

std::vector<double> decile_levels() {
  return {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
}

RiskCoverageCurve risk_coverage(std::span<const double> confidences,
                                std::span<const double> errors,
                                std::span<const double> levels) {
  const std::size_t n = confidences.size();
  if (n == 0) throw StructuralError("risk_coverage: empty input");
  if (errors.size() != n) {
    throw StructuralError("risk_coverage: confidence/error length mismatch");
  }
  if (levels.empty() || levels.size() > n) {
    throw StructuralError("risk_coverage: need 1..N coverage levels");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] <= 100.0) ||
        (i > 0 && levels[i] <= levels[i - 1])) {
      throw StructuralError("risk_coverage: levels must ascend within (0, 100]");
    }
  }
  // Descending by confidence, stable in the original order on ties.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return confidences[a] > confidences[b];
                   });
  std::vector<double> prefix(n);
  double run = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    run += errors[order[i]];
    prefix[i] = run / static_cast<double>(i + 1);
  }
  RiskCoverageCurve curve;
  for (double c : levels) {
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(c * static_cast<double>(n) / 100.0));
    curve.coverage.push_back(c);
    curve.risk.push_back(prefix[std::min(k, n) - 1]);
  }
  return curve;
}

double aurc(const RiskCoverageCurve& curve) {
  const std::vector<double> expected = decile_levels();
  if (curve.coverage != expected) {
    throw StructuralError("aurc: curve must hold coverage levels 10..100");
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.coverage.size(); ++i) {
    area += 0.5 * (curve.risk[i] + curve.risk[i - 1]) *
            (curve.coverage[i] - curve.coverage[i - 1]);
  }
  return area / 100.0;
}

void write_riskcov_csv(const RiskCoverageCurve& curve,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write '" + path + "'");
  out << "coverage,risk\n";
  out.precision(17);
  for (std::size_t i = 0; i < curve.coverage.size(); ++i) {
    out << curve.coverage[i] << "," << curve.risk[i] << "\n";
  }
}

}  // namespace flowreg
