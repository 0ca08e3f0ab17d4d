#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowreg/model.hpp"
#include "flowreg/rng.hpp"

namespace flowreg {

enum class ConfidenceMethod { InvStd, NegEntropy };
enum class RiskMeasure { Mape, Rmse };

std::string to_string(ConfidenceMethod m);
std::string to_string(RiskMeasure m);

//! Everything known about one evaluated test instance.
struct PredictionRecord {
  double y = 0.0;
  double prediction = 0.0;
  double log_density = 0.0;
  double confidence = 0.0;
  double abs_error = 0.0;
  double sq_error = 0.0;
  double pct_error = 0.0;  // |err| / |y| * 100
};

//! Risk at each coverage level plus the trapezoid AURC.
struct RiskCoverageCurve {
  std::vector<double> coverage;  // percent, ascending, ends at 100
  std::vector<double> risk;
  double aurc = 0.0;
  std::string risk_measure;
};

//! Mean of -log densities.
double nll_metric(std::span<const double> log_densities);

double rmse(std::span<const double> predictions, std::span<const double> y);
//! Percent error; every |y| must exceed 1e-9.
double mape(std::span<const double> predictions, std::span<const double> y);

//! Energy-form CRPS estimator with the full double sum:
//! mean|s_i - y| - mean|s_i - s_j| / 2.
double crps_sample(std::span<const double> samples, double y);

//! Per-instance confidence scores from predictive distributions.
//! InvStd: 1 / sample std over n draws. NegEntropy: mean log-density of n
//! draws from the distribution itself (negated Monte Carlo entropy).
std::vector<double> confidence_scores(
    std::span<const PredictiveDistribution> distributions,
    ConfidenceMethod method, std::size_t n, Rng& rng);

//! Risk over the top-k most confident instances at each coverage level
//! (k = ceil(c*N/100)); ties in confidence break by original index.
RiskCoverageCurve risk_coverage(std::span<const double> confidences,
                                std::span<const double> errors,
                                std::span<const double> levels);

//! Decile levels {10, 20, ..., 100}.
std::vector<double> decile_levels();

//! Trapezoid area over the decile curve; requires levels {10, ..., 100}.
double aurc(const RiskCoverageCurve& curve);

//! Writes `coverage,risk` rows.
void write_riskcov_csv(const RiskCoverageCurve& curve, const std::string& path);

}  // namespace flowreg
