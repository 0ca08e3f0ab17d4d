#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "flowreg/errors.hpp"
#include "flowreg/metrics.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace flowreg;
using namespace testutil;

TEST_CASE("nll metric: mean of negated log densities, order invariant") {
  std::vector<double> lds = {-1.0, -1.0, -1.0};
  CHECK(nll_metric(lds) == 1.0);
  std::vector<double> a = {-0.3, -2.0, 0.5};
  std::vector<double> b = {0.5, -0.3, -2.0};
  CHECK(nll_metric(a) == doctest::Approx(nll_metric(b)).epsilon(1e-15));
  CHECK_THROWS_AS(nll_metric(std::vector<double>{}), StructuralError);
}

TEST_CASE("rmse and mape hand values") {
  std::vector<double> y = {100.0};
  std::vector<double> yhat = {110.0};
  CHECK(rmse(yhat, y) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(mape(yhat, y) == doctest::Approx(10.0).epsilon(1e-12));
  std::vector<double> same = {1.0, 2.0, 3.0};
  CHECK(rmse(same, same) == 0.0);
  CHECK(mape(same, same) == 0.0);
  std::vector<double> zeroy = {0.0};
  CHECK_THROWS_AS(mape(yhat, zeroy), StructuralError);
}

TEST_CASE("rmse dominates mae (jensen)") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> y(20), yhat(20);
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = rng.normal() * 3.0;
      yhat[i] = y[i] + rng.normal();
    }
    double mae = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) mae += std::abs(yhat[i] - y[i]);
    mae /= static_cast<double>(y.size());
    CHECK(rmse(yhat, y) >= mae - 1e-12);
  }
}

TEST_CASE("crps: exact small cases and non-negativity") {
  std::vector<double> equal = {1.0, 1.0, 1.0};
  CHECK(crps_sample(equal, 1.0) == 0.0);
  std::vector<double> two = {0.0, 2.0};
  CHECK(crps_sample(two, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(crps_sample(std::vector<double>{1.0}, 1.0), StructuralError);
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(50);
    for (double& v : s) v = rng.normal();
    CHECK(crps_sample(s, rng.normal()) >= 0.0);
  }
}

TEST_CASE("crps matches the closed-form gaussian value") {
  std::vector<double> draws = Rng(3).stream("crps").normals(10000);
  const double estimate = crps_sample(draws, 0.0);
  const double exact = oracles::gaussian_crps(0.0, 1.0, 0.0);
  CHECK(exact == doctest::Approx(0.23369).epsilon(1e-4));
  CHECK(std::abs(estimate - exact) / exact < 0.01);
}

TEST_CASE("crps translation equivariance is exact") {
  Rng rng(4);
  std::vector<double> s(64);
  for (double& v : s) v = rng.normal() * 2.0;
  const double y = 0.7;
  const double base = crps_sample(s, y);
  std::vector<double> shifted = s;
  for (double& v : shifted) v += 5.0;
  CHECK(crps_sample(shifted, y + 5.0) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("confidence scores: inv-std and negative entropy oracles") {
  FeatureSchema schema = make_schema(1);
  ModelConfig mc;
  mc.encoder.embed_dim = 2;
  mc.encoder.blocks = 0;
  DensityModel model =
      DensityModel::create(identity_prep(schema, 0.0, 2.0), mc, Rng(5));
  TabularDataset ds = make_dataset(schema, 1, 6);
  std::vector<PredictiveDistribution> preds = model.predict_all(ds);

  Rng r1(7);
  std::vector<double> inv = confidence_scores(preds, ConfidenceMethod::InvStd,
                                              1000, r1);
  CHECK(std::abs(inv[0] - 0.5) < 0.03);

  // Standard-normal predictive: entropy 0.5 log(2 pi e) = 1.4189.
  DensityModel unit =
      DensityModel::create(identity_prep(schema, 0.0, 1.0), mc, Rng(5));
  std::vector<PredictiveDistribution> upreds = unit.predict_all(ds);
  Rng r2(8);
  std::vector<double> ent = confidence_scores(
      upreds, ConfidenceMethod::NegEntropy, 10000, r2);
  CHECK(std::abs(-ent[0] - 1.4189) < 0.02);

  Rng r3(9);
  CHECK_THROWS_AS(confidence_scores(preds, ConfidenceMethod::InvStd, 1, r3),
                  StructuralError);
}

TEST_CASE("narrower predictive distributions score higher confidence") {
  FeatureSchema schema = make_schema(1);
  ModelConfig mc;
  mc.encoder.embed_dim = 2;
  mc.encoder.blocks = 0;
  TabularDataset ds = make_dataset(schema, 1, 10);
  DensityModel narrow =
      DensityModel::create(identity_prep(schema, 0.0, 0.5), mc, Rng(11));
  DensityModel wide =
      DensityModel::create(identity_prep(schema, 0.0, 3.0), mc, Rng(11));
  std::vector<PredictiveDistribution> preds;
  preds.push_back(narrow.predict_all(ds)[0]);
  preds.push_back(wide.predict_all(ds)[0]);
  for (ConfidenceMethod m :
       {ConfidenceMethod::InvStd, ConfidenceMethod::NegEntropy}) {
    Rng rng(12);
    std::vector<double> scores = confidence_scores(preds, m, 2000, rng);
    CHECK(scores[0] > scores[1]);
  }
}

TEST_CASE("risk-coverage worked example: descending confidences") {
  // confidences 10..1, errors 1..10: top-k risk is the prefix mean (k+1)/2.
  std::vector<double> conf(10), err(10);
  for (std::size_t i = 0; i < 10; ++i) {
    conf[i] = 10.0 - static_cast<double>(i);
    err[i] = static_cast<double>(i + 1);
  }
  RiskCoverageCurve curve = risk_coverage(conf, err, decile_levels());
  const std::vector<double> expect = {1.0, 1.5, 2.0, 2.5, 3.0,
                                      3.5, 4.0, 4.5, 5.0, 5.5};
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(curve.risk[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  }
  curve.aurc = aurc(curve);
  CHECK(curve.aurc == doctest::Approx(2.925).epsilon(1e-15));
}

TEST_CASE("constant risk gives a flat curve and aurc = 0.9 r") {
  std::vector<double> conf = {5, 4, 3, 2, 1, 0, -1, -2, -3, -4, 7, 8};
  std::vector<double> err(12, 5.0);
  RiskCoverageCurve curve = risk_coverage(conf, err, decile_levels());
  for (double v : curve.risk) CHECK(v == 5.0);
  CHECK(aurc(curve) == 0.9 * 5.0);
}

TEST_CASE("aurc is invariant under strictly monotone confidence transforms") {
  Rng rng(13);
  std::vector<double> conf(40), err(40);
  for (std::size_t i = 0; i < 40; ++i) {
    conf[i] = rng.normal();
    err[i] = std::abs(rng.normal()) * 10.0;
  }
  RiskCoverageCurve base = risk_coverage(conf, err, decile_levels());
  std::vector<double> squashed = conf;
  for (double& c : squashed) c = std::tanh(c) * 3.0 + 100.0;
  RiskCoverageCurve mapped = risk_coverage(squashed, err, decile_levels());
  CHECK(base.risk == mapped.risk);  // exact, rank-only dependence
  CHECK(aurc(base) == aurc(mapped));
}

TEST_CASE("aurc linearity and the full-coverage identity") {
  Rng rng(14);
  std::vector<double> conf(25), err(25);
  for (std::size_t i = 0; i < 25; ++i) {
    conf[i] = rng.normal();
    err[i] = std::abs(rng.normal());
  }
  RiskCoverageCurve curve = risk_coverage(conf, err, decile_levels());
  CHECK(curve.risk.back() == doctest::Approx(oracles::mean(err)).epsilon(1e-12));
  RiskCoverageCurve doubled = curve;
  for (double& v : doubled.risk) v *= 2.0;
  CHECK(aurc(doubled) == doctest::Approx(2.0 * aurc(curve)).epsilon(1e-15));
}

TEST_CASE("risk-coverage tie-breaking is stable by original index") {
  std::vector<double> conf = {1.0, 1.0, 1.0, 1.0, 1.0,
                              1.0, 1.0, 1.0, 1.0, 1.0};
  std::vector<double> err = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  RiskCoverageCurve curve = risk_coverage(conf, err, decile_levels());
  CHECK(curve.risk[0] == 1.0);  // first original row wins the tie
  CHECK(curve.risk[9] == 5.5);
}

TEST_CASE("aurc requires the full decile grid") {
  RiskCoverageCurve partial;
  partial.coverage = {10, 20, 30};
  partial.risk = {1, 1, 1};
  CHECK_THROWS_AS(aurc(partial), StructuralError);
  std::vector<double> conf = {3, 2, 1};
  std::vector<double> err = {1, 1, 1};
  CHECK_THROWS_AS(
      risk_coverage(conf, err, std::vector<double>{50.0, 40.0}),
      StructuralError);
  CHECK_THROWS_AS(
      risk_coverage(std::vector<double>{}, std::vector<double>{},
                    decile_levels()),
      StructuralError);
}
