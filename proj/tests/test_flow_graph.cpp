#include <cmath>

#include "doctest.h"
#include "flowreg/errors.hpp"
#include "flowreg/flow_graph.hpp"
#include "flowreg/model.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace flowreg;
using namespace testutil;

namespace {

// Raw head values as a graph constant for direct flow-graph tests.
Graph::NodeId raw_node(Graph& g, const Tensor& t) { return g.constant(t); }

}  // namespace

TEST_CASE("flow graph matches the scalar inverse path") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(101);
  for (std::size_t layers : {std::size_t{1}, std::size_t{3}}) {
    const std::size_t width = layers * raw_param_count(cfg.bins);
    const std::size_t n = 32;
    Tensor raw = Tensor::zeros(n, width);
    for (double& v : raw.values()) v = rng.normal();
    Tensor y = Tensor::zeros(n, 1);
    for (double& v : y.values()) v = rng.normal() * 2.0;  // some tails

    Graph g;
    auto yn = g.constant(y);
    FlowGraphResult res =
        flow_inverse_graph(g, yn, raw_node(g, raw), layers, cfg);

    for (std::size_t r = 0; r < n; ++r) {
      std::vector<SplineParameterization> ps;
      for (std::size_t k = 0; k < layers; ++k) {
        std::span<const double> raw_k(
            raw.data() + r * width + k * raw_param_count(cfg.bins),
            raw_param_count(cfg.bins));
        ps.push_back(constrain(raw_k, cfg));
      }
      const SplineResult scalar = stack_inverse(y.at(r, 0), ps);
      CHECK(g.value(res.z).at(r, 0) ==
            doctest::Approx(scalar.value).epsilon(1e-9));
      CHECK(g.value(res.log_abs_det).at(r, 0) ==
            doctest::Approx(scalar.log_abs_det).epsilon(1e-9));
    }
  }
}

TEST_CASE("log|det| gradient w.r.t. raw logits matches finite differences") {
  SplineConfig cfg;
  cfg.bins = 8;
  Rng rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.stream(trial);
    const std::size_t n = 4;
    Tensor raw = Tensor::zeros(n, raw_param_count(cfg.bins));
    for (double& v : raw.values()) v = r.normal();
    Tensor y = Tensor::zeros(n, 1);
    for (double& v : y.values()) v = r.normal() * 1.5;

    Graph g;
    auto rawp = g.param(raw);
    auto yn = g.constant(y);
    FlowGraphResult res = flow_inverse_graph(g, yn, rawp, 1, cfg);
    auto loss = g.mean_all(res.log_abs_det);
    CHECK(g.finite_difference_check(loss, {rawp}, 1e-5) < 1e-4);
  }
}

TEST_CASE("full spline nll gradient matches finite differences") {
  ModelConfig mc;
  mc.encoder.embed_dim = 3;
  mc.encoder.blocks = 1;
  mc.encoder.dropout = 0.0;
  mc.flow.bins = 4;
  Rng rng(107);
  for (int trial = 0; trial < 5; ++trial) {
    FeatureSchema schema = make_schema(2, {3});
    DensityModel model = random_model(schema, mc, 1000 + trial, 0.5);
    TabularDataset ds = make_dataset(schema, 6, 2000 + trial);
    Rng drop(1);
    auto lg = build_nll_graph(model, ds.batch_all(), ds.target, drop, true);
    CHECK(lg->graph.finite_difference_check(lg->loss, lg->params, 1e-5) < 1e-4);
  }
}

TEST_CASE("nll gradient with dropout active still matches fd (cached mask)") {
  ModelConfig mc;
  mc.encoder.embed_dim = 2;
  mc.encoder.blocks = 1;
  mc.encoder.dropout = 0.3;
  mc.flow.bins = 4;
  FeatureSchema schema = make_schema(2);
  DensityModel model = random_model(schema, mc, 17, 0.5);
  TabularDataset ds = make_dataset(schema, 5, 18);
  Rng drop(5);
  auto lg = build_nll_graph(model, ds.batch_all(), ds.target, drop, true);
  CHECK(lg->graph.finite_difference_check(lg->loss, lg->params, 1e-5) < 1e-4);
}

TEST_CASE("gaussian head nll gradient matches finite differences") {
  ModelConfig mc;
  mc.encoder.embed_dim = 3;
  mc.encoder.blocks = 1;
  mc.encoder.dropout = 0.0;
  mc.head = HeadKind::Gaussian;
  FeatureSchema schema = make_schema(2, {2});
  DensityModel model = random_model(schema, mc, 23, 0.3);
  TabularDataset ds = make_dataset(schema, 6, 29);
  Rng drop(1);
  auto lg = build_nll_graph(model, ds.batch_all(), ds.target, drop, true);
  CHECK(lg->graph.finite_difference_check(lg->loss, lg->params, 1e-5) < 1e-4);
}

TEST_CASE("zero-initialized head: initial loss is the base-distribution nll") {
  ModelConfig mc;
  mc.encoder.embed_dim = 4;
  mc.encoder.blocks = 2;
  FeatureSchema schema = make_schema(3, {4});
  DensityModel model =
      DensityModel::create(identity_prep(schema), mc, Rng(31));
  TabularDataset ds = make_dataset(schema, 64, 37);
  Rng drop(2);
  auto lg = build_nll_graph(model, ds.batch_all(), ds.target, drop, true);
  double expect = 0.0;
  for (double t : ds.target) expect += -oracles::normal_log_pdf(t);
  expect /= static_cast<double>(ds.target.size());
  CHECK(std::abs(lg->graph.value(lg->loss)[0] - expect) < 1e-10);
}

TEST_CASE("duplicating every batch row leaves the loss unchanged") {
  ModelConfig mc;
  mc.encoder.embed_dim = 3;
  mc.encoder.blocks = 1;
  mc.encoder.dropout = 0.0;
  FeatureSchema schema = make_schema(2);
  DensityModel model = random_model(schema, mc, 41, 0.4);
  TabularDataset ds = make_dataset(schema, 8, 43);

  std::vector<std::size_t> once = all_rows(ds);
  std::vector<std::size_t> twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  Rng drop(3);
  auto a = build_nll_graph(model, ds.batch(once), ds.targets(once), drop, true);
  auto b =
      build_nll_graph(model, ds.batch(twice), ds.targets(twice), drop, true);
  CHECK(a->graph.value(a->loss)[0] ==
        doctest::Approx(b->graph.value(b->loss)[0]).epsilon(1e-9));
}

TEST_CASE("flow graph rejects bad layer/width combinations") {
  SplineConfig cfg;
  cfg.bins = 4;
  Graph g;
  auto y = g.constant(Tensor::zeros(2, 1));
  auto raw = g.constant(Tensor::zeros(2, raw_param_count(4)));
  CHECK_THROWS_AS(flow_inverse_graph(g, y, raw, 2, cfg), StructuralError);
  CHECK_THROWS_AS(flow_inverse_graph(g, y, raw, 0, cfg), ConfigError);
}
