#include <cmath>

#include "doctest.h"
#include "flowreg/encoder.hpp"
#include "flowreg/errors.hpp"
#include "test_models.hpp"

using namespace flowreg;
using namespace testutil;

namespace {

EncoderBatch one_row_batch(const FeatureSchema& schema,
                           const std::vector<double>& numeric,
                           const std::vector<std::size_t>& cats = {}) {
  EncoderBatch b;
  b.numeric = Tensor({1, numeric.size()}, numeric);
  for (std::size_t idx : cats) b.categorical.push_back({idx});
  (void)schema;
  return b;
}

}  // namespace

TEST_CASE("numeric embedding output width follows the config") {
  for (std::size_t d : {std::size_t{1}, std::size_t{8}, std::size_t{64}}) {
    FeatureSchema schema = make_schema(1);
    EncoderConfig cfg;
    cfg.embed_dim = d;
    cfg.blocks = 0;
    EncoderParameters params = init_encoder(schema, cfg, Rng(1));
    Graph g;
    Rng drop(0);
    auto h = encode_graph(g, schema, params, one_row_batch(schema, {2.0}), drop);
    CHECK(g.value(h).cols() == d);
  }
}

TEST_CASE("zero embedding weights produce the zero vector") {
  FeatureSchema schema = make_schema(1);
  EncoderConfig cfg;
  cfg.embed_dim = 4;
  cfg.blocks = 0;
  EncoderParameters params = init_encoder(schema, cfg, Rng(1));
  params.numeric[0].first.weight.fill(0.0);
  params.numeric[0].first.bias.fill(0.0);
  params.numeric[0].second.weight.fill(0.0);
  params.numeric[0].second.bias.fill(0.0);
  Graph g;
  Rng drop(0);
  auto h = encode_graph(g, schema, params, one_row_batch(schema, {123.0}), drop);
  for (double v : g.value(h).values()) CHECK(v == 0.0);
}

TEST_CASE("hand-computed 2x2 numeric embedding") {
  // first: 1->2 broadcast with weights [1, -1], no bias; relu; second:
  // identity. x = 2 gives relu([2, -2]) = [2, 0].
  FeatureSchema schema = make_schema(1);
  EncoderConfig cfg;
  cfg.embed_dim = 2;
  cfg.blocks = 0;
  EncoderParameters params = init_encoder(schema, cfg, Rng(1));
  params.numeric[0].first.weight = Tensor({1, 2}, {1.0, -1.0});
  params.numeric[0].first.bias = Tensor::zeros(1, 2);
  params.numeric[0].second.weight = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  params.numeric[0].second.bias = Tensor::zeros(1, 2);
  Graph g;
  Rng drop(0);
  auto h = encode_graph(g, schema, params, one_row_batch(schema, {2.0}), drop);
  CHECK(g.value(h)[0] == 2.0);
  CHECK(g.value(h)[1] == 0.0);
}

TEST_CASE("categorical lookup: rows, reserved unknown slot, distinctness") {
  FeatureSchema schema = make_schema(0, {3});
  EncoderConfig cfg;
  cfg.embed_dim = 2;
  cfg.blocks = 0;
  EncoderParameters params = init_encoder(schema, cfg, Rng(2));
  CHECK(params.tables[0].rows() == 4);  // cardinality + reserved unknown

  Graph g;
  Rng drop(0);
  EncoderBatch b;
  b.numeric = Tensor::zeros(3, 0);
  b.categorical = {{0, 3, 1}};  // index 3 is the unknown slot
  auto h = encode_graph(g, schema, params, b, drop);
  const Tensor& t = params.tables[0];
  CHECK(g.value(h).at(0, 0) == t.at(0, 0));
  CHECK(g.value(h).at(1, 0) == t.at(3, 0));
  CHECK(g.value(h).at(1, 1) == t.at(3, 1));
  bool distinct = g.value(h).at(0, 0) != g.value(h).at(2, 0) ||
                  g.value(h).at(0, 1) != g.value(h).at(2, 1);
  CHECK(distinct);

  EncoderBatch bad = b;
  bad.categorical = {{4, 0, 0}};
  Graph g2;
  CHECK_THROWS_AS(encode_graph(g2, schema, params, bad, drop), StructuralError);
}

TEST_CASE("h0 concatenates embeddings in schema order") {
  FeatureSchema schema = make_schema(2);
  EncoderConfig cfg;
  cfg.embed_dim = 2;
  cfg.blocks = 0;
  cfg.numeric_mlp = false;  // single linear keeps the arithmetic trivial
  EncoderParameters params = init_encoder(schema, cfg, Rng(3));
  params.numeric[0].first.weight = Tensor({1, 2}, {1.0, 0.0});
  params.numeric[0].first.bias = Tensor({1, 2}, {0.0, 2.0});
  params.numeric[1].first.weight = Tensor({1, 2}, {0.0, 1.0});
  params.numeric[1].first.bias = Tensor({1, 2}, {3.0, 0.0});
  Graph g;
  Rng drop(0);
  auto h = encode_graph(g, schema, params, one_row_batch(schema, {1.0, 4.0}),
                        drop);
  // e1 = [1, 2], e2 = [3, 4] -> h0 = [1, 2, 3, 4]
  CHECK(g.value(h).values() == std::vector<double>{1.0, 2.0, 3.0, 4.0});
}

TEST_CASE("zero resnet branch weights make every block an identity") {
  FeatureSchema schema = make_schema(2, {3});
  EncoderConfig cfg;
  cfg.embed_dim = 3;
  cfg.blocks = 3;
  EncoderParameters params = init_encoder(schema, cfg, Rng(4));
  for (auto& blk : params.blocks) {
    blk.fc2.weight.fill(0.0);
    blk.fc2.bias.fill(0.0);
  }
  EncoderConfig cfg0 = cfg;
  cfg0.blocks = 0;
  EncoderParameters params0 = init_encoder(schema, cfg0, Rng(4));

  EncoderBatch b;
  b.numeric = Tensor({2, 2}, {0.3, -1.0, 0.9, 0.1});
  b.categorical = {{1, 2}};
  Graph g, g0;
  Rng drop(0);
  auto h = encode_graph(g, schema, params, b, drop);
  auto h0 = encode_graph(g0, schema, params0, b, drop);
  for (std::size_t i = 0; i < g.value(h).size(); ++i) {
    CHECK(g.value(h)[i] == g0.value(h0)[i]);
  }
}

TEST_CASE("eval-mode encode is bitwise deterministic") {
  FeatureSchema schema = make_schema(3, {2});
  EncoderConfig cfg;
  cfg.embed_dim = 4;
  cfg.blocks = 2;
  cfg.dropout = 0.5;
  EncoderParameters params = init_encoder(schema, cfg, Rng(5));
  EncoderBatch b;
  b.numeric = Tensor({2, 3}, {0.1, 0.2, 0.3, -0.1, -0.2, -0.3});
  b.categorical = {{0, 1}};
  auto run = [&]() {
    Graph g(false);
    Rng drop(99);
    auto h = encode_graph(g, schema, params, b, drop);
    return g.value(h).values();
  };
  CHECK(run() == run());
}

TEST_CASE("train-mode dropout depends on the rng stream, eval does not") {
  FeatureSchema schema = make_schema(2);
  EncoderConfig cfg;
  cfg.embed_dim = 4;
  cfg.blocks = 1;
  cfg.dropout = 0.5;
  EncoderParameters params = init_encoder(schema, cfg, Rng(6));
  EncoderBatch b;
  b.numeric = Tensor({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto run = [&](bool training, std::uint64_t seed) {
    EncoderParameters local = params;  // keep running stats isolated
    Graph g(training);
    Rng drop(seed);
    auto h = encode_graph(g, schema, local, b, drop);
    return g.value(h).values();
  };
  CHECK(run(false, 1) == run(false, 2));
  CHECK(run(true, 1) != run(true, 2));
}

TEST_CASE("linear numeric ablation narrows the parameter registry") {
  FeatureSchema schema = make_schema(2, {2});
  EncoderConfig mlp_cfg;
  mlp_cfg.embed_dim = 4;
  mlp_cfg.blocks = 1;
  EncoderConfig lin_cfg = mlp_cfg;
  lin_cfg.numeric_mlp = false;
  EncoderParameters with_mlp = init_encoder(schema, mlp_cfg, Rng(7));
  EncoderParameters with_lin = init_encoder(schema, lin_cfg, Rng(7));
  CHECK(encoder_parameters(with_mlp).size() ==
        encoder_parameters(with_lin).size() + 4);

  EncoderBatch b;
  b.numeric = Tensor({2, 2}, {0.5, 1.5, -0.5, 2.0});
  b.categorical = {{0, 1}};
  Graph g;
  Rng drop(0);
  auto h = encode_graph(g, schema, with_lin, b, drop);
  CHECK(g.value(h).cols() == schema.feature_count() * 4);
}

TEST_CASE("encoder gradients match finite differences end to end") {
  FeatureSchema schema = make_schema(2, {3});
  EncoderConfig cfg;
  cfg.embed_dim = 3;
  cfg.blocks = 2;
  cfg.dropout = 0.2;
  EncoderParameters params = init_encoder(schema, cfg, Rng(8));
  EncoderBatch b;
  Rng data(9);
  b.numeric = Tensor::zeros(5, 2);
  for (double& v : b.numeric.values()) v = data.normal();
  b.categorical = {{0, 1, 2, 0, 1}};
  Graph g(true);
  Rng drop(10);
  std::vector<Graph::NodeId> param_nodes;
  auto h = encode_graph(g, schema, params, b, drop, &param_nodes);
  auto loss = g.mean_all(g.mul(h, h));
  CHECK(g.finite_difference_check(loss, param_nodes, 1e-5) < 1e-4);
}

TEST_CASE("encode rejects schema/batch mismatches and empty batches") {
  FeatureSchema schema = make_schema(2, {2});
  EncoderConfig cfg;
  cfg.embed_dim = 2;
  EncoderParameters params = init_encoder(schema, cfg, Rng(11));
  Graph g;
  Rng drop(0);
  EncoderBatch wrong;
  wrong.numeric = Tensor({1, 1}, {0.0});
  wrong.categorical = {{0}};
  CHECK_THROWS_AS(encode_graph(g, schema, params, wrong, drop),
                  StructuralError);
}
