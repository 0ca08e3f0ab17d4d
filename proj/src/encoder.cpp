#include "flowreg/encoder.hpp"

#include <cmath>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

Tensor uniform_fan_in(std::size_t in, std::size_t out, Rng& rng) {
  Tensor t = Tensor::zeros(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  LinearParams p;
  p.weight = uniform_fan_in(in, out, rng);
  p.bias = Tensor::zeros(1, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : p.bias.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return p;
}

}  // namespace

std::size_t EncoderBatch::rows() const { return numeric.rows(); }

EncoderParameters init_encoder(const FeatureSchema& schema,
                               const EncoderConfig& config, Rng rng) {
  schema.validate();
  if (config.embed_dim < 1) throw ConfigError("encoder: embed_dim must be >= 1");
  if (config.dropout < 0.0 || config.dropout >= 1.0) {
    throw ConfigError("encoder: dropout must be in [0, 1)");
  }
  EncoderParameters p;
  p.config = config;
  const std::size_t d = config.embed_dim;
  Rng init = rng.stream("encoder-init");
  for (const Feature& f : schema.features) {
    if (f.kind == FeatureKind::Numeric) {
      NumericEmbedding e;
      e.first = init_linear(1, d, init);
      if (config.numeric_mlp) e.second = init_linear(d, d, init);
      p.numeric.push_back(std::move(e));
    } else {
      p.tables.push_back(uniform_fan_in(f.cardinality() + 1, d, init));
    }
  }
  const std::size_t fd = schema.feature_count() * d;
  const std::size_t hidden = std::max<std::size_t>(
      1, static_cast<std::size_t>(config.hidden_multiplier *
                                  static_cast<double>(fd)));
  for (std::size_t b = 0; b < config.blocks; ++b) {
    ResNetBlockParams block;
    block.norm.gamma = Tensor::full(1, fd, 1.0);
    block.norm.beta = Tensor::zeros(1, fd);
    block.norm.running_mean = Tensor::zeros(1, fd);
    block.norm.running_var = Tensor::full(1, fd, 1.0);
    block.fc1 = init_linear(fd, hidden, init);
    block.fc2 = init_linear(hidden, fd, init);
    p.blocks.push_back(std::move(block));
  }
  return p;
}

std::vector<Tensor*> encoder_parameters(EncoderParameters& params) {
  std::vector<Tensor*> out;
  for (NumericEmbedding& e : params.numeric) {
    out.push_back(&e.first.weight);
    out.push_back(&e.first.bias);
    if (params.config.numeric_mlp) {
      out.push_back(&e.second.weight);
      out.push_back(&e.second.bias);
    }
  }
  for (Tensor& t : params.tables) out.push_back(&t);
  for (ResNetBlockParams& b : params.blocks) {
    out.push_back(&b.norm.gamma);
    out.push_back(&b.norm.beta);
    out.push_back(&b.fc1.weight);
    out.push_back(&b.fc1.bias);
    out.push_back(&b.fc2.weight);
    out.push_back(&b.fc2.bias);
  }
  return out;
}

Graph::NodeId encode_graph(Graph& g, const FeatureSchema& schema,
                           EncoderParameters& params, const EncoderBatch& batch,
                           Rng& dropout_rng,
                           std::vector<Graph::NodeId>* param_nodes) {
  schema.validate();
  const std::size_t n = batch.rows();
  if (n == 0) throw StructuralError("encode: empty batch");
  if (batch.numeric.cols() != schema.numeric_count() ||
      batch.categorical.size() != schema.categorical_count()) {
    throw StructuralError("encode: batch does not match schema");
  }

  auto track = [&](Graph::NodeId id) {
    if (param_nodes != nullptr) param_nodes->push_back(id);
    return id;
  };
  auto linear = [&](Graph::NodeId x, LinearParams& lp) {
    Graph::NodeId w = track(g.param(lp.weight));
    Graph::NodeId b = track(g.param(lp.bias));
    return g.add(g.matmul(x, w), b);
  };

  Graph::NodeId numeric_in = g.input(n, schema.numeric_count());
  g.bind(numeric_in, batch.numeric);

  // Per-feature embeddings, concatenated in schema order to h^(0).
  std::vector<Graph::NodeId> embeddings;
  std::size_t num_i = 0, cat_i = 0;
  for (const Feature& f : schema.features) {
    if (f.kind == FeatureKind::Numeric) {
      Graph::NodeId x = g.slice_cols(numeric_in, num_i, num_i + 1);
      NumericEmbedding& e = params.numeric[num_i];
      Graph::NodeId emb = linear(x, e.first);
      if (params.config.numeric_mlp) {
        emb = linear(g.relu(emb), e.second);
      }
      embeddings.push_back(emb);
      ++num_i;
    } else {
      Graph::NodeId table = track(g.param(params.tables[cat_i]));
      embeddings.push_back(g.embed_rows(table, batch.categorical[cat_i]));
      ++cat_i;
    }
  }
  Graph::NodeId h = embeddings.size() == 1 ? embeddings[0]
                                           : g.concat_cols(embeddings);

  for (ResNetBlockParams& block : params.blocks) {
    Graph::NodeId gamma = track(g.param(block.norm.gamma));
    Graph::NodeId beta = track(g.param(block.norm.beta));
    Graph::NodeId branch =
        g.batch_norm(h, gamma, beta, &block.norm, 0.1, 1e-5);
    branch = g.dropout(g.relu(linear(branch, block.fc1)),
                       params.config.dropout, dropout_rng);
    branch = g.dropout(linear(branch, block.fc2), params.config.dropout,
                       dropout_rng);
    h = g.add(h, branch);
  }
  return h;
}

}  // namespace flowreg
