#pragma once

#include <vector>

#include "flowreg/graph.hpp"
#include "flowreg/rng.hpp"
#include "flowreg/schema.hpp"
#include "flowreg/tensor.hpp"

namespace flowreg {

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
};

//! Two-layer embedding for one numeric feature: Linear(ReLU(Linear(x))).
//! When the encoder runs with numeric_mlp = false only `first` is used and
//! the feature is a single linear projection into R^D.
struct NumericEmbedding {
  LinearParams first;   // [1, D]
  LinearParams second;  // [D, D]
};

//! One residual block: h + Linear(Dropout(ReLU(Linear(BatchNorm(h))))),
//! with dropout after each linear layer in train mode.
struct ResNetBlockParams {
  BatchNormState norm;
  LinearParams fc1;  // [F*D, H]
  LinearParams fc2;  // [H, F*D]
};

struct EncoderConfig {
  std::size_t embed_dim = 16;      // D
  std::size_t blocks = 2;          // L
  double hidden_multiplier = 2.0;  // H = multiplier * F * D
  double dropout = 0.1;
  bool numeric_mlp = true;  // false: single linear numeric projection
};

struct EncoderParameters {
  EncoderConfig config;
  std::vector<NumericEmbedding> numeric;  // one per numeric feature
  std::vector<Tensor> tables;             // one per categorical feature,
                                          // [cardinality + 1, D]
  std::vector<ResNetBlockParams> blocks;

  std::size_t width(const FeatureSchema& schema) const {
    return schema.feature_count() * config.embed_dim;
  }
};

//! Fresh parameters with scaled uniform fan-in init for linear layers.
EncoderParameters init_encoder(const FeatureSchema& schema,
                               const EncoderConfig& config, Rng rng);

//! One batch of encoded inputs in schema order.
struct EncoderBatch {
  Tensor numeric;  // [N, numeric_count], already standardized
  std::vector<std::vector<std::size_t>> categorical;  // per cat feature
  std::size_t rows() const;
};

//! Builds the embedding + ResNet pipeline on the graph and returns h^(L)
//! of shape [N, F*D]. Mutates batch-norm running statistics in train mode.
Graph::NodeId encode_graph(Graph& g, const FeatureSchema& schema,
                           EncoderParameters& params, const EncoderBatch& batch,
                           Rng& dropout_rng,
                           std::vector<Graph::NodeId>* param_nodes = nullptr);

//! Registry of every trainable tensor in the encoder, in a fixed order.
std::vector<Tensor*> encoder_parameters(EncoderParameters& params);

}  // namespace flowreg
