#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowreg/data.hpp"
#include "flowreg/encoder.hpp"
#include "flowreg/flow_graph.hpp"
#include "flowreg/spline.hpp"

namespace flowreg {

enum class HeadKind { Spline, Gaussian };

struct FlowConfig {
  std::size_t bins = 8;      // M
  double tail_bound = 3.0;   // B
  std::size_t layers = 1;    // stacked spline transforms
  double min_bin = 1e-3;
  double min_derivative = 1e-3;

  SplineConfig spline() const {
    return {bins, tail_bound, min_bin, min_derivative};
  }
  std::size_t head_width() const { return layers * raw_param_count(bins); }
};

struct ModelConfig {
  EncoderConfig encoder;
  FlowConfig flow;
  HeadKind head = HeadKind::Spline;

  std::size_t head_width() const {
    return head == HeadKind::Spline ? flow.head_width() : 2;
  }
};

struct TrainConfig {
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_nll = 0.0;  // original target units
  double val_nll = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_nll = 0.0;
};

//! Per-instance predictive distribution with exact density, analytic
//! sampling and exact median. All outputs are in original target units.
class PredictiveDistribution {
 public:
  double log_density(double y) const;
  //! P(Y <= y); the base-distribution cdf pushed through the flow.
  double cdf(double y) const;
  double sample(Rng& rng) const;
  std::vector<double> sample(std::size_t n, Rng& rng) const;
  double median() const;
  //! Monte Carlo mean over n draws (n >= 1).
  double mean(std::size_t n, Rng& rng) const;
  //! Sample standard deviation over n draws (n >= 2).
  double stddev(std::size_t n, Rng& rng) const;

 private:
  friend class DensityModel;
  HeadKind kind_ = HeadKind::Spline;
  std::vector<SplineParameterization> layers_;  // spline head
  double gauss_mean_ = 0.0;                     // gaussian head, standardized
  double gauss_logvar_ = 0.0;
  double mu_y_ = 0.0;
  double sigma_y_ = 1.0;
};

//! Conditional density model: tabular encoder, conditioning head and a
//! spline flow (or Gaussian head) over the standardized target.
class DensityModel {
 public:
  DensityModel() = default;

  static DensityModel create(Preprocessor preprocessor, ModelConfig config,
                             Rng init_rng);

  const FeatureSchema& schema() const { return prep.schema(); }
  double target_mean() const { return prep.target_mean(); }
  double target_std() const { return prep.target_std(); }

  //! All trainable tensors in a fixed order (encoder then head).
  std::vector<Tensor*> parameters();

  //! Predictive distributions for a batch of rows (eval mode).
  std::vector<PredictiveDistribution> predict(
      const TabularDataset& data, std::span<const std::size_t> rows) const;
  std::vector<PredictiveDistribution> predict_all(
      const TabularDataset& data) const;

  //! log p(y | x) in original units for one dataset row.
  double log_density(const TabularDataset& data, std::size_t row,
                     double y) const;
  //! Mean NLL over rows, original units; uses the stored standardized target.
  double nll(const TabularDataset& data) const;

  static std::pair<DensityModel, TrainHistory> train(
      const Preprocessor& prep, const TabularDataset& train_data,
      const TabularDataset& val_data, const ModelConfig& model_config,
      const TrainConfig& train_config);

  void save(const std::string& path) const;
  static DensityModel load(const std::string& path);

  Preprocessor prep;
  ModelConfig config;
  EncoderParameters encoder;
  LinearParams head;
  bool training_mode = false;
};

//! Training-loss graph over a batch: mean standardized NLL with reverse-mode
//! gradients for every model parameter. Exposed for gradient verification.
struct LossGraph {
  Graph graph;
  Graph::NodeId loss = 0;
  std::vector<Graph::NodeId> params;  // aligned with DensityModel::parameters()

  explicit LossGraph(bool training) : graph(training) {}
};

std::unique_ptr<LossGraph> build_nll_graph(DensityModel& model,
                                           const EncoderBatch& batch,
                                           std::span<const double> targets,
                                           Rng& dropout_rng, bool training);

}  // namespace flowreg
