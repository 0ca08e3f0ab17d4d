#include "flowreg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowreg/adam.hpp"
#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

double normal_log_pdf(double z) { return -0.5 * z * z - kHalfLog2Pi; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must be in (0, 1)");
  }
}

// ---------------------------------------------------------------------------
// PredictiveDistribution

double PredictiveDistribution::log_density(double y) const {
  if (!std::isfinite(y)) throw NumericError("log_density: non-finite target");
  const double ys = (y - mu_y_) / sigma_y_;
  if (kind_ == HeadKind::Spline) {
    const SplineResult r = stack_inverse(ys, layers_);
    return normal_log_pdf(r.value) + r.log_abs_det - std::log(sigma_y_);
  }
  const double sd = std::exp(0.5 * gauss_logvar_);
  const double zs = (ys - gauss_mean_) / sd;
  return normal_log_pdf(zs) - std::log(sd) - std::log(sigma_y_);
}

double PredictiveDistribution::cdf(double y) const {
  if (!std::isfinite(y)) throw NumericError("cdf: non-finite target");
  const double ys = (y - mu_y_) / sigma_y_;
  double z;
  if (kind_ == HeadKind::Spline) {
    z = stack_inverse(ys, layers_).value;
  } else {
    z = (ys - gauss_mean_) / std::exp(0.5 * gauss_logvar_);
  }
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double PredictiveDistribution::sample(Rng& rng) const {
  const double z = rng.normal();
  if (kind_ == HeadKind::Spline) {
    return mu_y_ + sigma_y_ * stack_forward(z, layers_).value;
  }
  return mu_y_ + sigma_y_ * (gauss_mean_ + std::exp(0.5 * gauss_logvar_) * z);
}

std::vector<double> PredictiveDistribution::sample(std::size_t n,
                                                   Rng& rng) const {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = sample(rng);
  return out;
}

double PredictiveDistribution::median() const {
  if (kind_ == HeadKind::Spline) {
    return mu_y_ + sigma_y_ * stack_forward(0.0, layers_).value;
  }
  return mu_y_ + sigma_y_ * gauss_mean_;
}

double PredictiveDistribution::mean(std::size_t n, Rng& rng) const {
  if (n < 1) throw StructuralError("mean: need at least 1 sample");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += sample(rng);
  return sum / static_cast<double>(n);
}

double PredictiveDistribution::stddev(std::size_t n, Rng& rng) const {
  if (n < 2) throw StructuralError("stddev: need at least 2 samples");
  std::vector<double> draws = sample(n, rng);
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : draws) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------
// DensityModel

DensityModel DensityModel::create(Preprocessor preprocessor, ModelConfig config,
                                  Rng init_rng) {
  DensityModel m;
  m.prep = std::move(preprocessor);
  m.config = config;
  m.encoder = init_encoder(m.prep.schema(), config.encoder, init_rng);
  // Zero-initialized head: the flow starts as the identity transform and the
  // Gaussian head as a standard normal over the standardized target.
  const std::size_t fd = m.encoder.width(m.prep.schema());
  m.head.weight = Tensor::zeros(fd, config.head_width());
  m.head.bias = Tensor::zeros(1, config.head_width());
  m.training_mode = false;
  return m;
}

std::vector<Tensor*> DensityModel::parameters() {
  std::vector<Tensor*> out = encoder_parameters(encoder);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

namespace {

// Encoder + head forward on a fresh graph; returns the head output node.
Graph::NodeId head_forward(Graph& g, DensityModel& model,
                           const EncoderBatch& batch, Rng& dropout_rng,
                           std::vector<Graph::NodeId>* param_nodes) {
  Graph::NodeId h = encode_graph(g, model.prep.schema(), model.encoder, batch,
                                 dropout_rng, param_nodes);
  Graph::NodeId w = g.param(model.head.weight);
  Graph::NodeId b = g.param(model.head.bias);
  if (param_nodes != nullptr) {
    param_nodes->push_back(w);
    param_nodes->push_back(b);
  }
  return g.add(g.matmul(h, w), b);
}

}  // namespace

std::vector<PredictiveDistribution> DensityModel::predict(
    const TabularDataset& data, std::span<const std::size_t> rows) const {
  if (training_mode) {
    throw StructuralError("predict: model must be in eval mode");
  }
  auto& self = const_cast<DensityModel&>(*this);  // BN stats untouched in eval
  EncoderBatch batch = data.batch(rows);
  Graph g(false);
  Rng dummy(0);
  Graph::NodeId raw = head_forward(g, self, batch, dummy, nullptr);
  const Tensor& rv = g.value(raw);

  std::vector<PredictiveDistribution> out(rows.size());
  const SplineConfig scfg = config.flow.spline();
  const std::size_t per_layer = raw_param_count(config.flow.bins);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    PredictiveDistribution& p = out[r];
    p.kind_ = config.head;
    p.mu_y_ = prep.target_mean();
    p.sigma_y_ = prep.target_std();
    if (config.head == HeadKind::Spline) {
      p.layers_.reserve(config.flow.layers);
      for (std::size_t k = 0; k < config.flow.layers; ++k) {
        std::span<const double> raw_k(rv.data() + r * rv.cols() + k * per_layer,
                                      per_layer);
        p.layers_.push_back(constrain(raw_k, scfg));
      }
    } else {
      p.gauss_mean_ = rv.at(r, 0);
      p.gauss_logvar_ = rv.at(r, 1);
    }
  }
  return out;
}

std::vector<PredictiveDistribution> DensityModel::predict_all(
    const TabularDataset& data) const {
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return predict(data, rows);
}

double DensityModel::log_density(const TabularDataset& data, std::size_t row,
                                 double y) const {
  const std::size_t idx[] = {row};
  return predict(data, idx)[0].log_density(y);
}

double DensityModel::nll(const TabularDataset& data) const {
  if (!data.has_target) throw StructuralError("nll: dataset has no target");
  if (data.rows() == 0) throw StructuralError("nll: empty dataset");
  std::vector<PredictiveDistribution> preds = predict_all(data);
  const double log_sigma = std::log(prep.target_std());
  double total = 0.0;
  for (std::size_t r = 0; r < preds.size(); ++r) {
    const PredictiveDistribution& p = preds[r];
    const double ys = data.target[r];
    double ll;
    if (p.kind_ == HeadKind::Spline) {
      const SplineResult res = stack_inverse(ys, p.layers_);
      ll = normal_log_pdf(res.value) + res.log_abs_det - log_sigma;
    } else {
      const double sd = std::exp(0.5 * p.gauss_logvar_);
      const double zs = (ys - p.gauss_mean_) / sd;
      ll = normal_log_pdf(zs) - std::log(sd) - log_sigma;
    }
    total += ll;
  }
  return -total / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Training

std::unique_ptr<LossGraph> build_nll_graph(DensityModel& model,
                                           const EncoderBatch& batch,
                                           std::span<const double> targets,
                                           Rng& dropout_rng, bool training) {
  if (batch.rows() != targets.size()) {
    throw StructuralError("nll: batch/target size mismatch");
  }
  if (training && batch.rows() < 2) {
    throw StructuralError("nll: training batches need at least 2 rows");
  }
  auto lg = std::make_unique<LossGraph>(training);
  Graph& g = lg->graph;
  Graph::NodeId raw =
      head_forward(g, model, batch, dropout_rng, &lg->params);
  Graph::NodeId y = g.constant(
      Tensor({targets.size(), 1}, {targets.begin(), targets.end()}));

  Graph::NodeId per_row_ll;
  if (model.config.head == HeadKind::Spline) {
    FlowGraphResult flow = flow_inverse_graph(
        g, y, raw, model.config.flow.layers, model.config.flow.spline());
    per_row_ll = g.add(standard_normal_log_pdf(g, flow.z), flow.log_abs_det);
  } else {
    Graph::NodeId mu = g.slice_cols(raw, 0, 1);
    Graph::NodeId logvar = g.slice_cols(raw, 1, 2);
    Graph::NodeId diff = g.sub(y, mu);
    Graph::NodeId quad = g.mul(g.mul(diff, diff), g.exp(g.neg(logvar)));
    per_row_ll = g.scale(
        g.add_scalar(g.add(quad, logvar), 2.0 * kHalfLog2Pi), -0.5);
  }
  lg->loss = g.neg(g.mean_all(per_row_ll));
  return lg;
}

namespace {

struct Snapshot {
  EncoderParameters encoder;
  LinearParams head;
};

Snapshot take_snapshot(const DensityModel& m) {
  return {m.encoder, m.head};
}

void restore_snapshot(DensityModel& m, const Snapshot& s) {
  m.encoder = s.encoder;
  m.head = s.head;
}

}  // namespace

std::pair<DensityModel, TrainHistory> DensityModel::train(
    const Preprocessor& prep, const TabularDataset& train_data,
    const TabularDataset& val_data, const ModelConfig& model_config,
    const TrainConfig& train_config) {
  train_config.validate();
  if (!train_data.has_target || train_data.rows() == 0) {
    throw StructuralError("train: empty or target-less training set");
  }
  if (!val_data.has_target || val_data.rows() == 0) {
    throw StructuralError("train: at least one validation row required");
  }
  if (train_data.provenance.preprocessor_fingerprint != prep.fingerprint() ||
      val_data.provenance.preprocessor_fingerprint != prep.fingerprint()) {
    throw StructuralError(
        "train: datasets were not produced by the given preprocessor");
  }

  Rng root(train_config.seed);
  DensityModel model =
      DensityModel::create(prep, model_config, root.stream("init"));
  model.training_mode = true;

  const std::size_t n = train_data.rows();
  const std::size_t batch_size = std::min(train_config.batch_size, n);
  std::vector<Tensor*> params = model.parameters();
  AdamState adam = AdamState::create(params, train_config.learning_rate);

  TrainHistory history;
  history.best_val_nll = std::numeric_limits<double>::infinity();
  Snapshot best = take_snapshot(model);
  std::size_t since_best = 0;
  const double log_sigma = std::log(model.target_std());

  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = root.stream("shuffle").stream(epoch);
    shuffle_rng.shuffle(order);

    model.training_mode = true;
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n;) {
      std::size_t end = std::min(start + batch_size, n);
      // Fold a trailing single row into the final batch: train-mode batch
      // norm needs at least two rows.
      if (n - end == 1) end = n;
      std::span<const std::size_t> rows(order.data() + start, end - start);
      EncoderBatch batch = train_data.batch(rows);
      std::vector<double> targets = train_data.targets(rows);
      Rng dropout_rng =
          root.stream("dropout").stream(epoch).stream(batch_index);
      try {
        auto lg = build_nll_graph(model, batch, targets, dropout_rng, true);
        lg->graph.backward(lg->loss);
        std::vector<Tensor> grads(params.size());
        std::vector<const Tensor*> grad_ptrs(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
          const Tensor& gt = lg->graph.grad(lg->params[i]);
          grads[i] = gt.empty() ? Tensor(params[i]->shape()) : gt;
          grad_ptrs[i] = &grads[i];
        }
        adam_step(params, grad_ptrs, adam);
        epoch_loss += lg->graph.value(lg->loss)[0] *
                      static_cast<double>(rows.size());
        seen += rows.size();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      start = end;
      ++batch_index;
    }

    model.training_mode = false;
    const double val_nll = model.nll(val_data);
    history.epochs.push_back(
        {epoch, epoch_loss / static_cast<double>(seen) + log_sigma, val_nll});

    if (val_nll < history.best_val_nll) {
      history.best_val_nll = val_nll;
      history.best_epoch = epoch;
      best = take_snapshot(model);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= train_config.patience) break;
    }
  }

  restore_snapshot(model, best);
  model.training_mode = false;
  return {std::move(model), std::move(history)};
}

}  // namespace flowreg
