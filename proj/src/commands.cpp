#include "flowreg/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "flowreg/errors.hpp"
#include "json.hpp"

namespace flowreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StructuralError("cannot create output directory '" + dir + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string data_path_for_eval(const RunConfig& cfg,
                               const CommandOptions& opt) {
  if (!opt.data_path.empty()) return opt.data_path;
  if (!cfg.test_path.empty()) return cfg.test_path;
  if (!cfg.train_path.empty()) return cfg.train_path;
  throw ConfigError("no data file: set [data] test/train or pass --data");
}

struct LoadedInputs {
  SchemaDeclaration decl;
  RawTable table;
};

LoadedInputs load_inputs(const std::string& csv_path,
                         const std::string& schema_path) {
  if (schema_path.empty()) throw ConfigError("[data] schema is required");
  if (csv_path.empty()) throw ConfigError("[data] train is required");
  LoadedInputs in;
  in.decl = SchemaDeclaration::parse_file(schema_path);
  in.table = load_csv(csv_path, in.decl);
  return in;
}

//! Random validation holdout for plain training runs.
std::pair<RawTable, RawTable> holdout_split(const RawTable& table,
                                            double val_fraction,
                                            std::uint64_t seed) {
  const std::size_t n = table.row_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).stream("val-holdout");
  rng.shuffle(order);
  const std::size_t n_val = static_cast<std::size_t>(
      std::ceil(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw StructuralError("holdout: validation split would be empty");
  }
  std::span<const std::size_t> all(order);
  return {table.select(all.subspan(0, n - n_val)),
          table.select(all.subspan(n - n_val))};
}

struct EvalResult {
  std::vector<PredictionRecord> records;
  double nll = 0.0;
  double rmse_value = 0.0;
  json mape_value;  // number or null (undefined for near-zero targets)
  double crps = 0.0;
};

//! Point predictions (mean of n draws), exact log-densities and sample CRPS
//! for every row; one derived sampling stream per row.
EvalResult evaluate_dataset(const DensityModel& model,
                            const TabularDataset& data, std::size_t n_samples,
                            std::uint64_t seed) {
  if (!data.has_target) {
    throw StructuralError("evaluation data has no target column");
  }
  const std::size_t n = data.rows();
  if (n == 0) throw StructuralError("evaluation data is empty");
  std::vector<PredictiveDistribution> preds = model.predict_all(data);
  const double mu = model.target_mean();
  const double sigma = model.target_std();

  EvalResult out;
  out.records.resize(n);
  Rng sample_root = Rng(seed).stream("sampling");
  double crps_sum = 0.0;
  bool mape_defined = true;
  for (std::size_t r = 0; r < n; ++r) {
    PredictionRecord& rec = out.records[r];
    rec.y = mu + sigma * data.target[r];
    Rng rng = sample_root.stream(r);
    const std::vector<double> draws = preds[r].sample(n_samples, rng);
    double mean = 0.0;
    for (double v : draws) mean += v;
    rec.prediction = mean / static_cast<double>(n_samples);
    rec.log_density = preds[r].log_density(rec.y);
    rec.abs_error = std::abs(rec.prediction - rec.y);
    rec.sq_error = (rec.prediction - rec.y) * (rec.prediction - rec.y);
    if (std::abs(rec.y) > 1e-9) {
      rec.pct_error = 100.0 * rec.abs_error / std::abs(rec.y);
    } else {
      mape_defined = false;
    }
    crps_sum += crps_sample(draws, rec.y);
  }
  std::vector<double> lds(n), yhat(n), ys(n);
  for (std::size_t r = 0; r < n; ++r) {
    lds[r] = out.records[r].log_density;
    yhat[r] = out.records[r].prediction;
    ys[r] = out.records[r].y;
  }
  out.nll = nll_metric(lds);
  out.rmse_value = rmse(yhat, ys);
  out.crps = crps_sum / static_cast<double>(n);
  if (mape_defined) {
    out.mape_value = mape(yhat, ys);
  } else {
    out.mape_value = nullptr;
  }
  return out;
}

json metrics_json(const RunConfig& cfg, const EvalResult& eval,
                  const json& aurc_value, const DatasetProvenance& prov) {
  return json{{"nll", eval.nll},
              {"rmse", eval.rmse_value},
              {"mape", eval.mape_value},
              {"crps", eval.crps},
              {"aurc", aurc_value},
              {"confidence_method", to_string(cfg.confidence)},
              {"seed", cfg.train.seed},
              {"n_samples", cfg.n_samples},
              {"provenance",
               {{"source", prov.source},
                {"split_tag", prov.split_tag},
                {"preprocessor_fingerprint", prov.preprocessor_fingerprint},
                {"unknown_categories", prov.unknown_categories},
                {"dropped_rows", prov.dropped_rows}}}};
}

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write '" + path + "'");
  out.precision(17);
  out << "index,y,prediction,log_density\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << i << "," << records[i].y << "," << records[i].prediction << ","
        << records[i].log_density << "\n";
  }
}

//! Test rows for evaluation commands, honoring a chrono split when one is
//! configured and the data file is the full table.
TabularDataset eval_dataset(const RunConfig& cfg, const CommandOptions& opt,
                            const DensityModel& model) {
  const std::string path = data_path_for_eval(cfg, opt);
  SchemaDeclaration decl = SchemaDeclaration::parse_file(cfg.schema_path);
  RawTable table = load_csv(path, decl);

  // The model's embedded schema must agree with the declaration.
  const FeatureSchema& want = model.schema();
  std::vector<std::pair<std::string, FeatureKind>> declared;
  for (const auto& [name, role] : decl.columns) {
    if (role == ColumnRole::Target || role == ColumnRole::Ignore) continue;
    declared.emplace_back(name, role == ColumnRole::Numeric
                                    ? FeatureKind::Numeric
                                    : FeatureKind::Categorical);
  }
  if (declared.size() != want.feature_count()) {
    throw StructuralError("schema mismatch: model expects " +
                          std::to_string(want.feature_count()) +
                          " features, declaration has " +
                          std::to_string(declared.size()));
  }
  for (std::size_t i = 0; i < want.feature_count(); ++i) {
    if (declared[i].first != want.features[i].name ||
        declared[i].second != want.features[i].kind) {
      throw StructuralError("schema mismatch at feature '" +
                            want.features[i].name + "'");
    }
  }

  TabularDataset ds;
  if (cfg.split == SplitMode::Chrono && opt.data_path.empty() &&
      cfg.test_path.empty()) {
    ChronoSplitResult split = chrono_split(table, cfg.date_column,
                                           cfg.train_end, cfg.val_end,
                                           cfg.test_end);
    ds = model.prep.transform(split.test, "chrono-test");
    ds.provenance.dropped_rows = split.dropped_rows;
  } else {
    ds = model.prep.transform(table, "test");
  }
  ds.provenance.source = path;
  return ds;
}

json history_json(const TrainHistory& history) {
  json epochs = json::array();
  for (const EpochStats& e : history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_nll", e.train_nll},
                      {"val_nll", e.val_nll}});
  }
  return json{{"best_epoch", history.best_epoch},
              {"best_val_nll", history.best_val_nll},
              {"epochs", epochs}};
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  LoadedInputs in = load_inputs(cfg.train_path, cfg.schema_path);

  RawTable train_rows, val_rows;
  if (cfg.split == SplitMode::Chrono) {
    if (cfg.date_column.empty()) {
      throw ConfigError("chrono split requires data.date_column");
    }
    ChronoSplitResult split = chrono_split(in.table, cfg.date_column,
                                           cfg.train_end, cfg.val_end,
                                           cfg.test_end);
    train_rows = std::move(split.train);
    val_rows = std::move(split.val);
  } else if (cfg.split == SplitMode::Holdout) {
    std::tie(train_rows, val_rows) =
        holdout_split(in.table, cfg.val_fraction, cfg.train.seed);
  } else {
    throw ConfigError("train: use split = holdout or chrono (cv is for benchmark)");
  }

  Preprocessor prep = Preprocessor::fit(train_rows, in.decl);
  TabularDataset train_ds = prep.transform(train_rows, "train");
  TabularDataset val_ds = prep.transform(val_rows, "val");
  train_ds.provenance.source = cfg.train_path;
  val_ds.provenance.source = cfg.train_path;

  auto [model, history] =
      DensityModel::train(prep, train_ds, val_ds, cfg.model, cfg.train);

  model.save(cfg.out_dir + "/model.bin");
  write_json(cfg.out_dir + "/history.json", history_json(history));
  write_text(cfg.out_dir + "/config_used.ini", cfg.echo());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const CommandOptions& opt) {
  ensure_out_dir(cfg.out_dir);
  if (opt.model_path.empty()) throw ConfigError("evaluate requires --model");
  DensityModel model = DensityModel::load(opt.model_path);
  TabularDataset ds = eval_dataset(cfg, opt, model);
  EvalResult eval = evaluate_dataset(model, ds, cfg.n_samples, cfg.train.seed);
  write_json(cfg.out_dir + "/metrics.json",
             metrics_json(cfg, eval, nullptr, ds.provenance));
  write_predictions_csv(cfg.out_dir + "/predictions.csv", eval.records);
  return 0;
}

int cmd_predict(const RunConfig& cfg, const CommandOptions& opt) {
  ensure_out_dir(cfg.out_dir);
  if (opt.model_path.empty()) throw ConfigError("predict requires --model");
  DensityModel model = DensityModel::load(opt.model_path);
  const std::string path = data_path_for_eval(cfg, opt);
  SchemaDeclaration decl = SchemaDeclaration::parse_file(cfg.schema_path);
  RawTable table = load_csv(path, decl);
  TabularDataset ds = model.prep.transform(table, "predict");
  std::vector<PredictiveDistribution> preds = model.predict_all(ds);

  std::ofstream out(cfg.out_dir + "/predictions.csv");
  if (!out) throw StructuralError("cannot write predictions.csv");
  out.precision(17);
  out << "index,prediction,median\n";
  Rng root = Rng(cfg.train.seed).stream("sampling");
  for (std::size_t r = 0; r < preds.size(); ++r) {
    Rng rng = root.stream(r);
    out << r << "," << preds[r].mean(cfg.n_samples, rng) << ","
        << preds[r].median() << "\n";
  }
  return 0;
}

int cmd_sample(const RunConfig& cfg, const CommandOptions& opt) {
  ensure_out_dir(cfg.out_dir);
  if (opt.model_path.empty()) throw ConfigError("sample requires --model");
  DensityModel model = DensityModel::load(opt.model_path);
  const std::string path = data_path_for_eval(cfg, opt);
  SchemaDeclaration decl = SchemaDeclaration::parse_file(cfg.schema_path);
  RawTable table = load_csv(path, decl);
  TabularDataset ds = model.prep.transform(table, "sample");
  std::vector<PredictiveDistribution> preds = model.predict_all(ds);
  const std::size_t n_draws =
      opt.sample_count > 0 ? opt.sample_count : cfg.n_samples;

  std::ofstream out(cfg.out_dir + "/samples.csv");
  if (!out) throw StructuralError("cannot write samples.csv");
  out.precision(17);
  out << "index,draw,value\n";
  Rng root = Rng(cfg.train.seed).stream("sampling");
  for (std::size_t r = 0; r < preds.size(); ++r) {
    Rng rng = root.stream(r);
    for (std::size_t s = 0; s < n_draws; ++s) {
      out << r << "," << s << "," << preds[r].sample(rng) << "\n";
    }
  }
  return 0;
}

int cmd_riskcov(const RunConfig& cfg, const CommandOptions& opt) {
  ensure_out_dir(cfg.out_dir);
  if (opt.model_path.empty()) throw ConfigError("riskcov requires --model");
  DensityModel model = DensityModel::load(opt.model_path);
  TabularDataset ds = eval_dataset(cfg, opt, model);
  EvalResult eval = evaluate_dataset(model, ds, cfg.n_samples, cfg.train.seed);

  std::vector<double> errors(eval.records.size());
  if (cfg.risk == RiskMeasure::Mape) {
    for (std::size_t r = 0; r < errors.size(); ++r) {
      if (std::abs(eval.records[r].y) <= 1e-9) {
        throw StructuralError(
            "riskcov: target magnitudes near zero make MAPE undefined; "
            "set eval.risk = rmse");
      }
      errors[r] = eval.records[r].pct_error;
    }
  } else {
    for (std::size_t r = 0; r < errors.size(); ++r) {
      errors[r] = eval.records[r].sq_error;
    }
  }

  std::vector<PredictiveDistribution> preds = model.predict_all(ds);
  const std::vector<double> levels = decile_levels();
  json aurc_configured;
  for (ConfidenceMethod method :
       {ConfidenceMethod::InvStd, ConfidenceMethod::NegEntropy}) {
    Rng rng = Rng(cfg.train.seed).stream("confidence").stream(
        method == ConfidenceMethod::InvStd ? 0 : 1);
    std::vector<double> conf =
        confidence_scores(preds, method, cfg.n_samples, rng);
    RiskCoverageCurve curve = risk_coverage(conf, errors, levels);
    curve.risk_measure = to_string(cfg.risk);
    curve.aurc = aurc(curve);
    write_riskcov_csv(curve,
                      cfg.out_dir + "/riskcov_" + to_string(method) + ".csv");
    if (method == cfg.confidence) aurc_configured = curve.aurc;
  }
  write_json(cfg.out_dir + "/metrics.json",
             metrics_json(cfg, eval, aurc_configured, ds.provenance));
  return 0;
}

int cmd_benchmark(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  LoadedInputs in = load_inputs(cfg.train_path, cfg.schema_path);
  if (cfg.split != SplitMode::Cv) {
    throw ConfigError("benchmark requires data.split = cv");
  }
  std::vector<SplitIndices> splits =
      cv_splits(in.table.row_count(), cfg.splits, cfg.test_fraction,
                cfg.val_fraction, cfg.train.seed);

  json per_split = json::array();
  std::size_t failures = 0;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const std::string split_path =
        cfg.out_dir + "/split_" + std::to_string(i) + ".json";
    if (fs::exists(split_path)) {  // resume from completed splits
      std::ifstream f(split_path);
      json j;
      f >> j;
      per_split.push_back(j);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    json row;
    try {
      RawTable train_rows = in.table.select(splits[i].train);
      RawTable val_rows = in.table.select(splits[i].val);
      RawTable test_rows = in.table.select(splits[i].test);
      Preprocessor prep = Preprocessor::fit(train_rows, in.decl);
      TabularDataset train_ds = prep.transform(train_rows, "train");
      TabularDataset val_ds = prep.transform(val_rows, "val");
      TabularDataset test_ds = prep.transform(test_rows, "test");
      TrainConfig tc = cfg.train;
      tc.seed = Rng(cfg.train.seed).stream("benchmark").stream(i).next_u64();
      auto [model, history] =
          DensityModel::train(prep, train_ds, val_ds, cfg.model, tc);
      EvalResult eval =
          evaluate_dataset(model, test_ds, cfg.n_samples, tc.seed);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      row = json{{"split", i},
                 {"nll", eval.nll},
                 {"rmse", eval.rmse_value},
                 {"crps", eval.crps},
                 {"mape", eval.mape_value},
                 {"best_epoch", history.best_epoch},
                 {"epochs_run", history.epochs.size()},
                 {"seconds", seconds},
                 {"status", "ok"}};
    } catch (const std::exception& e) {
      row = json{{"split", i}, {"status", "failed"}, {"error", e.what()}};
      ++failures;
    }
    std::ofstream f(split_path);
    f << row.dump(2) << "\n";
    per_split.push_back(row);
  }

  auto aggregate = [&](const std::string& key) -> json {
    std::vector<double> vals;
    for (const json& row : per_split) {
      if (row.value("status", "") == "ok" && row.contains(key) &&
          row[key].is_number()) {
        vals.push_back(row[key].get<double>());
      }
    }
    if (vals.empty()) return {{"mean", nullptr}, {"std", nullptr}};
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    json std_out;
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      std_out = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    } else {
      std_out = nullptr;  // single split: reported as NA
    }
    return {{"mean", mean}, {"std", std_out}};
  };

  json results{{"dataset", cfg.train_path},
               {"splits_requested", cfg.splits},
               {"splits_completed", cfg.splits - failures},
               {"partial", failures > 0},
               {"nll", aggregate("nll")},
               {"rmse", aggregate("rmse")},
               {"crps", aggregate("crps")},
               {"mape", aggregate("mape")},
               {"seed", cfg.train.seed},
               {"n_samples", cfg.n_samples},
               {"per_split", per_split}};
  write_json(cfg.out_dir + "/results.json", results);
  write_text(cfg.out_dir + "/config_used.ini", cfg.echo());
  return failures == 0 ? 0 : 1;
}

int cmd_tune(const RunConfig& cfg, std::size_t budget) {
  if (budget < 1) throw ConfigError("tune: budget must be >= 1");
  ensure_out_dir(cfg.out_dir);
  LoadedInputs in = load_inputs(cfg.train_path, cfg.schema_path);
  SplitIndices split = cv_splits(in.table.row_count(), 1, cfg.test_fraction,
                                 cfg.val_fraction, cfg.train.seed)[0];
  RawTable train_rows = in.table.select(split.train);
  RawTable val_rows = in.table.select(split.val);
  Preprocessor prep = Preprocessor::fit(train_rows, in.decl);
  TabularDataset train_ds = prep.transform(train_rows, "train");
  TabularDataset val_ds = prep.transform(val_rows, "val");

  std::ofstream trials(cfg.out_dir + "/trials.jsonl");
  if (!trials) throw StructuralError("cannot write trials.jsonl");

  const std::vector<std::size_t> dims = {4, 8, 16, 32, 64};
  const std::vector<double> hidden_mults = {1.0, 2.0, 4.0};
  const std::vector<std::size_t> bin_choices = {4, 8, 16, 32};

  RunConfig best_cfg = cfg;
  double best_nll = std::numeric_limits<double>::infinity();
  bool any_success = false;
  std::string last_error;
  Rng tuner = Rng(cfg.train.seed).stream("tuner");

  for (std::size_t trial = 0; trial < budget; ++trial) {
    Rng draw = tuner.stream(trial);
    RunConfig c = cfg;
    c.model.encoder.embed_dim = dims[draw.below(dims.size())];
    c.model.encoder.blocks = 1 + draw.below(8);
    c.model.encoder.hidden_multiplier =
        hidden_mults[draw.below(hidden_mults.size())];
    c.model.encoder.dropout = 0.5 * draw.uniform();
    c.model.flow.bins = bin_choices[draw.below(bin_choices.size())];
    c.model.flow.tail_bound = 2.0 + 3.0 * draw.uniform();
    c.model.flow.layers = 1 + draw.below(3);
    c.train.learning_rate = std::pow(10.0, -4.0 + 2.0 * draw.uniform());
    c.train.max_epochs = std::min(cfg.train.max_epochs, cfg.tune_epoch_cap);
    c.train.patience = std::min<std::size_t>(cfg.train.patience, 10);

    json row{{"trial", trial},
             {"embed_dim", c.model.encoder.embed_dim},
             {"blocks", c.model.encoder.blocks},
             {"hidden_multiplier", c.model.encoder.hidden_multiplier},
             {"dropout", c.model.encoder.dropout},
             {"bins", c.model.flow.bins},
             {"tail_bound", c.model.flow.tail_bound},
             {"flow_layers", c.model.flow.layers},
             {"learning_rate", c.train.learning_rate}};
    try {
      auto [model, history] =
          DensityModel::train(prep, train_ds, val_ds, c.model, c.train);
      row["val_nll"] = history.best_val_nll;
      row["status"] = "ok";
      any_success = true;
      if (history.best_val_nll < best_nll) {
        best_nll = history.best_val_nll;
        best_cfg = c;
        best_cfg.train.max_epochs = cfg.train.max_epochs;
        best_cfg.train.patience = cfg.train.patience;
      }
    } catch (const std::exception& e) {
      row["status"] = "failed";
      row["error"] = e.what();
      last_error = e.what();
    }
    trials << row.dump() << "\n";
  }
  if (!any_success) {
    throw NumericError("tune: every trial failed; last error: " + last_error);
  }
  write_text(cfg.out_dir + "/best_config.ini", best_cfg.echo());
  json summary{{"budget", budget}, {"best_val_nll", best_nll}};
  write_json(cfg.out_dir + "/tune_summary.json", summary);
  return 0;
}

}  // namespace flowreg
