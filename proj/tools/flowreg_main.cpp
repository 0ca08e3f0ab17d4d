#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "flowreg/commands.hpp"
#include "flowreg/errors.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  long long splits = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration file")
      ->required();
  cmd->add_option("--out", args.out_dir, "Output directory (default: out)");
  cmd->add_option("--seed", args.seed, "Override [train] seed");
  cmd->add_option("--splits", args.splits, "Override [data] splits");
}

flowreg::RunConfig load_config(const CommonArgs& args,
                               const std::string& command) {
  flowreg::RunConfig cfg = flowreg::RunConfig::parse_file(args.config_path);
  cfg.command = command;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
  if (args.splits >= 0) cfg.splits = static_cast<std::size_t>(args.splits);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic tabular regression with conditional spline flows"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, pred_args, sample_args, risk_args,
      bench_args, tune_args;
  flowreg::CommandOptions eval_opt, pred_opt, sample_opt, risk_opt;
  std::size_t budget = 10;
  long long sample_n = 0;

  CLI::App* train = app.add_subcommand("train", "Fit a model");
  add_common(train, train_args);

  CLI::App* evaluate = app.add_subcommand("evaluate", "Test-set metrics");
  add_common(evaluate, eval_args);
  evaluate->add_option("--model", eval_opt.model_path, "Model file")->required();
  evaluate->add_option("--data", eval_opt.data_path, "Data CSV override");

  CLI::App* predict = app.add_subcommand("predict", "Point predictions");
  add_common(predict, pred_args);
  predict->add_option("--model", pred_opt.model_path, "Model file")->required();
  predict->add_option("--data", pred_opt.data_path, "Data CSV override");

  CLI::App* sample = app.add_subcommand("sample", "Draws from p(y|x)");
  add_common(sample, sample_args);
  sample->add_option("--model", sample_opt.model_path, "Model file")->required();
  sample->add_option("--data", sample_opt.data_path, "Data CSV override");
  sample->add_option("--n", sample_n, "Draws per row");

  CLI::App* riskcov = app.add_subcommand("riskcov", "Risk-coverage curves");
  add_common(riskcov, risk_args);
  riskcov->add_option("--model", risk_opt.model_path, "Model file")->required();
  riskcov->add_option("--data", risk_opt.data_path, "Data CSV override");

  CLI::App* benchmark = app.add_subcommand("benchmark", "Cross-validated runs");
  add_common(benchmark, bench_args);

  CLI::App* tune = app.add_subcommand("tune", "Random hyperparameter search");
  add_common(tune, tune_args);
  tune->add_option("--budget", budget, "Number of trials");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return flowreg::cmd_train(load_config(train_args, "train"));
    }
    if (evaluate->parsed()) {
      return flowreg::cmd_evaluate(load_config(eval_args, "evaluate"), eval_opt);
    }
    if (predict->parsed()) {
      return flowreg::cmd_predict(load_config(pred_args, "predict"), pred_opt);
    }
    if (sample->parsed()) {
      if (sample_n > 0) sample_opt.sample_count = static_cast<std::size_t>(sample_n);
      return flowreg::cmd_sample(load_config(sample_args, "sample"), sample_opt);
    }
    if (riskcov->parsed()) {
      return flowreg::cmd_riskcov(load_config(risk_args, "riskcov"), risk_opt);
    }
    if (benchmark->parsed()) {
      return flowreg::cmd_benchmark(load_config(bench_args, "benchmark"));
    }
    if (tune->parsed()) {
      return flowreg::cmd_tune(load_config(tune_args, "tune"), budget);
    }
  } catch (const flowreg::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 1;
  } catch (const flowreg::StructuralError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const flowreg::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 3;
  }
  return 0;
}
