#pragma once

#include <cstddef>
#include <string>

#include "flowreg/config.hpp"

namespace flowreg {

//! Targeted overrides supplied on the command line next to --config.
struct CommandOptions {
  std::string model_path;  // evaluate / predict / sample / riskcov
  std::string data_path;   // overrides [data] test for evaluation commands
  std::size_t sample_count = 0;  // sample: draws per row (0 = eval.n_samples)
};

int cmd_train(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg, const CommandOptions& opt);
int cmd_predict(const RunConfig& cfg, const CommandOptions& opt);
int cmd_sample(const RunConfig& cfg, const CommandOptions& opt);
int cmd_riskcov(const RunConfig& cfg, const CommandOptions& opt);
int cmd_benchmark(const RunConfig& cfg);
int cmd_tune(const RunConfig& cfg, std::size_t budget);

}  // namespace flowreg
