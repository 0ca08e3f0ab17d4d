#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "flowreg/metrics.hpp"
#include "flowreg/model.hpp"

namespace flowreg {

enum class SplitMode { Holdout, Cv, Chrono };

//! Everything a command run needs, read from a `key = value` config file
//! with bracketed section headers. Every key has a default except the data
//! and schema paths; unknown sections or keys are rejected.
struct RunConfig {
  std::string command;

  // [data]
  std::string train_path;
  std::string test_path;  // optional explicit test csv
  std::string schema_path;
  SplitMode split = SplitMode::Holdout;
  std::size_t splits = 5;
  double test_fraction = 0.1;
  double val_fraction = 0.1;
  std::string date_column;
  std::string train_end;
  std::string val_end;
  std::string test_end;

  // [train]
  TrainConfig train;

  // [model]
  ModelConfig model;

  // [eval]
  std::size_t n_samples = 1000;
  ConfidenceMethod confidence = ConfidenceMethod::InvStd;
  RiskMeasure risk = RiskMeasure::Mape;

  // [tune]
  std::size_t tune_epoch_cap = 100;

  std::string out_dir = "out";

  static RunConfig parse(std::istream& in, const std::string& origin);
  static RunConfig parse_file(const std::string& path);
  //! Round-trippable echo of the effective configuration.
  std::string echo() const;
};

}  // namespace flowreg
