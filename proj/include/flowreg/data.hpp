#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowreg/encoder.hpp"
#include "flowreg/schema.hpp"
#include "flowreg/tensor.hpp"

namespace flowreg {

enum class ColumnRole { Numeric, Categorical, Date, Target, Ignore };

//! Parsed schema declaration file: one `column_name: role` line per column.
struct SchemaDeclaration {
  std::vector<std::pair<std::string, ColumnRole>> columns;

  static SchemaDeclaration parse(std::istream& in, const std::string& origin);
  static SchemaDeclaration parse_file(const std::string& path);
  const std::string& target_column() const;
  bool has(const std::string& name) const;
  ColumnRole role(const std::string& name) const;
};

//! Untyped CSV contents: header names plus string cells.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  //! Non-empty when the table holds already-standardized output; transform
  //! refuses such tables.
  std::string transformed_by;

  std::size_t row_count() const { return rows.size(); }
  std::size_t column_index(const std::string& name) const;
  RawTable select(std::span<const std::size_t> row_indices) const;
};

//! Reads a CSV with header; every CSV column must be declared and every
//! declared column present. Quoted fields with doubled quotes are supported.
RawTable load_csv(const std::string& path, const SchemaDeclaration& decl);

struct NumericStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct DatasetProvenance {
  std::string source;
  std::string split_tag;
  std::string preprocessor_fingerprint;
  std::size_t unknown_categories = 0;
  std::size_t dropped_rows = 0;
};

//! Fully encoded dataset: standardized numerics, categorical indices and a
//! standardized target, all in schema feature order.
struct TabularDataset {
  FeatureSchema schema;
  Tensor numeric;  // [N, numeric_count]
  std::vector<std::vector<std::size_t>> categorical;
  std::vector<double> target;  // standardized; empty when absent
  bool has_target = false;
  DatasetProvenance provenance;

  std::size_t rows() const { return numeric.rows(); }
  EncoderBatch batch(std::span<const std::size_t> row_indices) const;
  EncoderBatch batch_all() const;
  std::vector<double> targets(std::span<const std::size_t> row_indices) const;
  TabularDataset subset(std::span<const std::size_t> row_indices,
                        const std::string& split_tag) const;
};

//! Feature statistics and category maps fitted on training rows only.
//! Missing numeric cells become -1.0 before the statistics are computed;
//! missing categorical cells become the literal category "empty".
class Preprocessor {
 public:
  Preprocessor() = default;

  static Preprocessor fit(const RawTable& train, const SchemaDeclaration& decl);
  //! Pass-through preprocessor for synthetic data already in model units.
  static Preprocessor identity(FeatureSchema schema, std::string target_name,
                               double target_mean, double target_std);

  TabularDataset transform(const RawTable& table,
                           const std::string& split_tag = "") const;

  const FeatureSchema& schema() const { return schema_; }
  const std::string& target_column() const { return target_name_; }
  double target_mean() const { return target_.mean; }
  double target_std() const { return target_.stddev; }
  const std::vector<NumericStats>& numeric_stats() const { return stats_; }
  //! Hash of the rows the preprocessor was fitted on.
  const std::string& fingerprint() const { return fingerprint_; }

  void write(std::ostream& out) const;
  static Preprocessor read(std::istream& in);

 private:
  FeatureSchema schema_;
  std::vector<NumericStats> stats_;  // per numeric feature, schema order
  NumericStats target_;
  std::string target_name_;
  std::string fingerprint_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

//! Repeated random holdout: split i shuffles with stream (seed, i), takes the
//! last ceil(test_fraction*n) rows as test, then the last
//! ceil(val_fraction*remaining) as validation.
std::vector<SplitIndices> cv_splits(std::size_t n_rows, std::size_t n_splits,
                                    double test_fraction, double val_fraction,
                                    std::uint64_t seed);

struct ChronoSplitResult {
  RawTable train;
  RawTable val;
  RawTable test;
  std::size_t dropped_rows = 0;
};

//! Chronological split on an ISO `YYYY-MM-DD` date column: rows with
//! date <= train_end train, (train_end, val_end] validation,
//! (val_end, test_end] test; later rows are dropped.
ChronoSplitResult chrono_split(const RawTable& table,
                               const std::string& date_column,
                               const std::string& train_end,
                               const std::string& val_end,
                               const std::string& test_end);

//! FNV-1a content hash used for preprocessor fingerprints.
std::string table_fingerprint(const RawTable& table);

}  // namespace flowreg
