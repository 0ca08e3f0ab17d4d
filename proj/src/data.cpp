#include "flowreg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "flowreg/detail/binary_io.hpp"
#include "flowreg/errors.hpp"
#include "flowreg/rng.hpp"

namespace flowreg {

namespace {

constexpr const char* kMissingCategory = "empty";
constexpr double kMissingNumeric = -1.0;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_numeric_cell(const std::string& cell, const std::string& column,
                          std::size_t row) {
  if (cell.empty()) return kMissingNumeric;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0') {
    throw StructuralError("column '" + column + "' row " + std::to_string(row) +
                          ": cannot parse numeric value '" + cell + "'");
  }
  return v;
}

int parse_iso_date(const std::string& cell, std::size_t row) {
  int y = 0, m = 0, d = 0;
  char tail = 0;
  if (std::sscanf(cell.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3 ||
      m < 1 || m > 12 || d < 1 || d > 31) {
    throw StructuralError("row " + std::to_string(row) +
                          ": cannot parse date '" + cell +
                          "' (expected YYYY-MM-DD)");
  }
  return y * 10000 + m * 100 + d;
}

}  // namespace

std::size_t Feature::index_of(const std::string& category) const {
  auto it = std::lower_bound(categories.begin(), categories.end(), category);
  if (it != categories.end() && *it == category) {
    return static_cast<std::size_t>(it - categories.begin());
  }
  return unknown_index();
}

std::size_t FeatureSchema::numeric_count() const {
  std::size_t n = 0;
  for (const Feature& f : features) n += f.kind == FeatureKind::Numeric;
  return n;
}

std::size_t FeatureSchema::categorical_count() const {
  return features.size() - numeric_count();
}

void FeatureSchema::validate() const {
  if (features.empty()) throw StructuralError("schema: no features");
  std::set<std::string> names;
  for (const Feature& f : features) {
    if (!names.insert(f.name).second) {
      throw StructuralError("schema: duplicate feature '" + f.name + "'");
    }
  }
}

SchemaDeclaration SchemaDeclaration::parse(std::istream& in,
                                           const std::string& origin) {
  SchemaDeclaration decl;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t colon = t.rfind(':');
    if (colon == std::string::npos) {
      throw StructuralError(origin + ":" + std::to_string(lineno) +
                            ": expected 'column: role'");
    }
    const std::string name = trim(t.substr(0, colon));
    const std::string role_s = trim(t.substr(colon + 1));
    if (name.empty()) {
      throw StructuralError(origin + ":" + std::to_string(lineno) +
                            ": empty column name");
    }
    if (!seen.insert(name).second) {
      throw StructuralError(origin + ": duplicate column '" + name + "'");
    }
    ColumnRole role;
    if (role_s == "numeric") role = ColumnRole::Numeric;
    else if (role_s == "categorical") role = ColumnRole::Categorical;
    else if (role_s == "date") role = ColumnRole::Date;
    else if (role_s == "target") role = ColumnRole::Target;
    else if (role_s == "ignore") role = ColumnRole::Ignore;
    else {
      throw StructuralError(origin + ":" + std::to_string(lineno) +
                            ": unknown role '" + role_s + "'");
    }
    decl.columns.emplace_back(name, role);
  }
  std::size_t targets = 0;
  for (const auto& [name, role] : decl.columns) targets += role == ColumnRole::Target;
  if (targets != 1) {
    throw StructuralError(origin + ": exactly one target column required, found " +
                          std::to_string(targets));
  }
  return decl;
}

SchemaDeclaration SchemaDeclaration::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open schema file '" + path + "'");
  return parse(in, path);
}

const std::string& SchemaDeclaration::target_column() const {
  for (const auto& [name, role] : columns) {
    if (role == ColumnRole::Target) return name;
  }
  throw StructuralError("schema declaration has no target column");
}

bool SchemaDeclaration::has(const std::string& name) const {
  for (const auto& [n, r] : columns) {
    if (n == name) return true;
  }
  return false;
}

ColumnRole SchemaDeclaration::role(const std::string& name) const {
  for (const auto& [n, r] : columns) {
    if (n == name) return r;
  }
  throw StructuralError("column '" + name + "' not declared");
}

std::size_t RawTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw StructuralError("table has no column '" + name + "'");
}

RawTable RawTable::select(std::span<const std::size_t> row_indices) const {
  RawTable out;
  out.columns = columns;
  out.transformed_by = transformed_by;
  out.rows.reserve(row_indices.size());
  for (std::size_t i : row_indices) out.rows.push_back(rows.at(i));
  return out;
}

namespace {

std::vector<std::string> parse_csv_record(const std::string& line,
                                          std::size_t lineno) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw StructuralError("line " + std::to_string(lineno) +
                          ": unterminated quoted field");
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

RawTable load_csv(const std::string& path, const SchemaDeclaration& decl) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw StructuralError("'" + path + "': missing header row");
  }
  RawTable table;
  table.columns = parse_csv_record(line, 1);
  for (const std::string& c : table.columns) {
    if (!decl.has(c)) {
      throw StructuralError("'" + path + "': column '" + c +
                            "' is not declared in the schema");
    }
  }
  for (const auto& [name, role] : decl.columns) {
    if (std::find(table.columns.begin(), table.columns.end(), name) ==
        table.columns.end()) {
      throw StructuralError("'" + path + "': declared column '" + name +
                            "' is missing");
    }
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if ((line.empty() || line == "\r") && table.columns.size() > 1) continue;
    std::vector<std::string> fields = parse_csv_record(line, lineno);
    if (fields.size() != table.columns.size()) {
      throw StructuralError("'" + path + "' line " + std::to_string(lineno) +
                            ": expected " + std::to_string(table.columns.size()) +
                            " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

std::string table_fingerprint(const RawTable& table) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const std::string& c : table.columns) feed(c);
  for (const auto& row : table.rows) {
    for (const std::string& cell : row) feed(cell);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Preprocessor Preprocessor::fit(const RawTable& train,
                               const SchemaDeclaration& decl) {
  if (train.row_count() < 2) {
    throw StructuralError("preprocessor: need at least 2 training rows");
  }
  Preprocessor p;
  p.target_name_ = decl.target_column();
  p.fingerprint_ = table_fingerprint(train);

  for (const auto& [name, role] : decl.columns) {
    if (role == ColumnRole::Ignore) continue;
    if (role == ColumnRole::Target) continue;
    Feature f;
    f.name = name;
    const std::size_t col = train.column_index(name);
    if (role == ColumnRole::Numeric) {
      f.kind = FeatureKind::Numeric;
      NumericStats st;
      double sum = 0.0;
      for (std::size_t r = 0; r < train.row_count(); ++r) {
        sum += parse_numeric_cell(train.rows[r][col], name, r + 1);
      }
      st.mean = sum / static_cast<double>(train.row_count());
      double ss = 0.0;
      for (std::size_t r = 0; r < train.row_count(); ++r) {
        const double d =
            parse_numeric_cell(train.rows[r][col], name, r + 1) - st.mean;
        ss += d * d;
      }
      st.stddev = std::sqrt(ss / static_cast<double>(train.row_count()));
      if (st.stddev < 1e-12) {
        throw StructuralError("column '" + name +
                              "' is constant on the training rows");
      }
      p.stats_.push_back(st);
    } else {  // Categorical and Date features: category pass-through
      f.kind = FeatureKind::Categorical;
      std::set<std::string> cats;
      for (std::size_t r = 0; r < train.row_count(); ++r) {
        const std::string& cell = train.rows[r][col];
        cats.insert(cell.empty() ? kMissingCategory : cell);
      }
      f.categories.assign(cats.begin(), cats.end());
    }
    p.schema_.features.push_back(std::move(f));
  }
  p.schema_.validate();

  const std::size_t tcol = train.column_index(p.target_name_);
  double sum = 0.0;
  for (std::size_t r = 0; r < train.row_count(); ++r) {
    const std::string& cell = train.rows[r][tcol];
    if (cell.empty()) {
      throw StructuralError("target column row " + std::to_string(r + 1) +
                            " is missing");
    }
    sum += parse_numeric_cell(cell, p.target_name_, r + 1);
  }
  p.target_.mean = sum / static_cast<double>(train.row_count());
  double ss = 0.0;
  for (std::size_t r = 0; r < train.row_count(); ++r) {
    const double d =
        parse_numeric_cell(train.rows[r][tcol], p.target_name_, r + 1) -
        p.target_.mean;
    ss += d * d;
  }
  p.target_.stddev = std::sqrt(ss / static_cast<double>(train.row_count()));
  if (p.target_.stddev < 1e-12) {
    throw StructuralError("target column is constant on the training rows");
  }
  return p;
}

Preprocessor Preprocessor::identity(FeatureSchema schema,
                                    std::string target_name,
                                    double target_mean, double target_std) {
  if (!(target_std > 0.0)) {
    throw StructuralError("preprocessor: target std must be > 0");
  }
  Preprocessor p;
  p.schema_ = std::move(schema);
  p.schema_.validate();
  p.stats_.assign(p.schema_.numeric_count(), NumericStats{0.0, 1.0});
  p.target_ = {target_mean, target_std};
  p.target_name_ = std::move(target_name);
  p.fingerprint_ = "identity";
  return p;
}

TabularDataset Preprocessor::transform(const RawTable& table,
                                       const std::string& split_tag) const {
  if (!table.transformed_by.empty()) {
    throw StructuralError(
        "table was already standardized by preprocessor " +
        table.transformed_by + "; refusing to transform it again");
  }
  TabularDataset ds;
  ds.schema = schema_;
  ds.provenance.split_tag = split_tag;
  ds.provenance.preprocessor_fingerprint = fingerprint_;
  const std::size_t n = table.row_count();
  ds.numeric = Tensor::zeros(n, schema_.numeric_count());
  ds.categorical.assign(schema_.categorical_count(), {});
  for (auto& v : ds.categorical) v.reserve(n);

  std::size_t num_i = 0, cat_i = 0;
  for (const Feature& f : schema_.features) {
    const std::size_t col = table.column_index(f.name);
    if (f.kind == FeatureKind::Numeric) {
      const NumericStats& st = stats_[num_i];
      for (std::size_t r = 0; r < n; ++r) {
        const double raw = parse_numeric_cell(table.rows[r][col], f.name, r + 1);
        ds.numeric.at(r, num_i) = (raw - st.mean) / st.stddev;
      }
      ++num_i;
    } else {
      std::vector<std::size_t>& idx = ds.categorical[cat_i];
      for (std::size_t r = 0; r < n; ++r) {
        const std::string& cell = table.rows[r][col];
        const std::size_t k = f.index_of(cell.empty() ? kMissingCategory : cell);
        if (k == f.unknown_index()) ++ds.provenance.unknown_categories;
        idx.push_back(k);
      }
      ++cat_i;
    }
  }

  bool target_present = true;
  try {
    table.column_index(target_name_);
  } catch (const StructuralError&) {
    target_present = false;
  }
  if (target_present) {
    const std::size_t tcol = table.column_index(target_name_);
    ds.target.resize(n);
    ds.has_target = true;
    for (std::size_t r = 0; r < n; ++r) {
      const std::string& cell = table.rows[r][tcol];
      if (cell.empty()) {
        throw StructuralError("target column row " + std::to_string(r + 1) +
                              " is missing");
      }
      ds.target[r] =
          (parse_numeric_cell(cell, target_name_, r + 1) - target_.mean) /
          target_.stddev;
    }
  }
  return ds;
}

EncoderBatch TabularDataset::batch(
    std::span<const std::size_t> row_indices) const {
  EncoderBatch b;
  b.numeric = Tensor::zeros(row_indices.size(), numeric.cols());
  for (std::size_t r = 0; r < row_indices.size(); ++r) {
    for (std::size_t j = 0; j < numeric.cols(); ++j) {
      b.numeric.at(r, j) = numeric.at(row_indices[r], j);
    }
  }
  b.categorical.resize(categorical.size());
  for (std::size_t f = 0; f < categorical.size(); ++f) {
    b.categorical[f].reserve(row_indices.size());
    for (std::size_t r : row_indices) {
      b.categorical[f].push_back(categorical[f][r]);
    }
  }
  return b;
}

EncoderBatch TabularDataset::batch_all() const {
  std::vector<std::size_t> all(rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return batch(all);
}

std::vector<double> TabularDataset::targets(
    std::span<const std::size_t> row_indices) const {
  if (!has_target) throw StructuralError("dataset has no target column");
  std::vector<double> out;
  out.reserve(row_indices.size());
  for (std::size_t r : row_indices) out.push_back(target.at(r));
  return out;
}

TabularDataset TabularDataset::subset(std::span<const std::size_t> row_indices,
                                      const std::string& split_tag) const {
  TabularDataset out;
  out.schema = schema;
  out.provenance = provenance;
  out.provenance.split_tag = split_tag;
  out.numeric = Tensor::zeros(row_indices.size(), numeric.cols());
  for (std::size_t r = 0; r < row_indices.size(); ++r) {
    for (std::size_t j = 0; j < numeric.cols(); ++j) {
      out.numeric.at(r, j) = numeric.at(row_indices[r], j);
    }
  }
  out.categorical.resize(categorical.size());
  for (std::size_t f = 0; f < categorical.size(); ++f) {
    for (std::size_t r : row_indices) {
      out.categorical[f].push_back(categorical[f][r]);
    }
  }
  if (has_target) {
    out.has_target = true;
    for (std::size_t r : row_indices) out.target.push_back(target[r]);
  }
  return out;
}

std::vector<SplitIndices> cv_splits(std::size_t n_rows, std::size_t n_splits,
                                    double test_fraction, double val_fraction,
                                    std::uint64_t seed) {
  if (n_rows < 10) throw StructuralError("cv_splits: need at least 10 rows");
  if (n_splits < 1) throw StructuralError("cv_splits: need at least 1 split");
  if (!(test_fraction > 0.0 && test_fraction < 1.0) ||
      !(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw StructuralError("cv_splits: fractions must be in (0, 1)");
  }
  std::vector<SplitIndices> out;
  Rng base = Rng(seed).stream("splits");
  for (std::size_t i = 0; i < n_splits; ++i) {
    std::vector<std::size_t> order(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) order[r] = r;
    Rng rng = base.stream(i);
    rng.shuffle(order);
    const std::size_t n_test = static_cast<std::size_t>(
        std::ceil(test_fraction * static_cast<double>(n_rows)));
    const std::size_t remaining = n_rows - n_test;
    const std::size_t n_val = static_cast<std::size_t>(
        std::ceil(val_fraction * static_cast<double>(remaining)));
    if (n_test == 0 || n_val == 0 || remaining <= n_val) {
      throw StructuralError("cv_splits: a split would be empty");
    }
    SplitIndices s;
    s.test.assign(order.end() - n_test, order.end());
    s.val.assign(order.end() - n_test - n_val, order.end() - n_test);
    s.train.assign(order.begin(), order.end() - n_test - n_val);
    out.push_back(std::move(s));
  }
  return out;
}

void Preprocessor::write(std::ostream& out) const {
  detail::write_u64(out, schema_.features.size());
  for (const Feature& f : schema_.features) {
    detail::write_string(out, f.name);
    detail::write_u64(out, f.kind == FeatureKind::Numeric ? 0 : 1);
    detail::write_u64(out, f.categories.size());
    for (const std::string& c : f.categories) detail::write_string(out, c);
  }
  detail::write_u64(out, stats_.size());
  for (const NumericStats& s : stats_) {
    detail::write_f64(out, s.mean);
    detail::write_f64(out, s.stddev);
  }
  detail::write_f64(out, target_.mean);
  detail::write_f64(out, target_.stddev);
  detail::write_string(out, target_name_);
  detail::write_string(out, fingerprint_);
}

Preprocessor Preprocessor::read(std::istream& in) {
  Preprocessor p;
  const std::uint64_t nf = detail::read_u64(in);
  for (std::uint64_t i = 0; i < nf; ++i) {
    Feature f;
    f.name = detail::read_string(in);
    f.kind = detail::read_u64(in) == 0 ? FeatureKind::Numeric
                                       : FeatureKind::Categorical;
    const std::uint64_t nc = detail::read_u64(in);
    for (std::uint64_t c = 0; c < nc; ++c) {
      f.categories.push_back(detail::read_string(in));
    }
    p.schema_.features.push_back(std::move(f));
  }
  const std::uint64_t ns = detail::read_u64(in);
  for (std::uint64_t i = 0; i < ns; ++i) {
    NumericStats s;
    s.mean = detail::read_f64(in);
    s.stddev = detail::read_f64(in);
    p.stats_.push_back(s);
  }
  p.target_.mean = detail::read_f64(in);
  p.target_.stddev = detail::read_f64(in);
  p.target_name_ = detail::read_string(in);
  p.fingerprint_ = detail::read_string(in);
  p.schema_.validate();
  return p;
}

ChronoSplitResult chrono_split(const RawTable& table,
                               const std::string& date_column,
                               const std::string& train_end,
                               const std::string& val_end,
                               const std::string& test_end) {
  const int t_end = parse_iso_date(train_end, 0);
  const int v_end = parse_iso_date(val_end, 0);
  const int s_end = parse_iso_date(test_end, 0);
  if (!(t_end < v_end && v_end <= s_end)) {
    throw StructuralError("chrono_split: require train_end < val_end <= test_end");
  }
  const std::size_t col = table.column_index(date_column);
  ChronoSplitResult out;
  out.train.columns = out.val.columns = out.test.columns = table.columns;
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    const int d = parse_iso_date(table.rows[r][col], r + 1);
    if (d <= t_end) {
      out.train.rows.push_back(table.rows[r]);
    } else if (d <= v_end) {
      out.val.rows.push_back(table.rows[r]);
    } else if (d <= s_end) {
      out.test.rows.push_back(table.rows[r]);
    } else {
      ++out.dropped_rows;
    }
  }
  return out;
}

}  // namespace flowreg
