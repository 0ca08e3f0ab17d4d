#include "flowreg/config.hpp"

#include <fstream>
#include <sstream>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::size_t to_size(const std::string& v, const std::string& key) {
  const double d = to_double(v, key);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
    throw ConfigError("key '" + key + "': expected a non-negative integer");
  }
  return static_cast<std::size_t>(d);
}

}  // namespace

RunConfig RunConfig::parse(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      if (section != "data" && section != "train" && section != "model" &&
          section != "eval" && section != "tune") {
        throw ConfigError(origin + ": unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const std::string qual = section + "." + key;

    if (qual == "data.train") cfg.train_path = value;
    else if (qual == "data.test") cfg.test_path = value;
    else if (qual == "data.schema") cfg.schema_path = value;
    else if (qual == "data.split") {
      if (value == "holdout") cfg.split = SplitMode::Holdout;
      else if (value == "cv") cfg.split = SplitMode::Cv;
      else if (value == "chrono") cfg.split = SplitMode::Chrono;
      else throw ConfigError("data.split: expected holdout|cv|chrono");
    } else if (qual == "data.splits") cfg.splits = to_size(value, qual);
    else if (qual == "data.test_fraction") cfg.test_fraction = to_double(value, qual);
    else if (qual == "data.val_fraction") cfg.val_fraction = to_double(value, qual);
    else if (qual == "data.date_column") cfg.date_column = value;
    else if (qual == "data.train_end") cfg.train_end = value;
    else if (qual == "data.val_end") cfg.val_end = value;
    else if (qual == "data.test_end") cfg.test_end = value;
    else if (qual == "train.batch_size") cfg.train.batch_size = to_size(value, qual);
    else if (qual == "train.max_epochs") cfg.train.max_epochs = to_size(value, qual);
    else if (qual == "train.patience") cfg.train.patience = to_size(value, qual);
    else if (qual == "train.learning_rate") cfg.train.learning_rate = to_double(value, qual);
    else if (qual == "train.seed") cfg.train.seed = static_cast<std::uint64_t>(to_size(value, qual));
    else if (qual == "model.head") {
      if (value == "spline") cfg.model.head = HeadKind::Spline;
      else if (value == "gaussian") cfg.model.head = HeadKind::Gaussian;
      else throw ConfigError("model.head: expected spline|gaussian");
    } else if (qual == "model.embed_dim") cfg.model.encoder.embed_dim = to_size(value, qual);
    else if (qual == "model.blocks") cfg.model.encoder.blocks = to_size(value, qual);
    else if (qual == "model.hidden_multiplier") cfg.model.encoder.hidden_multiplier = to_double(value, qual);
    else if (qual == "model.dropout") cfg.model.encoder.dropout = to_double(value, qual);
    else if (qual == "model.numeric_embedding") {
      if (value == "mlp") cfg.model.encoder.numeric_mlp = true;
      else if (value == "linear") cfg.model.encoder.numeric_mlp = false;
      else throw ConfigError("model.numeric_embedding: expected mlp|linear");
    } else if (qual == "model.bins") cfg.model.flow.bins = to_size(value, qual);
    else if (qual == "model.tail_bound") cfg.model.flow.tail_bound = to_double(value, qual);
    else if (qual == "model.flow_layers") cfg.model.flow.layers = to_size(value, qual);
    else if (qual == "eval.n_samples") cfg.n_samples = to_size(value, qual);
    else if (qual == "eval.confidence") {
      if (value == "inv_std") cfg.confidence = ConfidenceMethod::InvStd;
      else if (value == "neg_entropy") cfg.confidence = ConfidenceMethod::NegEntropy;
      else throw ConfigError("eval.confidence: expected inv_std|neg_entropy");
    } else if (qual == "eval.risk") {
      if (value == "mape") cfg.risk = RiskMeasure::Mape;
      else if (value == "rmse") cfg.risk = RiskMeasure::Rmse;
      else throw ConfigError("eval.risk: expected mape|rmse");
    } else if (qual == "tune.epoch_cap") cfg.tune_epoch_cap = to_size(value, qual);
    else {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": unknown key '" + qual + "'");
    }
  }

  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) ||
      !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
    throw ConfigError("data fractions must lie in (0, 1)");
  }
  cfg.train.validation_fraction = cfg.val_fraction;
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open config file '" + path + "'");
  return parse(in, path);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "[data]\n";
  if (!train_path.empty()) os << "train = " << train_path << "\n";
  if (!test_path.empty()) os << "test = " << test_path << "\n";
  if (!schema_path.empty()) os << "schema = " << schema_path << "\n";
  os << "split = "
     << (split == SplitMode::Holdout ? "holdout"
                                     : split == SplitMode::Cv ? "cv" : "chrono")
     << "\n";
  os << "splits = " << splits << "\n";
  os << "test_fraction = " << test_fraction << "\n";
  os << "val_fraction = " << val_fraction << "\n";
  if (!date_column.empty()) os << "date_column = " << date_column << "\n";
  if (!train_end.empty()) os << "train_end = " << train_end << "\n";
  if (!val_end.empty()) os << "val_end = " << val_end << "\n";
  if (!test_end.empty()) os << "test_end = " << test_end << "\n";
  os << "\n[train]\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "max_epochs = " << train.max_epochs << "\n";
  os << "patience = " << train.patience << "\n";
  os << "learning_rate = " << train.learning_rate << "\n";
  os << "seed = " << train.seed << "\n";
  os << "\n[model]\n";
  os << "head = " << (model.head == HeadKind::Spline ? "spline" : "gaussian")
     << "\n";
  os << "embed_dim = " << model.encoder.embed_dim << "\n";
  os << "blocks = " << model.encoder.blocks << "\n";
  os << "hidden_multiplier = " << model.encoder.hidden_multiplier << "\n";
  os << "dropout = " << model.encoder.dropout << "\n";
  os << "numeric_embedding = "
     << (model.encoder.numeric_mlp ? "mlp" : "linear") << "\n";
  os << "bins = " << model.flow.bins << "\n";
  os << "tail_bound = " << model.flow.tail_bound << "\n";
  os << "flow_layers = " << model.flow.layers << "\n";
  os << "\n[eval]\n";
  os << "n_samples = " << n_samples << "\n";
  os << "confidence = " << to_string(confidence) << "\n";
  os << "risk = " << to_string(risk) << "\n";
  os << "\n[tune]\n";
  os << "epoch_cap = " << tune_epoch_cap << "\n";
  return os.str();
}

}  // namespace flowreg
