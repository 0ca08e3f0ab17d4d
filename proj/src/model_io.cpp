#include <fstream>

#include "flowreg/detail/binary_io.hpp"
#include "flowreg/errors.hpp"
#include "flowreg/model.hpp"

namespace flowreg {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'R', 'E', 'G', '1'};
constexpr std::uint64_t kVersion = 1;

using detail::read_f64;
using detail::read_string;
using detail::read_tensor;
using detail::read_u64;
using detail::write_f64;
using detail::write_string;
using detail::write_tensor;
using detail::write_u64;

void write_linear(std::ostream& out, const LinearParams& p) {
  write_tensor(out, p.weight);
  write_tensor(out, p.bias);
}

LinearParams read_linear(std::istream& in) {
  LinearParams p;
  p.weight = read_tensor(in);
  p.bias = read_tensor(in);
  return p;
}

}  // namespace

void DensityModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot write model file '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  write_u64(out, kVersion);

  write_u64(out, config.head == HeadKind::Spline ? 0 : 1);
  write_u64(out, config.encoder.embed_dim);
  write_u64(out, config.encoder.blocks);
  write_f64(out, config.encoder.hidden_multiplier);
  write_f64(out, config.encoder.dropout);
  write_u64(out, config.encoder.numeric_mlp ? 1 : 0);
  write_u64(out, config.flow.bins);
  write_f64(out, config.flow.tail_bound);
  write_u64(out, config.flow.layers);
  write_f64(out, config.flow.min_bin);
  write_f64(out, config.flow.min_derivative);

  prep.write(out);

  write_u64(out, encoder.numeric.size());
  for (const NumericEmbedding& e : encoder.numeric) {
    write_linear(out, e.first);
    if (config.encoder.numeric_mlp) write_linear(out, e.second);
  }
  write_u64(out, encoder.tables.size());
  for (const Tensor& t : encoder.tables) write_tensor(out, t);
  write_u64(out, encoder.blocks.size());
  for (const ResNetBlockParams& b : encoder.blocks) {
    write_tensor(out, b.norm.gamma);
    write_tensor(out, b.norm.beta);
    write_tensor(out, b.norm.running_mean);
    write_tensor(out, b.norm.running_var);
    write_linear(out, b.fc1);
    write_linear(out, b.fc2);
  }
  write_linear(out, head);
  if (!out) throw StructuralError("failed writing model file '" + path + "'");
}

DensityModel DensityModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open model file '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw StructuralError("'" + path + "' is not a model file");
  }
  const std::uint64_t version = read_u64(in);
  if (version != kVersion) {
    throw StructuralError("unsupported model format version " +
                          std::to_string(version));
  }

  DensityModel m;
  m.config.head = read_u64(in) == 0 ? HeadKind::Spline : HeadKind::Gaussian;
  m.config.encoder.embed_dim = read_u64(in);
  m.config.encoder.blocks = read_u64(in);
  m.config.encoder.hidden_multiplier = read_f64(in);
  m.config.encoder.dropout = read_f64(in);
  m.config.encoder.numeric_mlp = read_u64(in) == 1;
  m.config.flow.bins = read_u64(in);
  m.config.flow.tail_bound = read_f64(in);
  m.config.flow.layers = read_u64(in);
  m.config.flow.min_bin = read_f64(in);
  m.config.flow.min_derivative = read_f64(in);

  m.prep = Preprocessor::read(in);

  m.encoder.config = m.config.encoder;
  const std::uint64_t n_num = read_u64(in);
  for (std::uint64_t i = 0; i < n_num; ++i) {
    NumericEmbedding e;
    e.first = read_linear(in);
    if (m.config.encoder.numeric_mlp) e.second = read_linear(in);
    m.encoder.numeric.push_back(std::move(e));
  }
  const std::uint64_t n_tab = read_u64(in);
  for (std::uint64_t i = 0; i < n_tab; ++i) {
    m.encoder.tables.push_back(read_tensor(in));
  }
  const std::uint64_t n_blk = read_u64(in);
  for (std::uint64_t i = 0; i < n_blk; ++i) {
    ResNetBlockParams b;
    b.norm.gamma = read_tensor(in);
    b.norm.beta = read_tensor(in);
    b.norm.running_mean = read_tensor(in);
    b.norm.running_var = read_tensor(in);
    b.fc1 = read_linear(in);
    b.fc2 = read_linear(in);
    m.encoder.blocks.push_back(std::move(b));
  }
  m.head = read_linear(in);
  m.training_mode = false;

  if (m.encoder.numeric.size() != m.prep.schema().numeric_count() ||
      m.encoder.tables.size() != m.prep.schema().categorical_count()) {
    throw StructuralError("'" + path + "': parameters do not match schema");
  }
  return m;
}

}  // namespace flowreg
