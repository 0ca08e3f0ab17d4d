#include "flowreg/graph.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

double softplus_stable(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows() == 1 && a.cols() == b.cols() && a.rows() != 1;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Clamp: return "clamp";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::SumAll: return "sum_all";
    case OpKind::MeanAll: return "mean_all";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Dropout: return "dropout";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::GatherCols: return "gather_cols";
    case OpKind::EmbedRows: return "embed_rows";
    case OpKind::WhereMask: return "where_mask";
  }
  return "?";
}

Graph::NodeId Graph::push(Node node) {
  const NodeId id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  if (n.op != OpKind::Input && n.op != OpKind::Param &&
      n.op != OpKind::Constant) {
    eval(n, id);
  }
  return id;
}

Graph::NodeId Graph::input(std::size_t rows, std::size_t cols) {
  Node n;
  n.op = OpKind::Input;
  n.value = Tensor::zeros(rows, cols);
  return push(std::move(n));
}

Graph::NodeId Graph::param(const Tensor& value) {
  Node n;
  n.op = OpKind::Param;
  n.value = value;
  return push(std::move(n));
}

Graph::NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

#define FLOWREG_UNARY(NAME, KIND)             \
  Graph::NodeId Graph::NAME(NodeId a) {       \
    Node n;                                   \
    n.op = OpKind::KIND;                      \
    n.inputs = {a};                           \
    return push(std::move(n));                \
  }

FLOWREG_UNARY(neg, Neg)
FLOWREG_UNARY(relu, Relu)
FLOWREG_UNARY(softplus, Softplus)
FLOWREG_UNARY(log, Log)
FLOWREG_UNARY(exp, Exp)
FLOWREG_UNARY(sqrt, Sqrt)
FLOWREG_UNARY(softmax_rows, SoftmaxRows)
FLOWREG_UNARY(sum_all, SumAll)
FLOWREG_UNARY(mean_all, MeanAll)
#undef FLOWREG_UNARY

#define FLOWREG_BINARY(NAME, KIND)                 \
  Graph::NodeId Graph::NAME(NodeId a, NodeId b) {  \
    Node n;                                        \
    n.op = OpKind::KIND;                           \
    n.inputs = {a, b};                             \
    return push(std::move(n));                     \
  }

FLOWREG_BINARY(matmul, MatMul)
FLOWREG_BINARY(add, Add)
FLOWREG_BINARY(sub, Sub)
FLOWREG_BINARY(mul, Mul)
FLOWREG_BINARY(div, Div)
#undef FLOWREG_BINARY

Graph::NodeId Graph::add_scalar(NodeId a, double c) {
  Node n;
  n.op = OpKind::AddScalar;
  n.inputs = {a};
  n.c0 = c;
  return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId a, double c) {
  Node n;
  n.op = OpKind::Scale;
  n.inputs = {a};
  n.c0 = c;
  return push(std::move(n));
}

Graph::NodeId Graph::clamp(NodeId a, double lo, double hi) {
  Node n;
  n.op = OpKind::Clamp;
  n.inputs = {a};
  n.c0 = lo;
  n.c1 = hi;
  return push(std::move(n));
}

Graph::NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta,
                                BatchNormState* state, double momentum,
                                double epsilon) {
  Node n;
  n.op = OpKind::BatchNorm;
  n.inputs = {x, gamma, beta};
  n.bn = state;
  n.c0 = momentum;
  n.c1 = epsilon;
  return push(std::move(n));
}

Graph::NodeId Graph::dropout(NodeId a, double drop_prob, Rng& rng) {
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw ConfigError("dropout probability must be in [0, 1)");
  }
  Node n;
  n.op = OpKind::Dropout;
  n.inputs = {a};
  n.c0 = drop_prob;
  if (training_ && drop_prob > 0.0) {
    // Inverted scaling: surviving activations are divided by the keep
    // probability at train time so the eval path is exactly the identity.
    const Tensor& x = nodes_[a].value;
    n.aux = Tensor(x.shape());
    const double keep = 1.0 - drop_prob;
    for (std::size_t i = 0; i < x.size(); ++i) {
      n.aux[i] = rng.uniform() < drop_prob ? 0.0 : 1.0 / keep;
    }
  }
  return push(std::move(n));
}

Graph::NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw StructuralError("concat_cols: no inputs");
  Node n;
  n.op = OpKind::ConcatCols;
  n.inputs = parts;
  return push(std::move(n));
}

Graph::NodeId Graph::slice_cols(NodeId a, std::size_t begin, std::size_t end) {
  Node n;
  n.op = OpKind::SliceCols;
  n.inputs = {a};
  n.i0 = begin;
  n.i1 = end;
  return push(std::move(n));
}

Graph::NodeId Graph::gather_cols(NodeId a, std::vector<std::size_t> col_per_row) {
  Node n;
  n.op = OpKind::GatherCols;
  n.inputs = {a};
  n.idx = std::move(col_per_row);
  return push(std::move(n));
}

Graph::NodeId Graph::embed_rows(NodeId table, std::vector<std::size_t> row_indices) {
  Node n;
  n.op = OpKind::EmbedRows;
  n.inputs = {table};
  n.idx = std::move(row_indices);
  return push(std::move(n));
}

Graph::NodeId Graph::where_mask(Tensor mask, NodeId a, NodeId b) {
  Node n;
  n.op = OpKind::WhereMask;
  n.inputs = {a, b};
  n.mask = std::move(mask);
  return push(std::move(n));
}

void Graph::bind(NodeId input_node, Tensor value) {
  Node& n = nodes_[input_node];
  if (n.op != OpKind::Input) throw StructuralError("bind: node is not an input");
  if (!value.same_shape(n.value)) {
    throw StructuralError("bind: shape mismatch, expected " +
                          shape_string(n.value) + " got " + shape_string(value));
  }
  n.value = std::move(value);
  n.bound = true;
}

Tensor& Graph::mutable_value(NodeId node) { return nodes_[node].value; }

void Graph::recompute() {
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    Node& n = nodes_[id];
    if (n.op == OpKind::Input && !n.bound) {
      throw StructuralError("forward: unbound input node #" + std::to_string(id));
    }
    if (n.op == OpKind::Input || n.op == OpKind::Param ||
        n.op == OpKind::Constant) {
      continue;
    }
    eval(n, id);
  }
}

void Graph::check_finite(const Node& n, NodeId id) const {
  if (!n.value.all_finite()) {
    throw NumericError("non-finite output at node #" + std::to_string(id) +
                       " (" + op_name(n.op) + ")");
  }
}

void Graph::eval(Node& n, NodeId id) {
  auto shape_error = [&](const std::string& detail) {
    throw StructuralError(std::string(op_name(n.op)) + " at node #" +
                          std::to_string(id) + ": " + detail);
  };
  switch (n.op) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Constant:
      break;
    case OpKind::MatMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (a.cols() != b.rows()) {
        shape_error("inner dimensions " + shape_string(a) + " * " +
                    shape_string(b));
      }
      n.value = Tensor::zeros(a.rows(), b.cols());
      as_mat(n.value).noalias() = as_mat(a) * as_mat(b);
      break;
    }
    case OpKind::Add:
    case OpKind::Sub: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      const double sgn = n.op == OpKind::Add ? 1.0 : -1.0;
      n.value = a;
      if (a.same_shape(b)) {
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] += sgn * b[i];
      } else if (is_row_broadcast(a, b)) {
        const std::size_t c = a.cols();
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) n.value[r * c + j] += sgn * b[j];
        }
      } else {
        shape_error(shape_string(a) + " vs " + shape_string(b));
      }
      break;
    }
    case OpKind::Mul:
    case OpKind::Div: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (!a.same_shape(b)) shape_error(shape_string(a) + " vs " + shape_string(b));
      n.value = a;
      if (n.op == OpKind::Mul) {
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] *= b[i];
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] /= b[i];
      }
      break;
    }
    case OpKind::Neg: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = -v;
      break;
    }
    case OpKind::AddScalar: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v += n.c0;
      break;
    }
    case OpKind::Scale: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v *= n.c0;
      break;
    }
    case OpKind::Relu: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
      break;
    }
    case OpKind::Softplus: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = softplus_stable(v);
      break;
    }
    case OpKind::Log: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = std::log(v);
      break;
    }
    case OpKind::Exp: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = std::exp(v);
      break;
    }
    case OpKind::Sqrt: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) v = std::sqrt(v);
      break;
    }
    case OpKind::Clamp: {
      n.value = nodes_[n.inputs[0]].value;
      for (double& v : n.value.values()) {
        v = v < n.c0 ? n.c0 : (v > n.c1 ? n.c1 : v);
      }
      break;
    }
    case OpKind::SoftmaxRows: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      n.value = a;
      const std::size_t c = a.cols();
      if (c == 0) shape_error("empty rows");
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double* row = n.value.data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
      }
      break;
    }
    case OpKind::SumAll:
    case OpKind::MeanAll: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      if (a.size() == 0) shape_error("empty input");
      double s = 0.0;
      for (double v : a.values()) s += v;
      if (n.op == OpKind::MeanAll) s /= static_cast<double>(a.size());
      n.value = Tensor::scalar(s);
      break;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const Tensor& gamma = nodes_[n.inputs[1]].value;
      const Tensor& beta = nodes_[n.inputs[2]].value;
      const std::size_t rows = x.rows(), c = x.cols();
      if (gamma.cols() != c || beta.cols() != c) shape_error("affine width");
      const double eps = n.c1;
      n.value = Tensor::zeros(rows, c);
      if (training_) {
        if (rows < 2) {
          shape_error("train-mode batch norm requires a batch of at least 2");
        }
        Tensor mean = Tensor::zeros(1, c);
        Tensor var = Tensor::zeros(1, c);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) mean[j] += x.at(r, j);
        }
        for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double d = x.at(r, j) - mean[j];
            var[j] += d * d;
          }
        }
        for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(rows);
        Tensor invstd = Tensor::zeros(1, c);
        for (std::size_t j = 0; j < c; ++j) {
          invstd[j] = 1.0 / std::sqrt(var[j] + eps);
        }
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.at(r, j) - mean[j]) * invstd[j];
            n.value.at(r, j) = gamma[j] * xhat + beta[j];
          }
        }
        n.aux = mean;
        n.aux2 = invstd;
        if (n.bn != nullptr && !n.stats_updated) {
          const double m = n.c0;
          for (std::size_t j = 0; j < c; ++j) {
            n.bn->running_mean[j] = (1.0 - m) * n.bn->running_mean[j] + m * mean[j];
            n.bn->running_var[j] = (1.0 - m) * n.bn->running_var[j] + m * var[j];
          }
          n.stats_updated = true;
        }
      } else {
        if (n.bn == nullptr) shape_error("eval-mode batch norm needs state");
        Tensor invstd = Tensor::zeros(1, c);
        for (std::size_t j = 0; j < c; ++j) {
          invstd[j] = 1.0 / std::sqrt(n.bn->running_var[j] + eps);
        }
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.at(r, j) - n.bn->running_mean[j]) * invstd[j];
            n.value.at(r, j) = gamma[j] * xhat + beta[j];
          }
        }
        n.aux = n.bn->running_mean;
        n.aux2 = invstd;
      }
      break;
    }
    case OpKind::Dropout: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      n.value = x;
      if (training_ && n.c0 > 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) n.value[i] *= n.aux[i];
      }
      break;
    }
    case OpKind::ConcatCols: {
      const std::size_t rows = nodes_[n.inputs[0]].value.rows();
      std::size_t total = 0;
      for (NodeId in : n.inputs) {
        const Tensor& t = nodes_[in].value;
        if (t.rows() != rows) shape_error("row counts differ");
        total += t.cols();
      }
      n.value = Tensor::zeros(rows, total);
      std::size_t off = 0;
      for (NodeId in : n.inputs) {
        const Tensor& t = nodes_[in].value;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < t.cols(); ++j) {
            n.value.at(r, off + j) = t.at(r, j);
          }
        }
        off += t.cols();
      }
      break;
    }
    case OpKind::SliceCols: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      if (n.i1 > a.cols() || n.i0 >= n.i1) shape_error("slice bounds");
      n.value = Tensor::zeros(a.rows(), n.i1 - n.i0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t j = n.i0; j < n.i1; ++j) {
          n.value.at(r, j - n.i0) = a.at(r, j);
        }
      }
      break;
    }
    case OpKind::GatherCols: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      if (n.idx.size() != a.rows()) shape_error("one index per row required");
      n.value = Tensor::zeros(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (n.idx[r] >= a.cols()) shape_error("column index out of range");
        n.value.at(r, 0) = a.at(r, n.idx[r]);
      }
      break;
    }
    case OpKind::EmbedRows: {
      const Tensor& table = nodes_[n.inputs[0]].value;
      n.value = Tensor::zeros(n.idx.size(), table.cols());
      for (std::size_t r = 0; r < n.idx.size(); ++r) {
        if (n.idx[r] >= table.rows()) {
          shape_error("embedding row index out of range");
        }
        for (std::size_t j = 0; j < table.cols(); ++j) {
          n.value.at(r, j) = table.at(n.idx[r], j);
        }
      }
      break;
    }
    case OpKind::WhereMask: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (!a.same_shape(b) || !a.same_shape(n.mask)) {
        shape_error("mask/operand shapes differ");
      }
      n.value = a;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (n.mask[i] == 0.0) n.value[i] = b[i];
      }
      break;
    }
  }
  check_finite(n, id);
}

void Graph::accumulate(NodeId target, const Tensor& g) {
  Node& t = nodes_[target];
  if (!t.has_grad) {
    t.grad = Tensor(t.value.shape());
    t.has_grad = true;
  }
  for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

// Gradient of an Add/Sub operand that may have been row-broadcast.
void Graph::accumulate_maybe_rowbcast(NodeId target, const Tensor& g,
                                      const Tensor& operand_value) {
  if (operand_value.same_shape(g)) {
    accumulate(target, g);
    return;
  }
  Tensor reduced = Tensor::zeros(1, operand_value.cols());
  const std::size_t c = g.cols();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) reduced[j] += g.at(r, j);
  }
  accumulate(target, reduced);
}

void Graph::backward(NodeId output) {
  Node& out = nodes_[output];
  if (out.value.size() != 1) {
    throw StructuralError("backward: output must be scalar, got " +
                          shape_string(out.value));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  out.grad = Tensor(out.value.shape());
  out.grad[0] = 1.0;
  out.has_grad = true;
  for (NodeId id = output; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.has_grad) continue;
    backprop(n);
  }
}

const Tensor& Graph::grad(NodeId node) const {
  const Node& n = nodes_[node];
  if (!n.has_grad) {
    static const Tensor empty;
    return empty;
  }
  return n.grad;
}

void Graph::backprop(const Node& n) {
  const Tensor& g = n.grad;
  switch (n.op) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Constant:
      break;
    case OpKind::MatMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      Tensor da = Tensor::zeros(a.rows(), a.cols());
      Tensor db = Tensor::zeros(b.rows(), b.cols());
      as_mat(da).noalias() = as_mat(g) * as_mat(b).transpose();
      as_mat(db).noalias() = as_mat(a).transpose() * as_mat(g);
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case OpKind::Add: {
      accumulate(n.inputs[0], g);
      accumulate_maybe_rowbcast(n.inputs[1], g, nodes_[n.inputs[1]].value);
      break;
    }
    case OpKind::Sub: {
      accumulate(n.inputs[0], g);
      Tensor neg_g = g;
      for (double& v : neg_g.values()) v = -v;
      accumulate_maybe_rowbcast(n.inputs[1], neg_g, nodes_[n.inputs[1]].value);
      break;
    }
    case OpKind::Mul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      Tensor da = g, db = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] *= b[i];
        db[i] *= a[i];
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case OpKind::Div: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      Tensor da = g, db = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] /= b[i];
        db[i] *= -a[i] / (b[i] * b[i]);
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case OpKind::Neg: {
      Tensor da = g;
      for (double& v : da.values()) v = -v;
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::AddScalar:
      accumulate(n.inputs[0], g);
      break;
    case OpKind::Scale: {
      Tensor da = g;
      for (double& v : da.values()) v *= n.c0;
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] <= 0.0) da[i] = 0.0;
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Softplus: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) da[i] *= sigmoid(x[i]);
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Log: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) da[i] /= x[i];
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Exp: {
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) da[i] *= n.value[i];
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Sqrt: {
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) da[i] *= 0.5 / n.value[i];
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::Clamp: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor da = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] < n.c0 || x[i] > n.c1) da[i] = 0.0;
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::SoftmaxRows: {
      const Tensor& y = n.value;
      Tensor da = g;
      const std::size_t c = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g.at(r, j) * y.at(r, j);
        for (std::size_t j = 0; j < c; ++j) {
          da.at(r, j) = y.at(r, j) * (g.at(r, j) - dot);
        }
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::SumAll:
    case OpKind::MeanAll: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const double scale =
          n.op == OpKind::MeanAll ? 1.0 / static_cast<double>(x.size()) : 1.0;
      Tensor da = Tensor(x.shape());
      da.fill(g[0] * scale);
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const Tensor& gamma = nodes_[n.inputs[1]].value;
      const std::size_t rows = x.rows(), c = x.cols();
      const Tensor& mean = n.aux;
      const Tensor& invstd = n.aux2;
      Tensor dgamma = Tensor::zeros(1, c);
      Tensor dbeta = Tensor::zeros(1, c);
      Tensor dx = Tensor::zeros(rows, c);
      if (training_) {
        // Gradient through the batch statistics (population variance).
        Tensor sum_dy = Tensor::zeros(1, c);
        Tensor sum_dy_xhat = Tensor::zeros(1, c);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.at(r, j) - mean[j]) * invstd[j];
            const double dy = g.at(r, j);
            sum_dy[j] += dy;
            sum_dy_xhat[j] += dy * xhat;
            dgamma[j] += dy * xhat;
            dbeta[j] += dy;
          }
        }
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.at(r, j) - mean[j]) * invstd[j];
            dx.at(r, j) = gamma[j] * invstd[j] *
                          (g.at(r, j) - inv_n * sum_dy[j] -
                           xhat * inv_n * sum_dy_xhat[j]);
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x.at(r, j) - mean[j]) * invstd[j];
            const double dy = g.at(r, j);
            dgamma[j] += dy * xhat;
            dbeta[j] += dy;
            dx.at(r, j) = dy * gamma[j] * invstd[j];
          }
        }
      }
      accumulate(n.inputs[0], dx);
      accumulate(n.inputs[1], dgamma);
      accumulate(n.inputs[2], dbeta);
      break;
    }
    case OpKind::Dropout: {
      Tensor da = g;
      if (training_ && n.c0 > 0.0) {
        for (std::size_t i = 0; i < g.size(); ++i) da[i] *= n.aux[i];
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::ConcatCols: {
      std::size_t off = 0;
      for (NodeId in : n.inputs) {
        const Tensor& t = nodes_[in].value;
        Tensor part = Tensor::zeros(t.rows(), t.cols());
        for (std::size_t r = 0; r < t.rows(); ++r) {
          for (std::size_t j = 0; j < t.cols(); ++j) {
            part.at(r, j) = g.at(r, off + j);
          }
        }
        accumulate(in, part);
        off += t.cols();
      }
      break;
    }
    case OpKind::SliceCols: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      Tensor da = Tensor::zeros(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t j = n.i0; j < n.i1; ++j) {
          da.at(r, j) = g.at(r, j - n.i0);
        }
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::GatherCols: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      Tensor da = Tensor::zeros(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        da.at(r, n.idx[r]) += g.at(r, 0);
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case OpKind::EmbedRows: {
      const Tensor& table = nodes_[n.inputs[0]].value;
      Tensor dt = Tensor::zeros(table.rows(), table.cols());
      for (std::size_t r = 0; r < n.idx.size(); ++r) {
        for (std::size_t j = 0; j < table.cols(); ++j) {
          dt.at(n.idx[r], j) += g.at(r, j);
        }
      }
      accumulate(n.inputs[0], dt);
      break;
    }
    case OpKind::WhereMask: {
      Tensor da = g, db = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (n.mask[i] == 0.0) {
          da[i] = 0.0;
        } else {
          db[i] = 0.0;
        }
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
  }
}

double Graph::finite_difference_check(NodeId loss,
                                      const std::vector<NodeId>& params,
                                      double base_step) {
  if (base_step <= 0.0) throw ConfigError("finite difference step must be > 0");
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (NodeId p : params) {
    const Node& pn = nodes_[p];
    analytic.push_back(pn.has_grad ? pn.grad : Tensor(pn.value.shape()));
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Node& pn = nodes_[params[pi]];
    for (std::size_t e = 0; e < pn.value.size(); ++e) {
      const double theta = pn.value[e];
      const double h = base_step * (1.0 + std::abs(theta));
      pn.value[e] = theta + h;
      recompute();
      const double lp = nodes_[loss].value[0];
      pn.value[e] = theta - h;
      recompute();
      const double lm = nodes_[loss].value[0];
      pn.value[e] = theta;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericError("non-finite loss under finite-difference probe");
      }
      const double g_fd = (lp - lm) / (2.0 * h);
      const double g_ad = analytic[pi][e];
      const double denom = std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
      worst = std::max(worst, std::abs(g_ad - g_fd) / denom);
    }
  }
  recompute();
  return worst;
}

}  // namespace flowreg
