#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowreg/rng.hpp"
#include "flowreg/tensor.hpp"

namespace flowreg {

//! Learned affine plus running statistics for one batch-norm layer.
//! gamma/beta are trained through the graph; the running statistics are
//! updated in-place on the first train-mode evaluation of a node.
struct BatchNormState {
  Tensor gamma;         // [1, C]
  Tensor beta;          // [1, C]
  Tensor running_mean;  // [1, C]
  Tensor running_var;   // [1, C]
};

enum class OpKind : std::uint8_t {
  Input,
  Param,
  Constant,
  MatMul,
  Add,       // elementwise; rhs may be a [1, C] row vector (broadcast over rows)
  Sub,       // same broadcast rule as Add
  Mul,
  Div,
  Neg,
  AddScalar,
  Scale,
  Relu,
  Softplus,
  Log,
  Exp,
  Sqrt,
  Clamp,
  SoftmaxRows,
  SumAll,
  MeanAll,
  BatchNorm,  // inputs: x, gamma, beta
  Dropout,
  ConcatCols,
  SliceCols,
  GatherCols,  // one column index per row
  EmbedRows,   // table lookup; one table row per output row
  WhereMask,   // constant 0/1 mask selects between two inputs
};

const char* op_name(OpKind op);

//! Reverse-mode automatic differentiation over an eagerly-evaluated tape.
//!
//! Nodes are appended in topological order and evaluated on construction.
//! `bind` + `recompute` re-run the whole tape with new input values, which
//! is what the finite-difference checker uses. `backward` fills exact
//! gradients for every node reachable from a scalar output.
class Graph {
 public:
  using NodeId = int;

  explicit Graph(bool training = false) : training_(training) {}

  bool training() const { return training_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Leaves.
  NodeId input(std::size_t rows, std::size_t cols);
  NodeId param(const Tensor& value);
  NodeId constant(Tensor value);

  // Operations (evaluated eagerly).
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId add_scalar(NodeId a, double c);
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId softplus(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId softmax_rows(NodeId a);
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormState* state,
                    double momentum, double epsilon);
  NodeId dropout(NodeId a, double drop_prob, Rng& rng);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end);
  NodeId gather_cols(NodeId a, std::vector<std::size_t> col_per_row);
  NodeId embed_rows(NodeId table, std::vector<std::size_t> row_indices);
  NodeId where_mask(Tensor mask, NodeId a, NodeId b);

  //! Rebind an input leaf; takes effect on the next recompute().
  void bind(NodeId input_node, Tensor value);
  //! Overwrite a parameter leaf in place (used by the FD checker).
  Tensor& mutable_value(NodeId node);
  //! Re-evaluate every non-leaf node in topological order.
  void recompute();

  const Tensor& value(NodeId node) const { return nodes_[node].value; }
  OpKind op(NodeId node) const { return nodes_[node].op; }

  //! Reverse sweep from a scalar output; gradients accumulate at every node.
  void backward(NodeId output);
  const Tensor& grad(NodeId node) const;

  //! Max over all elements of the given params of
  //! |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) with central differences of
  //! step base_step * (1 + |theta|). Runs backward() internally.
  double finite_difference_check(NodeId loss, const std::vector<NodeId>& params,
                                 double base_step);

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool bound = false;  // Input leaves only
    // op attributes
    double c0 = 0.0, c1 = 0.0;      // scalar constant / clamp bounds /
                                    // dropout keep prob / bn momentum+eps
    std::size_t i0 = 0, i1 = 0;     // slice bounds
    std::vector<std::size_t> idx;   // gather / embed indices
    Tensor aux;                     // dropout mask, bn saved mean
    Tensor aux2;                    // bn saved inverse std
    Tensor mask;                    // where_mask selector
    BatchNormState* bn = nullptr;
    bool stats_updated = false;
  };

  NodeId push(Node node);
  void eval(Node& n, NodeId id);
  void backprop(const Node& n);
  void accumulate(NodeId target, const Tensor& g);
  void accumulate_maybe_rowbcast(NodeId target, const Tensor& g,
                                 const Tensor& operand_value);
  void check_finite(const Node& n, NodeId id) const;

  std::vector<Node> nodes_;
  bool training_;
};

}  // namespace flowreg
