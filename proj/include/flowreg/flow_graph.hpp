#pragma once

#include "flowreg/graph.hpp"
#include "flowreg/spline.hpp"

namespace flowreg {

//! Differentiable counterparts of the scalar spline operations, expressed as
//! graph ops so the NLL gradient flows back into the conditioning head and
//! encoder. Bin membership and tail masks are decided from the eagerly
//! computed node values; the selected branch is then built with gather and
//! masked-select ops, mirroring the scalar path.

struct FlowGraphResult {
  Graph::NodeId z;            // [N, 1] base-space values
  Graph::NodeId log_abs_det;  // [N, 1] accumulated log|det| of the inverse
};

//! Inverse pass y -> z through a stack of conditional spline layers.
//! raw_all holds the head output [N, layers * (3M-1)]; y is a constant or
//! computed node of shape [N, 1]. Layers are inverted in reverse order,
//! matching stack_inverse.
FlowGraphResult flow_inverse_graph(Graph& g, Graph::NodeId y,
                                   Graph::NodeId raw_all, std::size_t layers,
                                   const SplineConfig& config);

//! Per-row log-density of a standard normal: -z^2/2 - log(2*pi)/2.
Graph::NodeId standard_normal_log_pdf(Graph& g, Graph::NodeId z);

}  // namespace flowreg
