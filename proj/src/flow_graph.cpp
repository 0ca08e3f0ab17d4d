#include "flowreg/flow_graph.hpp"

#include <cmath>
#include <limits>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

struct LayerKnots {
  Graph::NodeId knot_x;  // [N, M+1]
  Graph::NodeId knot_y;  // [N, M+1]
  Graph::NodeId derivs;  // [N, M+1]
};

// Build constrained knot tensors for one layer from raw logits [N, 3M-1].
LayerKnots constrain_graph(Graph& g, Graph::NodeId raw,
                           const SplineConfig& cfg) {
  const std::size_t m = cfg.bins;
  const std::size_t n = g.value(raw).rows();
  if (static_cast<double>(m) * cfg.min_bin >= 1.0) {
    throw ConfigError("spline: bins * min_bin must be < 1");
  }
  const double b = cfg.tail_bound;

  auto knots_from_logits = [&](Graph::NodeId logits) {
    Graph::NodeId frac = g.add_scalar(
        g.scale(g.softmax_rows(logits),
                1.0 - static_cast<double>(m) * cfg.min_bin),
        cfg.min_bin);
    std::vector<Graph::NodeId> cols;
    cols.push_back(g.constant(Tensor::full(n, 1, -b)));
    if (m > 1) {
      // Prefix sums of the first M-1 fractions via a constant 0/1 matrix.
      Tensor tri = Tensor::zeros(m, m - 1);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i; j < m - 1; ++j) tri.at(i, j) = 1.0;
      }
      Graph::NodeId interior = g.add_scalar(
          g.scale(g.matmul(frac, g.constant(std::move(tri))), 2.0 * b), -b);
      cols.push_back(interior);
    }
    cols.push_back(g.constant(Tensor::full(n, 1, b)));
    return g.concat_cols(cols);
  };

  LayerKnots out;
  out.knot_x = knots_from_logits(g.slice_cols(raw, 0, m));
  out.knot_y = knots_from_logits(g.slice_cols(raw, m, 2 * m));
  std::vector<Graph::NodeId> dcols;
  dcols.push_back(g.constant(Tensor::full(n, 1, 1.0)));
  if (m > 1) {
    Graph::NodeId interior = g.add_scalar(
        g.softplus(g.add_scalar(g.slice_cols(raw, 2 * m, 3 * m - 1),
                                derivative_logit_shift(cfg.min_derivative))),
        cfg.min_derivative);
    dcols.push_back(interior);
  }
  dcols.push_back(g.constant(Tensor::full(n, 1, 1.0)));
  out.derivs = g.concat_cols(dcols);
  return out;
}

// Inverse of one layer. Rows outside [-B, B] pass through unchanged with a
// zero log-det contribution; their spline branch is evaluated on the clamped
// input so every intermediate stays finite, then discarded by the mask.
FlowGraphResult layer_inverse_graph(Graph& g, Graph::NodeId y,
                                    const LayerKnots& knots,
                                    const SplineConfig& cfg) {
  const Tensor& yv = g.value(y);
  const Tensor& ky = g.value(knots.knot_y);
  const std::size_t n = yv.rows();
  const std::size_t m = cfg.bins;
  const double b = cfg.tail_bound;

  Tensor mask = Tensor::zeros(n, 1);
  std::vector<std::size_t> bin(n), bin1(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double v = yv.at(r, 0);
    mask[r] = (v >= -b && v <= b) ? 1.0 : 0.0;
    const double vc = std::clamp(v, -b, b);
    std::size_t mi = 0;
    while (mi + 1 < m && ky.at(r, mi + 1) <= vc) ++mi;
    bin[r] = mi;
    bin1[r] = mi + 1;
  }

  Graph::NodeId x0 = g.gather_cols(knots.knot_x, bin);
  Graph::NodeId x1 = g.gather_cols(knots.knot_x, bin1);
  Graph::NodeId y0 = g.gather_cols(knots.knot_y, bin);
  Graph::NodeId y1 = g.gather_cols(knots.knot_y, bin1);
  Graph::NodeId d0 = g.gather_cols(knots.derivs, bin);
  Graph::NodeId d1 = g.gather_cols(knots.derivs, bin1);

  Graph::NodeId w = g.sub(x1, x0);
  Graph::NodeId h = g.sub(y1, y0);
  Graph::NodeId s = g.div(h, w);
  Graph::NodeId ysafe = g.clamp(y, -b, b);
  Graph::NodeId dy = g.sub(ysafe, y0);
  Graph::NodeId k = g.sub(g.add(d1, d0), g.scale(s, 2.0));

  Graph::NodeId qa = g.add(g.mul(h, g.sub(s, d0)), g.mul(dy, k));
  Graph::NodeId qb = g.sub(g.mul(h, d0), g.mul(dy, k));
  Graph::NodeId qc = g.neg(g.mul(s, dy));
  Graph::NodeId disc =
      g.clamp(g.sub(g.mul(qb, qb), g.scale(g.mul(qa, qc), 4.0)), 0.0,
              std::numeric_limits<double>::infinity());
  Graph::NodeId zeta = g.clamp(
      g.div(g.scale(qc, 2.0), g.neg(g.add(qb, g.sqrt(disc)))), 0.0, 1.0);
  {
    // Newton polish, mirroring the scalar inverse.
    Graph::NodeId omz0 = g.add_scalar(g.neg(zeta), 1.0);
    Graph::NodeId zomz0 = g.mul(zeta, omz0);
    Graph::NodeId den0 = g.add(s, g.mul(k, zomz0));
    Graph::NodeId val = g.div(
        g.mul(h, g.add(g.mul(s, g.mul(zeta, zeta)), g.mul(d0, zomz0))), den0);
    Graph::NodeId bracket =
        g.add(g.add(g.mul(d1, g.mul(zeta, zeta)), g.scale(g.mul(s, zomz0), 2.0)),
              g.mul(d0, g.mul(omz0, omz0)));
    Graph::NodeId slope = g.div(g.mul(g.mul(s, s), bracket), g.mul(den0, den0));
    zeta = g.clamp(
        g.sub(zeta, g.div(g.sub(val, dy), g.mul(w, slope))), 0.0, 1.0);
  }
  Graph::NodeId z_in = g.add(x0, g.mul(w, zeta));

  Graph::NodeId omz = g.add_scalar(g.neg(zeta), 1.0);
  Graph::NodeId zeta2 = g.mul(zeta, zeta);
  Graph::NodeId zomz = g.mul(zeta, omz);
  Graph::NodeId omz2 = g.mul(omz, omz);
  Graph::NodeId numer = g.mul(
      g.mul(s, s),
      g.add(g.add(g.mul(d1, zeta2), g.scale(g.mul(s, zomz), 2.0)),
            g.mul(d0, omz2)));
  Graph::NodeId denom = g.add(s, g.mul(k, zomz));
  Graph::NodeId log_deriv = g.sub(g.log(numer), g.scale(g.log(denom), 2.0));

  Graph::NodeId zeros = g.constant(Tensor::zeros(n, 1));
  FlowGraphResult out;
  out.z = g.where_mask(mask, z_in, y);
  out.log_abs_det = g.where_mask(std::move(mask), g.neg(log_deriv), zeros);
  return out;
}

}  // namespace

FlowGraphResult flow_inverse_graph(Graph& g, Graph::NodeId y,
                                   Graph::NodeId raw_all, std::size_t layers,
                                   const SplineConfig& cfg) {
  if (layers < 1) throw ConfigError("flow: at least one layer required");
  const std::size_t per_layer = raw_param_count(cfg.bins);
  if (g.value(raw_all).cols() != layers * per_layer) {
    throw StructuralError("flow: head width does not match layer count");
  }
  const std::size_t n = g.value(y).rows();
  Graph::NodeId cur = y;
  Graph::NodeId lad = g.constant(Tensor::zeros(n, 1));
  for (std::size_t layer = layers; layer-- > 0;) {
    Graph::NodeId raw =
        g.slice_cols(raw_all, layer * per_layer, (layer + 1) * per_layer);
    LayerKnots knots = constrain_graph(g, raw, cfg);
    FlowGraphResult r = layer_inverse_graph(g, cur, knots, cfg);
    cur = r.z;
    lad = g.add(lad, r.log_abs_det);
  }
  return {cur, lad};
}

Graph::NodeId standard_normal_log_pdf(Graph& g, Graph::NodeId z) {
  return g.add_scalar(g.scale(g.mul(z, z), -0.5), -kHalfLog2Pi);
}

}  // namespace flowreg
