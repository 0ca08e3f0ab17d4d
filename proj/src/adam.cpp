#include "flowreg/adam.hpp"

#include <cmath>
#include <string>

#include "flowreg/errors.hpp"

namespace flowreg {

AdamState AdamState::create(const std::vector<Tensor*>& params,
                            double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw StructuralError("adam_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) ||
        !params[i]->same_shape(state.m[i])) {
      throw StructuralError("adam_step: shape mismatch at parameter " +
                            std::to_string(i));
    }
    if (!grads[i]->all_finite()) {
      throw NumericError("adam_step: non-finite gradient at parameter " +
                         std::to_string(i) + "; no update applied");
    }
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t e = 0; e < p.size(); ++e) {
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g[e];
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g[e] * g[e];
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      p[e] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace flowreg
