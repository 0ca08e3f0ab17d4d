#pragma once

#include <cstdint>
#include <vector>

#include "flowreg/tensor.hpp"

namespace flowreg {

//! Adam optimizer state: one pair of moment tensors per parameter tensor.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState create(const std::vector<Tensor*>& params,
                          double learning_rate = 1e-3);
};

//! One bias-corrected Adam update over all parameter tensors.
//! A non-finite gradient raises NumericError and applies no update.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state);

}  // namespace flowreg
