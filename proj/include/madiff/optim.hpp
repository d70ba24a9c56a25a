#pragma once

#include <cstdint>
#include <vector>

#include "madiff/diffgraph.hpp"

namespace madiff::dg {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p <- p - lr * wd * p
};

// Moments are stored in ParameterSet order.
struct AdamWState {
  AdamWOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

AdamWState make_adamw_state(const ParameterSet& params, AdamWOptions options);

// One bias-corrected AdamW update using the gradients stored on `params`.
// Throws std::invalid_argument naming the parameter if a gradient is not
// finite, or if the state does not match the parameter shapes.
void adamw_step(ParameterSet& params, AdamWState& state);

}  // namespace madiff::dg
