#include "madiff/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace madiff::dg {

AdamWState make_adamw_state(const ParameterSet& params, AdamWOptions options) {
  AdamWState s;
  s.options = options;
  for (const auto& p : params) {
    s.first_moment.push_back(Tensor::zeros_like(p.value));
    s.second_moment.push_back(Tensor::zeros_like(p.value));
  }
  return s;
}

void adamw_step(ParameterSet& params, AdamWState& state) {
  const AdamWOptions& o = state.options;
  if (!(o.lr > 0.0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw std::invalid_argument("adamw: optimizer state has " + std::to_string(state.first_moment.size()) +
                                " slots for " + std::to_string(params.size()) + " parameters");
  std::size_t i = 0;
  for (const auto& p : params) {
    if (p.grad.shape() != p.value.shape() || state.first_moment[i].shape() != p.value.shape())
      throw std::invalid_argument("adamw: shape mismatch for parameter " + p.name);
    if (!p.grad.all_finite()) throw std::invalid_argument("adamw: non-finite gradient in parameter " + p.name);
    ++i;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.lr * o.weight_decay;

  i = 0;
  for (auto& p : params) {
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] = p.value[k] * decay - o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
    ++i;
  }
}

}  // namespace madiff::dg
