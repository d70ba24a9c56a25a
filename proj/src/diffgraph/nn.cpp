#include "madiff/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace madiff::nn {

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({fan_in, fan_out});
  for (double& x : w.values()) x = dist(rng);
  return w;
}

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : in_(in), out_(out) {
  if (in == 0 || out == 0) throw std::invalid_argument("linear layer " + name + " needs positive extents");
  weight_ = &params.add(name + ".weight", kaiming_uniform(in, out, rng));
  if (bias) bias_ = &params.add(name + ".bias", Tensor({1, out}, 0.0));
}

Var Linear::operator()(Var x) const {
  Graph& g = *x.graph;
  Var y = dg::matmul(x, g.param(*weight_));
  if (bias_ != nullptr) y = dg::add(y, g.param(*bias_));
  return y;
}

Mlp::Mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("mlp " + name + " needs at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(params, name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
}

Var Mlp::operator()(Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](x);
    if (i + 1 < layers_.size()) x = dg::silu(x);
  }
  return x;
}

}  // namespace madiff::nn
