#pragma once

// Small trainable building blocks on top of the differentiation core.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "madiff/diffgraph.hpp"

namespace madiff::nn {

using dg::Graph;
using dg::Parameter;
using dg::ParameterSet;
using dg::Tensor;
using dg::Var;
using Rng = std::mt19937_64;

// Uniform fan-in scaled initialisation, U(-sqrt(3/fan_in), sqrt(3/fan_in)).
Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// y = x W + b with W stored [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true);

  Var operator()(Var x) const;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

// Linear layers with SiLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng);

  Var operator()(Var x) const;
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
};

}  // namespace madiff::nn
