#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "madiff/ssm.hpp"

namespace madiff::ssm {

using dg::Tensor;
using dg::Var;

MotionAwareMambaBlock::MotionAwareMambaBlock(dg::ParameterSet& params, const std::string& name, const SsmDims& dims,
                                             MotionMix mix, ScanDirection direction, nn::Rng& rng)
    : dims_(dims), mix_(mix), direction_(direction) {
  dims_.validate();
  const std::size_t inner = dims_.d_inner();
  channels_ = mix_ == MotionMix::concat ? inner + dims_.d_motion : inner;
  dt_rank_ = (channels_ + 15) / 16;
  in_x_ = nn::Linear(params, name + ".in_x", dims_.d_model, inner, rng, false);
  in_gate_ = nn::Linear(params, name + ".in_gate", dims_.d_model, channels_, rng, false);
  if (mix_ == MotionMix::sum) motion_in_ = nn::Linear(params, name + ".motion_in", dims_.d_motion, inner, rng, false);
  fwd_ = make_branch(params, name + ".fwd", rng);
  if (direction_ == ScanDirection::bidirectional) bwd_ = make_branch(params, name + ".bwd", rng);
  out_proj_ = nn::Linear(params, name + ".out_proj", channels_, dims_.d_model, rng, false);
}

MotionAwareMambaBlock::ScanBranch MotionAwareMambaBlock::make_branch(dg::ParameterSet& params, const std::string& name,
                                                                     nn::Rng& rng) const {
  const std::size_t C = channels_, N = dims_.d_state, K = dims_.d_conv;
  ScanBranch br;
  br.conv_weight = &params.add(name + ".conv.weight", nn::kaiming_uniform(K, C, rng));
  br.conv_bias = &params.add(name + ".conv.bias", Tensor({1, C}, 0.0));
  br.x_proj = nn::Linear(params, name + ".x_proj", C, dt_rank_ + 2 * N, rng, false);
  br.dt_proj = nn::Linear(params, name + ".dt_proj", dt_rank_, C, rng, true);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (double& b : br.dt_proj.bias()->value.values()) {
    const double dt = std::exp(log_dt(rng));
    b = dt + std::log(-std::expm1(-dt));
  }
  Tensor a_raw({C, N});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) a_raw[c * N + n] = std::log(std::expm1(static_cast<double>(n + 1)));
  br.a_raw = &params.add(name + ".a_raw", std::move(a_raw));
  br.d_skip = &params.add(name + ".d_skip", Tensor({1, C}, 1.0));
  return br;
}

Var MotionAwareMambaBlock::run_branch(const ScanBranch& br, Var u, std::size_t length) const {
  dg::Graph& g = *u.graph;
  const std::size_t N = dims_.d_state;
  Var uc = dg::silu(causal_depthwise_conv(u, g.param(*br.conv_weight), g.param(*br.conv_bias), length));
  Var proj = br.x_proj(uc);
  Var delta = dg::softplus(br.dt_proj(dg::slice_cols(proj, 0, dt_rank_)));
  Var Bm = dg::slice_cols(proj, dt_rank_, dt_rank_ + N);
  Var Cm = dg::slice_cols(proj, dt_rank_ + N, dt_rank_ + 2 * N);
  Var A = dg::negate(dg::softplus(g.param(*br.a_raw)));
  return selective_scan(uc, delta, A, Bm, Cm, length) + uc * g.param(*br.d_skip);
}

Var MotionAwareMambaBlock::forward(Var stream, Var cond, std::size_t length) const {
  const std::size_t dm = dims_.d_model;
  if (stream.cols() != dm + dims_.d_motion)
    throw std::invalid_argument("block: stream has " + std::to_string(stream.cols()) + " columns, expected " +
                                std::to_string(dm + dims_.d_motion));
  Var z = dg::slice_cols(stream, 0, dm);
  Var m = dg::slice_cols(stream, dm, dm + dims_.d_motion);
  Var inp = z + cond;
  Var x = in_x_(inp);
  Var u = mix_ == MotionMix::concat ? dg::concat_cols({x, m}) : x + motion_in_(m);
  Var y = run_branch(fwd_, u, length);
  if (direction_ == ScanDirection::bidirectional)
    y = y + dg::reverse_rows_in_groups(run_branch(bwd_, dg::reverse_rows_in_groups(u, length), length), length);
  y = y * dg::silu(in_gate_(inp));
  return dg::concat_cols({z + out_proj_(y), m});
}

void MotionAwareMambaBlock::zero_output_projection() { out_proj_.weight().value.fill(0.0); }

}  // namespace madiff::ssm
