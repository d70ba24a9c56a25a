#pragma once

// Discretised selective state-space computation.
//
// Layout conventions: sequences are row-major [time x channels]. The
// diagonal evolution matrix A and all per-lane state quantities are
// [channels x state]. A batch of sequences is stacked along rows, each
// sequence occupying `length` consecutive rows.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "madiff/diffgraph.hpp"
#include "madiff/nn.hpp"

namespace madiff::ssm {

struct SsmDims {
  std::size_t d_model = 64;
  std::size_t d_state = 16;
  std::size_t d_motion = 16;
  std::size_t d_conv = 2;
  std::size_t expand = 1;

  std::size_t d_inner() const { return expand * d_model; }
  void validate() const;  // throws std::invalid_argument on any zero extent
};

// ------------------------------------------------------------------ ZOH

struct ZohPair {
  double a_bar;
  double b_bar;
};

// Scalar closed form: a_bar = exp(delta*a), b_bar = (exp(delta*a) - 1) / a * b.
ZohPair discretize_zoh(double a, double b, double delta);

// Diagonal form for one timestep. A is [channels x state], B is [state],
// delta is [channels]; outputs are [channels x state].
void discretize_zoh(std::span<const double> A, std::span<const double> B, std::span<const double> delta,
                    std::size_t channels, std::size_t state, std::span<double> a_bar, std::span<double> b_bar);

// --------------------------------------------------- linear recurrences
//
// h_t = a_t * h_{t-1} + b_t, elementwise over `lanes` independent lanes.
// a, b and states are [length x lanes]; h holds h_{-1} on entry and the
// final state on exit.

void recurrence_sequential(std::span<const double> a, std::span<const double> b, std::size_t length,
                           std::size_t lanes, std::span<double> h, std::span<double> states);

// Three-phase chunked scan: independent local scans per chunk (parallel),
// carry propagation with the associative composition
// (a2*a1, a2*b1 + b2) across chunk ends, then a parallel fix-up.
void recurrence_chunked(std::span<const double> a, std::span<const double> b, std::size_t length,
                        std::size_t lanes, std::span<double> h, std::span<double> states, std::size_t chunk);

// ------------------------------------------- selective scan, projected
//
// Per-timestep quantities already produced by the input-dependent
// projections. Output y[t][c] = sum_n C[t][n] * h_t[c][n].

struct ScanInputs {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  std::span<const double> u;      // length x channels
  std::span<const double> delta;  // length x channels, > 0
  std::span<const double> A;      // channels x state, < 0
  std::span<const double> B;      // length x state
  std::span<const double> C;      // length x state

  void validate() const;
};

void scan_projected_sequential(const ScanInputs& in, std::span<double> h, std::span<double> y);
void scan_projected_chunked(const ScanInputs& in, std::span<double> h, std::span<double> y, std::size_t chunk);

// ------------------------------------------ motion-driven selective scan

// Selective parameters acting on the concatenated input [x_t, m_t].
struct SelectiveParams {
  std::size_t channels = 0;  // dx + dm
  std::size_t state = 0;
  std::vector<double> A;           // channels x state, strictly negative
  std::vector<double> proj_B;      // channels x state
  std::vector<double> proj_C;      // channels x state
  std::vector<double> proj_delta;  // channels x channels
  std::vector<double> delta_bias;  // channels

  void validate() const;
};

// Random draw with A = -(1..state) per channel and small projections.
SelectiveParams random_selective_params(std::size_t channels, std::size_t state, std::uint64_t seed);

struct ScanState {
  std::vector<double> h;  // channels x state
  std::int64_t t = 0;     // timesteps consumed so far

  static ScanState zeros(std::size_t channels, std::size_t state) { return {std::vector<double>(channels * state), 0}; }
};

struct ProjectedSequence {
  std::vector<double> u, delta, B, C;
};

// Builds u = [x, m] and applies the B, C and softplus(delta) projections.
ProjectedSequence project_selective(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                    std::size_t dm, const SelectiveParams& params);

// h_t = A_bar_t h_{t-1} + B_bar_t [x_t, m_t]; y_t = C_t h_t. Returns
// [length x (dx + dm)]. Throws on length mismatch between x and m.
std::vector<double> selective_scan_sequential(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                              std::size_t dm, const SelectiveParams& params, ScanState& state);

std::vector<double> selective_scan_chunked(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                           std::size_t dm, const SelectiveParams& params, ScanState& state,
                                           std::size_t chunk);

// --------------------------------------------------- frozen LTI form
//
// Only valid when B_bar and C do not depend on the input:
// K = (C B_bar, C A_bar B_bar, ..., C A_bar^{length-1} B_bar) with diagonal
// A_bar over `state` entries.

std::vector<double> lti_convolution_kernel(std::span<const double> a_bar, std::span<const double> b_bar,
                                           std::span<const double> c, std::size_t length);

// y_t = sum_{k<=t} kernel[k] * input[t-k].
std::vector<double> causal_convolve(std::span<const double> kernel, std::span<const double> input);

// ------------------------------------------------------- graph ops

// Fused selective scan over a batch of sequences (zero initial state).
// u, delta: [rows x C]; A: [C x N]; B, C: [rows x N]; rows % length == 0.
dg::Var selective_scan(dg::Var u, dg::Var delta, dg::Var A, dg::Var B, dg::Var C, std::size_t length);

// Causal depthwise convolution along time, per sequence:
// out[t][c] = bias[c] + sum_k weight[k][c] * x[t - (K-1) + k][c].
dg::Var causal_depthwise_conv(dg::Var x, dg::Var weight, dg::Var bias, std::size_t length);

// ------------------------------------------------ motion-aware block

enum class MotionMix { concat, sum };
enum class ScanDirection { forward, bidirectional };

// Operates on a residual stream [z, m] of width d_model + d_motion. The
// selective scan runs on the concatenation of the projected tokens and the
// motion channels; the motion sub-channels of the output are overwritten
// with the input's.
class MotionAwareMambaBlock {
 public:
  MotionAwareMambaBlock() = default;
  MotionAwareMambaBlock(dg::ParameterSet& params, const std::string& name, const SsmDims& dims, MotionMix mix,
                        ScanDirection direction, nn::Rng& rng);

  // stream: [rows x (d_model + d_motion)]; cond: [rows x d_model] added to
  // the block input but not to the residual path.
  dg::Var forward(dg::Var stream, dg::Var cond, std::size_t length) const;

  void zero_output_projection();
  const SsmDims& dims() const { return dims_; }
  std::size_t scan_channels() const { return channels_; }

 private:
  struct ScanBranch {
    dg::Parameter* conv_weight = nullptr;  // d_conv x channels
    dg::Parameter* conv_bias = nullptr;    // 1 x channels
    nn::Linear x_proj;                     // channels -> dt_rank + 2 * state
    nn::Linear dt_proj;                    // dt_rank -> channels
    dg::Parameter* a_raw = nullptr;        // channels x state, A = -softplus(a_raw)
    dg::Parameter* d_skip = nullptr;       // 1 x channels
  };

  ScanBranch make_branch(dg::ParameterSet& params, const std::string& name, nn::Rng& rng) const;
  dg::Var run_branch(const ScanBranch& br, dg::Var u, std::size_t length) const;

  SsmDims dims_;
  MotionMix mix_ = MotionMix::concat;
  ScanDirection direction_ = ScanDirection::forward;
  std::size_t channels_ = 0;
  std::size_t dt_rank_ = 0;
  nn::Linear in_x_, in_gate_, motion_in_, out_proj_;
  ScanBranch fwd_, bwd_;
};

}  // namespace madiff::ssm
