#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "madiff/ssm.hpp"
#include "scan_core.hpp"

namespace madiff::ssm {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void SsmDims::validate() const {
  require(d_model > 0 && d_state > 0 && d_motion > 0 && d_conv > 0 && expand > 0,
          "ssm dims must all be positive (d_model=" + std::to_string(d_model) + ", d_state=" +
              std::to_string(d_state) + ", d_motion=" + std::to_string(d_motion) + ", d_conv=" +
              std::to_string(d_conv) + ", expand=" + std::to_string(expand) + ")");
}

// ------------------------------------------------------------------ ZOH

ZohPair discretize_zoh(double a, double b, double delta) {
  require(a != 0.0, "discretize_zoh: A entry is zero");
  double a_bar, gain;
  detail::zoh_lane(a, delta, a_bar, gain);
  return {a_bar, gain * b};
}

void discretize_zoh(std::span<const double> A, std::span<const double> B, std::span<const double> delta,
                    std::size_t channels, std::size_t state, std::span<double> a_bar, std::span<double> b_bar) {
  require(A.size() == channels * state && B.size() == state && delta.size() == channels &&
              a_bar.size() == channels * state && b_bar.size() == channels * state,
          "discretize_zoh: extent mismatch");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < state; ++n) {
      const std::size_t k = c * state + n;
      require(A[k] != 0.0, "discretize_zoh: A entry is zero");
      double g;
      detail::zoh_lane(A[k], delta[c], a_bar[k], g);
      b_bar[k] = g * B[n];
    }
  }
}

// --------------------------------------------------- linear recurrences

void recurrence_sequential(std::span<const double> a, std::span<const double> b, std::size_t length,
                           std::size_t lanes, std::span<double> h, std::span<double> states) {
  require(a.size() == length * lanes && b.size() == length * lanes && states.size() == length * lanes &&
              h.size() == lanes,
          "recurrence_sequential: extent mismatch");
  for (std::size_t t = 0; t < length; ++t) {
    const double* at = a.data() + t * lanes;
    const double* bt = b.data() + t * lanes;
    double* st = states.data() + t * lanes;
    for (std::size_t p = 0; p < lanes; ++p) {
      h[p] = at[p] * h[p] + bt[p];
      st[p] = h[p];
    }
  }
}

void recurrence_chunked(std::span<const double> a, std::span<const double> b, std::size_t length,
                        std::size_t lanes, std::span<double> h, std::span<double> states, std::size_t chunk) {
  require(chunk >= 1, "recurrence_chunked: chunk size must be at least 1");
  require(a.size() == length * lanes && b.size() == length * lanes && states.size() == length * lanes &&
              h.size() == lanes,
          "recurrence_chunked: extent mismatch");
  if (length == 0) return;
  const std::size_t n_chunks = (length + chunk - 1) / chunk;
  std::vector<double> prods(length * lanes);

  // Local scans from a zero state, plus running products of a.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n_chunks); ++k) {
    const std::size_t t0 = static_cast<std::size_t>(k) * chunk;
    const std::size_t t1 = std::min(length, t0 + chunk);
    std::vector<double> loc(lanes, 0.0), prod(lanes, 1.0);
    for (std::size_t t = t0; t < t1; ++t) {
      const double* at = a.data() + t * lanes;
      const double* bt = b.data() + t * lanes;
      for (std::size_t p = 0; p < lanes; ++p) {
        loc[p] = at[p] * loc[p] + bt[p];
        prod[p] = at[p] * prod[p];
      }
      std::copy(loc.begin(), loc.end(), states.begin() + t * lanes);
      std::copy(prod.begin(), prod.end(), prods.begin() + t * lanes);
    }
  }

  // Carry into chunk k is the composed state at the end of chunk k-1.
  std::vector<double> carry((n_chunks + 1) * lanes);
  std::copy(h.begin(), h.end(), carry.begin());
  for (std::size_t k = 0; k < n_chunks; ++k) {
    const std::size_t last = std::min(length, (k + 1) * chunk) - 1;
    for (std::size_t p = 0; p < lanes; ++p)
      carry[(k + 1) * lanes + p] = prods[last * lanes + p] * carry[k * lanes + p] + states[last * lanes + p];
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n_chunks); ++k) {
    const std::size_t t0 = static_cast<std::size_t>(k) * chunk;
    const std::size_t t1 = std::min(length, t0 + chunk);
    const double* cin = carry.data() + static_cast<std::size_t>(k) * lanes;
    for (std::size_t t = t0; t < t1; ++t)
      for (std::size_t p = 0; p < lanes; ++p)
        states[t * lanes + p] = prods[t * lanes + p] * cin[p] + states[t * lanes + p];
  }
  std::copy(carry.end() - static_cast<std::ptrdiff_t>(lanes), carry.end(), h.begin());
}

// ------------------------------------------- selective scan, projected

void ScanInputs::validate() const {
  require(channels > 0 && state > 0, "scan: channels and state must be positive");
  require(u.size() == length * channels && delta.size() == length * channels, "scan: u/delta extent mismatch");
  require(A.size() == channels * state, "scan: A extent mismatch");
  require(B.size() == length * state && C.size() == length * state, "scan: B/C extent mismatch");
  for (double a : A) require(a < 0.0, "scan: A entries must be strictly negative");
}

void scan_projected_sequential(const ScanInputs& in, std::span<double> h, std::span<double> y) {
  in.validate();
  require(h.size() == in.channels * in.state && y.size() == in.length * in.channels, "scan: output extent mismatch");
  detail::scan_sequence(in.u.data(), in.delta.data(), in.A.data(), in.B.data(), in.C.data(), in.length, in.channels,
                        in.state, h.data(), y.data(), nullptr, nullptr, nullptr);
}

void scan_projected_chunked(const ScanInputs& in, std::span<double> h, std::span<double> y, std::size_t chunk) {
  in.validate();
  require(chunk >= 1, "scan: chunk size must be at least 1");
  require(h.size() == in.channels * in.state && y.size() == in.length * in.channels, "scan: output extent mismatch");
  const std::size_t L = in.length, C = in.channels, N = in.state, lanes = C * N;
  std::vector<double> a(L * lanes), b(L * lanes), states(L * lanes);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ts = 0; ts < static_cast<std::ptrdiff_t>(L); ++ts) {
    const std::size_t t = static_cast<std::size_t>(ts);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t n = 0; n < N; ++n) {
        double ab, g;
        detail::zoh_lane(in.A[c * N + n], in.delta[t * C + c], ab, g);
        a[t * lanes + c * N + n] = ab;
        b[t * lanes + c * N + n] = (g * in.B[t * N + n]) * in.u[t * C + c];
      }
  }
  recurrence_chunked(a, b, L, lanes, h, states, chunk);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ts = 0; ts < static_cast<std::ptrdiff_t>(L); ++ts) {
    const std::size_t t = static_cast<std::size_t>(ts);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += in.C[t * N + n] * states[t * lanes + c * N + n];
      y[t * C + c] = acc;
    }
  }
}

// ------------------------------------------ motion-driven selective scan

void SelectiveParams::validate() const {
  require(channels > 0 && state > 0, "selective params: channels and state must be positive");
  require(A.size() == channels * state && proj_B.size() == channels * state && proj_C.size() == channels * state &&
              proj_delta.size() == channels * channels && delta_bias.size() == channels,
          "selective params: extent mismatch");
  for (double a : A) require(a < 0.0, "selective params: A entries must be strictly negative");
}

SelectiveParams random_selective_params(std::size_t channels, std::size_t state, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> proj(-s, s);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  SelectiveParams p;
  p.channels = channels;
  p.state = state;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t n = 0; n < state; ++n) p.A.push_back(-static_cast<double>(n + 1));
  for (std::size_t k = 0; k < channels * state; ++k) p.proj_B.push_back(proj(rng));
  for (std::size_t k = 0; k < channels * state; ++k) p.proj_C.push_back(proj(rng));
  for (std::size_t k = 0; k < channels * channels; ++k) p.proj_delta.push_back(0.1 * proj(rng));
  for (std::size_t c = 0; c < channels; ++c) {
    const double dt = std::exp(log_dt(rng));
    p.delta_bias.push_back(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  return p;
}

ProjectedSequence project_selective(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                    std::size_t dm, const SelectiveParams& params) {
  params.validate();
  require(dx + dm == params.channels, "selective scan: dx + dm must equal the parameter channel count");
  require(dx > 0 && x.size() % dx == 0, "selective scan: x extent is not a multiple of dx");
  const std::size_t L = x.size() / dx;
  require(m.size() == L * dm, "selective scan: motion sequence has " + std::to_string(dm ? m.size() / dm : 0) +
                                  " steps but token sequence has " + std::to_string(L));
  const std::size_t C = params.channels, N = params.state;
  ProjectedSequence out;
  out.u.resize(L * C);
  out.delta.resize(L * C);
  out.B.assign(L * N, 0.0);
  out.C.assign(L * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double* ut = out.u.data() + t * C;
    std::copy_n(x.data() + t * dx, dx, ut);
    std::copy_n(m.data() + t * dm, dm, ut + dx);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t n = 0; n < N; ++n) {
        out.B[t * N + n] += ut[c] * params.proj_B[c * N + n];
        out.C[t * N + n] += ut[c] * params.proj_C[c * N + n];
      }
    for (std::size_t j = 0; j < C; ++j) {
      double z = params.delta_bias[j];
      for (std::size_t c = 0; c < C; ++c) z += ut[c] * params.proj_delta[c * C + j];
      out.delta[t * C + j] = dg::softplus_value(z);
    }
  }
  return out;
}

namespace {

template <class ScanFn>
std::vector<double> run_selective(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                  std::size_t dm, const SelectiveParams& params, ScanState& state, ScanFn scan) {
  const ProjectedSequence p = project_selective(x, m, dx, dm, params);
  const std::size_t C = params.channels, N = params.state, L = p.u.size() / C;
  if (state.h.empty()) state = ScanState::zeros(C, N);
  require(state.h.size() == C * N, "selective scan: state has wrong extent");
  ScanInputs in{L, C, N, p.u, p.delta, params.A, p.B, p.C};
  std::vector<double> y(L * C);
  scan(in, std::span<double>(state.h), std::span<double>(y));
  state.t += static_cast<std::int64_t>(L);
  return y;
}

}  // namespace

std::vector<double> selective_scan_sequential(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                              std::size_t dm, const SelectiveParams& params, ScanState& state) {
  return run_selective(x, m, dx, dm, params, state,
                       [](const ScanInputs& in, std::span<double> h, std::span<double> y) {
                         scan_projected_sequential(in, h, y);
                       });
}

std::vector<double> selective_scan_chunked(std::span<const double> x, std::span<const double> m, std::size_t dx,
                                           std::size_t dm, const SelectiveParams& params, ScanState& state,
                                           std::size_t chunk) {
  require(chunk >= 1, "selective scan: chunk size must be at least 1");
  return run_selective(x, m, dx, dm, params, state,
                       [chunk](const ScanInputs& in, std::span<double> h, std::span<double> y) {
                         scan_projected_chunked(in, h, y, chunk);
                       });
}

// --------------------------------------------------- frozen LTI form

std::vector<double> lti_convolution_kernel(std::span<const double> a_bar, std::span<const double> b_bar,
                                           std::span<const double> c, std::size_t length) {
  require(length >= 1, "lti kernel: length must be at least 1");
  require(a_bar.size() == b_bar.size() && c.size() == a_bar.size(), "lti kernel: extent mismatch");
  std::vector<double> kernel(length, 0.0);
  std::vector<double> power(b_bar.begin(), b_bar.end());  // A_bar^k B_bar
  for (std::size_t k = 0; k < length; ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n < power.size(); ++n) acc += c[n] * power[n];
    kernel[k] = acc;
    for (std::size_t n = 0; n < power.size(); ++n) power[n] *= a_bar[n];
  }
  return kernel;
}

std::vector<double> causal_convolve(std::span<const double> kernel, std::span<const double> input) {
  std::vector<double> y(input.size(), 0.0);
  for (std::size_t t = 0; t < input.size(); ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= t && k < kernel.size(); ++k) acc += kernel[k] * input[t - k];
    y[t] = acc;
  }
  return y;
}

}  // namespace madiff::ssm
