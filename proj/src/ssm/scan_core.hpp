#pragma once

// Shared inner loops of the selective scan. The reference kernels and the
// differentiable op both go through these so their arithmetic is identical.

#include <cmath>
#include <cstddef>

namespace madiff::ssm::detail {

// Zero-order hold for one diagonal lane: a_bar = exp(delta*a) and the
// input gain g = expm1(delta*a) / a, so that b_bar = g * b. a_bar is taken
// as 1 + expm1(x), within an ulp of exp(x), to halve the transcendental calls.
inline void zoh_lane(double a, double delta, double& a_bar, double& gain) {
  const double em1 = std::expm1(delta * a);
  a_bar = 1.0 + em1;
  gain = em1 / a;
}

// One sequence. h is [C x N] (in: initial state, out: final state), y is
// [L x C]. Traces, when non-null, are [L x C x N].
inline void scan_sequence(const double* u, const double* delta, const double* A, const double* B, const double* Cm,
                          std::size_t L, std::size_t C, std::size_t N, double* h, double* y, double* h_trace,
                          double* a_bar_trace, double* gain_trace) {
  for (std::size_t t = 0; t < L; ++t) {
    const double* ut = u + t * C;
    const double* dt = delta + t * C;
    const double* Bt = B + t * N;
    const double* Ct = Cm + t * N;
    for (std::size_t c = 0; c < C; ++c) {
      double* hc = h + c * N;
      const double* Ac = A + c * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double ab, g;
        zoh_lane(Ac[n], dt[c], ab, g);
        const double b = (g * Bt[n]) * ut[c];
        hc[n] = ab * hc[n] + b;
        acc += Ct[n] * hc[n];
        if (h_trace != nullptr) {
          const std::size_t k = (t * C + c) * N + n;
          h_trace[k] = hc[n];
          a_bar_trace[k] = ab;
          gain_trace[k] = g;
        }
      }
      y[t * C + c] = acc;
    }
  }
}

}  // namespace madiff::ssm::detail
