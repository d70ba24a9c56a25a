#pragma once

// Partial-noising latent diffusion. Latents are stacked sequences of
// `length = n_past + n_future` rows; only the future rows of each sequence
// are ever noised or resampled.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "madiff/diffgraph.hpp"
#include "madiff/geometry.hpp"

namespace madiff::diffusion {

using dg::Tensor;
using dg::Var;
using Rng = std::mt19937_64;

// Arrays are indexed by step: alpha_bar[0] = 1 is the clean state and
// beta[0] = 0; steps 1..steps are the noising steps.
struct NoiseSchedule {
  std::size_t steps = 0;
  double offset = 1e-4;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  // 1 - sqrt(s / steps + offset), before clamping.
  double raw_target(std::size_t s) const;
  void validate() const;  // throws std::invalid_argument
};

inline constexpr double kMaxBeta = 0.999;

NoiseSchedule build_sqrt_schedule(std::size_t steps, double offset = 1e-4);

// `count` (at least 2) evenly spaced steps of 1..total in decreasing order, always
// containing total and 1.
std::vector<std::size_t> respace(std::size_t total, std::size_t count);

struct Layout {
  std::size_t n_past = 0;
  std::size_t n_future = 0;
  std::size_t length() const { return n_past + n_future; }
  bool is_future(std::size_t row) const { return row % length() >= n_past; }
  // Number of whole sequences in `rows`; throws if rows is not a multiple.
  std::size_t sequences(std::size_t rows) const;
};

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

// z_s: future rows <- sqrt(ab_s) F + sqrt(1 - ab_s) noise, past rows <- F.
// `steps` holds one step per sequence; noise has the future-rows shape
// [sequences * n_future x d].
Tensor q_sample_partial(const Tensor& F, const Layout& layout, const std::vector<std::size_t>& steps,
                        const NoiseSchedule& schedule, const Tensor& noise);
// Same map on the graph; gradients reach F.
Var q_sample_partial(Var F, const Layout& layout, const std::vector<std::size_t>& steps,
                     const NoiseSchedule& schedule, const Tensor& noise);

// q(z_prev | z_s, z0) for the two cumulative products bracketing a step.
struct PosteriorCoefficients {
  double z0 = 0.0;
  double zs = 0.0;
  double variance = 0.0;
};
PosteriorCoefficients posterior_coefficients(double alpha_bar_s, double alpha_bar_prev);

// Resamples the future rows; past rows are copied from z_s. With
// `terminal` the future rows of z0_hat are returned unchanged.
Tensor posterior_sample(const Tensor& z_s, const Tensor& z0_hat, const Layout& layout, double alpha_bar_s,
                        double alpha_bar_prev, bool terminal, const Tensor& noise);

// Rounds to the pixel grid of a width x height canvas; points outside
// [0,1]^2 are clamped to the border and counted in *clamped.
geo::Point2 quantize_to_pixels(geo::Point2 p, int width, int height, std::size_t* clamped = nullptr);

// Returns the predicted clean latents for all rows of z at step s.
using DenoiseFn = std::function<Tensor(const Tensor& z, std::size_t s)>;
// Replaces the future rows of a clean-latent estimate.
using RefineFn = std::function<Tensor(const Tensor& z0_hat)>;

struct SampleTrace {
  std::vector<std::size_t> steps;
  std::vector<Tensor> states;  // z after each reverse step
};

// Reverse process from z_S = [F_past; noise]. `past` is [sequences *
// n_past x d]; each sequence draws its noise from its own generator.
// Returns the final latents [sequences * length x d].
Tensor sample(const Tensor& past, const Layout& layout, const NoiseSchedule& schedule,
              const std::vector<std::size_t>& step_sequence, const DenoiseFn& denoise, const RefineFn& refine,
              std::vector<Rng>& rngs, SampleTrace* trace = nullptr);

}  // namespace madiff::diffusion
