#include "madiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace madiff::diffusion {

double NoiseSchedule::raw_target(std::size_t s) const {
  return 1.0 - std::sqrt(static_cast<double>(s) / static_cast<double>(steps) + offset);
}

void NoiseSchedule::validate() const {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (beta.size() != steps + 1 || alpha_bar.size() != steps + 1)
    throw std::invalid_argument("schedule arrays must have steps + 1 entries");
  if (alpha_bar[0] != 1.0) throw std::invalid_argument("alpha_bar[0] must be 1");
  for (std::size_t s = 1; s <= steps; ++s) {
    if (!(beta[s] > 0.0 && beta[s] <= kMaxBeta))
      throw std::invalid_argument("beta[" + std::to_string(s) + "] outside (0, " + std::to_string(kMaxBeta) + "]");
    if (!(alpha_bar[s] > 0.0 && alpha_bar[s] < alpha_bar[s - 1]))
      throw std::invalid_argument("alpha_bar not strictly decreasing and positive at step " + std::to_string(s));
  }
}

NoiseSchedule build_sqrt_schedule(std::size_t steps, double offset) {
  if (steps < 1) throw std::invalid_argument("build_sqrt_schedule: steps must be at least 1");
  if (!(offset > 0.0 && offset < 1.0)) throw std::invalid_argument("build_sqrt_schedule: offset must lie in (0, 1)");
  NoiseSchedule sch;
  sch.steps = steps;
  sch.offset = offset;
  sch.beta.assign(steps + 1, 0.0);
  sch.alpha_bar.assign(steps + 1, 1.0);
  for (std::size_t s = 1; s <= steps; ++s) {
    const double b = 1.0 - sch.raw_target(s) / sch.raw_target(s - 1);
    sch.beta[s] = std::clamp(b, 0.0, kMaxBeta);
    sch.alpha_bar[s] = sch.alpha_bar[s - 1] * (1.0 - sch.beta[s]);
  }
  sch.validate();
  return sch;
}

std::vector<std::size_t> respace(std::size_t total, std::size_t count) {
  if (total < 1) throw std::invalid_argument("respace: no steps to respace");
  if (count < 1) throw std::invalid_argument("respace: empty respacing");
  if (total == 1) return {1};
  count = std::clamp<std::size_t>(count, 2, total);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = 1.0 + static_cast<double>(i) * static_cast<double>(total - 1) / static_cast<double>(count - 1);
    out.push_back(static_cast<std::size_t>(std::lround(pos)));
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  std::reverse(out.begin(), out.end());
  return out;
}

std::size_t Layout::sequences(std::size_t rows) const {
  if (length() == 0 || rows % length() != 0)
    throw std::invalid_argument(std::to_string(rows) + " rows do not split into sequences of length " +
                                std::to_string(length()));
  return rows / length();
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({rows, cols});
  for (double& v : t.values()) v = n(rng);
  return t;
}

namespace {

void check_noise(const Tensor& F, const Layout& layout, std::size_t seqs, const std::vector<std::size_t>& steps,
                 const NoiseSchedule& sch, const Tensor& noise) {
  if (steps.size() != seqs)
    throw std::invalid_argument("q_sample_partial: " + std::to_string(steps.size()) + " steps for " +
                                std::to_string(seqs) + " sequences");
  for (std::size_t s : steps)
    if (s < 1 || s > sch.steps)
      throw std::invalid_argument("q_sample_partial: step " + std::to_string(s) + " outside [1, " +
                                  std::to_string(sch.steps) + "]");
  if (noise.rows() != seqs * layout.n_future || noise.cols() != F.cols())
    throw std::invalid_argument("q_sample_partial: noise must cover the future rows");
}

// Row r of a stacked latent, mapped to its row in the future-only block.
std::size_t future_row(const Layout& layout, std::size_t r) {
  return (r / layout.length()) * layout.n_future + (r % layout.length() - layout.n_past);
}

}  // namespace

Tensor q_sample_partial(const Tensor& F, const Layout& layout, const std::vector<std::size_t>& steps,
                        const NoiseSchedule& sch, const Tensor& noise) {
  const std::size_t seqs = layout.sequences(F.rows());
  check_noise(F, layout, seqs, steps, sch, noise);
  Tensor z = F;
  const std::size_t d = F.cols();
  for (std::size_t r = 0; r < F.rows(); ++r) {
    if (!layout.is_future(r)) continue;
    const double ab = sch.alpha_bar[steps[r / layout.length()]];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    const std::size_t fr = future_row(layout, r);
    for (std::size_t c = 0; c < d; ++c) z.at(r, c) = a * F.at(r, c) + b * noise.at(fr, c);
  }
  return z;
}

Var q_sample_partial(Var F, const Layout& layout, const std::vector<std::size_t>& steps, const NoiseSchedule& sch,
                     const Tensor& noise) {
  const Tensor& f = F.value();
  const std::size_t seqs = layout.sequences(f.rows());
  check_noise(f, layout, seqs, steps, sch, noise);
  const std::size_t d = f.cols();
  Tensor coef({f.rows(), d}, 1.0), shift({f.rows(), d}), mask({f.rows(), d});
  for (std::size_t r = 0; r < f.rows(); ++r) {
    if (!layout.is_future(r)) continue;
    const double ab = sch.alpha_bar[steps[r / layout.length()]];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    const std::size_t fr = future_row(layout, r);
    for (std::size_t c = 0; c < d; ++c) {
      coef.at(r, c) = a;
      shift.at(r, c) = b * noise.at(fr, c);
      mask.at(r, c) = 1.0;
    }
  }
  dg::Graph& g = *F.graph;
  return dg::where(mask, F, F * g.constant(std::move(coef)) + g.constant(std::move(shift)));
}

PosteriorCoefficients posterior_coefficients(double ab_s, double ab_prev) {
  if (!(ab_s > 0.0 && ab_s < ab_prev && ab_prev <= 1.0))
    throw std::invalid_argument("posterior_coefficients: need 0 < alpha_bar_s < alpha_bar_prev <= 1");
  const double beta = 1.0 - ab_s / ab_prev;
  const double alpha = 1.0 - beta;
  PosteriorCoefficients c;
  c.z0 = std::sqrt(ab_prev) * beta / (1.0 - ab_s);
  c.zs = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_s);
  c.variance = beta * (1.0 - ab_prev) / (1.0 - ab_s);
  return c;
}

Tensor posterior_sample(const Tensor& z_s, const Tensor& z0_hat, const Layout& layout, double ab_s, double ab_prev,
                        bool terminal, const Tensor& noise) {
  if (!z_s.same_shape(z0_hat)) throw std::invalid_argument("posterior_sample: z_s and z0_hat differ in shape");
  const std::size_t seqs = layout.sequences(z_s.rows());
  Tensor out = z_s;
  const std::size_t d = z_s.cols();
  if (terminal) {
    for (std::size_t r = 0; r < z_s.rows(); ++r)
      if (layout.is_future(r))
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = z0_hat.at(r, c);
    return out;
  }
  if (noise.rows() != seqs * layout.n_future || noise.cols() != d)
    throw std::invalid_argument("posterior_sample: noise must cover the future rows");
  const auto k = posterior_coefficients(ab_s, ab_prev);
  const double sd = std::sqrt(k.variance);
  for (std::size_t r = 0; r < z_s.rows(); ++r) {
    if (!layout.is_future(r)) continue;
    const std::size_t fr = future_row(layout, r);
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = k.z0 * z0_hat.at(r, c) + k.zs * z_s.at(r, c) + sd * noise.at(fr, c);
  }
  return out;
}

geo::Point2 quantize_to_pixels(geo::Point2 p, int width, int height, std::size_t* clamped) {
  if (width < 1 || height < 1) throw std::invalid_argument("quantize_to_pixels: canvas must be nonempty");
  auto one = [&](double x, int n) {
    double q = std::round(x * n) / n;
    if (q < 0.0 || q > 1.0 || !std::isfinite(q)) {
      if (clamped) ++*clamped;
      q = std::isfinite(q) ? std::clamp(q, 0.0, 1.0) : 0.5;
    }
    return q;
  };
  return {one(p.u, width), one(p.v, height)};
}

namespace {

Tensor future_noise(const Layout& layout, std::size_t d, std::vector<Rng>& rngs) {
  Tensor noise({rngs.size() * layout.n_future, d});
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t q = 0; q < rngs.size(); ++q)
    for (std::size_t k = 0; k < layout.n_future * d; ++k) noise[q * layout.n_future * d + k] = n(rngs[q]);
  return noise;
}

void anchor_past(Tensor& z, const Tensor& past, const Layout& layout) {
  const std::size_t d = z.cols();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (layout.is_future(r)) continue;
    const std::size_t pr = (r / layout.length()) * layout.n_past + r % layout.length();
    for (std::size_t c = 0; c < d; ++c) z.at(r, c) = past.at(pr, c);
  }
}

}  // namespace

Tensor sample(const Tensor& past, const Layout& layout, const NoiseSchedule& sch,
              const std::vector<std::size_t>& step_sequence, const DenoiseFn& denoise, const RefineFn& refine,
              std::vector<Rng>& rngs, SampleTrace* trace) {
  if (step_sequence.empty()) throw std::invalid_argument("sample: empty respacing");
  for (std::size_t i = 0; i < step_sequence.size(); ++i) {
    if (step_sequence[i] < 1 || step_sequence[i] > sch.steps)
      throw std::invalid_argument("sample: step " + std::to_string(step_sequence[i]) + " outside the schedule");
    if (i > 0 && step_sequence[i] >= step_sequence[i - 1])
      throw std::invalid_argument("sample: steps must be strictly decreasing");
  }
  if (step_sequence.back() != 1) throw std::invalid_argument("sample: respacing must end at step 1");
  const std::size_t seqs = rngs.size();
  if (seqs == 0 || past.rows() != seqs * layout.n_past)
    throw std::invalid_argument("sample: past rows must hold n_past rows for each generator");
  const std::size_t d = past.cols();

  Tensor z({seqs * layout.length(), d});
  const Tensor init = future_noise(layout, d, rngs);
  for (std::size_t r = 0; r < z.rows(); ++r)
    if (layout.is_future(r))
      for (std::size_t c = 0; c < d; ++c) z.at(r, c) = init.at(future_row(layout, r), c);
  anchor_past(z, past, layout);

  for (std::size_t i = 0; i < step_sequence.size(); ++i) {
    const std::size_t s = step_sequence[i];
    const std::size_t prev = i + 1 < step_sequence.size() ? step_sequence[i + 1] : 0;
    Tensor z0 = denoise(z, s);
    if (!z0.same_shape(z)) throw std::invalid_argument("sample: denoiser changed the latent shape");
    anchor_past(z0, past, layout);
    if (refine) {
      z0 = refine(z0);
      anchor_past(z0, past, layout);
    }
    const bool terminal = prev == 0;
    const Tensor noise = terminal ? Tensor() : future_noise(layout, d, rngs);
    z = posterior_sample(z, z0, layout, sch.alpha_bar[s], sch.alpha_bar[prev], terminal, noise);
    if (trace) {
      trace->steps.push_back(s);
      trace->states.push_back(z);
    }
  }
  return z;
}

}  // namespace madiff::diffusion
