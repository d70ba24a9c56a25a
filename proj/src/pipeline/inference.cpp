#include <algorithm>
#include <stdexcept>

#include "madiff/pipeline.hpp"

namespace madiff::pipeline {

namespace {

// Per-frame inputs for one example. Future waypoints are placeholders (the
// last observed point); future motion inputs tile the last observed frame.
struct Inputs {
  Tensor waypoints, semantic, homography;
};

Inputs observed_inputs(const Example& e, const ModelConfig& c) {
  if (e.n_past != c.n_past || e.frames() < c.n_past || e.semantic.size() < c.n_past || e.to_canvas.size() < c.n_past)
    throw std::invalid_argument("example " + e.id + " does not match the model's observation window");
  const std::size_t T = c.length();
  Inputs in{Tensor({T, 2}), Tensor({T, c.d_sem}), Tensor({T, 9})};
  const auto m0 = homography_input(e.to_canvas[c.n_past - 1]);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t src = std::min(t, c.n_past - 1);
    in.waypoints.at(t, 0) = e.waypoints[src].u;
    in.waypoints.at(t, 1) = e.waypoints[src].v;
    const auto& sem = e.semantic[src];
    if (sem.size() != c.d_sem) throw std::invalid_argument("example " + e.id + " has the wrong semantic width");
    if (t < c.n_past || c.future_semantic == FutureSemantic::tile_last)
      for (std::size_t k = 0; k < c.d_sem; ++k) in.semantic.at(t, k) = sem[k];
    const auto h = t < c.n_past ? homography_input(e.to_canvas[t]) : m0;
    for (std::size_t k = 0; k < 9; ++k) in.homography.at(t, k) = h[k];
  }
  return in;
}

Tensor tile(const Tensor& t, std::size_t times) {
  Tensor out({t.rows() * times, t.cols()});
  for (std::size_t i = 0; i < times; ++i)
    std::copy(t.values().begin(), t.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * t.size()));
  return out;
}

}  // namespace

std::vector<metrics::Trajectory> predict(const Model& model, const Example& example, const InferenceOptions& options) {
  const ModelConfig& c = model.config();
  if (options.samples == 0) throw std::invalid_argument("predict: samples must be positive");
  const std::size_t M = options.samples, T = c.length(), d = c.d_model;
  const auto layout = model.layout();
  const Inputs in = observed_inputs(example, c);

  dg::Graph g0;
  g0.set_grad_enabled(false);
  const auto tok = model.tokenize(g0.constant(in.waypoints), g0.constant(in.semantic), g0.constant(in.homography));
  Tensor f_past({c.n_past, d});
  std::copy_n(tok.F.value().values().begin(), c.n_past * d, f_past.values().begin());
  const Tensor past = tile(f_past, M);
  const Tensor motion = tile(tok.motion.value(), M);
  const Tensor semantic = tile(in.semantic, M);
  const Tensor homography = tile(in.homography, M);
  const Tensor waypoints = tile(in.waypoints, M);

  std::vector<diffusion::Rng> rngs;
  for (std::size_t i = 0; i < M; ++i) rngs.emplace_back(synth::splitmix64(options.seed ^ synth::splitmix64(i + 1)));

  const diffusion::DenoiseFn denoise = [&](const Tensor& z, std::size_t s) {
    dg::Graph g;
    g.set_grad_enabled(false);
    DenoiseTrace tr;
    const Var out = model.denoise(g.constant(z), std::vector<std::size_t>(M, s), g.constant(motion),
                                  options.denoise_traces ? &tr : nullptr);
    if (options.denoise_traces) options.denoise_traces->push_back(std::move(tr));
    return out.value();
  };

  auto decode_future = [&](dg::Graph& g, const Tensor& z) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < z.rows(); ++r)
      if (layout.is_future(r)) rows.push_back(r);
    return model.decode_trajectory(dg::gather_rows(g.constant(z), rows)).value();
  };

  diffusion::RefineFn refine;
  if (c.cdc) {
    refine = [&](const Tensor& z0) {
      dg::Graph g;
      g.set_grad_enabled(false);
      const Tensor dec = decode_future(g, z0);
      Tensor wp = waypoints;
      for (std::size_t q = 0, k = 0; q < M; ++q)
        for (std::size_t j = 0; j < c.n_future; ++j, ++k) {
          const auto p = diffusion::quantize_to_pixels({dec.at(k, 0), dec.at(k, 1)}, c.width, c.height, options.clamped);
          wp.at(q * T + c.n_past + j, 0) = p.u;
          wp.at(q * T + c.n_past + j, 1) = p.v;
        }
      const auto t = model.tokenize(g.constant(wp), g.constant(semantic), g.constant(homography));
      Tensor out = z0;
      for (std::size_t r = 0; r < out.rows(); ++r)
        if (layout.is_future(r))
          for (std::size_t k = 0; k < d; ++k) out.at(r, k) = t.F.value().at(r, k);
      return out;
    };
  }

  const auto steps = diffusion::respace(c.diffusion_steps, c.inference_steps);
  const Tensor z = diffusion::sample(past, layout, model.schedule(), steps, denoise, refine, rngs, options.trace);

  dg::Graph g;
  g.set_grad_enabled(false);
  const Tensor dec = decode_future(g, z);
  std::vector<metrics::Trajectory> out(M);
  for (std::size_t q = 0, k = 0; q < M; ++q)
    for (std::size_t j = 0; j < c.n_future; ++j, ++k) out[q].push_back({dec.at(k, 0), dec.at(k, 1)});
  return out;
}

metrics::Trajectory constant_velocity(const Example& e, std::size_t n_future) {
  if (e.n_past < 2 || e.waypoints.size() < e.n_past)
    throw std::invalid_argument("constant_velocity needs at least two observed frames");
  const auto& a = e.waypoints[e.n_past - 2];
  const auto& b = e.waypoints[e.n_past - 1];
  metrics::Trajectory out;
  for (std::size_t j = 1; j <= n_future; ++j) {
    const double s = static_cast<double>(j);
    out.push_back({std::clamp(b.u + s * (b.u - a.u), 0.0, 1.0), std::clamp(b.v + s * (b.v - a.v), 0.0, 1.0)});
  }
  return out;
}

metrics::Trajectory future_of(const Example& e) {
  return {e.waypoints.begin() + static_cast<std::ptrdiff_t>(e.n_past), e.waypoints.end()};
}

metrics::MetricReport evaluate(const Model& model, const std::vector<Example>& data, std::size_t samples,
                               std::uint64_t seed, const metrics::EvalOptions& options) {
  std::vector<metrics::SequenceResult> results(data.size());
  std::vector<std::uint64_t> seeds(data.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) {
    const auto& e = data[static_cast<std::size_t>(i)];
    try {
      InferenceOptions io;
      io.samples = samples;
      io.seed = synth::splitmix64(seed ^ synth::splitmix64(static_cast<std::uint64_t>(i) + 0x9e37ULL));
      seeds[static_cast<std::size_t>(i)] = io.seed;
      auto r = metrics::evaluate_sequence(predict(model, e, io), future_of(e), e.affordance, options);
      r.id = e.id;
      r.archetype = e.archetype;
      r.egomotion_heavy = e.egomotion_heavy;
      results[static_cast<std::size_t>(i)] = std::move(r);
    } catch (const std::exception& ex) {
#pragma omp critical
      if (failure.empty()) failure = e.id + ": " + ex.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return metrics::make_report(std::move(results), samples, std::move(seeds));
}

metrics::MetricReport evaluate_constant_velocity(const std::vector<Example>& data, const metrics::EvalOptions& options) {
  std::vector<metrics::SequenceResult> results;
  for (const auto& e : data) {
    const auto fut = future_of(e);
    auto r = metrics::evaluate_sequence({constant_velocity(e, fut.size())}, fut, e.affordance, options);
    r.id = e.id;
    r.archetype = e.archetype;
    r.egomotion_heavy = e.egomotion_heavy;
    results.push_back(std::move(r));
  }
  return metrics::make_report(std::move(results), 1, {});
}

}  // namespace madiff::pipeline
