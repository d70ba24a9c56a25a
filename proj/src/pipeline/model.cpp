#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "madiff/pipeline.hpp"

namespace madiff::pipeline {

constexpr double kTokenEps = 1e-6;

// ------------------------------------------------------------------ data

std::vector<double> SyntheticSemanticProvider::features(const synth::Scenario& s, std::size_t frame) const {
  if (frame >= s.semantic.size())
    throw std::out_of_range("semantic features requested for frame " + std::to_string(frame) + " of " +
                            std::to_string(s.semantic.size()));
  return s.semantic[frame];
}

std::array<double, 9> homography_input(const geo::Homography& H) {
  const double h33 = H.m(2, 2);
  if (h33 == 0.0) throw std::invalid_argument("homography with h33 = 0 cannot be normalized");
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(3 * r + c)] = H.m(r, c) / h33 - (r == c ? 1.0 : 0.0);
  return out;
}

Example make_example(const synth::Scenario& s, const SemanticProvider& provider, const DataOptions& options) {
  Example e;
  e.id = s.id;
  e.archetype = synth::to_string(s.archetype);
  e.egomotion_heavy = s.egomotion_heavy;
  e.waypoints = s.waypoints;
  e.affordance = s.affordance;
  e.n_past = s.n_past;
  for (std::size_t f = 0; f < s.frames(); ++f) e.semantic.push_back(provider.features(s, f));
  if (options.homographies == HomographySource::exact) {
    e.to_canvas = s.to_canvas;
  } else {
    for (std::size_t f = 0; f < s.frames(); ++f) {
      if (f == s.canvas_index) {
        e.to_canvas.push_back(geo::Homography::identity());
        continue;
      }
      geo::RansacOptions ro;
      ro.seed = synth::splitmix64(options.ransac_seed ^ synth::splitmix64(s.seed + f));
      e.to_canvas.push_back(geo::ransac_homography(s.canvas_pairs[f], ro).H);
    }
  }
  return e;
}

std::vector<Example> make_examples(const std::vector<const synth::Scenario*>& scenarios,
                                   const SemanticProvider& provider, const DataOptions& options) {
  std::vector<Example> out(scenarios.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(scenarios.size()); ++i) {
    try {
      out[static_cast<std::size_t>(i)] = make_example(*scenarios[static_cast<std::size_t>(i)], provider, options);
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = scenarios[static_cast<std::size_t>(i)]->id + ": " + e.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return out;
}

namespace {

void check_example(const Example& e, const ModelConfig& c) {
  if (e.n_past != c.n_past || e.frames() != c.length())
    throw std::invalid_argument("example " + e.id + " has " + std::to_string(e.n_past) + "+" +
                                std::to_string(e.frames() - e.n_past) + " frames; the model expects " +
                                std::to_string(c.n_past) + "+" + std::to_string(c.n_future));
  if (e.semantic.size() != e.frames() || e.to_canvas.size() != e.frames())
    throw std::invalid_argument("example " + e.id + " has inconsistent per-frame arrays");
  for (const auto& v : e.semantic)
    if (v.size() != c.d_sem)
      throw std::invalid_argument("example " + e.id + " has semantic width " + std::to_string(v.size()) +
                                  "; the model expects " + std::to_string(c.d_sem));
  for (const auto& p : e.waypoints)
    if (!(p.u >= 0.0 && p.u <= 1.0 && p.v >= 0.0 && p.v <= 1.0))
      throw std::invalid_argument("example " + e.id + " has a waypoint outside [0,1]^2");
}

void put_row(Tensor& t, std::size_t r, const std::vector<double>& v) {
  for (std::size_t c = 0; c < v.size(); ++c) t.at(r, c) = v[c];
}

void put_row(Tensor& t, std::size_t r, const std::array<double, 9>& v) {
  for (std::size_t c = 0; c < v.size(); ++c) t.at(r, c) = v[c];
}

}  // namespace

Batch make_batch(const std::vector<const Example*>& examples, const ModelConfig& c, FutureMotion future_motion) {
  const std::size_t B = examples.size(), T = c.length();
  Batch b;
  b.waypoints = Tensor({B * T, 2});
  b.semantic = Tensor({B * T, c.d_sem});
  b.homography = Tensor({B * T, 9});
  b.future_gt = Tensor({B * c.n_future, 2});
  b.last_observed = Tensor({B, 2});
  for (std::size_t i = 0; i < B; ++i) {
    const Example& e = *examples[i];
    check_example(e, c);
    const auto m0 = homography_input(e.to_canvas[c.n_past - 1]);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t r = i * T + t;
      b.waypoints.at(r, 0) = e.waypoints[t].u;
      b.waypoints.at(r, 1) = e.waypoints[t].v;
      if (t < c.n_past || c.future_semantic == FutureSemantic::tile_last)
        put_row(b.semantic, r, e.semantic[std::min(t, c.n_past - 1)]);
      const bool tile = t >= c.n_past && future_motion == FutureMotion::tile_last;
      put_row(b.homography, r, tile ? m0 : homography_input(e.to_canvas[t]));
      if (t >= c.n_past) {
        const std::size_t fr = i * c.n_future + (t - c.n_past);
        b.future_gt.at(fr, 0) = e.waypoints[t].u;
        b.future_gt.at(fr, 1) = e.waypoints[t].v;
      }
    }
    b.last_observed.at(i, 0) = e.waypoints[c.n_past - 1].u;
    b.last_observed.at(i, 1) = e.waypoints[c.n_past - 1].v;
  }
  return b;
}

// ----------------------------------------------------------------- model

std::vector<double> step_embedding(std::size_t step, std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(step) * freq);
    e[half + i] = std::cos(static_cast<double>(step) * freq);
  }
  return e;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  schedule_ = diffusion::build_sqrt_schedule(config_.diffusion_steps, config_.schedule_offset);
  nn::Rng rng(seed);
  const std::size_t d = config_.d_model, dm = config_.d_motion;
  traj_enc_ = nn::Mlp(params_, "traj_enc", {2, d, d}, rng);
  sem_proj_ = nn::Linear(params_, "sem_proj", config_.d_sem, d, rng);
  fusion_ = nn::Mlp(params_, "fusion", {2 * d, d, d}, rng);
  hom_enc_ = nn::Mlp(params_, "hom_enc", {9, dm, dm}, rng);
  if (config_.motion == MotionMode::fused_input) motion_fuse_ = nn::Linear(params_, "motion_fuse", dm, d, rng);
  Tensor pos({config_.length(), d});
  std::normal_distribution<double> small(0.0, 0.02);
  for (double& v : pos.values()) v = small(rng);
  position_ = &params_.add("position", std::move(pos));
  step_mlp_ = nn::Mlp(params_, "step_mlp", {d, d, d}, rng);
  const auto mix = config_.motion == MotionMode::sum ? ssm::MotionMix::sum : ssm::MotionMix::concat;
  for (std::size_t i = 0; i < config_.blocks; ++i)
    blocks_.emplace_back(params_, "block" + std::to_string(i), config_.ssm_dims(), mix, config_.scan, rng);
  if (config_.blocks == 0) mlp_denoiser_ = nn::Mlp(params_, "mlp_denoiser", {d + dm, d, d}, rng);
  decoder_ = nn::Mlp(params_, "decoder", {d, d, 2}, rng);
}

Var Model::encode_trajectory(Var waypoints) const {
  if (waypoints.cols() != 2) throw std::invalid_argument("encode_trajectory expects [rows x 2] waypoints");
  for (double v : waypoints.value().values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("encode_trajectory: coordinate outside [0,1]");
  return traj_enc_(waypoints);
}

Var Model::decode_trajectory(Var latents) const { return dg::sigmoid(decoder_(latents)); }

Var Model::encode_homography(Var inputs) const {
  if (inputs.cols() != 9) throw std::invalid_argument("encode_homography expects [rows x 9] inputs");
  return hom_enc_(inputs);
}

Var Model::fuse_tokens(Var semantic, Var trajectory_features) const {
  if (semantic.rows() != trajectory_features.rows())
    throw std::invalid_argument("fuse_tokens: " + std::to_string(semantic.rows()) + " semantic rows vs " +
                                std::to_string(trajectory_features.rows()) + " trajectory rows");
  return fusion_(dg::concat_cols({sem_proj_(semantic), trajectory_features}));
}

namespace {

// Rows rescaled to unit root-mean-square, matching the scale of the noise.
Var rms_normalize(Var x) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const Var rms = dg::add_scalar(dg::scale(dg::row_norm(x), inv_sqrt_d), kTokenEps);
  return x / dg::broadcast_to(rms, x.rows(), x.cols());
}

}  // namespace

Model::Tokens Model::tokenize(Var waypoints, Var semantic, Var homography_inputs) const {
  Tokens t;
  t.F = fuse_tokens(semantic, encode_trajectory(waypoints));
  dg::Graph& g = *waypoints.graph;
  switch (config_.motion) {
    case MotionMode::concat:
    case MotionMode::sum:
      t.motion = encode_homography(homography_inputs);
      break;
    case MotionMode::fused_input:
      t.F = t.F + motion_fuse_(encode_homography(homography_inputs));
      t.motion = g.constant(Tensor({waypoints.rows(), config_.d_motion}));
      break;
    case MotionMode::none:
      t.motion = g.constant(Tensor({waypoints.rows(), config_.d_motion}));
      break;
  }
  t.F = rms_normalize(t.F);
  return t;
}

Var Model::denoise(Var z_s, const std::vector<std::size_t>& steps, Var motion, DenoiseTrace* trace) const {
  const std::size_t T = config_.length(), d = config_.d_model, dm = config_.d_motion;
  const std::size_t rows = z_s.rows();
  if (z_s.cols() != d || rows % T != 0)
    throw std::invalid_argument("denoise: latents must be [k*" + std::to_string(T) + " x " + std::to_string(d) + "]");
  if (motion.rows() != rows || motion.cols() != dm) throw std::invalid_argument("denoise: motion shape mismatch");
  const std::size_t seqs = rows / T;
  if (steps.size() != seqs) throw std::invalid_argument("denoise: one step per sequence required");
  dg::Graph& g = *z_s.graph;

  Tensor emb({seqs, d});
  for (std::size_t q = 0; q < seqs; ++q) {
    if (steps[q] < 1 || steps[q] > config_.diffusion_steps)
      throw std::invalid_argument("denoise: step " + std::to_string(steps[q]) + " outside [1, " +
                                  std::to_string(config_.diffusion_steps) + "]");
    const auto e = step_embedding(steps[q], d);
    for (std::size_t c = 0; c < d; ++c) emb.at(q, c) = e[c];
  }
  std::vector<std::size_t> seq_of(rows), pos_of(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    seq_of[r] = r / T;
    pos_of[r] = r % T;
  }
  const Var cond = dg::gather_rows(g.param(*position_), pos_of) +
                   dg::gather_rows(step_mlp_(g.constant(std::move(emb))), seq_of);

  Tensor update({rows, d + dm}, 1.0);
  for (std::size_t r = 0; r < rows; ++r)
    if (pos_of[r] < config_.n_past)
      for (std::size_t c = 0; c < d; ++c) update.at(r, c) = 0.0;

  const Var input = dg::concat_cols({z_s, motion});
  if (blocks_.empty()) {
    const Var out = z_s + mlp_denoiser_(dg::concat_cols({z_s + cond, motion}));
    return dg::slice_cols(dg::where(update, input, dg::concat_cols({out, motion})), 0, d);
  }
  Var stream = input;
  for (const auto& block : blocks_) {
    stream = dg::where(update, input, block.forward(stream, cond, T));
    if (trace) trace->streams.push_back(stream.value());
  }
  return dg::slice_cols(stream, 0, d);
}

void Model::zero_output_projections() {
  for (auto& b : blocks_) b.zero_output_projection();
}

// ---------------------------------------------------------------- losses

LossOutput batch_loss(const Model& model, dg::Graph& g, const Batch& batch, const std::vector<std::size_t>& steps,
                      const Tensor& noise, bool with_prior, const Tensor& prior_noise) {
  const ModelConfig& c = model.config();
  const auto layout = model.layout();
  const auto tok = model.tokenize(g.constant(batch.waypoints), g.constant(batch.semantic), g.constant(batch.homography));
  const Var z_s = diffusion::q_sample_partial(tok.F, layout, steps, model.schedule(), noise);
  const Var z0 = model.denoise(z_s, steps, tok.motion);

  std::vector<std::size_t> future;
  for (std::size_t r = 0; r < batch.waypoints.rows(); ++r)
    if (layout.is_future(r)) future.push_back(r);
  const Var z0f = dg::gather_rows(z0, future);
  const Var Ff = dg::gather_rows(tok.F, future);

  std::optional<losses::PriorTerm> prior;
  if (with_prior) {
    const std::vector<std::size_t> ones(steps.size(), 1);
    const Var z1 = diffusion::q_sample_partial(tok.F, layout, ones, model.schedule(), prior_noise);
    prior = losses::PriorTerm{dg::gather_rows(model.denoise(z1, ones, tok.motion), future), Ff};
  }
  const Var gt = g.constant(batch.future_gt);
  const Var h0 = g.constant(batch.last_observed);
  const Var pred = model.decode_trajectory(z0f);
  losses::LossTerms terms;
  terms.vlb = losses::vlb_loss(z0f, Ff, prior);
  terms.dis = losses::displacement_loss(pred, gt);
  terms.reg = losses::regularization_loss(model.decode_trajectory(Ff), gt);
  terms.angle = losses::angle_loss(pred, gt, h0, c.n_future);
  terms.len = losses::length_loss(pred, gt, h0, c.n_future);
  return {losses::total_loss(terms, c.weights), z0};
}

}  // namespace madiff::pipeline
