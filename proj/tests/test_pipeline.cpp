#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "madiff/pipeline.hpp"
#include "support/gradcheck.hpp"

using namespace madiff;
using dg::Graph;
using dg::Tensor;
using dg::Var;
using pipeline::Example;
using pipeline::Model;
using pipeline::ModelConfig;

namespace {

synth::SynthConfig small_synth(std::size_t n_past, std::size_t n_future) {
  synth::SynthConfig c;
  c.n_past = n_past;
  c.n_future = n_future;
  c.d_sem = 8;
  return c;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 6;
  c.d_sem = 8;
  c.d_motion = 3;
  c.d_state = 3;
  c.blocks = 2;
  c.diffusion_steps = 10;
  c.inference_steps = 4;
  c.n_past = 3;
  c.n_future = 2;
  return c;
}

std::vector<Example> examples_for(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  auto sc = small_synth(c.n_past, c.n_future);
  sc.d_sem = c.d_sem;
  const auto ds = synth::generate_dataset(n, {1.0, 0.0, 0.0}, sc, seed);
  return pipeline::make_examples(ds.split("train"), pipeline::SyntheticSemanticProvider{});
}

std::vector<const Example*> pointers(const std::vector<Example>& v) {
  std::vector<const Example*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

geo::Homography translation(double du, double dv) {
  geo::Homography H;
  H.m(0, 2) = du;
  H.m(1, 2) = dv;
  return H;
}

// One fixed diffusion draw for a batch.
struct Draw {
  std::vector<std::size_t> steps;
  Tensor noise, prior_noise;
};

Draw make_draw(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
  diffusion::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> step(1, c.diffusion_steps);
  Draw d;
  for (std::size_t i = 0; i < batch; ++i) d.steps.push_back(step(rng));
  d.noise = diffusion::standard_normal(batch * c.n_future, c.d_model, rng);
  d.prior_noise = diffusion::standard_normal(batch * c.n_future, c.d_model, rng);
  return d;
}

}  // namespace

// -------------------------------------------------------------- inputs

TEST(HomographyInput, IdentityIsZero) {
  for (double v : pipeline::homography_input(geo::Homography::identity())) EXPECT_EQ(v, 0.0);
}

TEST(HomographyInput, TranslationHasTwoNonzeros) {
  const auto in = pipeline::homography_input(translation(1.0 / 512, 2.0 / 384));
  int nonzero = 0;
  for (double v : in) nonzero += v != 0.0;
  EXPECT_EQ(nonzero, 2);
  EXPECT_EQ(in[2], 1.0 / 512);
  EXPECT_EQ(in[5], 2.0 / 384);
}

TEST(HomographyInput, NormalizesByCornerAndRejectsZeroCorner) {
  geo::Homography H = translation(0.1, -0.2);
  H.m(0, 1) = 0.05;
  geo::Homography scaled = H;
  scaled.m *= 4.0;
  EXPECT_EQ(pipeline::homography_input(H), pipeline::homography_input(scaled));
  geo::Homography bad;
  bad.m(2, 2) = 0.0;
  EXPECT_THROW(pipeline::homography_input(bad), std::invalid_argument);
}

TEST(HomographyInput, DistinctMapsGiveDistinctInputs) {
  EXPECT_NE(pipeline::homography_input(translation(0.1, 0.0)), pipeline::homography_input(translation(0.0, 0.1)));
}

// ------------------------------------------------------------- encoders

TEST(Encoders, TrajectoryEncoderIsPerRow) {
  Model m(tiny_config(), 1);
  Graph g;
  const Var f = m.encode_trajectory(g.constant(Tensor({3, 2}, {0.3, 0.7, 0.1, 0.2, 0.3, 0.7})));
  ASSERT_EQ(f.rows(), 3u);
  ASSERT_EQ(f.cols(), 6u);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(f.value().at(0, c), f.value().at(2, c));
}

TEST(Encoders, TrajectoryEncoderRejectsOutOfRange) {
  Model m(tiny_config(), 1);
  Graph g;
  EXPECT_THROW(m.encode_trajectory(g.constant(Tensor({1, 2}, {0.5, 1.01}))), std::invalid_argument);
  EXPECT_THROW(m.encode_trajectory(g.constant(Tensor({1, 2}, {-1e-9, 0.5}))), std::invalid_argument);
  EXPECT_THROW(m.encode_trajectory(g.constant(Tensor({1, 3}))), std::invalid_argument);
}

TEST(Encoders, DecoderOutputsLieInUnitSquare) {
  Model m(tiny_config(), 2);
  std::mt19937_64 rng(3);
  Graph g;
  const Tensor lat = oracle::random_tensor({50, 6}, rng, -200.0, 200.0);
  const Var out = m.decode_trajectory(g.constant(lat));
  for (double v : out.value().values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  Graph g2;
  EXPECT_EQ(m.decode_trajectory(g2.constant(lat)).value().storage(), out.value().storage());
}

TEST(Encoders, FusionOfZerosIsConstantToken) {
  Model m(tiny_config(), 4);
  Graph g;
  const Var t = m.fuse_tokens(g.constant(Tensor({4, 8})), g.constant(Tensor({4, 6})));
  ASSERT_EQ(t.rows(), 4u);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(t.value().at(r, c), t.value().at(0, c));
  EXPECT_THROW(m.fuse_tokens(g.constant(Tensor({3, 8})), g.constant(Tensor({4, 6}))), std::invalid_argument);
}

TEST(Encoders, StepEmbeddingSeparatesSteps) {
  EXPECT_NE(pipeline::step_embedding(3, 8), pipeline::step_embedding(4, 8));
  EXPECT_EQ(pipeline::step_embedding(0, 4), (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

// ------------------------------------------------------------ gradients

// Losses of order 10 put central-difference round-off near 1e-9 at h = 1e-6,
// so the step is raised to 1e-5 where truncation is still below 1e-10.
constexpr double kStep = 1e-5;

TEST(Gradients, ComponentsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m(tiny_config(), seed);
    std::mt19937_64 rng(seed + 100);
    const Tensor wp = oracle::random_tensor({4, 2}, rng, 0.05, 0.95);
    const Tensor sem = oracle::random_tensor({4, 8}, rng);
    const Tensor hom = oracle::random_tensor({4, 9}, rng, -0.2, 0.2);
    const Tensor lat = oracle::random_tensor({4, 6}, rng);
    const Tensor w = oracle::random_tensor({4, 6}, rng);
    const Tensor w2 = oracle::random_tensor({4, 2}, rng);
    const Tensor w3 = oracle::random_tensor({4, 3}, rng);
    auto weighted = [](Var v, const Tensor& wt) { return dg::sum(v * v.graph->constant(wt)); };

    const auto enc = oracle::check_parameter_gradients(
        m.params(), [&](Graph& g) { return weighted(m.encode_trajectory(g.constant(wp)), w); }, kStep);
    const auto dec = oracle::check_parameter_gradients(
        m.params(), [&](Graph& g) { return weighted(m.decode_trajectory(g.constant(lat)), w2); }, kStep);
    const auto hen = oracle::check_parameter_gradients(
        m.params(), [&](Graph& g) { return weighted(m.encode_homography(g.constant(hom)), w3); }, kStep);
    const auto fus = oracle::check_input_gradients(
        [&](Graph&, const std::vector<Var>& in) { return weighted(m.fuse_tokens(in[0], in[1]), w); }, {sem, lat}, kStep);
    const auto fus_p = oracle::check_parameter_gradients(
        m.params(), [&](Graph& g) { return weighted(m.fuse_tokens(g.constant(sem), g.constant(lat)), w); }, kStep);
    for (const auto& r : {enc, dec, hen, fus, fus_p}) EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed;
  }
}

TEST(Gradients, EndToEndLossMatchesFiniteDifferences) {
  const auto data = examples_for(tiny_config(), 20, 9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (auto motion : {pipeline::MotionMode::concat, pipeline::MotionMode::fused_input}) {
      ModelConfig c = tiny_config();
      c.motion = motion;
      c.blocks = seed % 3 == 2 ? 0 : 2;
      Model m(c, seed);
      const std::vector<const Example*> items{&data[seed % data.size()], &data[(seed + 7) % data.size()]};
      const auto batch = pipeline::make_batch(items, c);
      const Draw d = make_draw(c, 2, seed);
      const auto r = oracle::check_parameter_gradients(m.params(), [&](Graph& g) {
        return pipeline::batch_loss(m, g, batch, d.steps, d.noise, seed % 2 == 0, d.prior_noise).total.total;
      }, kStep);
      EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed << " motion " << pipeline::to_string(motion) << " abs " << r.max_abs_error;
    }
  }
}

// -------------------------------------------------------------- denoiser

TEST(Denoiser, ZeroOutputProjectionsGiveIdentity) {
  ModelConfig c = tiny_config();
  Model m(c, 5);
  m.zero_output_projections();
  std::mt19937_64 rng(6);
  Graph g;
  const Tensor z = oracle::random_tensor({10, 6}, rng);
  const Var out = m.denoise(g.constant(z), {3, 7}, g.constant(oracle::random_tensor({10, 3}, rng)));
  EXPECT_EQ(out.value().storage(), z.storage());
}

TEST(Denoiser, PastRowsAndMotionAnchoredAfterEveryBlock) {
  ModelConfig c = tiny_config();
  c.blocks = 3;
  Model m(c, 7);
  std::mt19937_64 rng(8);
  Graph g;
  const Tensor z = oracle::random_tensor({10, 6}, rng);
  const Tensor mo = oracle::random_tensor({10, 3}, rng);
  pipeline::DenoiseTrace tr;
  const Var out = m.denoise(g.constant(z), {2, 9}, g.constant(mo), &tr);
  ASSERT_EQ(tr.streams.size(), 3u);
  for (const auto& s : tr.streams)
    for (std::size_t r = 0; r < 10; ++r) {
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s.at(r, 6 + k), mo.at(r, k));
      if (r % 5 >= 3) continue;
      for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(s.at(r, k), z.at(r, k));
    }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(out.value().at(0, k), z.at(0, k));
}

TEST(Denoiser, RejectsBadShapesAndSteps) {
  Model m(tiny_config(), 1);
  Graph g;
  EXPECT_THROW(m.denoise(g.constant(Tensor({9, 6})), {1, 1}, g.constant(Tensor({9, 3}))), std::invalid_argument);
  EXPECT_THROW(m.denoise(g.constant(Tensor({10, 6})), {1}, g.constant(Tensor({10, 3}))), std::invalid_argument);
  EXPECT_THROW(m.denoise(g.constant(Tensor({10, 6})), {0, 1}, g.constant(Tensor({10, 3}))), std::invalid_argument);
  EXPECT_THROW(m.denoise(g.constant(Tensor({10, 6})), {1, 11}, g.constant(Tensor({10, 3}))), std::invalid_argument);
}

// ------------------------------------------------------------- batches

TEST(Batch, FutureMotionTilesLastObservedFrame) {
  const ModelConfig c = tiny_config();
  const auto data = examples_for(c, 3, 4);
  const auto b = pipeline::make_batch(pointers(data), c, pipeline::FutureMotion::tile_last);
  const auto actual = pipeline::make_batch(pointers(data), c, pipeline::FutureMotion::actual);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < 9; ++k) {
        EXPECT_EQ(b.homography.at(i * 5 + t, k), b.homography.at(i * 5 + std::min<std::size_t>(t, 2), k));
        if (t < 3) {
          EXPECT_EQ(b.homography.at(i * 5 + t, k), actual.homography.at(i * 5 + t, k));
        }
      }
  EXPECT_EQ(b.future_gt.at(1, 0), data[0].waypoints[4].u);
  EXPECT_EQ(b.last_observed.at(2, 1), data[2].waypoints[2].v);
}

TEST(Batch, RejectsMismatchedExamples) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 1, 4);
  c.n_past = 4;
  c.n_future = 1;
  EXPECT_THROW(pipeline::make_batch(pointers(data), c), std::invalid_argument);
}

// ------------------------------------------------------------- training

TEST(Training, SmokeLossDecreases) {
  auto preset = pipeline::toy_preset();
  preset.train.epochs = 3;
  const auto ds = synth::generate_dataset(200, {1.0, 0.0, 0.0}, {}, 11);
  const auto data = pipeline::make_examples(ds.split("train"), pipeline::SyntheticSemanticProvider{});
  Model m(preset.model, 0);
  const auto res = pipeline::train(m, data, preset.train);
  ASSERT_EQ(res.epoch_means.size(), 3u);
  EXPECT_LT(res.epoch_means.back().total, res.epoch_means.front().total);
}

TEST(Training, SameSeedGivesIdenticalCurves) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 12, 2);
  pipeline::TrainConfig t;
  t.epochs = 2;
  t.batch_size = 5;
  Model a(c, 3), b(c, 3);
  const auto ra = pipeline::train(a, data, t);
  const auto rb = pipeline::train(b, data, t);
  EXPECT_EQ(pipeline::loss_curve_csv(ra), pipeline::loss_curve_csv(rb));
  EXPECT_EQ(ra.steps.size(), 6u);
  auto pa = a.params().begin();
  for (const auto& p : b.params()) EXPECT_EQ((pa++)->value.storage(), p.value.storage());
}

TEST(Training, LossCurveHasOneRowPerStep) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 4, 2);
  pipeline::TrainConfig t;
  t.epochs = 1;
  t.batch_size = 3;
  Model m(c, 1);
  const std::string csv = pipeline::loss_curve_csv(pipeline::train(m, data, t));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,step,vlb,dis,reg,angle,len,total");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Training, NonFiniteLossNamesTheTerm) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 4, 2);
  Model m(c, 1);
  m.params().get("decoder.0.weight").value[0] = std::nan("");
  pipeline::TrainConfig t;
  t.epochs = 1;
  try {
    pipeline::train(m, data, t);
    FAIL() << "expected NonFiniteLoss";
  } catch (const pipeline::NonFiniteLoss& e) {
    EXPECT_EQ(e.term, "dis");
  }
}

TEST(Training, ResumedOptimizerContinuesStepCounter) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 6, 2);
  pipeline::TrainConfig t;
  t.epochs = 1;
  t.batch_size = 3;
  Model m(c, 1);
  dg::AdamWState st;
  pipeline::train(m, data, t, nullptr, &st);
  EXPECT_EQ(st.step, 2u);
  pipeline::train(m, data, t, nullptr, &st);
  EXPECT_EQ(st.step, 4u);
}

TEST(Training, EveryVariantTrainsAndInfers) {
  struct Variant {
    pipeline::MotionMode motion;
    ssm::ScanDirection scan;
    std::size_t blocks;
  };
  const std::vector<Variant> variants{{pipeline::MotionMode::none, ssm::ScanDirection::forward, 2},
                                      {pipeline::MotionMode::fused_input, ssm::ScanDirection::forward, 2},
                                      {pipeline::MotionMode::sum, ssm::ScanDirection::forward, 2},
                                      {pipeline::MotionMode::concat, ssm::ScanDirection::bidirectional, 2},
                                      {pipeline::MotionMode::concat, ssm::ScanDirection::forward, 0}};
  const auto data = examples_for(tiny_config(), 6, 2);
  for (const auto& v : variants) {
    ModelConfig c = tiny_config();
    c.motion = v.motion;
    c.scan = v.scan;
    c.blocks = v.blocks;
    Model m(c, 1);
    pipeline::TrainConfig t;
    t.epochs = 1;
    t.batch_size = 3;
    const auto r = pipeline::train(m, data, t);
    EXPECT_TRUE(std::isfinite(r.epoch_means[0].total));
    pipeline::InferenceOptions io;
    io.samples = 2;
    const auto out = pipeline::predict(m, data[0], io);
    EXPECT_EQ(out.size(), 2u);
  }
}

TEST(Training, PaperPresetRunsOneStep) {
  auto p = pipeline::paper_preset();
  EXPECT_EQ(p.model.blocks, 6u);
  EXPECT_EQ(p.model.d_state, 16u);
  EXPECT_EQ(p.model.d_conv, 2u);
  EXPECT_EQ(p.model.expand, 1u);
  EXPECT_EQ(p.model.diffusion_steps, 1000u);
  EXPECT_EQ(p.model.n_past, 10u);
  EXPECT_EQ(p.model.n_future, 4u);
  EXPECT_EQ(p.model.weights.vlb, 1.0);
  EXPECT_EQ(p.model.weights.reg, 0.2);
  const auto ds = synth::generate_dataset(2, {1.0, 0.0, 0.0}, {}, 1);
  const auto data = pipeline::make_examples(ds.split("train"), pipeline::SyntheticSemanticProvider{});
  p.train.epochs = 1;
  Model m(p.model, 0);
  const auto r = pipeline::train(m, data, p.train);
  ASSERT_EQ(r.steps.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.steps[0].loss.total));
}

// ------------------------------------------------------------ inference

TEST(Inference, DeterministicAndInRange) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 2, 3);
  Model m(c, 2);
  pipeline::InferenceOptions io;
  io.samples = 10;
  io.seed = 42;
  const auto a = pipeline::predict(m, data[0], io);
  const auto b = pipeline::predict(m, data[0], io);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), 2u);
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(a[i][j].u, b[i][j].u);
      EXPECT_EQ(a[i][j].v, b[i][j].v);
      EXPECT_GE(a[i][j].u, 0.0);
      EXPECT_LE(a[i][j].u, 1.0);
      EXPECT_GE(a[i][j].v, 0.0);
      EXPECT_LE(a[i][j].v, 1.0);
    }
  }
  EXPECT_NE(a[0][0].u, a[1][0].u);
  io.samples = 1;
  EXPECT_EQ(pipeline::predict(m, data[0], io)[0][1].u, a[0][1].u);
}

TEST(Inference, PastLatentsAndMotionAnchoredAtEveryStep) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 1, 5);
  Model m(c, 3);
  diffusion::SampleTrace st;
  std::vector<pipeline::DenoiseTrace> dt;
  pipeline::InferenceOptions io;
  io.samples = 3;
  io.trace = &st;
  io.denoise_traces = &dt;
  pipeline::predict(m, data[0], io);

  const auto batch = pipeline::make_batch({&data[0]}, c, pipeline::FutureMotion::tile_last);
  Graph g;
  g.set_grad_enabled(false);
  auto tok = m.tokenize(g.constant(batch.waypoints), g.constant(batch.semantic), g.constant(batch.homography));
  ASSERT_EQ(st.states.size(), c.inference_steps);
  ASSERT_EQ(dt.size(), c.inference_steps);
  for (std::size_t s = 0; s < st.states.size(); ++s)
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t t = 0; t < 5; ++t) {
        for (const auto& stream : dt[s].streams)
          for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(stream.at(q * 5 + t, 6 + k), tok.motion.value().at(t, k));
        if (t >= 3) continue;
        for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(st.states[s].at(q * 5 + t, k), tok.F.value().at(t, k));
      }
}

TEST(Inference, CdcRoundsEveryStepWithinHalfPixel) {
  ModelConfig c = tiny_config();
  c.width = 16;
  c.height = 8;
  const auto data = examples_for(c, 1, 5);
  Model m(c, 3);
  std::size_t clamped = 0;
  pipeline::InferenceOptions io;
  io.samples = 2;
  io.clamped = &clamped;
  EXPECT_NO_THROW(pipeline::predict(m, data[0], io));
  EXPECT_EQ(clamped, 0u);
}

TEST(Inference, ConstantVelocityBaseline) {
  Example e;
  e.n_past = 2;
  e.waypoints = {{0.4, 0.5}, {0.5, 0.5}, {0.0, 0.0}, {0.0, 0.0}};
  const auto cv = pipeline::constant_velocity(e, 3);
  ASSERT_EQ(cv.size(), 3u);
  EXPECT_NEAR(cv[0].u, 0.6, 1e-15);
  EXPECT_NEAR(cv[1].u, 0.7, 1e-15);
  EXPECT_NEAR(cv[2].u, 0.8, 1e-15);
  EXPECT_EQ(cv[2].v, 0.5);

  e.waypoints = {{0.3, 0.3}, {0.3, 0.3}};
  for (const auto& p : pipeline::constant_velocity(e, 4)) {
    EXPECT_EQ(p.u, 0.3);
    EXPECT_EQ(p.v, 0.3);
  }
  e.waypoints = {{0.5, 0.1}, {0.9, 0.05}};
  const auto edge = pipeline::constant_velocity(e, 2);
  EXPECT_EQ(edge[1].u, 1.0);
  EXPECT_EQ(edge[1].v, 0.0);
  e.n_past = 1;
  EXPECT_THROW(pipeline::constant_velocity(e, 2), std::invalid_argument);
}

TEST(Inference, EvaluateCoversEverySequence) {
  ModelConfig c = tiny_config();
  const auto data = examples_for(c, 5, 6);
  Model m(c, 1);
  const auto rep = pipeline::evaluate(m, data, 3, 7);
  EXPECT_EQ(rep.sequences.size(), 5u);
  EXPECT_EQ(rep.samples, 3u);
  const auto rep2 = pipeline::evaluate(m, data, 3, 7);
  EXPECT_EQ(metrics::report_to_json(rep).dump(), metrics::report_to_json(rep2).dump());
  const auto cv = pipeline::evaluate_constant_velocity(data);
  EXPECT_EQ(cv.sequences.size(), 5u);
}

// ----------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsBitIdentical) {
  ModelConfig c = tiny_config();
  c.motion = pipeline::MotionMode::sum;
  const auto data = examples_for(c, 4, 2);
  Model m(c, 9);
  pipeline::TrainConfig t;
  t.epochs = 1;
  t.batch_size = 2;
  dg::AdamWState st;
  pipeline::train(m, data, t, nullptr, &st);
  const auto ck = pipeline::make_checkpoint(m, t, 9, &st);

  std::stringstream a;
  pipeline::save_checkpoint(ck, a);
  const std::string bytes = a.str();
  std::stringstream in(bytes);
  const auto back = pipeline::load_checkpoint(in);
  std::stringstream b;
  pipeline::save_checkpoint(back, b);
  EXPECT_EQ(b.str(), bytes);
  EXPECT_EQ(back.step, 2u);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->second_moment.back().storage(), st.second_moment.back().storage());

  const auto restored = pipeline::model_from_checkpoint(back);
  auto p = restored->params().begin();
  for (const auto& q : m.params()) {
    EXPECT_EQ(p->name, q.name);
    EXPECT_EQ(std::memcmp(p->value.storage().data(), q.value.storage().data(), q.value.size() * sizeof(double)), 0);
    ++p;
  }
  pipeline::InferenceOptions io;
  io.samples = 2;
  EXPECT_EQ(pipeline::predict(*restored, data[0], io)[1][0].u, pipeline::predict(m, data[0], io)[1][0].u);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Model m(tiny_config(), 1);
  std::stringstream s;
  pipeline::save_checkpoint(pipeline::make_checkpoint(m, {}, 1), s);
  const std::string good = s.str();

  std::string bad = good;
  bad[0] = 'X';
  std::stringstream b1(bad);
  EXPECT_THROW(pipeline::load_checkpoint(b1), pipeline::CheckpointError);

  bad = good;
  bad[4] = static_cast<char>(pipeline::kCheckpointVersion + 1);
  std::stringstream b2(bad);
  try {
    pipeline::load_checkpoint(b2);
    FAIL() << "expected a version error";
  } catch (const pipeline::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  std::stringstream b3(good.substr(0, good.size() - 3));
  EXPECT_THROW(pipeline::load_checkpoint(b3), pipeline::CheckpointError);
  std::stringstream b4(good + "x");
  EXPECT_THROW(pipeline::load_checkpoint(b4), pipeline::CheckpointError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  Model m(tiny_config(), 1);
  auto ck = pipeline::make_checkpoint(m, {}, 1);
  ck.params[0].shape = {1, 1};
  ck.params[0].data = {0.0};
  EXPECT_THROW(pipeline::model_from_checkpoint(ck), pipeline::CheckpointError);
  ck = pipeline::make_checkpoint(m, {}, 1);
  ck.model.d_model = 8;
  EXPECT_THROW(pipeline::model_from_checkpoint(ck), pipeline::CheckpointError);
}

// ---------------------------------------------------------------- config

TEST(Config, JsonRoundTripAndUnknownKeys) {
  const auto p = pipeline::paper_preset();
  EXPECT_EQ(pipeline::to_json(pipeline::model_config_from_json(pipeline::to_json(p.model))), pipeline::to_json(p.model));
  EXPECT_EQ(pipeline::to_json(pipeline::train_config_from_json(pipeline::to_json(p.train))), pipeline::to_json(p.train));
  EXPECT_THROW(pipeline::model_config_from_json({{"d_modle", 4}}), std::invalid_argument);
  EXPECT_THROW(pipeline::model_config_from_json({{"weights", {{"angel", 1.0}}}}), std::invalid_argument);
  EXPECT_THROW(pipeline::model_config_from_json({{"motion", "diagonal"}}), std::invalid_argument);
  EXPECT_THROW(pipeline::train_config_from_json({{"epochs", "many"}}), std::invalid_argument);
  const auto c = pipeline::model_config_from_json({{"motion", "fused-input"}, {"weights", {{"angle", 0.0}, {"len", 0.0}}}});
  EXPECT_EQ(c.motion, pipeline::MotionMode::fused_input);
  EXPECT_EQ(c.weights.angle, 0.0);
  EXPECT_EQ(c.weights.dis, 1.0);
}
