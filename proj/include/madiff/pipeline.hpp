#pragma once

// Tokenizer, motion-aware denoiser, training loop, inference and
// checkpoints, wired over synthetic benchmark scenarios.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madiff/diffusion.hpp"
#include "madiff/losses.hpp"
#include "madiff/metrics.hpp"
#include "madiff/nn.hpp"
#include "madiff/optim.hpp"
#include "madiff/ssm.hpp"
#include "madiff/synthbench.hpp"

namespace madiff::pipeline {

using dg::Tensor;
using dg::Var;

// How egomotion reaches the denoiser. `none` feeds zero motion channels;
// `fused_input` adds projected motion features to the tokens and feeds zero
// motion channels; `concat` and `sum` feed motion channels to every block.
enum class MotionMode { none, concat, sum, fused_input };
enum class FutureSemantic { tile_last, zeros };

std::string to_string(MotionMode m);
MotionMode motion_from_string(const std::string& s);
std::string to_string(ssm::ScanDirection d);
ssm::ScanDirection scan_from_string(const std::string& s);
std::string to_string(FutureSemantic f);
FutureSemantic future_semantic_from_string(const std::string& s);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t d_sem = 16;
  std::size_t d_motion = 16;
  std::size_t d_state = 16;
  std::size_t d_conv = 2;
  std::size_t expand = 1;
  std::size_t blocks = 2;  // 0 swaps the blocks for a per-row MLP
  std::size_t diffusion_steps = 100;
  double schedule_offset = 1e-4;
  std::size_t inference_steps = 20;
  losses::LossWeights weights;
  std::size_t n_past = 10;
  std::size_t n_future = 4;
  int width = 512;
  int height = 384;
  MotionMode motion = MotionMode::concat;
  ssm::ScanDirection scan = ssm::ScanDirection::forward;
  bool cdc = true;
  FutureSemantic future_semantic = FutureSemantic::tile_last;

  std::size_t length() const { return n_past + n_future; }
  ssm::SsmDims ssm_dims() const;
  void validate() const;  // throws std::invalid_argument
};

enum class FutureMotion { actual, tile_last };
enum class HomographySource { exact, ransac };

std::string to_string(FutureMotion f);
FutureMotion future_motion_from_string(const std::string& s);
std::string to_string(HomographySource h);
HomographySource homography_source_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double grad_clip = 1.0;        // global norm; 0 disables
  std::size_t prior_every = 4;   // steps between evaluations of the clean-token term
  FutureMotion future_motion = FutureMotion::tile_last;  // as seen at inference
  std::uint64_t seed = 0;
  void validate() const;
};

struct Preset {
  ModelConfig model;
  TrainConfig train;
};
Preset toy_preset();
Preset paper_preset();
Preset preset_from_string(const std::string& name);

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
// Both reject unknown keys and start from `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// ------------------------------------------------------------------ data

// Per-frame semantic features X^sem for frames 0..T-1.
class SemanticProvider {
 public:
  virtual ~SemanticProvider() = default;
  virtual std::vector<double> features(const synth::Scenario& s, std::size_t frame) const = 0;
};

// Reads the features the generator stored with each scenario.
class SyntheticSemanticProvider final : public SemanticProvider {
 public:
  std::vector<double> features(const synth::Scenario& s, std::size_t frame) const override;
};

struct Example {
  std::string id;
  std::string archetype;
  bool egomotion_heavy = false;
  std::vector<geo::Point2> waypoints;           // canvas, all frames
  std::vector<std::vector<double>> semantic;    // all frames
  std::vector<geo::Homography> to_canvas;       // all frames
  geo::Point2 affordance;
  std::size_t n_past = 0;

  std::size_t frames() const { return waypoints.size(); }
};

struct DataOptions {
  HomographySource homographies = HomographySource::exact;
  std::uint64_t ransac_seed = 0;
};

Example make_example(const synth::Scenario& s, const SemanticProvider& provider, const DataOptions& options = {});
std::vector<Example> make_examples(const std::vector<const synth::Scenario*>& scenarios,
                                   const SemanticProvider& provider, const DataOptions& options = {});

// Row-major flatten(H - I) of the h33-normalized matrix; throws on h33 = 0.
std::array<double, 9> homography_input(const geo::Homography& H);

// ----------------------------------------------------------------- model

// Snapshot of the residual stream after each block, for anchoring checks.
struct DenoiseTrace {
  std::vector<Tensor> streams;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  dg::ParameterSet& params() { return params_; }
  const dg::ParameterSet& params() const { return params_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  diffusion::Layout layout() const { return {config_.n_past, config_.n_future}; }

  // [rows x 2] waypoints -> [rows x d_model], one row at a time.
  Var encode_trajectory(Var waypoints) const;
  // [rows x d_model] -> [rows x 2] in (0, 1).
  Var decode_trajectory(Var latents) const;
  // [rows x 9] homography inputs -> [rows x d_motion].
  Var encode_homography(Var inputs) const;
  // [rows x d_sem], [rows x d_model] -> tokens [rows x d_model].
  Var fuse_tokens(Var semantic, Var trajectory_features) const;

  // Tokens F and the motion channels fed to the blocks for the given mode.
  struct Tokens {
    Var F;
    Var motion;
  };
  Tokens tokenize(Var waypoints, Var semantic, Var homography_inputs) const;

  // Predicted clean latents for every row of z_s; `steps` holds one step
  // per sequence. Past rows are re-anchored to z_s after every block.
  Var denoise(Var z_s, const std::vector<std::size_t>& steps, Var motion, DenoiseTrace* trace = nullptr) const;

  void zero_output_projections();

 private:
  ModelConfig config_;
  dg::ParameterSet params_;
  diffusion::NoiseSchedule schedule_;
  nn::Mlp traj_enc_, fusion_, hom_enc_, step_mlp_, decoder_;
  nn::Mlp mlp_denoiser_;  // used when blocks == 0
  nn::Linear sem_proj_, motion_fuse_;
  dg::Parameter* position_ = nullptr;
  std::vector<ssm::MotionAwareMambaBlock> blocks_;
};

// Sinusoidal embedding of a diffusion step, width `dim`.
std::vector<double> step_embedding(std::size_t step, std::size_t dim);

// Stacked per-frame inputs for a batch of examples, all frames. Future
// semantic rows follow config.future_semantic, as at inference.
struct Batch {
  Tensor waypoints;   // [B*T x 2]
  Tensor semantic;    // [B*T x d_sem]
  Tensor homography;  // [B*T x 9]
  Tensor future_gt;   // [B*n_future x 2]
  Tensor last_observed;  // [B x 2]
};
Batch make_batch(const std::vector<const Example*>& examples, const ModelConfig& config,
                 FutureMotion future_motion = FutureMotion::actual);

// ---------------------------------------------------------------- losses

struct LossOutput {
  losses::TotalLoss total;
  Var z0_hat;
};

// Full objective on one batch. `steps` and `noise` fix the diffusion draw;
// `with_prior` adds the clean-token term at step 1 using `prior_noise`.
LossOutput batch_loss(const Model& model, dg::Graph& g, const Batch& batch, const std::vector<std::size_t>& steps,
                      const Tensor& noise, bool with_prior, const Tensor& prior_noise);

// ---------------------------------------------------------------- training

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  losses::LossBreakdown loss;
};

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(const std::string& term, std::size_t step);
  std::string term;
};

struct Checkpoint;

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<losses::LossBreakdown> epoch_means;
};

using EpochCallback = std::function<void(std::size_t epoch, const losses::LossBreakdown& mean)>;

// Trains `model` in place. Throws NonFiniteLoss naming the first non-finite
// term. The optimizer state is returned through `optimizer` if given.
TrainResult train(Model& model, const std::vector<Example>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = nullptr, dg::AdamWState* optimizer = nullptr);

std::string loss_curve_csv(const TrainResult& result);

// ---------------------------------------------------------------- inference

struct InferenceOptions {
  std::size_t samples = 10;
  std::uint64_t seed = 0;
  std::size_t* clamped = nullptr;  // CDC border clamps, accumulated
  diffusion::SampleTrace* trace = nullptr;
  std::vector<DenoiseTrace>* denoise_traces = nullptr;
};

// `samples` future trajectories for one example, using its past frames only.
// Sample i draws its noise from a generator seeded by (seed, i).
std::vector<metrics::Trajectory> predict(const Model& model, const Example& example, const InferenceOptions& options);

// Constant-velocity extrapolation of the last observed step, clamped to [0,1]^2.
metrics::Trajectory constant_velocity(const Example& example, std::size_t n_future);

metrics::Trajectory future_of(const Example& example);

metrics::MetricReport evaluate(const Model& model, const std::vector<Example>& data, std::size_t samples,
                               std::uint64_t seed, const metrics::EvalOptions& options = {});
metrics::MetricReport evaluate_constant_velocity(const std::vector<Example>& data,
                                                 const metrics::EvalOptions& options = {});

// ------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  struct Array {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
  };
  std::vector<Array> params;
  std::optional<dg::AdamWState> optimizer;
};

Checkpoint make_checkpoint(const Model& model, const TrainConfig& train, std::uint64_t seed,
                           const dg::AdamWState* optimizer = nullptr);
// Rebuilds the model and copies the stored arrays; throws on a name or
// shape mismatch.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck);

void save_checkpoint(const Checkpoint& ck, std::ostream& out);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace madiff::pipeline
