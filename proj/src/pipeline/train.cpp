#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "madiff/pipeline.hpp"

namespace madiff::pipeline {

NonFiniteLoss::NonFiniteLoss(const std::string& term_, std::size_t step)
    : std::runtime_error("non-finite " + term_ + " loss at step " + std::to_string(step)), term(term_) {}

namespace {

double clip_gradients(dg::ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double v : p.grad.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& v : p.grad.values()) v *= s;
  }
  return norm;
}

}  // namespace

TrainResult train(Model& model, const std::vector<Example>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch, dg::AdamWState* optimizer) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: no training examples");
  const ModelConfig& mc = model.config();
  dg::AdamWOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  dg::AdamWState local;
  dg::AdamWState& state = optimizer ? *optimizer : local;
  if (state.first_moment.empty()) state = dg::make_adamw_state(model.params(), opts);
  state.options.lr = config.lr;
  state.options.weight_decay = config.weight_decay;

  diffusion::Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> step_dist(1, mc.diffusion_steps);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    losses::LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Example*> items;
      for (std::size_t k = start; k < end; ++k) items.push_back(&data[order[k]]);
      const Batch batch = make_batch(items, mc, config.future_motion);

      std::vector<std::size_t> steps(items.size());
      for (auto& s : steps) s = step_dist(rng);
      const Tensor noise = diffusion::standard_normal(items.size() * mc.n_future, mc.d_model, rng);
      const bool with_prior = config.prior_every > 0 && global % config.prior_every == 0;
      const Tensor prior_noise =
          with_prior ? diffusion::standard_normal(items.size() * mc.n_future, mc.d_model, rng) : Tensor();

      dg::Graph g;
      const LossOutput out = batch_loss(model, g, batch, steps, noise, with_prior, prior_noise);
      if (auto bad = out.total.breakdown.non_finite_term()) throw NonFiniteLoss(*bad, global);

      model.params().zero_grad();
      g.backward(out.total.total);
      clip_gradients(model.params(), config.grad_clip);
      dg::adamw_step(model.params(), state);

      result.steps.push_back({epoch, global, out.total.breakdown});
      const auto& b = out.total.breakdown;
      sum.vlb += b.vlb;
      sum.dis += b.dis;
      sum.reg += b.reg;
      sum.angle += b.angle;
      sum.len += b.len;
      sum.total += b.total;
      ++batches;
      ++global;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    losses::LossBreakdown mean{sum.vlb * inv, sum.dis * inv, sum.reg * inv, sum.angle * inv, sum.len * inv,
                               sum.total * inv};
    result.epoch_means.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

std::string loss_curve_csv(const TrainResult& result) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,step";
  for (const char* n : losses::LossBreakdown::names) os << ',' << n;
  os << '\n';
  for (const auto& s : result.steps) {
    os << s.epoch << ',' << s.step;
    for (double v : s.loss.values()) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace madiff::pipeline
