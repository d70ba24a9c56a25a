#include "madiff/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace madiff::losses {

namespace {

void require_same(const char* op, Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + "]");
}

Var mean_squared_token_error(Var a, Var b) { return dg::mean(dg::row_sum(dg::square(a - b))); }

}  // namespace

Var vlb_loss(Var z0_hat, Var z0, std::optional<PriorTerm> prior) {
  require_same("vlb_loss", z0_hat, z0);
  Var loss = mean_squared_token_error(z0_hat, z0);
  if (prior) {
    require_same("vlb_loss(prior)", prior->f_hat, prior->f);
    loss = loss + mean_squared_token_error(prior->f_hat, prior->f);
  }
  return loss;
}

Var displacement_loss(Var pred, Var gt) {
  require_same("displacement_loss", pred, gt);
  return dg::mean(dg::row_norm(pred - gt));
}

Var regularization_loss(Var decoded_clean, Var gt) {
  require_same("regularization_loss", decoded_clean, gt);
  return dg::mean(dg::row_norm(decoded_clean - gt));
}

Var step_vectors(Var traj, Var last_observed, std::size_t horizon) {
  return traj - dg::shift_rows_in_groups(traj, last_observed, horizon);
}

Var angle_loss(Var pred, Var gt, Var last_observed, std::size_t horizon) {
  require_same("angle_loss", pred, gt);
  Var dp = step_vectors(pred, last_observed, horizon);
  Var dg_ = step_vectors(gt, last_observed, horizon);
  const dg::Tensor& gt_steps = dg_.value();
  dg::Tensor valid({gt_steps.rows(), 1});
  for (std::size_t r = 0; r < gt_steps.rows(); ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < gt_steps.cols(); ++c) n2 += gt_steps.at(r, c) * gt_steps.at(r, c);
    valid[r] = std::sqrt(n2) >= kDeltaEps ? 1.0 : 0.0;
  }
  Var cos = dg::row_sum(dp * dg_) /
            (dg::clamp_min(dg::row_norm(dp), kDeltaEps) * dg::clamp_min(dg::row_norm(dg_), kDeltaEps));
  dg::Graph& g = *pred.graph;
  return dg::mean(dg::add_scalar(dg::negate(cos), 1.0) * g.constant(std::move(valid)));
}

Var length_loss(Var pred, Var gt, Var last_observed, std::size_t horizon) {
  require_same("length_loss", pred, gt);
  return dg::mean(dg::row_norm(step_vectors(pred, last_observed, horizon) - step_vectors(gt, last_observed, horizon)));
}

void LossWeights::validate() const {
  if (vlb < 0 || dis < 0 || reg < 0 || angle < 0 || len < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
}

std::optional<std::string> LossBreakdown::non_finite_term() const {
  const auto v = values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return std::string(names[i]);
  return std::nullopt;
}

LossBreakdown combine(double vlb, double dis, double reg, double angle, double len, const LossWeights& w) {
  w.validate();
  LossBreakdown b{vlb, dis, reg, angle, len, 0.0};
  b.total = w.vlb * vlb + w.dis * dis + w.reg * reg + w.angle * angle + w.len * len;
  return b;
}

TotalLoss total_loss(const LossTerms& t, const LossWeights& w) {
  w.validate();
  Var total = dg::scale(t.vlb, w.vlb) + dg::scale(t.dis, w.dis) + dg::scale(t.reg, w.reg) +
              dg::scale(t.angle, w.angle) + dg::scale(t.len, w.len);
  LossBreakdown b{t.vlb.value().item(), t.dis.value().item(), t.reg.value().item(), t.angle.value().item(),
                  t.len.value().item(), total.value().item()};
  return {total, b};
}

}  // namespace madiff::losses
