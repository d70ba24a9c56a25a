#pragma once

// Training objectives. Trajectories are [rows x 2] with one waypoint per
// row; a batch stacks sequences of `horizon` rows each.

#include <array>
#include <optional>
#include <string>

#include "madiff/diffgraph.hpp"

namespace madiff::losses {

using dg::Var;

inline constexpr double kDeltaEps = 1e-8;

// Mean over tokens of the squared token error. When `prior` is supplied,
// the same quantity for (F_hat, F) is added.
struct PriorTerm {
  Var f_hat;
  Var f;
};
Var vlb_loss(Var z0_hat, Var z0, std::optional<PriorTerm> prior = std::nullopt);

// Mean Euclidean distance between corresponding waypoints.
Var displacement_loss(Var pred, Var gt);
// Same distance, applied to waypoints decoded from the clean tokens.
Var regularization_loss(Var decoded_clean, Var gt);

// Step vectors H_{t+1} - H_t of each sequence, with `last_observed` ([seqs x 2])
// prepended so the first step starts at the last observation.
Var step_vectors(Var traj, Var last_observed, std::size_t horizon);

// Mean of (1 - cos) between predicted and ground-truth steps. Steps whose
// ground truth is shorter than kDeltaEps contribute 0.
Var angle_loss(Var pred, Var gt, Var last_observed, std::size_t horizon);
// Mean norm of the difference between predicted and ground-truth steps.
Var length_loss(Var pred, Var gt, Var last_observed, std::size_t horizon);

struct LossWeights {
  double vlb = 1.0, dis = 1.0, reg = 0.2, angle = 0.01, len = 0.01;
  void validate() const;  // throws std::invalid_argument on a negative weight
};

struct LossBreakdown {
  double vlb = 0, dis = 0, reg = 0, angle = 0, len = 0, total = 0;
  std::array<double, 6> values() const { return {vlb, dis, reg, angle, len, total}; }
  static constexpr std::array<const char*, 6> names{"vlb", "dis", "reg", "angle", "len", "total"};
  // Name of the first non-finite term, if any.
  std::optional<std::string> non_finite_term() const;
};

struct LossTerms {
  Var vlb, dis, reg, angle, len;
};

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights);

// Plain weighted sum on already-evaluated components.
LossBreakdown combine(double vlb, double dis, double reg, double angle, double len, const LossWeights& weights);

}  // namespace madiff::losses
