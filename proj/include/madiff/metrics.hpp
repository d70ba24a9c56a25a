#pragma once

// Displacement and affordance metrics. Trajectories are sequences of
// normalized canvas points; saliency maps are row-major grids over [0,1]^2.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madiff/geometry.hpp"

namespace madiff::metrics {

using Trajectory = std::vector<geo::Point2>;

// Both throw std::invalid_argument on empty or mismatched input. ade sums
// per-waypoint distances in order and multiplies by 1/n, which is the
// exact arithmetic of losses::displacement_loss.
double ade(const Trajectory& pred, const Trajectory& gt);
double fde(const Trajectory& pred, const Trajectory& gt);

// w_t = t for t = 1..n, rescaled to sum to n.
std::vector<double> default_wde_weights(std::size_t n);
// Mean over samples of (1/n) sum_t w_t d_t, with weights rescaled to sum to
// n. Empty weights select the default.
double wde(const std::vector<Trajectory>& samples, const Trajectory& gt, std::vector<double> weights = {});

// Pointwise mean of the samples.
Trajectory mean_trajectory(const std::vector<Trajectory>& samples);

// Per sample, the waypoint closest to `center`; the earliest one wins ties.
std::vector<geo::Point2> interaction_points(const std::vector<Trajectory>& samples, geo::Point2 center);

struct SaliencyMap {
  std::size_t width = 0, height = 0;
  std::vector<double> values;  // row-major, y then x

  SaliencyMap() = default;
  SaliencyMap(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}
  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double sum() const;
  // Cell whose area contains p, clamped to the grid.
  std::size_t cell_of(geo::Point2 p) const;
};

inline constexpr double kDefaultSigma = 0.05;
inline constexpr std::size_t kDefaultResolution = 64;

// Isotropic Gaussian mixture evaluated at cell centres, normalized to sum 1.
SaliencyMap affordance_map(const std::vector<geo::Point2>& points, double sigma = kDefaultSigma,
                           std::size_t resolution = kDefaultResolution);

// Histogram intersection of the sum-normalized maps.
double sim(const SaliencyMap& p, const SaliencyMap& q);
// `fixations` are cell indices; duplicates count once.
double auc_judd(const SaliencyMap& map, const std::vector<std::size_t>& fixations);
// Throws std::invalid_argument for a constant map.
double nss(const SaliencyMap& map, const std::vector<std::size_t>& fixations);

// Binary PGM, scaled so that the maximum is white.
void write_pgm(const SaliencyMap& map, const std::filesystem::path& path);

struct SequenceResult {
  std::string id;
  std::string archetype;
  bool egomotion_heavy = false;
  double ade = 0, fde = 0, wde = 0;
  std::optional<double> sim, auc_judd, nss;
};

struct EvalOptions {
  std::vector<double> wde_weights;  // empty: default
  double sigma = kDefaultSigma;
  std::size_t resolution = kDefaultResolution;
};

// ADE and FDE are scored on the sample mean; WDE on the samples themselves.
// Affordance metrics need `affordance`, the ground-truth interaction centre.
SequenceResult evaluate_sequence(const std::vector<Trajectory>& samples, const Trajectory& gt,
                                 std::optional<geo::Point2> affordance, const EvalOptions& options = {});

struct GroupStats {
  std::string label;
  std::size_t count = 0;
  double ade = 0, fde = 0, wde = 0;
  std::optional<double> sim, auc_judd, nss;
};

struct MetricReport {
  std::vector<SequenceResult> sequences;
  GroupStats overall;
  std::vector<GroupStats> per_archetype;  // ascending WDE
  std::size_t samples = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> warnings;
};

// Throws std::invalid_argument on an unknown archetype label. Archetypes
// without sequences are omitted and noted in `warnings`.
MetricReport make_report(std::vector<SequenceResult> sequences, std::size_t samples, std::vector<std::uint64_t> seeds);

nlohmann::json report_to_json(const MetricReport& report);
std::string per_archetype_csv(const MetricReport& report);

}  // namespace madiff::metrics
