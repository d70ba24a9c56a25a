#pragma once

// Synthetic egocentric benchmark: a hand moving toward a 3D goal, filmed by
// a rotating pinhole camera, with exact homographies to a canvas frame.
//
// Frames are indexed 0..T-1 with T = n_past + n_future; frame n_past-1 is the
// last observation (timestamp t = 0).

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madiff/geometry.hpp"

namespace madiff::synth {

enum class Archetype { reach, retract, circle, zigzag, shake };
inline constexpr std::array<Archetype, 5> kAllArchetypes{Archetype::reach, Archetype::retract, Archetype::circle,
                                                         Archetype::zigzag, Archetype::shake};
std::string to_string(Archetype a);
Archetype archetype_from_string(const std::string& s);  // throws std::invalid_argument

enum class CanvasConvention { first, last };
std::string to_string(CanvasConvention c);
CanvasConvention canvas_from_string(const std::string& s);

struct SynthConfig {
  std::size_t n_past = 10;
  std::size_t n_future = 4;
  double fps = 4.0;
  int width = 512;
  int height = 384;
  double focal_px = 400.0;
  CanvasConvention canvas = CanvasConvention::first;

  double rotation_rate = 0.12;  // rad/s scale of the yaw/pitch velocity walk
  double max_angle = 0.4;       // rad, bound on yaw and pitch
  double heavy_fraction = 0.3;  // share of scenarios tagged egomotion-heavy
  double heavy_multiplier = 2.5;
  double translation_speed = 0.0;  // m/s; nonzero breaks the planar model

  std::size_t correspondences = 16;
  double outlier_fraction = 0.2;
  double correspondence_noise = 3e-4;  // normalized units

  std::size_t d_sem = 16;
  double semantic_noise = 0.02;
  std::vector<Archetype> archetypes{kAllArchetypes.begin(), kAllArchetypes.end()};
  int max_retries = 200;

  std::size_t frames() const { return n_past + n_future; }
  geo::Intrinsics intrinsics() const;
  void validate() const;  // throws std::invalid_argument
};

// Seed mixer used for every derived seed.
std::uint64_t splitmix64(std::uint64_t x);

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Scenario {
  std::string id;
  Archetype archetype = Archetype::reach;
  std::string split;
  bool egomotion_heavy = false;
  std::uint64_t seed = 0;

  std::size_t n_past = 0, n_future = 0;
  double fps = 0.0;
  int width = 0, height = 0;
  CanvasConvention canvas = CanvasConvention::first;
  std::size_t canvas_index = 0;
  geo::Intrinsics K;

  std::vector<Eigen::Matrix3d> rotations;  // world -> camera, per frame
  std::vector<Vec3> camera_centers;        // all zero unless translating
  std::vector<Vec3> hand;                  // world positions
  Vec3 goal;
  Vec3 affordance_world;
  int intent_onset = 0;  // first frame whose semantic features see the goal

  std::vector<geo::Point2> frame_waypoints;  // hand in each frame's own image
  std::vector<geo::Point2> waypoints;        // hand in canvas coordinates
  std::vector<geo::Homography> to_canvas;    // frame t -> canvas, exact
  std::vector<geo::Homography> consecutive;  // frame t -> t+1, exact
  std::vector<std::vector<geo::PointPair>> consecutive_pairs;
  std::vector<std::vector<geo::PointPair>> canvas_pairs;  // frame t -> canvas
  geo::Point2 affordance;                                // canvas coordinates
  std::vector<std::vector<double>> semantic;             // per frame, d_sem

  std::size_t frames() const { return n_past + n_future; }
  std::size_t last_observed() const { return n_past - 1; }
};

// Generates one scenario from its own seed. Throws std::runtime_error when
// no in-frustum trajectory is found within the retry budget.
Scenario generate_scenario(Archetype archetype, std::uint64_t seed, bool egomotion_heavy, const SynthConfig& config);

// Largest residual between canvas waypoints and frame waypoints mapped
// through the exact homographies.
double reprojection_residual(const Scenario& s);
// Checks every scenario invariant; returns an empty string when all hold.
std::string check_invariants(const Scenario& s, double residual_bound = 1e-9);

// Re-splits a scenario at the given observation ratio of its total length
// without regenerating it; canvas-frame quantities are re-expressed if the
// canvas convention is tied to the last observation.
Scenario reslice(const Scenario& s, double observation_ratio);

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<Scenario> scenarios;

  std::vector<const Scenario*> split(const std::string& tag) const;
};

// Scenario i draws its own seed from (seed, i); archetypes cycle within each
// split so that they stay balanced.
Dataset generate_dataset(std::size_t n, const SplitRatios& ratios, const SynthConfig& config, std::uint64_t seed);

inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const SynthConfig& c);
SynthConfig config_from_json(const nlohmann::json& j);

void write_dataset(const Dataset& d, std::ostream& out);
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::filesystem::path& path);

// SHA-256 of the file bytes as lowercase hex.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace madiff::synth
