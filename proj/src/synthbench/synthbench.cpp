#include "madiff/synthbench.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace madiff::synth {

using geo::Homography;
using geo::Point2;
using Rng = std::mt19937_64;
using json = nlohmann::json;

std::string to_string(Archetype a) {
  switch (a) {
    case Archetype::reach: return "reach";
    case Archetype::retract: return "retract";
    case Archetype::circle: return "circle";
    case Archetype::zigzag: return "zigzag";
    case Archetype::shake: return "shake";
  }
  return "?";
}

Archetype archetype_from_string(const std::string& s) {
  for (Archetype a : kAllArchetypes)
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown archetype '" + s + "' (expected reach|retract|circle|zigzag|shake)");
}

std::string to_string(CanvasConvention c) { return c == CanvasConvention::first ? "first" : "last"; }

CanvasConvention canvas_from_string(const std::string& s) {
  if (s == "first") return CanvasConvention::first;
  if (s == "last") return CanvasConvention::last;
  throw std::invalid_argument("unknown canvas convention '" + s + "' (expected first|last)");
}

geo::Intrinsics SynthConfig::intrinsics() const {
  return {focal_px / width, focal_px / height, 0.5, 0.5};
}

void SynthConfig::validate() const {
  auto req = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  req(n_past >= 2, "n_past must be at least 2");
  req(n_future >= 1, "n_future must be at least 1");
  req(fps > 0, "fps must be positive");
  req(width > 0 && height > 0, "canvas resolution must be positive");
  req(focal_px > 0, "focal_px must be positive");
  req(rotation_rate >= 0 && max_angle >= 0 && translation_speed >= 0, "camera motion scales must be nonnegative");
  req(heavy_fraction >= 0 && heavy_fraction <= 1, "heavy_fraction must lie in [0,1]");
  req(heavy_multiplier >= 1, "heavy_multiplier must be at least 1");
  req(correspondences >= 4, "correspondences must be at least 4");
  req(outlier_fraction >= 0 && outlier_fraction < 1, "outlier_fraction must lie in [0,1)");
  req(correspondence_noise >= 0 && semantic_noise >= 0, "noise levels must be nonnegative");
  req(d_sem >= 8, "d_sem must be at least 8");
  req(!archetypes.empty(), "archetype mix is empty");
  req(max_retries >= 1, "max_retries must be positive");
}

// ------------------------------------------------------------ generation

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

namespace {

Eigen::Vector3d vec(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 v3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

bool inside(Point2 p) { return p.u >= 0.0 && p.u <= 1.0 && p.v >= 0.0 && p.v <= 1.0; }

// Image of world point X in a camera with rotation R and center c; nullopt
// when behind or too close to the camera.
std::optional<Point2> project(const geo::Intrinsics& K, const Eigen::Matrix3d& R, const Vec3& c, const Vec3& X) {
  const Eigen::Vector3d cam = R * (vec(X) - vec(c));
  if (cam.z() < 0.05) return std::nullopt;
  return Point2{K.fx * cam.x() / cam.z() + K.cx, K.fy * cam.y() / cam.z() + K.cy};
}

Homography relative_homography(const geo::Intrinsics& K, const Eigen::Matrix3d& R_to, const Eigen::Matrix3d& R_from) {
  if (R_to == R_from) return Homography::identity();
  const Eigen::Matrix3d rel = R_to * R_from.transpose();
  return geo::rotation_camera_homography(K, rel);
}

double min_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

double round_to(double x, double q) { return std::round(x / q) * q; }

struct Camera {
  std::vector<Eigen::Matrix3d> R;
  std::vector<Vec3> centers;
};

Camera camera_path(Rng& rng, std::size_t frames, double dt, double rate, double max_angle, double speed) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Camera cam;
  double yaw = 0.0, pitch = 0.0;
  double w_yaw = rate * n01(rng), w_pitch = 0.6 * rate * n01(rng);
  Eigen::Vector3d c = Eigen::Vector3d::Zero(), vel(n01(rng), 0.3 * n01(rng), n01(rng));
  vel = vel.normalized() * speed;
  for (std::size_t f = 0; f < frames; ++f) {
    if (f > 0) {
      w_yaw = 0.8 * w_yaw + 0.6 * rate * n01(rng);
      w_pitch = 0.8 * w_pitch + 0.36 * rate * n01(rng);
      yaw = std::clamp(yaw + w_yaw * dt, -max_angle, max_angle);
      pitch = std::clamp(pitch + w_pitch * dt, -max_angle, max_angle);
      if (speed > 0) {
        vel = 0.8 * vel + 0.6 * speed * Eigen::Vector3d(n01(rng), 0.3 * n01(rng), n01(rng)).normalized();
        c += vel * dt;
      }
    }
    cam.R.push_back((Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) * Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()))
                        .toRotationMatrix());
    cam.centers.push_back(v3(c));
  }
  return cam;
}

struct HandPath {
  std::vector<Vec3> hand;
  Vec3 goal;
  Vec3 affordance;
};

HandPath hand_path(Archetype a, Rng& rng, std::size_t frames, double dt) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
  const Eigen::Vector3d start(uni(-0.2, 0.2), uni(-0.05, 0.2), uni(0.45, 0.75));
  Eigen::Vector3d dir(uni(-1, 1), uni(-0.7, 0.5), uni(-0.5, 0.8));
  dir.normalize();
  const double dist = uni(0.12, 0.3);
  Eigen::Vector3d from = start, to = start + dist * dir;
  Eigen::Vector3d affordance = to;
  if (a == Archetype::retract) {
    // Hand leaves an object toward a rest pose nearer the body.
    affordance = start;
    to = start + Eigen::Vector3d(uni(-0.08, 0.08), uni(0.1, 0.2), uni(-0.15, -0.05));
  }
  const double T = static_cast<double>(frames);
  const double onset = uni(-2.0, 2.0);
  const double duration = a == Archetype::shake ? uni(T + 4, T + 10) : uni(T + 1, T + 6);
  Eigen::Vector3d perp(-(to - from).y(), (to - from).x(), 0.0);
  perp = perp.norm() > 1e-9 ? perp.normalized() : Eigen::Vector3d::UnitX();
  const double amp = a == Archetype::shake ? uni(0.01, 0.02) : uni(0.03, 0.06);
  const double freq = a == Archetype::shake ? uni(1.2, 1.8) : a == Archetype::circle ? uni(0.3, 0.5) : uni(0.4, 0.6);
  const double phase = uni(0.0, 2.0 * std::numbers::pi);

  HandPath hp;
  for (std::size_t f = 0; f < frames; ++f) {
    const double s = min_jerk((static_cast<double>(f) - onset) / duration);
    Eigen::Vector3d p = from + (to - from) * s;
    const double t = static_cast<double>(f) * dt;
    const double w = 2.0 * std::numbers::pi * freq * t + phase;
    switch (a) {
      case Archetype::circle:
        p += amp * (1.0 - s) * Eigen::Vector3d(std::cos(w), std::sin(w), 0.0);
        break;
      case Archetype::zigzag: {
        const double tri = 2.0 / std::numbers::pi * std::asin(std::sin(w));
        p += amp * (1.0 - s) * tri * perp;
        break;
      }
      case Archetype::shake:
        p += amp * std::sin(w) * perp;
        break;
      default:
        break;
    }
    hp.hand.push_back(v3(p));
  }
  hp.goal = v3(to);
  hp.affordance = v3(affordance);
  return hp;
}

std::vector<geo::PointPair> correspondences(Rng& rng, const geo::Intrinsics& K, const Camera& cam, std::size_t from,
                                            std::size_t to, const SynthConfig& cfg) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::Matrix3d Kinv = K.matrix().inverse();
  std::vector<geo::PointPair> out;
  while (out.size() < cfg.correspondences) {
    const Point2 p{0.02 + 0.96 * U(rng), 0.02 + 0.96 * U(rng)};
    const double depth = 1.0 + 5.0 * U(rng);
    const Eigen::Vector3d ray = Kinv * Eigen::Vector3d(p.u, p.v, 1.0);
    const Eigen::Vector3d X = cam.R[from].transpose() * (depth * ray / ray.z()) + vec(cam.centers[from]);
    const auto q = project(K, cam.R[to], cam.centers[to], v3(X));
    if (!q) continue;
    const double nz = cfg.correspondence_noise;
    out.push_back({{round_to(p.u, 1e-6), round_to(p.v, 1e-6)},
                   {round_to(q->u + nz * noise(rng), 1e-6), round_to(q->v + nz * noise(rng), 1e-6)}});
  }
  const auto n_out = static_cast<std::size_t>(std::round(cfg.outlier_fraction * static_cast<double>(out.size())));
  std::vector<std::size_t> idx(out.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t k = 0; k < n_out; ++k) out[idx[k]].dst = {round_to(U(rng), 1e-6), round_to(U(rng), 1e-6)};
  return out;
}

std::vector<double> semantic_features(const Scenario& s, std::size_t f, Rng& rng, const SynthConfig& cfg) {
  std::normal_distribution<double> noise(0.0, cfg.semantic_noise);
  std::vector<double> feat(cfg.d_sem, 0.0);
  if (static_cast<int>(f) >= s.intent_onset) {
    const auto g = project(s.K, s.rotations[f], s.camera_centers[f], s.goal);
    if (g) {
      feat[0] = g->u - 0.5 + noise(rng);
      feat[1] = g->v - 0.5 + noise(rng);
      feat[2] = 1.0;
    }
  }
  for (std::size_t k = 0; k < kAllArchetypes.size(); ++k)
    feat[3 + k] = (kAllArchetypes[k] == s.archetype ? 1.0 : 0.0) + noise(rng);
  const double phase = static_cast<double>(f) / static_cast<double>(s.frames() - 1);
  for (std::size_t k = 8; k < cfg.d_sem; ++k) {
    const double freq = std::numbers::pi * static_cast<double>((k - 8) / 2 + 1);
    feat[k] = (k - 8) % 2 == 0 ? std::sin(freq * phase) : std::cos(freq * phase);
  }
  return feat;
}

}  // namespace

Scenario generate_scenario(Archetype archetype, std::uint64_t seed, bool egomotion_heavy, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t T = cfg.frames();
  const double dt = 1.0 / cfg.fps;
  const double rate = cfg.rotation_rate * (egomotion_heavy ? cfg.heavy_multiplier : 1.0);

  Scenario s;
  s.archetype = archetype;
  s.egomotion_heavy = egomotion_heavy;
  s.seed = seed;
  s.n_past = cfg.n_past;
  s.n_future = cfg.n_future;
  s.fps = cfg.fps;
  s.width = cfg.width;
  s.height = cfg.height;
  s.canvas = cfg.canvas;
  s.canvas_index = cfg.canvas == CanvasConvention::first ? 0 : cfg.n_past - 1;
  s.K = cfg.intrinsics();

  Camera cam;
  HandPath hp;
  bool ok = false;
  for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
    cam = camera_path(rng, T, dt, rate, cfg.max_angle, cfg.translation_speed);
    hp = hand_path(archetype, rng, T, dt);
    s.frame_waypoints.clear();
    s.waypoints.clear();
    ok = true;
    for (std::size_t f = 0; f < T && ok; ++f) {
      const auto own = project(s.K, cam.R[f], cam.centers[f], hp.hand[f]);
      const auto canv = project(s.K, cam.R[s.canvas_index], cam.centers[s.canvas_index], hp.hand[f]);
      // The hand must be visible while observed; afterwards only on the canvas.
      ok = own && canv && inside(*canv) && (f >= cfg.n_past || inside(*own));
      if (ok) {
        s.frame_waypoints.push_back(*own);
        s.waypoints.push_back(*canv);
      }
    }
    const auto aff = project(s.K, cam.R[s.canvas_index], cam.centers[s.canvas_index], hp.affordance);
    ok = ok && aff && inside(*aff);
    if (ok) s.affordance = *aff;
  }
  if (!ok)
    throw std::runtime_error("scenario generation for " + to_string(archetype) + " exhausted " +
                             std::to_string(cfg.max_retries) + " retries without an in-frustum trajectory");

  s.rotations = cam.R;
  s.camera_centers = cam.centers;
  s.hand = hp.hand;
  s.goal = hp.goal;
  s.affordance_world = hp.affordance;
  for (std::size_t f = 0; f < T; ++f) s.to_canvas.push_back(relative_homography(s.K, cam.R[s.canvas_index], cam.R[f]));
  for (std::size_t f = 0; f + 1 < T; ++f) s.consecutive.push_back(relative_homography(s.K, cam.R[f + 1], cam.R[f]));
  for (std::size_t f = 0; f + 1 < T; ++f) s.consecutive_pairs.push_back(correspondences(rng, s.K, cam, f, f + 1, cfg));
  for (std::size_t f = 0; f < T; ++f) s.canvas_pairs.push_back(correspondences(rng, s.K, cam, f, s.canvas_index, cfg));
  s.intent_onset = static_cast<int>(s.last_observed()) - std::uniform_int_distribution<int>(0, 3)(rng);
  for (std::size_t f = 0; f < T; ++f) s.semantic.push_back(semantic_features(s, f, rng, cfg));
  return s;
}

double reprojection_residual(const Scenario& s) {
  double worst = 0.0;
  for (std::size_t f = 0; f < s.frames(); ++f) {
    const Point2 p = geo::apply_homography(s.to_canvas[f], s.frame_waypoints[f]);
    worst = std::max({worst, std::abs(p.u - s.waypoints[f].u), std::abs(p.v - s.waypoints[f].v)});
  }
  return worst;
}

std::string check_invariants(const Scenario& s, double residual_bound) {
  const std::size_t T = s.frames();
  if (s.n_past < 1 || s.n_future < 1) return "empty past or future span";
  if (s.waypoints.size() != T || s.frame_waypoints.size() != T || s.to_canvas.size() != T ||
      s.rotations.size() != T || s.semantic.size() != T || s.consecutive.size() + 1 != T)
    return "per-frame arrays do not match the frame count";
  for (const auto& p : s.waypoints)
    if (!inside(p)) return "waypoint outside [0,1]^2";
  if (!inside(s.affordance)) return "affordance center outside [0,1]^2";
  if (s.to_canvas[s.canvas_index].m != Eigen::Matrix3d::Identity()) return "canvas homography is not identity";
  bool rotation_only = true;
  for (const auto& c : s.camera_centers) rotation_only = rotation_only && c.x == 0 && c.y == 0 && c.z == 0;
  if (rotation_only) {
    const double r = reprojection_residual(s);
    if (!(r < residual_bound)) return "reprojection residual " + std::to_string(r) + " exceeds bound";
  }
  return {};
}

Scenario reslice(const Scenario& s, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("observation ratio must lie in (0,1)");
  const std::size_t T = s.frames();
  const auto n_past = static_cast<std::size_t>(
      std::clamp<long>(std::lround(ratio * static_cast<double>(T)), 2, static_cast<long>(T) - 1));
  Scenario out = s;
  out.n_past = n_past;
  out.n_future = T - n_past;
  const std::size_t c = s.canvas == CanvasConvention::first ? 0 : n_past - 1;
  if (c == s.canvas_index) return out;
  out.canvas_index = c;
  const Homography old_to_new = relative_homography(s.K, s.rotations[c], s.rotations[s.canvas_index]);
  for (std::size_t f = 0; f < T; ++f) {
    out.to_canvas[f] = relative_homography(s.K, s.rotations[c], s.rotations[f]);
    out.waypoints[f] = *project(s.K, s.rotations[c], s.camera_centers[c], s.hand[f]);
    for (auto& pr : out.canvas_pairs[f]) pr.dst = geo::apply_homography(old_to_new, pr.dst);
  }
  out.affordance = *project(s.K, s.rotations[c], s.camera_centers[c], s.affordance_world);
  return out;
}

// --------------------------------------------------------------- dataset

std::vector<const Scenario*> Dataset::split(const std::string& tag) const {
  std::vector<const Scenario*> out;
  for (const auto& s : scenarios)
    if (s.split == tag) out.push_back(&s);
  return out;
}

Dataset generate_dataset(std::size_t n, const SplitRatios& r, const SynthConfig& config, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("dataset needs at least one scenario");
  if (r.train < 0 || r.val < 0 || r.test < 0 || r.train + r.val + r.test <= 0)
    throw std::invalid_argument("split ratios must be nonnegative with a positive sum");
  config.validate();
  const double total = r.train + r.val + r.test;
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.train / total));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.val / total)));
  const std::size_t counts[3] = {std::min(n, n_train), n_val, n - std::min(n, n_train) - n_val};
  const char* tags[3] = {"train", "val", "test"};

  struct Slot {
    std::string split, id;
    std::size_t index_in_split;
  };
  std::vector<Slot> slots;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < counts[k]; ++i) {
      std::ostringstream id;
      id << tags[k] << '-' << std::setw(5) << std::setfill('0') << i;
      slots.push_back({tags[k], id.str(), i});
    }

  Dataset d;
  d.config = config;
  d.seed = seed;
  d.scenarios.resize(n);
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t is = 0; is < static_cast<std::ptrdiff_t>(n); ++is) {
    const auto i = static_cast<std::size_t>(is);
    const std::uint64_t sseed = splitmix64(seed ^ splitmix64(i + 1));
    Rng tag_rng(splitmix64(sseed));
    const bool heavy = std::bernoulli_distribution(config.heavy_fraction)(tag_rng);
    const Archetype a = config.archetypes[slots[i].index_in_split % config.archetypes.size()];
    try {
      Scenario s = generate_scenario(a, sseed, heavy, config);
      s.id = slots[i].id;
      s.split = slots[i].split;
      d.scenarios[i] = std::move(s);
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return d;
}

// ------------------------------------------------------------------ JSON

namespace {

json point(Point2 p) { return json::array({p.u, p.v}); }
Point2 point(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json vec3(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json mat9(const Eigen::Matrix3d& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}
Eigen::Matrix3d mat9(const json& j) {
  if (j.size() != 9) throw std::invalid_argument("expected 9 matrix entries");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(3 * r + c).get<double>();
  return m;
}
json pairs(const std::vector<geo::PointPair>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(json::array({p.src.u, p.src.v, p.dst.u, p.dst.v}));
  return a;
}
std::vector<geo::PointPair> pairs(const json& j) {
  std::vector<geo::PointPair> out;
  for (const auto& e : j)
    out.push_back({{e.at(0).get<double>(), e.at(1).get<double>()}, {e.at(2).get<double>(), e.at(3).get<double>()}});
  return out;
}

}  // namespace

json scenario_to_json(const Scenario& s) {
  json j;
  j["id"] = s.id;
  j["split"] = s.split;
  j["archetype"] = to_string(s.archetype);
  j["egomotion_heavy"] = s.egomotion_heavy;
  j["seed"] = s.seed;
  j["n_past"] = s.n_past;
  j["n_future"] = s.n_future;
  j["fps"] = s.fps;
  j["width"] = s.width;
  j["height"] = s.height;
  j["canvas"] = to_string(s.canvas);
  j["canvas_index"] = s.canvas_index;
  j["intrinsics"] = json::array({s.K.fx, s.K.fy, s.K.cx, s.K.cy});
  j["intent_onset"] = s.intent_onset;
  j["goal"] = vec3(s.goal);
  j["affordance_world"] = vec3(s.affordance_world);
  j["affordance"] = point(s.affordance);
  auto& rot = j["rotations"] = json::array();
  for (const auto& R : s.rotations) rot.push_back(mat9(R));
  auto& cc = j["camera_centers"] = json::array();
  for (const auto& c : s.camera_centers) cc.push_back(vec3(c));
  auto& hand = j["hand"] = json::array();
  for (const auto& h : s.hand) hand.push_back(vec3(h));
  auto& fw = j["frame_waypoints"] = json::array();
  for (const auto& p : s.frame_waypoints) fw.push_back(point(p));
  auto& wp = j["waypoints"] = json::array();
  for (const auto& p : s.waypoints) wp.push_back(point(p));
  auto& tc = j["to_canvas"] = json::array();
  for (const auto& h : s.to_canvas) tc.push_back(mat9(h.m));
  auto& cs = j["consecutive"] = json::array();
  for (const auto& h : s.consecutive) cs.push_back(mat9(h.m));
  auto& cp = j["consecutive_pairs"] = json::array();
  for (const auto& p : s.consecutive_pairs) cp.push_back(pairs(p));
  auto& kp = j["canvas_pairs"] = json::array();
  for (const auto& p : s.canvas_pairs) kp.push_back(pairs(p));
  j["semantic"] = s.semantic;
  return j;
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.id = j.at("id").get<std::string>();
  s.split = j.at("split").get<std::string>();
  s.archetype = archetype_from_string(j.at("archetype").get<std::string>());
  s.egomotion_heavy = j.at("egomotion_heavy").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_past = j.at("n_past").get<std::size_t>();
  s.n_future = j.at("n_future").get<std::size_t>();
  s.fps = j.at("fps").get<double>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.canvas = canvas_from_string(j.at("canvas").get<std::string>());
  s.canvas_index = j.at("canvas_index").get<std::size_t>();
  const auto& k = j.at("intrinsics");
  s.K = {k.at(0).get<double>(), k.at(1).get<double>(), k.at(2).get<double>(), k.at(3).get<double>()};
  s.intent_onset = j.at("intent_onset").get<int>();
  s.goal = vec3(j.at("goal"));
  s.affordance_world = vec3(j.at("affordance_world"));
  s.affordance = point(j.at("affordance"));
  for (const auto& e : j.at("rotations")) s.rotations.push_back(mat9(e));
  for (const auto& e : j.at("camera_centers")) s.camera_centers.push_back(vec3(e));
  for (const auto& e : j.at("hand")) s.hand.push_back(vec3(e));
  for (const auto& e : j.at("frame_waypoints")) s.frame_waypoints.push_back(point(e));
  for (const auto& e : j.at("waypoints")) s.waypoints.push_back(point(e));
  for (const auto& e : j.at("to_canvas")) s.to_canvas.push_back(Homography::from_matrix(mat9(e)));
  for (const auto& e : j.at("consecutive")) s.consecutive.push_back(Homography::from_matrix(mat9(e)));
  for (const auto& e : j.at("consecutive_pairs")) s.consecutive_pairs.push_back(pairs(e));
  for (const auto& e : j.at("canvas_pairs")) s.canvas_pairs.push_back(pairs(e));
  s.semantic = j.at("semantic").get<std::vector<std::vector<double>>>();
  const std::size_t T = s.n_past + s.n_future;
  if (s.n_past < 1 || s.n_future < 1 || s.waypoints.size() != T || s.frame_waypoints.size() != T ||
      s.to_canvas.size() != T || s.rotations.size() != T || s.semantic.size() != T || s.canvas_index >= T)
    throw std::invalid_argument("scenario " + s.id + ": per-frame arrays inconsistent with n_past + n_future");
  return s;
}

json config_to_json(const SynthConfig& c) {
  json arch = json::array();
  for (Archetype a : c.archetypes) arch.push_back(to_string(a));
  return {{"n_past", c.n_past},
          {"n_future", c.n_future},
          {"fps", c.fps},
          {"width", c.width},
          {"height", c.height},
          {"focal_px", c.focal_px},
          {"canvas", to_string(c.canvas)},
          {"rotation_rate", c.rotation_rate},
          {"max_angle", c.max_angle},
          {"heavy_fraction", c.heavy_fraction},
          {"heavy_multiplier", c.heavy_multiplier},
          {"translation_speed", c.translation_speed},
          {"correspondences", c.correspondences},
          {"outlier_fraction", c.outlier_fraction},
          {"correspondence_noise", c.correspondence_noise},
          {"d_sem", c.d_sem},
          {"semantic_noise", c.semantic_noise},
          {"archetypes", arch},
          {"max_retries", c.max_retries}};
}

SynthConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth config must be an object");
  SynthConfig c;
  const std::set<std::string> known{"n_past",          "n_future",         "fps",
                                    "width",           "height",           "focal_px",
                                    "canvas",          "rotation_rate",    "max_angle",
                                    "heavy_fraction",  "heavy_multiplier", "translation_speed",
                                    "correspondences", "outlier_fraction", "correspondence_noise",
                                    "d_sem",           "semantic_noise",   "archetypes",
                                    "max_retries"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw std::invalid_argument("key '" + std::string(key) + "' has the wrong type");
    }
  };
  get("n_past", c.n_past);
  get("n_future", c.n_future);
  get("fps", c.fps);
  get("width", c.width);
  get("height", c.height);
  get("focal_px", c.focal_px);
  get("rotation_rate", c.rotation_rate);
  get("max_angle", c.max_angle);
  get("heavy_fraction", c.heavy_fraction);
  get("heavy_multiplier", c.heavy_multiplier);
  get("translation_speed", c.translation_speed);
  get("correspondences", c.correspondences);
  get("outlier_fraction", c.outlier_fraction);
  get("correspondence_noise", c.correspondence_noise);
  get("d_sem", c.d_sem);
  get("semantic_noise", c.semantic_noise);
  get("max_retries", c.max_retries);
  if (j.contains("canvas")) c.canvas = canvas_from_string(j.at("canvas").get<std::string>());
  if (j.contains("archetypes")) {
    c.archetypes.clear();
    const auto& arr = j.at("archetypes");
    if (!arr.is_array()) throw std::invalid_argument("key 'archetypes' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      try {
        c.archetypes.push_back(archetype_from_string(arr.at(i).get<std::string>()));
      } catch (const std::exception& e) {
        throw std::invalid_argument("archetypes[" + std::to_string(i) + "]: " + e.what());
      }
    }
  }
  c.validate();
  return c;
}

void write_dataset(const Dataset& d, std::ostream& out) {
  json header{{"format", "madiff-synth"},
              {"version", kDatasetFormatVersion},
              {"n_past", d.config.n_past},
              {"n_future", d.config.n_future},
              {"fps", d.config.fps},
              {"canvas", to_string(d.config.canvas)},
              {"seed", d.seed},
              {"count", d.scenarios.size()},
              {"config", config_to_json(d.config)}};
  out << header.dump() << '\n';
  for (const auto& s : d.scenarios) out << scenario_to_json(s).dump() << '\n';
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  write_dataset(d, out);
  out.flush();
  if (!out) throw std::ios_base::failure("write to " + path.string() + " failed");
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset is empty");
  const json header = json::parse(line);
  if (header.value("format", "") != "madiff-synth") throw std::invalid_argument("not a synthetic dataset file");
  const int version = header.at("version").get<int>();
  if (version > kDatasetFormatVersion)
    throw std::invalid_argument("dataset format version " + std::to_string(version) + " is newer than supported " +
                                std::to_string(kDatasetFormatVersion));
  Dataset d;
  d.config = config_from_json(header.at("config"));
  d.seed = header.at("seed").get<std::uint64_t>();
  std::vector<std::string> lines;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(std::move(line));
  const auto count = header.at("count").get<std::size_t>();
  if (lines.size() != count)
    throw std::invalid_argument("dataset header promises " + std::to_string(count) + " scenarios, file has " +
                                std::to_string(lines.size()));
  d.scenarios.resize(lines.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(lines.size()); ++i) {
    try {
      d.scenarios[static_cast<std::size_t>(i)] = scenario_from_json(json::parse(lines[static_cast<std::size_t>(i)]));
    } catch (const std::exception& e) {
#pragma omp critical
      failure = "line " + std::to_string(i + 2) + ": " + e.what();
    }
  }
  if (!failure.empty()) throw std::invalid_argument(failure);
  return d;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  return read_dataset(in);
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace madiff::synth
