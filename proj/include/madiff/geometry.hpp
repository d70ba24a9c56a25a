#pragma once

// Planar projective geometry in normalized image coordinates ([0,1]^2 spans
// the image). Homographies are 3x3, row-major, normalized so h33 = 1.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace madiff::geo {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double u = 0.0;
  double v = 0.0;
  bool operator==(const Point2&) const = default;
};

struct PointPair {
  Point2 src;
  Point2 dst;
};

struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  static Homography identity() { return {}; }
  // Scales so h33 = 1; throws GeometryError if h33 vanishes or the result is
  // singular (|det| <= 1e-12).
  static Homography from_matrix(const Eigen::Matrix3d& raw);
  static Homography from_row_major(std::span<const double> nine);

  std::array<double, 9> row_major() const;
  Homography inverse() const;
  // (a * b) maps p through b first, then a.
  friend Homography operator*(const Homography& a, const Homography& b) { return from_matrix(a.m * b.m); }
};

// p' = dehomogenize(H [u, v, 1]); throws when the point maps to infinity.
Point2 apply_homography(const Homography& H, Point2 p);

// Least-squares normalized DLT over >= 4 pairs. Throws GeometryError on a
// rank-deficient design (collinear or repeated points).
Homography dlt_homography(std::span<const PointPair> pairs);

// RMS of the forward and backward transfer distances of one pair.
double symmetric_transfer_error(const Homography& H, const Homography& H_inv, const PointPair& pair);

struct RansacOptions {
  double threshold = 2e-3;
  std::size_t max_iters = 500;
  std::uint64_t seed = 0;
  double confidence = 0.999;  // adaptive early stop; 1.0 disables it
  // Consensus needed to accept a model. A minimal sample always supports its
  // own model, so the default asks for one pair more than the sample.
  std::size_t min_inliers = 5;
};

struct RansacResult {
  Homography H;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  std::size_t iterations = 0;
};

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacOptions& options = {});

// consecutive[i] maps frame i to frame i+1. Returns, for every frame t, the
// map from frame t to frame `canvas`. The canvas entry is exactly I.
std::vector<Homography> compose_to_canvas(std::span<const Homography> consecutive, std::size_t canvas);

// Pinhole intrinsics expressed in normalized image coordinates.
struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
  Eigen::Matrix3d matrix() const;
};

// H = K R K^-1 for a pure camera rotation R. Throws when ||R^T R - I|| > 1e-9.
Homography rotation_camera_homography(const Intrinsics& K, const Eigen::Matrix3d& R);

}  // namespace madiff::geo
