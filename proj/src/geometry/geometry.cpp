#include "madiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace madiff::geo {

Homography Homography::from_matrix(const Eigen::Matrix3d& raw) {
  if (!raw.allFinite()) throw GeometryError("homography has non-finite entries");
  if (std::abs(raw(2, 2)) < 1e-12) throw GeometryError("homography cannot be normalized: h33 = 0");
  Homography h;
  h.m = raw / raw(2, 2);
  if (std::abs(h.m.determinant()) <= 1e-12) throw GeometryError("homography is singular");
  return h;
}

Homography Homography::from_row_major(std::span<const double> nine) {
  if (nine.size() != 9) throw GeometryError("homography needs 9 values, got " + std::to_string(nine.size()));
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = nine[3 * r + c];
  return from_matrix(m);
}

std::array<double, 9> Homography::row_major() const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[3 * r + c] = m(r, c);
  return out;
}

Homography Homography::inverse() const { return from_matrix(m.inverse()); }

Point2 apply_homography(const Homography& H, Point2 p) {
  const Eigen::Vector3d q = H.m * Eigen::Vector3d(p.u, p.v, 1.0);
  if (std::abs(q.z()) < 1e-12) throw GeometryError("point maps to infinity");
  return {q.x() / q.z(), q.y() / q.z()};
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d hartley(std::span<const PointPair> pairs, bool source) {
  double mu = 0.0, mv = 0.0;
  for (const auto& pr : pairs) {
    const Point2& p = source ? pr.src : pr.dst;
    mu += p.u;
    mv += p.v;
  }
  mu /= static_cast<double>(pairs.size());
  mv /= static_cast<double>(pairs.size());
  double dist = 0.0;
  for (const auto& pr : pairs) {
    const Point2& p = source ? pr.src : pr.dst;
    dist += std::hypot(p.u - mu, p.v - mv);
  }
  dist /= static_cast<double>(pairs.size());
  if (!(dist > 1e-15)) throw GeometryError("degenerate correspondences: all points coincide");
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d T;
  T << s, 0, -s * mu, 0, s, -s * mv, 0, 0, 1;
  return T;
}

}  // namespace

Homography dlt_homography(std::span<const PointPair> pairs) {
  const std::size_t n = pairs.size();
  if (n < 4) throw GeometryError("DLT needs at least 4 correspondences, got " + std::to_string(n));
  const Eigen::Matrix3d Ts = hartley(pairs, true);
  const Eigen::Matrix3d Td = hartley(pairs, false);
  Eigen::MatrixXd design(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d s = Ts * Eigen::Vector3d(pairs[i].src.u, pairs[i].src.v, 1.0);
    const Eigen::Vector3d d = Td * Eigen::Vector3d(pairs[i].dst.u, pairs[i].dst.v, 1.0);
    const double x = s.x(), y = s.y(), u = d.x(), v = d.y();
    design.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    design.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) <= 1e-9 * sv(0)) throw GeometryError("degenerate correspondences: rank-deficient DLT design");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography::from_matrix(Td.inverse() * Hn * Ts);
}

double symmetric_transfer_error(const Homography& H, const Homography& H_inv, const PointPair& pair) {
  const Point2 f = apply_homography(H, pair.src);
  const Point2 b = apply_homography(H_inv, pair.dst);
  const double ef = (f.u - pair.dst.u) * (f.u - pair.dst.u) + (f.v - pair.dst.v) * (f.v - pair.dst.v);
  const double eb = (b.u - pair.src.u) * (b.u - pair.src.u) + (b.v - pair.src.v) * (b.v - pair.src.v);
  return std::sqrt(0.5 * (ef + eb));
}

namespace {

std::size_t mark_inliers(std::span<const PointPair> pairs, const Homography& H, double threshold,
                         std::vector<bool>& mask) {
  mask.assign(pairs.size(), false);
  Homography inv;
  try {
    inv = H.inverse();
  } catch (const GeometryError&) {
    return 0;
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double e;
    try {
      e = symmetric_transfer_error(H, inv, pairs[i]);
    } catch (const GeometryError&) {
      continue;
    }
    if (e < threshold) {
      mask[i] = true;
      ++count;
    }
  }
  return count;
}

std::vector<PointPair> select(std::span<const PointPair> pairs, const std::vector<bool>& mask) {
  std::vector<PointPair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (mask[i]) out.push_back(pairs[i]);
  return out;
}

}  // namespace

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacOptions& options) {
  const std::size_t n = pairs.size();
  if (n < 4) throw GeometryError("RANSAC needs at least 4 correspondences, got " + std::to_string(n));
  if (!(options.threshold > 0.0)) throw GeometryError("RANSAC threshold must be positive");
  const std::size_t needed = std::min(n, std::max<std::size_t>(4, options.min_inliers));

  std::mt19937_64 rng(options.seed);
  RansacResult best;
  std::vector<bool> mask;
  std::size_t budget = options.max_iters;
  std::array<std::size_t, 4> idx{};
  std::array<PointPair, 4> sample;
  std::size_t it = 0;
  for (; it < budget; ++it) {
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
      sample[k] = pairs[idx[k]];
    }
    Homography H;
    try {
      H = dlt_homography(sample);
    } catch (const GeometryError&) {
      continue;
    }
    const std::size_t count = mark_inliers(pairs, H, options.threshold, mask);
    if (count > best.inlier_count) {
      best.H = H;
      best.inliers = mask;
      best.inlier_count = count;
      if (options.confidence < 1.0) {
        const double w = static_cast<double>(count) / static_cast<double>(n);
        const double miss = 1.0 - std::pow(w, 4);
        if (miss <= 0.0) {
          budget = it + 1;
        } else {
          const double k = std::log(1.0 - options.confidence) / std::log(miss);
          if (k < static_cast<double>(budget)) budget = std::max(it + 1, static_cast<std::size_t>(std::ceil(k)));
        }
      }
    }
  }
  if (best.inlier_count < needed)
    throw GeometryError("RANSAC found no consensus: best model has " + std::to_string(best.inlier_count) +
                        " inliers, need " + std::to_string(needed));

  // Refit on the consensus set until it stops changing (bounded).
  for (int round = 0; round < 3; ++round) {
    Homography refit;
    try {
      refit = dlt_homography(select(pairs, best.inliers));
    } catch (const GeometryError&) {
      break;
    }
    const std::size_t count = mark_inliers(pairs, refit, options.threshold, mask);
    if (count < best.inlier_count) break;
    const bool same = mask == best.inliers;
    best.H = refit;
    best.inliers = mask;
    best.inlier_count = count;
    if (same) break;
  }
  best.iterations = it;
  return best;
}

std::vector<Homography> compose_to_canvas(std::span<const Homography> consecutive, std::size_t canvas) {
  const std::size_t frames = consecutive.size() + 1;
  if (canvas >= frames)
    throw GeometryError("canvas index " + std::to_string(canvas) + " outside chain of " + std::to_string(frames) +
                        " frames");
  std::vector<Homography> out(frames);
  for (std::size_t t = canvas; t-- > 0;) out[t] = out[t + 1] * consecutive[t];
  for (std::size_t t = canvas + 1; t < frames; ++t) out[t] = out[t - 1] * consecutive[t - 1].inverse();
  return out;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

Homography rotation_camera_homography(const Intrinsics& K, const Eigen::Matrix3d& R) {
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() > 1e-9)
    throw GeometryError("rotation is not orthonormal");
  const Eigen::Matrix3d k = K.matrix();
  return Homography::from_matrix(k * R * k.inverse());
}

}  // namespace madiff::geo
