#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "madiff/geometry.hpp"

using namespace madiff::geo;

namespace {

// Mild random projective map that keeps [0,1]^2 well inside the frustum.
Homography random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Eigen::Matrix3d m;
  m << 1 + 0.2 * d(rng), 0.2 * d(rng), 0.1 * d(rng), 0.2 * d(rng), 1 + 0.2 * d(rng), 0.1 * d(rng), 0.2 * d(rng),
      0.2 * d(rng), 1.0;
  return Homography::from_matrix(m);
}

std::vector<PointPair> project(const Homography& H, std::size_t n, std::mt19937_64& rng, double noise = 0.0) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, noise > 0 ? noise : 1.0);
  std::vector<PointPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p{unit(rng), unit(rng)};
    Point2 q = apply_homography(H, p);
    if (noise > 0) {
      q.u += gauss(rng);
      q.v += gauss(rng);
    }
    out.push_back({p, q});
  }
  return out;
}

double rel_frobenius(const Homography& a, const Homography& b) { return (a.m - b.m).norm() / b.m.norm(); }

Eigen::Matrix3d rotation(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

}  // namespace

TEST(Homography, FromMatrixNormalizes) {
  Eigen::Matrix3d m = 2.0 * Eigen::Matrix3d::Identity();
  EXPECT_EQ(Homography::from_matrix(m).m, Eigen::Matrix3d::Identity());
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(2, 2) = 0.0;
  EXPECT_THROW(Homography::from_matrix(bad), GeometryError);
  EXPECT_THROW(Homography::from_matrix(Eigen::Matrix3d::Ones()), GeometryError);
}

TEST(ApplyHomography, IdentityAndTranslation) {
  EXPECT_EQ(apply_homography(Homography::identity(), {0.3, 0.9}), (Point2{0.3, 0.9}));
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 2) = 0.1;
  t(1, 2) = 0.2;
  const Point2 q = apply_homography(Homography::from_matrix(t), {0.5, 0.5});
  EXPECT_NEAR(q.u, 0.6, 1e-15);
  EXPECT_NEAR(q.v, 0.7, 1e-15);
}

TEST(ApplyHomography, InverseRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Homography H = random_homography(rng);
    const Point2 p{unit(rng), unit(rng)};
    const Point2 back = apply_homography(H.inverse(), apply_homography(H, p));
    EXPECT_NEAR(back.u, p.u, 1e-12);
    EXPECT_NEAR(back.v, p.v, 1e-12);
  }
}

TEST(ApplyHomography, PointAtInfinityThrows) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = -1.0;  // w = 1 - u
  EXPECT_THROW(apply_homography(Homography::from_matrix(m), {1.0, 0.2}), GeometryError);
}

TEST(Dlt, IdentityAndTranslation) {
  std::vector<PointPair> id, tr;
  for (Point2 p : {Point2{0.1, 0.1}, Point2{0.9, 0.2}, Point2{0.8, 0.8}, Point2{0.2, 0.7}, Point2{0.5, 0.4}}) {
    id.push_back({p, p});
    tr.push_back({p, {p.u + 0.1, p.v + 0.2}});
  }
  EXPECT_LT((dlt_homography(id).m - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  Eigen::Matrix3d expect = Eigen::Matrix3d::Identity();
  expect(0, 2) = 0.1;
  expect(1, 2) = 0.2;
  EXPECT_LT((dlt_homography(tr).m - expect).norm(), 1e-12);
}

TEST(Dlt, NoiselessRecoveryOverRandomDraws) {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const Homography H = random_homography(rng);
    worst = std::max(worst, rel_frobenius(dlt_homography(project(H, 20, rng)), H));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Dlt, MinimalSampleIsExact) {
  std::mt19937_64 rng(3);
  const Homography H = random_homography(rng);
  EXPECT_LT(rel_frobenius(dlt_homography(project(H, 4, rng)), H), 1e-10);
}

TEST(Dlt, UniformCoordinateScalingIsEquivariant) {
  std::mt19937_64 rng(4);
  for (double c : {0.01, 3.0, 512.0}) {
    const Homography H = random_homography(rng);
    auto pairs = project(H, 12, rng);
    const Homography base = dlt_homography(pairs);
    for (auto& p : pairs) {
      p.src.u *= c, p.src.v *= c, p.dst.u *= c, p.dst.v *= c;
    }
    const Eigen::Matrix3d S = Eigen::Vector3d(c, c, 1.0).asDiagonal();
    const Homography expect = Homography::from_matrix(S * base.m * S.inverse());
    EXPECT_LT(rel_frobenius(dlt_homography(pairs), expect), 1e-10) << "scale " << c;
  }
}

TEST(Dlt, DegenerateConfigurationsThrow) {
  std::vector<PointPair> collinear;
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) collinear.push_back({{t, t}, {t, 0.5 * t}});
  EXPECT_THROW(dlt_homography(collinear), GeometryError);
  std::vector<PointPair> three(3, PointPair{{0.1, 0.2}, {0.3, 0.4}});
  EXPECT_THROW(dlt_homography(three), GeometryError);
  std::vector<PointPair> repeated(6, PointPair{{0.1, 0.2}, {0.3, 0.4}});
  EXPECT_THROW(dlt_homography(repeated), GeometryError);
}

TEST(Ransac, AllInliersMatchesPlainDlt) {
  std::mt19937_64 rng(5);
  const Homography H = random_homography(rng);
  const auto pairs = project(H, 40, rng);
  const auto r = ransac_homography(pairs, {.seed = 1});
  EXPECT_EQ(r.inlier_count, pairs.size());
  for (bool b : r.inliers) EXPECT_TRUE(b);
  EXPECT_LT(rel_frobenius(r.H, dlt_homography(pairs)), 1e-10);
}

namespace {

struct Contaminated {
  Homography truth;
  std::vector<PointPair> pairs;
  std::vector<bool> is_inlier;
};

Contaminated contaminate(std::mt19937_64& rng, std::size_t n, double outlier_fraction, double noise) {
  Contaminated c{random_homography(rng), {}, {}};
  c.pairs = project(c.truth, n, rng, noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n_out = static_cast<std::size_t>(std::round(outlier_fraction * static_cast<double>(n)));
  c.is_inlier.assign(n, true);
  for (std::size_t i = 0; i < n_out; ++i) {
    c.pairs[i].dst = {unit(rng), unit(rng)};
    c.is_inlier[i] = false;
  }
  return c;
}

double max_inlier_reprojection(const Contaminated& c, const Homography& H) {
  double worst = 0.0;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    if (!c.is_inlier[i]) continue;
    const Point2 a = apply_homography(H, c.pairs[i].src), b = apply_homography(c.truth, c.pairs[i].src);
    worst = std::max(worst, std::hypot(a.u - b.u, a.v - b.v));
  }
  return worst;
}

}  // namespace

TEST(Ransac, SeventyPercentInliers) {
  std::mt19937_64 rng(6);
  const auto c = contaminate(rng, 100, 0.3, 2e-4);
  const auto r = ransac_homography(c.pairs, {.threshold = 2e-3, .max_iters = 500, .seed = 7});
  EXPECT_LT(max_inlier_reprojection(c, r.H), 1e-3);
  EXPECT_GE(r.inlier_count, 65u);
}

TEST(Ransac, RecoveryRateAtThirtyPercentOutliers) {
  int successes = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    const auto c = contaminate(rng, 30, 0.3, 2e-4);
    try {
      const auto r = ransac_homography(c.pairs, {.seed = trial});
      if (max_inlier_reprojection(c, r.H) < 1e-3) ++successes;
    } catch (const GeometryError&) {
    }
  }
  EXPECT_GE(successes, 95);
}

TEST(Ransac, PureOutliersThrow) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PointPair> pairs;
  for (int i = 0; i < 60; ++i) pairs.push_back({{unit(rng), unit(rng)}, {unit(rng), unit(rng)}});
  EXPECT_THROW(ransac_homography(pairs, {.seed = 3}), GeometryError);
}

TEST(ComposeToCanvas, IdentityChain) {
  const std::vector<Homography> chain(4);
  for (const auto& h : compose_to_canvas(chain, 2)) EXPECT_EQ(h.m, Eigen::Matrix3d::Identity());
}

TEST(ComposeToCanvas, CanvasEntryIsExactlyIdentity) {
  std::mt19937_64 rng(9);
  std::vector<Homography> chain;
  for (int i = 0; i < 6; ++i) chain.push_back(random_homography(rng));
  for (std::size_t canvas = 0; canvas < 7; ++canvas)
    EXPECT_EQ(compose_to_canvas(chain, canvas)[canvas].m, Eigen::Matrix3d::Identity());
  EXPECT_THROW(compose_to_canvas(chain, 7), GeometryError);
}

TEST(ComposeToCanvas, RotationChainAgreesWithDirectProducts) {
  const Intrinsics K{0.9, 1.2, 0.5, 0.5};
  std::vector<Eigen::Matrix3d> R{Eigen::Matrix3d::Identity()};
  for (int i = 1; i < 5; ++i) R.push_back(rotation(0.03 * i, -0.02 * i, 0.01) * R.back());
  std::vector<Homography> chain;
  for (int i = 0; i < 4; ++i) chain.push_back(rotation_camera_homography(K, R[i + 1] * R[i].transpose()));
  for (std::size_t canvas : {std::size_t{0}, std::size_t{4}}) {
    const auto composed = compose_to_canvas(chain, canvas);
    for (std::size_t t = 0; t < 5; ++t) {
      const Homography direct = rotation_camera_homography(K, R[canvas] * R[t].transpose());
      EXPECT_LT((composed[t].m - direct.m).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
    }
  }
}

TEST(RotationHomography, IdentityRotation) {
  EXPECT_LT((rotation_camera_homography({0.8, 1.1, 0.5, 0.5}, Eigen::Matrix3d::Identity()).m -
             Eigen::Matrix3d::Identity())
                .norm(),
            1e-15);
}

TEST(RotationHomography, DeterminantIsOne) {
  const Homography H = rotation_camera_homography({0.8, 1.1, 0.45, 0.55}, rotation(0.2, -0.1, 0.05));
  // K R K^-1 is similar to R, so det = 1 before h33 normalization.
  const Eigen::Matrix3d raw = Intrinsics{0.8, 1.1, 0.45, 0.55}.matrix() * rotation(0.2, -0.1, 0.05) *
                              Intrinsics{0.8, 1.1, 0.45, 0.55}.matrix().inverse();
  EXPECT_NEAR(raw.determinant(), 1.0, 1e-12);
  EXPECT_LT((raw / raw(2, 2) - H.m).norm(), 1e-12);
  EXPECT_NEAR(H.m.determinant() * std::pow(raw(2, 2), 3), 1.0, 1e-12);
}

TEST(RotationHomography, RejectsNonOrthonormal) {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  R(0, 1) = 1e-6;
  EXPECT_THROW(rotation_camera_homography({}, R), GeometryError);
}

TEST(RotationHomography, DltRecoversFromProjectedPoints) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> d(-0.5, 0.5), depth(1.0, 5.0);
  const Intrinsics K{0.9, 1.2, 0.5, 0.5};
  const Eigen::Matrix3d k = K.matrix();
  for (int draw = 0; draw < 20; ++draw) {
    const Eigen::Matrix3d R = rotation(0.3 * d(rng), 0.3 * d(rng), 0.1 * d(rng));
    std::vector<PointPair> pairs;
    for (int i = 0; i < 16; ++i) {
      const Eigen::Vector3d X(d(rng), d(rng), depth(rng));
      const Eigen::Vector3d a = k * X, b = k * R * X;
      pairs.push_back({{a.x() / a.z(), a.y() / a.z()}, {b.x() / b.z(), b.y() / b.z()}});
    }
    EXPECT_LT(rel_frobenius(dlt_homography(pairs), rotation_camera_homography(K, R)), 1e-8);
  }
}
