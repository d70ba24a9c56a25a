#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "madiff/losses.hpp"
#include "madiff/metrics.hpp"

using namespace madiff;
using metrics::SaliencyMap;
using metrics::Trajectory;

namespace {

Trajectory random_traj(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Trajectory t(n);
  for (auto& p : t) p = {u(rng), u(rng)};
  return t;
}

SaliencyMap random_map(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SaliencyMap m(w, h);
  for (double& v : m.values) v = u(rng);
  return m;
}

}  // namespace

TEST(Displacement, ReferenceValues) {
  const Trajectory gt{{0.1, 0.2}, {0.3, 0.1}, {0.5, 0.5}};
  EXPECT_EQ(metrics::ade(gt, gt), 0.0);
  EXPECT_EQ(metrics::fde(gt, gt), 0.0);
  Trajectory off = gt;
  for (auto& p : off) p = {p.u + 0.3, p.v + 0.4};
  EXPECT_NEAR(metrics::ade(off, gt), 0.5, 1e-12);
  EXPECT_NEAR(metrics::fde(off, gt), 0.5, 1e-12);
  EXPECT_THROW(metrics::ade({}, {}), std::invalid_argument);
  EXPECT_THROW(metrics::fde(gt, {{0, 0}}), std::invalid_argument);
}

TEST(Displacement, AdeMatchesBruteForceAndLoss) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    const Trajectory p = random_traj(n, rng), g = random_traj(n, rng);
    long double brute = 0.0L;
    for (std::size_t t = 0; t < n; ++t) brute += std::hypot(static_cast<long double>(p[t].u - g[t].u), p[t].v - g[t].v);
    EXPECT_NEAR(metrics::ade(p, g), static_cast<double>(brute / n), 1e-14);

    dg::Graph graph;
    dg::Tensor tp({n, 2}), tg({n, 2});
    for (std::size_t t = 0; t < n; ++t) {
      tp.at(t, 0) = p[t].u;
      tp.at(t, 1) = p[t].v;
      tg.at(t, 0) = g[t].u;
      tg.at(t, 1) = g[t].v;
    }
    EXPECT_EQ(metrics::ade(p, g),
              losses::displacement_loss(graph.constant(tp), graph.constant(tg)).value().item());
  }
}

TEST(Wde, UniformWeightsReduceToMeanAde) {
  std::mt19937_64 rng(2);
  const Trajectory gt = random_traj(4, rng);
  std::vector<Trajectory> samples{random_traj(4, rng), random_traj(4, rng), random_traj(4, rng)};
  double mean_ade = 0.0;
  for (const auto& s : samples) mean_ade += metrics::ade(s, gt) / 3.0;
  EXPECT_NEAR(metrics::wde(samples, gt, {1, 1, 1, 1}), mean_ade, 1e-14);
  EXPECT_EQ(metrics::wde({gt}, gt), 0.0);
}

TEST(Wde, HandComputedTwoSamples) {
  const Trajectory gt{{0, 0}, {0, 0}};
  // Distances: sample A (1, 2), sample B (3, 0); default weights (2/3, 4/3).
  const std::vector<Trajectory> samples{{{1, 0}, {0, 2}}, {{0, 3}, {0, 0}}};
  const double a = (2.0 / 3.0 * 1 + 4.0 / 3.0 * 2) / 2.0, b = (2.0 / 3.0 * 3) / 2.0;
  EXPECT_NEAR(metrics::wde(samples, gt), (a + b) / 2.0, 1e-15);
  const auto w = metrics::default_wde_weights(2);
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 4.0 / 3.0, 1e-15);
}

TEST(Wde, RejectsBadWeights) {
  const Trajectory gt{{0, 0}, {0, 0}};
  EXPECT_THROW(metrics::wde({gt}, gt, {0, 0}), std::invalid_argument);
  EXPECT_THROW(metrics::wde({gt}, gt, {1, -1}), std::invalid_argument);
  EXPECT_THROW(metrics::wde({gt}, gt, {1}), std::invalid_argument);
  EXPECT_THROW(metrics::wde({}, gt), std::invalid_argument);
}

TEST(InteractionPoints, ReferenceValues) {
  const Trajectory t{{0, 0}, {0.5, 0.5}, {1, 1}};
  EXPECT_EQ(metrics::interaction_points({t}, {0.6, 0.6})[0], (geo::Point2{0.5, 0.5}));
  EXPECT_EQ(metrics::interaction_points({t}, {1, 1})[0], (geo::Point2{1, 1}));
  // Equidistant waypoints resolve to the earliest.
  EXPECT_EQ(metrics::interaction_points({{{0, 0}, {1, 0}}}, {0.5, 0.0})[0], (geo::Point2{0, 0}));
  EXPECT_THROW(metrics::interaction_points({{}}, {0, 0}), std::invalid_argument);
}

TEST(InteractionPoints, MatchesExhaustiveScan) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Trajectory t = random_traj(1 + trial % 7, rng);
    const geo::Point2 c{u(rng), u(rng)};
    std::vector<double> d2;
    for (const auto& p : t) d2.push_back((p.u - c.u) * (p.u - c.u) + (p.v - c.v) * (p.v - c.v));
    const auto k = std::min_element(d2.begin(), d2.end()) - d2.begin();
    EXPECT_EQ(metrics::interaction_points({t}, c)[0], t[static_cast<std::size_t>(k)]);
  }
}

TEST(AffordanceMap, SinglePointIsUnimodalAndNormalized) {
  const auto m = metrics::affordance_map({{0.3, 0.7}});
  EXPECT_NEAR(m.sum(), 1.0, 1e-12);
  const auto arg = std::max_element(m.values.begin(), m.values.end()) - m.values.begin();
  EXPECT_EQ(static_cast<std::size_t>(arg), m.cell_of({0.3, 0.7}));
  EXPECT_THROW(metrics::affordance_map({{0.5, 0.5}}, 0.0), std::invalid_argument);
}

TEST(AffordanceMap, TwoSeparatedPointsGiveTwoPeaks) {
  const auto m = metrics::affordance_map({{0.2, 0.2}, {0.8, 0.74}});
  std::vector<std::size_t> peaks;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      bool peak = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long nx = static_cast<long>(x) + dx, ny = static_cast<long>(y) + dy;
          if ((dx || dy) && nx >= 0 && ny >= 0 && nx < static_cast<long>(m.width) && ny < static_cast<long>(m.height))
            peak &= m.at(x, y) > m.at(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny));
        }
      if (peak) peaks.push_back(y * m.width + x);
    }
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_EQ(peaks[0], m.cell_of({0.2, 0.2}));
  EXPECT_EQ(peaks[1], m.cell_of({0.8, 0.74}));
}

TEST(Sim, IdentityDisjointAndSymmetry) {
  std::mt19937_64 rng(4);
  const auto p = random_map(8, 8, rng), q = random_map(8, 8, rng);
  EXPECT_NEAR(metrics::sim(p, p), 1.0, 1e-14);
  EXPECT_EQ(metrics::sim(p, q), metrics::sim(q, p));
  EXPECT_GE(metrics::sim(p, q), 0.0);
  EXPECT_LT(metrics::sim(p, q), 1.0);
  SaliencyMap a(2, 1), b(2, 1);
  a.values = {1, 0};
  b.values = {0, 3};
  EXPECT_EQ(metrics::sim(a, b), 0.0);
  EXPECT_THROW(metrics::sim(a, SaliencyMap(1, 2, 1.0)), std::invalid_argument);
}

TEST(AucJudd, SingleFixationOnUniqueMaximum) {
  std::mt19937_64 rng(5);
  auto m = random_map(16, 16, rng);
  m.values[37] = 2.0;
  EXPECT_EQ(metrics::auc_judd(m, {37}), 1.0);
  m.values[37] = -1.0;
  // On the unique minimum the only threshold admits every cell: a chance-level diagonal.
  EXPECT_EQ(metrics::auc_judd(m, {37}), 0.5);
}

TEST(AucJudd, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_map(10, 10, rng);
    std::vector<std::size_t> fix{static_cast<std::size_t>(trial), 99, 13, 50};
    const double base = metrics::auc_judd(m, fix);
    auto t = m;
    for (double& v : t.values) v = std::exp(3.0 * v) + v * v * v;
    EXPECT_EQ(metrics::auc_judd(t, fix), base);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
  }
}

TEST(Nss, WorkedExample) {
  SaliencyMap m(2, 2);
  m.values = {1, 2, 3, 4};
  EXPECT_NEAR(metrics::nss(m, {3}), 1.5 / std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(metrics::nss(m, {3}), 1.3416, 1e-4);
  EXPECT_THROW(metrics::nss(SaliencyMap(2, 2, 0.5), {0}), std::invalid_argument);
  EXPECT_THROW(metrics::nss(m, {4}), std::invalid_argument);
}

TEST(Nss, AffineInvariance) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cell(0, 15);
  for (int trial = 0; trial < 100; ++trial) {
    // Small-integer maps on 16 cells keep every intermediate exact.
    SaliencyMap m(4, 4);
    for (double& v : m.values) v = cell(rng);
    if (*std::max_element(m.values.begin(), m.values.end()) == *std::min_element(m.values.begin(), m.values.end()))
      continue;
    const std::vector<std::size_t> fix{static_cast<std::size_t>(cell(rng)), static_cast<std::size_t>(cell(rng))};
    auto t = m;
    for (double& v : t.values) v = 4.0 * v + 3.0;
    EXPECT_EQ(metrics::nss(t, fix), metrics::nss(m, fix));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_map(8, 8, rng);
    auto t = m;
    for (double& v : t.values) v = 2.7 * v + 0.3;
    EXPECT_NEAR(metrics::nss(t, {5, 9}), metrics::nss(m, {5, 9}), 1e-12);
  }
}

TEST(Report, GroupsSortAndWarn) {
  std::vector<metrics::SequenceResult> rs;
  const char* labels[] = {"reach", "circle", "reach", "circle", "reach"};
  for (int i = 0; i < 5; ++i) {
    metrics::SequenceResult r;
    r.id = "s" + std::to_string(i);
    r.archetype = labels[i];
    r.ade = 0.1 * (i + 1);
    r.fde = 0.2 * (i + 1);
    r.wde = labels[i][0] == 'r' ? 1.0 + i : 0.5;
    rs.push_back(r);
  }
  const auto rep = metrics::make_report(rs, 4, {1, 2});
  ASSERT_EQ(rep.per_archetype.size(), 2u);
  EXPECT_EQ(rep.per_archetype[0].label, "circle");
  EXPECT_EQ(rep.per_archetype[1].label, "reach");
  EXPECT_NEAR(rep.per_archetype[1].ade, (0.1 + 0.3 + 0.5) / 3.0, 1e-15);
  EXPECT_NEAR(rep.per_archetype[0].fde, (0.4 + 0.8) / 2.0, 1e-15);
  EXPECT_NEAR(rep.overall.ade, 0.3, 1e-15);
  EXPECT_EQ(rep.warnings.size(), 3u);
  EXPECT_FALSE(rep.overall.sim.has_value());

  rs[0].archetype = "wave";
  EXPECT_THROW(metrics::make_report(rs, 4, {}), std::invalid_argument);
}

TEST(Report, SingleArchetypeEqualsGlobal) {
  std::mt19937_64 rng(8);
  const Trajectory gt = random_traj(4, rng);
  std::vector<metrics::SequenceResult> rs;
  for (int i = 0; i < 6; ++i) {
    auto r = metrics::evaluate_sequence({random_traj(4, rng), random_traj(4, rng)}, gt, geo::Point2{0.4, 0.6});
    r.archetype = "zigzag";
    rs.push_back(r);
  }
  const auto rep = metrics::make_report(rs, 2, {});
  ASSERT_EQ(rep.per_archetype.size(), 1u);
  EXPECT_EQ(rep.per_archetype[0].ade, rep.overall.ade);
  EXPECT_EQ(rep.per_archetype[0].wde, rep.overall.wde);
  EXPECT_EQ(*rep.per_archetype[0].nss, *rep.overall.nss);
  const auto j = metrics::report_to_json(rep);
  EXPECT_EQ(j["sequences"].size(), 6u);
  EXPECT_NE(metrics::per_archetype_csv(rep).find("zigzag,6,"), std::string::npos);
}

TEST(Evaluate, PerfectSamplesScoreHighAffordance) {
  const Trajectory gt{{0.2, 0.2}, {0.3, 0.35}, {0.45, 0.52}};
  const auto r = metrics::evaluate_sequence({gt, gt}, gt, geo::Point2{0.45, 0.52});
  EXPECT_EQ(r.ade, 0.0);
  EXPECT_EQ(r.wde, 0.0);
  EXPECT_NEAR(*r.sim, 1.0, 1e-12);
  EXPECT_EQ(*r.auc_judd, 1.0);
  EXPECT_GT(*r.nss, 5.0);
}
