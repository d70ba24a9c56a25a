#include <gtest/gtest.h>

#include <random>

#include "madiff/losses.hpp"
#include "support/gradcheck.hpp"

using namespace madiff;
using dg::Graph;
using dg::Tensor;
using dg::Var;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t({r, c});
  for (double& v : t.values()) v = n(rng);
  return t;
}

double eval(Var v) { return v.value().item(); }

}  // namespace

TEST(VlbLoss, ZeroWhenEqual) {
  Graph g;
  std::mt19937_64 rng(1);
  const Tensor z = random_tensor(4, 3, rng), f = random_tensor(6, 3, rng);
  EXPECT_EQ(eval(losses::vlb_loss(g.constant(z), g.constant(z), losses::PriorTerm{g.constant(f), g.constant(f)})), 0.0);
}

TEST(VlbLoss, UnitOffsetOnOneCoordinate) {
  Graph g;
  Tensor a({1, 3}), b({1, 3});
  b[1] = 1.0;
  EXPECT_EQ(eval(losses::vlb_loss(g.constant(a), g.constant(b))), 1.0);
}

TEST(VlbLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const auto r = oracle::check_input_gradients(
      [](Graph&, const std::vector<Var>& v) { return losses::vlb_loss(v[0], v[1], losses::PriorTerm{v[2], v[3]}); },
      {random_tensor(5, 4, rng), random_tensor(5, 4, rng), random_tensor(3, 4, rng), random_tensor(3, 4, rng)});
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(DisplacementLoss, ThreeFourFive) {
  Graph g;
  std::mt19937_64 rng(3);
  const Tensor gt = random_tensor(6, 2, rng);
  Tensor pred = gt;
  for (std::size_t r = 0; r < 6; ++r) {
    pred.at(r, 0) += 0.3;
    pred.at(r, 1) += 0.4;
  }
  EXPECT_EQ(eval(losses::displacement_loss(g.constant(gt), g.constant(gt))), 0.0);
  EXPECT_NEAR(eval(losses::displacement_loss(g.constant(pred), g.constant(gt))), 0.5, 1e-12);
  EXPECT_NEAR(eval(losses::regularization_loss(g.constant(pred), g.constant(gt))), 0.5, 1e-12);
}

TEST(DisplacementLoss, LengthMismatchThrows) {
  Graph g;
  EXPECT_THROW(losses::displacement_loss(g.constant(Tensor({3, 2})), g.constant(Tensor({4, 2}))),
               std::invalid_argument);
  EXPECT_THROW(losses::regularization_loss(g.constant(Tensor({3, 2})), g.constant(Tensor({4, 2}))),
               std::invalid_argument);
}

TEST(DisplacementLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (auto fn : {&losses::displacement_loss, &losses::regularization_loss}) {
    const auto r = oracle::check_input_gradients([fn](Graph&, const std::vector<Var>& v) { return fn(v[0], v[1]); },
                                                 {random_tensor(8, 2, rng), random_tensor(8, 2, rng)});
    EXPECT_LT(r.max_rel_error, 1e-7);
  }
}

namespace {

// One sequence starting at the origin with the given steps.
Tensor path(std::initializer_list<std::pair<double, double>> steps) {
  Tensor t({steps.size(), 2});
  double x = 0, y = 0;
  std::size_t r = 0;
  for (auto [dx, dy] : steps) {
    x += dx;
    y += dy;
    t.at(r, 0) = x;
    t.at(r, 1) = y;
    ++r;
  }
  return t;
}

double angle_of(const Tensor& pred, const Tensor& gt) {
  Graph g;
  return eval(losses::angle_loss(g.constant(pred), g.constant(gt), g.constant(Tensor({1, 2})), pred.rows()));
}

double length_of(const Tensor& pred, const Tensor& gt) {
  Graph g;
  return eval(losses::length_loss(g.constant(pred), g.constant(gt), g.constant(Tensor({1, 2})), pred.rows()));
}

}  // namespace

TEST(AngleLoss, ReferenceValues) {
  EXPECT_NEAR(angle_of(path({{0.5, 0.5}, {1, 0}}), path({{0.1, 0.1}, {3, 0}})), 0.0, 1e-15);
  EXPECT_NEAR(angle_of(path({{1, 0}}), path({{0, 1}})), 1.0, 1e-15);
  EXPECT_NEAR(angle_of(path({{1, 0}}), path({{-2, 0}})), 2.0, 1e-15);
}

TEST(AngleLoss, StationaryGroundTruthCarriesNoPenalty) {
  EXPECT_NEAR(angle_of(path({{1, 0}, {0.3, 0.2}}), path({{0, 0}, {0.6, 0.4}})), 0.0, 1e-15);
  // A stationary prediction against a moving ground truth is penalised as orthogonal.
  EXPECT_NEAR(angle_of(path({{0, 0}}), path({{1, 0}})), 1.0, 1e-15);
}

TEST(AngleLoss, DeltasStartAtLastObservation) {
  Graph g;
  Tensor h0({1, 2});
  h0[0] = 1.0;
  // Stepping from (1, 0) to (1, 1) is straight up; from the origin it would be diagonal.
  const Tensor pred = Tensor::matrix(1, 2, {1.0, 1.0}), gt = Tensor::matrix(1, 2, {1.0, 2.0});
  EXPECT_NEAR(eval(losses::angle_loss(g.constant(pred), g.constant(gt), g.constant(h0), 1)), 0.0, 1e-15);
}

TEST(AngleLoss, BoundedOnRandomInputs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g;
    const double v = eval(losses::angle_loss(g.constant(random_tensor(12, 2, rng)), g.constant(random_tensor(12, 2, rng)),
                                             g.constant(random_tensor(3, 2, rng)), 4));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0);
  }
}

TEST(AngleLoss, ScaleInvariantOnExactSteps) {
  const Tensor gt = path({{0.25, 0.5}, {-0.75, 0.125}, {1.5, -2.0}});
  const Tensor pred = path({{0.5, 0.25}, {0.125, 1.0}, {-1.0, -0.5}});
  const Tensor pred4 = path({{2.0, 1.0}, {0.5, 4.0}, {-4.0, -2.0}});
  EXPECT_EQ(angle_of(pred, gt), angle_of(pred4, gt));
}

TEST(AngleLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const auto r = oracle::check_input_gradients(
      [](Graph&, const std::vector<Var>& v) { return losses::angle_loss(v[0], v[1], v[2], 4); },
      {random_tensor(8, 2, rng), random_tensor(8, 2, rng), random_tensor(2, 2, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(LengthLoss, ReferenceValues) {
  EXPECT_EQ(length_of(path({{0.1, 0.2}}), path({{0.1, 0.2}})), 0.0);
  EXPECT_NEAR(length_of(path({{0.1, 0}}), path({{0.3, 0}})), 0.2, 1e-15);
  const Tensor still = path({{0, 0}, {0, 0}});
  EXPECT_EQ(length_of(path({{0.5, 0.25}, {0.25, 0.5}}), still) * 2.0,
            length_of(path({{1.0, 0.5}, {0.5, 1.0}}), still));
}

TEST(LengthLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const auto r = oracle::check_input_gradients(
      [](Graph&, const std::vector<Var>& v) { return losses::length_loss(v[0], v[1], v[2], 4); },
      {random_tensor(8, 2, rng), random_tensor(8, 2, rng), random_tensor(2, 2, rng)});
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(TotalLoss, WeightedSum) {
  const losses::LossWeights w;
  EXPECT_EQ(losses::combine(0, 0, 0, 0, 0, w).total, 0.0);
  EXPECT_NEAR(losses::combine(1, 1, 1, 1, 1, w).total, 2.22, 1e-15);
  losses::LossWeights no_shape = w;
  no_shape.angle = no_shape.len = 0.0;
  EXPECT_EQ(losses::combine(0.3, 0.4, 0.5, 1.9, 7.0, no_shape).total,
            losses::combine(0.3, 0.4, 0.5, 0.0, 0.0, no_shape).total);
  losses::LossWeights bad = w;
  bad.reg = -0.1;
  EXPECT_THROW(losses::combine(1, 1, 1, 1, 1, bad), std::invalid_argument);
}

TEST(TotalLoss, GraphTotalMatchesBreakdown) {
  Graph g;
  auto s = [&](double v) { return g.leaf(Tensor::scalar(v)); };
  const losses::LossTerms terms{s(0.5), s(0.25), s(2.0), s(1.5), s(0.75)};
  const auto out = losses::total_loss(terms, {});
  const auto ref = losses::combine(0.5, 0.25, 2.0, 1.5, 0.75, {});
  EXPECT_NEAR(out.breakdown.total, ref.total, 1e-15);
  EXPECT_EQ(out.total.value().item(), out.breakdown.total);
  g.backward(out.total);
  EXPECT_EQ(g.grad(terms.reg).item(), 0.2);
  EXPECT_EQ(g.grad(terms.len).item(), 0.01);
}

TEST(TotalLoss, NamesNonFiniteTerm) {
  losses::LossBreakdown b{0.1, 0.2, std::nan(""), 0.0, 0.0, 0.0};
  EXPECT_EQ(b.non_finite_term().value_or(""), "reg");
  b.reg = 0.3;
  EXPECT_FALSE(b.non_finite_term().has_value());
}
