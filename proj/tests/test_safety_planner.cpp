#include "coopcbf/safety_planner.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace coopcbf::planner;
using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector4d;

namespace {

const Obstacle kObstacleA{{1.5, 0.7}, 0.3};
const Obstacle kObstacleB{{1.5, -0.5}, 0.3};

PlannerState start_state() { return PlannerState(Vector2d(0.0, 0.0), Vector2d(0.0, -1.0)); }

BarrierSet two_obstacle_set()
{
  BarrierSet set;
  set.obstacles = {kObstacleA, kObstacleB};
  return set;
}

// Central differences of the stacked values, independent of the analytic rows.
MatrixXd finite_difference_gradient(const PlannerState& phi, const BarrierSet& set, double step = 1e-6)
{
  MatrixXd J(set.dimension(), 4);
  for (int c = 0; c < 4; ++c) {
    PlannerState plus = phi, minus = phi;
    plus.positions[c] += step;
    minus.positions[c] -= step;
    J.col(c) = (stack_barriers(plus, set).values - stack_barriers(minus, set).values) / (2.0 * step);
  }
  return J;
}

}  // namespace

TEST(BarrierAgent, DistanceToFirstScenarioObstacle)
{
  // |(1.5, 0.7)| - 0.3 = sqrt(2.74) - 0.3
  EXPECT_NEAR(barrier_agent(start_state(), 0, kObstacleA, 0.0), std::sqrt(2.74) - 0.3, 1e-12);
  EXPECT_NEAR(barrier_agent(start_state(), 0, kObstacleA, 0.0), 1.355294, 1e-6);
}

TEST(BarrierAgent, ZeroOnInflatedBoundary)
{
  const PlannerState phi(Vector2d(1.5 + 0.6, 0.7), Vector2d(0.0, -1.0));
  EXPECT_NEAR(barrier_agent(phi, 0, kObstacleA, 0.3), 0.0, 1e-15);
}

TEST(BarrierAgent, MonotoneInRadialDistance)
{
  double previous = -1e9;
  for (double d = 0.35; d < 3.0; d += 0.05) {
    const PlannerState phi(kObstacleA.center + d * Vector2d(0.6, -0.8), Vector2d(5.0, 5.0));
    const double h = barrier_agent(phi, 0, kObstacleA, 0.3);
    EXPECT_GT(h, previous);
    previous = h;
  }
}

TEST(BarrierAgent, GradientAtCenterIsDegenerate)
{
  const PlannerState phi(kObstacleA.center, Vector2d(0.0, 0.0));
  EXPECT_THROW(barrier_agent_gradient(phi, 0, kObstacleA), DegenerateBarrier);
  BarrierSet set;
  set.obstacles = {kObstacleA};
  EXPECT_THROW(stack_barriers(phi, set), DegenerateBarrier);
}

TEST(BarrierCoordination, MidpointValue)
{
  // rho = (0, -0.5); |(-1.5, -1.2)| - 0.3 = sqrt(3.69) - 0.3
  EXPECT_NEAR(barrier_coordination(start_state(), 0.5, kObstacleA), std::sqrt(3.69) - 0.3, 1e-12);
  EXPECT_NEAR(barrier_coordination(start_state(), 0.5, kObstacleA), 1.620937, 1e-6);
}

TEST(BarrierCoordination, EndpointsReduceToAgentBarriers)
{
  const PlannerState phi(Vector2d(0.3, 0.2), Vector2d(-0.4, -0.7));
  EXPECT_DOUBLE_EQ(barrier_coordination(phi, 1.0, kObstacleB), barrier_agent(phi, 0, kObstacleB, 0.0));
  EXPECT_DOUBLE_EQ(barrier_coordination(phi, 0.0, kObstacleB), barrier_agent(phi, 1, kObstacleB, 0.0));
}

TEST(BarrierHolonomic, NominalSeparation)
{
  const HolonomicSpec spec{1.0, 5e-5};
  const auto [h1, h2] = barrier_holonomic(start_state(), spec);
  EXPECT_NEAR(h1, 5e-5, 1e-15);
  EXPECT_NEAR(h2, 5e-5, 1e-15);
}

TEST(BarrierHolonomic, LowerBoundary)
{
  const HolonomicSpec spec{1.0, 5e-5};
  const PlannerState phi(Vector2d(0.0, 0.0), Vector2d(0.0, -std::sqrt(1.0 - 5e-5)));
  EXPECT_NEAR(barrier_holonomic(phi, spec).first, 0.0, 1e-15);
}

TEST(BarrierHolonomic, SumIsTwoEpsilonPsi)
{
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const HolonomicSpec spec{1.7, 3e-3};
  for (int i = 0; i < 200; ++i) {
    const PlannerState phi(Vector4d(u(rng), u(rng), u(rng), u(rng)));
    const auto [h1, h2] = barrier_holonomic(phi, spec);
    EXPECT_NEAR(h1 + h2, 2.0 * spec.epsilon * spec.psi, 1e-12);
  }
}

TEST(StackBarriers, DimensionAndLayout)
{
  BarrierSet set;
  set.obstacles = {kObstacleA};
  EXPECT_EQ(set.dimension(), 8);
  const auto sb = stack_barriers(start_state(), set);
  ASSERT_EQ(sb.values.size(), 8);
  // col(h_1^1, h_2^1, h_co^{1..4,1}, h_hc1, h_hc2)
  EXPECT_DOUBLE_EQ(sb.values[0], barrier_agent(start_state(), 0, kObstacleA, set.agent_radius));
  EXPECT_DOUBLE_EQ(sb.values[1], barrier_agent(start_state(), 1, kObstacleA, set.agent_radius));
  for (int c = 0; c < 4; ++c)
    EXPECT_DOUBLE_EQ(sb.values[2 + c], barrier_coordination(start_state(), set.gamma_samples[c], kObstacleA));
  EXPECT_DOUBLE_EQ(sb.values[6], barrier_holonomic(start_state(), set.holonomic).first);
  EXPECT_DOUBLE_EQ(sb.values[7], barrier_holonomic(start_state(), set.holonomic).second);
  EXPECT_EQ(sb.gains.head(6), Eigen::VectorXd::Constant(6, 0.1));
  EXPECT_EQ(sb.gains[6], 0.001);
  EXPECT_EQ(sb.gains[7], 0.001);

  const auto labels = barrier_labels(set);
  ASSERT_EQ(labels.size(), 8u);
  EXPECT_EQ(labels[0], "h_agent1_obs1");
  EXPECT_EQ(labels[2], "h_co1_obs1");
  EXPECT_EQ(labels[7], "h_hc2");
}

TEST(StackBarriers, TwoObstacleOrdering)
{
  const BarrierSet set = two_obstacle_set();
  const auto sb = stack_barriers(start_state(), set);
  ASSERT_EQ(sb.values.size(), 2 * (2 + 4) + 2);
  EXPECT_DOUBLE_EQ(sb.values[1], barrier_agent(start_state(), 0, kObstacleB, set.agent_radius));
  EXPECT_DOUBLE_EQ(sb.values[2], barrier_agent(start_state(), 1, kObstacleA, set.agent_radius));
  EXPECT_DOUBLE_EQ(sb.values[5], barrier_coordination(start_state(), 0.2, kObstacleB));
  EXPECT_DOUBLE_EQ(sb.values[6], barrier_coordination(start_state(), 0.4, kObstacleA));
}

TEST(StackBarriers, GradientMatchesFiniteDifferences)
{
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 4.0);
  BarrierSet set = two_obstacle_set();
  set.obstacles.push_back({{2.5, 0.1}, 0.5});
  for (int trial = 0; trial < 100; ++trial) {
    const PlannerState phi(Vector4d(u(rng), u(rng), u(rng), u(rng)));
    const MatrixXd analytic = stack_barriers(phi, set).gradient;
    const MatrixXd numeric = finite_difference_gradient(phi, set);
    for (Eigen::Index k = 0; k < analytic.rows(); ++k) {
      const double scale = std::max(analytic.row(k).norm(), 1e-3);
      EXPECT_LE((analytic.row(k) - numeric.row(k)).norm() / scale, 1e-6) << "row " << k;
    }
  }
}

TEST(BarrierSetValidation, RejectsBadConfiguration)
{
  BarrierSet set = two_obstacle_set();
  EXPECT_NO_THROW(set.validate());
  set.holonomic.epsilon = 1.5;
  EXPECT_THROW(set.validate(), std::invalid_argument);
  set = two_obstacle_set();
  set.obstacle_gain = 0.0;
  EXPECT_THROW(set.validate(), std::invalid_argument);
  set = two_obstacle_set();
  set.gamma_samples = {1.2};
  EXPECT_THROW(set.validate(), std::invalid_argument);
  set = two_obstacle_set();
  set.agent_gains = {0.1};
  EXPECT_THROW(set.validate(), std::invalid_argument);
}

TEST(PlanSafeVelocity, SlackConstraintsReturnDesiredVelocity)
{
  // Scenario start and gains, obstacles moved far away so every row is slack.
  BarrierSet set;
  set.obstacles = {{{10.0, 8.0}, 0.3}, {{10.0, -9.0}, 0.3}};
  const Vector4d goal(4.0, 0.5, 4.0, -0.5);
  const Vector4d kd = desired_velocity(start_state(), goal, 0.1);
  EXPECT_LE((kd - Vector4d(0.4, 0.05, 0.4, 0.05)).cwiseAbs().maxCoeff(), 1e-15);
  const auto out = plan_safe_velocity(start_state(), set, kd, 0.5 * Matrix4d::Identity());
  ASSERT_EQ(out.solver_status, coopcbf::qp::QpStatus::Optimal);
  EXPECT_FALSE(out.fallback);
  EXPECT_LE((out.safe_velocity - kd).cwiseAbs().maxCoeff(), 1e-12);
  for (bool a : out.active_flags) EXPECT_FALSE(a);
}

TEST(PlanSafeVelocity, ScenarioStartIsDeflected)
{
  // At the real start the nominal command breaks the agent 2 / obstacle 2 row.
  const BarrierSet set = two_obstacle_set();
  const Vector4d kd(0.4, 0.05, 0.4, 0.05);
  const auto sb = stack_barriers(start_state(), set);
  EXPECT_LT(sb.gradient.row(3).dot(kd) + sb.gains[3] * sb.values[3], 0.0);
  const auto out = plan_safe_velocity(start_state(), set, kd, 0.5 * Matrix4d::Identity());
  ASSERT_EQ(out.solver_status, coopcbf::qp::QpStatus::Optimal);
  EXPECT_GT((out.safe_velocity - kd).norm(), 0.1);
  EXPECT_TRUE(std::any_of(out.active_flags.begin(), out.active_flags.end(), [](bool a) { return a; }));
  const Eigen::VectorXd slack = sb.gradient * out.safe_velocity + sb.gains.cwiseProduct(sb.values);
  EXPECT_GE(slack.minCoeff(), -1e-10);
}

TEST(PlanSafeVelocity, ZeroDesiredGivesZero)
{
  const auto out = plan_safe_velocity(start_state(), two_obstacle_set(), Vector4d::Zero(), 0.5 * Matrix4d::Identity());
  EXPECT_LE(out.safe_velocity.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PlanSafeVelocity, BoundaryBlocksInwardMotion)
{
  BarrierSet set;
  set.obstacles = {kObstacleA};
  set.agent_radius = 0.3;
  // Agent 1 exactly 0.6 m left of the obstacle center, both agents pushed toward +x.
  const PlannerState phi(Vector2d(0.9, 0.7), Vector2d(0.9, -0.3));
  const Vector4d kd(0.4, 0.0, 0.4, 0.0);
  const auto out = plan_safe_velocity(phi, set, kd, 0.5 * Matrix4d::Identity());
  ASSERT_EQ(out.solver_status, coopcbf::qp::QpStatus::Optimal);
  const Vector4d grad = barrier_agent_gradient(phi, 0, kObstacleA);
  EXPECT_GE(grad.dot(out.safe_velocity), -1e-10);
  EXPECT_TRUE(out.active_flags[0]);
  // The bar must keep its length: relative radial velocity stays in the narrow band.
  const Vector4d g1 = barrier_holonomic_gradient(phi);
  const auto [h1, h2] = barrier_holonomic(phi, set.holonomic);
  EXPECT_GE(g1.dot(out.safe_velocity), -0.001 * h1 - 1e-10);
  EXPECT_LE(g1.dot(out.safe_velocity), 0.001 * h2 + 1e-10);
}

TEST(SingleAgentFilter, NoObstaclesPassesThrough)
{
  const Vector2d ud(0.3, -0.2);
  const Vector2d u = single_agent_filter(Vector2d(1, 1), {}, ud, Eigen::Matrix2d::Identity(), {0.1});
  EXPECT_LE((u - ud).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SingleAgentFilter, TangentialCommandUnchangedOnBoundary)
{
  const Obstacle obs{{0.0, 0.0}, 1.0};
  const Vector2d pos(-1.0, 0.0);
  const Vector2d ud(0.0, 0.5);
  const Vector2d u = single_agent_filter(pos, {obs}, ud, Eigen::Matrix2d::Identity(), {1.0});
  EXPECT_LE((u - ud).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SingleAgentFilter, InwardCommandProjectedOntoTangent)
{
  const Obstacle obs{{0.0, 0.0}, 1.0};
  const Vector2d pos(-1.0, 0.0);
  // Unit command pointing 30 degrees into the obstacle; projection keeps the tangential part.
  const Vector2d ud(std::cos(M_PI / 6), std::sin(M_PI / 6));
  const Vector2d u = single_agent_filter(pos, {obs}, ud, Eigen::Matrix2d::Identity(), {1.0});
  EXPECT_NEAR(u.x(), 0.0, 1e-12);
  EXPECT_NEAR(u.y(), 0.5, 1e-12);
  EXPECT_THROW(single_agent_filter(obs.center, {obs}, ud, Eigen::Matrix2d::Identity(), {1.0}), DegenerateBarrier);
}
