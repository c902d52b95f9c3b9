#include "coopcbf/report.hpp"
#include "coopcbf/sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace coopcbf;
using namespace coopcbf::sim;

namespace {

srb::SrbState pair_standing(const srb::SrbModel& m)
{
  srb::SrbState x;
  x.agents[0].position = Eigen::Vector3d(0.0, 0.0, m.agents[0].nominal_height);
  x.agents[1].position = Eigen::Vector3d(0.0, -1.0, m.agents[1].nominal_height);
  return x;
}

std::string csv_of(const RunLog& log)
{
  std::ostringstream os;
  report::write_run_csv(os, log);
  return os.str();
}

}  // namespace

TEST(Gait, TrotKeepsTwoDiagonalLegsDown)
{
  GaitSchedule g;
  for (int k = 0; k < 2000; ++k) {
    const double t = 0.001 * k;
    int n = 0;
    for (int l = 0; l < 4; ++l) n += g.in_stance(l, t);
    EXPECT_EQ(n, 2) << "t=" << t;
    EXPECT_EQ(g.in_stance(0, t), g.in_stance(3, t));
    EXPECT_EQ(g.in_stance(1, t), g.in_stance(2, t));
    EXPECT_NE(g.in_stance(0, t), g.in_stance(1, t));
  }
  EXPECT_DOUBLE_EQ(g.stance_duration(), 0.2);
}

TEST(Gait, TransitionsLandOnTickBoundaries)
{
  GaitSchedule g;
  EXPECT_TRUE(g.in_stance(0, 0.0));
  EXPECT_TRUE(g.in_stance(0, 0.195));
  EXPECT_FALSE(g.in_stance(0, 0.2));
  EXPECT_TRUE(g.in_stance(0, 0.4));
}

TEST(Gait, RejectsBadSchedules)
{
  GaitSchedule g;
  g.duty = 1.0;
  EXPECT_THROW(g.validate(), ScenarioError);
  g = GaitSchedule{};
  g.period = 0.0;
  EXPECT_THROW(g.validate(), ScenarioError);
  g = GaitSchedule{};
  g.offsets[2] = 1.0;
  EXPECT_THROW(g.validate(), ScenarioError);
}

TEST(Raibert, ZeroCommandLandsUnderHip)
{
  EXPECT_TRUE(raibert_offset(0.2, Eigen::Vector2d::Zero()).isZero(0.0));
  EXPECT_TRUE(raibert_offset(0.2, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), 0.16).isZero(0.0));
}

TEST(Raibert, OffsetIsHalfStanceTimesCommand)
{
  const Eigen::Vector2d cmd(0.4, 0.0);
  EXPECT_NEAR(raibert_offset(0.25, cmd).x(), 0.05, 1e-15);
  // Feedback acts only on the velocity error.
  EXPECT_NEAR(raibert_offset(0.25, cmd, cmd, 0.16).x(), 0.05, 1e-15);
  EXPECT_NEAR(raibert_offset(0.25, cmd, Eigen::Vector2d(0.5, 0.0), 0.2).x(), 0.07, 1e-15);
}

TEST(FootPlanner, InitialFeetUnderHips)
{
  srb::SrbModel m;
  const srb::SrbState x = pair_standing(m);
  FootPlanner fp(m, GaitSchedule{});
  const srb::ContactState c = fp.update(0.0, x, Eigen::Vector4d(0.4, 0.0, 0.4, 0.0));
  for (int i = 0; i < 2; ++i)
    for (int l = 0; l < 4; ++l) {
      const Eigen::Vector3d hip = x.agents[i].position + m.agents[i].hip_offsets[static_cast<std::size_t>(l)];
      EXPECT_NEAR(c.feet[i][l].x(), hip.x(), 1e-15);
      EXPECT_NEAR(c.feet[i][l].y(), hip.y(), 1e-15);
      EXPECT_EQ(c.feet[i][l].z(), 0.0);
    }
}

TEST(FootPlanner, StanceFeetStayPinned)
{
  srb::SrbModel m;
  srb::SrbState x = pair_standing(m);
  FootPlanner fp(m, GaitSchedule{}, 0.0);
  const Eigen::Vector4d cmd(0.4, 0.0, 0.4, 0.0);
  srb::ContactState prev = fp.update(0.0, x, cmd);
  int touchdowns = 0;
  for (int k = 1; k < 400; ++k) {
    const double t = 0.005 * k;
    for (auto& a : x.agents) a.position.x() += 0.4 * 0.005;  // body keeps moving
    const srb::ContactState c = fp.update(t, x, cmd);
    for (int i = 0; i < 2; ++i)
      for (int l = 0; l < 4; ++l) {
        if (c.stance[i][l] && prev.stance[i][l]) {
          EXPECT_EQ(c.feet[i][l], prev.feet[i][l]);
        }
        if (c.stance[i][l] && !prev.stance[i][l]) {
          ++touchdowns;
          const Eigen::Vector3d hip = x.agents[i].position + m.agents[i].hip_offsets[static_cast<std::size_t>(l)];
          EXPECT_NEAR(c.feet[i][l].x() - hip.x(), 0.5 * 0.2 * 0.4, 1e-12);
        }
      }
    prev = c;
  }
  EXPECT_GT(touchdowns, 0);
}

TEST(Noise, DisabledIsIdentity)
{
  std::mt19937_64 rng(1);
  const Eigen::Vector4d v(0.1, -0.2, 0.3, 0.4);
  EXPECT_EQ(inject_noise(v, -std::numeric_limits<double>::infinity(), 0.4, rng), v);
  NoiseInjector off(NoiseSpec{false, -43.0, 1});
  EXPECT_EQ(off.apply(v), v);
}

TEST(Noise, RmsFollowsLevel)
{
  const double expected = 0.4 * std::pow(10.0, -43.0 / 20.0);
  EXPECT_NEAR(expected, 2.83e-3, 1e-5);
  for (std::uint64_t seed : {1u, 2u}) {
    std::mt19937_64 rng(seed);
    double sum_sq = 0.0;
    const int n = 10000;
    for (int k = 0; k < n / 4; ++k) sum_sq += inject_noise(Eigen::Vector4d::Zero(), -43.0, 0.4, rng).squaredNorm();
    EXPECT_NEAR(std::sqrt(sum_sq / n), expected, 0.05 * expected) << "seed " << seed;
  }
}

TEST(Noise, SeedsGiveDistinctReproducibleStreams)
{
  NoiseInjector a(NoiseSpec{true, -43.0, 1}), b(NoiseSpec{true, -43.0, 2}), a2(NoiseSpec{true, -43.0, 1});
  const Eigen::Vector4d v(0.4, 0.0, 0.4, 0.0);
  bool differ = false;
  for (int k = 0; k < 100; ++k) {
    const Eigen::Vector4d x = a.apply(v), y = b.apply(v), z = a2.apply(v);
    differ |= x != y;
    EXPECT_EQ(x, z);
  }
  EXPECT_TRUE(differ);
}

TEST(Noise, RunningRmsCoversAllComponents)
{
  NoiseInjector n(NoiseSpec{true, -43.0, 1});
  n.apply(Eigen::Vector4d(2.0, 0.0, 0.0, 0.0));
  EXPECT_DOUBLE_EQ(n.running_rms(), 1.0);
  n.apply(Eigen::Vector4d(0.0, 0.0, 0.0, 0.0));
  EXPECT_DOUBLE_EQ(n.running_rms(), std::sqrt(0.5));
}

TEST(Median, OddAndEven)
{
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_DOUBLE_EQ(median({}), 0.0);
}

TEST(Thresholds, ChecksDependOnMode)
{
  ScenarioConfig cfg = obstacle_course(2);
  RunSummary s;
  s.min_barrier = 1e-4;
  s.goal_reached = true;
  s.goal_time = 30.0;
  auto checks = evaluate_thresholds(cfg, s);
  EXPECT_TRUE(all_passed(checks));
  s.max_separation_sq_deviation = 1e-3;
  EXPECT_FALSE(all_passed(evaluate_thresholds(cfg, s)));
  cfg.mode = RunMode::Full;
  s.tracking_rms = 0.01;
  EXPECT_TRUE(all_passed(evaluate_thresholds(cfg, s)));
  s.max_drift = 2e-3;
  EXPECT_FALSE(all_passed(evaluate_thresholds(cfg, s)));
}

TEST(Kinematic, TwoObstacleRunIsSafeAndKeepsTheBar)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.duration = 120.0;
  const RunLog log = run_scenario(cfg);
  const RunSummary& s = log.summary;
  EXPECT_FALSE(s.aborted);
  EXPECT_GE(s.min_barrier, -1e-3);
  EXPECT_LE(s.max_separation_sq_deviation, cfg.epsilon * cfg.psi + 1e-6);
  EXPECT_EQ(s.planner_fallbacks, 0);
  ASSERT_TRUE(s.goal_reached);
  EXPECT_LT(s.final_goal_distance[0], 0.1);
  EXPECT_LT(s.final_goal_distance[1], 0.1);
  // Log rows at the tick rate, one barrier column per stacked row.
  for (std::size_t k = 1; k < log.rows.size(); ++k) EXPECT_NEAR(log.rows[k].time - log.rows[k - 1].time, 0.005, 1e-12);
  EXPECT_EQ(log.rows.front().barriers.size(), static_cast<Eigen::Index>(log.barrier_labels.size()));
}

TEST(Kinematic, SameSeedGivesIdenticalLog)
{
  ScenarioConfig cfg = obstacle_course(3);
  cfg.duration = 10.0;
  cfg.noise.enabled = true;
  cfg.noise.seed = 7;
  const std::string a = csv_of(run_scenario(cfg)), b = csv_of(run_scenario(cfg));
  EXPECT_EQ(a, b);
  cfg.noise.seed = 8;
  EXPECT_NE(a, csv_of(run_scenario(cfg)));
}

TEST(Kinematic, NoiseExcursionGrowsWithLevel)
{
  // Stays inside the inflated band, and more noise never shrinks the worst excursion.
  ScenarioConfig cfg = obstacle_course(2);
  cfg.duration = 30.0;
  double previous = run_scenario(cfg).summary.max_band_excursion;
  EXPECT_LE(previous, 1e-6);
  cfg.noise.enabled = true;
  cfg.noise.seed = 3;
  for (double db : {-60.0, -43.0, -30.0}) {
    cfg.noise.level_db = db;
    const double e = run_scenario(cfg).summary.max_band_excursion;
    EXPECT_GE(e, previous) << db << " dB";
    previous = e;
  }
}

TEST(Full, ShortRunRespectsLayerContract)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.mode = RunMode::Full;
  cfg.duration = 4.0;
  const RunLog log = run_scenario(cfg);
  const RunSummary& s = log.summary;
  ASSERT_FALSE(s.aborted) << s.abort_reason;
  EXPECT_EQ(s.mpc_failures, 0);
  EXPECT_EQ(s.mpc_decision_variables, 294);
  EXPECT_GE(s.min_barrier, -5e-3);
  EXPECT_LE(s.max_drift, 1e-3);
  EXPECT_LE(s.tracking_rms, 0.05);
  EXPECT_LE(s.max_holonomic_residual, 1e-6);
  EXPECT_LE(s.max_friction_violation, 1e-6);
  ASSERT_EQ(log.rows.size(), 801u);
  EXPECT_EQ(log.mpc_solve_us.size(), 800u);
  for (std::size_t k = 1; k < log.rows.size(); ++k) EXPECT_NEAR(log.rows[k].time - log.rows[k - 1].time, 0.005, 1e-12);
}

TEST(Full, TrotGrfsChangeSmoothlyWithinAStancePhase)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.mode = RunMode::Full;
  cfg.duration = 3.0;
  const RunLog log = run_scenario(cfg);
  ASSERT_FALSE(log.summary.aborted);
  const GaitSchedule& g = cfg.gait;
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < log.rows.size(); ++k) {
    const double t0 = log.rows[k - 1].time, t1 = log.rows[k].time;
    bool same = true;
    for (int l = 0; l < 4; ++l) same &= g.in_stance(l, t0) == g.in_stance(l, t1);
    if (same) worst = std::max(worst, (log.rows[k].grf - log.rows[k - 1].grf).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 50.0);
}

TEST(Full, ThirtySecondTrotKeepsBarLength)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.mode = RunMode::Full;
  cfg.duration = 30.0;
  const RunLog log = run_scenario(cfg);
  ASSERT_FALSE(log.summary.aborted);
  EXPECT_LE(log.summary.max_drift, 1e-3);
  EXPECT_GE(log.summary.min_barrier, -5e-3);
}

TEST(Report, CsvHeaderMatchesRows)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.duration = 0.05;
  const RunLog log = run_scenario(cfg);
  const std::string csv = csv_of(log);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  const auto cols = std::count(line.begin(), line.end(), ',') + 1;
  EXPECT_EQ(static_cast<std::size_t>(cols), report::run_csv_header(log).size());
  EXPECT_EQ(line.rfind("time_s,a1_x_m", 0), 0u);
  EXPECT_NE(line.find("h_hc1"), std::string::npos);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, cols);
  }
  EXPECT_EQ(rows, static_cast<int>(log.rows.size()));
}

TEST(Report, BarSegmentsEveryHalfSecond)
{
  ScenarioConfig cfg = obstacle_course(2);
  cfg.duration = 2.0;
  const RunLog log = run_scenario(cfg);
  const auto idx = report::bar_samples(log, 0.5);
  ASSERT_EQ(idx.size(), 5u);
  for (std::size_t k = 0; k < idx.size(); ++k) EXPECT_NEAR(log.rows[idx[k]].time, 0.5 * static_cast<double>(k), 1e-9);
  std::ostringstream svg;
  report::write_svg(svg, cfg, log);
  const std::string text = svg.str();
  EXPECT_NE(text.find("<polyline"), std::string::npos);
  // Header and background, 2 obstacles, 5 bars, per agent a path plus start and goal marks, footer.
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2 + 2 + 5 + 2 * 3 + 1);
}
