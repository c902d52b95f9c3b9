#ifndef COOPCBF_SCENARIO_HPP
#define COOPCBF_SCENARIO_HPP

#include "coopcbf/mpc.hpp"
#include "coopcbf/safety_planner.hpp"
#include "coopcbf/srb_model.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopcbf {

enum class RunMode { Kinematic, Full };

inline const char* to_string(RunMode m) { return m == RunMode::Kinematic ? "kinematic" : "full"; }

/// Thrown for scenario invariants; the message names the violated one.
struct ScenarioError : std::invalid_argument
{
  using std::invalid_argument::invalid_argument;
};

struct GaitSchedule
{
  double period = 0.4;
  double duty = 0.5;
  /// Per-leg phase offsets (FR, FL, RR, RL); diagonal pairs in antiphase.
  std::array<double, srb::kLegs> offsets{0.0, 0.5, 0.5, 0.0};

  /// Phase of leg in [0, 1); stance while phase < duty.
  double phase(int leg, double t) const
  {
    // The small bias keeps exact tick times on the intended side of a transition.
    const double p = t / period + offsets[static_cast<std::size_t>(leg)] + 1e-9;
    return p - std::floor(p);
  }
  bool in_stance(int leg, double t) const { return phase(leg, t) < duty; }
  double stance_duration() const { return duty * period; }

  void validate() const
  {
    if (!(period > 0.0)) throw ScenarioError("gait: period must be positive");
    if (!(duty > 0.0 && duty < 1.0)) throw ScenarioError("gait: duty factor must be in (0,1)");
    for (double o : offsets)
      if (!(o >= 0.0 && o < 1.0)) throw ScenarioError("gait: phase offsets must be in [0,1)");
  }
};

struct NoiseSpec
{
  bool enabled = false;
  /// Noise RMS relative to the running command RMS.
  double level_db = -43.0;
  std::uint64_t seed = 1;
};

/// Pass/fail thresholds checked after a run.
struct Thresholds
{
  double min_barrier = -1e-3;
  bool require_goal = true;
  /// Kinematic mode, noiseless: |sep^2 - psi| <= epsilon psi + separation_slack.
  double separation_slack = 1e-6;
  /// Full mode: | |p1 - p2| - sqrt(psi) | bound in meters.
  double max_drift = 1e-3;
  /// Full mode: RMS of (phi_s - planar COM velocity) after tracking_settle seconds.
  double max_tracking_rms = 0.05;
  double tracking_settle = 2.0;
};

struct ScenarioConfig
{
  std::string name = "scenario";
  RunMode mode = RunMode::Kinematic;

  std::vector<planner::Obstacle> obstacles;
  Eigen::Vector4d start = Eigen::Vector4d(0.0, 0.0, 0.0, -1.0);
  Eigen::Vector4d goal = Eigen::Vector4d(4.0, 0.5, 4.0, -0.5);

  double psi = 1.0;
  double epsilon = 5e-5;
  std::vector<double> gamma_samples{0.2, 0.4, 0.6, 0.8};
  double obstacle_gain = 0.1;
  double holonomic_gain_lower = 0.001;
  double holonomic_gain_upper = 0.001;
  double agent_radius = 0.0;
  Eigen::Vector4d planner_weight = Eigen::Vector4d::Constant(0.5);
  double goal_gain = 0.1;

  /// Planner and MPC tick.
  double tick = 0.005;
  int plant_substeps = 5;
  double duration = 60.0;
  double goal_tolerance = 0.1;

  NoiseSpec noise;
  GaitSchedule gait;
  srb::AgentParams robot;
  mpc::MpcConfig mpc;
  Thresholds thresholds;

  planner::BarrierSet barrier_set() const
  {
    planner::BarrierSet set;
    set.obstacles = obstacles;
    set.gamma_samples = gamma_samples;
    set.obstacle_gain = obstacle_gain;
    set.holonomic_gain_lower = holonomic_gain_lower;
    set.holonomic_gain_upper = holonomic_gain_upper;
    set.holonomic.psi = psi;
    set.holonomic.epsilon = epsilon;
    set.agent_radius = agent_radius;
    return set;
  }

  srb::SrbModel srb_model() const
  {
    srb::SrbModel m;
    m.agents = {robot, robot};
    m.psi = psi;
    return m;
  }

  void validate() const
  {
    auto fail = [](const std::string& what) { throw ScenarioError(what); };
    if (!start.allFinite() || !goal.allFinite()) fail("start/goal must be finite");
    if (!(tick > 0.0)) fail("tick_s must be positive");
    if (plant_substeps < 1) fail("plant_substeps must be >= 1");
    if (mode == RunMode::Full && !(tick / plant_substeps <= 0.01)) fail("plant step tick_s/plant_substeps must be <= 0.01 s");
    if (!(duration > 0.0)) fail("duration_s must be positive");
    if (!(goal_tolerance > 0.0)) fail("goal_tolerance_m must be positive");
    if (!(goal_gain >= 0.0)) fail("goal_gain must be nonnegative");
    if (!(planner_weight.minCoeff() > 0.0)) fail("planner_weight entries must be positive");
    if (noise.enabled && !(noise.level_db < 0.0 || std::isinf(noise.level_db))) fail("noise level_db must be negative");

    const planner::BarrierSet set = barrier_set();
    try {
      set.validate();
    } catch (const std::exception& e) {
      fail(e.what());
    }
    gait.validate();
    try {
      robot.validate();
      mpc.validate();
    } catch (const std::exception& e) {
      fail(e.what());
    }

    // Initial H > 0: every barrier row must be strictly positive at the start.
    const planner::PlannerState phi0{start};
    for (std::size_t z = 0; z < obstacles.size(); ++z)
      for (int i = 0; i < planner::kNumAgents; ++i) {
        if (!(planner::barrier_agent(phi0, i, obstacles[z], agent_radius) > 0.0))
          fail("start of agent " + std::to_string(i + 1) + " lies inside obstacle " + std::to_string(z + 1));
        if (!(planner::barrier_agent(planner::PlannerState{goal}, i, obstacles[z], agent_radius) > 0.0))
          fail("goal of agent " + std::to_string(i + 1) + " lies inside obstacle " + std::to_string(z + 1));
      }
    const planner::StackedBarriers sb = planner::stack_barriers(phi0, set);
    for (Eigen::Index k = 0; k < sb.values.size(); ++k)
      if (!(sb.values[k] > 0.0))
        fail("initial barrier " + planner::barrier_labels(set)[static_cast<std::size_t>(k)] +
             " is not positive (" + std::to_string(sb.values[k]) + ")");
  }
};

/// Obstacle fields of increasing size: 2, 3 or 4 obstacles.
inline ScenarioConfig obstacle_course(int num_obstacles)
{
  if (num_obstacles < 2 || num_obstacles > 4) throw std::invalid_argument("obstacle_course: 2, 3 or 4 obstacles");
  static const char* names[] = {"two_obstacles", "three_obstacles", "four_obstacles"};
  ScenarioConfig s;
  s.name = names[num_obstacles - 2];
  s.obstacles = {{Eigen::Vector2d(1.5, 0.7), 0.3}, {Eigen::Vector2d(1.5, -0.5), 0.3}};
  if (num_obstacles >= 3) s.obstacles.push_back({Eigen::Vector2d(2.5, 0.1), 0.5});
  if (num_obstacles >= 4) s.obstacles.push_back({Eigen::Vector2d(3.5, 1.3), 0.4});
  return s;
}

}  // namespace coopcbf

#endif  // COOPCBF_SCENARIO_HPP
