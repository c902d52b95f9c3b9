#ifndef COOPCBF_SIM_HPP
#define COOPCBF_SIM_HPP

// Closed-loop harness: planner at the tick rate, then either
//  - kinematic: phi_dot = phi_s integrated with RK4 (planner re-solved at each stage), or
//  - full: MPC at the tick rate driving the SRB plant in plant_substeps RK4 substeps.

#include "coopcbf/geometry.hpp"
#include "coopcbf/mpc.hpp"
#include "coopcbf/safety_planner.hpp"
#include "coopcbf/scenario.hpp"
#include "coopcbf/srb_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace coopcbf::sim {

using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;

/// Raibert touchdown offset: half the stance duration times the commanded velocity, plus a
/// correction gain * (actual - commanded) that lets foot placement absorb velocity errors.
inline Vector2d raibert_offset(double stance_duration, const Vector2d& commanded, const Vector2d& actual = Vector2d::Zero(),
                               double feedback_gain = 0.0)
{
  return 0.5 * stance_duration * commanded + feedback_gain * (actual - commanded);
}

/// Tracks stance/swing per leg and pins stance feet in the world between touchdown and liftoff.
class FootPlanner
{
public:
  /// feedback_gain < 0 selects sqrt(h / g), the capture-point time constant of the nominal height.
  FootPlanner(const srb::SrbModel& model, GaitSchedule schedule, double feedback_gain = -1.0)
      : model_(model), schedule_(schedule),
        feedback_gain_(feedback_gain >= 0.0 ? feedback_gain
                                            : std::sqrt(model.agents[0].nominal_height / model.gravity))
  {
    schedule_.validate();
  }

  srb::ContactState update(double t, const srb::SrbState& x, const Vector4d& phi_s)
  {
    for (int i = 0; i < srb::kAgents; ++i) {
      const srb::AgentState& a = x.agents[i];
      const Eigen::Matrix3d Rz = geom::rot_z(geom::euler_zyx(a.rotation_matrix()).yaw);
      const Vector2d offset = raibert_offset(schedule_.stance_duration(), phi_s.segment<2>(2 * i),
                                             a.velocity.head<2>(), feedback_gain_);
      for (int l = 0; l < srb::kLegs; ++l) {
        const Vector3d hip = a.position + Rz * model_.agents[i].hip_offsets[static_cast<std::size_t>(l)];
        const Vector3d under_hip(hip.x(), hip.y(), 0.0);
        const Vector3d touchdown(hip.x() + offset.x(), hip.y() + offset.y(), 0.0);
        const bool stance = schedule_.in_stance(l, t);
        bool& was = contacts_.stance[i][l];
        Vector3d& foot = contacts_.feet[i][l];
        if (!initialized_)
          foot = under_hip;
        else if (stance && !was)
          foot = touchdown;
        else if (!stance)
          foot = touchdown;
        was = stance;
      }
    }
    initialized_ = true;
    return contacts_;
  }

private:
  srb::SrbModel model_;
  GaitSchedule schedule_;
  double feedback_gain_;
  srb::ContactState contacts_;
  bool initialized_ = false;
};

/// Adds zero-mean uniform noise with RMS running_rms * 10^(level_db / 20) to each component.
inline Vector4d inject_noise(const Vector4d& phi_s, double level_db, double running_rms, std::mt19937_64& rng)
{
  if (std::isinf(level_db) && level_db < 0.0) return phi_s;
  const double rms = running_rms * std::pow(10.0, level_db / 20.0);
  // Uniform on [-a, a] has RMS a / sqrt(3).
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector4d out = phi_s;
  const double a = std::sqrt(3.0) * rms;
  for (int k = 0; k < 4; ++k) out[k] += a * u(rng);
  return out;
}

/// inject_noise with the command RMS accumulated over all calls so far (current one included).
class NoiseInjector
{
public:
  explicit NoiseInjector(const NoiseSpec& spec) : spec_(spec), rng_(spec.seed) {}

  Vector4d apply(const Vector4d& phi_s)
  {
    if (!spec_.enabled) return phi_s;
    sum_sq_ += phi_s.squaredNorm();
    count_ += 4;
    return inject_noise(phi_s, spec_.level_db, running_rms(), rng_);
  }

  double running_rms() const { return count_ > 0 ? std::sqrt(sum_sq_ / static_cast<double>(count_)) : 0.0; }

private:
  NoiseSpec spec_;
  std::mt19937_64 rng_;
  double sum_sq_ = 0.0;
  long count_ = 0;
};

enum RowFlag : unsigned {
  kPlannerFallback = 1u,
  kMpcFailed = 2u,
  kMpcSoftened = 4u,
  kNoise = 8u,
};

struct LogRow
{
  double time = 0.0;
  std::array<Vector3d, 2> position{};
  std::array<Vector3d, 2> velocity{};
  std::array<geom::EulerZYX, 2> euler{};
  Vector4d phi_s = Vector4d::Zero();
  Eigen::VectorXd barriers;
  double separation = 0.0;
  double lambda = 0.0;
  srb::ForceVector grf = srb::ForceVector::Zero();
  unsigned flags = 0;
};

struct RunSummary
{
  std::string scenario;
  RunMode mode = RunMode::Kinematic;
  int ticks = 0;
  double sim_time = 0.0;
  double min_barrier = std::numeric_limits<double>::infinity();
  std::string min_barrier_label;
  bool goal_reached = false;
  double goal_time = std::numeric_limits<double>::quiet_NaN();
  std::array<double, 2> final_goal_distance{};
  /// max |sep^2 - psi|.
  double max_separation_sq_deviation = 0.0;
  /// max(|sep^2 - psi| - epsilon psi, 0).
  double max_band_excursion = 0.0;
  /// max | sep - sqrt(psi) |.
  double max_drift = 0.0;
  double tracking_rms = std::numeric_limits<double>::quiet_NaN();
  int planner_fallbacks = 0;
  int mpc_failures = 0;
  int mpc_softened = 0;
  double max_holonomic_residual = 0.0;
  double max_friction_violation = 0.0;
  double planner_median_us = 0.0;
  double planner_max_us = 0.0;
  double mpc_median_us = 0.0;
  double mpc_max_us = 0.0;
  int mpc_decision_variables = 0;
  bool aborted = false;
  int abort_tick = -1;
  std::string abort_reason;
  double wall_time_s = 0.0;
};

struct RunLog
{
  std::vector<std::string> barrier_labels;
  std::vector<LogRow> rows;
  /// Wall-clock solve times; kept apart from rows so the row log is reproducible.
  std::vector<double> planner_solve_us;
  std::vector<double> mpc_solve_us;
  RunSummary summary;
};

struct Check
{
  std::string name;
  bool passed = false;
  double value = 0.0;
  double limit = 0.0;
};

inline double median(std::vector<double> v)
{
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  return 0.5 * (upper + *std::max_element(v.begin(), mid));
}

/// Scenario thresholds applied to a finished run.
inline std::vector<Check> evaluate_thresholds(const ScenarioConfig& cfg, const RunSummary& s)
{
  std::vector<Check> checks;
  const Thresholds& th = cfg.thresholds;
  checks.push_back({"min_barrier", s.min_barrier >= th.min_barrier, s.min_barrier, th.min_barrier});
  if (th.require_goal)
    checks.push_back({"goal_reached", s.goal_reached, s.goal_reached ? s.goal_time : cfg.duration, cfg.duration});
  if (cfg.mode == RunMode::Kinematic && !cfg.noise.enabled) {
    const double limit = cfg.epsilon * cfg.psi + th.separation_slack;
    checks.push_back({"separation_band", s.max_separation_sq_deviation <= limit, s.max_separation_sq_deviation, limit});
  }
  if (cfg.mode == RunMode::Full) {
    checks.push_back({"constraint_drift", s.max_drift <= th.max_drift, s.max_drift, th.max_drift});
    checks.push_back({"tracking_rms", s.tracking_rms <= th.max_tracking_rms, s.tracking_rms, th.max_tracking_rms});
  }
  checks.push_back({"no_abort", !s.aborted, s.aborted ? 1.0 : 0.0, 0.0});
  return checks;
}

inline bool all_passed(const std::vector<Check>& checks)
{
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

namespace detail {

inline double micros_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
}

inline bool at_goal(const Vector4d& p, const Vector4d& goal, double tol)
{
  return (p - goal).head<2>().norm() < tol && (p - goal).tail<2>().norm() < tol;
}

struct Recorder
{
  const ScenarioConfig& cfg;
  RunLog& log;
  double tracking_sq = 0.0;
  long tracking_n = 0;

  void record_barriers(const LogRow& row)
  {
    for (Eigen::Index k = 0; k < row.barriers.size(); ++k)
      if (row.barriers[k] < log.summary.min_barrier) {
        log.summary.min_barrier = row.barriers[k];
        log.summary.min_barrier_label = log.barrier_labels[static_cast<std::size_t>(k)];
      }
  }

  void record_separation(double sep)
  {
    RunSummary& s = log.summary;
    const double dev = std::abs(sep * sep - cfg.psi);
    s.max_separation_sq_deviation = std::max(s.max_separation_sq_deviation, dev);
    s.max_band_excursion = std::max(s.max_band_excursion, dev - cfg.epsilon * cfg.psi);
    s.max_drift = std::max(s.max_drift, std::abs(sep - std::sqrt(cfg.psi)));
  }

  void push(LogRow row)
  {
    if (row.flags & kPlannerFallback) ++log.summary.planner_fallbacks;
    record_barriers(row);
    record_separation(row.separation);
    log.rows.push_back(std::move(row));
  }

  void finish(const Vector4d& final_positions, int ticks)
  {
    RunSummary& s = log.summary;
    s.ticks = ticks;
    s.sim_time = ticks * cfg.tick;
    s.final_goal_distance = {(final_positions - cfg.goal).head<2>().norm(), (final_positions - cfg.goal).tail<2>().norm()};
    if (tracking_n > 0) s.tracking_rms = std::sqrt(tracking_sq / static_cast<double>(tracking_n));
    s.planner_median_us = median(log.planner_solve_us);
    s.planner_max_us = log.planner_solve_us.empty() ? 0.0 : *std::max_element(log.planner_solve_us.begin(), log.planner_solve_us.end());
    s.mpc_median_us = median(log.mpc_solve_us);
    s.mpc_max_us = log.mpc_solve_us.empty() ? 0.0 : *std::max_element(log.mpc_solve_us.begin(), log.mpc_solve_us.end());
  }
};

inline void run_kinematic(const ScenarioConfig& cfg, RunLog& log)
{
  const planner::BarrierSet set = cfg.barrier_set();
  const Eigen::Matrix4d Ps = cfg.planner_weight.asDiagonal();
  NoiseInjector noise(cfg.noise);
  Recorder rec{cfg, log};

  Vector4d phi = cfg.start;
  const int n_ticks = static_cast<int>(std::llround(cfg.duration / cfg.tick));
  const double dt = cfg.tick;
  int tick = 0;
  for (; tick <= n_ticks; ++tick) {
    const double t = tick * dt;
    const planner::PlannerState state(phi);
    const auto t0 = std::chrono::steady_clock::now();
    const planner::PlannerOutput out =
        planner::plan_safe_velocity(state, set, planner::desired_velocity(state, cfg.goal, cfg.goal_gain), Ps);
    log.planner_solve_us.push_back(micros_since(t0));

    // Zero-order hold on the noise sample; the planner itself is re-solved at each RK stage.
    const Vector4d applied = noise.apply(out.safe_velocity);
    const Vector4d disturbance = applied - out.safe_velocity;

    LogRow row;
    row.time = t;
    for (int i = 0; i < 2; ++i) {
      row.position[static_cast<std::size_t>(i)] << phi.segment<2>(2 * i), 0.0;
      row.velocity[static_cast<std::size_t>(i)] << applied.segment<2>(2 * i), 0.0;
    }
    row.phi_s = out.safe_velocity;
    row.barriers = out.barrier_values;
    row.separation = (phi.head<2>() - phi.tail<2>()).norm();
    row.flags = (out.fallback ? kPlannerFallback : 0u) | (cfg.noise.enabled ? kNoise : 0u);
    rec.push(std::move(row));

    if (at_goal(phi, cfg.goal, cfg.goal_tolerance)) {
      log.summary.goal_reached = true;
      log.summary.goal_time = t;
      break;
    }
    if (tick == n_ticks) break;

    auto field = [&](const Vector4d& p) -> Vector4d {
      const planner::PlannerState s(p);
      return planner::plan_safe_velocity(s, set, planner::desired_velocity(s, cfg.goal, cfg.goal_gain), Ps)
                 .safe_velocity +
             disturbance;
    };
    const Vector4d k1 = applied;
    const Vector4d k2 = field(phi + 0.5 * dt * k1);
    const Vector4d k3 = field(phi + 0.5 * dt * k2);
    const Vector4d k4 = field(phi + dt * k3);
    phi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!phi.allFinite()) {
      log.summary.aborted = true;
      log.summary.abort_tick = tick;
      log.summary.abort_reason = "planner state became non-finite";
      break;
    }
  }
  rec.finish(phi, tick);
}

inline srb::SrbState initial_plant_state(const ScenarioConfig& cfg, const srb::SrbModel& model)
{
  srb::SrbState x;
  for (int i = 0; i < srb::kAgents; ++i) {
    const Vector2d p = cfg.start.segment<2>(2 * i);
    // Place the COM so the attachment point sits at the planner start.
    x.agents[i].position = Vector3d(p.x(), p.y(), model.agents[i].nominal_height) - model.agents[i].attach_offset;
  }
  return x;
}

inline Vector4d planar_attachments(const srb::SrbModel& model, const srb::SrbState& x)
{
  Vector4d p;
  p << srb::attachment_point(model, x, 0).head<2>(), srb::attachment_point(model, x, 1).head<2>();
  return p;
}

inline void run_full(const ScenarioConfig& cfg, RunLog& log)
{
  const planner::BarrierSet set = cfg.barrier_set();
  const Eigen::Matrix4d Ps = cfg.planner_weight.asDiagonal();
  const srb::SrbModel model = cfg.srb_model();
  mpc::MpcConfig mcfg = cfg.mpc;
  mcfg.dt = cfg.tick;
  mpc::Mpc controller(mcfg);
  FootPlanner feet(model, cfg.gait);
  NoiseInjector noise(cfg.noise);
  Recorder rec{cfg, log};
  log.summary.mpc_decision_variables = mcfg.decision_variables();

  srb::SrbState x = initial_plant_state(cfg, model);
  const int n_ticks = static_cast<int>(std::llround(cfg.duration / cfg.tick));
  const double h = cfg.tick / cfg.plant_substeps;
  int tick = 0;
  for (; tick <= n_ticks; ++tick) {
    const double t = tick * cfg.tick;
    const Vector4d phi = planar_attachments(model, x);
    const planner::PlannerState state(phi);

    auto t0 = std::chrono::steady_clock::now();
    const planner::PlannerOutput out =
        planner::plan_safe_velocity(state, set, planner::desired_velocity(state, cfg.goal, cfg.goal_gain), Ps);
    log.planner_solve_us.push_back(micros_since(t0));
    const Vector4d command = noise.apply(out.safe_velocity);

    LogRow row;
    row.time = t;
    for (int i = 0; i < 2; ++i) {
      const auto is = static_cast<std::size_t>(i);
      row.position[is] = x.agents[is].position;
      row.velocity[is] = x.agents[is].velocity;
      row.euler[is] = geom::euler_zyx(x.agents[is].rotation_matrix());
    }
    row.phi_s = out.safe_velocity;
    row.barriers = out.barrier_values;
    row.separation = (srb::attachment_point(model, x, 0) - srb::attachment_point(model, x, 1)).norm();
    row.flags = (out.fallback ? kPlannerFallback : 0u) | (cfg.noise.enabled ? kNoise : 0u);

    if (at_goal(phi, cfg.goal, cfg.goal_tolerance)) {
      rec.push(std::move(row));
      log.summary.goal_reached = true;
      log.summary.goal_time = t;
      break;
    }
    if (tick == n_ticks) {
      rec.push(std::move(row));
      break;
    }

    const srb::ContactState contacts = feet.update(t, x, command);
    const mpc::ReferenceTrajectory ref = mpc::build_reference(model, command, x, mcfg);
    const mpc::MpcSolution sol = controller.step(model, x, contacts, ref);
    log.mpc_solve_us.push_back(sol.diagnostics.solve_time_us);
    srb::ForceVector f = sol.control.grf;
    if (!sol.ok()) {
      row.flags |= kMpcFailed;
      ++log.summary.mpc_failures;
      f = srb::gravity_compensation(model, contacts);
    } else {
      log.summary.max_holonomic_residual = std::max(log.summary.max_holonomic_residual, sol.diagnostics.holonomic_residual);
      log.summary.max_friction_violation = std::max(log.summary.max_friction_violation, sol.diagnostics.friction_violation);
    }
    if (sol.diagnostics.softened) {
      row.flags |= kMpcSoftened;
      ++log.summary.mpc_softened;
    }
    row.grf = f;

    try {
      for (int s = 0; s < cfg.plant_substeps; ++s) {
        const srb::StepResult step = srb::integrate(model, x, contacts, f, h);
        if (s == 0) row.lambda = step.lambda;
        x = step.state;
      }
    } catch (const std::exception& e) {
      rec.push(std::move(row));
      log.summary.aborted = true;
      log.summary.abort_tick = tick;
      log.summary.abort_reason = e.what();
      break;
    }
    rec.push(std::move(row));

    // Velocity the tick's command asked for versus what the plant realized by the end of it.
    if (t + cfg.tick >= cfg.thresholds.tracking_settle - 1e-12) {
      for (int i = 0; i < 2; ++i)
        rec.tracking_sq += (command.segment<2>(2 * i) - x.agents[i].velocity.head<2>()).squaredNorm();
      rec.tracking_n += 2;
    }
  }
  rec.finish(planar_attachments(model, x), tick);
}

}  // namespace detail

/// Runs one scenario to the goal or the time limit. Plant aborts are recorded in the summary.
inline RunLog run_scenario(const ScenarioConfig& cfg)
{
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunLog log;
  log.barrier_labels = planner::barrier_labels(cfg.barrier_set());
  log.summary.scenario = cfg.name;
  log.summary.mode = cfg.mode;
  if (cfg.mode == RunMode::Kinematic)
    detail::run_kinematic(cfg, log);
  else
    detail::run_full(cfg, log);
  log.summary.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace coopcbf::sim

#endif  // COOPCBF_SIM_HPP
