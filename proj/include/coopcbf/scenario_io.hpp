#ifndef COOPCBF_SCENARIO_IO_HPP
#define COOPCBF_SCENARIO_IO_HPP

// JSON scenario files and run summaries. Keys carry their unit (radius_m, tick_s); every key
// is optional and falls back to the ScenarioConfig default, unknown keys are errors.
// Weight matrices are stored as diagonals.

#include "coopcbf/scenario.hpp"
#include "coopcbf/sim.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace coopcbf::io {

using json = nlohmann::ordered_json;

namespace detail {

/// Reads fields off one JSON object and remembers which keys were asked for.
class ObjectReader
{
public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
  {
    if (!j_.is_object()) throw ScenarioError((path_.empty() ? std::string("scenario") : path_) + ": expected an object");
  }

  const json* find(const std::string& key)
  {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out)
  {
    if (const json* v = find(key)) out = as_number(*v, child(key));
  }

  void integer(const std::string& key, int& out)
  {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ScenarioError(child(key) + ": expected an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out)
  {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ScenarioError(child(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out)
  {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ScenarioError(child(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  template <int N>
  void vector(const std::string& key, Eigen::Matrix<double, N, 1>& out)
  {
    if (const json* v = find(key)) out = as_vector<N>(*v, child(key));
  }

  void finish() const
  {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ScenarioError("unknown key '" + child(it.key()) + "'");
  }

private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;

public:
  static double as_number(const json& v, const std::string& path)
  {
    if (!v.is_number()) throw ScenarioError(path + ": expected a number");
    return v.get<double>();
  }

  template <int N>
  static Eigen::Matrix<double, N, 1> as_vector(const json& v, const std::string& path)
  {
    if (!v.is_array() || (N != Eigen::Dynamic && static_cast<int>(v.size()) != N))
      throw ScenarioError(path + ": expected an array of " + (N == Eigen::Dynamic ? std::string("numbers") : std::to_string(N) + " numbers"));
    Eigen::Matrix<double, N, 1> out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t k = 0; k < v.size(); ++k)
      out[static_cast<Eigen::Index>(k)] = as_number(v[k], path + "[" + std::to_string(k) + "]");
    return out;
  }
};

template <class Derived>
json to_array(const Eigen::MatrixBase<Derived>& v)
{
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

inline json agent_pair(const Eigen::Vector4d& v) { return json::array({to_array(v.head<2>()), to_array(v.tail<2>())}); }

inline Eigen::Vector4d read_agent_pair(const json& v, const std::string& path)
{
  if (!v.is_array() || v.size() != 2) throw ScenarioError(path + ": expected [[x1, y1], [x2, y2]]");
  Eigen::Vector4d out;
  out << ObjectReader::as_vector<2>(v[0], path + "[0]"), ObjectReader::as_vector<2>(v[1], path + "[1]");
  return out;
}

/// Diagonal of a weight matrix; off-diagonal entries cannot be written to a file.
inline json diagonal(const srb::Matrix24& M, const char* name)
{
  const srb::Matrix24 off = M - srb::Matrix24(M.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() > 0.0) throw ScenarioError(std::string("mpc.") + name + ": only diagonal weights can be serialized");
  return to_array(M.diagonal());
}

inline void read_diagonal(ObjectReader& r, const std::string& key, srb::Matrix24& M)
{
  Eigen::Matrix<double, 24, 1> d;
  if (r.find(key)) {
    r.vector<24>(key, d);
    M = d.asDiagonal();
  }
}

inline const char* to_string(mpc::ForceReference f)
{
  return f == mpc::ForceReference::GravityCompensation ? "gravity_compensation" : "zero";
}

inline const char* to_string(mpc::Formulation f) { return f == mpc::Formulation::Condensed ? "condensed" : "stacked"; }

}  // namespace detail

inline json to_json(const ScenarioConfig& c)
{
  using detail::to_array;
  json j;
  j["name"] = c.name;
  j["mode"] = to_string(c.mode);
  json obs = json::array();
  for (const auto& o : c.obstacles) obs.push_back({{"center_m", to_array(o.center)}, {"radius_m", o.radius}});
  j["obstacles"] = obs;
  j["start_m"] = detail::agent_pair(c.start);
  j["goal_m"] = detail::agent_pair(c.goal);
  j["psi_m2"] = c.psi;
  j["epsilon"] = c.epsilon;
  j["gamma_samples"] = c.gamma_samples;
  j["gains"] = {{"obstacle", c.obstacle_gain},
                {"holonomic_lower", c.holonomic_gain_lower},
                {"holonomic_upper", c.holonomic_gain_upper},
                {"goal", c.goal_gain}};
  j["agent_radius_m"] = c.agent_radius;
  j["planner_weight"] = to_array(c.planner_weight);
  j["tick_s"] = c.tick;
  j["plant_substeps"] = c.plant_substeps;
  j["duration_s"] = c.duration;
  j["goal_tolerance_m"] = c.goal_tolerance;
  // A null level means -inf dB (noise off); JSON has no infinities.
  j["noise"] = {{"enabled", c.noise.enabled},
                {"level_db", std::isfinite(c.noise.level_db) ? json(c.noise.level_db) : json(nullptr)},
                {"seed", c.noise.seed}};
  j["gait"] = {{"period_s", c.gait.period}, {"duty", c.gait.duty}, {"offsets", c.gait.offsets}};

  json hips = json::array();
  for (const auto& h : c.robot.hip_offsets) hips.push_back(to_array(h));
  json inertia = json::array();
  for (int r = 0; r < 3; ++r) inertia.push_back(to_array(c.robot.inertia.row(r).transpose()));
  j["robot"] = {{"mass_kg", c.robot.mass},
                {"inertia_kgm2", inertia},
                {"attach_offset_m", to_array(c.robot.attach_offset)},
                {"hip_offsets_m", hips},
                {"nominal_height_m", c.robot.nominal_height}};

  const mpc::MpcConfig& m = c.mpc;
  j["mpc"] = {{"horizon", m.horizon},
              {"Q_diag", detail::diagonal(m.Q, "Q_diag")},
              {"P_diag", detail::diagonal(m.P, "P_diag")},
              {"R_f_diag", detail::diagonal(m.R_f, "R_f_diag")},
              {"R_lambda", m.R_lambda},
              {"mu", m.mu},
              {"fz_min_N", m.fz_min},
              {"fz_max_N", m.fz_max},
              {"force_reference", detail::to_string(m.force_reference)},
              {"formulation", detail::to_string(m.formulation)},
              {"softening_weight", m.softening_weight},
              {"max_yaw_rate_radps", m.max_yaw_rate},
              {"qp", {{"tolerance", m.qp.tolerance}, {"max_iterations", m.qp.max_iterations}, {"regularization", m.qp.regularization}}}};

  const Thresholds& t = c.thresholds;
  j["thresholds"] = {{"min_barrier", t.min_barrier},
                     {"require_goal", t.require_goal},
                     {"separation_slack_m2", t.separation_slack},
                     {"max_drift_m", t.max_drift},
                     {"max_tracking_rms_mps", t.max_tracking_rms},
                     {"tracking_settle_s", t.tracking_settle}};
  return j;
}

/// Builds a config from parsed JSON and validates it.
inline ScenarioConfig from_json(const json& j)
{
  using detail::ObjectReader;
  ScenarioConfig c;
  ObjectReader r(j, "");
  r.string("name", c.name);
  if (const json* v = r.find("mode")) {
    if (*v == "kinematic")
      c.mode = RunMode::Kinematic;
    else if (*v == "full")
      c.mode = RunMode::Full;
    else
      throw ScenarioError("mode: expected \"kinematic\" or \"full\"");
  }
  if (const json* v = r.find("obstacles")) {
    if (!v->is_array()) throw ScenarioError("obstacles: expected an array");
    c.obstacles.clear();
    for (std::size_t k = 0; k < v->size(); ++k) {
      ObjectReader o((*v)[k], "obstacles[" + std::to_string(k) + "]");
      planner::Obstacle ob{Eigen::Vector2d::Zero(), 0.0};
      if (!o.find("center_m") || !o.find("radius_m")) throw ScenarioError(o.child("") + " needs center_m and radius_m");
      o.vector<2>("center_m", ob.center);
      o.number("radius_m", ob.radius);
      o.finish();
      c.obstacles.push_back(ob);
    }
  }
  if (const json* v = r.find("start_m")) c.start = detail::read_agent_pair(*v, "start_m");
  if (const json* v = r.find("goal_m")) c.goal = detail::read_agent_pair(*v, "goal_m");
  r.number("psi_m2", c.psi);
  r.number("epsilon", c.epsilon);
  if (const json* v = r.find("gamma_samples")) {
    const Eigen::VectorXd g = ObjectReader::as_vector<Eigen::Dynamic>(*v, "gamma_samples");
    c.gamma_samples.assign(g.data(), g.data() + g.size());
  }
  if (const json* v = r.find("gains")) {
    ObjectReader g(*v, "gains");
    g.number("obstacle", c.obstacle_gain);
    g.number("holonomic_lower", c.holonomic_gain_lower);
    g.number("holonomic_upper", c.holonomic_gain_upper);
    g.number("goal", c.goal_gain);
    g.finish();
  }
  r.number("agent_radius_m", c.agent_radius);
  r.vector<4>("planner_weight", c.planner_weight);
  r.number("tick_s", c.tick);
  r.integer("plant_substeps", c.plant_substeps);
  r.number("duration_s", c.duration);
  r.number("goal_tolerance_m", c.goal_tolerance);
  if (const json* v = r.find("noise")) {
    ObjectReader n(*v, "noise");
    n.boolean("enabled", c.noise.enabled);
    if (const json* l = n.find("level_db"))
      c.noise.level_db = l->is_null() ? -std::numeric_limits<double>::infinity() : ObjectReader::as_number(*l, "noise.level_db");
    if (const json* s = n.find("seed")) {
      if (!s->is_number_unsigned()) throw ScenarioError("noise.seed: expected a nonnegative integer");
      c.noise.seed = s->get<std::uint64_t>();
    }
    n.finish();
  }
  if (const json* v = r.find("gait")) {
    ObjectReader g(*v, "gait");
    g.number("period_s", c.gait.period);
    g.number("duty", c.gait.duty);
    Eigen::Vector4d off;
    if (g.find("offsets")) {
      g.vector<4>("offsets", off);
      for (int k = 0; k < 4; ++k) c.gait.offsets[static_cast<std::size_t>(k)] = off[k];
    }
    g.finish();
  }
  if (const json* v = r.find("robot")) {
    ObjectReader b(*v, "robot");
    b.number("mass_kg", c.robot.mass);
    if (const json* in = b.find("inertia_kgm2")) {
      if (!in->is_array() || in->size() != 3) throw ScenarioError("robot.inertia_kgm2: expected a 3x3 array");
      for (int row = 0; row < 3; ++row)
        c.robot.inertia.row(row) =
            ObjectReader::as_vector<3>((*in)[static_cast<std::size_t>(row)], "robot.inertia_kgm2[" + std::to_string(row) + "]").transpose();
    }
    b.vector<3>("attach_offset_m", c.robot.attach_offset);
    if (const json* h = b.find("hip_offsets_m")) {
      if (!h->is_array() || h->size() != 4) throw ScenarioError("robot.hip_offsets_m: expected 4 points (FR, FL, RR, RL)");
      for (std::size_t l = 0; l < 4; ++l)
        c.robot.hip_offsets[l] = ObjectReader::as_vector<3>((*h)[l], "robot.hip_offsets_m[" + std::to_string(l) + "]");
    }
    b.number("nominal_height_m", c.robot.nominal_height);
    b.finish();
  }
  if (const json* v = r.find("mpc")) {
    ObjectReader m(*v, "mpc");
    mpc::MpcConfig& mc = c.mpc;
    m.integer("horizon", mc.horizon);
    detail::read_diagonal(m, "Q_diag", mc.Q);
    detail::read_diagonal(m, "P_diag", mc.P);
    detail::read_diagonal(m, "R_f_diag", mc.R_f);
    m.number("R_lambda", mc.R_lambda);
    m.number("mu", mc.mu);
    m.number("fz_min_N", mc.fz_min);
    m.number("fz_max_N", mc.fz_max);
    if (const json* f = m.find("force_reference")) {
      if (*f == "gravity_compensation")
        mc.force_reference = mpc::ForceReference::GravityCompensation;
      else if (*f == "zero")
        mc.force_reference = mpc::ForceReference::Zero;
      else
        throw ScenarioError("mpc.force_reference: expected \"gravity_compensation\" or \"zero\"");
    }
    if (const json* f = m.find("formulation")) {
      if (*f == "condensed")
        mc.formulation = mpc::Formulation::Condensed;
      else if (*f == "stacked")
        mc.formulation = mpc::Formulation::Stacked;
      else
        throw ScenarioError("mpc.formulation: expected \"condensed\" or \"stacked\"");
    }
    m.number("softening_weight", mc.softening_weight);
    m.number("max_yaw_rate_radps", mc.max_yaw_rate);
    if (const json* q = m.find("qp")) {
      ObjectReader qr(*q, "mpc.qp");
      qr.number("tolerance", mc.qp.tolerance);
      qr.integer("max_iterations", mc.qp.max_iterations);
      qr.number("regularization", mc.qp.regularization);
      qr.finish();
    }
    m.finish();
  }
  if (const json* v = r.find("thresholds")) {
    ObjectReader t(*v, "thresholds");
    Thresholds& th = c.thresholds;
    t.number("min_barrier", th.min_barrier);
    t.boolean("require_goal", th.require_goal);
    t.number("separation_slack_m2", th.separation_slack);
    t.number("max_drift_m", th.max_drift);
    t.number("max_tracking_rms_mps", th.max_tracking_rms);
    t.number("tracking_settle_s", th.tracking_settle);
    t.finish();
  }
  r.finish();
  c.mpc.dt = c.tick;
  c.validate();
  return c;
}

/// Parses scenario text; syntax errors carry the line and column from the parser.
inline ScenarioConfig parse_scenario(const std::string& text, const std::string& origin = "<string>")
{
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError(origin + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const ScenarioError& e) {
    throw ScenarioError(origin + ": " + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw ScenarioError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

inline std::string serialize(const ScenarioConfig& c) { return to_json(c).dump(2) + "\n"; }

namespace detail {

/// JSON has no NaN or infinity; those map to null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

inline json summary_json(const ScenarioConfig& cfg, const sim::RunLog& log, const std::vector<sim::Check>& checks)
{
  using detail::finite_or_null;
  const sim::RunSummary& s = log.summary;
  json j;
  j["scenario"] = s.scenario;
  j["mode"] = to_string(s.mode);
  j["noise"] = {{"enabled", cfg.noise.enabled}, {"level_db", finite_or_null(cfg.noise.level_db)}, {"seed", cfg.noise.seed}};
  j["passed"] = sim::all_passed(checks);
  j["ticks"] = s.ticks;
  j["sim_time_s"] = s.sim_time;
  j["min_barrier"] = finite_or_null(s.min_barrier);
  j["min_barrier_label"] = s.min_barrier_label;
  j["goal_reached"] = s.goal_reached;
  j["goal_time_s"] = finite_or_null(s.goal_time);
  j["final_goal_distance_m"] = {s.final_goal_distance[0], s.final_goal_distance[1]};
  j["max_separation_sq_deviation_m2"] = s.max_separation_sq_deviation;
  j["max_band_excursion_m2"] = s.max_band_excursion;
  j["max_separation_error_m"] = s.max_drift;
  j["tracking_rms_mps"] = finite_or_null(s.tracking_rms);
  j["planner_fallbacks"] = s.planner_fallbacks;
  j["mpc_failures"] = s.mpc_failures;
  j["mpc_softened"] = s.mpc_softened;
  j["mpc_decision_variables"] = s.mpc_decision_variables;
  j["max_holonomic_residual"] = s.max_holonomic_residual;
  j["max_friction_violation_N"] = s.max_friction_violation;
  j["planner_solve_us"] = {{"median", s.planner_median_us}, {"max", s.planner_max_us}};
  j["mpc_solve_us"] = {{"median", s.mpc_median_us}, {"max", s.mpc_max_us}};
  j["aborted"] = s.aborted;
  if (s.aborted) j["abort"] = {{"tick", s.abort_tick}, {"reason", s.abort_reason}};
  j["wall_time_s"] = s.wall_time_s;
  json cj = json::array();
  for (const auto& c : checks)
    cj.push_back({{"name", c.name}, {"passed", c.passed}, {"value", finite_or_null(c.value)}, {"limit", finite_or_null(c.limit)}});
  j["checks"] = cj;
  return j;
}

}  // namespace coopcbf::io

#endif  // COOPCBF_SCENARIO_IO_HPP
