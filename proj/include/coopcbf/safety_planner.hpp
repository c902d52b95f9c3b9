#ifndef COOPCBF_SAFETY_PLANNER_HPP
#define COOPCBF_SAFETY_PLANNER_HPP

// Kinematic safety layer for two agents joined by a rigid bar.
//
// The stacked barrier vector H(phi) is laid out as
//   [ h_agent(i, z)       for i in agents, z in obstacles      ]  (agent-major)
//   [ h_coord(c(gamma),z) for c in gamma samples, z in obstacles ]  (sample-major)
//   [ h_hc1, h_hc2 ]
// and the planner solves
//   min (v - k_d)' P_s (v - k_d)   s.t.   gradH(phi) v >= -A H(phi).

#include "coopcbf/qp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace coopcbf::planner {

using Eigen::Index;
using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector4d;
using Eigen::VectorXd;

inline constexpr int kNumAgents = 2;

/// Raised when a barrier gradient is requested at a point where the distance is zero.
class DegenerateBarrier : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

/// Planar positions (phi_1x, phi_1y, phi_2x, phi_2y), meters.
struct PlannerState
{
  Vector4d positions = Vector4d::Zero();

  PlannerState() = default;
  explicit PlannerState(const Vector4d& p) : positions(p) {}
  PlannerState(const Vector2d& agent1, const Vector2d& agent2) { positions << agent1, agent2; }

  Vector2d agent(int i) const { return positions.segment<2>(2 * i); }
  bool finite() const { return positions.allFinite(); }
};

struct Obstacle
{
  Vector2d center = Vector2d::Zero();
  double radius = 0.0;
};

struct HolonomicSpec
{
  /// Squared bar length, m^2.
  double psi = 1.0;
  /// Relative width of the admissible band around psi.
  double epsilon = 5e-5;

  void validate() const
  {
    if (!(psi > 0.0)) throw std::invalid_argument("HolonomicSpec: psi must be positive");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("HolonomicSpec: epsilon must lie in (0, 1)");
  }
};

struct BarrierSet
{
  std::vector<Obstacle> obstacles;
  std::vector<double> gamma_samples{0.2, 0.4, 0.6, 0.8};
  /// Per-barrier gains; empty means "use obstacle_gain for every row".
  std::vector<double> agent_gains;         // kNumAgents * D, agent-major
  std::vector<double> coordination_gains;  // eta * D, sample-major
  double obstacle_gain = 0.1;
  double holonomic_gain_lower = 0.001;
  double holonomic_gain_upper = 0.001;
  HolonomicSpec holonomic;
  /// Footprint added to the obstacle radius for the per-agent barriers.
  double agent_radius = 0.0;

  Index num_obstacles() const { return static_cast<Index>(obstacles.size()); }
  Index num_samples() const { return static_cast<Index>(gamma_samples.size()); }
  Index dimension() const { return num_obstacles() * (kNumAgents + num_samples()) + 2; }

  void validate() const
  {
    holonomic.validate();
    for (const auto& o : obstacles)
      if (!(o.radius > 0.0)) throw std::invalid_argument("BarrierSet: obstacle radius must be positive");
    for (double g : gamma_samples)
      if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("BarrierSet: gamma samples must lie in [0, 1]");
    if (!(agent_radius >= 0.0)) throw std::invalid_argument("BarrierSet: agent_radius must be nonnegative");
    const auto D = static_cast<std::size_t>(num_obstacles());
    if (!agent_gains.empty() && agent_gains.size() != kNumAgents * D)
      throw std::invalid_argument("BarrierSet: agent_gains must have N*D entries");
    if (!coordination_gains.empty() && coordination_gains.size() != gamma_samples.size() * D)
      throw std::invalid_argument("BarrierSet: coordination_gains must have eta*D entries");
    auto positive = [](double g) { return g > 0.0; };
    if (!(positive(obstacle_gain) && positive(holonomic_gain_lower) && positive(holonomic_gain_upper)))
      throw std::invalid_argument("BarrierSet: gains must be strictly positive");
    for (double g : agent_gains)
      if (!positive(g)) throw std::invalid_argument("BarrierSet: gains must be strictly positive");
    for (double g : coordination_gains)
      if (!positive(g)) throw std::invalid_argument("BarrierSet: gains must be strictly positive");
  }
};

// -- individual barriers ------------------------------------------------------

/// |phi_i - q| - (r + agent_radius).
inline double barrier_agent(const PlannerState& phi, int i, const Obstacle& obs, double agent_radius)
{
  return (phi.agent(i) - obs.center).norm() - (obs.radius + agent_radius);
}

inline Vector4d barrier_agent_gradient(const PlannerState& phi, int i, const Obstacle& obs)
{
  const Vector2d diff = phi.agent(i) - obs.center;
  const double dist = diff.norm();
  if (!(dist > 0.0)) throw DegenerateBarrier("agent barrier gradient undefined at the obstacle center");
  Vector4d g = Vector4d::Zero();
  g.segment<2>(2 * i) = diff / dist;
  return g;
}

/// Point on the bar at weight gamma: gamma * phi_1 + (1 - gamma) * phi_2.
inline Vector2d coordination_point(const PlannerState& phi, double gamma)
{
  return gamma * phi.agent(0) + (1.0 - gamma) * phi.agent(1);
}

inline double barrier_coordination(const PlannerState& phi, double gamma, const Obstacle& obs)
{
  return (coordination_point(phi, gamma) - obs.center).norm() - obs.radius;
}

inline Vector4d barrier_coordination_gradient(const PlannerState& phi, double gamma, const Obstacle& obs)
{
  const Vector2d diff = coordination_point(phi, gamma) - obs.center;
  const double dist = diff.norm();
  if (!(dist > 0.0)) throw DegenerateBarrier("coordination barrier gradient undefined at the obstacle center");
  const Vector2d unit = diff / dist;
  Vector4d g;
  g << gamma * unit, (1.0 - gamma) * unit;
  return g;
}

/// (h1, h2) = (|p1-p2|^2 - (1-eps) psi, (1+eps) psi - |p1-p2|^2).
inline std::pair<double, double> barrier_holonomic(const PlannerState& phi, const HolonomicSpec& spec)
{
  const double sq = (phi.agent(0) - phi.agent(1)).squaredNorm();
  return {sq - (1.0 - spec.epsilon) * spec.psi, (1.0 + spec.epsilon) * spec.psi - sq};
}

/// Gradient of h1; the gradient of h2 is its negative.
inline Vector4d barrier_holonomic_gradient(const PlannerState& phi)
{
  const Vector2d d = phi.agent(0) - phi.agent(1);
  Vector4d g;
  g << 2.0 * d, -2.0 * d;
  return g;
}

// -- stacking -----------------------------------------------------------------

struct StackedBarriers
{
  VectorXd values;
  MatrixXd gradient;  // rows: d h_k / d phi
  VectorXd gains;     // diagonal of A
};

inline std::vector<std::string> barrier_labels(const BarrierSet& set)
{
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(set.dimension()));
  for (int i = 0; i < kNumAgents; ++i)
    for (Index z = 0; z < set.num_obstacles(); ++z)
      labels.push_back("h_agent" + std::to_string(i + 1) + "_obs" + std::to_string(z + 1));
  for (Index c = 0; c < set.num_samples(); ++c)
    for (Index z = 0; z < set.num_obstacles(); ++z)
      labels.push_back("h_co" + std::to_string(c + 1) + "_obs" + std::to_string(z + 1));
  labels.emplace_back("h_hc1");
  labels.emplace_back("h_hc2");
  return labels;
}

inline StackedBarriers stack_barriers(const PlannerState& phi, const BarrierSet& set)
{
  const Index D = set.num_obstacles();
  const Index eta = set.num_samples();
  const Index dim = set.dimension();
  StackedBarriers out{VectorXd(dim), MatrixXd(dim, 4), VectorXd(dim)};

  Index k = 0;
  for (int i = 0; i < kNumAgents; ++i) {
    for (Index z = 0; z < D; ++z, ++k) {
      const Obstacle& obs = set.obstacles[static_cast<std::size_t>(z)];
      out.values[k] = barrier_agent(phi, i, obs, set.agent_radius);
      out.gradient.row(k) = barrier_agent_gradient(phi, i, obs).transpose();
      out.gains[k] = set.agent_gains.empty() ? set.obstacle_gain : set.agent_gains[static_cast<std::size_t>(i * D + z)];
    }
  }
  for (Index c = 0; c < eta; ++c) {
    const double gamma = set.gamma_samples[static_cast<std::size_t>(c)];
    for (Index z = 0; z < D; ++z, ++k) {
      const Obstacle& obs = set.obstacles[static_cast<std::size_t>(z)];
      out.values[k] = barrier_coordination(phi, gamma, obs);
      out.gradient.row(k) = barrier_coordination_gradient(phi, gamma, obs).transpose();
      out.gains[k] =
          set.coordination_gains.empty() ? set.obstacle_gain : set.coordination_gains[static_cast<std::size_t>(c * D + z)];
    }
  }
  const auto [h1, h2] = barrier_holonomic(phi, set.holonomic);
  const Vector4d g1 = barrier_holonomic_gradient(phi);
  out.values[k] = h1;
  out.gradient.row(k) = g1.transpose();
  out.gains[k++] = set.holonomic_gain_lower;
  out.values[k] = h2;
  out.gradient.row(k) = -g1.transpose();
  out.gains[k++] = set.holonomic_gain_upper;
  return out;
}

// -- velocity QP --------------------------------------------------------------

struct PlannerOutput
{
  Vector4d safe_velocity = Vector4d::Zero();
  VectorXd barrier_values;
  std::vector<bool> active_flags;
  qp::QpStatus solver_status = qp::QpStatus::Optimal;
  /// True when the QP failed and zero velocity was commanded instead.
  bool fallback = false;
  double kkt_residual = 0.0;
};

/// Nominal goal-seeking velocity gain * (goal - phi).
inline Vector4d desired_velocity(const PlannerState& phi, const Vector4d& goal, double gain)
{
  return gain * (goal - phi.positions);
}

inline constexpr double kActiveSlack = 1e-8;

namespace detail {

// min (v - vd)' Ps (v - vd) s.t. G v >= -diag(gains) h.
inline qp::QpSolution filter_qp(const MatrixXd& G, const VectorXd& h, const VectorXd& gains, const VectorXd& vd,
                                const MatrixXd& Ps, const qp::QpSettings& settings)
{
  qp::QpProblem pb(2.0 * Ps, -2.0 * Ps * vd);
  pb.ineq_matrix = G;
  pb.ineq_vector = -gains.cwiseProduct(h);
  return qp::solve_qp(pb, settings);
}

}  // namespace detail

inline PlannerOutput plan_safe_velocity(const PlannerState& phi, const BarrierSet& set, const Vector4d& k_d,
                                        const Matrix4d& P_s, const qp::QpSettings& settings = {})
{
  const StackedBarriers sb = stack_barriers(phi, set);
  const qp::QpSolution sol = detail::filter_qp(sb.gradient, sb.values, sb.gains, k_d, P_s, settings);

  PlannerOutput out;
  out.barrier_values = sb.values;
  out.solver_status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  out.active_flags.assign(static_cast<std::size_t>(sb.values.size()), false);
  if (sol.status != qp::QpStatus::Optimal) {
    out.fallback = true;
    out.safe_velocity.setZero();
    return out;
  }
  out.safe_velocity = sol.primal;
  const VectorXd slack = sb.gradient * sol.primal + sb.gains.cwiseProduct(sb.values);
  for (Index k = 0; k < slack.size(); ++k)
    out.active_flags[static_cast<std::size_t>(k)] = slack[k] <= kActiveSlack * (1.0 + std::abs(sb.gains[k] * sb.values[k]));
  return out;
}

/// Per-agent safety filter: min (u - u_d)' P_s (u - u_d) s.t. one distance barrier per obstacle.
/// Returns zero velocity if the QP cannot be solved.
inline Vector2d single_agent_filter(const Vector2d& position, const std::vector<Obstacle>& obstacles,
                                    const Vector2d& u_d, const Eigen::Matrix2d& P_s, const std::vector<double>& gains,
                                    double agent_radius = 0.0, const qp::QpSettings& settings = {})
{
  if (gains.size() != obstacles.size() && gains.size() != 1)
    throw std::invalid_argument("single_agent_filter: need one gain or one gain per obstacle");
  const auto D = static_cast<Index>(obstacles.size());
  MatrixXd G(D, 2);
  VectorXd h(D), a(D);
  for (Index z = 0; z < D; ++z) {
    const Obstacle& obs = obstacles[static_cast<std::size_t>(z)];
    const Vector2d diff = position - obs.center;
    const double dist = diff.norm();
    if (!(dist > 0.0)) throw DegenerateBarrier("agent barrier gradient undefined at the obstacle center");
    G.row(z) = (diff / dist).transpose();
    h[z] = dist - (obs.radius + agent_radius);
    a[z] = gains.size() == 1 ? gains.front() : gains[static_cast<std::size_t>(z)];
  }
  const qp::QpSolution sol = detail::filter_qp(G, h, a, u_d, P_s, settings);
  if (sol.status != qp::QpStatus::Optimal) return Vector2d::Zero();
  return sol.primal;
}

/// Stateless convenience bundle of the planner configuration.
struct SafetyPlanner
{
  BarrierSet barriers;
  Matrix4d weight = 0.5 * Matrix4d::Identity();
  qp::QpSettings settings;

  PlannerOutput plan(const PlannerState& phi, const Vector4d& k_d) const
  {
    return plan_safe_velocity(phi, barriers, k_d, weight, settings);
  }
};

}  // namespace coopcbf::planner

#endif  // COOPCBF_SAFETY_PLANNER_HPP
