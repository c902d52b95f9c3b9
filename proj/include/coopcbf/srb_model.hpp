#ifndef COOPCBF_SRB_MODEL_HPP
#define COOPCBF_SRB_MODEL_HPP

#include "coopcbf/geometry.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace coopcbf::srb {

inline constexpr int kAgents = 2;
inline constexpr int kLegs = 4;
inline constexpr int kAgentStateDim = 12;
inline constexpr int kStateDim = kAgents * kAgentStateDim;
inline constexpr int kForceDim = kAgents * kLegs * 3;

using Vector24 = Eigen::Matrix<double, kStateDim, 1>;
using Matrix24 = Eigen::Matrix<double, kStateDim, kStateDim>;
using RowVector24 = Eigen::Matrix<double, 1, kStateDim>;

/// Offsets inside one agent's 12-vector (c, v, xi, omega).
inline constexpr int kPos = 0;
inline constexpr int kVel = 3;
inline constexpr int kXi = 6;
inline constexpr int kOmega = 9;

inline int state_index(int agent, int field) { return agent * kAgentStateDim + field; }
inline int force_index(int agent, int leg) { return (agent * kLegs + leg) * 3; }

/// Attachment points too close or a degenerate multiplier coefficient.
struct SingularConstraint : std::domain_error
{
  using std::domain_error::domain_error;
};

/// Plant left the constraint manifold by more than the hard bound.
struct ConstraintDrift : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

inline Eigen::Matrix3d default_trunk_inertia()
{
  return Eigen::Vector3d(0.017, 0.056, 0.065).asDiagonal();
}

/// Legs are ordered FR, FL, RR, RL.
struct AgentParams
{
  double mass = 12.45;
  Eigen::Matrix3d inertia = default_trunk_inertia();
  /// Body-frame position of the bar attachment relative to the COM.
  Eigen::Vector3d attach_offset = Eigen::Vector3d::Zero();
  std::array<Eigen::Vector3d, kLegs> hip_offsets{{{0.183, -0.047, 0.0},
                                                  {0.183, 0.047, 0.0},
                                                  {-0.183, -0.047, 0.0},
                                                  {-0.183, 0.047, 0.0}}};
  double nominal_height = 0.26;

  void validate() const
  {
    if (!(mass > 0.0) || !std::isfinite(mass)) throw std::invalid_argument("AgentParams: mass must be positive");
    if (!inertia.allFinite() || (inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("AgentParams: inertia must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(inertia, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw std::invalid_argument("AgentParams: inertia must be positive definite");
    if (!attach_offset.allFinite()) throw std::invalid_argument("AgentParams: attach_offset not finite");
    if (!(nominal_height > 0.0)) throw std::invalid_argument("AgentParams: nominal_height must be positive");
  }
};

struct SrbModel
{
  std::array<AgentParams, kAgents> agents{};
  double gravity = 9.81;
  /// Squared bar length.
  double psi = 1.0;
  /// Plant-only constraint stabilization.
  double baumgarte_frequency = 50.0;
  double baumgarte_damping = 1.0;
  double drift_limit = 0.05;

  void validate() const
  {
    for (const auto& a : agents) a.validate();
    if (!(gravity >= 0.0)) throw std::invalid_argument("SrbModel: gravity must be nonnegative");
    if (!(psi > 0.0)) throw std::invalid_argument("SrbModel: psi must be positive");
    if (!(baumgarte_frequency >= 0.0) || !(baumgarte_damping >= 0.0))
      throw std::invalid_argument("SrbModel: Baumgarte gains must be nonnegative");
  }
};

struct AgentState
{
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  geom::RotationState rotation;
  /// Body frame.
  Eigen::Vector3d angular_velocity = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation_matrix() const { return geom::approx_rotation(rotation); }
};

struct SrbState
{
  std::array<AgentState, kAgents> agents{};

  Vector24 vector() const
  {
    Vector24 x;
    for (int i = 0; i < kAgents; ++i) {
      const AgentState& a = agents[i];
      x.segment<3>(state_index(i, kPos)) = a.position;
      x.segment<3>(state_index(i, kVel)) = a.velocity;
      x.segment<3>(state_index(i, kXi)) = a.rotation.deviation;
      x.segment<3>(state_index(i, kOmega)) = a.angular_velocity;
    }
    return x;
  }

  /// Overwrites the 24 state entries; operating rotations are kept.
  void set_vector(const Vector24& x)
  {
    for (int i = 0; i < kAgents; ++i) {
      AgentState& a = agents[i];
      a.position = x.segment<3>(state_index(i, kPos));
      a.velocity = x.segment<3>(state_index(i, kVel));
      a.rotation.deviation = x.segment<3>(state_index(i, kXi));
      a.angular_velocity = x.segment<3>(state_index(i, kOmega));
    }
  }

  std::array<Eigen::Matrix3d, kAgents> operating_rotations() const
  {
    return {agents[0].rotation.operating, agents[1].rotation.operating};
  }

  bool finite() const
  {
    for (const auto& a : agents)
      if (!a.rotation.operating.allFinite()) return false;
    return vector().allFinite();
  }
};

struct ContactState
{
  std::array<std::array<bool, kLegs>, kAgents> stance{};
  /// World frame.
  std::array<std::array<Eigen::Vector3d, kLegs>, kAgents> feet{};

  int num_stance(int agent) const
  {
    int n = 0;
    for (bool s : stance[agent]) n += s ? 1 : 0;
    return n;
  }
};

struct ControlSolution
{
  Eigen::Matrix<double, kForceDim, 1> grf = Eigen::Matrix<double, kForceDim, 1>::Zero();
  double lambda = 0.0;
};

using ForceVector = Eigen::Matrix<double, kForceDim, 1>;

struct Wrench
{
  Eigen::Vector3d force = Eigen::Vector3d::Zero();
  Eigen::Vector3d torque = Eigen::Vector3d::Zero();
};

/// Feet placed under the hips at ground level for the current pose, all in stance.
inline ContactState standing_contacts(const SrbModel& model, const SrbState& x)
{
  ContactState c;
  for (int i = 0; i < kAgents; ++i) {
    const Eigen::Matrix3d R = x.agents[i].rotation_matrix();
    for (int l = 0; l < kLegs; ++l) {
      Eigen::Vector3d p = x.agents[i].position + R * model.agents[i].hip_offsets[l];
      p.z() = 0.0;
      c.stance[i][l] = true;
      c.feet[i][l] = p;
    }
  }
  return c;
}

/// Vertical forces m g / n on each stance foot; zero on swing feet.
inline ForceVector gravity_compensation(const SrbModel& model, const ContactState& contacts)
{
  ForceVector f = ForceVector::Zero();
  for (int i = 0; i < kAgents; ++i) {
    const int n = contacts.num_stance(i);
    if (n == 0) continue;
    for (int l = 0; l < kLegs; ++l)
      if (contacts.stance[i][l]) f(force_index(i, l) + 2) = model.agents[i].mass * model.gravity / n;
  }
  return f;
}

namespace detail {

template<typename S>
using Vec24 = Eigen::Matrix<S, kStateDim, 1>;

template<typename S>
struct Evaluation
{
  Vec24<S> xdot;
  std::array<geom::Vec3<S>, kAgents> force;
  std::array<geom::Vec3<S>, kAgents> torque;
  geom::Vec3<S> separation;  // p_1 - p_2
  S constraint;              // |p_1 - p_2|^2
  S constraint_rate;
  S constraint_accel;
};

/// Single pass over the interconnected model. Swing-leg forces are ignored.
template<typename S>
Evaluation<S> evaluate(const SrbModel& model, const Vec24<S>& x, const std::array<Eigen::Matrix3d, kAgents>& operating,
                       const ContactState& contacts, const Vec24<S>& f, const S& lambda)
{
  using V3 = geom::Vec3<S>;
  using M3 = geom::Mat3<S>;
  Evaluation<S> out;

  std::array<V3, kAgents> c, v, xi, w, xi_dot, arm, attach, attach_vel;
  std::array<M3, kAgents> R, Rop;
  for (int i = 0; i < kAgents; ++i) {
    c[i] = x.template segment<3>(state_index(i, kPos));
    v[i] = x.template segment<3>(state_index(i, kVel));
    xi[i] = x.template segment<3>(state_index(i, kXi));
    w[i] = x.template segment<3>(state_index(i, kOmega));
    Rop[i] = operating[i].template cast<S>();
    R[i] = geom::approx_rotation<S>(Rop[i], xi[i]);
    const V3 a = model.agents[i].attach_offset.template cast<S>();
    arm[i] = R[i] * a;
    attach[i] = c[i] + arm[i];
    xi_dot[i] = w[i] + S(0.5) * xi[i].cross(w[i]);
    // d/dt R_op (I + [xi]x) a = R_op (xi_dot x a)
    attach_vel[i] = v[i] + Rop[i] * xi_dot[i].cross(a);
  }

  const V3 d = attach[0] - attach[1];
  const V3 d_dot = attach_vel[0] - attach_vel[1];
  out.separation = d;
  out.constraint = d.squaredNorm();
  out.constraint_rate = S(2) * d.dot(d_dot);

  std::array<V3, kAgents> attach_acc;
  for (int i = 0; i < kAgents; ++i) {
    const AgentParams& p = model.agents[i];
    const V3 interaction = (i == 0 ? d : V3(-d)) * lambda;
    V3 force = interaction;
    V3 torque = arm[i].cross(interaction);
    for (int l = 0; l < kLegs; ++l) {
      if (!contacts.stance[i][l]) continue;
      const V3 fl = f.template segment<3>(force_index(i, l));
      force += fl;
      torque += (contacts.feet[i][l].template cast<S>() - c[i]).cross(fl);
    }
    force.z() -= S(p.mass * model.gravity);
    out.force[i] = force;
    out.torque[i] = torque;

    const M3 I = p.inertia.template cast<S>();
    const M3 I_inv = p.inertia.inverse().template cast<S>();
    const V3 v_dot = force / S(p.mass);
    const V3 w_dot = I_inv * (R[i].transpose() * torque - w[i].cross(I * w[i]));
    const V3 xi_ddot = w_dot + S(0.5) * (xi_dot[i].cross(w[i]) + xi[i].cross(w_dot));

    out.xdot.template segment<3>(state_index(i, kPos)) = v[i];
    out.xdot.template segment<3>(state_index(i, kVel)) = v_dot;
    out.xdot.template segment<3>(state_index(i, kXi)) = xi_dot[i];
    out.xdot.template segment<3>(state_index(i, kOmega)) = w_dot;

    const V3 a = p.attach_offset.template cast<S>();
    attach_acc[i] = v_dot + Rop[i] * xi_ddot.cross(a);
  }
  out.constraint_accel = S(2) * d_dot.squaredNorm() + S(2) * d.dot(attach_acc[0] - attach_acc[1]);
  return out;
}

inline Evaluation<double> evaluate(const SrbModel& model, const SrbState& x, const ContactState& contacts,
                                   const ForceVector& f, double lambda)
{
  return evaluate<double>(model, x.vector(), x.operating_rotations(), contacts, f, lambda);
}

}  // namespace detail

/// Per-agent net force (gravity included) and torque about the COM, world frame.
inline std::array<Wrench, kAgents> net_wrench(const SrbModel& model, const SrbState& x, const ContactState& contacts,
                                              const ForceVector& f, double lambda)
{
  const auto ev = detail::evaluate(model, x, contacts, f, lambda);
  return {Wrench{ev.force[0], ev.torque[0]}, Wrench{ev.force[1], ev.torque[1]}};
}

inline Vector24 dynamics(const SrbModel& model, const SrbState& x, const ContactState& contacts, const ForceVector& f,
                         double lambda)
{
  return detail::evaluate(model, x, contacts, f, lambda).xdot;
}

/// Second time derivative of |p_1 - p_2|^2 along the dynamics.
inline double constraint_accel(const SrbModel& model, const SrbState& x, const ContactState& contacts,
                               const ForceVector& f, double lambda)
{
  return detail::evaluate(model, x, contacts, f, lambda).constraint_accel;
}

inline double constraint_value(const SrbModel& model, const SrbState& x)
{
  return detail::evaluate(model, x, ContactState{}, ForceVector::Zero(), 0.0).constraint;
}

inline double constraint_rate(const SrbModel& model, const SrbState& x)
{
  return detail::evaluate(model, x, ContactState{}, ForceVector::Zero(), 0.0).constraint_rate;
}

/// Attachment point of agent i in the world frame.
inline Eigen::Vector3d attachment_point(const SrbModel& model, const SrbState& x, int i)
{
  return x.agents[i].position + x.agents[i].rotation_matrix() * model.agents[i].attach_offset;
}

/// |p_1 - p_2| - sqrt(psi).
inline double constraint_drift(const SrbModel& model, const SrbState& x)
{
  return (attachment_point(model, x, 0) - attachment_point(model, x, 1)).norm() - std::sqrt(model.psi);
}

/// Lambda such that the constraint acceleration equals target_accel (0 for the ideal constraint).
/// The acceleration is affine in lambda, so two evaluations give the coefficients.
inline double resolve_lambda(const SrbModel& model, const SrbState& x, const ContactState& contacts,
                             const ForceVector& f, double target_accel = 0.0)
{
  const double a0 = constraint_accel(model, x, contacts, f, 0.0);
  const double a1 = constraint_accel(model, x, contacts, f, 1.0) - a0;
  const double d2 = constraint_value(model, x);
  if (!(std::abs(a1) > 1e-9 * std::max(1.0, d2)) || !std::isfinite(a0))
    throw SingularConstraint("resolve_lambda: multiplier coefficient " + std::to_string(a1) +
                             " is degenerate (|p1-p2|^2 = " + std::to_string(d2) + ")");
  return (target_accel - a0) / a1;
}

/// Target for resolve_lambda that pulls Lambda back to psi (critically damped by default).
inline double baumgarte_target(const SrbModel& model, const SrbState& x)
{
  const auto ev = detail::evaluate(model, x, ContactState{}, ForceVector::Zero(), 0.0);
  const double wb = model.baumgarte_frequency;
  return -2.0 * model.baumgarte_damping * wb * ev.constraint_rate - wb * wb * (ev.constraint - model.psi);
}

/// Forward-Euler LTV step about an operating point:
///   x+ = A x + B f + b_lambda lambda + offset,
///   0  = c_x x + c_f f + c_lambda lambda + c_offset.
struct LinearizedModel
{
  Matrix24 A = Matrix24::Identity();
  Matrix24 B = Matrix24::Zero();
  Vector24 b_lambda = Vector24::Zero();
  Vector24 offset = Vector24::Zero();
  RowVector24 c_x = RowVector24::Zero();
  RowVector24 c_f = RowVector24::Zero();
  double c_lambda = 0.0;
  double c_offset = 0.0;
  /// Continuous-time Jacobians, before discretization.
  Matrix24 dgamma_dx = Matrix24::Zero();
  Matrix24 dgamma_df = Matrix24::Zero();
  Vector24 dgamma_dlambda = Vector24::Zero();
};

/// Jacobians by forward-mode automatic differentiation of the model.
inline LinearizedModel linearize(const SrbModel& model, const SrbState& x_op, const ContactState& contacts,
                                 const ForceVector& f_op, double lambda_op, double dt)
{
  if (!(dt > 0.0)) throw std::invalid_argument("linearize: dt must be positive");
  constexpr int kIn = 2 * kStateDim + 1;
  using Deriv = Eigen::Matrix<double, kIn, 1>;
  using AD = Eigen::AutoDiffScalar<Deriv>;

  const Vector24 xv = x_op.vector();
  detail::Vec24<AD> x_ad, f_ad;
  for (int k = 0; k < kStateDim; ++k) {
    x_ad(k) = AD(xv(k), kIn, k);
    f_ad(k) = AD(f_op(k), kIn, kStateDim + k);
  }
  const AD lam_ad(lambda_op, kIn, 2 * kStateDim);
  const auto ev = detail::evaluate<AD>(model, x_ad, x_op.operating_rotations(), contacts, f_ad, lam_ad);

  LinearizedModel lin;
  Vector24 gamma;
  for (int r = 0; r < kStateDim; ++r) {
    gamma(r) = ev.xdot(r).value();
    const Deriv& g = ev.xdot(r).derivatives();
    lin.dgamma_dx.row(r) = g.segment<kStateDim>(0).transpose();
    lin.dgamma_df.row(r) = g.segment<kStateDim>(kStateDim).transpose();
    lin.dgamma_dlambda(r) = g(2 * kStateDim);
  }
  lin.A = Matrix24::Identity() + dt * lin.dgamma_dx;
  lin.B = dt * lin.dgamma_df;
  lin.b_lambda = dt * lin.dgamma_dlambda;
  lin.offset = dt * (gamma - lin.dgamma_dx * xv - lin.dgamma_df * f_op - lin.dgamma_dlambda * lambda_op);

  const Deriv& gc = ev.constraint_accel.derivatives();
  lin.c_x = gc.segment<kStateDim>(0).transpose();
  lin.c_f = gc.segment<kStateDim>(kStateDim).transpose();
  lin.c_lambda = gc(2 * kStateDim);
  lin.c_offset = ev.constraint_accel.value() - lin.c_x.dot(xv) - lin.c_f.dot(f_op) - lin.c_lambda * lambda_op;
  return lin;
}

struct StepResult
{
  SrbState state;
  /// Multiplier at the start of the step.
  double lambda = 0.0;
};

/// One RK4 plant step. Lambda is re-resolved at every stage with Baumgarte feedback, then the
/// rotation deviation is folded into the operating point (omega is body-frame and carries over).
inline StepResult integrate(const SrbModel& model, const SrbState& x, const ContactState& contacts,
                            const ForceVector& f, double dt)
{
  if (!(dt > 0.0 && dt <= 0.01)) throw std::invalid_argument("integrate: dt must be in (0, 0.01]");
  StepResult out;
  auto stage = [&](const SrbState& s, double* lambda_out) {
    const double lam = resolve_lambda(model, s, contacts, f, baumgarte_target(model, s));
    if (lambda_out) *lambda_out = lam;
    return dynamics(model, s, contacts, f, lam);
  };

  const Vector24 x0 = x.vector();
  SrbState s = x;
  const Vector24 k1 = stage(s, &out.lambda);
  s.set_vector(x0 + 0.5 * dt * k1);
  const Vector24 k2 = stage(s, nullptr);
  s.set_vector(x0 + 0.5 * dt * k2);
  const Vector24 k3 = stage(s, nullptr);
  s.set_vector(x0 + dt * k3);
  const Vector24 k4 = stage(s, nullptr);
  s.set_vector(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));

  for (auto& a : s.agents) {
    // Fold through exp rather than the polar factor of I + [xi]x: the latter shortens every
    // step's rotation by |xi|^3/3, which accumulates over a long run.
    a.rotation.operating = geom::project_to_so3(a.rotation.operating * geom::exp_so3(a.rotation.deviation));
    a.rotation.deviation.setZero();
  }
  if (!s.finite()) throw ConstraintDrift("integrate: state became non-finite");
  const double drift = constraint_drift(model, s);
  if (std::abs(drift) > model.drift_limit)
    throw ConstraintDrift("integrate: constraint drift " + std::to_string(drift) + " m exceeds bound");
  out.state = s;
  return out;
}

}  // namespace coopcbf::srb

#endif  // COOPCBF_SRB_MODEL_HPP
