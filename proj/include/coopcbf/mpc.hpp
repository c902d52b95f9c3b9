#ifndef COOPCBF_MPC_HPP
#define COOPCBF_MPC_HPP

// Receding-horizon GRF planner over the interconnected SRB model.
//
// Per tick the model is linearized once about (x_now, f_prev, lambda_prev) and discretized with
// forward Euler. The horizon QP over (x_1..x_N, f_0..f_{N-1}, lambda_0..lambda_{N-1}) has
// N (24 + 24 + 1) variables. It is solved either condensed (states eliminated, swing-leg force
// components dropped) or as written (stacked); both give the same optimum.

#include "coopcbf/geometry.hpp"
#include "coopcbf/qp.hpp"
#include "coopcbf/srb_model.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace coopcbf::mpc {

using srb::ForceVector;
using srb::kAgents;
using srb::kForceDim;
using srb::kLegs;
using srb::kStateDim;
using srb::Matrix24;
using srb::Vector24;

/// Per agent: position (x, y, z), velocity, xi, omega.
inline Matrix24 default_stage_weight()
{
  Vector24 d;
  for (int i = 0; i < kAgents; ++i) {
    d.segment<3>(srb::state_index(i, srb::kPos)) = 1e5 * Eigen::Vector3d(3.0, 300.0, 30.0);
    d.segment<3>(srb::state_index(i, srb::kVel)).setConstant(1e4);
    d.segment<3>(srb::state_index(i, srb::kXi)).setConstant(1e8);
    d.segment<3>(srb::state_index(i, srb::kOmega)).setConstant(5e3);
  }
  return d.asDiagonal();
}

/// What the GRF cost is measured against.
enum class ForceReference {
  GravityCompensation,  ///< ||f - f_static||^2, f_static = m g / n_stance per stance foot
  Zero,                 ///< ||f||^2
};

enum class Formulation { Condensed, Stacked };

struct MpcConfig
{
  int horizon = 6;
  double dt = 0.005;
  Matrix24 Q = default_stage_weight();
  Matrix24 P = 0.1 * default_stage_weight();
  Matrix24 R_f = 1e-2 * Matrix24::Identity();
  double R_lambda = 1e4;
  double mu = 0.6;
  double fz_min = 0.0;
  double fz_max = 500.0;
  ForceReference force_reference = ForceReference::GravityCompensation;
  Formulation formulation = Formulation::Condensed;
  /// Quadratic penalty on the shared friction slack when the hard problem is infeasible.
  double softening_weight = 1e6;
  /// Yaw slew limit used when building the reference.
  double max_yaw_rate = 1.0;
  qp::QpSettings qp{1e-8, 2000, 1e-10};

  /// Size of the stacked (x, f, lambda) decision vector.
  int decision_variables() const { return horizon * (kStateDim + kForceDim + 1); }

  void validate() const
  {
    if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("MpcConfig: dt must be positive");
    auto spd = [](const Matrix24& M, const char* name) {
      if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + M.cwiseAbs().maxCoeff()))
        throw std::invalid_argument(std::string("MpcConfig: ") + name + " must be symmetric");
      Eigen::SelfAdjointEigenSolver<Matrix24> es(M, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw std::invalid_argument(std::string("MpcConfig: ") + name + " must be positive definite");
    };
    spd(Q, "Q");
    spd(P, "P");
    spd(R_f, "R_f");
    if (!(R_lambda > 0.0)) throw std::invalid_argument("MpcConfig: R_lambda must be positive");
    if (!(mu > 0.0)) throw std::invalid_argument("MpcConfig: mu must be positive");
    if (!(fz_min >= 0.0) || !(fz_max > fz_min)) throw std::invalid_argument("MpcConfig: need 0 <= fz_min < fz_max");
    if (!(softening_weight > 0.0)) throw std::invalid_argument("MpcConfig: softening_weight must be positive");
  }
};

/// Desired states x_0..x_N; index 0 is the current time.
struct ReferenceTrajectory
{
  std::vector<Vector24> states;
};

/// Yaw facing along the bar normal on the side of travel; current yaw when the command is ~0.
inline double desired_yaw(const Eigen::Vector2d& bar, const Eigen::Vector2d& travel, double current_yaw)
{
  if (travel.norm() < 1e-3 || bar.norm() < 1e-9) return current_yaw;
  Eigen::Vector2d n(bar.y(), -bar.x());
  if (n.dot(travel) < 0.0) n = -n;
  return std::atan2(n.y(), n.x());
}

/// Reference for the horizon from the planner's safe planar velocities (agent 1 xy, agent 2 xy).
/// Positions integrate phi_s from the current COM positions at nominal height; roll and pitch are
/// zero; yaw slews toward desired_yaw at a bounded rate. Orientation entries are deviations about
/// the current operating rotation of each agent.
inline ReferenceTrajectory build_reference(const srb::SrbModel& model, const Eigen::Vector4d& phi_s,
                                           const srb::SrbState& x_now, const MpcConfig& cfg)
{
  ReferenceTrajectory ref;
  ref.states.resize(static_cast<std::size_t>(cfg.horizon) + 1);
  const Eigen::Vector2d bar = (srb::attachment_point(model, x_now, 0) - srb::attachment_point(model, x_now, 1)).head<2>();
  const Eigen::Vector2d travel = 0.5 * (phi_s.head<2>() + phi_s.tail<2>());

  for (int i = 0; i < kAgents; ++i) {
    const srb::AgentState& a = x_now.agents[i];
    const Eigen::Vector2d vel = phi_s.segment<2>(2 * i);
    const double yaw_now = geom::euler_zyx(a.rotation_matrix()).yaw;
    const double yaw_err = geom::wrap_angle(desired_yaw(bar, travel, yaw_now) - yaw_now);
    const double horizon_time = cfg.horizon * cfg.dt;
    const double yaw_rate = std::clamp(yaw_err / horizon_time, -cfg.max_yaw_rate, cfg.max_yaw_rate);

    for (int k = 0; k <= cfg.horizon; ++k) {
      Vector24& r = ref.states[static_cast<std::size_t>(k)];
      if (i == 0) r.setZero();
      const double t = k * cfg.dt;
      const Eigen::Matrix3d R_des = geom::rot_z(yaw_now + yaw_rate * t);
      r.segment<2>(srb::state_index(i, srb::kPos)) = a.position.head<2>() + t * vel;
      r(srb::state_index(i, srb::kPos) + 2) = model.agents[i].nominal_height;
      r.segment<2>(srb::state_index(i, srb::kVel)) = vel;
      r.segment<3>(srb::state_index(i, srb::kXi)) = geom::log_so3(a.rotation.operating.transpose() * R_des);
      r.segment<3>(srb::state_index(i, srb::kOmega)) = R_des.transpose() * Eigen::Vector3d(0.0, 0.0, yaw_rate);
    }
  }
  return ref;
}

/// Linear friction pyramid over the 24 force components, as G f >= h and E f = 0.
struct FrictionRows
{
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::MatrixXd E;
};

/// Stance foot: fz >= fz_min, fz <= fz_max, |fx| <= mu fz, |fy| <= mu fz. Swing foot: f = 0.
inline FrictionRows friction_pyramid_rows(double mu, const srb::ContactState& contacts, double fz_min = 0.0,
                                          double fz_max = 500.0)
{
  if (!(mu > 0.0)) throw std::invalid_argument("friction_pyramid_rows: mu must be positive");
  int n_stance = contacts.num_stance(0) + contacts.num_stance(1);
  FrictionRows rows;
  rows.G = Eigen::MatrixXd::Zero(6 * n_stance, kForceDim);
  rows.h = Eigen::VectorXd::Zero(6 * n_stance);
  rows.E = Eigen::MatrixXd::Zero(3 * (2 * kLegs - n_stance), kForceDim);
  int r = 0, e = 0;
  for (int i = 0; i < kAgents; ++i)
    for (int l = 0; l < kLegs; ++l) {
      const int c = srb::force_index(i, l);
      if (!contacts.stance[i][l]) {
        for (int a = 0; a < 3; ++a) rows.E(e++, c + a) = 1.0;
        continue;
      }
      rows.G(r, c + 2) = 1.0;
      rows.h(r++) = fz_min;
      rows.G(r, c + 2) = -1.0;
      rows.h(r++) = -fz_max;
      for (int a = 0; a < 2; ++a) {
        rows.G(r, c + 2) = mu;
        rows.G(r++, c + a) = -1.0;
        rows.G(r, c + 2) = mu;
        rows.G(r++, c + a) = 1.0;
      }
    }
  return rows;
}

/// Largest violation of the pyramid (0 when satisfied).
inline double friction_violation(const FrictionRows& rows, const ForceVector& f)
{
  double v = 0.0;
  if (rows.G.rows() > 0) v = std::max(v, (rows.h - rows.G * f).maxCoeff());
  if (rows.E.rows() > 0) v = std::max(v, (rows.E * f).cwiseAbs().maxCoeff());
  return v;
}

struct MpcDiagnostics
{
  qp::QpStatus status = qp::QpStatus::Infeasible;
  bool softened = false;
  double kkt_residual = 0.0;
  int iterations = 0;
  int decision_variables = 0;
  /// Variables actually handed to the QP solver.
  int solver_variables = 0;
  /// max_k |c_x x_k + c_f f_k + c_lambda lambda_k + c_offset| over the horizon.
  double holonomic_residual = 0.0;
  double friction_violation = 0.0;
  double solve_time_us = 0.0;
};

struct MpcSolution
{
  srb::ControlSolution control;
  /// x_0..x_N from the LTV model.
  std::vector<Vector24> predicted;
  std::vector<ForceVector> forces;
  std::vector<double> lambdas;
  MpcDiagnostics diagnostics;

  bool ok() const { return diagnostics.status == qp::QpStatus::Optimal; }
};

namespace detail {

/// Diagonal rescaling so the cost has unit diagonal, plus unit-norm constraint rows.
struct Scaled
{
  qp::QpProblem problem;
  Eigen::VectorXd var_scale;
};

inline Scaled scale_problem(qp::QpProblem pb)
{
  const Eigen::Index n = pb.num_variables();
  Scaled s;
  s.var_scale.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = pb.cost_matrix(k, k);
    s.var_scale[k] = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
  }
  const auto D = s.var_scale.asDiagonal();
  pb.cost_matrix = D * pb.cost_matrix * D;
  pb.cost_vector = D * pb.cost_vector;
  pb.ineq_matrix = pb.ineq_matrix * D;
  pb.eq_matrix = pb.eq_matrix * D;
  for (Eigen::Index r = 0; r < pb.num_inequalities(); ++r) {
    const double nr = pb.ineq_matrix.row(r).norm();
    if (nr > 0.0) {
      pb.ineq_matrix.row(r) /= nr;
      pb.ineq_vector[r] /= nr;
    }
  }
  for (Eigen::Index r = 0; r < pb.num_equalities(); ++r) {
    const double nr = pb.eq_matrix.row(r).norm();
    if (nr > 0.0) {
      pb.eq_matrix.row(r) /= nr;
      pb.eq_vector[r] /= nr;
    }
  }
  s.problem = std::move(pb);
  return s;
}

/// Appends one slack s >= 0 shared by the given inequality rows (G x + s >= h), penalized by weight s^2.
inline qp::QpProblem soften(const qp::QpProblem& pb, Eigen::Index first_row, Eigen::Index count, double weight)
{
  const Eigen::Index n = pb.num_variables();
  qp::QpProblem out;
  out.cost_matrix = Eigen::MatrixXd::Zero(n + 1, n + 1);
  out.cost_matrix.topLeftCorner(n, n) = pb.cost_matrix;
  out.cost_matrix(n, n) = 2.0 * weight;
  out.cost_vector = Eigen::VectorXd::Zero(n + 1);
  out.cost_vector.head(n) = pb.cost_vector;
  const Eigen::Index m = pb.num_inequalities();
  out.ineq_matrix = Eigen::MatrixXd::Zero(m + 1, n + 1);
  out.ineq_matrix.topLeftCorner(m, n) = pb.ineq_matrix;
  out.ineq_matrix.block(first_row, n, count, 1).setOnes();
  out.ineq_matrix(m, n) = 1.0;
  out.ineq_vector = Eigen::VectorXd::Zero(m + 1);
  out.ineq_vector.head(m) = pb.ineq_vector;
  out.eq_matrix = Eigen::MatrixXd::Zero(pb.num_equalities(), n + 1);
  out.eq_matrix.leftCols(n) = pb.eq_matrix;
  out.eq_vector = pb.eq_vector;
  return out;
}

struct SolveOutcome
{
  Eigen::VectorXd primal;
  qp::QpStatus status = qp::QpStatus::Infeasible;
  bool softened = false;
  double kkt_residual = 0.0;
  int iterations = 0;
};

/// Solves in scaled coordinates. Rows [friction_first, friction_first + friction_count) are the
/// ones allowed to relax if the hard problem is infeasible.
inline SolveOutcome solve_scaled(const qp::QpProblem& pb, Eigen::Index friction_first, Eigen::Index friction_count,
                                 const MpcConfig& cfg)
{
  SolveOutcome out;
  Scaled s = scale_problem(pb);
  qp::QpSettings settings = cfg.qp;
  // Stationarity is measured in absolute terms; keep it relative to the gradient scale.
  settings.tolerance = cfg.qp.tolerance * (1.0 + s.problem.cost_vector.lpNorm<Eigen::Infinity>());
  qp::QpSolution sol = qp::solve_qp(s.problem, settings);
  if (sol.status == qp::QpStatus::Infeasible && friction_count > 0) {
    qp::QpProblem soft = soften(s.problem, friction_first, friction_count, cfg.softening_weight);
    sol = qp::solve_qp(soft, settings);
    sol.primal.conservativeResize(pb.num_variables());
    out.softened = true;
  }
  out.status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  out.iterations = sol.iterations;
  out.primal = s.var_scale.asDiagonal() * sol.primal;
  return out;
}

struct HorizonData
{
  srb::LinearizedModel lin;
  Vector24 x0;
  ForceVector f_ref;
  FrictionRows friction;
  Eigen::Matrix<double, kStateDim, kForceDim + 1> Bu;  // [B, b_lambda]
  Eigen::Matrix<double, 1, kForceDim + 1> cu;          // [c_f, c_lambda]
};

inline HorizonData prepare(const srb::SrbModel& model, const srb::SrbState& x_now, const srb::ContactState& contacts,
                           const MpcConfig& cfg, const ForceVector& f_op, double lambda_op)
{
  HorizonData h;
  h.lin = srb::linearize(model, x_now, contacts, f_op, lambda_op, cfg.dt);
  h.x0 = x_now.vector();
  h.f_ref = cfg.force_reference == ForceReference::GravityCompensation ? srb::gravity_compensation(model, contacts)
                                                                         : ForceVector::Zero();
  h.friction = friction_pyramid_rows(cfg.mu, contacts, cfg.fz_min, cfg.fz_max);
  h.Bu << h.lin.B, h.lin.b_lambda;
  h.cu << h.lin.c_f, h.lin.c_lambda;
  return h;
}

inline const Matrix24& state_weight(const MpcConfig& cfg, int k) { return k == cfg.horizon ? cfg.P : cfg.Q; }

/// Condensed QP over w_k = (stance force components, lambda) for k = 0..N-1.
inline void solve_condensed(const HorizonData& h, const srb::ContactState& contacts, const ReferenceTrajectory& ref,
                            const MpcConfig& cfg, MpcSolution& sol, SolveOutcome& outcome)
{
  const int N = cfg.horizon;
  std::vector<int> cols;  // indices into the 25-vector u = (f, lambda)
  for (int i = 0; i < kAgents; ++i)
    for (int l = 0; l < kLegs; ++l)
      if (contacts.stance[i][l])
        for (int a = 0; a < 3; ++a) cols.push_back(srb::force_index(i, l) + a);
  cols.push_back(kForceDim);
  const int m = static_cast<int>(cols.size());
  const int nv = m * N;

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(kForceDim + 1, m);
  for (int c = 0; c < m; ++c) S(cols[static_cast<std::size_t>(c)], c) = 1.0;
  const Eigen::MatrixXd Bw = h.Bu * S;
  const Eigen::RowVectorXd cw = h.cu * S;

  Eigen::Matrix<double, kForceDim + 1, kForceDim + 1> Ru = Eigen::Matrix<double, kForceDim + 1, kForceDim + 1>::Zero();
  Ru.topLeftCorner<kForceDim, kForceDim>() = 0.5 * (cfg.R_f + cfg.R_f.transpose());
  Ru(kForceDim, kForceDim) = cfg.R_lambda;
  Eigen::Matrix<double, kForceDim + 1, 1> u_ref;
  u_ref << h.f_ref, 0.0;
  const Eigen::MatrixXd Rw = S.transpose() * Ru * S;
  const Eigen::VectorXd rw = S.transpose() * Ru * u_ref;

  qp::QpProblem pb(Eigen::MatrixXd::Zero(nv, nv), Eigen::VectorXd::Zero(nv));
  pb.eq_matrix = Eigen::MatrixXd::Zero(N, nv);
  pb.eq_vector = Eigen::VectorXd::Zero(N);

  // x_k = M_k w + c_k
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(kStateDim, nv);
  Vector24 c = h.x0;
  std::vector<Eigen::MatrixXd> Ms;
  std::vector<Vector24> cs;
  Ms.reserve(static_cast<std::size_t>(N) + 1);
  Ms.push_back(M);
  cs.push_back(c);
  for (int k = 0; k < N; ++k) {
    // Holonomic row on (x_k, w_k).
    pb.eq_matrix.row(k) = h.lin.c_x * M;
    pb.eq_matrix.block(k, k * m, 1, m) += cw;
    pb.eq_vector[k] = -(h.lin.c_x.dot(c) + h.lin.c_offset);

    Eigen::MatrixXd Mn = h.lin.A * M;
    Mn.middleCols(k * m, m) += Bw;
    c = h.lin.A * c + h.lin.offset;
    M = std::move(Mn);
    Ms.push_back(M);
    cs.push_back(c);

    const Matrix24& W = state_weight(cfg, k + 1);
    const Eigen::MatrixXd WM = W * M;
    pb.cost_matrix.noalias() += 2.0 * M.transpose() * WM;
    pb.cost_vector.noalias() += 2.0 * WM.transpose() * (c - ref.states[static_cast<std::size_t>(k) + 1]);
    pb.cost_matrix.block(k * m, k * m, m, m) += 2.0 * Rw;
    pb.cost_vector.segment(k * m, m) -= 2.0 * rw;
  }
  pb.cost_matrix = 0.5 * (pb.cost_matrix + pb.cost_matrix.transpose());

  // Friction rows restricted to stance components.
  const Eigen::MatrixXd Gw = h.friction.G * S.topRows(kForceDim);
  const Eigen::Index fr = Gw.rows();
  pb.ineq_matrix = Eigen::MatrixXd::Zero(fr * N, nv);
  pb.ineq_vector = Eigen::VectorXd::Zero(fr * N);
  for (int k = 0; k < N; ++k) {
    pb.ineq_matrix.block(k * fr, k * m, fr, m) = Gw;
    pb.ineq_vector.segment(k * fr, fr) = h.friction.h;
  }

  outcome = solve_scaled(pb, 0, fr * N, cfg);
  sol.diagnostics.solver_variables = nv;

  sol.forces.resize(static_cast<std::size_t>(N));
  sol.lambdas.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const Eigen::VectorXd u = S * outcome.primal.segment(k * m, m);
    sol.forces[static_cast<std::size_t>(k)] = u.head<kForceDim>();
    sol.lambdas[static_cast<std::size_t>(k)] = u(kForceDim);
  }
}

/// The QP exactly as stated: z_k = (x_{k+1}, f_k, lambda_k), 49 entries per step.
inline void solve_stacked(const HorizonData& h, const ReferenceTrajectory& ref, const MpcConfig& cfg,
                          MpcSolution& sol, SolveOutcome& outcome)
{
  const int N = cfg.horizon;
  constexpr int B = kStateDim + kForceDim + 1;
  const int nv = B * N;
  auto xcol = [&](int k) { return (k - 1) * B; };  // x_k, k >= 1
  auto fcol = [&](int k) { return k * B + kStateDim; };
  auto lcol = [&](int k) { return k * B + kStateDim + kForceDim; };

  qp::QpProblem pb(Eigen::MatrixXd::Zero(nv, nv), Eigen::VectorXd::Zero(nv));
  const Eigen::Index n_swing = h.friction.E.rows();
  const Eigen::Index n_eq = N * (kStateDim + 1 + n_swing);
  pb.eq_matrix = Eigen::MatrixXd::Zero(n_eq, nv);
  pb.eq_vector = Eigen::VectorXd::Zero(n_eq);
  const Eigen::Index fr = h.friction.G.rows();
  pb.ineq_matrix = Eigen::MatrixXd::Zero(fr * N, nv);
  pb.ineq_vector = Eigen::VectorXd::Zero(fr * N);

  Eigen::Index e = 0;
  for (int k = 0; k < N; ++k) {
    // Cost.
    const Matrix24& W = state_weight(cfg, k + 1);
    pb.cost_matrix.block<kStateDim, kStateDim>(xcol(k + 1), xcol(k + 1)) = 2.0 * W;
    pb.cost_vector.segment<kStateDim>(xcol(k + 1)) = -2.0 * W * ref.states[static_cast<std::size_t>(k) + 1];
    pb.cost_matrix.block<kForceDim, kForceDim>(fcol(k), fcol(k)) = cfg.R_f + cfg.R_f.transpose();
    pb.cost_vector.segment<kForceDim>(fcol(k)) = -(cfg.R_f + cfg.R_f.transpose()) * h.f_ref;
    pb.cost_matrix(lcol(k), lcol(k)) = 2.0 * cfg.R_lambda;

    // Dynamics: x_{k+1} - A x_k - B f_k - b lambda_k = offset.
    pb.eq_matrix.block<kStateDim, kStateDim>(e, xcol(k + 1)).setIdentity();
    pb.eq_matrix.block<kStateDim, kForceDim>(e, fcol(k)) = -h.lin.B;
    pb.eq_matrix.block<kStateDim, 1>(e, lcol(k)) = -h.lin.b_lambda;
    if (k == 0) {
      pb.eq_vector.segment<kStateDim>(e) = h.lin.offset + h.lin.A * h.x0;
    } else {
      pb.eq_matrix.block<kStateDim, kStateDim>(e, xcol(k)) = -h.lin.A;
      pb.eq_vector.segment<kStateDim>(e) = h.lin.offset;
    }
    e += kStateDim;

    // Holonomic row on (x_k, f_k, lambda_k).
    pb.eq_matrix.block<1, kForceDim>(e, fcol(k)) = h.lin.c_f;
    pb.eq_matrix(e, lcol(k)) = h.lin.c_lambda;
    if (k == 0) {
      pb.eq_vector[e] = -(h.lin.c_x.dot(h.x0) + h.lin.c_offset);
    } else {
      pb.eq_matrix.block<1, kStateDim>(e, xcol(k)) = h.lin.c_x;
      pb.eq_vector[e] = -h.lin.c_offset;
    }
    ++e;

    if (n_swing > 0) {
      pb.eq_matrix.block(e, fcol(k), n_swing, kForceDim) = h.friction.E;
      e += n_swing;
    }
    pb.ineq_matrix.block(k * fr, fcol(k), fr, kForceDim) = h.friction.G;
    pb.ineq_vector.segment(k * fr, fr) = h.friction.h;
  }

  outcome = solve_scaled(pb, 0, fr * N, cfg);
  sol.diagnostics.solver_variables = nv;
  sol.forces.resize(static_cast<std::size_t>(N));
  sol.lambdas.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    sol.forces[static_cast<std::size_t>(k)] = outcome.primal.segment<kForceDim>(fcol(k));
    sol.lambdas[static_cast<std::size_t>(k)] = outcome.primal(lcol(k));
  }
}

}  // namespace detail

/// One MPC solve. (f_op, lambda_op) is the linearization input, normally the previous solution.
inline MpcSolution solve_mpc(const srb::SrbModel& model, const srb::SrbState& x_now, const srb::ContactState& contacts,
                             const ReferenceTrajectory& ref, const MpcConfig& cfg, const ForceVector& f_op,
                             double lambda_op)
{
  if (static_cast<int>(ref.states.size()) != cfg.horizon + 1)
    throw std::invalid_argument("solve_mpc: reference must hold horizon + 1 states");
  const auto t0 = std::chrono::steady_clock::now();

  const detail::HorizonData h = detail::prepare(model, x_now, contacts, cfg, f_op, lambda_op);
  MpcSolution sol;
  detail::SolveOutcome outcome;
  if (cfg.formulation == Formulation::Condensed)
    detail::solve_condensed(h, contacts, ref, cfg, sol, outcome);
  else
    detail::solve_stacked(h, ref, cfg, sol, outcome);

  // Roll the LTV model forward with the optimal inputs.
  const int N = cfg.horizon;
  sol.predicted.resize(static_cast<std::size_t>(N) + 1);
  sol.predicted[0] = h.x0;
  double holo = 0.0, fric = 0.0;
  for (int k = 0; k < N; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Vector24& xk = sol.predicted[ks];
    holo = std::max(holo, std::abs(h.lin.c_x.dot(xk) + h.lin.c_f.dot(sol.forces[ks]) +
                                   h.lin.c_lambda * sol.lambdas[ks] + h.lin.c_offset));
    fric = std::max(fric, friction_violation(h.friction, sol.forces[ks]));
    sol.predicted[ks + 1] = h.lin.A * xk + h.lin.B * sol.forces[ks] + h.lin.b_lambda * sol.lambdas[ks] + h.lin.offset;
  }

  sol.control.grf = sol.forces.front();
  sol.control.lambda = sol.lambdas.front();
  MpcDiagnostics& d = sol.diagnostics;
  d.status = outcome.status;
  d.softened = outcome.softened;
  d.kkt_residual = outcome.kkt_residual;
  d.iterations = outcome.iterations;
  d.decision_variables = cfg.decision_variables();
  d.holonomic_residual = holo;
  d.friction_violation = fric;
  d.solve_time_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

/// Receding-horizon wrapper that carries the previous solution as the next linearization point.
class Mpc
{
public:
  explicit Mpc(MpcConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const MpcConfig& config() const { return cfg_; }

  MpcSolution step(const srb::SrbModel& model, const srb::SrbState& x_now, const srb::ContactState& contacts,
                   const ReferenceTrajectory& ref)
  {
    // First tick, or a contact change: restart from the static stance forces.
    const ForceVector f_static = srb::gravity_compensation(model, contacts);
    ForceVector f_op = f_static;
    double lambda_op = 0.0;
    if (has_previous_ && contacts.stance == previous_stance_) {
      f_op = previous_.grf;
      lambda_op = previous_.lambda;
    }
    MpcSolution sol = solve_mpc(model, x_now, contacts, ref, cfg_, f_op, lambda_op);
    if (sol.ok()) {
      previous_ = sol.control;
      previous_stance_ = contacts.stance;
      has_previous_ = true;
    }
    return sol;
  }

  void reset() { has_previous_ = false; }

private:
  MpcConfig cfg_;
  srb::ControlSolution previous_;
  std::array<std::array<bool, kLegs>, kAgents> previous_stance_{};
  bool has_previous_ = false;
};

}  // namespace coopcbf::mpc

#endif  // COOPCBF_MPC_HPP
