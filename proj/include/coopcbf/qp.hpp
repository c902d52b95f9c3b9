#ifndef COOPCBF_QP_HPP
#define COOPCBF_QP_HPP

// Dense convex QP solver (Goldfarb-Idnani dual active-set method).
//
//   minimize    1/2 u'Pu + q'u
//   subject to  G u >= h      (ineq_matrix, ineq_vector)
//               E u  = e      (eq_matrix, eq_vector)
//
// Multiplier convention: P u + q - G'y - E'v = 0, y >= 0.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopcbf::qp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct QpProblem
{
  MatrixXd cost_matrix;
  VectorXd cost_vector;
  MatrixXd ineq_matrix;
  VectorXd ineq_vector;
  MatrixXd eq_matrix;
  VectorXd eq_vector;

  QpProblem() = default;

  /// Unconstrained problem of dimension n; constraints can be assigned afterwards.
  QpProblem(MatrixXd P, VectorXd q)
      : cost_matrix(std::move(P)), cost_vector(std::move(q)),
        ineq_matrix(0, cost_vector.size()), ineq_vector(0),
        eq_matrix(0, cost_vector.size()), eq_vector(0)
  {}

  Index num_variables() const { return cost_vector.size(); }
  Index num_inequalities() const { return ineq_vector.size(); }
  Index num_equalities() const { return eq_vector.size(); }
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

inline const char* to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct QpSolution
{
  VectorXd primal;
  VectorXd dual_ineq;
  VectorXd dual_eq;
  QpStatus status = QpStatus::Infeasible;
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  /// Indices of inequality rows in the final active set.
  std::vector<Index> active_set;
};

struct QpSettings
{
  double tolerance = 1e-8;
  int max_iterations = 200;
  /// Tikhonov term added to the cost diagonal so semidefinite costs factorize.
  double regularization = 1e-10;
};

inline void check_dimensions(const QpProblem& pb)
{
  const Index n = pb.cost_vector.size();
  auto fail = [](const std::string& what) { throw std::invalid_argument("QpProblem: " + what); };
  if (pb.cost_matrix.rows() != n || pb.cost_matrix.cols() != n) fail("cost_matrix must be n x n");
  if (pb.ineq_matrix.rows() != pb.ineq_vector.size()) fail("ineq_matrix rows != ineq_vector size");
  if (pb.ineq_matrix.cols() != n && pb.ineq_matrix.rows() > 0) fail("ineq_matrix must have n columns");
  if (pb.eq_matrix.rows() != pb.eq_vector.size()) fail("eq_matrix rows != eq_vector size");
  if (pb.eq_matrix.cols() != n && pb.eq_matrix.rows() > 0) fail("eq_matrix must have n columns");
}

/// Full invariant check: dimensions, symmetry and PSD-ness (min eigenvalue >= -1e-9 |P|).
/// O(n^3); the solver itself only relies on the Cholesky factorization succeeding.
inline void validate(const QpProblem& pb)
{
  check_dimensions(pb);
  if (pb.num_variables() == 0) return;
  const double scale = std::max(pb.cost_matrix.norm(), 1.0);
  if ((pb.cost_matrix - pb.cost_matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("QpProblem: cost_matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(pb.cost_matrix, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-9 * pb.cost_matrix.norm())
    throw std::invalid_argument("QpProblem: cost_matrix is not positive semidefinite");
}

/// Max of the stationarity, primal feasibility, dual feasibility and complementarity
/// infinity norms. Zero exactly at a KKT point.
inline double kkt_residual(const QpProblem& pb, const QpSolution& sol)
{
  check_dimensions(pb);
  const Index n = pb.num_variables();
  const Index m = pb.num_inequalities();
  const Index p = pb.num_equalities();
  if (sol.primal.size() != n || sol.dual_ineq.size() != m || sol.dual_eq.size() != p)
    throw std::invalid_argument("kkt_residual: solution dimensions do not match the problem");
  if (n == 0) return 0.0;

  VectorXd stat = pb.cost_matrix * sol.primal + pb.cost_vector;
  if (m > 0) stat.noalias() -= pb.ineq_matrix.transpose() * sol.dual_ineq;
  if (p > 0) stat.noalias() -= pb.eq_matrix.transpose() * sol.dual_eq;
  double res = stat.cwiseAbs().maxCoeff();

  if (m > 0) {
    const VectorXd slack = pb.ineq_matrix * sol.primal - pb.ineq_vector;
    res = std::max(res, (-slack).cwiseMax(0.0).maxCoeff());
    res = std::max(res, (-sol.dual_ineq).cwiseMax(0.0).maxCoeff());
    res = std::max(res, sol.dual_ineq.cwiseProduct(slack).cwiseAbs().maxCoeff());
  }
  if (p > 0) res = std::max(res, (pb.eq_matrix * sol.primal - pb.eq_vector).cwiseAbs().maxCoeff());
  return res;
}

namespace detail {

// Factorization state of the dual active-set method: J = L^-T Q and R upper
// triangular such that the active constraint normals N satisfy J' N = [R; 0].
class ActiveSetFactor
{
public:
  ActiveSetFactor(MatrixXd J) : J_(std::move(J)), R_(MatrixXd::Zero(J_.rows(), J_.rows())) {}

  Index size() const { return iq_; }
  const MatrixXd& J() const { return J_; }

  // Step directions for a candidate normal np: z (primal), r (dual).
  void directions(const VectorXd& np, VectorXd& d, VectorXd& z, VectorXd& r) const
  {
    const Index n = J_.rows();
    d.noalias() = J_.transpose() * np;
    z.noalias() = J_.rightCols(n - iq_) * d.tail(n - iq_);
    r = R_.topLeftCorner(iq_, iq_).triangularView<Eigen::Upper>().solve(d.head(iq_));
  }

  // Appends a normal with precomputed d = J'np. Returns false if it is
  // linearly dependent on the active set (factor is still updated).
  bool add(VectorXd& d)
  {
    const Index n = J_.rows();
    for (Index j = n - 1; j >= iq_ + 1; --j) {
      double cc = d[j - 1];
      double ss = d[j];
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d[j - 1] = -h;
      } else {
        d[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index k = 0; k < n; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq_;
    R_.col(iq_ - 1).head(iq_) = d.head(iq_);
    if (std::abs(d[iq_ - 1]) <= std::numeric_limits<double>::epsilon() * r_norm_) return false;
    r_norm_ = std::max(r_norm_, std::abs(d[iq_ - 1]));
    return true;
  }

  // Removes active position pos and restores the triangular structure.
  void remove(Index pos)
  {
    const Index n = J_.rows();
    for (Index i = pos; i < iq_ - 1; ++i) R_.col(i) = R_.col(i + 1);
    R_.col(iq_ - 1).setZero();
    --iq_;
    for (Index j = pos; j < iq_; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index k = j + 1; k < iq_; ++k) {
        const double t1 = R_(j, k);
        const double t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (Index k = 0; k < n; ++k) {
        const double t1 = J_(k, j);
        const double t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

private:
  MatrixXd J_;
  MatrixXd R_;
  Index iq_ = 0;
  double r_norm_ = 1.0;
};

// Re-solves the equality-constrained KKT system of the final active set to
// clean up rounding accumulated through the Givens updates.
inline void polish(const QpProblem& pb, const MatrixXd& P, QpSolution& sol)
{
  const Index n = pb.num_variables();
  const Index p = pb.num_equalities();
  const Index a = static_cast<Index>(sol.active_set.size());
  const Index k = p + a;
  MatrixXd C(k, n);
  VectorXd rhs(k);
  if (p > 0) {
    C.topRows(p) = pb.eq_matrix;
    rhs.head(p) = pb.eq_vector;
  }
  for (Index i = 0; i < a; ++i) {
    C.row(p + i) = pb.ineq_matrix.row(sol.active_set[static_cast<std::size_t>(i)]);
    rhs[p + i] = pb.ineq_vector[sol.active_set[static_cast<std::size_t>(i)]];
  }
  MatrixXd K = MatrixXd::Zero(n + k, n + k);
  K.topLeftCorner(n, n) = P;
  K.topRightCorner(n, k) = -C.transpose();
  K.bottomLeftCorner(k, n) = C;
  VectorXd b(n + k);
  b.head(n) = -pb.cost_vector;
  b.tail(k) = rhs;

  VectorXd guess(n + k);
  guess.head(n) = sol.primal;
  if (p > 0) guess.segment(n, p) = sol.dual_eq;
  for (Index i = 0; i < a; ++i) guess[n + p + i] = sol.dual_ineq[sol.active_set[static_cast<std::size_t>(i)]];

  Eigen::PartialPivLU<MatrixXd> lu(K);
  VectorXd refined = guess;
  for (int it = 0; it < 2; ++it) refined += lu.solve(b - K * refined);
  if (!refined.allFinite()) return;

  QpSolution candidate = sol;
  candidate.primal = refined.head(n);
  if (p > 0) candidate.dual_eq = refined.segment(n, p);
  for (Index i = 0; i < a; ++i)
    candidate.dual_ineq[sol.active_set[static_cast<std::size_t>(i)]] = refined[n + p + i];
  candidate.kkt_residual = kkt_residual(pb, candidate);
  if (candidate.kkt_residual < sol.kkt_residual) sol = std::move(candidate);
}

}  // namespace detail

/// Solves the QP. Throws std::invalid_argument on inconsistent dimensions or a
/// cost matrix that fails to factorize after regularization.
inline QpSolution solve_qp(const QpProblem& pb, const QpSettings& settings = {})
{
  check_dimensions(pb);
  if (!(settings.tolerance > 0.0)) throw std::invalid_argument("solve_qp: tolerance must be positive");

  const Index n = pb.num_variables();
  const Index m = pb.num_inequalities();
  const Index p = pb.num_equalities();
  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr double eps = std::numeric_limits<double>::epsilon();

  QpSolution sol;
  sol.primal = VectorXd::Zero(n);
  sol.dual_ineq = VectorXd::Zero(m);
  sol.dual_eq = VectorXd::Zero(p);
  if (n == 0) {
    sol.status = (m == 0 || pb.ineq_vector.maxCoeff() <= 0.0) && (p == 0 || pb.eq_vector.cwiseAbs().maxCoeff() == 0.0)
                     ? QpStatus::Optimal
                     : QpStatus::Infeasible;
    sol.kkt_residual = 0.0;
    return sol;
  }

  MatrixXd P = 0.5 * (pb.cost_matrix + pb.cost_matrix.transpose());
  // The Tikhonov term is only added when P itself is (numerically) singular.
  Eigen::LLT<MatrixXd> llt(P);
  const double diag_scale = std::max(P.diagonal().cwiseAbs().maxCoeff(), 1.0);
  if (llt.info() != Eigen::Success ||
      llt.matrixL().toDenseMatrix().diagonal().minCoeff() < 1e-7 * std::sqrt(diag_scale)) {
    MatrixXd Preg = P;
    Preg.diagonal().array() += settings.regularization;
    llt.compute(Preg);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("solve_qp: cost matrix is not positive semidefinite");
  }

  // J = L^-T so that J J' = P^-1.
  detail::ActiveSetFactor factor(llt.matrixU().solve(MatrixXd::Identity(n, n)));

  VectorXd x = llt.solve(-pb.cost_vector);
  VectorXd u = VectorXd::Zero(n + 1);    // multipliers of active constraints (+ candidate)
  std::vector<Index> active;             // encoded: eq i -> -(i+1), ineq j -> j
  active.reserve(static_cast<std::size_t>(n + 1));
  VectorXd d(n), z(n), r;

  // Equality constraints are always active.
  for (Index i = 0; i < p; ++i) {
    const VectorXd np = pb.eq_matrix.row(i).transpose();
    factor.directions(np, d, z, r);
    const double ztn = z.dot(np);
    const double resid = pb.eq_vector[i] - np.dot(x);
    const double t2 = std::abs(ztn) > eps * np.squaredNorm() ? resid / ztn : 0.0;
    x += t2 * z;
    const Index iq = factor.size();
    u[iq] = t2;
    u.head(iq) -= t2 * r;
    active.push_back(-(i + 1));
    if (!factor.add(d)) {
      // Dependent equality row: consistent only if it is already satisfied.
      sol.primal = x;
      sol.status = QpStatus::Infeasible;
      return sol;
    }
  }

  std::vector<char> is_active(static_cast<std::size_t>(m), 0);
  std::vector<char> excluded(static_cast<std::size_t>(m), 0);
  VectorXd row_scale(m);
  for (Index j = 0; j < m; ++j) row_scale[j] = pb.ineq_matrix.row(j).lpNorm<1>();

  auto feas_tol = [&](Index j) {
    return 1e3 * eps * (1.0 + std::abs(pb.ineq_vector[j]) + row_scale[j] * x.lpNorm<Eigen::Infinity>());
  };

  int iterations = 0;
  bool done = false;
  bool infeasible = false;
  while (!done && !infeasible) {
    // Step 1: most violated inequality.
    Index ip = -1;
    double worst = 0.0;
    for (Index j = 0; j < m; ++j) {
      if (is_active[static_cast<std::size_t>(j)] || excluded[static_cast<std::size_t>(j)]) continue;
      const double s = pb.ineq_matrix.row(j).dot(x) - pb.ineq_vector[j];
      if (s < -feas_tol(j) && s < worst) {
        worst = s;
        ip = j;
      }
    }
    if (ip < 0) {
      done = true;
      break;
    }

    const VectorXd np = pb.ineq_matrix.row(ip).transpose();
    u[factor.size()] = 0.0;
    double slack = worst;

    // Step 2: move towards satisfying constraint ip, dropping blockers.
    for (;;) {
      if (++iterations > settings.max_iterations) {
        sol.primal = x;
        sol.status = QpStatus::MaxIterations;
        sol.iterations = iterations - 1;
        return sol;
      }
      const Index iq = factor.size();
      factor.directions(np, d, z, r);

      double t1 = inf;
      Index drop = -1;
      for (Index k = p; k < iq; ++k) {
        if (r[k] > 0.0) {
          const double ratio = u[k] / r[k];
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      const double ztn = z.dot(np);
      const double t2 = std::abs(ztn) > eps * np.squaredNorm() * 1e2 ? -slack / ztn : inf;
      const double t = std::min(t1, t2);

      if (t == inf) {
        infeasible = true;
        break;
      }
      if (t2 == inf) {
        // Dual-space step only.
        u.head(iq) -= t * r;
        u[iq] += t;
        is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
        active.erase(active.begin() + drop);
        for (Index k = drop; k < iq; ++k) u[k] = u[k + 1];
        u[iq] = 0.0;
        factor.remove(drop);
        continue;
      }

      x += t * z;
      u.head(iq) -= t * r;
      u[iq] += t;

      if (t == t2) {
        if (!factor.add(d)) {
          factor.remove(iq);
          u[iq] = 0.0;
          excluded[static_cast<std::size_t>(ip)] = 1;
        } else {
          active.push_back(ip);
          is_active[static_cast<std::size_t>(ip)] = 1;
        }
        break;
      }

      // Partial step: drop the blocking constraint and retry.
      is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
      active.erase(active.begin() + drop);
      for (Index k = drop; k < iq; ++k) u[k] = u[k + 1];
      u[iq] = 0.0;
      factor.remove(drop);
      slack = np.dot(x) - pb.ineq_vector[ip];
    }
  }

  sol.primal = x;
  sol.iterations = iterations;
  for (std::size_t k = 0; k < active.size(); ++k) {
    const Index a = active[k];
    if (a < 0) {
      sol.dual_eq[-a - 1] = u[static_cast<Index>(k)];
    } else {
      sol.dual_ineq[a] = u[static_cast<Index>(k)];
      sol.active_set.push_back(a);
    }
  }
  if (infeasible) {
    sol.status = QpStatus::Infeasible;
    sol.kkt_residual = kkt_residual(pb, sol);
    return sol;
  }
  std::sort(sol.active_set.begin(), sol.active_set.end());

  sol.kkt_residual = kkt_residual(pb, sol);
  if (sol.kkt_residual > settings.tolerance) detail::polish(pb, P, sol);
  sol.status = sol.kkt_residual <= settings.tolerance ? QpStatus::Optimal : QpStatus::MaxIterations;
  return sol;
}

}  // namespace coopcbf::qp

#endif  // COOPCBF_QP_HPP
