#ifndef COOPCBF_TESTS_QP_ORACLE_HPP
#define COOPCBF_TESTS_QP_ORACLE_HPP

// Exhaustive active-set enumeration for small strictly convex QPs. Every
// subset of inequality rows is treated as equalities; the feasible candidate
// with the lowest cost is the global minimizer.

#include "coopcbf/qp.hpp"

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <random>

namespace coopcbf::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::optional<VectorXd> enumerate_active_sets(const qp::QpProblem& pb, double feas_tol = 1e-9)
{
  const auto n = pb.num_variables();
  const auto m = pb.num_inequalities();
  const auto p = pb.num_equalities();
  std::optional<VectorXd> best;
  double best_cost = std::numeric_limits<double>::infinity();

  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    const int k = p + __builtin_popcount(mask);
    if (k > n) continue;
    MatrixXd C(k, n);
    VectorXd rhs(k);
    int row = 0;
    for (int i = 0; i < p; ++i, ++row) {
      C.row(row) = pb.eq_matrix.row(i);
      rhs[row] = pb.eq_vector[i];
    }
    for (int j = 0; j < m; ++j) {
      if (mask & (1u << j)) {
        C.row(row) = pb.ineq_matrix.row(j);
        rhs[row] = pb.ineq_vector[j];
        ++row;
      }
    }
    MatrixXd K = MatrixXd::Zero(n + k, n + k);
    K.topLeftCorner(n, n) = pb.cost_matrix;
    K.topRightCorner(n, k) = C.transpose();
    K.bottomLeftCorner(k, n) = C;
    VectorXd b(n + k);
    b.head(n) = -pb.cost_vector;
    b.tail(k) = rhs;
    Eigen::FullPivLU<MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    const VectorXd x = lu.solve(b).head(n);

    if (m > 0 && ((pb.ineq_matrix * x - pb.ineq_vector).array() < -feas_tol).any()) continue;
    if (p > 0 && (pb.eq_matrix * x - pb.eq_vector).cwiseAbs().maxCoeff() > feas_tol) continue;
    const double cost = 0.5 * x.dot(pb.cost_matrix * x) + pb.cost_vector.dot(x);
    if (cost < best_cost) {
      best_cost = cost;
      best = x;
    }
  }
  return best;
}

/// Random strictly convex QP with a known feasible point.
inline qp::QpProblem random_feasible_qp(std::mt19937_64& rng, int n, int m, int p)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto randn = [&](int r, int c) {
    MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = normal(rng);
    return M;
  };
  const MatrixXd B = randn(n, n);
  qp::QpProblem pb(B * B.transpose() + 0.1 * MatrixXd::Identity(n, n), randn(n, 1));
  const VectorXd x0 = randn(n, 1);
  pb.ineq_matrix = randn(m, n);
  VectorXd slack(m);
  for (int j = 0; j < m; ++j) slack[j] = unit(rng) < 0.3 ? 0.0 : unit(rng);
  pb.ineq_vector = pb.ineq_matrix * x0 - slack;
  pb.eq_matrix = randn(p, n);
  pb.eq_vector = pb.eq_matrix * x0;
  return pb;
}

}  // namespace coopcbf::oracle

#endif  // COOPCBF_TESTS_QP_ORACLE_HPP
