// Copyright 2026 The normqp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Initial feasible points for the annulus-polytope intersection: an exact
// dual active-set projection onto the polytope (no feasible start needed),
// a multi-start norm maximization over the clipped polytope, and the exact
// segment interpolation between the two.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "normqp/active_set.hpp"
#include "normqp/qp_mode.hpp"

namespace normqp {

struct MinNormResult {
  VectorXd x;
  bool feasible = false;
  int iterations = 0;
};

/// Projection of `target` onto {x : Ax ≤ b} by a dual active-set method
/// (most-violated constraint added, dual-blocking rows dropped). Starts from
/// the unconstrained optimum, so no feasible point is required; an empty
/// polytope is certified by a failed dual step.
inline MinNormResult project_polytope(const Constraints& cons, const VectorXd& target,
                                      double tol = 1e-10) {
  MinNormResult out;
  const Index n = target.size();
  out.x = target;
  std::vector<Index> active;
  std::vector<double> duals;
  const Index cap = 50 * (cons.rows() + n + 1);

  for (out.iterations = 0; out.iterations < cap; ++out.iterations) {
    Index worst = -1;
    double worst_violation = 0;
    for (Index i = 0; i < cons.rows(); ++i) {
      const double v = cons.row_dot(i, out.x) - cons.rhs(i);
      const double scale = std::max(1.0, cons.row_norm(i) * std::max(1.0, out.x.norm()));
      if (v > tol * scale && v > worst_violation) {
        worst_violation = v;
        worst = i;
      }
    }
    if (worst < 0) {
      out.feasible = true;
      return out;
    }
    const VectorXd a_p = cons.row_dense(worst);
    double u_plus = 0;
    double violation = worst_violation;
    for (int inner = 0; inner < 4 * (cons.rows() + 1); ++inner) {
      const Index k = static_cast<Index>(active.size());
      VectorXd r_dir(k);
      VectorXd z = a_p;
      if (k > 0) {
        MatrixXd nmat(n, k);
        for (Index j = 0; j < k; ++j) nmat.col(j) = cons.row_dense(active[j]);
        r_dir = nmat.colPivHouseholderQr().solve(a_p);
        z = a_p - nmat * r_dir;
      }
      const double zz = z.squaredNorm();
      double t1 = std::numeric_limits<double>::infinity();
      Index drop = -1;
      for (Index j = 0; j < k; ++j) {
        if (r_dir(j) > 1e-13) {
          const double cand = duals[j] / r_dir(j);
          if (cand < t1) {
            t1 = cand;
            drop = j;
          }
        }
      }
      const bool primal_step = zz > 1e-14 * std::max(1.0, a_p.squaredNorm());
      const double t2 =
          primal_step ? violation / zz : std::numeric_limits<double>::infinity();
      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        out.feasible = false;  // certified: the polytope is empty
        return out;
      }
      const double t = std::min(t1, t2);
      if (primal_step) out.x -= t * z;
      for (Index j = 0; j < k; ++j) duals[j] -= t * r_dir(j);
      u_plus += t;
      violation -= t * zz;
      if (t == t1 && t1 < t2) {
        active.erase(active.begin() + drop);
        duals.erase(duals.begin() + drop);
        continue;
      }
      active.push_back(worst);
      duals.push_back(u_plus);
      break;
    }
  }
  throw InternalError("project_polytope: iteration cap exceeded");
}

inline MinNormResult min_norm_point(const Constraints& cons, double tol = 1e-10) {
  return project_polytope(cons, VectorXd::Zero(cons.cols()), tol);
}

enum class FeasStatus { Feasible, InfeasibleOuter, InfeasibleInnerHeuristic, InfeasibleCertified };

inline const char* to_string(FeasStatus s) {
  switch (s) {
    case FeasStatus::Feasible: return "feasible";
    case FeasStatus::InfeasibleOuter: return "infeasible_outer";
    case FeasStatus::InfeasibleInnerHeuristic: return "infeasible_inner_heuristic";
    case FeasStatus::InfeasibleCertified: return "infeasible_certified";
  }
  return "?";
}

struct FeasResult {
  FeasStatus status = FeasStatus::InfeasibleCertified;
  std::optional<VectorXd> x0;
  VectorXd x_min_norm;
  std::optional<VectorXd> x_max_norm;
};

struct FeasOptions {
  int starts = 8;
  uint64_t seed = 20260809;
  double tol = 1e-9;
  SolveOptions solve;
};

namespace detail {

/// Constraints of the polytope intersected with the box ‖x‖_∞ ≤ r_box.
inline Constraints clip_to_box(const Constraints& cons, double r_box) {
  const Index m = cons.rows();
  const Index n = cons.cols();
  Eigen::SparseMatrix<double, Eigen::RowMajor> a(m + 2 * n, n);
  std::vector<Eigen::Triplet<double>> trip;
  const auto& src = cons.matrix();
  for (Index i = 0; i < m; ++i)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(src, i); it; ++it)
      trip.emplace_back(i, it.col(), it.value());
  for (Index v = 0; v < n; ++v) {
    trip.emplace_back(m + v, v, 1.0);
    trip.emplace_back(m + n + v, v, -1.0);
  }
  a.setFromTriplets(trip.begin(), trip.end());
  VectorXd b(m + 2 * n);
  b.head(m) = cons.rhs();
  b.tail(2 * n).setConstant(r_box);
  return Constraints(std::move(a), b);
}

}  // namespace detail

/// Initial feasible point for r_min ≤ ‖x‖ ≤ r_max, Ax ≤ b at desk scale.
/// The convex min-norm phase is exact (its infeasibility verdicts are
/// certificates); the max-norm phase is a multi-start local maximization over
/// the box-clipped polytope, so its negative verdict is only a heuristic.
inline FeasResult initial_point(const Constraints& cons, double r_min, double r_max,
                                const FeasOptions& opts = {}) {
  FeasResult out;
  const Index n = cons.cols();
  MinNormResult mn = min_norm_point(cons, 1e-12);
  if (!mn.feasible) {
    out.status = FeasStatus::InfeasibleCertified;
    return out;
  }
  out.x_min_norm = mn.x;
  const double lo = mn.x.norm();
  if (lo > r_max * (1 + opts.tol) + opts.tol) {
    out.status = FeasStatus::InfeasibleOuter;
    return out;
  }
  if (lo >= r_min * (1 - opts.tol) - opts.tol) {
    out.status = FeasStatus::Feasible;
    out.x0 = mn.x;
    return out;
  }

  // ‖x_min‖ < r_min: look for a large-norm point of the polytope clipped to
  // the box ‖x‖_∞ ≤ r_min, then interpolate.
  Constraints clipped = detail::clip_to_box(cons, r_min);
  const double box_radius = 2.0 * std::sqrt(static_cast<double>(n)) * r_min;
  NormQP max_prob(LinearOperator::from_dense(-2.0 * MatrixXd::Identity(n, n)), VectorXd::Zero(n),
                  clipped, 0.0, box_radius);
  std::mt19937_64 eng(opts.seed);
  VectorXd best;
  double best_norm = -1;
  for (int s = 0; s < std::max(1, opts.starts); ++s) {
    VectorXd guess = mn.x;
    if (s > 0) {
      VectorXd dir(n);
      for (Index i = 0; i < n; ++i)
        dir(i) = std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
      if (dir.norm() == 0) dir = VectorXd::Ones(n);
      guess += r_min * std::sqrt(static_cast<double>(n)) * dir.normalized();
    }
    MinNormResult start = project_polytope(clipped, guess, 1e-12);
    if (!start.feasible) continue;
    try {
      KktPoint sol = solve_norm_qp(max_prob, start.x, {}, opts.solve);
      if (sol.x.norm() > best_norm + 1e-12) {
        best_norm = sol.x.norm();
        best = sol.x;
      }
    } catch (const Error&) {
      // a failed start is skipped; the search is heuristic anyway
    }
  }
  if (best_norm >= 0) out.x_max_norm = best;
  if (best_norm < r_min * (1 - opts.tol) - opts.tol) {
    out.status = FeasStatus::InfeasibleInnerHeuristic;
    return out;
  }

  // Exact interpolation: the largest segment parameter whose point reaches
  // norm r_min (any such point lies in the polytope by convexity).
  const VectorXd d = best - mn.x;
  const double a2 = d.squaredNorm();
  const double a1 = 2.0 * mn.x.dot(d);
  const double a0 = mn.x.squaredNorm() - r_min * r_min;
  double t = 1.0;
  if (a2 > 0) {
    const double disc = std::max(0.0, a1 * a1 - 4 * a2 * a0);
    const double sq = std::sqrt(disc);
    const double t1 = (-a1 - sq) / (2 * a2);
    const double t2 = (-a1 + sq) / (2 * a2);
    t = t2;
    if (t > 1.0 && t1 >= 0.0 && t1 <= 1.0) t = t1;
    t = std::clamp(t, 0.0, 1.0);
  }
  out.x0 = mn.x + t * d;
  out.status = FeasStatus::Feasible;
  return out;
}

}  // namespace normqp
