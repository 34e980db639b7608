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
// Driver for the general two-sided norm bound r_min ≤ ‖x‖ ≤ r_max: alternates
// between the sphere-mode active set (norm constraint in the working set) and
// a generic nonconvex-QP active set while the norm constraint is inactive,
// switching on boundary hits and on the sign of the norm multiplier.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "normqp/active_set.hpp"

namespace normqp {

enum class NormMode { SphereFixed = 0, SphereMax = 1, SphereMin = 2, Interior = 3 };

struct InteriorStep {
  enum class Event { Stationary, HitInequality, HitSphereMax, HitSphereMin } event;
  VectorXd x;
  Index hit_row = -1;
};

/// One primal active-set step of the QP without the norm constraint: an
/// equality-constrained solve on the working set, or a negative-curvature /
/// kernel descent ray when the projected Hessian is not positive definite.
/// The ratio test includes both sphere boundaries.
inline InteriorStep qp_active_set_step(const NormQP& prob, const VectorXd& x,
                                       const WorkingSet& w, const SolveOptions& opts = {}) {
  InteriorStep out;
  out.x = x;
  const MatrixXd& z = w.null_basis();
  const Index t = z.cols();
  if (t == 0) {
    out.event = InteriorStep::Event::Stationary;
    return out;
  }
  VectorXd g = prob.gradient(x);
  MatrixXd h(t, t);
  for (Index j = 0; j < t; ++j) {
    VectorXd pz = prob.p(z.col(j));
    for (Index i = 0; i < t; ++i) h(i, j) = z.col(i).dot(pz);
  }
  h = 0.5 * (h + h.transpose()).eval();
  VectorXd gr = z.transpose() * g;
  SymEig eig = sym_eig_dense(h, 1e-8);
  const double scale = std::max(eig.values.cwiseAbs().maxCoeff(), 1.0);
  const double lmin = eig.values(0);

  VectorXd p;
  double alpha_cap;
  if (lmin > 1e-10 * scale) {
    VectorXd pr = -h.ldlt().solve(gr);
    p = z * pr;
    alpha_cap = 1.0;
  } else if (lmin < -opts.curvature_tol * scale) {
    VectorXd d = eig.vectors.col(0);
    if (gr.dot(d) > 0) d = -d;
    p = z * d;
    alpha_cap = std::numeric_limits<double>::infinity();
  } else {
    // Singular PSD block: try the minimum-norm Newton step; if the gradient
    // has a kernel component, descend along it instead.
    const double cutoff = 1e-10 * scale;
    VectorXd pr = VectorXd::Zero(t);
    VectorXd kern = VectorXd::Zero(t);
    for (Index i = 0; i < t; ++i) {
      const double coeff = eig.vectors.col(i).dot(gr);
      if (eig.values(i) > cutoff)
        pr -= (coeff / eig.values(i)) * eig.vectors.col(i);
      else
        kern -= coeff * eig.vectors.col(i);
    }
    if (kern.norm() > 1e-10 * std::max(1.0, gr.norm())) {
      p = z * kern;
      alpha_cap = std::numeric_limits<double>::infinity();
    } else {
      p = z * pr;
      alpha_cap = 1.0;
    }
  }

  const double pn = p.norm();
  if (pn <= opts.step_zero_tol * std::max(1.0, x.norm())) {
    out.event = InteriorStep::Event::Stationary;
    return out;
  }

  double alpha = alpha_cap;
  Index hit = -1;
  int hit_kind = 0;  // 0 inequality, 1 sphere max, 2 sphere min
  for (Index i = 0; i < prob.cons.rows(); ++i) {
    if (w.contains(i)) continue;
    const double ad = prob.cons.row_dot(i, p);
    if (ad <= 1e-13 * prob.cons.row_norm(i) * pn) continue;
    double ai = (prob.cons.rhs(i) - prob.cons.row_dot(i, x)) / ad;
    ai = std::max(ai, 0.0);
    if (ai < alpha - 1e-14 || (std::abs(ai - alpha) <= 1e-14 && (hit_kind != 0 || i < hit))) {
      alpha = ai;
      hit = i;
      hit_kind = 0;
    }
  }
  const double c2 = p.squaredNorm();
  const double c1 = 2.0 * x.dot(p);
  auto sphere_root = [&](double r) -> std::optional<double> {
    const double c0 = x.squaredNorm() - r * r;
    const double disc = c1 * c1 - 4 * c2 * c0;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double best = std::numeric_limits<double>::infinity();
    for (double root : {(-c1 - sq) / (2 * c2), (-c1 + sq) / (2 * c2)})
      if (root > 1e-13) best = std::min(best, root);
    if (!std::isfinite(best)) return std::nullopt;
    return best;
  };
  if (auto up = sphere_root(prob.r_max); up && *up < alpha - 1e-14) {
    alpha = *up;
    hit_kind = 1;
    hit = -1;
  }
  if (prob.r_min > 0) {
    if (auto lo = sphere_root(prob.r_min); lo && *lo < alpha - 1e-14) {
      alpha = *lo;
      hit_kind = 2;
      hit = -1;
    }
  }

  if (!std::isfinite(alpha))
    throw InternalError("qp_active_set_step: unbounded ray escaped the annulus");

  out.x = x + alpha * p;
  if (alpha == alpha_cap && hit == -1 && hit_kind == 0) {
    out.event = InteriorStep::Event::Stationary;
    return out;
  }
  if (hit_kind == 1) {
    out.x *= prob.r_max / out.x.norm();
    out.event = InteriorStep::Event::HitSphereMax;
  } else if (hit_kind == 2) {
    out.x *= prob.r_min / out.x.norm();
    out.event = InteriorStep::Event::HitSphereMin;
  } else {
    out.event = InteriorStep::Event::HitInequality;
    out.hit_row = hit;
  }
  return out;
}

namespace detail {

inline void trace_interior(const SolveOptions& opts, int iter, StepType type, double f,
                           const WorkingSet& w, const VectorXd& x, Index constraint = -1,
                           double resid = -1) {
  if (!opts.trace) return;
  TraceEvent e;
  e.iter = iter;
  e.type = type;
  e.f = f;
  e.working_set = std::vector<Index>(w.indices().begin(), w.indices().end());
  e.kkt_residual = resid;
  e.constraint = constraint;
  e.mode = static_cast<int>(NormMode::Interior);
  e.point = x;
  opts.trace(e);
}

}  // namespace detail

/// Checks r_min ≤ ‖x‖ ≤ r_max and Ax ≤ b.
inline void validate_feasible_annulus(const NormQP& prob, const VectorXd& x, double feas_tol) {
  if (x.size() != prob.n()) throw InvalidArgument("starting point has wrong dimension");
  const double xn = x.norm();
  if (xn > prob.r_max * (1 + feas_tol) + feas_tol ||
      xn < prob.r_min * (1 - feas_tol) - feas_tol)
    throw InfeasibleError("starting point violates the norm bounds: ||x|| = " +
                          std::to_string(xn));
  VectorXd res = prob.cons.residual(x);
  for (Index i = 0; i < res.size(); ++i)
    if (res(i) > feas_tol * std::max(1.0, prob.cons.row_norm(i) * std::max(1.0, xn)))
      throw InfeasibleError("starting point violates inequality " + std::to_string(i));
}

/// Active-set solve of (P) for general r_min ≤ r_max. The degenerate
/// r_min = r_max case delegates to solve_fixed_norm (identical trace).
inline KktPoint solve_norm_qp(const NormQP& prob, const VectorXd& x0,
                              const std::vector<Index>& w0 = {}, const SolveOptions& opts = {}) {
  if (prob.r_max <= 0) throw InvalidArgument("solve_norm_qp: r_max must be positive");
  if (prob.r_min > prob.r_max) throw InvalidArgument("solve_norm_qp: r_min > r_max");
  if (prob.r_min == prob.r_max) return solve_fixed_norm(prob, x0, w0, opts);

  validate_feasible_annulus(prob, x0, std::max(opts.feas_tol, 1e-9) * 10);
  WorkingSet w(&prob.cons, prob.n());
  VectorXd x = x0;
  {
    VectorXd res = prob.cons.residual(x0);
    for (Index i : w0) {
      if (i < 0 || i >= prob.cons.rows()) throw InvalidArgument("w0: row index out of range");
      if (std::abs(res(i)) > 1e-7 * std::max(1.0, prob.cons.row_norm(i) * std::max(1.0, x.norm())))
        continue;
      if (!w.contains(i) && w.row_independent(i)) w.add(i);
    }
  }

  const double mode_tol = 1e-9 * std::max(1.0, prob.r_max);
  NormMode mode = NormMode::Interior;
  if (std::abs(x.norm() - prob.r_max) <= mode_tol)
    mode = NormMode::SphereMax;
  else if (prob.r_min > 0 && std::abs(x.norm() - prob.r_min) <= mode_tol)
    mode = NormMode::SphereMin;

  const Index cap =
      opts.max_iterations > 0 ? opts.max_iterations : 100 * (prob.cons.rows() + prob.n());
  int iter = 0;
  double best_f = prob.objective(x);
  VectorXd best_x = x;
  KktPoint out;

  auto finish = [&](SolveStatus status, const MultiplierCheck& mc) {
    out.x = x;
    out.kappa = mc.kappa.size() ? mc.kappa : VectorXd::Zero(prob.cons.rows());
    out.mu = mc.mu;
    out.iterations = iter;
    out.objective = prob.objective(x);
    out.status = status;
    if (status != SolveStatus::Optimal && best_f < out.objective) {
      out.x = best_x;
      out.objective = best_f;
    }
    out.error = kkt_error(prob, out.x, out.kappa, out.mu);
    out.kkt_residual = out.error.overall();
    return out;
  };

  while (iter < cap) {
    if (mode == NormMode::Interior) {
      ++iter;
      InteriorStep step = qp_active_set_step(prob, x, w, opts);
      const double f_new = prob.objective(step.x);
      switch (step.event) {
        case InteriorStep::Event::Stationary: {
          x = step.x;
          MultiplierCheck mc = check_multipliers(prob, x, w, false, opts.mult_tol);
          if (mc.action == MultiplierCheck::Action::Licq)
            return finish(SolveStatus::LicqFailure, mc);
          if (mc.action == MultiplierCheck::Action::Optimal) {
            detail::trace_interior(opts, iter, StepType::Terminate, f_new, w, x, -1,
                                   mc.stationarity_residual);
            return finish(SolveStatus::Optimal, mc);
          }
          w.remove(mc.drop_index);
          detail::trace_interior(opts, iter, StepType::Drop, f_new, w, x, mc.drop_index);
          break;
        }
        case InteriorStep::Event::HitInequality:
          x = step.x;
          if (w.row_independent(step.hit_row)) {
            w.add(step.hit_row);
            detail::trace_interior(opts, iter, StepType::InteriorBlocked, f_new, w, x,
                                   step.hit_row);
          } else {
            detail::trace_interior(opts, iter, StepType::SkipDependentRow, f_new, w, x,
                                   step.hit_row);
          }
          break;
        case InteriorStep::Event::HitSphereMax:
          x = step.x;
          mode = NormMode::SphereMax;
          detail::trace_interior(opts, iter, StepType::InteriorSphereHit, f_new, w, x);
          break;
        case InteriorStep::Event::HitSphereMin:
          x = step.x;
          mode = NormMode::SphereMin;
          detail::trace_interior(opts, iter, StepType::InteriorSphereHit, f_new, w, x);
          break;
      }
      const double f_now = prob.objective(x);
      if (f_now < best_f) {
        best_f = f_now;
        best_x = x;
      }
      continue;
    }

    // Sphere mode at the active bound, with norm-drop switching enabled.
    const double r = mode == NormMode::SphereMax ? prob.r_max : prob.r_min;
    detail::SphereLoop loop{prob,
                            r,
                            w,
                            x,
                            opts,
                            static_cast<int>(mode),
                            true,
                            mode == NormMode::SphereMin,
                            &iter,
                            {},
                            false};
    loop.repin();
    while (iter < cap) {
      ++iter;
      detail::SphereStep step = loop.iterate();
      const double f_now = prob.objective(x);
      if (f_now < best_f) {
        best_f = f_now;
        best_x = x;
      }
      if (step == detail::SphereStep::Continue) continue;
      if (step == detail::SphereStep::Optimal) return finish(SolveStatus::Optimal, loop.last_check);
      if (step == detail::SphereStep::Licq)
        return finish(SolveStatus::LicqFailure, loop.last_check);
      if (step == detail::SphereStep::SwitchInterior) {
        mode = NormMode::Interior;
        break;
      }
    }
  }
  MultiplierCheck mc;
  mc.kappa = VectorXd::Zero(prob.cons.rows());
  return finish(SolveStatus::IterationCap, mc);
}

}  // namespace normqp
