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
// Primal active-set minimization of a quadratic over the sphere ‖x‖ = r
// intersected with Ax ≤ b: working-set management with bound-row
// elimination, exact circle-arc steps with blocking detection, projected
// gradient descent on the sphere slice, limiting-direction escapes and
// multiplier-based termination.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "normqp/common.hpp"
#include "normqp/numerics.hpp"
#include "normqp/trs.hpp"

namespace normqp {

// ---------------------------------------------------------------------------
// Constraint container

/// Rows aᵢᵀx ≤ bᵢ. Rows of the form c·eⱼᵀ are remembered as bounds so the
/// working set can eliminate fixed variables instead of factorizing them.
class Constraints {
 public:
  struct Bound {
    Index var;
    double coef;
  };

  Constraints() : a_(0, 0) {}

  Constraints(Eigen::SparseMatrix<double, Eigen::RowMajor> a, VectorXd b)
      : a_(std::move(a)), b_(std::move(b)) {
    if (a_.rows() != b_.size()) throw InvalidArgument("constraints: A and b disagree on rows");
    a_.makeCompressed();
    bounds_.resize(a_.rows());
    for (Index i = 0; i < a_.rows(); ++i) {
      Index nnz = 0;
      Index var = -1;
      double coef = 0;
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a_, i); it; ++it) {
        if (it.value() == 0.0) continue;
        ++nnz;
        var = it.col();
        coef = it.value();
      }
      if (nnz == 1) bounds_[i] = Bound{var, coef};
    }
  }

  static Constraints from_dense(const MatrixXd& a, const VectorXd& b) {
    Eigen::SparseMatrix<double, Eigen::RowMajor> sp(a.rows(), a.cols());
    std::vector<Eigen::Triplet<double>> trip;
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < a.cols(); ++j)
        if (a(i, j) != 0.0) trip.emplace_back(i, j, a(i, j));
    sp.setFromTriplets(trip.begin(), trip.end());
    return Constraints(std::move(sp), b);
  }

  Index rows() const { return a_.rows(); }
  Index cols() const { return a_.cols(); }

  double row_dot(Index i, const VectorXd& x) const {
    double s = 0;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a_, i); it; ++it)
      s += it.value() * x(it.col());
    return s;
  }

  VectorXd row_dense(Index i) const {
    VectorXd r = VectorXd::Zero(a_.cols());
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a_, i); it; ++it)
      r(it.col()) = it.value();
    return r;
  }

  double row_norm(Index i) const {
    double s = 0;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a_, i); it; ++it)
      s += it.value() * it.value();
    return std::sqrt(s);
  }

  VectorXd residual(const VectorXd& x) const { return a_ * x - b_; }

  VectorXd at_mul(const VectorXd& kappa) const { return a_.transpose() * kappa; }

  double rhs(Index i) const { return b_(i); }
  const VectorXd& rhs() const { return b_; }
  const std::optional<Bound>& bound_info(Index i) const { return bounds_[i]; }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const { return a_; }

  MatrixXd dense() const { return MatrixXd(a_); }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> a_;
  VectorXd b_;
  std::vector<std::optional<Bound>> bounds_;
};

// ---------------------------------------------------------------------------
// Working set

/// Ordered set of active rows plus the factorization machinery of the induced
/// equality system. Bound rows fix variables outright; only the remaining
/// general rows are factorized, restricted to the free variables.
class WorkingSet {
 public:
  WorkingSet(const Constraints* cons, Index n) : cons_(cons), n_(n) { rebuild(); }

  const std::vector<Index>& indices() const { return active_; }
  Index size() const { return static_cast<Index>(active_.size()); }
  Index n() const { return n_; }
  bool contains(Index i) const {
    return std::binary_search(active_.begin(), active_.end(), i);
  }

  void add(Index i) {
    if (contains(i)) throw InternalError("working set: row already active");
    if (!row_independent(i)) throw InternalError("working set: dependent row admitted");
    active_.insert(std::upper_bound(active_.begin(), active_.end(), i), i);
    rebuild();
  }

  void remove(Index i) {
    auto it = std::lower_bound(active_.begin(), active_.end(), i);
    if (it == active_.end() || *it != i) throw InternalError("working set: row not active");
    active_.erase(it);
    rebuild();
  }

  const std::vector<Index>& free_vars() const { return free_; }
  Index free_count() const { return static_cast<Index>(free_.size()); }
  const VectorXd& fixed_values() const { return fixed_values_; }
  Index general_count() const { return static_cast<Index>(general_.size()); }

  /// Dimension of the nullspace of the active rows.
  Index null_dim() const { return free_count() - rank_general_; }

  /// n×t orthonormal basis of N(Ā_W), zero on fixed coordinates.
  const MatrixXd& null_basis() const { return null_basis_full_; }

  /// Minimum-norm solution of Ā_W x = b̄_W.
  const VectorXd& affine_base() const { return affine_base_; }

  VectorXd project_nullspace(const VectorXd& v) const {
    return null_basis_full_ * (null_basis_full_.transpose() * v);
  }

  bool row_independent(Index i) const {
    const auto& bnd = cons_->bound_info(i);
    if (bnd) return var_is_free_[bnd->var];
    VectorXd row = cons_->row_dense(i);
    const double rn = row.norm();
    if (rn == 0.0) return false;
    return project_nullspace(row).norm() > 1e-10 * rn;
  }

 private:
  void rebuild() {
    fixed_values_ = VectorXd::Zero(n_);
    var_is_free_.assign(n_, true);
    general_.clear();
    for (Index i : active_) {
      const auto& bnd = cons_->bound_info(i);
      if (bnd) {
        if (!var_is_free_[bnd->var])
          throw InternalError("working set: variable fixed by two bound rows");
        var_is_free_[bnd->var] = false;
        fixed_values_(bnd->var) = cons_->rhs(i) / bnd->coef;
      } else {
        general_.push_back(i);
      }
    }
    free_.clear();
    for (Index v = 0; v < n_; ++v)
      if (var_is_free_[v]) free_.push_back(v);

    const Index s = free_count();
    const Index g = general_count();
    MatrixXd gmat(g, s);
    VectorXd grhs(g);
    for (Index k = 0; k < g; ++k) {
      VectorXd row = cons_->row_dense(general_[k]);
      double corr = cons_->rhs(general_[k]);
      for (Index v = 0; v < n_; ++v)
        if (!var_is_free_[v]) corr -= row(v) * fixed_values_(v);
      for (Index j = 0; j < s; ++j) gmat(k, j) = row(free_[j]);
      grhs(k) = corr;
    }
    rank_general_ = g;
    MatrixXd null_free;
    VectorXd base_free = VectorXd::Zero(s);
    if (g == 0) {
      null_free = MatrixXd::Identity(s, s);
    } else {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(gmat.transpose());
      qr.setThreshold(1e-12);
      if (qr.rank() < g) throw InternalError("working set: active rows lost rank");
      MatrixXd qfull = qr.householderQ() * MatrixXd::Identity(s, s);
      null_free = qfull.rightCols(s - g);
      Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(gmat);
      base_free = cod.solve(grhs);
    }
    null_basis_full_ = MatrixXd::Zero(n_, null_free.cols());
    affine_base_ = fixed_values_;
    for (Index j = 0; j < s; ++j) {
      null_basis_full_.row(free_[j]) = null_free.row(j);
      affine_base_(free_[j]) = base_free(j);
    }
  }

  const Constraints* cons_;
  Index n_;
  std::vector<Index> active_;
  std::vector<Index> general_;
  std::vector<Index> free_;
  std::vector<bool> var_is_free_;
  VectorXd fixed_values_;
  Index rank_general_ = 0;
  MatrixXd null_basis_full_;
  VectorXd affine_base_;
};

// ---------------------------------------------------------------------------
// Problem, result and trace types

/// Problem (P): min ½xᵀPx + qᵀx s.t. r_min ≤ ‖x‖₂ ≤ r_max, Ax ≤ b.
struct NormQP {
  LinearOperator p;
  VectorXd q;
  Constraints cons;
  double r_min = 0;
  double r_max = 1;

  Index n() const { return p.dim(); }
  double objective(const VectorXd& x) const { return 0.5 * x.dot(p(x)) + q.dot(x); }
  VectorXd gradient(const VectorXd& x) const { return p(x) + q; }

  NormQP() = default;
  NormQP(LinearOperator p_in, VectorXd q_in, Constraints c, double rmin, double rmax)
      : p(std::move(p_in)), q(std::move(q_in)), cons(std::move(c)), r_min(rmin), r_max(rmax) {}
  static NormQP from_dense(const MatrixXd& p, const VectorXd& q, const MatrixXd& a,
                           const VectorXd& b, double rmin, double rmax) {
    return NormQP(LinearOperator::from_dense(p), q, Constraints::from_dense(a, b), rmin, rmax);
  }
};

enum class SolveStatus { Optimal, LicqFailure, IterationCap };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::LicqFailure: return "licq_failure";
    case SolveStatus::IterationCap: return "iteration_cap";
  }
  return "?";
}

/// Components of the overall KKT error; the overall value is their maximum.
struct KktError {
  double primal = 0;
  double dual = 0;
  double stationarity = 0;
  double complementarity = 0;
  double overall() const {
    return std::max({primal, dual, stationarity, complementarity});
  }
};

/// KKT error of (x, κ, μ). μ is the multiplier of the ½‖x‖² stationarity form
/// (the term μx); the printed error formula uses the squared-norm constraint,
/// so internally μ_sq = μ/2 enters the dual and complementarity parts while
/// the stationarity part keeps the 2·μ_sq·x = μx term.
inline KktError kkt_error(const NormQP& prob, const VectorXd& x, const VectorXd& kappa,
                          double mu) {
  KktError e;
  const double mu_sq = 0.5 * mu;
  const double xn = x.norm();
  VectorXd res = prob.cons.residual(x);
  e.primal = std::max(0.0, xn - prob.r_max);
  if (prob.r_min > 0) e.primal = std::max(e.primal, prob.r_min - xn);
  for (Index i = 0; i < res.size(); ++i) e.primal = std::max(e.primal, res(i));

  double dual_min = 0;
  for (Index i = 0; i < kappa.size(); ++i) dual_min = std::min(dual_min, kappa(i));
  const bool sphere = prob.r_min == prob.r_max;
  if (!sphere && prob.r_min == 0) dual_min = std::min(dual_min, mu_sq);
  e.dual = -dual_min;

  VectorXd stat = prob.gradient(x) + prob.cons.at_mul(kappa) + mu * x;
  e.stationarity = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;

  double compl_term = 0;
  for (Index i = 0; i < res.size(); ++i)
    compl_term = std::max(compl_term, std::min(kappa(i), std::abs(res(i))));
  const double up_gap = std::abs(xn * xn - prob.r_max * prob.r_max);
  if (sphere) {
    compl_term = std::max(compl_term, std::min(std::abs(mu_sq), up_gap));
  } else if (prob.r_min == 0) {
    compl_term = std::max(compl_term, std::min(mu_sq, up_gap));
  } else {
    const double lo_gap = std::abs(xn * xn - prob.r_min * prob.r_min);
    compl_term = std::max(compl_term, mu_sq >= 0 ? std::min(mu_sq, up_gap)
                                                 : std::min(-mu_sq, lo_gap));
  }
  e.complementarity = compl_term;
  return e;
}

struct KktPoint {
  VectorXd x;
  VectorXd kappa;
  double mu = 0;
  double kkt_residual = 0;
  SolveStatus status = SolveStatus::Optimal;
  double objective = 0;
  int iterations = 0;
  KktError error;
};

enum class StepType {
  WarmupStep,
  WarmupHit,
  JumpToMinimizer,
  ArcBlocked,
  ArcMinimizer,
  PgdHit,
  PgdConverged,
  EscapeBlocked,
  EscapeStep,
  EnumJump,
  Drop,
  SkipDependentRow,
  SwitchToInterior,
  SwitchToSphere,
  InteriorStep,
  InteriorBlocked,
  InteriorSphereHit,
  Terminate
};

inline const char* to_string(StepType t) {
  switch (t) {
    case StepType::WarmupStep: return "warmup_step";
    case StepType::WarmupHit: return "warmup_hit";
    case StepType::JumpToMinimizer: return "jump_to_minimizer";
    case StepType::ArcBlocked: return "arc_blocked";
    case StepType::ArcMinimizer: return "arc_minimizer";
    case StepType::PgdHit: return "pgd_hit";
    case StepType::PgdConverged: return "pgd_converged";
    case StepType::EscapeBlocked: return "escape_blocked";
    case StepType::EscapeStep: return "escape_step";
    case StepType::EnumJump: return "enum_jump";
    case StepType::Drop: return "drop";
    case StepType::SkipDependentRow: return "skip_dependent_row";
    case StepType::SwitchToInterior: return "switch_to_interior";
    case StepType::SwitchToSphere: return "switch_to_sphere";
    case StepType::InteriorStep: return "interior_step";
    case StepType::InteriorBlocked: return "interior_blocked";
    case StepType::InteriorSphereHit: return "interior_sphere_hit";
    case StepType::Terminate: return "terminate";
  }
  return "?";
}

/// Mode tag carried in the trace: 0 fixed-norm sphere, 1 sphere at r_max,
/// 2 sphere at r_min, 3 interior.
struct TraceEvent {
  int iter = 0;
  StepType type = StepType::Terminate;
  double f = 0;
  std::vector<Index> working_set;
  double kkt_residual = -1;
  Index constraint = -1;
  int mode = 0;
  VectorXd point;
};

using TraceCallback = std::function<void(const TraceEvent&)>;

struct SolveOptions {
  double feas_tol = 1e-9;
  double mult_tol = 1e-9;
  double pgd_tol = 1e-8;
  int warmup_steps = 5;
  int pgd_max_steps = 2000;
  Index max_iterations = 0;  // 0: 100(m+n)
  double step_zero_tol = 1e-12;
  double snap_tol = 1e-6;
  double curvature_tol = 1e-9;
  TraceCallback trace;
  TrsTolerances trs;
};

// ---------------------------------------------------------------------------
// Geometry helpers

namespace detail {

/// Circle {center + ρ(u cosθ + v sinθ)} inside the sphere-affine slice,
/// anchored so that θ = 0 is the current iterate.
struct CirclePath {
  VectorXd center;
  double rho = 0;
  VectorXd u, v;

  VectorXd point(double theta) const {
    return center + rho * (std::cos(theta) * u + std::sin(theta) * v);
  }
  double angle_of(const VectorXd& x) const {
    return std::atan2(v.dot(x - center), u.dot(x - center));
  }
};

/// Builds the circle through `x` whose plane contains the given directions
/// (all in N(Ā_W)); pads with a nullspace direction when they are collinear.
inline std::optional<CirclePath> make_circle(const WorkingSet& w, const VectorXd& x, double r,
                                             const std::vector<VectorXd>& dirs) {
  const double scale = std::max(1.0, x.norm());
  std::vector<VectorXd> basis;
  auto push_dir = [&](VectorXd d) {
    for (const auto& bvec : basis) d -= bvec.dot(d) * bvec;
    if (d.norm() > 1e-9 * scale) basis.push_back(d.normalized());
  };
  for (const auto& d : dirs) {
    if (basis.size() == 2) break;
    push_dir(d);
  }
  const MatrixXd& nb = w.null_basis();
  for (Index j = 0; basis.size() < 2 && j < nb.cols(); ++j) push_dir(nb.col(j));
  if (basis.size() < 2) return std::nullopt;

  CirclePath c;
  c.center = x - basis[0].dot(x) * basis[0] - basis[1].dot(x) * basis[1];
  const double rho2 = r * r - c.center.squaredNorm();
  if (rho2 <= 0) return std::nullopt;
  c.rho = std::sqrt(rho2);
  VectorXd radial = x - c.center;
  if (radial.norm() <= 1e-12 * scale) return std::nullopt;
  c.u = radial.normalized();
  // Second in-plane direction orthogonal to u.
  VectorXd w2 = basis[std::abs(basis[0].dot(c.u)) < std::abs(basis[1].dot(c.u)) ? 0 : 1];
  w2 -= w2.dot(c.u) * c.u;
  if (w2.norm() <= 1e-12) return std::nullopt;
  c.v = w2.normalized();
  return c;
}

struct ArcBlock {
  double delta;
  Index row;
};

inline double wrap_positive(double angle) {
  double a = std::fmod(angle, 2 * M_PI);
  if (a < 0) a += 2 * M_PI;
  return a;
}

/// Earliest violation of an inactive row along the circle from θ = 0 in
/// direction `dir`, within (≈0, delta_max]. Ties resolved by smaller angle,
/// then lower row index.
inline std::optional<ArcBlock> first_blocking(const Constraints& cons, const WorkingSet& w,
                                              const CirclePath& c, int dir, double delta_max,
                                              double feas_tol) {
  std::optional<ArcBlock> best;
  for (Index i = 0; i < cons.rows(); ++i) {
    if (w.contains(i)) continue;
    const VectorXd row = cons.row_dense(i);
    const double ca = c.rho * row.dot(c.u);
    const double cb = c.rho * row.dot(c.v);
    const double cc = row.dot(c.center) - cons.rhs(i);  // h(θ) = ca·cos + cb·sin + cc
    const double amp = std::hypot(ca, cb);
    const double scale = std::max(1.0, std::abs(cc) + amp);
    if (amp <= 1e-14 * scale) continue;  // constant along the circle
    if (std::abs(cc) > amp) continue;    // never crosses zero
    const double phi = std::atan2(cb, ca);
    const double psi = std::acos(std::clamp(-cc / amp, -1.0, 1.0));
    for (double theta : {phi + psi, phi - psi}) {
      const double slope = (-ca * std::sin(theta) + cb * std::cos(theta)) * dir;
      if (slope <= 1e-13 * scale) continue;  // not entering violation
      double delta = wrap_positive(dir * theta);
      if (delta > delta_max + 1e-12) {
        // A crossing at θ ≈ 0 counts as an immediate block when entering.
        if (wrap_positive(dir * theta) >= 2 * M_PI - 1e-10) delta = 0;
        else continue;
      }
      if (!best || delta < best->delta - 1e-13 ||
          (std::abs(delta - best->delta) <= 1e-13 && i < best->row))
        best = ArcBlock{delta, i};
    }
  }
  (void)feas_tol;
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arc step (2D subproblem)

struct ArcOutcome {
  VectorXd x;
  std::optional<Index> blocking;
  bool at_input = false;          // x_k itself is the arc minimizer (or circle constant)
  bool reached_minimizer = false; // landed on a circle minimizer without blocking
};

namespace detail {

/// Solves the 2D TRS induced on the circle and walks the descending arc from
/// θ = 0 to its first minimizer, stopping at the first blocking constraint.
inline ArcOutcome arc_step(const NormQP& prob, const WorkingSet& w, const VectorXd& xk, double r,
                           const CirclePath& c, const SolveOptions& opts) {
  ArcOutcome out;
  out.x = xk;

  const VectorXd pu = prob.p(c.u);
  const VectorXd pv = prob.p(c.v);
  const VectorXd pc_q = prob.p(c.center) + prob.q;
  MatrixXd h(2, 2);
  h << c.u.dot(pu), 0.5 * (c.u.dot(pv) + c.v.dot(pu)), 0.5 * (c.u.dot(pv) + c.v.dot(pu)),
      c.v.dot(pv);
  Eigen::Vector2d g2(c.u.dot(pc_q), c.v.dot(pc_q));

  const double hscale = std::max({std::abs(h(0, 0)), std::abs(h(1, 1)), std::abs(h(0, 1)), 1.0});
  const double gscale = std::max(g2.norm(), 1.0);
  const bool constant_circle = std::abs(h(0, 0) - h(1, 1)) <= 1e-13 * hscale &&
                               std::abs(h(0, 1)) <= 1e-13 * hscale && g2.norm() <= 1e-13 * gscale;
  if (constant_circle) {
    out.at_input = true;
    return out;
  }

  TrsProblem sub(LinearOperator::from_dense(h), g2, c.rho);
  TrsTolerances sub_tols = opts.trs;
  sub_tols.force_dense = true;
  TrsOutcome mins = solve_trs(sub, sub_tols);

  std::vector<double> min_angles;
  std::vector<Eigen::Vector2d> min_points;
  for (const auto& y : mins.minimizers()) {
    min_angles.push_back(std::atan2(y(1), y(0)));
    min_points.push_back(y);
  }

  // θ = 0 is x_k; snap if it already sits at a minimizer.
  for (size_t i = 0; i < min_angles.size(); ++i) {
    const double d = wrap_positive(min_angles[i]);
    if (std::min(d, 2 * M_PI - d) <= 1e-9) {
      out.at_input = true;
      return out;
    }
  }

  // Directional derivative of the restriction at θ = 0.
  Eigen::Vector2d y0(c.rho, 0);
  const double fprime = (h * y0 + g2).dot(Eigen::Vector2d(0, c.rho));
  const double fscale = std::max(1.0, c.rho * (hscale * c.rho + g2.norm()));

  struct Plan {
    int dir;
    double delta_target;
    size_t target;
    std::optional<ArcBlock> block;
  };
  std::vector<Plan> plans;
  auto build_plan = [&](int dir) {
    Plan p;
    p.dir = dir;
    p.delta_target = std::numeric_limits<double>::infinity();
    p.target = 0;
    for (size_t i = 0; i < min_angles.size(); ++i) {
      const double d = wrap_positive(dir * min_angles[i]);
      if (d < p.delta_target) {
        p.delta_target = d;
        p.target = i;
      }
    }
    p.block = first_blocking(prob.cons, w, c, dir, p.delta_target, opts.feas_tol);
    return p;
  };
  if (std::abs(fprime) > 1e-11 * fscale) {
    plans.push_back(build_plan(fprime < 0 ? 1 : -1));
  } else {
    plans.push_back(build_plan(1));
    plans.push_back(build_plan(-1));
  }

  // Prefer a direction that actually moves; among those the shorter arc.
  auto progress = [&](const Plan& p) {
    return p.block ? p.block->delta : p.delta_target;
  };
  std::stable_sort(plans.begin(), plans.end(), [&](const Plan& a, const Plan& b) {
    const bool a_zero = progress(a) <= 1e-12;
    const bool b_zero = progress(b) <= 1e-12;
    if (a_zero != b_zero) return !a_zero;
    return a.delta_target < b.delta_target;
  });
  const Plan& plan = plans.front();

  const double f_start = prob.objective(xk);
  if (plan.block && plan.block->delta < plan.delta_target - 1e-12) {
    out.blocking = plan.block->row;
    out.x = c.point(plan.dir * plan.block->delta);
  } else if (std::isfinite(plan.delta_target)) {
    const Eigen::Vector2d& y = min_points[plan.target];
    out.x = c.center + y(0) * c.u + y(1) * c.v;
    out.reached_minimizer = true;
  } else {
    out.at_input = true;  // no minimizer angle (cannot happen for a boundary solve)
    return out;
  }
  // Degenerate critical starts can pick an ascending arc; refuse the move.
  if (prob.objective(out.x) > f_start + 1e-10 * std::max(1.0, std::abs(f_start))) {
    out = ArcOutcome{};
    out.x = xk;
    out.at_input = true;
  }
  (void)r;
  return out;
}

}  // namespace detail

/// 2D subproblem step: restrict to the circle through x_k whose plane contains
/// p1 and p2, solve the induced 2D TRS densely, walk the descending arc.
inline ArcOutcome two_dim_subproblem(const NormQP& prob, const WorkingSet& w, const VectorXd& xk,
                                     double r, const VectorXd& p1, const VectorXd& p2,
                                     const SolveOptions& opts = {}) {
  auto circle = detail::make_circle(w, xk, r, {p1 - xk, p2 - xk});
  if (!circle) {
    ArcOutcome out;
    out.x = xk;
    out.at_input = true;
    return out;
  }
  return detail::arc_step(prob, w, xk, r, *circle, opts);
}

// ---------------------------------------------------------------------------
// Projected gradient descent on the sphere slice

struct PgdOutcome {
  VectorXd x;
  std::optional<Index> hit;
  bool converged = false;
  int steps = 0;
};

/// Gradient descent along exact great-circle retractions within
/// {‖x‖ = r, Ā_W x = b̄_W}, with Armijo backtracking. Stops at the first
/// blocking inequality (returning the boundary point exactly) or at
/// stationarity of the projected gradient.
inline PgdOutcome projected_gradient_descent(const NormQP& prob, const VectorXd& x_start,
                                             const WorkingSet& w, double r,
                                             const SolveOptions& opts = {}, int max_steps = -1) {
  PgdOutcome out;
  out.x = x_start;
  const int cap = max_steps >= 0 ? max_steps : opts.pgd_max_steps;
  const VectorXd& x_aff = w.affine_base();
  double f = prob.objective(out.x);
  for (out.steps = 0; out.steps < cap; ++out.steps) {
    VectorXd z = w.project_nullspace(out.x - x_aff);
    const double rho = z.norm();
    if (rho <= 1e-14 * std::max(1.0, r)) break;  // degenerate slice
    VectorXd g = prob.gradient(out.x);
    VectorXd gn = w.project_nullspace(g);
    VectorXd gt = gn - (z.dot(gn) / z.squaredNorm()) * z;
    const double gtn = gt.norm();
    if (gtn <= opts.pgd_tol * (1.0 + g.norm())) {
      out.converged = true;
      return out;
    }
    detail::CirclePath c;
    c.center = out.x - z;
    c.rho = rho;
    c.u = z / rho;
    c.v = -gt / gtn;
    double eta = 1.0;
    double theta = 0;
    double fc = f;
    VectorXd cand;
    bool ok = false;
    for (int bt = 0; bt < 60; ++bt) {
      theta = std::atan2(eta * gtn, rho);
      cand = c.point(theta);
      fc = prob.objective(cand);
      if (fc <= f - 1e-4 * theta * rho * gtn) {
        ok = true;
        break;
      }
      eta *= 0.5;
    }
    if (!ok) {
      out.converged = true;  // no numerical descent left
      return out;
    }
    auto block = detail::first_blocking(prob.cons, w, c, 1, theta, opts.feas_tol);
    if (block) {
      out.x = c.point(block->delta);
      out.hit = block->row;
      return out;
    }
    out.x = cand;
    f = fc;
  }
  return out;
}

/// Bounded-count warm-up: same contract with a step cap (default 5).
inline PgdOutcome pre_iteration_pgd(const NormQP& prob, const VectorXd& x, const WorkingSet& w,
                                    double r, int k_steps = 5, const SolveOptions& opts = {}) {
  return projected_gradient_descent(prob, x, w, r, opts, k_steps);
}

// ---------------------------------------------------------------------------
// Multipliers

struct MultiplierCheck {
  enum class Action { Optimal, Drop, Licq } action = Action::Optimal;
  VectorXd kappa;  // full-length, zeros off the working set
  double mu = 0;
  double stationarity_residual = 0;
  Index drop_index = -1;
  double min_kappa = 0;
};

/// Least-squares multipliers at a stationary point of (SP): the columns are
/// the active rows plus (optionally) the sphere gradient x. Termination when
/// every working-set κ clears −tol; otherwise the most negative is dropped.
inline MultiplierCheck check_multipliers(const NormQP& prob, const VectorXd& x,
                                         const WorkingSet& w, bool include_norm,
                                         double mult_tol = 1e-9) {
  MultiplierCheck mc;
  const Index nw = w.size();
  const Index cols = nw + (include_norm ? 1 : 0);
  mc.kappa = VectorXd::Zero(prob.cons.rows());
  VectorXd g = prob.gradient(x);
  if (cols == 0) {
    mc.stationarity_residual = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    mc.action = MultiplierCheck::Action::Optimal;
    return mc;
  }
  MatrixXd mtx(prob.n(), cols);
  for (Index k = 0; k < nw; ++k) mtx.col(k) = prob.cons.row_dense(w.indices()[k]);
  if (include_norm) mtx.col(cols - 1) = x;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(mtx);
  qr.setThreshold(1e-12);
  if (qr.rank() < cols) {
    mc.action = MultiplierCheck::Action::Licq;
    return mc;
  }
  VectorXd sol = qr.solve(-g);
  mc.stationarity_residual = (mtx * sol + g).cwiseAbs().maxCoeff();
  if (include_norm) mc.mu = sol(cols - 1);
  mc.min_kappa = 0;
  Index argmin = -1;
  double minval = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < nw; ++k) {
    mc.kappa(w.indices()[k]) = sol(k);
    if (sol(k) < minval) {
      minval = sol(k);
      argmin = w.indices()[k];
    }
  }
  mc.min_kappa = nw > 0 ? minval : 0.0;
  if (nw == 0 || minval >= -mult_tol) {
    mc.action = MultiplierCheck::Action::Optimal;
  } else {
    mc.action = MultiplierCheck::Action::Drop;
    mc.drop_index = argmin;
  }
  return mc;
}

// ---------------------------------------------------------------------------
// Limiting-direction escape

/// At a feasible stationary point with indefinite tangent Hessian, walk the
/// circle spanned by the global minimizer and the most negative curvature
/// direction; the descending arc must leave through a blocking constraint (or
/// at least reach a strictly lower circle minimizer).
inline ArcOutcome limiting_direction_escape(const NormQP& prob, const WorkingSet& w,
                                            const VectorXd& x_s, double r, const VectorXd& x_g,
                                            const VectorXd& neg_curv_dir,
                                            const SolveOptions& opts = {}) {
  auto circle = detail::make_circle(w, x_s, r, {x_g - x_s, neg_curv_dir});
  if (!circle) {
    ArcOutcome out;
    out.x = x_s;
    out.at_input = true;
    return out;
  }
  return detail::arc_step(prob, w, x_s, r, *circle, opts);
}

namespace detail {

/// Smallest eigenvalue and eigenvector of the Lagrangian Hessian restricted
/// to the tangent space of {‖x‖ = r, Ā_W x = b̄_W} at x.
inline std::pair<double, VectorXd> tangent_hessian_min(const NormQP& prob, const WorkingSet& w,
                                                       const VectorXd& x, double mu) {
  const MatrixXd& nb = w.null_basis();
  VectorXd z = w.project_nullspace(x - w.affine_base());
  std::vector<VectorXd> cols;
  const double zn = z.norm();
  for (Index j = 0; j < nb.cols(); ++j) {
    VectorXd cnd = nb.col(j);
    if (zn > 0) cnd -= (z.dot(cnd) / z.squaredNorm()) * z;
    for (const auto& c : cols) cnd -= c.dot(cnd) * c;
    if (cnd.norm() > 1e-9) cols.push_back(cnd.normalized());
  }
  if (cols.empty()) return {0.0, VectorXd::Zero(prob.n())};
  MatrixXd t(prob.n(), static_cast<Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) t.col(j) = cols[j];
  MatrixXd ht(t.cols(), t.cols());
  for (Index j = 0; j < t.cols(); ++j) {
    VectorXd pj = prob.p(t.col(j)) + mu * t.col(j);
    for (Index i = 0; i < t.cols(); ++i) ht(i, j) = t.col(i).dot(pj);
  }
  ht = 0.5 * (ht + ht.transpose()).eval();
  SymEig eig = sym_eig_dense(ht, 1e-8);
  return {eig.values(0), t * eig.vectors.col(0)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fixed-norm active-set engine

namespace detail {

enum class SphereStep { Continue, Optimal, SwitchInterior, Licq, Cap };

struct SphereLoop {
  const NormQP& prob;
  double r;
  WorkingSet& w;
  VectorXd& x;
  const SolveOptions& opts;
  int mode_tag = 0;           // trace mode
  bool allow_norm_drop = false;
  bool norm_drop_negative = false;  // true at r_min: required sign is μ ≤ 0
  int* iter = nullptr;
  MultiplierCheck last_check;
  bool force_warmup = false;

  void trace(StepType t, double f, Index constraint = -1, double resid = -1) const {
    if (!opts.trace) return;
    TraceEvent e;
    e.iter = iter ? *iter : 0;
    e.type = t;
    e.f = f;
    e.working_set = std::vector<Index>(w.indices().begin(), w.indices().end());
    e.kkt_residual = resid;
    e.constraint = constraint;
    e.mode = mode_tag;
    e.point = x;
    opts.trace(e);
  }

  /// Re-pins x onto the sphere-affine slice (guards against drift).
  void repin() {
    VectorXd base = w.affine_base();
    VectorXd z = w.project_nullspace(x - base);
    const double target = std::sqrt(std::max(0.0, r * r - base.squaredNorm()));
    if (z.norm() > 0 && target > 0) x = base + z * (target / z.norm());
  }

  SphereStep multiplier_stage() {
    MultiplierCheck mc = check_multipliers(prob, x, w, true, opts.mult_tol);
    // The stage assumes x is stationary for (SP); when the residual
    // contradicts that, force progress with gradient descent first.
    if (mc.action != MultiplierCheck::Action::Licq && w.null_dim() > 1) {
      const double scale = 1.0 + prob.gradient(x).norm();
      if (mc.stationarity_residual > 1e-6 * scale) {
        PgdOutcome pgd = projected_gradient_descent(prob, x, w, r, opts);
        if (pgd.hit) {
          x = pgd.x;
          if (w.row_independent(*pgd.hit)) {
            w.add(*pgd.hit);
            trace(StepType::PgdHit, prob.objective(x), *pgd.hit);
            return SphereStep::Continue;
          }
          trace(StepType::SkipDependentRow, prob.objective(x), *pgd.hit);
        } else if ((pgd.x - x).norm() > opts.step_zero_tol * std::max(1.0, r)) {
          x = pgd.x;
          trace(StepType::PgdConverged, prob.objective(x));
          return SphereStep::Continue;
        }
      }
    }
    last_check = mc;
    const double f = prob.objective(x);
    if (mc.action == MultiplierCheck::Action::Licq) {
      trace(StepType::Terminate, f, -1, mc.stationarity_residual);
      return SphereStep::Licq;
    }
    if (allow_norm_drop) {
      const double norm_defect = norm_drop_negative ? -mc.mu : mc.mu;
      if (norm_defect < -opts.mult_tol && norm_defect < mc.min_kappa - opts.mult_tol) {
        trace(StepType::SwitchToInterior, f, -1, mc.stationarity_residual);
        return SphereStep::SwitchInterior;
      }
    }
    if (mc.action == MultiplierCheck::Action::Optimal) {
      trace(StepType::Terminate, f, -1, mc.stationarity_residual);
      return SphereStep::Optimal;
    }
    w.remove(mc.drop_index);
    trace(StepType::Drop, f, mc.drop_index);
    // The dropped multiplier is negative, so one gradient step moves
    // strictly off the dropped row and rules out an immediate re-add.
    force_warmup = true;
    return SphereStep::Continue;
  }

  /// One outer iteration of the sphere-mode active set.
  SphereStep iterate() {
    const double f_before = prob.objective(x);

    const int warm_cap = std::max(opts.warmup_steps, force_warmup ? 1 : 0);
    force_warmup = false;
    if (warm_cap > 0 && w.null_dim() >= 1) {
      PgdOutcome warm = pre_iteration_pgd(prob, x, w, r, warm_cap, opts);
      if (warm.hit) {
        x = warm.x;
        if (w.row_independent(*warm.hit)) {
          w.add(*warm.hit);
          trace(StepType::WarmupHit, prob.objective(x), *warm.hit);
          return SphereStep::Continue;
        }
        trace(StepType::SkipDependentRow, prob.objective(x), *warm.hit);
      } else if ((warm.x - x).norm() > opts.step_zero_tol * std::max(1.0, r)) {
        x = warm.x;
        trace(StepType::WarmupStep, prob.objective(x));
      }
    }

    if (w.null_dim() <= 1) {
      // Degenerate slice: at most two feasible points; consider the mirror.
      VectorXd base = w.affine_base();
      VectorXd z = w.project_nullspace(x - base);
      if (z.norm() > opts.step_zero_tol) {
        VectorXd other = base - z;
        const double fo = prob.objective(other);
        VectorXd res = prob.cons.residual(other);
        const bool feasible = res.size() == 0 || res.maxCoeff() <= opts.feas_tol;
        if (feasible && fo < prob.objective(x) - 1e-14 * std::max(1.0, std::abs(fo))) {
          x = other;
          trace(StepType::EnumJump, fo);
          return SphereStep::Continue;
        }
      }
      return multiplier_stage();
    }

    TrsProblem sub(prob.p, prob.q, r);
    if (w.size() > 0) {
      // Assemble the active rows densely for the subproblem solver.
      MatrixXd asub(w.size(), prob.n());
      VectorXd bsub(w.size());
      for (Index k = 0; k < w.size(); ++k) {
        asub.row(k) = prob.cons.row_dense(w.indices()[k]).transpose();
        bsub(k) = prob.cons.rhs(w.indices()[k]);
      }
      sub = TrsProblem(prob.p, prob.q, r, asub, bsub);
    }
    TrsOutcome trs = solve_trs(sub, opts.trs);
    std::vector<VectorXd> mins = trs.minimizers();

    const double snap = opts.snap_tol * std::max(1.0, r);
    for (const auto& p : mins)
      if ((x - p).norm() <= snap) {
        x = p;
        return multiplier_stage();
      }

    // A feasible global minimizer of (SP) is always an acceptable next
    // iterate: it does not increase f and needs no arc walk.
    for (const auto& gp : trs.global_points) {
      VectorXd res = prob.cons.residual(gp);
      if (res.size() == 0 || res.maxCoeff() <= opts.feas_tol) {
        x = gp;
        trace(StepType::JumpToMinimizer, prob.objective(x));
        return multiplier_stage();
      }
    }

    ArcOutcome arc;
    if (mins.size() >= 2) {
      arc = two_dim_subproblem(prob, w, x, r, mins[0], mins[1], opts);
    } else {
      const VectorXd& cand = mins[0];
      VectorXd g = prob.gradient(x);
      VectorXd gn = w.project_nullspace(g);
      VectorXd z = w.project_nullspace(x - w.affine_base());
      if (z.squaredNorm() > 0) gn -= (z.dot(gn) / z.squaredNorm()) * z;
      auto circle = detail::make_circle(w, x, r, {cand - x, -gn});
      if (circle) {
        arc = detail::arc_step(prob, w, x, r, *circle, opts);
      } else {
        arc.x = x;
        arc.at_input = true;
      }
    }

    if (arc.blocking) {
      x = arc.x;
      if (w.row_independent(*arc.blocking)) {
        w.add(*arc.blocking);
        trace(StepType::ArcBlocked, prob.objective(x), *arc.blocking);
      } else {
        trace(StepType::SkipDependentRow, prob.objective(x), *arc.blocking);
      }
      return SphereStep::Continue;
    }
    if (arc.at_input) return multiplier_stage();

    x = arc.x;
    trace(StepType::ArcMinimizer, prob.objective(x));
    for (const auto& p : mins)
      if ((x - p).norm() <= snap) {
        x = p;
        return multiplier_stage();
      }

    PgdOutcome pgd = projected_gradient_descent(prob, x, w, r, opts);
    if (pgd.hit) {
      x = pgd.x;
      if (w.row_independent(*pgd.hit)) {
        w.add(*pgd.hit);
        trace(StepType::PgdHit, prob.objective(x), *pgd.hit);
      } else {
        trace(StepType::SkipDependentRow, prob.objective(x), *pgd.hit);
      }
      return SphereStep::Continue;
    }
    x = pgd.x;
    trace(StepType::PgdConverged, prob.objective(x));
    for (const auto& p : mins)
      if ((x - p).norm() <= snap) {
        x = p;
        return multiplier_stage();
      }

    MultiplierCheck at_s = check_multipliers(prob, x, w, true, opts.mult_tol);
    auto [lmin, dmin] = detail::tangent_hessian_min(prob, w, x, at_s.mu);
    const double curv_scale = std::max(1.0, prob.gradient(x).norm());
    if (lmin < -opts.curvature_tol * curv_scale) {
      ArcOutcome esc = limiting_direction_escape(prob, w, x, r, mins[0], dmin, opts);
      if (esc.blocking) {
        x = esc.x;
        if (w.row_independent(*esc.blocking)) {
          w.add(*esc.blocking);
          trace(StepType::EscapeBlocked, prob.objective(x), *esc.blocking);
        } else {
          trace(StepType::SkipDependentRow, prob.objective(x), *esc.blocking);
        }
        return SphereStep::Continue;
      }
      if ((esc.x - x).norm() > opts.step_zero_tol * std::max(1.0, r)) {
        x = esc.x;
        trace(StepType::EscapeStep, prob.objective(x));
        return SphereStep::Continue;
      }
    }
    (void)f_before;
    return multiplier_stage();
  }
};

}  // namespace detail

/// Checks feasibility of x for the sphere problem at radius r.
inline void validate_feasible_sphere(const NormQP& prob, const VectorXd& x, double r,
                                     double feas_tol) {
  if (x.size() != prob.n()) throw InvalidArgument("starting point has wrong dimension");
  if (std::abs(x.norm() - r) > feas_tol * std::max(1.0, r) + feas_tol)
    throw InfeasibleError("starting point is not on the sphere: ||x|| = " +
                          std::to_string(x.norm()) + ", r = " + std::to_string(r));
  VectorXd res = prob.cons.residual(x);
  for (Index i = 0; i < res.size(); ++i)
    if (res(i) > feas_tol * std::max(1.0, prob.cons.row_norm(i) * r))
      throw InfeasibleError("starting point violates inequality " + std::to_string(i) + " by " +
                            std::to_string(res(i)));
}

/// Algorithm for (P) with r_min = r_max = r. Starts from a feasible x0 and an
/// initial working set (subset of the active rows at x0; dependent or inactive
/// rows are skipped). Iterates stay feasible with non-increasing objective.
inline KktPoint solve_fixed_norm(const NormQP& prob, const VectorXd& x0,
                                 const std::vector<Index>& w0 = {},
                                 const SolveOptions& opts = {}) {
  if (prob.r_min != prob.r_max)
    throw InvalidArgument("solve_fixed_norm: requires r_min == r_max");
  const double r = prob.r_max;
  if (r <= 0) throw InvalidArgument("solve_fixed_norm: radius must be positive");
  validate_feasible_sphere(prob, x0, r, std::max(opts.feas_tol, 1e-9) * 10);

  WorkingSet w(&prob.cons, prob.n());
  VectorXd x = x0;
  VectorXd res = prob.cons.residual(x0);
  for (Index i : w0) {
    if (i < 0 || i >= prob.cons.rows()) throw InvalidArgument("w0: row index out of range");
    if (std::abs(res(i)) > 1e-7 * std::max(1.0, prob.cons.row_norm(i) * r))
      throw InvalidArgument("w0: row " + std::to_string(i) + " is not active at x0");
    if (!w.contains(i) && w.row_independent(i)) w.add(i);
  }

  int iter = 0;
  detail::SphereLoop loop{prob, r, w, x, opts, 0, false, false, &iter, {}};
  loop.repin();
  const Index cap =
      opts.max_iterations > 0 ? opts.max_iterations : 100 * (prob.cons.rows() + prob.n());

  KktPoint out;
  double best_f = prob.objective(x);
  VectorXd best_x = x;
  for (iter = 1; iter <= cap; ++iter) {
    detail::SphereStep step = loop.iterate();
    const double f = prob.objective(x);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
    if (step == detail::SphereStep::Continue) continue;
    out.x = x;
    out.kappa = loop.last_check.kappa;
    out.mu = loop.last_check.mu;
    out.iterations = iter;
    out.objective = f;
    out.status = step == detail::SphereStep::Optimal ? SolveStatus::Optimal
                                                     : SolveStatus::LicqFailure;
    if (step == detail::SphereStep::Licq) {
      out.x = best_x;
      out.objective = best_f;
    }
    out.error = kkt_error(prob, out.x, out.kappa, out.mu);
    out.kkt_residual = out.error.overall();
    return out;
  }
  out.x = best_x;
  out.kappa = loop.last_check.kappa;
  out.mu = loop.last_check.mu;
  out.iterations = static_cast<int>(cap);
  out.objective = best_f;
  out.status = SolveStatus::IterationCap;
  out.error = kkt_error(prob, out.x, out.kappa, out.mu);
  out.kkt_residual = out.error.overall();
  return out;
}

}  // namespace normqp
