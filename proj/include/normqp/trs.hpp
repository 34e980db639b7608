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
// Equality-constrained trust-region subproblems on the sphere: global
// minimizer(s), hard-case resolution, and detection/extraction of the unique
// second-order-sufficient local-nonglobal minimizer from the two rightmost
// eigenpairs of a structured 2n×2n eigenproblem.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <utility>
#include <vector>

#include "normqp/common.hpp"
#include "normqp/numerics.hpp"

namespace normqp {

struct TrsTolerances {
  /// Relative ‖z₁‖/‖z‖ below which an eigenvector signals the hard case.
  double hard_case_tol = 1e-7;
  double spectrum_tol = 1e-6;
  double simple_tol = 1e-6;
  double imag_tol = 1e-8;
  /// Interior detection (ball mode): strict μᵍ < −interior_mu_tol.
  double interior_mu_tol = 1e-9;
  double feas_tol = 1e-9;
  double rank_tol = 1e-10;
  double arnoldi_tol = 1e-10;
  /// Problems with 2n below this use the dense eigensolver directly.
  Index dense_threshold = 80;
  bool force_dense = false;
  /// Test hook: overrides the computed spectral shift.
  std::optional<double> shift_override;
};

/// min ½xᵀPx + qᵀx subject to ‖x‖₂ = r (or ≤ r when boundary_only is false)
/// and A x = b with A full row rank, n − m > 1.
struct TrsProblem {
  LinearOperator p;
  VectorXd q;
  double r = 1.0;
  MatrixXd a;  // 0×n when absent
  VectorXd b;
  bool boundary_only = true;

  TrsProblem() = default;
  TrsProblem(LinearOperator p_in, VectorXd q_in, double r_in)
      : p(std::move(p_in)), q(std::move(q_in)), r(r_in), a(0, p.dim()), b(0) {}
  TrsProblem(LinearOperator p_in, VectorXd q_in, double r_in, MatrixXd a_in, VectorXd b_in)
      : p(std::move(p_in)), q(std::move(q_in)), r(r_in), a(std::move(a_in)), b(std::move(b_in)) {}
};

enum class TrsKind { UniqueGlobal, HardCasePair, GlobalAndLocal, InteriorGlobal };

inline const char* to_string(TrsKind k) {
  switch (k) {
    case TrsKind::UniqueGlobal: return "UniqueGlobal";
    case TrsKind::HardCasePair: return "HardCasePair";
    case TrsKind::GlobalAndLocal: return "GlobalAndLocal";
    case TrsKind::InteriorGlobal: return "InteriorGlobal";
  }
  return "?";
}

struct TrsDiagnostics {
  double eig_residual_global = 0;
  double eig_residual_second = 0;
  double stationarity_global = 0;
  double stationarity_local = 0;
  double z1_fraction = 0;  // ‖z₁‖/‖z‖ of the rightmost eigenvector
  bool hard_case = false;
  bool dense_path = true;
};

struct TrsOutcome {
  TrsKind kind = TrsKind::UniqueGlobal;
  std::vector<VectorXd> global_points;
  double global_multiplier = 0;
  std::optional<VectorXd> local_point;
  std::optional<double> local_multiplier;
  double shift_used = 0;
  /// Objective offset −α r²/2 between the shifted and original problems.
  double objective_constant = 0;
  TrsDiagnostics diag;

  std::vector<VectorXd> minimizers() const {
    std::vector<VectorXd> out = global_points;
    if (local_point) out.push_back(*local_point);
    return out;
  }
};

/// The secular function s(μ) = Σ (wᵢᵀq)²/(λᵢ+μ)² − r² built from a dense
/// spectral decomposition of the (reduced) Hessian.
struct SecularFn {
  VectorXd lambdas;  // ascending
  VectorXd weights;  // (wᵢᵀq)²
  double radius = 1.0;
  double pole_tol = 1e-12;

  static SecularFn from_dense(const MatrixXd& p, const VectorXd& q, double r) {
    SymEig eig = sym_eig_dense(p);
    SecularFn f;
    f.lambdas = eig.values;
    f.weights = (eig.vectors.transpose() * q).array().square();
    f.radius = r;
    return f;
  }

  double pole_scale() const { return std::max(1.0, lambdas.cwiseAbs().maxCoeff()); }

  bool at_pole(std::complex<double> mu) const {
    for (Index i = 0; i < lambdas.size(); ++i)
      if (weights(i) > 0 && std::abs(std::complex<double>(lambdas(i), 0) + mu) <=
                                pole_tol * pole_scale())
        return true;
    return false;
  }

  std::complex<double> eval(std::complex<double> mu) const {
    if (at_pole(mu)) throw InvalidArgument("secular_eval: mu coincides with a pole");
    std::complex<double> s(-radius * radius, 0);
    for (Index i = 0; i < lambdas.size(); ++i) {
      const std::complex<double> d = std::complex<double>(lambdas(i), 0) + mu;
      s += weights(i) / (d * d);
    }
    return s;
  }

  double eval(double mu) const { return eval(std::complex<double>(mu, 0)).real(); }

  double deriv(double mu) const {
    if (at_pole(mu)) throw InvalidArgument("secular_deriv: mu coincides with a pole");
    double s = 0;
    for (Index i = 0; i < lambdas.size(); ++i) {
      const double d = lambdas(i) + mu;
      s -= 2.0 * weights(i) / (d * d * d);
    }
    return s;
  }
};

inline std::complex<double> secular_eval(const SecularFn& f, std::complex<double> mu) {
  return f.eval(mu);
}
inline double secular_deriv(const SecularFn& f, double mu) { return f.deriv(mu); }

/// Result of moving the equality constraints' offset into the origin:
/// x = x₀ + x̃ with A x₀ = b, x₀ ⊥ N(A), A x̃ = 0, ‖x̃‖ = r̃.
struct Translation {
  VectorXd x0;
  double r_reduced = 0;
  VectorXd q_reduced;
  /// The sphere touches the affine set in exactly one point (‖x₀‖ = r).
  bool degenerate_point = false;
};

inline Translation translate_inhomogeneous(const MatrixXd& a, const VectorXd& b,
                                           const LinearOperator& p, const VectorXd& q, double r,
                                           double feas_tol = 1e-9) {
  Translation t;
  const Index n = p.dim();
  if (a.rows() == 0 || b.size() == 0 || b.norm() == 0.0) {
    t.x0 = VectorXd::Zero(n);
    t.r_reduced = r;
    t.q_reduced = q;
    return t;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(a);
  t.x0 = cod.solve(b);
  const double norm0 = t.x0.norm();
  if (norm0 > r * (1.0 + feas_tol) + feas_tol)
    throw InfeasibleError("sphere incompatible with equalities: min-norm solution has norm " +
                          std::to_string(norm0) + " > r = " + std::to_string(r));
  if (std::abs(norm0 - r) <= feas_tol * std::max(1.0, r)) {
    t.degenerate_point = true;
    t.r_reduced = 0;
    t.q_reduced = q + p(t.x0);
    return t;
  }
  t.r_reduced = std::sqrt(std::max(0.0, r * r - norm0 * norm0));
  t.q_reduced = q + p(t.x0);
  return t;
}

struct Shift {
  double alpha = 0;
  double objective_constant = 0;  // −α r²/2
};

/// α such that P − αI is negative definite (a Gershgorin/Lanczos upper bound
/// plus margin); also records the objective offset −αr²/2.
inline Shift shift_negative_definite(const LinearOperator& p, double r,
                                     const std::optional<double>& override = std::nullopt) {
  Shift s;
  s.alpha = override ? *override : spectral_upper_bound(p) + 1e-3;
  s.objective_constant = -0.5 * s.alpha * r * r;
  return s;
}

/// Operator v ↦ Π₂(M_α · Π₂(v)) of dimension 2n, where M_α is the paper's
/// matrix with P − αI blocks and the rank-one block applied as q·(qᵀz₂)/r².
inline LinearOperator build_m_operator(const LinearOperator& p, const VectorXd& q, double r,
                                       const NullspaceProjector& proj, double alpha) {
  const Index n = p.dim();
  const double inv_r2 = 1.0 / (r * r);
  LinearOperator pc = p;  // capture by value; operators are immutable
  NullspaceProjector prc = proj;
  VectorXd qc = q;
  return LinearOperator(
      2 * n, [pc, prc, qc, alpha, inv_r2, n](const Eigen::Ref<const VectorXd>& v,
                                             Eigen::Ref<VectorXd> out) {
        VectorXd z1 = prc(v.head(n));
        VectorXd z2 = prc(v.tail(n));
        VectorXd top = -(pc(z1) - alpha * z1) + qc * (qc.dot(z2) * inv_r2);
        VectorXd bottom = z1 - (pc(z2) - alpha * z2);
        out.head(n) = prc(top);
        out.tail(n) = prc(bottom);
      });
}

namespace detail {

/// Rotates a complex vector by the global phase maximizing its real part and
/// returns the real part plus the relative leftover imaginary mass.
inline std::pair<VectorXd, double> rotate_to_real(const VectorXcd& z) {
  std::complex<double> c(0, 0);
  for (Index i = 0; i < z.size(); ++i) c += z(i) * z(i);
  const double theta = std::abs(c) > 0 ? -0.5 * std::arg(c) : 0.0;
  VectorXcd zr = std::polar(1.0, theta) * z;
  const double imag_resid = zr.imag().norm() / std::max(zr.norm(), 1e-300);
  return {VectorXd(zr.real()), imag_resid};
}

inline double sign_nonzero(double t) { return t >= 0 ? 1.0 : -1.0; }

}  // namespace detail

/// Result of applying the eigenvector-to-minimizer formula. `x` is absent when
/// ‖z₁‖ falls below the hard-case threshold.
struct Extraction {
  std::optional<VectorXd> x;
  double z1_fraction = 0;
  VectorXd z1;
  VectorXd z2;
  double imag_residual = 0;
};

inline Extraction extract_minimizer(const VectorXcd& z, const VectorXd& q, double r,
                                    double hard_case_tol = 1e-7) {
  const Index n = z.size() / 2;
  auto [zr, imag_resid] = detail::rotate_to_real(z);
  Extraction e;
  e.z1 = zr.head(n);
  e.z2 = zr.tail(n);
  e.imag_residual = imag_resid;
  const double zn = std::max(zr.norm(), 1e-300);
  e.z1_fraction = e.z1.norm() / zn;
  if (e.z1_fraction <= hard_case_tol) return e;  // hard-case signal
  e.x = -detail::sign_nonzero(q.dot(e.z2)) * r * e.z1 / e.z1.norm();
  return e;
}

/// Hard-case construction: minimum-length solution of (P + μᵍI)x = −q on the
/// constraint nullspace, then the two sphere intersections along the kernel
/// direction z₂.
inline std::pair<VectorXd, VectorXd> hard_case_solutions(const LinearOperator& p, double mu_g,
                                                         const VectorXd& q, const VectorXd& z2,
                                                         const NullspaceProjector& proj, double r,
                                                         const TrsTolerances& tols = {}) {
  const Index n = p.dim();
  LinearOperator shifted(n,
                         [p, mu_g](const Eigen::Ref<const VectorXd>& v, Eigen::Ref<VectorXd> out) {
                           out = p(v) + mu_g * v;
                         });
  MinLengthOptions ml;
  ml.tol = 1e-10;
  const NullspaceProjector* pr = proj.is_identity() ? nullptr : &proj;
  VectorXd x_min = min_length_solve(shifted, -q, pr, ml);
  VectorXd dir = z2.norm() > 0 ? VectorXd(z2.normalized()) : z2;
  // Remove any residual kernel share already present in x_min.
  x_min -= x_min.dot(dir) * dir;
  const double c = x_min.squaredNorm() - r * r;
  const double disc = -c;  // ‖x_min + αd‖² = r² with x_min ⊥ d
  if (disc < -tols.feas_tol * std::max(1.0, r * r))
    throw InternalError("hard_case_solutions: sphere/subspace intersection is empty");
  const double alpha = std::sqrt(std::max(0.0, disc));
  return {x_min + alpha * dir, x_min - alpha * dir};
}

namespace detail {

struct RightmostPairs {
  std::vector<EigPair> pairs;  // sorted by (Re desc, Im desc)
  bool dense_path = true;
};

/// Eigenpairs of the (projected, shifted) M with the largest real parts.
/// Dense route filters the artificial zero eigenvalues introduced by the
/// projection through their range test.
inline RightmostPairs rightmost_of_m(const LinearOperator& p, const VectorXd& q, double r,
                                     const NullspaceProjector& proj, double alpha,
                                     const TrsTolerances& tols, Index want) {
  const Index n = p.dim();
  RightmostPairs out;
  const bool dense = tols.force_dense || 2 * n <= tols.dense_threshold;
  if (!dense) {
    LinearOperator op = build_m_operator(p, q, r, proj, alpha);
    VectorXd start(2 * n);
    start.head(n) = VectorXd::Ones(n) + q;
    start.tail(n) = VectorXd::Ones(n) - q;
    start.head(n) = proj(start.head(n));
    start.tail(n) = proj(start.tail(n));
    if (start.norm() < 1e-12) start = VectorXd::Ones(2 * n);
    ArnoldiOptions ao;
    ao.tol = tols.arnoldi_tol;
    try {
      out.pairs = arnoldi_rightmost(op, want, start, ao);
      out.dense_path = false;
      return out;
    } catch (const ArnoldiNotConverged&) {
      // fall through to the dense route
    }
  }
  MatrixXd pd = p.to_dense();
  MatrixXd m = MatrixXd::Zero(2 * n, 2 * n);
  m.topLeftCorner(n, n) = -(pd - alpha * MatrixXd::Identity(n, n));
  m.topRightCorner(n, n) = q * q.transpose() / (r * r);
  m.bottomLeftCorner(n, n) = MatrixXd::Identity(n, n);
  m.bottomRightCorner(n, n) = m.topLeftCorner(n, n);
  if (!proj.is_identity()) {
    MatrixXd pdense = proj.dense();
    MatrixXd blk = MatrixXd::Zero(2 * n, 2 * n);
    blk.topLeftCorner(n, n) = pdense;
    blk.bottomRightCorner(n, n) = pdense;
    m = blk * m * blk;
  }
  Eigen::EigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw InternalError("solve_trs: dense eigensolver failed");
  const double mnorm = std::max(m.norm(), 1e-300);
  std::vector<EigPair> all;
  for (Index i = 0; i < 2 * n; ++i) {
    EigPair pr;
    pr.value = es.eigenvalues()(i);
    pr.vector = es.eigenvectors().col(i);
    if (!proj.is_identity()) {
      VectorXcd v = pr.vector;
      VectorXcd projected(2 * n);
      projected.head(n) = proj(VectorXd(v.head(n).real())) +
                          std::complex<double>(0, 1) * proj(VectorXd(v.head(n).imag()));
      projected.tail(n) = proj(VectorXd(v.tail(n).real())) +
                          std::complex<double>(0, 1) * proj(VectorXd(v.tail(n).imag()));
      const double frac = projected.norm() / std::max(v.norm(), 1e-300);
      if (std::abs(pr.value) <= 1e-8 * mnorm && frac < 0.5) continue;  // artificial zero
      pr.vector = projected / projected.norm();
    }
    pr.residual = (VectorXcd(m * pr.vector) - pr.value * pr.vector).norm();
    all.push_back(std::move(pr));
  }
  std::sort(all.begin(), all.end(), [](const EigPair& a, const EigPair& b) {
    if (a.value.real() != b.value.real()) return a.value.real() > b.value.real();
    return a.value.imag() > b.value.imag();
  });
  if (static_cast<Index>(all.size()) > want + 1) all.resize(want + 1);
  out.pairs = std::move(all);
  out.dense_path = true;
  return out;
}

}  // namespace detail

/// Decides whether the second-rightmost eigenpair yields the local-nonglobal
/// minimizer: requires a real, simple second eigenvalue outside the spectrum
/// of −P (signalled by ‖z₁‖ above the hard-case threshold), and no hard case.
/// Values are in the shifted frame; `third_value` feeds the simplicity test.
inline std::optional<std::pair<VectorXd, double>> classify_local_nonglobal(
    const EigPair& second, std::optional<std::complex<double>> third_value, bool hard_case,
    const VectorXd& q, double r, double alpha, const TrsTolerances& tols) {
  if (hard_case) return std::nullopt;
  const double scale = std::max(1.0, std::abs(second.value));
  if (std::abs(second.value.imag()) > tols.imag_tol * scale) return std::nullopt;
  if (third_value &&
      std::abs(second.value - *third_value) <= tols.simple_tol * scale)
    return std::nullopt;
  Extraction e = extract_minimizer(second.vector, q, r, tols.hard_case_tol);
  if (!e.x) return std::nullopt;  // μ₂ in the spectrum of −P
  return std::make_pair(*e.x, second.value.real() - alpha);
}

/// Full pipeline: translation, shift, projected rightmost eigenpairs, global
/// extraction or hard-case resolution, local-nonglobal classification,
/// un-shift and un-translation. Ball-mode problems with μᵍ < 0 return the
/// interior Newton point instead.
inline TrsOutcome solve_trs(const TrsProblem& prob, const TrsTolerances& tols = {}) {
  const Index n = prob.p.dim();
  const Index m = prob.a.rows();
  if (prob.r <= 0) throw InvalidArgument("solve_trs: radius must be positive");
  if (prob.q.size() != n) throw InvalidArgument("solve_trs: q has wrong length");
  if (m > 0 && prob.a.cols() != n) throw InvalidArgument("solve_trs: A has wrong width");
  if (n - m <= 1)
    throw InvalidArgument("solve_trs: requires n - m > 1 (feasible set must be a manifold)");

  NullspaceProjector proj =
      m > 0 ? NullspaceProjector(prob.a, tols.rank_tol) : NullspaceProjector::identity(n);

  Translation tr = translate_inhomogeneous(prob.a, prob.b, prob.p, prob.q, prob.r, tols.feas_tol);
  TrsOutcome out;
  if (tr.degenerate_point) {
    out.kind = TrsKind::UniqueGlobal;
    out.global_points = {tr.x0};
    out.global_multiplier = 0;
    return out;
  }
  const double r_eff = tr.r_reduced;
  const VectorXd& q_eff = tr.q_reduced;

  Shift shift = shift_negative_definite(prob.p, r_eff, tols.shift_override);
  out.shift_used = shift.alpha;
  out.objective_constant = shift.objective_constant;

  detail::RightmostPairs rp =
      detail::rightmost_of_m(prob.p, q_eff, r_eff, proj, shift.alpha, tols, 3);
  if (rp.pairs.empty()) throw InternalError("solve_trs: eigensolver returned no pairs");
  out.diag.dense_path = rp.dense_path;
  const EigPair& top = rp.pairs[0];
  out.diag.eig_residual_global = top.residual;

  Extraction eg = extract_minimizer(top.vector, q_eff, r_eff, tols.hard_case_tol);
  out.diag.z1_fraction = eg.z1_fraction;
  const bool hard_case = !eg.x.has_value();
  out.diag.hard_case = hard_case;
  const double mu_g = top.value.real() - shift.alpha;
  out.global_multiplier = mu_g;

  if (!prob.boundary_only && mu_g < -tols.interior_mu_tol) {
    // Interior solution of the ball problem: P is PSD on the nullspace, solve
    // the projected Newton system through a nullspace basis.
    MatrixXd z = m > 0 ? nullspace_basis(prob.a, tols.rank_tol) : MatrixXd::Identity(n, n);
    MatrixXd pd = prob.p.to_dense();
    MatrixXd h = z.transpose() * pd * z;
    VectorXd rhs = -(z.transpose() * (prob.q + pd * tr.x0));
    Eigen::JacobiSVD<MatrixXd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double cutoff = 1e-12 * std::max(sv.size() ? sv(0) : 0.0, 1e-300);
    VectorXd coeff = svd.matrixU().transpose() * rhs;
    for (Index i = 0; i < sv.size(); ++i) coeff(i) = sv(i) > cutoff ? coeff(i) / sv(i) : 0.0;
    VectorXd x = tr.x0 + z * (svd.matrixV() * coeff);
    out.kind = TrsKind::InteriorGlobal;
    out.global_points = {x};
    out.global_multiplier = 0;
    return out;
  }

  if (hard_case) {
    auto [xa, xb] = hard_case_solutions(prob.p, mu_g, q_eff, eg.z2, proj, r_eff, tols);
    out.kind = TrsKind::HardCasePair;
    out.global_points = {xa + tr.x0, xb + tr.x0};
    VectorXd res = prob.p(xa) + mu_g * xa + q_eff;
    out.diag.stationarity_global = proj(res).norm();
    return out;
  }

  out.global_points = {*eg.x + tr.x0};
  {
    VectorXd res = prob.p(*eg.x) + mu_g * (*eg.x) + q_eff;
    out.diag.stationarity_global = proj(res).norm();
  }

  if (rp.pairs.size() >= 2) {
    std::optional<std::complex<double>> third;
    if (rp.pairs.size() >= 3) third = rp.pairs[2].value;
    auto local = classify_local_nonglobal(rp.pairs[1], third, hard_case, q_eff, r_eff,
                                          shift.alpha, tols);
    out.diag.eig_residual_second = rp.pairs[1].residual;
    if (local) {
      out.kind = TrsKind::GlobalAndLocal;
      out.local_point = local->first + tr.x0;
      out.local_multiplier = local->second;
      VectorXd res = prob.p(local->first) + local->second * local->first + q_eff;
      out.diag.stationarity_local = proj(res).norm();
      return out;
    }
  }
  out.kind = TrsKind::UniqueGlobal;
  return out;
}

}  // namespace normqp
