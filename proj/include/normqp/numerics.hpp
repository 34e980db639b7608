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
// Linear-algebra substrate: operator abstraction, dense symmetric
// eigendecompositions, a rightmost-eigenpair Arnoldi iteration, nullspace
// projectors and minimum-length solves for singular symmetric systems.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "normqp/common.hpp"

namespace normqp {

using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// A real square linear map given by its action. An explicit dense matrix may
/// back the operator, in which case it is shared (operators are immutable and
/// safe to pass around by value).
class LinearOperator {
 public:
  using ApplyFn = std::function<void(const Eigen::Ref<const VectorXd>&, Eigen::Ref<VectorXd>)>;

  LinearOperator() = default;

  LinearOperator(Index dim, ApplyFn apply) : dim_(dim), apply_(std::move(apply)) {}

  static LinearOperator from_dense(MatrixXd m) {
    auto held = std::make_shared<const MatrixXd>(std::move(m));
    LinearOperator op(held->rows(),
                      [held](const Eigen::Ref<const VectorXd>& v, Eigen::Ref<VectorXd> out) {
                        out.noalias() = (*held) * v;
                      });
    op.dense_ = held;
    return op;
  }

  static LinearOperator identity(Index n) {
    return LinearOperator(
        n, [](const Eigen::Ref<const VectorXd>& v, Eigen::Ref<VectorXd> out) { out = v; });
  }

  Index dim() const { return dim_; }

  VectorXd apply(const Eigen::Ref<const VectorXd>& v) const {
    if (v.size() != dim_) throw InvalidArgument("operator applied to vector of wrong length");
    VectorXd out(dim_);
    apply_(v, out);
    return out;
  }

  VectorXd operator()(const Eigen::Ref<const VectorXd>& v) const { return apply(v); }

  /// Complex vectors are applied componentwise to real and imaginary parts;
  /// the operator itself is always real.
  VectorXcd apply_complex(const VectorXcd& v) const {
    VectorXd re = apply(VectorXd(v.real()));
    VectorXd im = apply(VectorXd(v.imag()));
    return re + std::complex<double>(0, 1) * im;
  }

  bool has_dense() const { return dense_ != nullptr; }

  const MatrixXd& dense_ref() const {
    if (!dense_) throw InternalError("operator has no dense backing");
    return *dense_;
  }

  /// Assembles the matrix by applying the operator to basis vectors.
  MatrixXd to_dense() const {
    if (dense_) return *dense_;
    MatrixXd out(dim_, dim_);
    VectorXd e = VectorXd::Zero(dim_);
    for (Index j = 0; j < dim_; ++j) {
      e(j) = 1.0;
      out.col(j) = apply(e);
      e(j) = 0.0;
    }
    return out;
  }

 private:
  Index dim_ = 0;
  ApplyFn apply_;
  std::shared_ptr<const MatrixXd> dense_;
};

/// One converged eigenpair of a real operator. Complex pairs arise only as
/// conjugate pairs; `residual` is the true residual ‖op(v) − λv‖₂.
struct EigPair {
  std::complex<double> value;
  VectorXcd vector;  // unit 2-norm
  double residual = 0;
};

/// Full spectral decomposition of a symmetric matrix. Eigenvalues ascending,
/// eigenvector columns orthonormal.
struct SymEig {
  VectorXd values;
  MatrixXd vectors;
};

/// Spectral decomposition of a symmetric matrix via Eigen's self-adjoint
/// solver. Rejects matrices that are not symmetric within `sym_tol` relative
/// to their norm.
inline SymEig sym_eig_dense(const MatrixXd& p, double sym_tol = 1e-10) {
  if (p.rows() != p.cols()) throw InvalidArgument("sym_eig_dense: matrix not square");
  const double scale = std::max(1.0, p.norm());
  const double asym = (p - p.transpose()).norm();
  if (asym > sym_tol * scale)
    throw InvalidArgument("sym_eig_dense: matrix not symmetric, ||P - P^T|| = " +
                          std::to_string(asym));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (p + p.transpose()));
  if (es.info() != Eigen::Success) throw InternalError("sym_eig_dense: eigensolver failed");
  return SymEig{es.eigenvalues(), es.eigenvectors()};
}

/// Strict upper bound on the largest eigenvalue of a symmetric matrix
/// (Gershgorin row bound plus a margin).
inline double spectral_upper_bound(const MatrixXd& p) {
  double g = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < p.rows(); ++i) {
    double row = p(i, i);
    for (Index j = 0; j < p.cols(); ++j)
      if (j != i) row += std::abs(p(i, j));
    g = std::max(g, row);
  }
  if (p.rows() == 0) g = 0.0;
  return g + 1e-6 * std::max(1.0, std::abs(g));
}

/// Upper-bound estimate for a symmetric operator without entry access: a short
/// Lanczos run plus generous slack. Uses the exact Gershgorin bound when the
/// operator carries a dense backing.
inline double spectral_upper_bound(const LinearOperator& op) {
  if (op.has_dense()) return spectral_upper_bound(op.dense_ref());
  const Index n = op.dim();
  if (n == 0) return 1e-6;
  const Index steps = std::min<Index>(n, 30);
  VectorXd v = VectorXd::Ones(n).normalized();
  VectorXd v_prev = VectorXd::Zero(n);
  VectorXd alpha(steps), beta(steps);
  double beta_last = 0;
  Index k = 0;
  for (; k < steps; ++k) {
    VectorXd w = op(v);
    alpha(k) = v.dot(w);
    w -= alpha(k) * v;
    if (k > 0) w -= beta(k - 1) * v_prev;
    beta_last = w.norm();
    if (k + 1 < steps) beta(k) = beta_last;
    if (beta_last < 1e-14) {
      ++k;
      break;
    }
    v_prev = v;
    v = w / beta_last;
  }
  MatrixXd t = MatrixXd::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    t(i, i) = alpha(i);
    if (i + 1 < k) t(i, i + 1) = t(i + 1, i) = beta(i);
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(t);
  const double tmax = es.eigenvalues().maxCoeff();
  const double tmin = es.eigenvalues().minCoeff();
  const double span = std::max(tmax - tmin, 1.0);
  return tmax + beta_last + 0.25 * span + 1e-6;
}

/// Orthogonal projector onto the nullspace of a full-row-rank matrix A,
/// realized as v ↦ v − Q₁(Q₁ᵀv) with Q₁ an orthonormal basis of range(Aᵀ).
class NullspaceProjector {
 public:
  static NullspaceProjector identity(Index n) {
    NullspaceProjector p;
    p.n_ = n;
    p.basis_ = MatrixXd(n, 0);
    return p;
  }

  /// Throws InvalidArgument if A is rank deficient within `rank_tol`
  /// (relative to the largest factor diagonal).
  NullspaceProjector(const MatrixXd& a, double rank_tol = 1e-10) {
    n_ = a.cols();
    const Index m = a.rows();
    if (m == 0) {
      basis_ = MatrixXd(n_, 0);
      return;
    }
    if (m >= n_) throw InvalidArgument("nullspace_projector: need m < n");
    Eigen::ColPivHouseholderQR<MatrixXd> qr(a.transpose());
    qr.setThreshold(rank_tol);
    if (qr.rank() < m)
      throw InvalidArgument("nullspace_projector: A is rank deficient (rank " +
                            std::to_string(qr.rank()) + " of " + std::to_string(m) + ")");
    basis_ = qr.householderQ() * MatrixXd::Identity(n_, m);
  }

  Index dim() const { return n_; }
  Index corank() const { return basis_.cols(); }
  bool is_identity() const { return basis_.cols() == 0; }

  /// Orthonormal basis of range(Aᵀ) (n × m).
  const MatrixXd& range_basis() const { return basis_; }

  VectorXd apply(const Eigen::Ref<const VectorXd>& v) const {
    if (is_identity()) return v;
    return v - basis_ * (basis_.transpose() * v);
  }

  VectorXd operator()(const Eigen::Ref<const VectorXd>& v) const { return apply(v); }

  MatrixXd dense() const {
    return MatrixXd::Identity(n_, n_) - basis_ * basis_.transpose();
  }

  LinearOperator as_operator() const {
    NullspaceProjector copy = *this;
    return LinearOperator(n_,
                          [copy](const Eigen::Ref<const VectorXd>& v, Eigen::Ref<VectorXd> out) {
                            out = copy.apply(v);
                          });
  }

 private:
  NullspaceProjector() = default;
  Index n_ = 0;
  MatrixXd basis_;
};

inline NullspaceProjector nullspace_projector(const MatrixXd& a, double rank_tol = 1e-10) {
  if (a.rows() == 0) return NullspaceProjector::identity(a.cols());
  return NullspaceProjector(a, rank_tol);
}

/// Orthonormal basis Z of the nullspace of a full-row-rank A (n × (n−m)).
inline MatrixXd nullspace_basis(const MatrixXd& a, double rank_tol = 1e-10) {
  const Index n = a.cols();
  const Index m = a.rows();
  if (m == 0) return MatrixXd::Identity(n, n);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(a.transpose());
  qr.setThreshold(rank_tol);
  if (qr.rank() < m) throw InvalidArgument("nullspace_basis: A is rank deficient");
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, n);
  return q.rightCols(n - m);
}

struct MinLengthOptions {
  double tol = 1e-10;
  /// Relative singular-value cutoff separating the kernel.
  double kernel_tol = 1e-8;
  /// Below this dimension the system is assembled and solved by SVD.
  Index dense_threshold = 400;
  Index max_iterations = 0;  // 0: 10·dim
};

/// Minimum-length solution of op(x) = Π(rhs) for a symmetric, possibly
/// singular operator restricted to range(Π). The result lies in range(Π) and
/// is orthogonal to the kernel of the restricted operator. Dense SVD below
/// `dense_threshold`, projected conjugate gradients above (the Krylov space of
/// a consistent system never leaves the range, which yields the minimum-length
/// solution directly). Throws InconsistentSystem when the residual cannot be
/// driven below tol·‖rhs‖.
inline VectorXd min_length_solve(const LinearOperator& op, const VectorXd& rhs,
                                 const NullspaceProjector* proj = nullptr,
                                 const MinLengthOptions& opts = {}) {
  const Index n = op.dim();
  if (rhs.size() != n) throw InvalidArgument("min_length_solve: rhs has wrong length");
  const VectorXd prhs = proj ? proj->apply(rhs) : rhs;
  const double rhs_norm = prhs.norm();
  auto apply_proj_op = [&](const VectorXd& v) {
    VectorXd w = proj ? proj->apply(v) : v;
    w = op(w);
    return proj ? proj->apply(w) : w;
  };
  if (rhs_norm <= 1e-14 * std::max(1.0, rhs.norm())) return VectorXd::Zero(n);

  if (n <= opts.dense_threshold) {
    MatrixXd b = op.to_dense();
    if (proj && !proj->is_identity()) {
      MatrixXd pd = proj->dense();
      b = pd * b * pd;
    }
    Eigen::JacobiSVD<MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double cutoff = opts.kernel_tol * std::max(sv.size() ? sv(0) : 0.0, 1e-300);
    VectorXd coeff = svd.matrixU().transpose() * prhs;
    for (Index i = 0; i < sv.size(); ++i) coeff(i) = sv(i) > cutoff ? coeff(i) / sv(i) : 0.0;
    VectorXd x = svd.matrixV() * coeff;
    const double resid = (apply_proj_op(x) - prhs).norm();
    if (resid > opts.tol * rhs_norm * 100)
      throw InconsistentSystem(
          "min_length_solve: system inconsistent, residual " + std::to_string(resid), resid);
    return x;
  }

  // Projected CG; assumes the restricted operator is positive semidefinite,
  // which holds for the hard-case systems P + μᵍI this path serves.
  VectorXd x = VectorXd::Zero(n);
  VectorXd r = prhs;
  VectorXd p = r;
  double rr = r.squaredNorm();
  const Index cap = opts.max_iterations > 0 ? opts.max_iterations : 10 * n;
  for (Index it = 0; it < cap && std::sqrt(rr) > opts.tol * rhs_norm; ++it) {
    VectorXd w = apply_proj_op(p);
    const double curv = p.dot(w);
    if (curv <= 1e-14 * p.squaredNorm()) break;  // kernel direction: stop
    const double step = rr / curv;
    x += step * p;
    r -= step * w;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  const double resid = (apply_proj_op(x) - prhs).norm();
  if (resid > opts.tol * rhs_norm * 10)
    throw InconsistentSystem("min_length_solve: no convergence, residual " + std::to_string(resid),
                             resid);
  return x;
}

struct ArnoldiOptions {
  double tol = 1e-10;
  int max_restarts = 10;
  Index subspace = 0;  // 0: min(dim, max(20, 4k))
  uint64_t seed = 0x9e3779b97f4a7c15ull;
};

namespace detail {

inline bool real_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1.0});
}

}  // namespace detail

/// Rightmost eigenpairs of a real operator by an explicitly restarted Arnoldi
/// iteration. Returns at least k pairs sorted by descending real part; when
/// the k-th and (k+1)-th pair form a complex-conjugate tie in real part, both
/// members are reported. The subspace grows 1.5× per restart up to dim, so the
/// iteration is exact once the Krylov space fills the whole space. Throws
/// ArnoldiNotConverged after the restart cap.
inline std::vector<EigPair> arnoldi_rightmost(const LinearOperator& op, Index k,
                                              const VectorXd& start,
                                              const ArnoldiOptions& opts = {}) {
  const Index n = op.dim();
  if (k < 1 || k > n) throw InvalidArgument("arnoldi_rightmost: need 1 <= k <= dim");
  if (start.size() != n || start.norm() == 0.0)
    throw InvalidArgument("arnoldi_rightmost: start vector must be nonzero of length dim");

  std::mt19937_64 eng(opts.seed);
  auto rand_unit = [&](Index len) {
    VectorXd v(len);
    for (Index i = 0; i < len; ++i)
      v(i) = std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
    return VectorXd(v.normalized());
  };

  Index s = opts.subspace > 0 ? std::min(opts.subspace, n) : std::min(n, std::max<Index>(20, 4 * k));
  VectorXd v0 = start.normalized();

  for (int restart = 0; restart <= opts.max_restarts; ++restart) {
    MatrixXd basis(n, s + 1);
    MatrixXd hess = MatrixXd::Zero(s + 1, s);
    basis.col(0) = v0;
    Index built = s;
    double scale = 0;
    for (Index j = 0; j < s; ++j) {
      VectorXd w = op(basis.col(j));
      for (int pass = 0; pass < 2; ++pass) {
        for (Index i = 0; i <= j; ++i) {
          const double h = basis.col(i).dot(w);
          w -= h * basis.col(i);
          hess(i, j) += h;
        }
      }
      const double hn = w.norm();
      scale = std::max(scale, hess.col(j).head(j + 1).cwiseAbs().maxCoeff());
      if (hn <= 1e-13 * std::max(scale, 1.0)) {
        // Invariant subspace: continue with a fresh direction so the
        // factorization keeps growing (block-triangular Hessenberg).
        hess(j + 1, j) = 0.0;
        if (j + 1 < s) {
          VectorXd f = rand_unit(n);
          for (int pass = 0; pass < 2; ++pass)
            for (Index i = 0; i <= j; ++i) f -= basis.col(i).dot(f) * basis.col(i);
          const double fn = f.norm();
          if (fn <= 1e-10) {
            built = j + 1;
            break;
          }
          basis.col(j + 1) = f / fn;
        }
        continue;
      }
      hess(j + 1, j) = hn;
      basis.col(j + 1) = w / hn;
    }

    const MatrixXd hs = hess.topLeftCorner(built, built);
    Eigen::EigenSolver<MatrixXd> es(hs);
    if (es.info() != Eigen::Success) throw InternalError("arnoldi: Hessenberg eigensolver failed");
    const VectorXcd thetas = es.eigenvalues();
    const Eigen::MatrixXcd ritz = es.eigenvectors();

    std::vector<Index> order(built);
    for (Index i = 0; i < built; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (thetas(a).real() != thetas(b).real()) return thetas(a).real() > thetas(b).real();
      return thetas(a).imag() > thetas(b).imag();
    });

    const double beta = hess(built, built - 1);
    const double hnorm = std::max(hs.norm(), 1e-300);
    Index take = std::min(k, built);
    // Report both members of a conjugate tie at the selection boundary.
    while (take < built &&
           detail::real_close(thetas(order[take]).real(), thetas(order[take - 1]).real(), 1e-12) &&
           std::abs(thetas(order[take]).imag() + thetas(order[take - 1]).imag()) <=
               1e-12 * std::max(1.0, std::abs(thetas(order[take]).imag())) &&
           thetas(order[take]).imag() != 0.0)
      ++take;

    bool all_ok = take >= k;
    for (Index i = 0; i < take && all_ok; ++i) {
      const Index idx = order[i];
      const double est = beta * std::abs(ritz(built - 1, idx));
      const double tol_i = opts.tol * std::max(std::abs(thetas(idx)), 1e-3 * hnorm);
      if (est > tol_i) all_ok = false;
    }

    if (all_ok) {
      std::vector<EigPair> out;
      out.reserve(take);
      bool verified = true;
      for (Index i = 0; i < take; ++i) {
        const Index idx = order[i];
        VectorXcd y = basis.leftCols(built) * ritz.col(idx);
        y /= y.norm();
        VectorXcd residual = op.apply_complex(y) - thetas(idx) * y;
        const double res = residual.norm();
        const double tol_i = opts.tol * std::max(std::abs(thetas(idx)), 1e-3 * hnorm);
        if (res > 10 * tol_i) verified = false;
        out.push_back(EigPair{thetas(idx), std::move(y), res});
      }
      if (verified) return out;
    }

    // Restart from the real span of the wanted Ritz vectors.
    VectorXcd mix = VectorXcd::Zero(n);
    for (Index i = 0; i < std::min<Index>(take, built); ++i)
      mix += basis.leftCols(built) * ritz.col(order[i]);
    VectorXd next = mix.real();
    if (next.norm() <= 1e-12) next = mix.imag();
    if (next.norm() <= 1e-12) next = rand_unit(n);
    v0 = next.normalized();
    s = std::min(n, std::max(s + 1, (3 * s) / 2));
  }
  throw ArnoldiNotConverged("arnoldi_rightmost: no convergence after restart cap");
}

}  // namespace normqp
