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

#include <catch2/catch_amalgamated.hpp>

#include "normqp/trs.hpp"
#include "oracles.hpp"

using namespace normqp;

namespace {

MatrixXd diag_mat(std::initializer_list<double> d) {
  MatrixXd m = MatrixXd::Zero(d.size(), d.size());
  Index i = 0;
  for (double v : d) m(i, i) = v, ++i;
  return m;
}

TrsProblem make_problem(const MatrixXd& p, const VectorXd& q, double r) {
  return TrsProblem(LinearOperator::from_dense(p), q, r);
}

TrsProblem make_problem(const MatrixXd& p, const VectorXd& q, double r, const MatrixXd& a,
                        const VectorXd& b) {
  return TrsProblem(LinearOperator::from_dense(p), q, r, a, b);
}

double objective(const MatrixXd& p, const VectorXd& q, const VectorXd& x) {
  return 0.5 * x.dot(p * x) + q.dot(x);
}

}  // namespace

TEST_CASE("secular function values and derivative") {
  MatrixXd p = diag_mat({1, 2});
  VectorXd q(2);
  q << 1, 1;
  SecularFn s = SecularFn::from_dense(p, q, 1.0);

  REQUIRE(s.eval(0.0) == Catch::Approx(0.25));
  REQUIRE(s.eval(-3.0) == Catch::Approx(0.25));
  REQUIRE_THROWS_AS(s.eval(-1.0), InvalidArgument);  // pole at −λ₁

  // s'(μ) against the closed form −2Σ wᵢ²/(λᵢ+μ)³ and a finite difference.
  const double mu = 0.37;
  const double expect = -2.0 * (1.0 / std::pow(1 + mu, 3) + 1.0 / std::pow(2 + mu, 3));
  REQUIRE(s.deriv(mu) == Catch::Approx(expect));
  const double h = 1e-6;
  REQUIRE(s.deriv(mu) == Catch::Approx((s.eval(mu + h) - s.eval(mu - h)) / (2 * h)).margin(1e-6));
}

TEST_CASE("complex secular evaluation matches the real/imaginary split") {
  MatrixXd p = diag_mat({1, 2});
  VectorXd q(2);
  q << 1, 1;
  SecularFn s = SecularFn::from_dense(p, q, 1.0);

  const std::complex<double> at(0.0, 1.0);
  const auto val = s.eval(at);
  REQUIRE(val.real() < s.eval(0.0));  // strict, per the auxiliary lemma

  // Closed-form split: Re = −r² + Σ wᵢ²((λᵢ+a)² − b²)/((λᵢ+a)² + b²)²,
  //                    Im = −Σ wᵢ² 2(λᵢ+a)b/((λᵢ+a)² + b²)².
  const double a = 0.0, b = 1.0;
  double re = -1.0, im = 0.0;
  for (double lam : {1.0, 2.0}) {
    const double la = lam + a;
    const double den = (la * la + b * b) * (la * la + b * b);
    re += (la * la - b * b) / den;
    im -= 2.0 * la * b / den;
  }
  REQUIRE(val.real() == Catch::Approx(re));
  REQUIRE(val.imag() == Catch::Approx(im));
}

TEST_CASE("auxiliary lemma holds on random instances") {
  auto eng = oracle::rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const long n = 2 + static_cast<long>(eng() % 4);
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    SecularFn s = SecularFn::from_dense(p, q, 0.5 + std::abs(oracle::gauss(eng)));
    for (int draw = 0; draw < 20; ++draw) {
      const double a = oracle::uniform(eng, -3, 3);
      if (s.at_pole(std::complex<double>(a, 0))) continue;
      double b = oracle::uniform(eng, -2, 2);
      if (std::abs(b) < 1e-3) b = 1e-3;
      REQUIRE(s.eval(std::complex<double>(a, b)).real() < s.eval(a));
    }
  }
}

TEST_CASE("build_m_operator block structure") {
  SECTION("q = 0 makes the operator block triangular") {
    MatrixXd p = -MatrixXd::Identity(2, 2);
    VectorXd q = VectorXd::Zero(2);
    auto proj = NullspaceProjector::identity(2);
    LinearOperator op = build_m_operator(LinearOperator::from_dense(p), q, 1.0, proj, 0.0);
    MatrixXd expect(4, 4);
    expect << 1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1;
    REQUIRE((op.to_dense() - expect).norm() < 1e-14);
    auto vals = oracle::eigenvalues_sorted(op.to_dense());
    for (Index i = 0; i < 4; ++i) REQUIRE(vals(i).real() == Catch::Approx(1.0));
  }
  SECTION("outputs stay in the nullspace blocks") {
    auto eng = oracle::rng(7);
    MatrixXd a(1, 2);
    a << 1, 1;
    NullspaceProjector proj(a);
    MatrixXd p = oracle::random_symmetric(eng, 2);
    VectorXd q = oracle::gauss_vector(eng, 2);
    LinearOperator op = build_m_operator(LinearOperator::from_dense(p), q, 1.0, proj, 3.0);
    VectorXd v(4);
    const double s = 1.0 / std::sqrt(2.0);
    v << s, -s, s, -s;
    VectorXd out = op(v);
    REQUIRE(std::abs(a.row(0).dot(out.head(2))) < 1e-12);
    REQUIRE(std::abs(a.row(0).dot(out.tail(2))) < 1e-12);
  }
  SECTION("matches the densely assembled projected matrix") {
    auto eng = oracle::rng(8);
    const long n = 3;
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    MatrixXd a = oracle::gauss_matrix(eng, 1, n);
    const double r = 0.9, alpha = 2.5;
    NullspaceProjector proj(a);
    LinearOperator op = build_m_operator(LinearOperator::from_dense(p), q, r, proj, alpha);
    MatrixXd m = oracle::assemble_m(p - alpha * MatrixXd::Identity(n, n), q, r);
    MatrixXd blk = MatrixXd::Zero(2 * n, 2 * n);
    blk.topLeftCorner(n, n) = proj.dense();
    blk.bottomRightCorner(n, n) = proj.dense();
    MatrixXd pmp = blk * m * blk;
    REQUIRE((op.to_dense() - pmp).norm() < 1e-12 * std::max(1.0, pmp.norm()));
  }
}

TEST_CASE("shift makes the Hessian negative definite") {
  SECTION("already negative definite") {
    Shift s = shift_negative_definite(LinearOperator::from_dense(-MatrixXd::Identity(2, 2)), 1.0);
    MatrixXd shifted = -MatrixXd::Identity(2, 2) - s.alpha * MatrixXd::Identity(2, 2);
    REQUIRE(sym_eig_dense(shifted).values.maxCoeff() < 0);
    REQUIRE(s.objective_constant == Catch::Approx(-0.5 * s.alpha));
  }
  SECTION("diag(1,2) needs alpha beyond 2") {
    Shift s = shift_negative_definite(LinearOperator::from_dense(diag_mat({1, 2})), 1.0);
    REQUIRE(s.alpha > 2.0);
  }
  SECTION("random matrices") {
    auto eng = oracle::rng(9);
    for (int t = 0; t < 10; ++t) {
      const long n = 2 + static_cast<long>(eng() % 6);
      MatrixXd p = oracle::random_symmetric(eng, n);
      Shift s = shift_negative_definite(LinearOperator::from_dense(p), 1.0);
      MatrixXd shifted = p - s.alpha * MatrixXd::Identity(n, n);
      REQUIRE(sym_eig_dense(shifted).values.maxCoeff() < 0);
    }
  }
}

TEST_CASE("inhomogeneous equality translation") {
  MatrixXd p = MatrixXd::Identity(2, 2);
  LinearOperator pop = LinearOperator::from_dense(p);
  MatrixXd a(1, 2);
  a << 1, 0;
  SECTION("already homogeneous") {
    VectorXd b(1);
    b << 0;
    Translation t = translate_inhomogeneous(a, b, pop, VectorXd::Zero(2), 2.0);
    REQUIRE(t.x0.norm() == 0.0);
    REQUIRE(t.r_reduced == Catch::Approx(2.0));
  }
  SECTION("Pythagorean reduction") {
    VectorXd b(1);
    b << 3;
    Translation t = translate_inhomogeneous(a, b, pop, VectorXd::Zero(2), 5.0);
    REQUIRE(t.x0(0) == Catch::Approx(3.0));
    REQUIRE(t.x0(1) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(t.r_reduced == Catch::Approx(4.0));
    REQUIRE((t.q_reduced - p * t.x0).norm() < 1e-14);
  }
  SECTION("infeasible offset") {
    VectorXd b(1);
    b << 2;
    REQUIRE_THROWS_AS(translate_inhomogeneous(a, b, pop, VectorXd::Zero(2), 1.0),
                      InfeasibleError);
  }
  SECTION("tangent sphere leaves a single point") {
    VectorXd b(1);
    b << 1;
    Translation t = translate_inhomogeneous(a, b, pop, VectorXd::Zero(2), 1.0);
    REQUIRE(t.degenerate_point);
  }
}

TEST_CASE("minimizer extraction from eigenvectors") {
  SECTION("sign and scaling") {
    VectorXcd z(4);
    z << 1, 0, 0.4, 0.2;  // z1 = (1,0), z2 = (0.4, 0.2)
    VectorXd q(2);
    q << 1, 0;  // qᵀz2 > 0
    Extraction e = extract_minimizer(z, q, 2.0);
    REQUIRE(e.x.has_value());
    REQUIRE((*e.x)(0) == Catch::Approx(-2.0));
    REQUIRE((*e.x)(1) == Catch::Approx(0.0).margin(1e-14));
  }
  SECTION("negative inner product flips the sign") {
    VectorXcd z(4);
    z << 0, 1, -0.3, -0.1;
    VectorXd q(2);
    q << 1, 1;  // qᵀz2 < 0
    Extraction e = extract_minimizer(z, q, 1.0);
    REQUIRE(e.x.has_value());
    REQUIRE((*e.x)(0) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE((*e.x)(1) == Catch::Approx(1.0));
  }
  SECTION("rightmost eigenpair of M reproduces the known minimizer") {
    MatrixXd p = MatrixXd::Identity(2, 2);
    VectorXd q(2);
    q << -1, 0;
    MatrixXd m = oracle::assemble_m(p, q, 1.0);
    Eigen::EigenSolver<MatrixXd> es(m);
    // Analytic secular roots are {0, −2}; rightmost eigenvalue is 0.
    Index best = 0;
    for (Index i = 1; i < 4; ++i)
      if (es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
    REQUIRE(es.eigenvalues()(best).real() == Catch::Approx(0.0).margin(1e-10));
    Extraction e = extract_minimizer(es.eigenvectors().col(best), q, 1.0);
    REQUIRE(e.x.has_value());
    REQUIRE((*e.x)(0) == Catch::Approx(1.0));
    REQUIRE((*e.x)(1) == Catch::Approx(0.0).margin(1e-10));
  }
  SECTION("vanishing z1 signals the hard case") {
    VectorXcd z(4);
    z << 1e-9, 0, 1, 0;
    VectorXd q = VectorXd::Zero(2);
    Extraction e = extract_minimizer(z, q, 1.0);
    REQUIRE(!e.x.has_value());
  }
}

TEST_CASE("hard case solutions") {
  SECTION("textbook two-point hard case") {
    MatrixXd p = diag_mat({1, 2});
    VectorXd q(2);
    q << 0, 0.5;
    VectorXd z2(2);
    z2 << 1, 0;  // kernel of P − I
    auto proj = NullspaceProjector::identity(2);
    auto [xa, xb] = hard_case_solutions(LinearOperator::from_dense(p), -1.0, q, z2, proj, 1.0);
    const double root3_2 = std::sqrt(3.0) / 2.0;
    REQUIRE(std::abs(std::abs(xa(0)) - root3_2) < 1e-10);
    REQUIRE(xa(1) == Catch::Approx(-0.5));
    REQUIRE(xb(1) == Catch::Approx(-0.5));
    REQUIRE(objective(p, q, xa) == Catch::Approx(0.375));
    REQUIRE(objective(p, q, xb) == Catch::Approx(0.375));
    // Grid search confirms two global minima at f = 0.375.
    REQUIRE(oracle::circle_scan_min(p, q, 1.0) == Catch::Approx(0.375).margin(1e-5));
  }
  SECTION("pure eigenvector problem") {
    MatrixXd p = diag_mat({1, 2});
    VectorXd q = VectorXd::Zero(2);
    VectorXd z2(2);
    z2 << 1, 0;
    auto proj = NullspaceProjector::identity(2);
    auto [xa, xb] = hard_case_solutions(LinearOperator::from_dense(p), -1.0, q, z2, proj, 1.0);
    REQUIRE((xa + xb).norm() < 1e-12);
    REQUIRE(std::abs(std::abs(xa(0)) - 1.0) < 1e-12);
  }
}

TEST_CASE("solve_trs on the known instances") {
  SECTION("unique global") {
    MatrixXd p = MatrixXd::Identity(2, 2);
    VectorXd q(2);
    q << -1, 0;
    TrsOutcome out = solve_trs(make_problem(p, q, 1.0));
    REQUIRE(out.kind == TrsKind::UniqueGlobal);
    REQUIRE(out.global_points.size() == 1);
    REQUIRE(out.global_points[0](0) == Catch::Approx(1.0));
    REQUIRE(out.global_multiplier == Catch::Approx(0.0).margin(1e-9));
    // Second-rightmost eigenvalue −1 sits in the spectrum of −P: no local.
    auto mvals = oracle::eigenvalues_sorted(oracle::assemble_m(p, q, 1.0));
    REQUIRE(mvals(1).real() == Catch::Approx(-1.0).margin(1e-10));
    REQUIRE(!out.local_point.has_value());
  }
  SECTION("hard-case pair") {
    MatrixXd p = diag_mat({1, 2});
    VectorXd q(2);
    q << 0, 0.5;
    TrsOutcome out = solve_trs(make_problem(p, q, 1.0));
    REQUIRE(out.kind == TrsKind::HardCasePair);
    REQUIRE(out.global_multiplier == Catch::Approx(-1.0).margin(1e-9));
    REQUIRE(out.global_points.size() == 2);
    for (const auto& x : out.global_points) {
      REQUIRE(x.norm() == Catch::Approx(1.0));
      REQUIRE(x(1) == Catch::Approx(-0.5).margin(1e-9));
      REQUIRE(objective(p, q, x) == Catch::Approx(0.375));
    }
  }
  SECTION("hard case embedded through an equality") {
    MatrixXd p = diag_mat({1, 2, 5});
    VectorXd q(3);
    q << 0, 0.5, 0;
    MatrixXd a(1, 3);
    a << 0, 0, 1;
    VectorXd b = VectorXd::Zero(1);
    TrsOutcome out = solve_trs(make_problem(p, q, 1.0, a, b));
    REQUIRE(out.kind == TrsKind::HardCasePair);
    REQUIRE(out.global_multiplier == Catch::Approx(-1.0).margin(1e-8));
    for (const auto& x : out.global_points) {
      REQUIRE(std::abs(x(2)) < 1e-9);
      REQUIRE(x(1) == Catch::Approx(-0.5).margin(1e-8));
    }
  }
  SECTION("global plus local-nonglobal") {
    MatrixXd p = diag_mat({-1, 1});
    VectorXd q(2);
    q << 0.2, 0.2;
    TrsOutcome out = solve_trs(make_problem(p, q, 1.0));
    REQUIRE(out.kind == TrsKind::GlobalAndLocal);
    REQUIRE(out.local_point.has_value());
    const double fg = objective(p, q, out.global_points[0]);
    const double fl = objective(p, q, *out.local_point);
    REQUIRE(fg < fl);
    REQUIRE(*out.local_multiplier < out.global_multiplier);
    // Both points are strict local minima of the circle restriction.
    auto local_min_on_circle = [&](const VectorXd& x) {
      const double th = std::atan2(x(1), x(0));
      auto f = [&](double t) {
        VectorXd y(2);
        y << std::cos(t), std::sin(t);
        return objective(p, q, y);
      };
      const double d = 1e-3;
      return f(th) < f(th + d) && f(th) < f(th - d);
    };
    REQUIRE(local_min_on_circle(out.global_points[0]));
    REQUIRE(local_min_on_circle(*out.local_point));
    // The hard-case instance short-circuits the classification.
    VectorXd qh(2);
    qh << 0, 0.5;
    TrsOutcome hard = solve_trs(make_problem(diag_mat({1, 2}), qh, 1.0));
    REQUIRE(!hard.local_point.has_value());
  }
}

TEST_CASE("ball mode returns the interior solution when the multiplier is negative") {
  MatrixXd p = diag_mat({1, 2});
  VectorXd q(2);
  q << -0.1, 0;
  TrsProblem prob = make_problem(p, q, 5.0);
  prob.boundary_only = false;
  TrsOutcome out = solve_trs(prob);
  REQUIRE(out.kind == TrsKind::InteriorGlobal);
  REQUIRE(out.global_multiplier == 0.0);
  REQUIRE(out.global_points[0](0) == Catch::Approx(0.1));
  REQUIRE(out.global_points[0].norm() < 5.0);

  // With an equality: the interior Newton point must satisfy it.
  MatrixXd a(1, 3);
  a << 1, 1, 1;
  VectorXd b(1);
  b << 0.3;
  MatrixXd p3 = diag_mat({1, 2, 3});
  VectorXd q3(3);
  q3 << -0.1, 0.2, 0;
  TrsProblem prob3 = make_problem(p3, q3, 4.0, a, b);
  prob3.boundary_only = false;
  TrsOutcome out3 = solve_trs(prob3);
  REQUIRE(out3.kind == TrsKind::InteriorGlobal);
  REQUIRE(std::abs(a.row(0).dot(out3.global_points[0]) - 0.3) < 1e-9);
  VectorXd grad = p3 * out3.global_points[0] + q3;
  MatrixXd z = nullspace_basis(a);
  REQUIRE((z.transpose() * grad).norm() < 1e-8);
}

TEST_CASE("spectrum of M corresponds to the secular roots") {
  auto eng = oracle::rng(202);
  int done = 0;
  while (done < 25) {
    const long n = 2 + static_cast<long>(eng() % 5);
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    const double r = 0.5 + std::abs(oracle::gauss(eng));
    SymEig pe = sym_eig_dense(p);
    VectorXd w = pe.vectors.transpose() * q;
    if (w.cwiseAbs().minCoeff() < 1e-3 * q.norm()) continue;  // generic q only
    ++done;
    auto mvals = oracle::eigenvalues_sorted(oracle::assemble_m(p, q, r));
    auto poly = oracle::secular_polynomial(pe.values, VectorXd(w.array().square()), r);
    auto roots = oracle::polynomial_roots(poly);
    REQUIRE(roots.size() == mvals.size());
    std::vector<std::complex<double>> rs(roots.data(), roots.data() + roots.size());
    std::sort(rs.begin(), rs.end(), [](auto a, auto b) {
      if (a.real() != b.real()) return a.real() > b.real();
      return a.imag() > b.imag();
    });
    for (Index i = 0; i < mvals.size(); ++i)
      REQUIRE(std::abs(mvals(i) - rs[i]) < 1e-6 * std::max(1.0, std::abs(mvals(i))));
    // Rightmost eigenvalue is real and ≥ −λ₁.
    REQUIRE(std::abs(mvals(0).imag()) < 1e-8);
    REQUIRE(mvals(0).real() >= -pe.values(0) - 1e-8);
  }
}

TEST_CASE("global points beat dense sphere sampling") {
  auto eng = oracle::rng(303);
  for (int trial = 0; trial < 20; ++trial) {
    const long n = 2 + static_cast<long>(eng() % 2);
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    const double r = 0.5 + std::abs(oracle::gauss(eng));
    TrsOutcome out = solve_trs(make_problem(p, q, r));
    const double sampled =
        oracle::sample_sphere_min(p, q, r, MatrixXd(0, n), VectorXd(0), 20000, 404 + trial);
    REQUIRE(objective(p, q, out.global_points[0]) <= sampled + 1e-6);
  }
}

TEST_CASE("local-nonglobal points are strict local minimizers") {
  auto eng = oracle::rng(505);
  int seen = 0;
  for (int trial = 0; trial < 200 && seen < 12; ++trial) {
    const long n = 2 + static_cast<long>(eng() % 3);
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = 0.3 * oracle::gauss_vector(eng, n);
    const double r = 1.0;
    TrsOutcome out = solve_trs(make_problem(p, q, r));
    if (out.kind != TrsKind::GlobalAndLocal) continue;
    ++seen;
    REQUIRE(*out.local_multiplier < out.global_multiplier);
    const VectorXd& xl = *out.local_point;
    const double fl = objective(p, q, xl);
    for (int dir = 0; dir < 50; ++dir) {
      VectorXd d = oracle::gauss_vector(eng, n);
      d -= d.dot(xl) / xl.squaredNorm() * xl;
      if (d.norm() < 1e-8) continue;
      d.normalize();
      const double step = 1e-3;
      VectorXd moved = xl * std::cos(step) + r * d * std::sin(step);
      REQUIRE(objective(p, q, moved) > fl - 1e-12);
    }
  }
  REQUIRE(seen >= 5);
}

TEST_CASE("solutions are invariant to the shift choice") {
  auto eng = oracle::rng(606);
  for (int trial = 0; trial < 10; ++trial) {
    const long n = 3;
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    TrsProblem prob = make_problem(p, q, 1.2);
    const double base = spectral_upper_bound(p) + 1e-3;
    TrsTolerances ta;
    ta.shift_override = base;
    TrsTolerances tb;
    tb.shift_override = base + 10.0;
    TrsOutcome oa = solve_trs(prob, ta);
    TrsOutcome ob = solve_trs(prob, tb);
    REQUIRE(oa.kind == ob.kind);
    REQUIRE((oa.global_points[0] - ob.global_points[0]).norm() < 1e-8);
    REQUIRE(oa.global_multiplier == Catch::Approx(ob.global_multiplier).margin(1e-7));
    if (oa.local_point && ob.local_point)
      REQUIRE((*oa.local_point - *ob.local_point).norm() < 1e-8);
    // Objective bookkeeping differs by the recorded constant.
    REQUIRE(ob.objective_constant - oa.objective_constant ==
            Catch::Approx(-0.5 * 10.0 * 1.2 * 1.2).margin(1e-9));
  }
}

TEST_CASE("equality-constrained solves match the nullspace reduction") {
  auto eng = oracle::rng(707);
  for (int trial = 0; trial < 25; ++trial) {
    const long n = 3 + static_cast<long>(eng() % 6);  // up to 8
    const long m = 1 + static_cast<long>(eng() % std::min<long>(3, n - 2));
    MatrixXd p = oracle::random_symmetric(eng, n);
    VectorXd q = oracle::gauss_vector(eng, n);
    MatrixXd a = oracle::gauss_matrix(eng, m, n);
    const double r = 1.0 + std::abs(oracle::gauss(eng));
    VectorXd b = 0.1 * oracle::gauss_vector(eng, m);
    TrsOutcome out = solve_trs(make_problem(p, q, r, a, b));
    oracle::TrsReference ref = oracle::solve_trs_reduced(p, q, r, a, b);
    REQUIRE(out.global_multiplier == Catch::Approx(ref.mu_global).margin(1e-7));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rp : ref.global_points)
      for (const auto& op : out.global_points) best = std::min(best, (rp - op).norm());
    REQUIRE(best < 1e-7 * std::max(1.0, r));
    // Constraint and sphere feasibility of every returned point.
    for (const auto& x : out.minimizers()) {
      REQUIRE((a * x - b).norm() < 1e-8);
      REQUIRE(std::abs(x.norm() - r) < 1e-8);
    }
  }
}

TEST_CASE("arnoldi path agrees with the dense path") {
  auto eng = oracle::rng(808);
  const long n = 50;  // 2n = 100 exceeds the dense threshold
  MatrixXd p = oracle::random_symmetric(eng, n);
  VectorXd q = oracle::gauss_vector(eng, n);
  TrsProblem prob = make_problem(p, q, 2.0);
  TrsTolerances iter_tols;
  TrsOutcome via_arnoldi = solve_trs(prob, iter_tols);
  REQUIRE(!via_arnoldi.diag.dense_path);
  TrsTolerances dense_tols;
  dense_tols.force_dense = true;
  TrsOutcome via_dense = solve_trs(prob, dense_tols);
  REQUIRE((via_arnoldi.global_points[0] - via_dense.global_points[0]).norm() < 1e-7);
  REQUIRE(via_arnoldi.global_multiplier ==
          Catch::Approx(via_dense.global_multiplier).margin(1e-7));
}

TEST_CASE("solve_trs rejects undersized manifolds") {
  MatrixXd p = MatrixXd::Identity(2, 2);
  VectorXd q = VectorXd::Zero(2);
  MatrixXd a(1, 2);
  a << 1, 0;
  REQUIRE_THROWS_AS(solve_trs(make_problem(p, q, 1.0, a, VectorXd::Zero(1))), InvalidArgument);
}
