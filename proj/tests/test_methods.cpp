#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dhpe/methods.hpp"
#include "dhpe/problems.hpp"
#include "support.hpp"

using namespace dhpe;
using dhpe::testing::max_abs;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ProblemInstance small_instance(ProblemFamily family, Index n, std::uint64_t seed = 3) {
  InstanceSpec spec;
  spec.family = family;
  spec.m = n;
  spec.n = n;
  spec.seed = seed;
  spec.jumps = std::min<Index>(4, n - 1);
  spec.lam = 0.05;
  return make_instance(spec);
}

/// Exact least-squares resolvent by a dense Cholesky factorization.
ClosedFormResolvent<double> dense_lsq_resolvent(const ProblemInstance& p, double tau) {
  const MatrixXd Hm = p.H.to_dense();
  const Eigen::LLT<MatrixXd> llt(MatrixXd::Identity(p.n, p.n) + tau * Hm.transpose() * Hm);
  const VectorXd htf = Hm.transpose() * p.f;
  return ClosedFormResolvent<double>(p.n, tau, [llt, htf, tau](const VectorXd& v) -> VectorXd {
    return llt.solve(v + tau * htf);
  });
}

LsqResolventOptions<double> tight_oracle(double tol = 1e-12) {
  LsqResolventOptions<double> o;
  o.exact_tolerance = tol;
  return o;
}

VectorMap<double> soft(double eta) {
  return [eta](const VectorXd& v) -> VectorXd { return soft_threshold(v, eta); };
}

VectorMap<double> box(double lam) {
  return [lam](const VectorXd& v) -> VectorXd { return clip(v, lam); };
}

double max_gap(const std::vector<VectorXd>& a, const std::vector<VectorXd>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, max_abs(a[k] - b[k]));
  return worst;
}

double spectral_norm(const LinearMap<double>& H) {
  return estimate_spectral_norm(H.with_fresh_counters(), 1e-10, 5000).value * (1.0 + 1e-3);
}

MethodOptions<double> recording() {
  MethodOptions<double> opts;
  opts.record_iterates = true;
  return opts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

TEST_CASE("primal-dual stepsizes from kappa") {
  const auto p = CpParams<double>::from_kappa(0.1, 0.95);
  CHECK(p.tau == doctest::Approx(5.0));
  CHECK(p.theta == doctest::Approx(0.05));
  CHECK(p.tau * p.theta * p.k_norm * p.k_norm == doctest::Approx(1.0));
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS(CpParams<double>::from_kappa(0.0, 0.5), std::invalid_argument);
  auto bad = p;
  bad.theta *= 1.01;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.sigma = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("three-operator stepsizes from beta") {
  const auto p = DyParams<double>::from_beta(0.4, 0.99);
  CHECK(p.gamma == doctest::Approx(2.5));
  CHECK(p.alpha == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(DyParams<double>::from_beta(0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(DyParams<double>::from_beta(0.4, 0.5, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(DyParams<double>::from_beta(-1.0, 0.5, 1.0), std::invalid_argument);
  auto bad = p;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  const auto none = DyParams<double>::from_beta(0.0, 0.5, 3.0);
  CHECK(none.alpha == 0.0);
}

// ---------------------------------------------------------------------------
// Eckstein-Yao
// ---------------------------------------------------------------------------

TEST_CASE("exact Eckstein-Yao is classical Douglas-Rachford") {
  const auto p = small_instance(ProblemFamily::dy, 30);
  const double tau = 2.0, lam1 = 0.05;
  auto A1 = dense_lsq_resolvent(p, tau);
  const auto J2 = soft(tau * lam1);
  GaussianStream rng(1);
  const VectorXd w0 = rng.vector(p.n);
  const auto run = eckstein_yao_run<double>(A1, J2, tau, 0.0, w0, 100, recording());

  auto J1 = dense_lsq_resolvent(p, tau);
  std::vector<VectorXd> classical;
  VectorXd w = w0;
  for (int k = 0; k < 100; ++k) {
    J1.propose(w);
    const VectorXd x1 = J1.point();
    w = w + J2(2.0 * x1 - w) - x1;
    classical.push_back(w);
  }
  CHECK(max_gap(run.iterates, classical) <= 1e-12);
}

TEST_CASE("Eckstein-Yao with zero operators keeps w fixed") {
  const VectorMap<double> id = [](const VectorXd& v) -> VectorXd { return v; };
  ClosedFormResolvent<double> A1(4, 1.5, id);
  const VectorXd w0 = (VectorXd(4) << 1, -2, 3, 0.25).finished();
  const auto run = eckstein_yao_run<double>(A1, id, 1.5, 0.5, w0, 10, recording());
  for (const auto& w : run.iterates) CHECK((w - w0).norm() == 0.0);
}

TEST_CASE("Eckstein-Yao update formulas agree and traces pass the audit") {
  const auto p = small_instance(ProblemFamily::dy, 60);
  const double tau = 2.0;
  LsqResolvent<double> A1(p.H, p.f, tau);
  const auto run = eckstein_yao_run<double>(A1, soft(tau * 0.01), tau, 0.9, VectorXd::Zero(p.n), 200);
  CHECK(run.max_update_mismatch <= 1e-12 * std::max(1.0, max_abs(run.w)));
  for (const auto& r : run.trace.records) CHECK(r.lhs <= 0.9 * r.rhs);
  CHECK(audit_prop1(run.trace, 0.9).passed);
  CHECK_THROWS_AS(eckstein_yao_run<double>(A1, soft(0.1), 3.0, 0.5, VectorXd::Zero(p.n), 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Inexact Chambolle-Pock
// ---------------------------------------------------------------------------

TEST_CASE("inexact CP with sigma = 0 matches implicit CP") {
  const auto p = small_instance(ProblemFamily::cp, 50);
  const auto params = CpParams<double>::from_kappa(0.5, 0.0);
  LsqResolvent<double> A1(p.H, p.f, params.tau, tight_oracle());
  MethodOptions<double> opts = recording();
  opts.inner_cap = 10 * 50;
  const VectorXd x0 = VectorXd::Zero(p.n), y0 = VectorXd::Zero(p.n - 1);
  const auto hpe = inexact_cp_run<double>(A1, p.D, box(p.lam), params, x0, y0, 100, opts);
  const auto implicit = implicit_cp_run<double>(p.H, p.f, p.D, p.lam, params, 1e-12, x0, y0, 100, recording());
  CHECK(max_gap(hpe.iterates, implicit.iterates) <= 1e-8);
}

TEST_CASE("inexact CP with K = I and unit steps reduces to Eckstein-Yao through w = x - y") {
  const auto p = small_instance(ProblemFamily::cp, 40);
  const double lam = 0.05;
  CpParams<double> params;
  params.tau = params.theta = 1.0;
  params.k_norm = 1.0;
  params.sigma = 0.5;
  const auto K = LinearMap<double>::identity(p.n);
  LsqResolvent<double> cp_oracle(p.H, p.f, 1.0);
  LsqResolvent<double> ey_oracle(p.H, p.f, 1.0);
  const VectorXd zero = VectorXd::Zero(p.n);
  const auto cp = inexact_cp_run<double>(cp_oracle, K, box(lam), params, zero, zero, 100, recording());
  const auto ey = eckstein_yao_run<double>(ey_oracle, soft(lam), 1.0, 0.5, zero, 100, recording());
  std::vector<VectorXd> reduced;
  for (const auto& u : cp.iterates) reduced.push_back(u.head(p.n) - u.tail(p.n));
  CHECK(max_gap(reduced, ey.iterates) <= 1e-10);

  // The printed substitution w = x + y does not reproduce the iteration.
  std::vector<VectorXd> printed;
  for (const auto& u : cp.iterates) printed.push_back(u.head(p.n) + u.tail(p.n));
  CHECK(max_gap(printed, ey.iterates) > 1e-3);
}

TEST_CASE("inexact CP with K = 0 decouples") {
  GaussianStream rng(12);
  const auto H = LinearMap<double>::dense(rng.matrix(30, 20) / std::sqrt(30.0) + MatrixXd::Identity(30, 20));
  const VectorXd f = rng.vector(30);
  const auto K = LinearMap<double>::dense(MatrixXd::Zero(19, 20));
  CpParams<double> params;
  params.tau = 1.0;
  params.theta = 3.0;
  params.k_norm = 0.0;
  params.sigma = 0.5;
  LsqResolvent<double> A1(H, f, params.tau);
  const VectorXd y0 = 2.0 * rng.vector(19);
  const auto run = inexact_cp_run<double>(A1, K, box(0.5), params, VectorXd::Zero(20), y0, 300, recording());
  const VectorXd clipped = clip(y0, 0.5);
  for (const auto& u : run.iterates) CHECK(max_abs(u.tail(19) - clipped) == 0.0);
  // x is an inexact proximal point sequence for the least-squares gradient.
  const MatrixXd Hm = H.to_dense();
  CHECK((Hm.transpose() * (Hm * run.x - f)).norm() <= 1e-8);
}

TEST_CASE("HPE-CP needs one CG step per iteration on the run-2 configuration") {
  InstanceSpec spec;
  spec.lam = 1.0;
  const auto p = make_instance(spec);
  const auto params = CpParams<double>::from_kappa(0.1, 0.95);
  LsqResolvent<double> A1(p.H, p.f, params.tau);
  const auto run = inexact_cp_run<double>(A1, p.D, box(p.lam), params, VectorXd::Zero(p.n), VectorXd::Zero(p.n - 1), 300);
  std::vector<std::size_t> inner;
  for (const auto& r : run.trace.records) inner.push_back(r.inner_iterations);
  const auto ones = std::count(inner.begin(), inner.end(), std::size_t{1});
  CHECK(static_cast<double>(ones) >= 0.5 * static_cast<double>(inner.size()));
  std::nth_element(inner.begin(), inner.begin() + inner.size() / 2, inner.end());
  CHECK(inner[inner.size() / 2] == 1);
}

// ---------------------------------------------------------------------------
// Inexact Davis-Yin
// ---------------------------------------------------------------------------

TEST_CASE("inexact DY without forward term reduces to Eckstein-Yao") {
  const auto p = small_instance(ProblemFamily::dy, 40);
  const double gamma = 3.0, lam1 = 0.02;
  const auto params = DyParams<double>::from_beta(0.0, 0.7, gamma);
  LsqResolvent<double> dy_oracle(p.H, p.f, gamma);
  LsqResolvent<double> ey_oracle(p.H, p.f, gamma);
  GaussianStream rng(2);
  const VectorXd w0 = rng.vector(p.n);
  const auto dy = inexact_dy_run<double>(dy_oracle, soft(gamma * lam1), {}, params, w0, 100, recording());
  const auto ey = eckstein_yao_run<double>(ey_oracle, soft(gamma * lam1), gamma, 0.7, w0, 100, recording());
  CHECK(max_gap(dy.iterates, ey.iterates) <= 1e-12);
}

TEST_CASE("inexact DY with sigma = 0 matches implicit DY") {
  const auto p = small_instance(ProblemFamily::dy, 50);
  const double lam1 = 0.001, lam2 = 0.1, delta = 0.01;
  const auto params = DyParams<double>::from_beta(4.0 * lam2, 0.0);
  LsqResolvent<double> A1(p.H, p.f, params.gamma, tight_oracle());
  MethodOptions<double> opts = recording();
  opts.inner_cap = 10 * 50;
  const VectorXd w0 = VectorXd::Zero(p.n);
  const auto hpe = inexact_dy_run<double>(A1, soft(params.gamma * lam1), huber_tv_gradient(p.D, lam2, delta), params,
                                          w0, 100, opts);
  const auto implicit = implicit_dy_run<double>(p.H, p.f, p.D, lam1, lam2, delta, params, 1e-12, w0, 100, recording());
  CHECK(max_gap(hpe.iterates, implicit.iterates) <= 1e-8);
}

TEST_CASE("inexact DY with only a linear forward term finds a zero of it") {
  GaussianStream rng(5);
  const Eigen::HouseholderQR<MatrixXd> qr(rng.matrix(5, 5));
  const MatrixXd Q = qr.householderQ();
  const VectorXd eigs = (VectorXd(5) << 0, 0, 0.5, 1, 2).finished();
  const MatrixXd B = Q * eigs.asDiagonal() * Q.transpose();
  const VectorMap<double> forward = [B](const VectorXd& x) -> VectorXd { return B * x; };
  const VectorMap<double> id = [](const VectorXd& v) -> VectorXd { return v; };
  const auto params = DyParams<double>::from_beta(2.0, 0.5);
  ClosedFormResolvent<double> A1(5, params.gamma, id);
  const VectorXd w0 = rng.vector(5);
  const auto run = inexact_dy_run<double>(A1, id, forward, params, w0, 2000);
  const MatrixXd kernel = Q.leftCols(2);
  const VectorXd projection = kernel * (kernel.transpose() * w0);
  CHECK(max_abs(run.x - projection) <= 1e-8);
  CHECK((B * run.x).norm() <= 1e-8);
}

// ---------------------------------------------------------------------------
// Implicit Chambolle-Pock
// ---------------------------------------------------------------------------

TEST_CASE("implicit CP with vanishing data") {
  const Index n = 12;
  const auto H = LinearMap<double>::dense(MatrixXd::Zero(n, n));
  const auto D = gen_diff_matrix(n);
  const MatrixXd Dm = D.to_dense();
  const auto params = CpParams<double>::from_kappa(0.7, 0.0);
  GaussianStream rng(3);
  const VectorXd x0 = rng.vector(n), y0 = rng.vector(n - 1);

  SUBCASE("an inactive box gives the linear recursion") {
    const auto run = implicit_cp_run<double>(H, VectorXd::Zero(n), D, 1e6, params, 1e-12, x0, y0, 20, recording());
    VectorXd x = x0, y = y0;
    for (const auto& state : run.iterates) {
      const VectorXd x_next = x - params.tau * Dm.transpose() * y;
      y = y + params.theta * Dm * (2.0 * x_next - x);
      x = x_next;
      CHECK(max_abs(state.head(n) - x) <= 1e-12 * (1.0 + max_abs(x)));
      CHECK(max_abs(state.tail(n - 1) - y) <= 1e-12 * (1.0 + max_abs(y)));
    }
  }
  SUBCASE("lam = 0 pins the dual variable at zero") {
    const auto run = implicit_cp_run<double>(H, VectorXd::Zero(n), D, 0.0, params, 1e-12, x0, y0, 5, recording());
    for (const auto& state : run.iterates) CHECK(state.tail(n - 1).norm() == 0.0);
  }
}

TEST_CASE("implicit CP fixed point satisfies the optimality system") {
  const auto p = small_instance(ProblemFamily::cp, 10, 7);
  const auto params = CpParams<double>::from_kappa(0.5, 0.0);
  const auto run = implicit_cp_run<double>(p.H, p.f, p.D, p.lam, params, 1e-13, VectorXd::Zero(10), VectorXd::Zero(9), 20000);
  const MatrixXd Hm = p.H.to_dense(), Dm = p.D.to_dense();
  // 0 = H^T (Hx - f) + D^T y with y in lam d||.||_1(Dx).
  CHECK((Hm.transpose() * (Hm * run.x - p.f) + Dm.transpose() * run.y).norm() <= 1e-6);
  const VectorXd dx = Dm * run.x;
  CHECK(max_abs(run.y) <= p.lam * (1.0 + 1e-12));
  for (Index i = 0; i < dx.size(); ++i)
    if (std::abs(dx(i)) > 1e-6) CHECK(std::abs(run.y(i) - p.lam * (dx(i) > 0 ? 1.0 : -1.0)) <= 1e-6);
}

// ---------------------------------------------------------------------------
// Explicit Chambolle-Pock and Condat-Vu
// ---------------------------------------------------------------------------

TEST_CASE("explicit CP with vanishing data decays the data dual") {
  const Index m = 8, n = 6;
  const auto H = LinearMap<double>::dense(MatrixXd::Zero(m, n));
  const auto D = gen_diff_matrix(n);
  GaussianStream rng(4);
  const VectorXd u0 = rng.vector(m);
  const double kappa = 0.5;
  const auto run = explicit_cp_run<double>(H, VectorXd::Zero(m), D, 0.3, kappa, VectorXd::Zero(n), u0,
                                           VectorXd::Zero(n - 1), 30, 0.0, 2.0, recording());
  const double theta = kappa / 2.0;  // ||K~|| = ||D|| bound = 2
  double factor = 1.0;
  for (const auto& state : run.iterates) {
    factor /= 1.0 + theta;
    CHECK(max_abs(state.segment(n, m) - factor * u0) <= 1e-14);
  }
}

TEST_CASE("baselines on a 50-dim TV instance converge to the implicit CP limit") {
  const auto p = small_instance(ProblemFamily::cp, 50, 11);
  const double h_norm = spectral_norm(p.H);
  const auto params = CpParams<double>::from_kappa(0.5, 0.0);
  const VectorXd x0 = VectorXd::Zero(p.n), y0 = VectorXd::Zero(p.n - 1);
  const auto implicit = implicit_cp_run<double>(p.H, p.f, p.D, p.lam, params, 1e-12, x0, y0, 20000);
  const double limit = p.objective(implicit.x);

  SUBCASE("explicit CP") {
    const auto run = explicit_cp_run<double>(p.H, p.f, p.D, p.lam, 0.5, x0, VectorXd::Zero(p.m), y0, 200000, h_norm);
    CHECK(std::abs(p.objective(run.x) - limit) <= 1e-6);
    const MatrixXd Hm = p.H.to_dense(), Dm = p.D.to_dense();
    const VectorXd u = run.y.head(p.m), v = run.y.tail(p.n - 1);
    CHECK((Hm.transpose() * u + Dm.transpose() * v).norm() <= 1e-6);
    CHECK((u - (Hm * run.x - p.f)).norm() <= 1e-6);
    CHECK(max_abs(v) <= p.lam * (1.0 + 1e-12));
  }
  SUBCASE("Condat-Vu") {
    const double tau = 1.0 / (h_norm * h_norm);
    const double theta = 0.9 * (1.0 / tau - h_norm * h_norm / 2.0) / 4.0;
    const auto run = condat_vu_run<double>(p.H, p.f, p.D, p.lam, tau, theta, x0, y0, 200000, h_norm);
    CHECK(std::abs(p.objective(run.x) - limit) <= 1e-6);
  }
}

TEST_CASE("Condat-Vu degenerate cases") {
  const auto p = small_instance(ProblemFamily::cp, 20);
  const double h_norm = spectral_norm(p.H);
  const double tau = 1.0 / (h_norm * h_norm);
  const VectorXd x0 = VectorXd::Zero(p.n);

  SUBCASE("D = 0 is monotone gradient descent") {
    const auto D0 = LinearMap<double>::dense(MatrixXd::Zero(p.n - 1, p.n));
    MethodOptions<double> opts;
    opts.objective = [&p](const VectorXd& x) { return 0.5 * (p.H.to_dense() * x - p.f).squaredNorm(); };
    const auto run = condat_vu_run<double>(p.H, p.f, D0, 3.0, tau, 1.0, x0, VectorXd::Zero(p.n - 1), 50, h_norm, 0.0,
                                           false, opts);
    for (std::size_t k = 1; k < run.trace.records.size(); ++k)
      CHECK(run.trace.records[k].objective <= run.trace.records[k - 1].objective);
  }
  SUBCASE("lam = 0 keeps the dual at zero") {
    const auto run = condat_vu_run<double>(p.H, p.f, p.D, 0.0, tau, 0.1, x0, VectorXd::Ones(p.n - 1), 20, h_norm, 2.0,
                                           false, recording());
    for (const auto& state : run.iterates) CHECK(state.tail(p.n - 1).norm() == 0.0);
  }
  SUBCASE("the printed sign gives a different iteration") {
    const VectorXd y0 = 0.01 * VectorXd::Ones(p.n - 1);
    const auto standard = condat_vu_run<double>(p.H, p.f, p.D, p.lam, tau, 0.1, x0, y0, 3, h_norm);
    const auto printed = condat_vu_run<double>(p.H, p.f, p.D, p.lam, tau, 0.1, x0, y0, 3, h_norm, 2.0, true);
    CHECK(max_abs(standard.x - printed.x) > 0.0);
  }
  SUBCASE("stepsize rule is enforced") {
    CHECK_THROWS_AS(condat_vu_run<double>(p.H, p.f, p.D, p.lam, 2.0 * tau, 0.1, x0, VectorXd::Zero(p.n - 1), 1, h_norm),
                    std::invalid_argument);
    CHECK_THROWS_AS(condat_vu_run<double>(p.H, p.f, p.D, p.lam, tau, 1.0, x0, VectorXd::Zero(p.n - 1), 1, h_norm),
                    std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// Implicit Davis-Yin and forward-backward
// ---------------------------------------------------------------------------

TEST_CASE("implicit DY with lam2 = 0 is Douglas-Rachford on (least squares, l1)") {
  const auto p = small_instance(ProblemFamily::dy, 30);
  const double gamma = 2.0, lam1 = 0.02;
  const auto params = DyParams<double>::from_beta(DyParams<double>::beta_floor, 0.0, gamma);
  const VectorXd w0 = VectorXd::Zero(p.n);
  const auto dy = implicit_dy_run<double>(p.H, p.f, p.D, lam1, 0.0, 0.01, params, 1e-13, w0, 100, recording());
  auto A1 = dense_lsq_resolvent(p, gamma);
  const auto ey = eckstein_yao_run<double>(A1, soft(gamma * lam1), gamma, 0.0, w0, 100, recording());
  CHECK(max_gap(dy.iterates, ey.iterates) <= 1e-8);
}

TEST_CASE("implicit DY fixed point satisfies the optimality condition") {
  InstanceSpec spec;
  spec.family = ProblemFamily::dy;
  spec.m = spec.n = 10;
  spec.seed = 5;
  spec.jumps = 3;
  const auto p = make_instance(spec);
  const double lam1 = 0.01, lam2 = 0.1, delta = 0.01;
  const auto params = DyParams<double>::from_beta(4.0 * lam2, 0.0);
  const auto run = implicit_dy_run<double>(p.H, p.f, p.D, lam1, lam2, delta, params, 1e-13, VectorXd::Zero(10), 50000);
  const MatrixXd Hm = p.H.to_dense(), Dm = p.D.to_dense();
  const VectorXd& x = run.x;
  const VectorXd smooth = Hm.transpose() * (Hm * x - p.f) + lam2 * Dm.transpose() * huber_gradient(VectorXd(Dm * x), delta);
  // Distance of -smooth to lam1 d||x||_1.
  double residual = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double r = x(i) != 0.0 ? smooth(i) + lam1 * (x(i) > 0 ? 1.0 : -1.0)
                                 : std::max(0.0, std::abs(smooth(i)) - lam1);
    residual = std::max(residual, std::abs(r));
  }
  CHECK(residual <= 1e-6);
}

TEST_CASE("forward-backward degenerate cases") {
  SUBCASE("no regularization is gradient descent") {
    const auto p = small_instance(ProblemFamily::dy, 15);
    const double h_norm = spectral_norm(p.H);
    const auto run = fb_run<double>(p.H, p.f, p.D, 0.0, 0.0, 0.01, VectorXd::Zero(p.n), 10, h_norm, recording());
    const MatrixXd Hm = p.H.to_dense();
    const double gamma = 1.0 / (h_norm * h_norm);
    VectorXd x = VectorXd::Zero(p.n);
    for (const auto& state : run.iterates) {
      x = x - gamma * Hm.transpose() * (Hm * x - p.f);
      CHECK(max_abs(state - x) <= 1e-13);
    }
  }
  SUBCASE("identity forward operator converges to the soft-thresholded data") {
    const auto H = LinearMap<double>::identity(7);
    const VectorXd f = (VectorXd(7) << 1, -0.2, 0.05, 3, -4, 0, 0.3).finished();
    const auto run = fb_run<double>(H, f, gen_diff_matrix(7), 0.25, 0.0, 0.01, VectorXd::Zero(7), 5, 1.0);
    CHECK(max_abs(run.x - soft_threshold(f, 0.25)) <= 1e-15);
  }
}

TEST_CASE("forward-backward on a 50-dim instance reaches the implicit DY limit") {
  const auto p = small_instance(ProblemFamily::dy, 50, 13);
  const double lam1 = 0.001, lam2 = 0.1, delta = 0.01;
  const auto params = DyParams<double>::from_beta(4.0 * lam2, 0.0);
  const auto implicit = implicit_dy_run<double>(p.H, p.f, p.D, lam1, lam2, delta, params, 1e-12, VectorXd::Zero(p.n), 20000);
  const auto fb = fb_run<double>(p.H, p.f, p.D, lam1, lam2, delta, VectorXd::Zero(p.n), 200000, spectral_norm(p.H));
  auto objective = [&](const VectorXd& x) { return objective_dy(p.H, p.f, p.D, lam1, lam2, delta, x); };
  CHECK(std::abs(objective(fb.x) - objective(implicit.x)) <= 1e-6);
}

// ---------------------------------------------------------------------------
// Work accounting
// ---------------------------------------------------------------------------

TEST_CASE("every iteration is charged exactly the H applications it performs") {
  const auto cp = small_instance(ProblemFamily::cp, 40);
  const auto dy = small_instance(ProblemFamily::dy, 40);
  const auto params = CpParams<double>::from_kappa(0.5, 0.9);
  const auto dyp = DyParams<double>::from_beta(0.4, 0.9);
  const double h_norm = spectral_norm(cp.H);

  // Solver-style methods: one H and one H^T per CG step plus the warm-start
  // residual (two), and H^T f once at oracle construction.
  auto check_solver = [](const MethodResult<double>& run) {
    const auto& recs = run.trace.records;
    REQUIRE(!recs.empty());
    CHECK(recs[0].h_applications == 1 + 2 + 2 * recs[0].inner_iterations);
    for (std::size_t k = 1; k < recs.size(); ++k)
      CHECK(recs[k].h_applications - recs[k - 1].h_applications == 2 + 2 * recs[k].inner_iterations);
  };
  auto check_explicit = [](const MethodResult<double>& run) {
    const auto& recs = run.trace.records;
    for (std::size_t k = 0; k < recs.size(); ++k) CHECK(recs[k].h_applications == 2 * (k + 1));
  };
  auto counted = [](const LinearMap<double>& H) {
    MethodOptions<double> opts;
    opts.monitor.work = [H] { return H.total_count(); };
    return opts;
  };

  {
    const auto H = cp.H.with_fresh_counters();
    LsqResolvent<double> A1(H, cp.f, params.tau);
    check_solver(inexact_cp_run<double>(A1, cp.D, box(cp.lam), params, VectorXd::Zero(40), VectorXd::Zero(39), 50, counted(H)));
  }
  {
    const auto H = cp.H.with_fresh_counters();
    check_solver(implicit_cp_run<double>(H, cp.f, cp.D, cp.lam, params, 1e-8, VectorXd::Zero(40), VectorXd::Zero(39), 50, counted(H)));
  }
  {
    const auto H = cp.H.with_fresh_counters();
    check_explicit(explicit_cp_run<double>(H, cp.f, cp.D, cp.lam, 0.5, VectorXd::Zero(40), VectorXd::Zero(40),
                                           VectorXd::Zero(39), 50, h_norm, 2.0, counted(H)));
  }
  {
    const auto H = cp.H.with_fresh_counters();
    const double tau = 1.0 / (h_norm * h_norm);
    check_explicit(condat_vu_run<double>(H, cp.f, cp.D, cp.lam, tau, 0.1, VectorXd::Zero(40), VectorXd::Zero(39), 50,
                                         h_norm, 2.0, false, counted(H)));
  }
  {
    const auto H = dy.H.with_fresh_counters();
    LsqResolvent<double> A1(H, dy.f, dyp.gamma);
    check_solver(inexact_dy_run<double>(A1, soft(dyp.gamma * 0.001), huber_tv_gradient(dy.D, 0.1, 0.01), dyp,
                                        VectorXd::Zero(40), 50, counted(H)));
  }
  {
    const auto H = dy.H.with_fresh_counters();
    check_solver(implicit_dy_run<double>(H, dy.f, dy.D, 0.001, 0.1, 0.01, dyp, 1e-8, VectorXd::Zero(40), 50, counted(H)));
  }
  {
    const auto H = dy.H.with_fresh_counters();
    check_explicit(fb_run<double>(H, dy.f, dy.D, 0.001, 0.1, 0.01, VectorXd::Zero(40), 50, h_norm, counted(H)));
  }
  {
    const auto H = dy.H.with_fresh_counters();
    LsqResolvent<double> A1(H, dy.f, 2.0);
    check_solver(eckstein_yao_run<double>(A1, soft(0.002), 2.0, 0.9, VectorXd::Zero(40), 50, counted(H)));
  }
}

TEST_CASE("zero iterations give empty traces") {
  const auto p = small_instance(ProblemFamily::cp, 10);
  const auto params = CpParams<double>::from_kappa(0.5, 0.5);
  LsqResolvent<double> A1(p.H, p.f, params.tau);
  const auto run = inexact_cp_run<double>(A1, p.D, box(p.lam), params, VectorXd::Zero(10), VectorXd::Zero(9), 0);
  CHECK(run.trace.records.empty());
  CHECK(run.x.size() == 10);
}
