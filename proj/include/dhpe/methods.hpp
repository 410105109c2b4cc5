#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dhpe/errors.hpp"
#include "dhpe/hpe.hpp"
#include "dhpe/linalg.hpp"
#include "dhpe/operators.hpp"

namespace dhpe {

template <typename Scalar = double>
using VectorMap = std::function<Vec<Scalar>(const Vec<Scalar>&)>;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Stepsizes of the primal-dual methods. `k_norm` is an upper bound for ||K||.
template <typename Scalar = double>
struct CpParams {
  Scalar tau = Scalar(1);
  Scalar theta = Scalar(1);
  Scalar sigma = Scalar(0);
  Scalar kappa = Scalar(1);
  Scalar k_norm = Scalar(2);

  /// tau = 1 / (||K|| kappa), theta = kappa / ||K||, so tau theta ||K||^2 = 1.
  /// With ||K|| <= 2 this is tau = 1 / (2 kappa), theta = kappa / 2.
  static CpParams from_kappa(Scalar kappa, Scalar sigma, Scalar k_norm = Scalar(2)) {
    if (!(kappa > Scalar(0)) || !(k_norm > Scalar(0)))
      throw std::invalid_argument("CpParams: kappa and ||K|| must be positive");
    CpParams p;
    p.kappa = kappa;
    p.sigma = sigma;
    p.k_norm = k_norm;
    p.tau = Scalar(1) / (k_norm * kappa);
    p.theta = kappa / k_norm;
    return p;
  }

  void validate() const {
    if (!(tau > Scalar(0)) || !(theta > Scalar(0)))
      throw std::invalid_argument("CpParams: tau and theta must be positive");
    if (!(sigma >= Scalar(0) && sigma < Scalar(1)))
      throw std::invalid_argument("CpParams: sigma must lie in [0, 1)");
    if (tau * theta * k_norm * k_norm > Scalar(1) + Scalar(64) * std::numeric_limits<Scalar>::epsilon())
      throw std::invalid_argument("CpParams: tau * theta * ||K||^2 must not exceed 1");
  }
};

/// Stepsizes of the three-operator methods: gamma in (0, 2/beta) and
/// alpha = gamma beta / (4 - gamma beta). beta = 0 (no forward term) gives
/// alpha = 0 and any gamma > 0.
template <typename Scalar = double>
struct DyParams {
  Scalar gamma = Scalar(1);
  Scalar beta = Scalar(0);
  Scalar alpha = Scalar(0);
  Scalar sigma = Scalar(0);

  /// Smallest beta used when the cocoercivity constant vanishes but the
  /// forward term is kept formally (regularization weight zero).
  static constexpr Scalar beta_floor = Scalar(1e-12);

  /// gamma defaults to 1 / beta.
  static DyParams from_beta(Scalar beta, Scalar sigma, Scalar gamma = Scalar(0)) {
    if (beta < Scalar(0)) throw std::invalid_argument("DyParams: beta must be nonnegative");
    DyParams p;
    p.beta = beta;
    p.sigma = sigma;
    if (gamma > Scalar(0)) {
      p.gamma = gamma;
    } else if (beta > Scalar(0)) {
      p.gamma = Scalar(1) / beta;
    } else {
      throw std::invalid_argument("DyParams: gamma required when beta = 0");
    }
    p.alpha = p.gamma * beta / (Scalar(4) - p.gamma * beta);
    p.validate();
    return p;
  }

  void validate() const {
    if (!(gamma > Scalar(0))) throw std::invalid_argument("DyParams: gamma must be positive");
    if (beta < Scalar(0)) throw std::invalid_argument("DyParams: beta must be nonnegative");
    if (beta > Scalar(0) && !(gamma * beta < Scalar(2)))
      throw std::invalid_argument("DyParams: gamma must lie in (0, 2/beta)");
    const Scalar expected = gamma * beta / (Scalar(4) - gamma * beta);
    if (std::abs(alpha - expected) > Scalar(1e-14) * (Scalar(1) + expected))
      throw std::invalid_argument("DyParams: alpha must equal gamma beta / (4 - gamma beta)");
    if (!(sigma >= Scalar(0) && sigma < Scalar(1)))
      throw std::invalid_argument("DyParams: sigma must lie in [0, 1)");
  }
};

template <typename Scalar = double>
struct MethodOptions {
  /// Objective of the method's primal point, recorded per iteration. Should
  /// use operator handles with their own counters so evaluation is not
  /// charged to the run.
  std::function<Scalar(const Vec<Scalar>&)> objective;
  /// Work counter, reference point (HPE methods) and wall-time switch.
  RunMonitor<Scalar> monitor;
  std::size_t inner_cap = 200;
  /// CG steps per refinement pass of the HPE methods.
  Index refine_steps = 1;
  /// Keep the method state after every iteration in MethodResult::iterates.
  bool record_iterates = false;
};

template <typename Scalar = double>
struct MethodResult {
  RunTrace<Scalar> trace;
  Vec<Scalar> x;   ///< primal point (x~2 for splitting methods)
  Vec<Scalar> x1;  ///< first resolvent point of splitting methods
  Vec<Scalar> y;   ///< dual variable(s) of primal-dual methods
  Vec<Scalar> w;   ///< governing sequence of splitting methods
  /// State after each iteration: w for splitting methods, (x, y) stacked for
  /// primal-dual methods, (x, u, v) for explicit CP, x for forward-backward.
  std::vector<Vec<Scalar>> iterates;
  /// Largest discrepancy between the two equivalent update formulas.
  Scalar max_update_mismatch = Scalar(0);
};

namespace detail {

template <typename Scalar>
void require_step(const ResolventOracle<Scalar>& oracle, Scalar step, const char* what) {
  if (std::abs(oracle.step() - step) > Scalar(1e-14) * step)
    throw std::invalid_argument(std::string(what) + ": resolvent oracle stepsize mismatch");
}

template <typename Scalar>
HpeConfig<Scalar> hpe_config(Scalar sigma, const MethodOptions<Scalar>& opts) {
  HpeConfig<Scalar> cfg;
  cfg.sigma = sigma;
  cfg.inner_cap = opts.inner_cap;
  return cfg;
}

/// Trace bookkeeping for methods that are not HPE instances.
template <typename Scalar>
class PlainRecorder {
 public:
  PlainRecorder(const MethodOptions<Scalar>& opts, std::size_t iters, MethodResult<Scalar>& out)
      : opts_(opts), out_(out) {
    out_.trace.hpe = false;
    out_.trace.records.reserve(iters);
  }

  void record(std::size_t k, const Vec<Scalar>& primal, std::size_t inner, const Vec<Scalar>& state) {
    if (!primal.allFinite() || !state.allFinite())
      throw numerical_error("iteration produced non-finite values");
    TraceRecord<Scalar> rec;
    rec.k = k;
    rec.lhs = std::numeric_limits<Scalar>::quiet_NaN();
    rec.rhs = std::numeric_limits<Scalar>::quiet_NaN();
    rec.inner_iterations = inner;
    if (opts_.objective) rec.objective = opts_.objective(primal);
    stamp(rec, opts_.monitor, clock_);
    out_.trace.records.push_back(rec);
    if (opts_.record_iterates) out_.iterates.push_back(state);
  }

 private:
  const MethodOptions<Scalar>& opts_;
  MethodResult<Scalar>& out_;
  Stopwatch clock_;
};

template <typename Scalar>
Vec<Scalar> stack(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  Vec<Scalar> out(a.size() + b.size());
  out << a, b;
  return out;
}

template <typename Scalar>
Vec<Scalar> stack(const Vec<Scalar>& a, const Vec<Scalar>& b, const Vec<Scalar>& c) {
  Vec<Scalar> out(a.size() + b.size() + c.size());
  out << a, b, c;
  return out;
}

}  // namespace detail

/// Cocoercive forward term x -> lam2 D^T grad L_delta(D x) of Huber-TV.
template <typename Scalar>
VectorMap<Scalar> huber_tv_gradient(const LinearMap<Scalar>& D, Scalar lam2, Scalar delta) {
  require_huber_delta(delta);
  return [D, lam2, delta](const Vec<Scalar>& x) -> Vec<Scalar> {
    return lam2 * D.apply_adjoint(huber_gradient(D.apply(x), delta));
  };
}

// ---------------------------------------------------------------------------
// HPE-derived methods
// ---------------------------------------------------------------------------

/// Eckstein-Yao inexact Douglas-Rachford for 0 in A1 x + A2 x, as a reduced
/// HPE iteration with C = [I; -I; I], u~ = (x~1, x~2, tau a1 + 2 x~2 - x~1)
/// and z = x~1 - x~2. `A1` must have stepsize tau; `J_tauA2` is the exact
/// resolvent of tau A2.
template <typename Scalar>
MethodResult<Scalar> eckstein_yao_run(ResolventOracle<Scalar>& A1, const VectorMap<Scalar>& J_tauA2,
                                      Scalar tau, Scalar sigma, const Vec<Scalar>& w0,
                                      std::size_t iters, const MethodOptions<Scalar>& opts = {}) {
  if (!(tau > Scalar(0))) throw std::invalid_argument("eckstein_yao_run: tau must be positive");
  detail::require_step(A1, tau, "eckstein_yao_run");
  detail::require_size(w0.size(), A1.dimension(), "eckstein_yao_run");
  const Index n = w0.size();

  auto assemble = [&](CertifiedPair<Scalar>& pair) {
    const Vec<Scalar>& x1 = A1.point();
    const Vec<Scalar> ta1 = tau * A1.witness();
    const Vec<Scalar> x2 = J_tauA2(x1 - ta1);
    pair.u_tilde = detail::stack<Scalar>(x1, x2, ta1 + Scalar(2) * x2 - x1);
    pair.witness = x1 - x2;
    pair.inner_iterations = static_cast<std::size_t>(A1.inner_iterations());
    pair.exact = A1.exact();
  };
  PairProducer<Scalar> produce = [&](const Vec<Scalar>& w, Scalar) {
    A1.propose(w);
    CertifiedPair<Scalar> pair;
    assemble(pair);
    return pair;
  };
  PairRefiner<Scalar> refine = [&](const Vec<Scalar>&, Scalar, CertifiedPair<Scalar>& pair) {
    A1.refine(opts.refine_steps);
    assemble(pair);
  };

  MethodResult<Scalar> out;
  PairObjective<Scalar> objective;
  if (opts.objective)
    objective = [&](const CertifiedPair<Scalar>& pair, const Vec<Scalar>&) {
      return opts.objective(Vec<Scalar>(pair.u_tilde.segment(n, n)));
    };
  StepObserver<Scalar> observer = [&](std::size_t, const Vec<Scalar>& w, const CertifiedPair<Scalar>& pair,
                                      const Vec<Scalar>& next) {
    // w - tau (a1 + a2) with tau a2 = x~1 - tau a1 - x~2.
    const auto x1 = pair.u_tilde.head(n);
    const auto x2 = pair.u_tilde.segment(n, n);
    const Vec<Scalar> ta1 = tau * A1.witness();
    const Vec<Scalar> ta2 = x1 - ta1 - x2;
    const Vec<Scalar> alternative = w - (ta1 + ta2);
    out.max_update_mismatch = std::max(out.max_update_mismatch, (alternative - next).template lpNorm<Eigen::Infinity>());
    if (opts.record_iterates) out.iterates.push_back(next);
  };

  const auto C = LinearMap<Scalar>::stacked_identity(n, {Scalar(1), Scalar(-1), Scalar(1)});
  auto run = reduced_hpe_run<Scalar>(produce, refine, C, w0, detail::hpe_config(sigma, opts), iters,
                                     opts.monitor, objective, observer);
  out.trace = std::move(run.trace);
  out.w = std::move(run.u);
  if (iters > 0) {
    out.x1 = run.last.u_tilde.head(n);
    out.x = run.last.u_tilde.segment(n, n);
  } else {
    out.x = out.x1 = out.w;
  }
  return out;
}

/// Inexact Chambolle-Pock for 0 in A1 x + K^* A2 K x: full-space HPE on
/// u = (x, y) with M = [[I/tau, -K^*], [-K, I/theta]] and
/// v = (tau a + tau K^* y, y - y~). `A1` must have stepsize tau;
/// `J_thetaA2inv` is the exact resolvent of theta A2^{-1}.
template <typename Scalar>
MethodResult<Scalar> inexact_cp_run(ResolventOracle<Scalar>& A1, const LinearMap<Scalar>& K,
                                    const VectorMap<Scalar>& J_thetaA2inv, const CpParams<Scalar>& p,
                                    const Vec<Scalar>& x0, const Vec<Scalar>& y0, std::size_t iters,
                                    const MethodOptions<Scalar>& opts = {}) {
  p.validate();
  detail::require_step(A1, p.tau, "inexact_cp_run");
  const Index n = K.cols();
  const Index m = K.rows();
  detail::require_size(A1.dimension(), n, "inexact_cp_run: oracle");
  detail::require_size(x0.size(), n, "inexact_cp_run: x0");
  detail::require_size(y0.size(), m, "inexact_cp_run: y0");
  const Scalar tau = p.tau;
  const Scalar theta = p.theta;

  Vec<Scalar> kty;  // K^* y^k for the current outer iteration
  auto assemble = [&](const Vec<Scalar>& u, CertifiedPair<Scalar>& pair) {
    const Vec<Scalar>& xt = A1.point();
    const Vec<Scalar>& a = A1.witness();
    const Vec<Scalar> y = u.tail(m);
    const Vec<Scalar> yt = J_thetaA2inv(Vec<Scalar>(y + theta * K.apply(Vec<Scalar>(xt - tau * (a + kty)))));
    pair.u_tilde = detail::stack<Scalar>(xt, yt);
    pair.witness = detail::stack<Scalar>(Vec<Scalar>(tau * (a + kty)), Vec<Scalar>(y - yt));
    pair.inner_iterations = static_cast<std::size_t>(A1.inner_iterations());
    pair.exact = A1.exact();
  };
  PairProducer<Scalar> produce = [&](const Vec<Scalar>& u, Scalar) {
    kty = K.apply_adjoint(Vec<Scalar>(u.tail(m)));
    A1.propose(Vec<Scalar>(u.head(n) - tau * kty));
    CertifiedPair<Scalar> pair;
    assemble(u, pair);
    return pair;
  };
  PairRefiner<Scalar> refine = [&](const Vec<Scalar>& u, Scalar, CertifiedPair<Scalar>& pair) {
    A1.refine(opts.refine_steps);
    assemble(u, pair);
  };

  MethodResult<Scalar> out;
  PairObjective<Scalar> objective;
  if (opts.objective)
    objective = [&](const CertifiedPair<Scalar>&, const Vec<Scalar>& next) {
      return opts.objective(Vec<Scalar>(next.head(n)));
    };
  StepObserver<Scalar> observer;
  if (opts.record_iterates)
    observer = [&](std::size_t, const Vec<Scalar>&, const CertifiedPair<Scalar>&, const Vec<Scalar>& next) {
      out.iterates.push_back(next);
    };

  const auto P = primal_dual_preconditioner(K, tau, theta);
  auto run = hpe_run<Scalar>(produce, refine, detail::stack<Scalar>(x0, y0), P,
                             detail::hpe_config(p.sigma, opts), iters, opts.monitor, objective, observer);
  out.trace = std::move(run.trace);
  out.x = run.u.head(n);
  out.y = run.u.tail(m);
  return out;
}

/// Inexact Davis-Yin for 0 in A1 x + A2 x + B x with B 1/beta-cocoercive.
/// Driven as a reduced HPE iteration in w = (1 + alpha) w~ with
/// C = [I; -I; I], u~ = (x~1, x~2, alpha x~1 + tau a1 + 2 x~2 - x~1),
/// z = x~1 - x~2 and tau = (1 + alpha) gamma. `A1` must have stepsize
/// gamma; `J_gammaA2` is the exact resolvent of gamma A2; an empty `B`
/// means B = 0. `w0` and the recorded iterates are in the w~ variable.
template <typename Scalar>
MethodResult<Scalar> inexact_dy_run(ResolventOracle<Scalar>& A1, const VectorMap<Scalar>& J_gammaA2,
                                    const VectorMap<Scalar>& B, const DyParams<Scalar>& p,
                                    const Vec<Scalar>& w0, std::size_t iters,
                                    const MethodOptions<Scalar>& opts = {}) {
  p.validate();
  detail::require_step(A1, p.gamma, "inexact_dy_run");
  detail::require_size(w0.size(), A1.dimension(), "inexact_dy_run");
  const Index n = w0.size();
  const Scalar gamma = p.gamma;
  const Scalar alpha = p.alpha;
  const Scalar scale = Scalar(1) + alpha;
  const Scalar tau = scale * gamma;

  auto assemble = [&](CertifiedPair<Scalar>& pair) {
    const Vec<Scalar>& x1 = A1.point();
    const Vec<Scalar> ga1 = gamma * A1.witness();
    Vec<Scalar> arg = x1 - ga1;
    if (B) arg -= gamma * B(x1);
    const Vec<Scalar> x2 = J_gammaA2(arg);
    pair.u_tilde = detail::stack<Scalar>(x1, x2, alpha * x1 + tau * A1.witness() + Scalar(2) * x2 - x1);
    pair.witness = x1 - x2;
    pair.inner_iterations = static_cast<std::size_t>(A1.inner_iterations());
    pair.exact = A1.exact();
  };
  PairProducer<Scalar> produce = [&](const Vec<Scalar>& w, Scalar) {
    A1.propose(Vec<Scalar>(w / scale));
    CertifiedPair<Scalar> pair;
    assemble(pair);
    return pair;
  };
  PairRefiner<Scalar> refine = [&](const Vec<Scalar>&, Scalar, CertifiedPair<Scalar>& pair) {
    A1.refine(opts.refine_steps);
    assemble(pair);
  };

  MethodResult<Scalar> out;
  PairObjective<Scalar> objective;
  if (opts.objective)
    objective = [&](const CertifiedPair<Scalar>& pair, const Vec<Scalar>&) {
      return opts.objective(Vec<Scalar>(pair.u_tilde.segment(n, n)));
    };
  StepObserver<Scalar> observer;
  if (opts.record_iterates)
    observer = [&](std::size_t, const Vec<Scalar>&, const CertifiedPair<Scalar>&, const Vec<Scalar>& next) {
      out.iterates.push_back(next / scale);
    };

  RunMonitor<Scalar> monitor = opts.monitor;
  if (monitor.reference) *monitor.reference *= scale;
  const auto C = LinearMap<Scalar>::stacked_identity(n, {Scalar(1), Scalar(-1), Scalar(1)});
  auto run = reduced_hpe_run<Scalar>(produce, refine, C, Vec<Scalar>(scale * w0),
                                     detail::hpe_config(p.sigma, opts), iters, monitor, objective, observer);
  out.trace = std::move(run.trace);
  out.w = run.u / scale;
  if (iters > 0) {
    out.x1 = run.last.u_tilde.head(n);
    out.x = run.last.u_tilde.segment(n, n);
  } else {
    out.x = out.x1 = out.w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines for 1/2 ||Hx - f||^2 + lam ||Dx||_1
// ---------------------------------------------------------------------------

/// Chambolle-Pock with the least-squares resolvent solved by warm-started CG
/// to a fixed relative tolerance:
///   x+ = (I + tau H^T H)^{-1} (x - tau (D^T y - H^T f)),
///   y+ = clip(y + theta D (2 x+ - x), lam).
template <typename Scalar>
MethodResult<Scalar> implicit_cp_run(const LinearMap<Scalar>& H, const Vec<Scalar>& f,
                                     const LinearMap<Scalar>& D, Scalar lam, const CpParams<Scalar>& p,
                                     Scalar cg_tol, const Vec<Scalar>& x0, const Vec<Scalar>& y0,
                                     std::size_t iters, const MethodOptions<Scalar>& opts = {}) {
  p.validate();
  detail::require_size(x0.size(), H.cols(), "implicit_cp_run: x0");
  detail::require_size(y0.size(), D.rows(), "implicit_cp_run: y0");
  LsqResolvent<Scalar> resolvent(H, f, p.tau);
  resolvent.set_warm_start(x0);

  MethodResult<Scalar> out;
  detail::PlainRecorder<Scalar> recorder(opts, iters, out);
  Vec<Scalar> x = x0;
  Vec<Scalar> y = y0;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vec<Scalar> x_next = resolvent.solve(Vec<Scalar>(x - p.tau * D.apply_adjoint(y)), cg_tol);
    y = clip(Vec<Scalar>(y + p.theta * D.apply(Vec<Scalar>(Scalar(2) * x_next - x))), lam);
    x = x_next;
    recorder.record(k, x, static_cast<std::size_t>(resolvent.inner_iterations()),
                    opts.record_iterates ? detail::stack(x, y) : Vec<Scalar>());
  }
  out.x = std::move(x);
  out.y = std::move(y);
  return out;
}

/// Chambolle-Pock after dualizing both H and D (no linear solves), with
/// ||K~|| = sqrt(||H||^2 + ||D||^2), tau = 1 / (||K~|| kappa), theta = kappa / ||K~||:
///   x+ = x - tau (H^T u + D^T v),
///   u+ = (u + theta (H (2 x+ - x) - f)) / (1 + theta),
///   v+ = clip(v + theta D (2 x+ - x), lam).
/// `y0` holds (u0, v0) stacked; the result's y holds (u, v).
template <typename Scalar>
MethodResult<Scalar> explicit_cp_run(const LinearMap<Scalar>& H, const Vec<Scalar>& f,
                                     const LinearMap<Scalar>& D, Scalar lam, Scalar kappa,
                                     const Vec<Scalar>& x0, const Vec<Scalar>& u0, const Vec<Scalar>& v0,
                                     std::size_t iters, Scalar h_norm, Scalar d_norm = Scalar(2),
                                     const MethodOptions<Scalar>& opts = {}) {
  if (!(kappa > Scalar(0))) throw std::invalid_argument("explicit_cp_run: kappa must be positive");
  if (h_norm < Scalar(0) || d_norm < Scalar(0))
    throw std::invalid_argument("explicit_cp_run: operator norms must be nonnegative");
  detail::require_size(x0.size(), H.cols(), "explicit_cp_run: x0");
  detail::require_size(u0.size(), H.rows(), "explicit_cp_run: u0");
  detail::require_size(v0.size(), D.rows(), "explicit_cp_run: v0");
  const Scalar k_norm = std::sqrt(h_norm * h_norm + d_norm * d_norm);
  if (!(k_norm > Scalar(0))) throw std::invalid_argument("explicit_cp_run: zero operator");
  const Scalar tau = Scalar(1) / (k_norm * kappa);
  const Scalar theta = kappa / k_norm;

  MethodResult<Scalar> out;
  detail::PlainRecorder<Scalar> recorder(opts, iters, out);
  Vec<Scalar> x = x0;
  Vec<Scalar> u = u0;
  Vec<Scalar> v = v0;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vec<Scalar> x_next = x - tau * (H.apply_adjoint(u) + D.apply_adjoint(v));
    const Vec<Scalar> bar = Scalar(2) * x_next - x;
    u = (u + theta * (H.apply(bar) - f)) / (Scalar(1) + theta);
    v = clip(Vec<Scalar>(v + theta * D.apply(bar)), lam);
    x = x_next;
    recorder.record(k, x, 0, opts.record_iterates ? detail::stack(x, u, v) : Vec<Scalar>());
  }
  out.x = std::move(x);
  out.y = detail::stack(u, v);
  return out;
}

/// Condat-Vu with a forward step on the data term:
///   x+ = x - tau (H^T (H x - f) + D^T y),   y+ = clip(y + theta D (2 x+ - x), lam),
/// requiring 0 < tau < 2 / ||H||^2 and 0 < theta < (1/tau - ||H||^2 / 2) / ||D||^2.
/// `printed_sign` flips the sign of D^T y in the x-update to the printed form.
template <typename Scalar>
MethodResult<Scalar> condat_vu_run(const LinearMap<Scalar>& H, const Vec<Scalar>& f,
                                   const LinearMap<Scalar>& D, Scalar lam, Scalar tau, Scalar theta,
                                   const Vec<Scalar>& x0, const Vec<Scalar>& y0, std::size_t iters,
                                   Scalar h_norm, Scalar d_norm = Scalar(2), bool printed_sign = false,
                                   const MethodOptions<Scalar>& opts = {}) {
  if (!(tau > Scalar(0)) || (h_norm > Scalar(0) && !(tau < Scalar(2) / (h_norm * h_norm))))
    throw std::invalid_argument("condat_vu_run: tau must lie in (0, 2 / ||H||^2)");
  const Scalar theta_max = (Scalar(1) / tau - h_norm * h_norm / Scalar(2)) / (d_norm * d_norm);
  if (!(theta > Scalar(0)) || (d_norm > Scalar(0) && !(theta < theta_max)))
    throw std::invalid_argument("condat_vu_run: theta must lie in (0, (1/tau - ||H||^2/2) / ||D||^2)");
  detail::require_size(x0.size(), H.cols(), "condat_vu_run: x0");
  detail::require_size(y0.size(), D.rows(), "condat_vu_run: y0");
  const Scalar dual_sign = printed_sign ? Scalar(-1) : Scalar(1);

  MethodResult<Scalar> out;
  detail::PlainRecorder<Scalar> recorder(opts, iters, out);
  Vec<Scalar> x = x0;
  Vec<Scalar> y = y0;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vec<Scalar> grad = H.apply_adjoint(Vec<Scalar>(H.apply(x) - f));
    const Vec<Scalar> x_next = x - tau * (grad + dual_sign * D.apply_adjoint(y));
    y = clip(Vec<Scalar>(y + theta * D.apply(Vec<Scalar>(Scalar(2) * x_next - x))), lam);
    x = x_next;
    recorder.record(k, x, 0, opts.record_iterates ? detail::stack(x, y) : Vec<Scalar>());
  }
  out.x = std::move(x);
  out.y = std::move(y);
  return out;
}

// ---------------------------------------------------------------------------
// Baselines for 1/2 ||Hx - f||^2 + lam1 ||x||_1 + lam2 L_delta(Dx)
// ---------------------------------------------------------------------------

/// Davis-Yin with the least-squares resolvent solved by warm-started CG to a
/// fixed relative tolerance:
///   x1 = (I + gamma H^T H)^{-1} (w + gamma H^T f),
///   x2 = soft(2 x1 - w - gamma lam2 D^T grad L_delta(D x1), gamma lam1),
///   w+ = w + (x2 - x1) / (1 + alpha).
template <typename Scalar>
MethodResult<Scalar> implicit_dy_run(const LinearMap<Scalar>& H, const Vec<Scalar>& f,
                                     const LinearMap<Scalar>& D, Scalar lam1, Scalar lam2, Scalar delta,
                                     const DyParams<Scalar>& p, Scalar cg_tol, const Vec<Scalar>& w0,
                                     std::size_t iters, const MethodOptions<Scalar>& opts = {}) {
  p.validate();
  if (lam1 < Scalar(0) || lam2 < Scalar(0))
    throw std::invalid_argument("implicit_dy_run: regularization weights must be nonnegative");
  detail::require_size(w0.size(), H.cols(), "implicit_dy_run: w0");
  const auto B = huber_tv_gradient(D, lam2, delta);
  LsqResolvent<Scalar> resolvent(H, f, p.gamma);
  resolvent.set_warm_start(w0);

  MethodResult<Scalar> out;
  detail::PlainRecorder<Scalar> recorder(opts, iters, out);
  Vec<Scalar> w = w0;
  Vec<Scalar> x1 = w0;
  Vec<Scalar> x2 = w0;
  for (std::size_t k = 0; k < iters; ++k) {
    x1 = resolvent.solve(w, cg_tol);
    x2 = soft_threshold(Vec<Scalar>(Scalar(2) * x1 - w - p.gamma * B(x1)), p.gamma * lam1);
    w += (x2 - x1) / (Scalar(1) + p.alpha);
    recorder.record(k, x2, static_cast<std::size_t>(resolvent.inner_iterations()), w);
  }
  out.w = std::move(w);
  out.x1 = std::move(x1);
  out.x = std::move(x2);
  return out;
}

/// Forward-backward with gamma = 1 / (||H||^2 + 4 lam2):
///   x+ = soft(x - gamma (H^T (H x - f) + lam2 D^T grad L_delta(D x)), gamma lam1).
template <typename Scalar>
MethodResult<Scalar> fb_run(const LinearMap<Scalar>& H, const Vec<Scalar>& f, const LinearMap<Scalar>& D,
                            Scalar lam1, Scalar lam2, Scalar delta, const Vec<Scalar>& x0,
                            std::size_t iters, Scalar h_norm, const MethodOptions<Scalar>& opts = {}) {
  if (lam1 < Scalar(0) || lam2 < Scalar(0))
    throw std::invalid_argument("fb_run: regularization weights must be nonnegative");
  const Scalar beta = h_norm * h_norm + Scalar(4) * lam2;
  if (!(beta > Scalar(0))) throw std::invalid_argument("fb_run: vanishing smooth part");
  detail::require_size(x0.size(), H.cols(), "fb_run: x0");
  const Scalar gamma = Scalar(1) / beta;
  const auto B = huber_tv_gradient(D, lam2, delta);

  MethodResult<Scalar> out;
  detail::PlainRecorder<Scalar> recorder(opts, iters, out);
  Vec<Scalar> x = x0;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vec<Scalar> grad = H.apply_adjoint(Vec<Scalar>(H.apply(x) - f)) + B(x);
    x = soft_threshold(Vec<Scalar>(x - gamma * grad), gamma * lam1);
    recorder.record(k, x, 0, x);
  }
  out.x = std::move(x);
  return out;
}

}  // namespace dhpe
