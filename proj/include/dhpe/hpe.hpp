#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <type_traits>
#include <vector>

#include "dhpe/errors.hpp"
#include "dhpe/linalg.hpp"

namespace dhpe {

/// Self-adjoint positive semidefinite preconditioner M, optionally given
/// through an injective factor C with M = C C^*. The factor form yields the
/// seminorm as ||C^* u|| without forming M.
template <typename Scalar = double>
class Preconditioner {
 public:
  using Vector = Vec<Scalar>;
  using Apply = std::function<Vector(const Vector&)>;

  Preconditioner(Index dim, Apply apply) : dim_(dim), apply_(std::move(apply)) {}

  explicit Preconditioner(LinearMap<Scalar> factor)
      : dim_(factor.rows()), factor_(std::move(factor)) {
    apply_ = [c = *factor_](const Vector& u) -> Vector { return c.apply(c.apply_adjoint(u)); };
  }

  Index dimension() const noexcept { return dim_; }
  bool has_factor() const noexcept { return factor_.has_value(); }
  const LinearMap<Scalar>& factor() const { return factor_.value(); }

  Vector apply(const Vector& u) const {
    detail::require_size(u.size(), dim_, "Preconditioner::apply");
    return apply_(u);
  }

 private:
  Index dim_;
  Apply apply_;
  std::optional<LinearMap<Scalar>> factor_;
};

/// ||u||_M = sqrt(<u, M u>), via ||C^* u|| when the factor is known. The
/// quadratic form is clamped at zero before the square root.
template <typename Scalar>
Scalar m_seminorm(const Preconditioner<Scalar>& P, const Vec<Scalar>& u) {
  detail::require_size(u.size(), P.dimension(), "m_seminorm");
  if (P.has_factor()) return P.factor().apply_adjoint(u).norm();
  return std::sqrt(std::max(u.dot(P.apply(u)), Scalar(0)));
}

/// Preconditioner of the two-operator splitting in the product space H^3:
/// M = C C^* with C = [I; -I; I].
template <typename Scalar = double>
Preconditioner<Scalar> douglas_rachford_preconditioner(Index n, Scalar scale = Scalar(1)) {
  return Preconditioner<Scalar>(LinearMap<Scalar>::stacked_identity(n, {scale, -scale, scale}));
}

/// Primal-dual preconditioner M = [[I/tau, -K^*], [-K, I/theta]] on (x, y).
template <typename Scalar>
Preconditioner<Scalar> primal_dual_preconditioner(const LinearMap<Scalar>& K, Scalar tau,
                                                  Scalar theta) {
  if (!(tau > Scalar(0)) || !(theta > Scalar(0)))
    throw std::invalid_argument("primal_dual_preconditioner: stepsizes must be positive");
  const Index n = K.cols();
  const Index m = K.rows();
  return Preconditioner<Scalar>(n + m, [K, tau, theta, n, m](const Vec<Scalar>& u) -> Vec<Scalar> {
    Vec<Scalar> out(n + m);
    out.head(n) = u.head(n) / tau - K.apply_adjoint(u.tail(m));
    out.tail(m) = u.tail(m) / theta - K.apply(u.head(n));
    return out;
  });
}

/// Stepsize schedule lambda_k; constant 1 unless set.
template <typename Scalar = double>
using StepsizeSchedule = std::function<Scalar(std::size_t)>;

template <typename Scalar = double>
struct HpeConfig {
  Scalar sigma = Scalar(0.5);
  StepsizeSchedule<Scalar> lambda = [](std::size_t) { return Scalar(1); };
  /// Refinements allowed per outer iteration before certification fails.
  std::size_t inner_cap = 200;
  bool record_invariants = true;

  void validate() const {
    if (!(sigma >= Scalar(0) && sigma < Scalar(1)))
      throw std::invalid_argument("HpeConfig: sigma must lie in [0, 1)");
    if (!lambda) throw std::invalid_argument("HpeConfig: missing stepsize schedule");
  }

  Scalar stepsize(std::size_t k) const {
    const Scalar lam = lambda(k);
    if (!(lam > Scalar(0)) || !std::isfinite(lam))
      throw std::invalid_argument("HpeConfig: stepsizes must be positive and finite");
    return lam;
  }
};

/// Candidate point u~ with witness (v in the full form, z in the reduced
/// form) and the two sides of the relative-error test.
template <typename Scalar = double>
struct CertifiedPair {
  Vec<Scalar> u_tilde;
  Vec<Scalar> witness;
  Scalar lhs = Scalar(0);
  Scalar rhs = Scalar(0);
  std::size_t inner_iterations = 0;
  /// The producer certifies the resolvent equation holds to working
  /// precision, the floating-point stand-in for a zero left-hand side.
  bool exact = false;
};

template <typename Scalar = double>
struct TraceRecord {
  std::size_t k = 0;
  Scalar objective = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar lhs = Scalar(0);
  Scalar rhs = Scalar(0);
  std::size_t inner_iterations = 0;
  std::size_t h_applications = 0;  ///< cumulative
  Scalar seminorm_step = Scalar(0);      ///< ||u~^{k+1} - u^k||_M
  Scalar seminorm_residual = Scalar(0);  ///< ||lambda v^{k+1}||_M
  /// ||u^{k+1} - u*||_M when a reference point was supplied, NaN otherwise.
  Scalar distance_to_reference = std::numeric_limits<Scalar>::quiet_NaN();
  double wall_ms = 0.0;
};

template <typename Scalar = double>
struct RunTrace {
  std::vector<TraceRecord<Scalar>> records;
  Scalar sigma = Scalar(0);
  /// ||u^0 - u*||_M, NaN without reference.
  Scalar initial_distance = std::numeric_limits<Scalar>::quiet_NaN();
  bool hpe = false;  ///< records carry relative-error data
};

/// Per-run hooks shared by every method.
template <typename Scalar = double>
struct RunMonitor {
  /// Work counter sampled after each outer iteration (typically H/H^T applications).
  std::function<std::size_t()> work;
  /// Point in the method's HPE variables to measure Fejer distances against.
  std::optional<Vec<Scalar>> reference;
  bool wall_time = false;
};

template <typename Scalar = double>
struct ErrorCheck {
  bool accepted = false;
  Scalar lhs = Scalar(0);
  Scalar rhs = Scalar(0);
};

/// Relative-error test ||lam v + u~ - u||_M <= sigma ||u~ - u||_M.
/// lhs = rhs = 0 counts as accepted.
template <typename Scalar>
ErrorCheck<Scalar> hpe_error_check(const Preconditioner<Scalar>& P, Scalar lam,
                                   const Vec<Scalar>& v, const Vec<Scalar>& u_tilde,
                                   const Vec<Scalar>& u, Scalar sigma) {
  ErrorCheck<Scalar> out;
  out.lhs = m_seminorm(P, Vec<Scalar>(lam * v + u_tilde - u));
  out.rhs = m_seminorm(P, Vec<Scalar>(u_tilde - u));
  out.accepted = out.lhs <= sigma * out.rhs;
  return out;
}

/// Extragradient step u - lam v.
template <typename Scalar>
Vec<Scalar> hpe_update(const Vec<Scalar>& u, Scalar lam, const Vec<Scalar>& v) {
  detail::require_size(v.size(), u.size(), "hpe_update");
  return u - lam * v;
}

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <typename Scalar>
void stamp(TraceRecord<Scalar>& rec, const RunMonitor<Scalar>& mon, const Stopwatch& clock) {
  rec.h_applications = mon.work ? mon.work() : 0;
  rec.wall_ms = mon.wall_time ? clock.elapsed_ms() : 0.0;
}

}  // namespace detail

template <typename Scalar = double>
struct HpeRunResult {
  RunTrace<Scalar> trace;
  Vec<Scalar> u;  ///< final u^k (full form) or w^k (reduced form)
  CertifiedPair<Scalar> last;
};

/// Produces an initial pair for the current iterate and stepsize.
template <typename Scalar = double>
using PairProducer = std::function<CertifiedPair<Scalar>(const Vec<Scalar>&, Scalar)>;
/// Improves a pair in place while keeping its inclusion exact.
template <typename Scalar = double>
using PairRefiner = std::function<void(const Vec<Scalar>&, Scalar, CertifiedPair<Scalar>&)>;
/// Called after each accepted step with (k, previous iterate, pair, new iterate).
template <typename Scalar = double>
using StepObserver = std::function<void(std::size_t, const Vec<Scalar>&, const CertifiedPair<Scalar>&,
                                        const Vec<Scalar>&)>;
/// Objective of the primal point encoded in an accepted pair and the new iterate.
template <typename Scalar = double>
using PairObjective = std::function<Scalar(const CertifiedPair<Scalar>&, const Vec<Scalar>&)>;

namespace detail {

// Shared driver for the full and reduced forms. `measure` fills lhs/rhs and
// returns (||u~ - u||, ||lam * witness||) in the relevant (semi)norm; `update`
// maps (u, lam, witness) to the next iterate; `distance` is the Fejer
// distance to the reference point.
template <typename Scalar, typename Measure, typename Distance>
HpeRunResult<Scalar> drive_hpe(const PairProducer<Scalar>& produce, const PairRefiner<Scalar>& refine,
                               Vec<Scalar> u, const HpeConfig<Scalar>& cfg, std::size_t max_outer,
                               const RunMonitor<Scalar>& monitor, const PairObjective<Scalar>& objective,
                               const StepObserver<Scalar>& observer, Measure&& measure,
                               Distance&& distance) {
  cfg.validate();
  if (!produce) throw std::invalid_argument("HPE run: missing producer");

  HpeRunResult<Scalar> out;
  out.trace.sigma = cfg.sigma;
  out.trace.hpe = true;
  out.trace.records.reserve(max_outer);
  if (monitor.reference) out.trace.initial_distance = distance(u);

  Stopwatch clock;
  for (std::size_t k = 0; k < max_outer; ++k) {
    const Scalar lam = cfg.stepsize(k);
    CertifiedPair<Scalar> pair = produce(u, lam);
    auto [step_norm, residual_norm] = measure(pair, u, lam);
    std::size_t passes = 0;
    while (!(pair.exact || pair.lhs <= cfg.sigma * pair.rhs)) {
      if (passes >= cfg.inner_cap || !refine)
        throw certification_failure(k, static_cast<double>(pair.lhs), static_cast<double>(pair.rhs));
      refine(u, lam, pair);
      ++passes;
      std::tie(step_norm, residual_norm) = measure(pair, u, lam);
    }

    Vec<Scalar> next = u - lam * pair.witness;
    if (!next.allFinite()) throw numerical_error("HPE run: non-finite iterate");

    TraceRecord<Scalar> rec;
    rec.k = k;
    rec.lhs = pair.lhs;
    rec.rhs = pair.rhs;
    rec.inner_iterations = pair.inner_iterations;
    rec.seminorm_step = step_norm;
    rec.seminorm_residual = residual_norm;
    if (monitor.reference) rec.distance_to_reference = distance(next);
    if (observer) observer(k, u, pair, next);
    if (objective) rec.objective = objective(pair, next);
    stamp(rec, monitor, clock);
    out.trace.records.push_back(rec);

    u = std::move(next);
    out.last = std::move(pair);
  }
  out.u = std::move(u);
  return out;
}

}  // namespace detail

/// Preconditioned HPE iteration in the full space:
///   M v in A u~,  ||lam v + u~ - u||_M <= sigma ||u~ - u||_M,  u <- u - lam v.
/// The producer/refiner are responsible for the inclusion.
template <typename Scalar>
HpeRunResult<Scalar> hpe_run(const PairProducer<Scalar>& produce, const PairRefiner<Scalar>& refine,
                             const Vec<Scalar>& u0, const Preconditioner<Scalar>& P,
                             const HpeConfig<Scalar>& cfg, std::size_t max_outer,
                             const RunMonitor<Scalar>& monitor = {},
                             const PairObjective<Scalar>& objective = {},
                             const StepObserver<Scalar>& observer = {}) {
  detail::require_size(u0.size(), P.dimension(), "hpe_run");
  auto measure = [&P](CertifiedPair<Scalar>& pair, const Vec<Scalar>& u, Scalar lam) {
    const Vec<Scalar> scaled = lam * pair.witness;
    pair.lhs = m_seminorm(P, Vec<Scalar>(scaled + pair.u_tilde - u));
    pair.rhs = m_seminorm(P, Vec<Scalar>(pair.u_tilde - u));
    return std::pair<Scalar, Scalar>(pair.rhs, m_seminorm(P, scaled));
  };
  auto distance = [&P, &monitor](const Vec<Scalar>& u) {
    return m_seminorm(P, Vec<Scalar>(u - *monitor.reference));
  };
  return detail::drive_hpe(produce, refine, u0, cfg, max_outer, monitor, objective, observer,
                           measure, distance);
}

/// Reduced HPE iteration on w = C^* u (Algorithm "reduced preconditioned HPE"):
///   C z in A u~,  ||lam z + C^* u~ - w|| <= sigma ||C^* u~ - w||,  w <- w - lam z.
template <typename Scalar>
HpeRunResult<Scalar> reduced_hpe_run(const PairProducer<Scalar>& produce,
                                     const PairRefiner<Scalar>& refine, const LinearMap<Scalar>& C,
                                     const Vec<Scalar>& w0, const HpeConfig<Scalar>& cfg,
                                     std::size_t max_outer, const RunMonitor<Scalar>& monitor = {},
                                     const PairObjective<Scalar>& objective = {},
                                     const StepObserver<Scalar>& observer = {}) {
  detail::require_size(w0.size(), C.cols(), "reduced_hpe_run");
  auto measure = [&C](CertifiedPair<Scalar>& pair, const Vec<Scalar>& w, Scalar lam) {
    const Vec<Scalar> shadow = C.apply_adjoint(pair.u_tilde) - w;
    const Vec<Scalar> scaled = lam * pair.witness;
    pair.lhs = (scaled + shadow).norm();
    pair.rhs = shadow.norm();
    return std::pair<Scalar, Scalar>(pair.rhs, scaled.norm());
  };
  auto distance = [&monitor](const Vec<Scalar>& w) { return (w - *monitor.reference).norm(); };
  return detail::drive_hpe(produce, refine, w0, cfg, max_outer, monitor, objective, observer,
                           measure, distance);
}

// ---------------------------------------------------------------------------
// Fundamental-estimate audit
// ---------------------------------------------------------------------------

struct AuditOptions {
  /// Relative slack for the two-sided residual bound, scaled by ||u0 - u*||_M
  /// (or the largest step when no reference is known).
  double bound_tolerance = 1e-10;
  /// Relative slack for the Fejer and summability inequalities, scaled by
  /// ||u0 - u*||_M^2.
  double fejer_tolerance = 1e-9;
  /// Absolute ceiling for the final step seminorm; unset: only require the
  /// final step to be smaller than the first.
  std::optional<double> step_floor;
  /// Skip the "steps decrease" check (short or stationary runs).
  bool check_decay = true;
};

struct AuditReport {
  bool passed = true;
  std::size_t checked_iterations = 0;
  std::vector<std::string> violations;
  /// Largest observed ratio ||lam v||_M / ||u~ - u||_M.
  double max_residual_ratio = 0.0;
  /// Smallest observed slack of the Fejer inequality (relative to scale).
  double min_fejer_slack = std::numeric_limits<double>::infinity();

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "passed" : "FAILED") << " (" << checked_iterations << " iterations";
    if (!violations.empty()) os << ", " << violations.size() << " violations; first: " << violations.front();
    os << ")";
    return os.str();
  }
};

/// Checks the fundamental estimates on a recorded HPE trace:
///  (i)   (1 - sigma) step <= residual <= (1 + sigma) step,
///  (ii)  d_{k+1}^2 + (1 - sigma^2) step^2 <= d_k^2          (needs a reference),
///  (iii) sum step^2 <= d_0^2 / (1 - sigma^2)               (needs a reference),
///  (iv)  the step seminorm decays.
/// Distances come from the trace unless overridden by `u_star_seminorms`
/// (entry k = ||u^k - u*||_M, k = 0..K).
template <typename Scalar>
AuditReport audit_prop1(const RunTrace<Scalar>& trace, Scalar sigma,
                        const std::optional<std::vector<std::type_identity_t<Scalar>>>& u_star_seminorms = std::nullopt,
                        const AuditOptions& opts = {}) {
  AuditReport rep;
  const auto& recs = trace.records;
  rep.checked_iterations = recs.size();
  auto fail = [&rep](std::size_t k, const std::string& what, double left, double right) {
    rep.passed = false;
    std::ostringstream os;
    os.precision(17);
    os << "k=" << k << ": " << what << " (" << left << " vs " << right << ")";
    rep.violations.push_back(os.str());
  };
  if (recs.empty()) return rep;

  std::vector<double> dist;
  if (u_star_seminorms) {
    if (u_star_seminorms->size() != recs.size() + 1)
      throw std::invalid_argument("audit_prop1: need one reference distance per iterate");
    for (auto d : *u_star_seminorms) dist.push_back(static_cast<double>(d));
  } else if (!std::isnan(static_cast<double>(trace.initial_distance))) {
    dist.push_back(static_cast<double>(trace.initial_distance));
    for (const auto& r : recs) dist.push_back(static_cast<double>(r.distance_to_reference));
  }

  const double s = static_cast<double>(sigma);
  double max_step = 0.0;
  for (const auto& r : recs) max_step = std::max(max_step, static_cast<double>(r.seminorm_step));
  const double scale = dist.empty() ? max_step : std::max(dist.front(), max_step);
  const double bound_slack = opts.bound_tolerance * scale;
  const double fejer_slack = opts.fejer_tolerance * scale * scale;

  double summed = 0.0;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const double step = static_cast<double>(recs[k].seminorm_step);
    const double res = static_cast<double>(recs[k].seminorm_residual);
    if (step > 0.0) rep.max_residual_ratio = std::max(rep.max_residual_ratio, res / step);
    if ((1.0 - s) * step > res + bound_slack) fail(k, "lower residual bound", (1.0 - s) * step, res);
    if (res > (1.0 + s) * step + bound_slack) fail(k, "upper residual bound", res, (1.0 + s) * step);

    summed += step * step;
    if (!dist.empty()) {
      const double before = dist[k] * dist[k];
      const double after = dist[k + 1] * dist[k + 1] + (1.0 - s * s) * step * step;
      if (scale > 0.0) rep.min_fejer_slack = std::min(rep.min_fejer_slack, (before - after) / (scale * scale));
      if (after > before + fejer_slack) fail(k, "Fejer inequality", after, before);
    }
  }
  if (!dist.empty()) {
    const double bound = dist.front() * dist.front() / (1.0 - s * s);
    if (summed > bound + fejer_slack) fail(recs.size() - 1, "summability bound", summed, bound);
  }

  const double first = static_cast<double>(recs.front().seminorm_step);
  const double last = static_cast<double>(recs.back().seminorm_step);
  if (opts.check_decay && recs.size() > 1 && first > 0.0 && !(last < first))
    fail(recs.size() - 1, "step seminorm did not decay", last, first);
  if (opts.step_floor && !(last <= *opts.step_floor))
    fail(recs.size() - 1, "final step above floor", last, *opts.step_floor);
  return rep;
}

}  // namespace dhpe
