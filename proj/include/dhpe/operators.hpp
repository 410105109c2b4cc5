#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include "dhpe/errors.hpp"
#include "dhpe/linalg.hpp"

namespace dhpe {

// ---------------------------------------------------------------------------
// Closed-form proximal maps
// ---------------------------------------------------------------------------

/// Componentwise sign(x) * max(|x| - eta, 0); the prox of eta * ||.||_1.
template <typename Derived>
Vec<typename Derived::Scalar> soft_threshold(const Eigen::MatrixBase<Derived>& x,
                                             typename Derived::Scalar eta) {
  using Scalar = typename Derived::Scalar;
  if (eta < Scalar(0)) throw std::invalid_argument("soft_threshold: negative threshold");
  // sign(0) = 0, which also keeps an input of exactly zero at zero.
  return (x.array().sign() * (x.array().abs() - eta).max(Scalar(0))).matrix();
}

/// Componentwise projection onto [-lam, lam].
template <typename Derived>
Vec<typename Derived::Scalar> clip(const Eigen::MatrixBase<Derived>& x,
                                   typename Derived::Scalar lam) {
  using Scalar = typename Derived::Scalar;
  if (lam < Scalar(0)) throw std::invalid_argument("clip: negative bound");
  return x.array().max(-lam).min(lam).matrix();
}

/// Resolvent of theta * A2^{-1} for A2 = lam * d||.||_1, i.e. the projection
/// onto the lam-box, which does not depend on theta.
template <typename Scalar = double>
std::function<Vec<Scalar>(const Vec<Scalar>&, Scalar)> box_dual_resolvent(Scalar lam) {
  if (lam < Scalar(0)) throw std::invalid_argument("box_dual_resolvent: negative bound");
  return [lam](const Vec<Scalar>& x, Scalar theta) -> Vec<Scalar> {
    if (!(theta > Scalar(0))) throw std::invalid_argument("box_dual_resolvent: theta must be positive");
    return clip(x, lam);
  };
}

template <typename Scalar>
void require_huber_delta(Scalar delta) {
  if (!(delta > Scalar(0))) throw std::invalid_argument("huber: delta must be positive");
}

/// Huber loss sum_i h_delta(y_i).
template <typename Derived>
typename Derived::Scalar huber_value(const Eigen::MatrixBase<Derived>& y,
                                     typename Derived::Scalar delta) {
  using Scalar = typename Derived::Scalar;
  require_huber_delta(delta);
  const auto a = y.array().abs();
  return (a <= delta).select(Scalar(0.5) * a.square(), delta * (a - Scalar(0.5) * delta)).sum();
}

/// Gradient of the Huber loss: y_i inside [-delta, delta], delta * sign(y_i) outside.
template <typename Derived>
Vec<typename Derived::Scalar> huber_gradient(const Eigen::MatrixBase<Derived>& y,
                                             typename Derived::Scalar delta) {
  require_huber_delta(delta);
  return y.array().max(-delta).min(delta).matrix();
}

struct HuberParams {
  double delta = 0.01;
  double lambda2 = 0.1;

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("HuberParams: delta must be positive");
    if (!(lambda2 > 0.0)) throw std::invalid_argument("HuberParams: lambda2 must be positive");
  }
};

// ---------------------------------------------------------------------------
// Resolvent oracles
// ---------------------------------------------------------------------------

enum class ResolventKind { exact_closed_form, exact_linear_solve, refinable };

/// Produces pairs (x, a) with a in A x and step * a + x approximately equal
/// to a target point. The inclusion a in A x always holds exactly; only the
/// resolvent equation is approximate. Refinable oracles improve the
/// approximation in place.
template <typename Scalar = double>
class ResolventOracle {
 public:
  using Vector = Vec<Scalar>;

  virtual ~ResolventOracle() = default;

  virtual ResolventKind kind() const = 0;
  virtual Scalar step() const = 0;
  virtual Index dimension() const = 0;

  /// Fresh pair for a new target (warm-started where applicable).
  virtual void propose(const Vector& target) = 0;
  /// Improves the current pair; no-op for exact oracles.
  virtual void refine(Index steps = 1) = 0;

  virtual const Vector& point() const = 0;
  virtual const Vector& witness() const = 0;
  /// True when the pair solves the resolvent equation to working precision.
  virtual bool exact() const = 0;
  /// Inner iterations spent since the last propose().
  virtual Index inner_iterations() const = 0;
};

/// Wraps a closed-form resolvent x = J_{step A}(target); the witness is
/// a = (target - x) / step, which lies in A x by the resolvent identity.
template <typename Scalar = double>
class ClosedFormResolvent final : public ResolventOracle<Scalar> {
 public:
  using Vector = Vec<Scalar>;
  using Map = std::function<Vector(const Vector&)>;

  ClosedFormResolvent(Index dim, Scalar step, Map resolvent)
      : dim_(dim), step_(step), resolvent_(std::move(resolvent)) {
    if (!(step > Scalar(0))) throw std::invalid_argument("ClosedFormResolvent: step must be positive");
    x_ = Vector::Zero(dim);
    a_ = Vector::Zero(dim);
  }

  ResolventKind kind() const override { return ResolventKind::exact_closed_form; }
  Scalar step() const override { return step_; }
  Index dimension() const override { return dim_; }

  void propose(const Vector& target) override {
    detail::require_size(target.size(), dim_, "ClosedFormResolvent::propose");
    x_ = resolvent_(target);
    a_ = (target - x_) / step_;
  }
  void refine(Index) override {}

  const Vector& point() const override { return x_; }
  const Vector& witness() const override { return a_; }
  bool exact() const override { return true; }
  Index inner_iterations() const override { return 0; }

 private:
  Index dim_;
  Scalar step_;
  Map resolvent_;
  Vector x_;
  Vector a_;
};

template <typename Scalar = double>
struct LsqResolventOptions {
  /// Relative CG residual at which a pair counts as an exact resolvent
  /// evaluation. The default is the rounding floor of the recurrence, below
  /// which further CG steps cannot improve the true residual.
  Scalar exact_tolerance = Scalar(1e-14);
  /// CG steps taken by propose() after the warm start.
  Index initial_steps = 1;
};

/// Resolvent of step * A1 with A1 x = H^T (H x - f):
///   x = (I + step H^T H)^{-1} (target + step H^T f).
///
/// As a refinable oracle, each refine step is one CG step on that system,
/// warm-started from the previous candidate. The witness
/// a = H^T(H x - f) is kept consistent with the candidate: H^T H x is
/// recomputed from scratch at every propose() and updated with the CG step
/// otherwise, so each CG step costs one application of H and one of H^T.
template <typename Scalar = double>
class LsqResolvent final : public ResolventOracle<Scalar> {
 public:
  using Vector = Vec<Scalar>;

  LsqResolvent(LinearMap<Scalar> H, Vector f, Scalar step,
               LsqResolventOptions<Scalar> options = {})
      : H_(std::move(H)),
        f_(std::move(f)),
        step_(step),
        options_(options),
        cg_([this](const Vector& p) -> Vector {
          last_normal_ = H_.apply_adjoint(H_.apply(p));
          return p + step_ * last_normal_;
        }) {
    if (!(step > Scalar(0))) throw std::invalid_argument("LsqResolvent: step must be positive");
    detail::require_size(f_.size(), H_.rows(), "LsqResolvent: data vector");
    if (options_.exact_tolerance < Scalar(0) || options_.initial_steps < 0)
      throw std::invalid_argument("LsqResolvent: invalid options");
    htf_ = H_.apply_adjoint(f_);
    x_ = Vector::Zero(H_.cols());
    normal_x_ = Vector::Zero(H_.cols());
    a_ = -htf_;
    b_ = Vector::Zero(H_.cols());
  }

  // The CG apply callback refers to this object.
  LsqResolvent(const LsqResolvent&) = delete;
  LsqResolvent& operator=(const LsqResolvent&) = delete;

  ResolventKind kind() const override { return ResolventKind::refinable; }
  Scalar step() const override { return step_; }
  Index dimension() const override { return H_.cols(); }

  const LinearMap<Scalar>& forward_operator() const noexcept { return H_; }
  const Vector& data() const noexcept { return f_; }

  /// Warm start used by the next propose() / solve().
  void set_warm_start(const Vector& x0) {
    detail::require_size(x0.size(), dimension(), "LsqResolvent::set_warm_start");
    x_ = x0;
  }

  void propose(const Vector& target) override {
    start(target);
    refine(options_.initial_steps);
  }

  void refine(Index steps) override {
    for (Index s = 0; s < steps; ++s) {
      if (!cg_.step()) break;
      x_ = cg_.x();
      normal_x_.noalias() += cg_.last_step_size() * last_normal_;
      a_ = normal_x_ - htf_;
      ++inner_;
    }
  }

  const Vector& point() const override { return x_; }
  const Vector& witness() const override { return a_; }
  bool exact() const override {
    return cg_.residual_norm() == Scalar(0) ||
           cg_.relative_residual() <= options_.exact_tolerance;
  }
  Index inner_iterations() const override { return inner_; }

  Scalar relative_residual() const { return cg_.relative_residual(); }

  /// Fixed-tolerance solve (the classical "exact" resolvent evaluation),
  /// warm-started from the current candidate. Throws numerical_error when
  /// `cap` CG steps do not reach `tol`.
  const Vector& solve(const Vector& target, Scalar tol, Index cap = 0) {
    if (!(tol > Scalar(0))) throw std::invalid_argument("LsqResolvent::solve: tol must be positive");
    if (cap <= 0) cap = 10 * dimension();
    start(target);
    while (cg_.relative_residual() > tol) {
      if (inner_ >= cap)
        throw numerical_error("least-squares resolvent: CG did not reach tolerance within " +
                              std::to_string(cap) + " iterations");
      const Index before = inner_;
      refine(1);
      if (inner_ == before) break;  // residual exactly zero or stalled
    }
    return x_;
  }

 private:
  void start(const Vector& target) {
    detail::require_size(target.size(), dimension(), "LsqResolvent::propose");
    b_ = target + step_ * htf_;
    normal_x_ = H_.apply_adjoint(H_.apply(x_));
    a_ = normal_x_ - htf_;
    Vector r = b_ - x_ - step_ * normal_x_;
    cg_.start(x_, std::move(r), b_.norm());
    inner_ = 0;
  }

  LinearMap<Scalar> H_;
  Vector f_;
  Scalar step_;
  LsqResolventOptions<Scalar> options_;
  ConjugateGradient<Scalar> cg_;
  Vector htf_;
  Vector x_;
  Vector normal_x_;  // H^T H x_
  Vector a_;
  Vector b_;
  Vector last_normal_;
  Index inner_ = 0;
};

/// (I + tau H^T H)^{-1} (rhs + tau H^T f) to relative residual cg_tol,
/// warm-started from x0 (zero when empty).
template <typename Scalar>
Vec<Scalar> lsq_resolvent_exact(const LinearMap<Scalar>& H, const Vec<Scalar>& f, Scalar tau,
                                const Vec<Scalar>& rhs, Scalar cg_tol,
                                const Vec<Scalar>& x0 = Vec<Scalar>()) {
  LsqResolvent<Scalar> oracle(H, f, tau);
  if (x0.size() > 0) oracle.set_warm_start(x0);
  return oracle.solve(rhs, cg_tol);
}

template <typename Scalar>
struct RefinedPair {
  Vec<Scalar> x_tilde;
  Vec<Scalar> a;
};

/// Advances a refinable oracle by `steps` inner iterations.
template <typename Scalar>
RefinedPair<Scalar> lsq_refine(ResolventOracle<Scalar>& oracle, Index steps) {
  if (oracle.kind() != ResolventKind::refinable)
    throw std::invalid_argument("lsq_refine: oracle is not refinable");
  oracle.refine(steps);
  return {oracle.point(), oracle.witness()};
}

}  // namespace dhpe
