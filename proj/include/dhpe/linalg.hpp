#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dhpe/errors.hpp"
#include "dhpe/random.hpp"

namespace dhpe {

using Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

inline void require_size(Index got, Index want, const char* what) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (got " +
                                std::to_string(got) + ", expected " +
                                std::to_string(want) + ")");
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
  return v.allFinite();
}

}  // namespace detail

/// Finite-dimensional linear operator with forward and adjoint application.
///
/// The operator data is immutable and shared between copies. Application
/// counters are shared as well: a copy is another handle to the same
/// operator instance, so work done through any handle is accounted in one
/// place. Use with_fresh_counters() for an independently counted handle.
template <typename Scalar = double>
class LinearMap {
 public:
  using Vector = Vec<Scalar>;
  using Matrix = Mat<Scalar>;
  using Apply = std::function<Vector(const Vector&)>;

  LinearMap() : LinearMap(0, 0, {}, {}) {}

  static LinearMap dense(Matrix matrix) {
    auto data = std::make_shared<const Matrix>(std::move(matrix));
    LinearMap map(
        data->rows(), data->cols(),
        [data](const Vector& x) -> Vector { return *data * x; },
        [data](const Vector& y) -> Vector { return data->transpose() * y; });
    map.dense_ = data;
    return map;
  }

  static LinearMap from_functions(Index rows, Index cols, Apply forward, Apply adjoint) {
    return LinearMap(rows, cols, std::move(forward), std::move(adjoint));
  }

  static LinearMap identity(Index n) {
    return LinearMap(
        n, n, [](const Vector& x) -> Vector { return x; },
        [](const Vector& y) -> Vector { return y; });
  }

  /// Vertical stack of scaled identities [c0 I; c1 I; ...], each block n x n.
  static LinearMap stacked_identity(Index n, std::vector<Scalar> coeffs) {
    const auto blocks = static_cast<Index>(coeffs.size());
    auto c = std::make_shared<const std::vector<Scalar>>(std::move(coeffs));
    return LinearMap(
        blocks * n, n,
        [c, n, blocks](const Vector& x) -> Vector {
          Vector out(blocks * n);
          for (Index b = 0; b < blocks; ++b) out.segment(b * n, n) = (*c)[b] * x;
          return out;
        },
        [c, n, blocks](const Vector& y) -> Vector {
          Vector out = (*c)[0] * y.head(n);
          for (Index b = 1; b < blocks; ++b) out += (*c)[b] * y.segment(b * n, n);
          return out;
        });
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }

  Vector apply(const Vector& x) const {
    detail::require_size(x.size(), cols_, "LinearMap::apply");
    ++counts_->forward;
    return (*forward_)(x);
  }

  Vector apply_adjoint(const Vector& y) const {
    detail::require_size(y.size(), rows_, "LinearMap::apply_adjoint");
    ++counts_->adjoint;
    return (*adjoint_)(y);
  }

  std::size_t forward_count() const noexcept { return counts_->forward; }
  std::size_t adjoint_count() const noexcept { return counts_->adjoint; }
  std::size_t total_count() const noexcept { return counts_->forward + counts_->adjoint; }
  void reset_counters() const noexcept { *counts_ = Counts{}; }

  LinearMap with_fresh_counters() const {
    LinearMap copy = *this;
    copy.counts_ = std::make_shared<Counts>();
    return copy;
  }

  /// Dense matrix if the map was built from one, nullptr otherwise.
  const Matrix* matrix() const noexcept { return dense_.get(); }

  /// Assembles the dense matrix (uncounted).
  Matrix to_dense() const {
    if (dense_) return *dense_;
    Matrix out(rows_, cols_);
    Vector e = Vector::Zero(cols_);
    for (Index j = 0; j < cols_; ++j) {
      e(j) = Scalar(1);
      out.col(j) = (*forward_)(e);
      e(j) = Scalar(0);
    }
    return out;
  }

 private:
  struct Counts {
    std::size_t forward = 0;
    std::size_t adjoint = 0;
  };

  LinearMap(Index rows, Index cols, Apply forward, Apply adjoint)
      : rows_(rows),
        cols_(cols),
        forward_(std::make_shared<const Apply>(std::move(forward))),
        adjoint_(std::make_shared<const Apply>(std::move(adjoint))),
        counts_(std::make_shared<Counts>()) {}

  Index rows_;
  Index cols_;
  std::shared_ptr<const Apply> forward_;
  std::shared_ptr<const Apply> adjoint_;
  std::shared_ptr<const Matrix> dense_;
  std::shared_ptr<Counts> counts_;
};

/// Stopping rule for conjugate gradients. Any active criterion firing stops.
template <typename Scalar = double>
struct StoppingRule {
  using Vector = Vec<Scalar>;

  /// Relative residual ||b - Ax|| / ||b|| (absolute if b = 0).
  std::optional<Scalar> relative_tolerance;
  /// Evaluated after every CG step with the current iterate and step count.
  std::function<bool(const Vector&, Index)> predicate;
  Index max_iterations = 1;

  static StoppingRule relative(Scalar tol, Index cap) {
    StoppingRule rule;
    rule.relative_tolerance = tol;
    rule.max_iterations = cap;
    return rule;
  }

  static StoppingRule when(std::function<bool(const Vector&, Index)> pred, Index cap) {
    StoppingRule rule;
    rule.predicate = std::move(pred);
    rule.max_iterations = cap;
    return rule;
  }

  void validate() const {
    if (relative_tolerance && !(*relative_tolerance > Scalar(0)))
      throw std::invalid_argument("StoppingRule: tolerance must be positive");
    if (max_iterations < 1)
      throw std::invalid_argument("StoppingRule: iteration cap must be at least 1");
  }
};

/// Conjugate gradients on an SPD (or PSD, consistent rhs) map, advanced one
/// step at a time so that callers can interleave their own acceptance tests.
template <typename Scalar = double>
class ConjugateGradient {
 public:
  using Vector = Vec<Scalar>;
  using Apply = std::function<Vector(const Vector&)>;

  explicit ConjugateGradient(Apply apply) : apply_(std::move(apply)) {}

  /// Start from x0 with a caller-supplied residual b - A x0.
  void start(Vector x0, Vector residual, Scalar rhs_norm) {
    detail::require_size(residual.size(), x0.size(), "ConjugateGradient::start");
    x_ = std::move(x0);
    r_ = std::move(residual);
    p_ = r_;
    rr_ = r_.squaredNorm();
    rhs_norm_ = rhs_norm;
    iterations_ = 0;
    last_alpha_ = Scalar(0);
    stalled_ = false;
    if (!std::isfinite(rr_)) throw numerical_error("conjugate gradients: non-finite residual");
  }

  /// Start from x0 for the system A x = b (one application of A).
  void start(const Vector& b, Vector x0) {
    detail::require_size(x0.size(), b.size(), "ConjugateGradient::start");
    Vector r = b - apply_(x0);
    start(std::move(x0), std::move(r), b.norm());
  }

  /// One CG step. Returns false (and does nothing) when the residual is zero.
  bool step() {
    if (rr_ == Scalar(0) || stalled_) return false;
    const Vector ap = apply_(p_);
    const Scalar curvature = p_.dot(ap);
    if (!std::isfinite(curvature))
      throw numerical_error("conjugate gradients: non-finite curvature");
    if (curvature <= Scalar(0)) {
      // p lies in the (numerical) kernel; no further progress is possible.
      stalled_ = true;
      return false;
    }
    last_alpha_ = rr_ / curvature;
    x_.noalias() += last_alpha_ * p_;
    r_.noalias() -= last_alpha_ * ap;
    const Scalar rr_next = r_.squaredNorm();
    if (!std::isfinite(rr_next) || !detail::all_finite(x_))
      throw numerical_error("conjugate gradients: non-finite iterate");
    p_ = r_ + (rr_next / rr_) * p_;
    rr_ = rr_next;
    ++iterations_;
    return true;
  }

  const Vector& x() const noexcept { return x_; }
  const Vector& residual() const noexcept { return r_; }
  Scalar residual_norm() const { return std::sqrt(rr_); }
  Scalar relative_residual() const {
    return rhs_norm_ > Scalar(0) ? residual_norm() / rhs_norm_ : residual_norm();
  }
  Index iterations() const noexcept { return iterations_; }
  bool stalled() const noexcept { return stalled_; }
  Scalar last_step_size() const noexcept { return last_alpha_; }

 private:
  Apply apply_;
  Vector x_;
  Vector r_;
  Vector p_;
  Scalar rr_ = Scalar(0);
  Scalar rhs_norm_ = Scalar(0);
  Scalar last_alpha_ = Scalar(0);
  Index iterations_ = 0;
  bool stalled_ = false;
};

template <typename Scalar = double>
struct CgResult {
  Vec<Scalar> x;
  Index iterations = 0;
  Scalar relative_residual = Scalar(0);
  bool converged = false;  ///< tolerance or predicate fired (not just the cap)
};

template <typename Scalar>
CgResult<Scalar> cg_solve(const std::function<Vec<Scalar>(const Vec<Scalar>&)>& apply,
                          const Vec<Scalar>& b, Vec<Scalar> x0,
                          const StoppingRule<Scalar>& stop) {
  stop.validate();
  detail::require_size(x0.size(), b.size(), "cg_solve");
  if (!b.allFinite() || !x0.allFinite()) throw numerical_error("cg_solve: non-finite input");

  ConjugateGradient<Scalar> cg(apply);
  cg.start(b, std::move(x0));
  const auto tolerance_met = [&] {
    return stop.relative_tolerance && cg.relative_residual() <= *stop.relative_tolerance;
  };

  CgResult<Scalar> out;
  bool done = tolerance_met() || cg.residual_norm() == Scalar(0);
  while (!done && cg.iterations() < stop.max_iterations) {
    if (!cg.step()) {
      done = true;
      break;
    }
    done = tolerance_met() || (stop.predicate && stop.predicate(cg.x(), cg.iterations()));
  }
  out.x = cg.x();
  out.iterations = cg.iterations();
  out.relative_residual = cg.relative_residual();
  out.converged = done;
  return out;
}

template <typename Scalar = double>
struct SpectralNormEstimate {
  Scalar value = Scalar(0);
  Index iterations = 0;
  bool converged = false;
};

/// Power iteration on op^T op from a seeded Gaussian start. Converged when
/// the eigen-residual ||A^T A v - mu v|| falls below tol * mu.
/// The Rayleigh quotient never overestimates, so callers that need an upper
/// bound for stepsizes should apply a safety factor.
template <typename Scalar>
SpectralNormEstimate<Scalar> estimate_spectral_norm(const LinearMap<Scalar>& op,
                                                    Scalar tol = Scalar(1e-6),
                                                    Index max_iter = 1000,
                                                    std::uint64_t seed = 0x5eed) {
  if (!(tol > Scalar(0))) throw std::invalid_argument("estimate_spectral_norm: tol must be positive");
  if (op.cols() == 0 || op.rows() == 0)
    throw std::invalid_argument("estimate_spectral_norm: empty operator");

  GaussianStream rng(seed);
  Vec<Scalar> v = rng.vector<Scalar>(op.cols());
  v.normalize();

  SpectralNormEstimate<Scalar> est;
  Scalar mu = Scalar(0);
  for (Index it = 1; it <= max_iter; ++it) {
    Vec<Scalar> w = op.apply_adjoint(op.apply(v));
    mu = v.dot(w);
    const Scalar wnorm = w.norm();
    est.iterations = it;
    if (wnorm == Scalar(0)) {
      // v in the kernel; the seeded start makes this a zero operator in practice.
      est.value = Scalar(0);
      est.converged = true;
      return est;
    }
    const Scalar residual = (w - mu * v).norm();
    v = w / wnorm;
    if (residual <= tol * mu) {
      est.converged = true;
      break;
    }
  }
  est.value = std::sqrt(std::max(mu, Scalar(0)));
  return est;
}

/// Euclidean inner product check <Ax, y> vs <x, A^T y>.
template <typename Scalar>
Scalar adjoint_mismatch(const LinearMap<Scalar>& op, const Vec<Scalar>& x, const Vec<Scalar>& y) {
  const Vec<Scalar> ax = op.apply(x);
  return std::abs(ax.dot(y) - x.dot(op.apply_adjoint(y)));
}

}  // namespace dhpe
