#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "dhpe/linalg.hpp"
#include "dhpe/random.hpp"

namespace dhpe::testing {

/// Random SPD matrix Q diag(eigs) Q^T with eigenvalues spread over [lo, hi].
inline Eigen::MatrixXd random_spd(Index n, std::uint64_t seed, double lo = 1.0, double hi = 100.0) {
  GaussianStream rng(seed);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(rng.matrix(n, n));
  const Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd eigs = Eigen::VectorXd::LinSpaced(n, lo, hi);
  return Q * eigs.asDiagonal() * Q.transpose();
}

inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Largest singular value from a dense SVD.
inline double svd_norm(const Eigen::MatrixXd& A) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
}

}  // namespace dhpe::testing
