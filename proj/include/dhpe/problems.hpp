#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>

#include "dhpe/linalg.hpp"

namespace dhpe {

/// Singular value profiles of the generated forward operators:
///   cosine: s_i = 1/2 + 1/2 cos(pi (i-1)/(r-1)),
///   power5: s_i = (1 - (i-1)/(r-1))^5,
/// for i = 1..r, r = min(m, n). Both run from 1 down to exactly 0.
enum class SpectrumKind { cosine, power5 };

std::string to_string(SpectrumKind kind);
SpectrumKind parse_spectrum_kind(const std::string& name);

Eigen::VectorXd spectrum(Index count, SpectrumKind kind);

/// Factors of H = U diag(s) V^T with U (m x r), V (n x r) orthonormal columns.
struct IllcondFactors {
  Eigen::MatrixXd U;
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd V;
};

/// Orthonormal factors from Householder QR of seeded standard-Gaussian
/// matrices, with column signs fixed so that R has a positive diagonal.
IllcondFactors gen_illcond_factors(Index m, Index n, SpectrumKind kind, std::uint64_t seed);

/// Dense H = U diag(s) V^T; deterministic per seed.
LinearMap<double> gen_illcond_matrix(Index m, Index n, SpectrumKind kind, std::uint64_t seed);

/// (n-1) x n first differences, (D x)_i = x_{i+1} - x_i.
LinearMap<double> gen_diff_matrix(Index n);

struct SignalAndData {
  Eigen::VectorXd x_true;
  Eigen::VectorXd f;
  double noise_std = 0.0;
};

/// Piecewise constant x_true with `jumps` breakpoints (segment levels standard
/// normal), floor(sparsity * segments) segments set to zero, and
/// f = H x_true + noise. A negative noise_std selects 0.05 ||H x_true||_inf.
/// H applications made here are not charged to H's counters.
SignalAndData gen_signal_and_data(const LinearMap<double>& H, std::uint64_t seed, Index jumps,
                                  double sparsity, double noise_std = -1.0);

/// 1/2 ||Hx - f||^2 + lam ||Dx||_1
double objective_cp(const LinearMap<double>& H, const Eigen::VectorXd& f, const LinearMap<double>& D,
                    double lam, const Eigen::VectorXd& x);

/// 1/2 ||Hx - f||^2 + lam1 ||x||_1 + lam2 L_delta(Dx)
double objective_dy(const LinearMap<double>& H, const Eigen::VectorXd& f, const LinearMap<double>& D,
                    double lam1, double lam2, double delta, const Eigen::VectorXd& x);

enum class ProblemFamily { cp, dy };

std::string to_string(ProblemFamily family);
ProblemFamily parse_problem_family(const std::string& name);

/// A generated instance of either experiment family:
///   cp: 1/2 ||Hx - f||^2 + lam ||Dx||_1,
///   dy: 1/2 ||Hx - f||^2 + lam1 ||x||_1 + lam2 L_delta(Dx).
struct ProblemInstance {
  ProblemFamily family = ProblemFamily::cp;
  Index m = 0;
  Index n = 0;
  std::uint64_t seed = 0;
  SpectrumKind spectrum_kind = SpectrumKind::cosine;
  Index jumps = 10;
  double sparsity = 0.5;
  double noise_std = 0.0;
  double lam = 0.0;
  double lam1 = 0.0;
  double lam2 = 0.0;
  double delta = 0.01;

  LinearMap<double> H;
  LinearMap<double> D;
  Eigen::VectorXd f;
  Eigen::VectorXd x_true;

  /// Objective of the instance's family at x (uncounted H/D applications).
  double objective(const Eigen::VectorXd& x) const;

  /// Writes manifest.json plus raw little-endian float64 arrays
  /// (H.bin column-major, f.bin, x_true.bin) into `dir`.
  void save(const std::filesystem::path& dir) const;
  static ProblemInstance load(const std::filesystem::path& dir);
};

struct InstanceSpec {
  ProblemFamily family = ProblemFamily::cp;
  Index m = 200;
  Index n = 200;
  std::uint64_t seed = 1;
  SpectrumKind spectrum_kind = SpectrumKind::cosine;
  Index jumps = 10;
  double sparsity = 0.5;
  double noise_std = -1.0;
  double lam = 1.0;
  double lam1 = 0.001;
  double lam2 = 0.1;
  double delta = 0.01;
};

ProblemInstance make_instance(const InstanceSpec& spec);

}  // namespace dhpe
