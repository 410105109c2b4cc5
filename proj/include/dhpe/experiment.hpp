#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dhpe/hpe.hpp"
#include "dhpe/problems.hpp"

namespace dhpe {

/// One experiment: an instance, the methods to compare and their parameters.
struct ExperimentConfig {
  std::string name = "custom";
  InstanceSpec instance;
  double sigma = 0.95;
  double kappa = 0.1;
  /// Fixed relative CG tolerance of the implicit baselines.
  double cg_tol = 1e-8;
  std::size_t iters = 1000;
  /// The reference run uses reference_factor * iters iterations.
  std::size_t reference_factor = 10;
  /// Refinement passes allowed per outer iteration of the HPE methods.
  std::size_t inner_cap = 200;
  /// Method used for the reference optimum; empty selects the family's HPE method.
  std::string reference_method;
  /// Methods to compare; empty selects every method of the family.
  std::vector<std::string> methods;
  /// Objective gap at which H/H^T application counts are compared.
  double gap_target = 1e-6;
  /// Record wall time in traces (off by default: traces stay bit-reproducible).
  bool wall_time = false;
  /// Use the printed sign of D^T y in the Condat-Vu x-update.
  bool condat_vu_printed_sign = false;
  std::string output_dir;

  void validate() const;
  std::vector<std::string> resolved_methods() const;
  std::string resolved_reference_method() const;
};

/// Methods available for a problem family, in reporting order.
std::vector<std::string> family_methods(ProblemFamily family);
std::vector<std::string> named_experiments();
bool is_named_experiment(const std::string& name);
/// Published parameters at desk scale; throws std::invalid_argument for unknown names.
ExperimentConfig named_experiment(const std::string& name);

/// Applies one `key = value` setting (config files and overrides).
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Flat `key = value` file; `#` starts a comment. An `experiment = <name>`
/// line starts from that named experiment, later lines override it.
ExperimentConfig load_config_file(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

struct MethodSummary {
  std::string name;
  std::string status = "ok";  ///< ok | certification_failure | numerical_error
  std::string message;
  RunTrace<double> trace;
  Eigen::VectorXd x;
  /// Final point in the method's HPE variables (HPE methods only).
  Eigen::VectorXd state;
  std::size_t iterations = 0;
  double final_objective = 0.0;
  double final_gap = 0.0;
  std::size_t total_h_applications = 0;
  double median_inner = 0.0;
  /// Median inner iterations over the iterations up to reaching gap_target
  /// (whole run if never reached).
  double median_inner_to_target = 0.0;
  std::optional<std::size_t> k_to_target;
  std::optional<std::size_t> h_applications_to_target;
  std::optional<AuditReport> audit;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string reference_method;
  std::size_t reference_iterations = 0;
  std::string reference_status = "ok";
  double reference_objective = 0.0;
  std::vector<MethodSummary> methods;

  bool any_certification_failure() const;
  const MethodSummary& method(const std::string& name) const;
  nlohmann::ordered_json summary_json() const;
};

/// Generates the instance, computes the reference optimum, runs every
/// method, audits HPE traces and, when config.output_dir is set, writes
/// <method>.csv, summary.json, manifest.json and instance/ there.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

inline constexpr const char* kTraceHeader = "method,k,objective_gap,lhs,rhs,inner_iters,h_apps,wall_ms";

struct TraceRow {
  std::string method;
  std::size_t k = 0;
  double objective_gap = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  std::size_t inner_iters = 0;
  std::size_t h_apps = 0;
  double wall_ms = 0.0;
};

/// CSV with kTraceHeader and one row per outer iteration, floats in %.17g.
void emit_trace(const std::string& method, const RunTrace<double>& trace, double reference_objective,
                const std::filesystem::path& path);
std::vector<TraceRow> read_trace(const std::filesystem::path& path);

struct TraceAudit {
  bool passed = true;
  std::size_t rows = 0;
  std::size_t certified_rows = 0;
  std::vector<std::string> violations;
};

/// File-level checks: consecutive k, non-decreasing h_apps, finite gaps, and
/// lhs <= sigma * rhs on every row that carries relative-error data.
TraceAudit audit_trace(const std::vector<TraceRow>& rows, double sigma);

}  // namespace dhpe
