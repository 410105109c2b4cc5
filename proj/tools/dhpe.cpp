#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dhpe/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArgument = 1;
constexpr int kExitCertification = 2;

std::string default_output_dir(const std::string& name) {
  const char* env = std::getenv("DHPE_OUTPUT_DIR");
  const std::filesystem::path base = env && *env ? env : "runs";
  return (base / name).string();
}

void print_report(const dhpe::ExperimentReport& report, const std::string& out) {
  std::printf("experiment %s: reference %s (%zu iterations, %s), objective %.12g\n",
              report.config.name.c_str(), report.reference_method.c_str(), report.reference_iterations,
              report.reference_status.c_str(), report.reference_objective);
  std::printf("%-12s %-22s %10s %14s %12s %10s %14s %s\n", "method", "status", "iters", "final_gap",
              "h_apps", "med_inner", "h_apps@target", "audit");
  for (const auto& m : report.methods) {
    const std::string at = m.h_applications_to_target ? std::to_string(*m.h_applications_to_target) : "-";
    const std::string audit = m.audit ? (m.audit->passed ? "pass" : "FAIL") : "-";
    std::printf("%-12s %-22s %10zu %14.6g %12zu %10.1f %14s %s\n", m.name.c_str(), m.status.c_str(),
                m.iterations, m.final_gap, m.total_h_applications, m.median_inner, at.c_str(), audit.c_str());
    if (!m.message.empty()) std::printf("  %s\n", m.message.c_str());
  }
  if (!out.empty()) std::printf("wrote %s\n", out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degenerate preconditioned HPE splitting methods: experiments and trace audits"};
  app.require_subcommand(1);

  std::string target;
  std::optional<long long> m, n;
  std::optional<unsigned long long> seed, iters;
  std::optional<double> sigma, kappa;
  std::string out;
  std::vector<std::string> settings;
  bool wall_time = false;
  auto* run = app.add_subcommand("run", "Run a named experiment or a key = value config file");
  run->add_option("experiment", target, "Experiment name (cp1-run1, cp1-run2, cp2, dy-run1, dy-run2, dy-run3) or config path")
      ->required();
  run->add_option("--m", m, "Rows of H")->check(CLI::Range(2LL, 1LL << 40));
  run->add_option("--n", n, "Columns of H")->check(CLI::Range(2LL, 1LL << 40));
  run->add_option("--seed", seed, "Instance seed");
  run->add_option("--iters", iters, "Outer iterations per method");
  run->add_option("--sigma", sigma, "Relative-error tolerance of the HPE methods");
  run->add_option("--kappa", kappa, "Primal-dual stepsize scale");
  run->add_option("--out", out, "Output directory (default: $DHPE_OUTPUT_DIR/<name> or runs/<name>)");
  run->add_option("--set", settings, "Extra key=value setting (repeatable)");
  run->add_flag("--wall-time", wall_time, "Record wall time in traces (breaks bit-reproducibility)");

  std::string trace_path;
  double audit_sigma = 0.0;
  auto* audit = app.add_subcommand("audit", "Check a trace CSV against the relative-error criterion");
  audit->add_option("trace", trace_path, "Trace CSV")->required();
  audit->add_option("--sigma", audit_sigma, "Relative-error tolerance")->required()->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitArgument;
  }

  if (*run) {
    dhpe::ExperimentConfig cfg;
    try {
      if (dhpe::is_named_experiment(target)) {
        cfg = dhpe::named_experiment(target);
      } else if (std::filesystem::is_regular_file(target)) {
        cfg = dhpe::load_config_file(target);
        if (cfg.name == "custom") cfg.name = std::filesystem::path(target).stem().string();
      } else {
        std::cerr << "error: '" << target << "' is neither a named experiment nor a config file\n";
        return kExitArgument;
      }
      for (const auto& s : settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        dhpe::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
      if (m) cfg.instance.m = *m;
      if (n) cfg.instance.n = *n;
      if (seed) cfg.instance.seed = *seed;
      if (iters) cfg.iters = *iters;
      if (sigma) cfg.sigma = *sigma;
      if (kappa) cfg.kappa = *kappa;
      if (wall_time) cfg.wall_time = true;
      if (!out.empty()) cfg.output_dir = out;
      if (cfg.output_dir.empty()) cfg.output_dir = default_output_dir(cfg.name);
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitArgument;
    }
    try {
      const auto report = dhpe::run_experiment(cfg);
      print_report(report, cfg.output_dir);
      return report.any_certification_failure() ? kExitCertification : kExitOk;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitArgument;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitArgument;
    }
  }

  try {
    const auto rows = dhpe::read_trace(trace_path);
    const auto result = dhpe::audit_trace(rows, audit_sigma);
    std::printf("%s: %zu rows, %zu with relative-error data: %s\n", trace_path.c_str(), result.rows,
                result.certified_rows, result.passed ? "pass" : "FAIL");
    for (const auto& v : result.violations) std::printf("  %s\n", v.c_str());
    return result.passed ? kExitOk : kExitCertification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitArgument;
  }
}
