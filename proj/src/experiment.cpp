#include "dhpe/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dhpe/errors.hpp"
#include "dhpe/methods.hpp"
#include "dhpe/operators.hpp"

namespace dhpe {

namespace {

// Upper bound used for ||D|| of first differences.
constexpr double kDiffNorm = 2.0;
// Safety factor on the power-iteration estimate of ||H||, which approaches
// the norm from below.
constexpr double kNormSafety = 1.0 + 1e-3;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || errno == ERANGE)
    throw std::invalid_argument("setting '" + key + "': not a number: '" + value + "'");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (value.empty() || ec != std::errc() || ptr != last)
    throw std::invalid_argument("setting '" + key + "': not a nonnegative integer: '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::invalid_argument("setting '" + key + "': not a boolean: '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double median(std::vector<std::size_t> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return static_cast<double>(values[mid]);
  return 0.5 * (static_cast<double>(values[mid - 1]) + static_cast<double>(values[mid]));
}

bool is_hpe_method(const std::string& name) { return name == "hpe-cp" || name == "hpe-dy"; }

/// Everything a method run needs from the experiment.
struct RunContext {
  const ProblemInstance& problem;
  const ExperimentConfig& cfg;
  double h_norm;
};

struct MethodRun {
  MethodResult<double> result;
  Eigen::VectorXd state;  // HPE variables (x, y) or w~
};

MethodRun run_method(const std::string& name, const RunContext& ctx, std::size_t iters,
                     const std::optional<Eigen::VectorXd>& reference, bool record_objective) {
  const ProblemInstance& p = ctx.problem;
  const ExperimentConfig& cfg = ctx.cfg;
  const auto H = p.H.with_fresh_counters();
  const auto D = p.D.with_fresh_counters();

  MethodOptions<double> opts;
  if (record_objective) opts.objective = [&p](const Eigen::VectorXd& x) { return p.objective(x); };
  opts.monitor.work = [H] { return H.total_count(); };
  opts.monitor.reference = reference;
  opts.monitor.wall_time = cfg.wall_time;
  opts.inner_cap = cfg.inner_cap;

  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(p.n);
  const Eigen::VectorXd y0 = Eigen::VectorXd::Zero(D.rows());
  MethodRun run;

  if (p.family == ProblemFamily::cp) {
    const auto cp = CpParams<double>::from_kappa(cfg.kappa, cfg.sigma, kDiffNorm);
    if (name == "hpe-cp") {
      LsqResolvent<double> oracle(H, p.f, cp.tau);
      const double lam = p.lam;
      const VectorMap<double> dual = [lam](const Eigen::VectorXd& v) -> Eigen::VectorXd { return clip(v, lam); };
      run.result = inexact_cp_run<double>(oracle, D, dual, cp, x0, y0, iters, opts);
      run.state = detail::stack<double>(run.result.x, run.result.y);
    } else if (name == "implicit-cp") {
      run.result = implicit_cp_run<double>(H, p.f, D, p.lam, cp, cfg.cg_tol, x0, y0, iters, opts);
    } else if (name == "explicit-cp") {
      const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(p.m);
      run.result = explicit_cp_run<double>(H, p.f, D, p.lam, cfg.kappa, x0, u0, y0, iters, ctx.h_norm,
                                           kDiffNorm, opts);
    } else if (name == "condat-vu") {
      const double h2 = ctx.h_norm * ctx.h_norm;
      const double tau = 1.0 / h2;
      const double theta = 0.9 * (1.0 / tau - h2 / 2.0) / (kDiffNorm * kDiffNorm);
      run.result = condat_vu_run<double>(H, p.f, D, p.lam, tau, theta, x0, y0, iters, ctx.h_norm, kDiffNorm,
                                         cfg.condat_vu_printed_sign, opts);
    } else {
      throw std::invalid_argument("unknown method '" + name + "' for the cp family");
    }
  } else {
    const double beta = std::max(4.0 * p.lam2, DyParams<double>::beta_floor);
    const auto dy = DyParams<double>::from_beta(beta, cfg.sigma);
    if (name == "hpe-dy") {
      LsqResolvent<double> oracle(H, p.f, dy.gamma);
      const double eta = dy.gamma * p.lam1;
      const VectorMap<double> prox = [eta](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return soft_threshold(v, eta);
      };
      run.result = inexact_dy_run<double>(oracle, prox, huber_tv_gradient(D, p.lam2, p.delta), dy, x0, iters, opts);
      run.state = run.result.w;
    } else if (name == "implicit-dy") {
      run.result = implicit_dy_run<double>(H, p.f, D, p.lam1, p.lam2, p.delta, dy, cfg.cg_tol, x0, iters, opts);
    } else if (name == "fb") {
      run.result = fb_run<double>(H, p.f, D, p.lam1, p.lam2, p.delta, x0, iters, ctx.h_norm, opts);
    } else {
      throw std::invalid_argument("unknown method '" + name + "' for the dy family");
    }
  }
  return run;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::vector<std::string> family_methods(ProblemFamily family) {
  if (family == ProblemFamily::cp) return {"hpe-cp", "implicit-cp", "explicit-cp", "condat-vu"};
  return {"hpe-dy", "implicit-dy", "fb"};
}

std::vector<std::string> named_experiments() {
  return {"cp1-run1", "cp1-run2", "cp2", "dy-run1", "dy-run2", "dy-run3"};
}

bool is_named_experiment(const std::string& name) {
  const auto names = named_experiments();
  return std::find(names.begin(), names.end(), name) != names.end();
}

ExperimentConfig named_experiment(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  auto& inst = cfg.instance;
  inst.m = 200;
  inst.n = 200;
  inst.seed = 1;
  inst.spectrum_kind = SpectrumKind::cosine;
  if (name == "cp1-run1") {
    inst.family = ProblemFamily::cp;
    inst.lam = 20.0;
    cfg.sigma = 0.01;
    cfg.kappa = 0.5;
    cfg.iters = 5000;
  } else if (name == "cp1-run2") {
    inst.family = ProblemFamily::cp;
    inst.lam = 1.0;
    cfg.sigma = 0.95;
    cfg.kappa = 0.1;
    cfg.iters = 25000;
  } else if (name == "cp2") {
    inst.family = ProblemFamily::cp;
    inst.m = 100;
    inst.n = 400;
    inst.spectrum_kind = SpectrumKind::power5;
    inst.lam = 0.1;
    cfg.sigma = 0.99;
    cfg.kappa = 0.5;
    cfg.iters = 5000;
  } else if (name == "dy-run1" || name == "dy-run2" || name == "dy-run3") {
    inst.family = ProblemFamily::dy;
    inst.lam1 = name == "dy-run1" ? 0.001 : 0.0001;
    inst.lam2 = name == "dy-run3" ? 0.01 : 0.1;
    cfg.sigma = 0.99;
    cfg.iters = 3000;
  } else {
    throw std::invalid_argument("unknown experiment '" + name + "'");
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  if (instance.m < 2 || instance.n < 2) throw std::invalid_argument("config: m and n must be at least 2");
  if (instance.jumps < 0 || instance.jumps > instance.n - 1)
    throw std::invalid_argument("config: jumps must lie in [0, n-1]");
  if (!(sigma >= 0.0 && sigma < 1.0)) throw std::invalid_argument("config: sigma must lie in [0, 1)");
  if (!(kappa > 0.0)) throw std::invalid_argument("config: kappa must be positive");
  if (!(cg_tol > 0.0)) throw std::invalid_argument("config: cg_tol must be positive");
  if (reference_factor < 1) throw std::invalid_argument("config: reference_factor must be at least 1");
  if (!(gap_target > 0.0)) throw std::invalid_argument("config: gap_target must be positive");
  const auto available = family_methods(instance.family);
  auto check = [&](const std::string& m) {
    if (std::find(available.begin(), available.end(), m) == available.end())
      throw std::invalid_argument("config: method '" + m + "' not available for the " +
                                  to_string(instance.family) + " family");
  };
  for (const auto& m : methods) check(m);
  if (!reference_method.empty()) check(reference_method);
}

std::vector<std::string> ExperimentConfig::resolved_methods() const {
  return methods.empty() ? family_methods(instance.family) : methods;
}

std::string ExperimentConfig::resolved_reference_method() const {
  if (!reference_method.empty()) return reference_method;
  return instance.family == ProblemFamily::cp ? "hpe-cp" : "hpe-dy";
}

void apply_setting(ExperimentConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  auto& inst = cfg.instance;
  if (key == "experiment") {
    const std::string out = cfg.output_dir;
    cfg = value == "custom" ? ExperimentConfig{} : named_experiment(value);
    cfg.output_dir = out;
  } else if (key == "family") {
    inst.family = parse_problem_family(value);
  } else if (key == "m") {
    inst.m = static_cast<Index>(parse_unsigned(key, value));
  } else if (key == "n") {
    inst.n = static_cast<Index>(parse_unsigned(key, value));
  } else if (key == "seed") {
    inst.seed = parse_unsigned(key, value);
  } else if (key == "spectrum") {
    inst.spectrum_kind = parse_spectrum_kind(value);
  } else if (key == "jumps") {
    inst.jumps = static_cast<Index>(parse_unsigned(key, value));
  } else if (key == "sparsity") {
    inst.sparsity = parse_double(key, value);
  } else if (key == "noise_std") {
    inst.noise_std = parse_double(key, value);
  } else if (key == "lam") {
    inst.lam = parse_double(key, value);
  } else if (key == "lam1") {
    inst.lam1 = parse_double(key, value);
  } else if (key == "lam2") {
    inst.lam2 = parse_double(key, value);
  } else if (key == "delta") {
    inst.delta = parse_double(key, value);
  } else if (key == "sigma") {
    cfg.sigma = parse_double(key, value);
  } else if (key == "kappa") {
    cfg.kappa = parse_double(key, value);
  } else if (key == "cg_tol") {
    cfg.cg_tol = parse_double(key, value);
  } else if (key == "iters") {
    cfg.iters = static_cast<std::size_t>(parse_unsigned(key, value));
  } else if (key == "reference_factor") {
    cfg.reference_factor = static_cast<std::size_t>(parse_unsigned(key, value));
  } else if (key == "inner_cap") {
    cfg.inner_cap = static_cast<std::size_t>(parse_unsigned(key, value));
  } else if (key == "reference_method") {
    cfg.reference_method = value;
  } else if (key == "methods") {
    cfg.methods = split_list(value);
  } else if (key == "gap_target") {
    cfg.gap_target = parse_double(key, value);
  } else if (key == "wall_time") {
    cfg.wall_time = parse_bool(key, value);
  } else if (key == "condat_vu_printed_sign") {
    cfg.condat_vu_printed_sign = parse_bool(key, value);
  } else if (key == "out") {
    cfg.output_dir = value;
  } else {
    throw std::invalid_argument("unknown setting '" + key + "'");
  }
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  const auto& inst = cfg.instance;
  nlohmann::ordered_json j;
  j["experiment"] = cfg.name;
  j["family"] = to_string(inst.family);
  j["m"] = inst.m;
  j["n"] = inst.n;
  j["seed"] = inst.seed;
  j["spectrum"] = to_string(inst.spectrum_kind);
  j["jumps"] = inst.jumps;
  j["sparsity"] = inst.family == ProblemFamily::cp ? inst.sparsity : 0.0;
  j["noise_std"] = inst.noise_std;
  if (inst.family == ProblemFamily::cp) {
    j["lam"] = inst.lam;
  } else {
    j["lam1"] = inst.lam1;
    j["lam2"] = inst.lam2;
    j["delta"] = inst.delta;
  }
  j["sigma"] = cfg.sigma;
  if (inst.family == ProblemFamily::cp) j["kappa"] = cfg.kappa;
  j["cg_tol"] = cfg.cg_tol;
  j["iters"] = cfg.iters;
  j["reference_factor"] = cfg.reference_factor;
  j["inner_cap"] = cfg.inner_cap;
  j["reference_method"] = cfg.resolved_reference_method();
  j["methods"] = cfg.resolved_methods();
  j["gap_target"] = cfg.gap_target;
  j["wall_time"] = cfg.wall_time;
  j["condat_vu_printed_sign"] = cfg.condat_vu_printed_sign;
  return j;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

bool ExperimentReport::any_certification_failure() const {
  if (reference_status == "certification_failure") return true;
  return std::any_of(methods.begin(), methods.end(),
                     [](const MethodSummary& m) { return m.status == "certification_failure"; });
}

const MethodSummary& ExperimentReport::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.name == name) return m;
  throw std::out_of_range("no method '" + name + "' in report");
}

nlohmann::ordered_json ExperimentReport::summary_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = config.name;
  j["reference"] = {{"method", reference_method},
                    {"iterations", reference_iterations},
                    {"status", reference_status},
                    {"objective", reference_objective}};
  j["gap_target"] = config.gap_target;
  auto& list = j["methods"] = nlohmann::ordered_json::array();
  for (const auto& m : methods) {
    nlohmann::ordered_json e;
    e["method"] = m.name;
    e["status"] = m.status;
    if (!m.message.empty()) e["message"] = m.message;
    e["iterations"] = m.iterations;
    e["final_objective"] = m.final_objective;
    e["final_gap"] = m.final_gap;
    e["total_h_applications"] = m.total_h_applications;
    e["median_inner_iterations"] = m.median_inner;
    e["median_inner_iterations_to_target"] = m.median_inner_to_target;
    e["k_to_target"] = m.k_to_target ? nlohmann::ordered_json(*m.k_to_target) : nlohmann::ordered_json();
    e["h_applications_to_target"] =
        m.h_applications_to_target ? nlohmann::ordered_json(*m.h_applications_to_target) : nlohmann::ordered_json();
    if (m.audit) {
      e["audit"] = {{"passed", m.audit->passed},
                    {"checked_iterations", m.audit->checked_iterations},
                    {"max_residual_ratio", m.audit->max_residual_ratio},
                    {"violations", m.audit->violations}};
    }
    list.push_back(std::move(e));
  }
  return j;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.config = cfg;
  const ProblemInstance problem = make_instance(cfg.instance);

  // Stepsize bounds of the explicit methods; setup work is not charged.
  const auto norm = estimate_spectral_norm(problem.H.with_fresh_counters(), 1e-10, 5000);
  const RunContext ctx{problem, cfg, norm.value * kNormSafety};

  // Reference optimum: the reference method for reference_factor * iters.
  report.reference_method = cfg.resolved_reference_method();
  report.reference_iterations = cfg.reference_factor * cfg.iters;
  std::optional<Eigen::VectorXd> reference_state;
  double best = std::numeric_limits<double>::infinity();
  try {
    const auto ref = run_method(report.reference_method, ctx, report.reference_iterations, std::nullopt, false);
    if (report.reference_iterations > 0) {
      best = problem.objective(ref.result.x);
      if (ref.state.size() > 0) reference_state = ref.state;
    }
  } catch (const certification_failure&) {
    report.reference_status = "certification_failure";
  } catch (const numerical_error&) {
    report.reference_status = "numerical_error";
  }

  for (const auto& name : cfg.resolved_methods()) {
    MethodSummary s;
    s.name = name;
    try {
      const bool audited = is_hpe_method(name);
      auto run = run_method(name, ctx, cfg.iters,
                            audited && name == report.reference_method ? reference_state : std::nullopt, true);
      s.trace = std::move(run.result.trace);
      s.x = std::move(run.result.x);
      s.state = std::move(run.state);
      if (audited) s.audit = audit_prop1(s.trace, cfg.sigma);
    } catch (const certification_failure& e) {
      s.status = "certification_failure";
      s.message = e.what();
    } catch (const numerical_error& e) {
      s.status = "numerical_error";
      s.message = e.what();
    }
    for (const auto& r : s.trace.records) best = std::min(best, r.objective);
    report.methods.push_back(std::move(s));
  }
  report.reference_objective = std::isfinite(best) ? best : problem.objective(Eigen::VectorXd::Zero(problem.n));

  for (auto& s : report.methods) {
    const auto& recs = s.trace.records;
    s.iterations = recs.size();
    std::vector<std::size_t> inner;
    std::vector<std::size_t> inner_to_target;
    for (const auto& r : recs) {
      inner.push_back(r.inner_iterations);
      if (!s.k_to_target) {
        inner_to_target.push_back(r.inner_iterations);
        if (r.objective - report.reference_objective <= cfg.gap_target) {
          s.k_to_target = r.k;
          s.h_applications_to_target = r.h_applications;
        }
      }
    }
    s.median_inner = median(inner);
    s.median_inner_to_target = median(inner_to_target);
    if (!recs.empty()) {
      s.final_objective = recs.back().objective;
      s.final_gap = s.final_objective - report.reference_objective;
      s.total_h_applications = recs.back().h_applications;
    }
  }

  if (!cfg.output_dir.empty()) {
    const std::filesystem::path out(cfg.output_dir);
    std::filesystem::create_directories(out);
    for (const auto& s : report.methods) emit_trace(s.name, s.trace, report.reference_objective, out / (s.name + ".csv"));
    write_text(out / "summary.json", report.summary_json().dump(2) + "\n");
    write_text(out / "manifest.json", to_json(cfg).dump(2) + "\n");
    problem.save(out / "instance");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

void emit_trace(const std::string& method, const RunTrace<double>& trace, double reference_objective,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trace file " + path.string() + " for writing");
  out << kTraceHeader << '\n';
  for (const auto& r : trace.records) {
    out << method << ',' << r.k << ',' << format_double(r.objective - reference_objective) << ','
        << format_double(r.lhs) << ',' << format_double(r.rhs) << ',' << r.inner_iterations << ','
        << r.h_applications << ',' << format_double(r.wall_ms) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing trace file " + path.string());
}

std::vector<TraceRow> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open trace file " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTraceHeader)
    throw std::invalid_argument(path.string() + ": missing or unexpected header");
  std::vector<TraceRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != 8)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns");
    const std::string where = path.string() + ":" + std::to_string(lineno);
    TraceRow r;
    r.method = cells[0];
    r.k = static_cast<std::size_t>(parse_unsigned(where + " k", cells[1]));
    r.objective_gap = parse_double(where + " objective_gap", cells[2]);
    r.lhs = parse_double(where + " lhs", cells[3]);
    r.rhs = parse_double(where + " rhs", cells[4]);
    r.inner_iters = static_cast<std::size_t>(parse_unsigned(where + " inner_iters", cells[5]));
    r.h_apps = static_cast<std::size_t>(parse_unsigned(where + " h_apps", cells[6]));
    r.wall_ms = parse_double(where + " wall_ms", cells[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

TraceAudit audit_trace(const std::vector<TraceRow>& rows, double sigma) {
  if (!(sigma >= 0.0 && sigma < 1.0)) throw std::invalid_argument("audit: sigma must lie in [0, 1)");
  TraceAudit audit;
  audit.rows = rows.size();
  auto fail = [&audit](std::size_t i, const std::string& what) {
    audit.passed = false;
    audit.violations.push_back("row " + std::to_string(i + 1) + ": " + what);
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i > 0 && r.k != rows[i - 1].k + 1) fail(i, "iteration index not consecutive");
    if (i > 0 && r.h_apps < rows[i - 1].h_apps) fail(i, "h_apps decreased");
    if (i > 0 && r.method != rows[0].method) fail(i, "mixed methods in one trace");
    if (std::isnan(r.lhs) && std::isnan(r.rhs)) continue;  // method without relative-error test
    ++audit.certified_rows;
    // Rounding slack only; the acceptance test itself is exact.
    if (!(r.lhs <= sigma * r.rhs * (1.0 + 1e-12))) fail(i, "lhs " + format_double(r.lhs) + " > sigma * rhs " + format_double(sigma * r.rhs));
  }
  return audit;
}

}  // namespace dhpe
