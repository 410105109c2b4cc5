#include "dhpe/problems.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "dhpe/operators.hpp"
#include "dhpe/random.hpp"

namespace dhpe {

namespace {

// Signal generation draws from a stream independent of the matrix factors.
constexpr std::uint64_t kSignalStream = 0x9e3779b97f4a7c15ULL;

Eigen::MatrixXd orthonormal_columns(GaussianStream& rng, Index rows, Index cols) {
  const Eigen::MatrixXd g = rng.matrix(rows, cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

void write_array(const std::filesystem::path& path, const double* data, std::size_t count) {
  static_assert(std::endian::native == std::endian::little, "binary arrays are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<double> read_array(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)) || in.peek() != EOF)
    throw std::runtime_error(path.string() + ": unexpected size");
  return data;
}

}  // namespace

std::string to_string(SpectrumKind kind) {
  return kind == SpectrumKind::cosine ? "cosine" : "power5";
}

SpectrumKind parse_spectrum_kind(const std::string& name) {
  if (name == "cosine") return SpectrumKind::cosine;
  if (name == "power5") return SpectrumKind::power5;
  throw std::invalid_argument("unknown spectrum kind '" + name + "' (expected cosine or power5)");
}

Eigen::VectorXd spectrum(Index count, SpectrumKind kind) {
  if (count < 2) throw std::invalid_argument("spectrum: need at least two values");
  Eigen::VectorXd s(count);
  const double last = static_cast<double>(count - 1);
  for (Index i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / last;
    s(i) = kind == SpectrumKind::cosine ? 0.5 + 0.5 * std::cos(std::numbers::pi * t)
                                        : std::pow(1.0 - t, 5);
  }
  // cos(pi) rounds to -1 exactly, but pin the endpoints anyway.
  s(0) = 1.0;
  s(count - 1) = 0.0;
  return s;
}

IllcondFactors gen_illcond_factors(Index m, Index n, SpectrumKind kind, std::uint64_t seed) {
  if (m < 2 || n < 2) throw std::invalid_argument("gen_illcond_matrix: m and n must be at least 2");
  const Index r = std::min(m, n);
  GaussianStream rng(seed);
  IllcondFactors out;
  out.U = orthonormal_columns(rng, m, r);
  out.V = orthonormal_columns(rng, n, r);
  out.singular_values = spectrum(r, kind);
  return out;
}

LinearMap<double> gen_illcond_matrix(Index m, Index n, SpectrumKind kind, std::uint64_t seed) {
  const IllcondFactors fac = gen_illcond_factors(m, n, kind, seed);
  return LinearMap<double>::dense(fac.U * fac.singular_values.asDiagonal() * fac.V.transpose());
}

LinearMap<double> gen_diff_matrix(Index n) {
  if (n < 2) throw std::invalid_argument("gen_diff_matrix: n must be at least 2");
  return LinearMap<double>::from_functions(
      n - 1, n,
      [n](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.tail(n - 1) - x.head(n - 1); },
      [n](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        Eigen::VectorXd out(n);
        out(0) = -y(0);
        out.segment(1, n - 2) = y.head(n - 2) - y.tail(n - 2);
        out(n - 1) = y(n - 2);
        return out;
      });
}

SignalAndData gen_signal_and_data(const LinearMap<double>& H, std::uint64_t seed, Index jumps,
                                  double sparsity, double noise_std) {
  const Index n = H.cols();
  if (jumps < 0 || jumps > n - 1) throw std::invalid_argument("gen_signal_and_data: jumps out of range");
  if (!(sparsity >= 0.0 && sparsity <= 1.0))
    throw std::invalid_argument("gen_signal_and_data: sparsity must lie in [0, 1]");
  GaussianStream rng(seed ^ kSignalStream);

  // Breakpoints: a partial Fisher-Yates draw from positions 1..n-1.
  std::vector<Index> positions(static_cast<std::size_t>(n - 1));
  std::iota(positions.begin(), positions.end(), Index(1));
  for (Index i = 0; i < jumps; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - 1 - i)));
    std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  }
  std::vector<Index> starts(positions.begin(), positions.begin() + jumps);
  std::sort(starts.begin(), starts.end());
  starts.insert(starts.begin(), Index(0));

  const auto segments = static_cast<Index>(starts.size());
  Eigen::VectorXd level = rng.vector(segments);
  const auto zeroed = static_cast<Index>(std::floor(sparsity * static_cast<double>(segments)));
  std::vector<Index> order(static_cast<std::size_t>(segments));
  std::iota(order.begin(), order.end(), Index(0));
  for (Index i = 0; i < zeroed; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(segments - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    level(order[static_cast<std::size_t>(i)]) = 0.0;
  }

  SignalAndData out;
  out.x_true.resize(n);
  for (Index s = 0; s < segments; ++s) {
    const Index begin = starts[static_cast<std::size_t>(s)];
    const Index end = s + 1 < segments ? starts[static_cast<std::size_t>(s + 1)] : n;
    out.x_true.segment(begin, end - begin).setConstant(level(s));
  }

  const Eigen::VectorXd clean = H.with_fresh_counters().apply(out.x_true);
  out.noise_std = noise_std < 0.0 ? 0.05 * clean.lpNorm<Eigen::Infinity>() : noise_std;
  out.f = clean;
  if (out.noise_std > 0.0) out.f += out.noise_std * rng.vector(clean.size());
  return out;
}

double objective_cp(const LinearMap<double>& H, const Eigen::VectorXd& f, const LinearMap<double>& D,
                    double lam, const Eigen::VectorXd& x) {
  return 0.5 * (H.apply(x) - f).squaredNorm() + lam * D.apply(x).lpNorm<1>();
}

double objective_dy(const LinearMap<double>& H, const Eigen::VectorXd& f, const LinearMap<double>& D,
                    double lam1, double lam2, double delta, const Eigen::VectorXd& x) {
  return 0.5 * (H.apply(x) - f).squaredNorm() + lam1 * x.lpNorm<1>() +
         lam2 * huber_value(D.apply(x), delta);
}

std::string to_string(ProblemFamily family) { return family == ProblemFamily::cp ? "cp" : "dy"; }

ProblemFamily parse_problem_family(const std::string& name) {
  if (name == "cp") return ProblemFamily::cp;
  if (name == "dy") return ProblemFamily::dy;
  throw std::invalid_argument("unknown problem family '" + name + "' (expected cp or dy)");
}

double ProblemInstance::objective(const Eigen::VectorXd& x) const {
  const auto h = H.with_fresh_counters();
  const auto d = D.with_fresh_counters();
  return family == ProblemFamily::cp ? objective_cp(h, f, d, lam, x)
                                     : objective_dy(h, f, d, lam1, lam2, delta, x);
}

void ProblemInstance::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest = {
      {"family", to_string(family)},   {"m", m},
      {"n", n},                        {"seed", seed},
      {"spectrum", to_string(spectrum_kind)},
      {"jumps", jumps},                {"sparsity", sparsity},
      {"noise_std", noise_std},        {"lam", lam},
      {"lam1", lam1},                  {"lam2", lam2},
      {"delta", delta},
      {"arrays", {{"H", "H.bin"}, {"f", "f.bin"}, {"x_true", "x_true.bin"}}},
      {"layout", "float64 little-endian, H column-major"},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  const Eigen::MatrixXd h = H.to_dense();
  write_array(dir / "H.bin", h.data(), static_cast<std::size_t>(h.size()));
  write_array(dir / "f.bin", f.data(), static_cast<std::size_t>(f.size()));
  write_array(dir / "x_true.bin", x_true.data(), static_cast<std::size_t>(x_true.size()));
}

ProblemInstance ProblemInstance::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  const auto manifest = nlohmann::json::parse(in);
  ProblemInstance p;
  p.family = parse_problem_family(manifest.at("family").get<std::string>());
  p.m = manifest.at("m").get<Index>();
  p.n = manifest.at("n").get<Index>();
  p.seed = manifest.at("seed").get<std::uint64_t>();
  p.spectrum_kind = parse_spectrum_kind(manifest.at("spectrum").get<std::string>());
  p.jumps = manifest.at("jumps").get<Index>();
  p.sparsity = manifest.at("sparsity").get<double>();
  p.noise_std = manifest.at("noise_std").get<double>();
  p.lam = manifest.at("lam").get<double>();
  p.lam1 = manifest.at("lam1").get<double>();
  p.lam2 = manifest.at("lam2").get<double>();
  p.delta = manifest.at("delta").get<double>();

  const auto h = read_array(dir / "H.bin", static_cast<std::size_t>(p.m * p.n));
  p.H = LinearMap<double>::dense(Eigen::Map<const Eigen::MatrixXd>(h.data(), p.m, p.n));
  p.D = gen_diff_matrix(p.n);
  const auto f = read_array(dir / "f.bin", static_cast<std::size_t>(p.m));
  p.f = Eigen::Map<const Eigen::VectorXd>(f.data(), p.m);
  const auto x = read_array(dir / "x_true.bin", static_cast<std::size_t>(p.n));
  p.x_true = Eigen::Map<const Eigen::VectorXd>(x.data(), p.n);
  return p;
}

ProblemInstance make_instance(const InstanceSpec& spec) {
  ProblemInstance p;
  p.family = spec.family;
  p.m = spec.m;
  p.n = spec.n;
  p.seed = spec.seed;
  p.spectrum_kind = spec.spectrum_kind;
  p.jumps = spec.jumps;
  p.sparsity = spec.family == ProblemFamily::cp ? spec.sparsity : 0.0;
  p.lam = spec.lam;
  p.lam1 = spec.lam1;
  p.lam2 = spec.lam2;
  p.delta = spec.delta;
  if (spec.family == ProblemFamily::cp) {
    if (spec.lam < 0.0) throw std::invalid_argument("make_instance: lam must be nonnegative");
  } else {
    if (spec.lam1 < 0.0 || spec.lam2 < 0.0)
      throw std::invalid_argument("make_instance: lam1 and lam2 must be nonnegative");
    HuberParams{spec.delta, spec.lam2 > 0.0 ? spec.lam2 : 1.0}.validate();
  }
  p.H = gen_illcond_matrix(spec.m, spec.n, spec.spectrum_kind, spec.seed);
  p.D = gen_diff_matrix(spec.n);
  auto data = gen_signal_and_data(p.H, spec.seed, spec.jumps, p.sparsity, spec.noise_std);
  p.x_true = std::move(data.x_true);
  p.f = std::move(data.f);
  p.noise_std = data.noise_std;
  return p;
}

}  // namespace dhpe
