#pragma once

// Batch experiments: a flat INI config selects one of six kinds, the runner
// orchestrates ensembles across eps and writes an immutable run directory
// (result.json, CSV tables, raw float64 field dumps).

#include <bit>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "homog/duhamel_graphs.hpp"
#include "homog/effective_medium.hpp"
#include "homog/ensemble.hpp"
#include "homog/errors.hpp"
#include "homog/evolution.hpp"
#include "homog/fluctuation_stats.hpp"
#include "homog/random_field.hpp"

namespace homog {

inline constexpr int kSchemaVersion = 1;

/// a exp(-|x - c|^2 / (2 w^2)) with the distance taken on the torus.
struct BumpSpec {
  double amplitude = 1.0;
  double width = 1.0;
  double center = 0.0;  // same coordinate on every axis
};

inline Field make_bump(const GridSpec& g, const BumpSpec& b) {
  return sample_field(g, [&](const std::array<double, 3>& x) {
    double r2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      double c = std::fmod(x[a] - b.center, g.length);
      if (c < -0.5 * g.length) c += g.length;
      if (c >= 0.5 * g.length) c -= g.length;
      r2 += c * c;
    }
    return b.amplitude * std::exp(-r2 / (2.0 * b.width * b.width));
  });
}

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 1;
  int realizations = 200;
  GridSpec grid{1, 256, 16.0};
  PowerSpectrum spectrum = PowerSpectrum::gaussian(1.0, 1.0);
  double m = 0.4;
  double t_final = 0.5;
  int steps = 50;
  std::vector<double> eps{0.1};
  BumpSpec u0;
  BumpSpec test;  // the test function M
  // fluctuate: desk-scale normality thresholds
  double ks_threshold = 0.01;
  double skew_tol = 0.1;
  double kurt_tol = 0.2;
  int script_steps = 200;
  // rho: |xi| values for the rho_eps table
  std::vector<double> xi{0.0, 1.0, 2.0, 4.0};
  // graphs
  int nbar_max = 5;
  // simulate
  bool dump_fields = true;

  std::map<std::string, std::string> entries;  // section.key -> raw value, as parsed

  EvolutionParams params(double e) const { return EvolutionParams{grid.dim, m, e, t_final, steps}; }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"kind", "seed", "realizations"}},
      {"grid", {"dim", "n", "length"}},
      {"spectrum", {"shape", "amplitude", "scale", "decay"}},
      {"evolution", {"m", "t_final", "steps", "dt", "eps"}},
      {"initial", {"amplitude", "width", "center"}},
      {"test", {"amplitude", "width", "center"}},
      {"fluctuate", {"ks_threshold", "skew_tol", "kurt_tol", "script_steps"}},
      {"rho", {"xi"}},
      {"graphs", {"nbar_max"}},
      {"simulate", {"dump_fields"}},
  };
  return keys;
}

inline const std::set<std::string>& kinds() {
  static const std::set<std::string> k{"rho", "simulate", "converge", "fluctuate", "graphs", "longrange"};
  return k;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of numbers");
  return out;
}

}  // namespace detail

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Canonical text of the parsed entries (sorted section.key=value lines).
inline std::string canonical_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, v] : c.entries) out += k + "=" + v + "\n";
  return out;
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical_text(c));
  return os.str();
}

/// Checks the config against the effective-medium preconditions.  Messages
/// name the violated condition.
inline void validate_config(const ExperimentConfig& c) {
  if (!detail::kinds().count(c.kind)) throw ConfigError("experiment.kind: unknown kind '" + c.kind + "'");
  try {
    c.grid.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  if (c.grid.dim > 3) throw ConfigError("grid.dim: d <= 3 required by the spectral quadratures");
  const int d = c.grid.dim;
  if (!(c.m > 0.0)) throw ConfigError("evolution.m: m > 0 violated");
  if (d + 1e-12 < c.m)
    throw ConfigError("d >= m violated (d=" + std::to_string(d) + ", m=" + std::to_string(c.m) +
                      "): the d < m regime has a stochastic limit and is out of scope");
  if (c.spectrum.is_long_range() && !(d > c.m + c.spectrum.decay))
    throw ConfigError("d > m + n violated (d=" + std::to_string(d) + ", m=" + std::to_string(c.m) +
                      ", n=" + std::to_string(c.spectrum.decay) + "): long-range rho diverges");
  if (!(c.t_final > 0.0)) throw ConfigError("evolution.t_final: t_final > 0 violated");
  if (c.steps < 1) throw ConfigError("evolution.steps: at least one step required");
  if (c.realizations < 1) throw ConfigError("experiment.realizations: at least one realization required");
  for (double e : c.eps)
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("evolution.eps: 0 < eps < 1 violated (" + std::to_string(e) + ")");
  if (!(c.u0.width > 0.0) || !(c.test.width > 0.0)) throw ConfigError("initial/test width must be positive");
  MediumConstants mc;
  try {
    mc = medium_constants(c.spectrum, d, c.m);
  } catch (const Error& e) {
    throw ConfigError(std::string("effective medium: ") + e.what());
  }
  // Graph moments are finite-order sums, so the series horizon does not bind them.
  if (c.kind != "graphs" && !(c.t_final < mc.t_max))
    throw ConfigError("4 rho_f T < 1 violated (t_final=" + std::to_string(c.t_final) +
                      ", T_max=" + std::to_string(mc.t_max) + ", rho_f=" + std::to_string(mc.rho_f) + ")");
  if (c.kind == "simulate" || c.kind == "converge" || c.kind == "fluctuate") {
    const double nyquist = std::numbers::pi / c.grid.dx();
    for (double e : c.eps)
      if (const double tail = spectral_tail_fraction(c.spectrum, d, e * nyquist); tail > kMaxUnresolvedFraction)
        throw ConfigError("grid does not resolve the potential at eps=" + std::to_string(e) + " (" +
                          std::to_string(100.0 * tail) + "% of the spectral mass beyond Nyquist)");
  }
  if (c.kind == "converge") {
    if (c.eps.size() < kMinRatePoints) throw ConfigError("converge: at least 4 eps values required for the rate fit");
    const auto [lo, hi] = std::minmax_element(c.eps.begin(), c.eps.end());
    if (*hi / *lo < kMinRateSpan * (1.0 - 1e-12)) throw ConfigError("converge: eps values must span a factor of 8");
  }
  if (c.kind == "fluctuate") {
    if (c.realizations < static_cast<int>(kMinEnsemble))
      throw ConfigError("fluctuate: at least 100 realizations required");
    if (c.spectrum.is_long_range()) throw ConfigError("fluctuate: short-range spectrum required (use kind=longrange)");
  }
  if (c.kind == "longrange") {
    if (!c.spectrum.is_long_range()) throw ConfigError("longrange: spectrum.decay > 0 required");
    if (d > 2) throw ConfigError("longrange: d <= 2 required by the lattice Riesz sums");
  }
  if (c.kind == "graphs" && (c.nbar_max < 1 || c.nbar_max > kMaxPairingOrder))
    throw ConfigError("graphs.nbar_max: 1 <= nbar_max <= 7 required");
  if (c.script_steps < 1) throw ConfigError("fluctuate.script_steps: at least one step required");
}

/// Parses INI text.  Unknown sections or keys, malformed values and a missing
/// kind are errors.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig c;
  const auto& allowed = detail::allowed_keys();
  for (const auto& [section, body] : tree) {
    auto it = allowed.find(section);
    if (it == allowed.end()) {
      if (body.empty()) throw ConfigError("key outside a section: '" + section + "'");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      c.entries[section + "." + key] = detail::trim(value.data());
    }
  }
  auto get = [&](const std::string& k) -> const std::string* {
    auto f = c.entries.find(k);
    return f == c.entries.end() ? nullptr : &f->second;
  };
  using namespace detail;
  if (auto v = get("experiment.kind")) c.kind = *v;
  else throw ConfigError("experiment.kind is required");
  if (auto v = get("experiment.seed")) {
    const auto s = parse_int("experiment.seed", *v);
    if (s < 0) throw ConfigError("experiment.seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (auto v = get("experiment.realizations")) c.realizations = static_cast<int>(parse_int("experiment.realizations", *v));
  if (auto v = get("grid.dim")) c.grid.dim = static_cast<int>(parse_int("grid.dim", *v));
  if (auto v = get("grid.n")) c.grid.n = static_cast<int>(parse_int("grid.n", *v));
  if (auto v = get("grid.length")) c.grid.length = parse_double("grid.length", *v);

  std::string shape = "gaussian";
  double amplitude = 1.0, scale = 1.0, decay = 0.0;
  if (auto v = get("spectrum.shape")) shape = *v;
  if (auto v = get("spectrum.amplitude")) amplitude = parse_double("spectrum.amplitude", *v);
  if (auto v = get("spectrum.scale")) scale = parse_double("spectrum.scale", *v);
  if (auto v = get("spectrum.decay")) decay = parse_double("spectrum.decay", *v);
  try {
    if (shape == "gaussian") c.spectrum = PowerSpectrum::gaussian(amplitude, scale);
    else if (shape == "bump") c.spectrum = PowerSpectrum::bump(amplitude, scale);
    else throw ConfigError("spectrum.shape: expected gaussian or bump, got '" + shape + "'");
    if (decay < 0.0) throw ConfigError("spectrum.decay must be non-negative");
    if (decay > 0.0) c.spectrum = PowerSpectrum::long_range(decay, c.spectrum);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("spectrum: ") + e.what());
  }

  if (auto v = get("evolution.m")) c.m = parse_double("evolution.m", *v);
  if (auto v = get("evolution.t_final")) c.t_final = parse_double("evolution.t_final", *v);
  if (get("evolution.steps") && get("evolution.dt")) throw ConfigError("evolution: give steps or dt, not both");
  if (auto v = get("evolution.steps")) c.steps = static_cast<int>(parse_int("evolution.steps", *v));
  if (auto v = get("evolution.dt")) {
    const double dt = parse_double("evolution.dt", *v);
    if (!(dt > 0.0)) throw ConfigError("evolution.dt must be positive");
    const double n = c.t_final / dt;
    if (std::abs(n - std::round(n)) > 1e-9 * n) throw ConfigError("evolution.dt must divide t_final");
    c.steps = static_cast<int>(std::round(n));
  }
  if (auto v = get("evolution.eps")) c.eps = parse_list("evolution.eps", *v);

  auto bump = [&](const std::string& sec, BumpSpec& b) {
    if (auto v = get(sec + ".amplitude")) b.amplitude = parse_double(sec + ".amplitude", *v);
    if (auto v = get(sec + ".width")) b.width = parse_double(sec + ".width", *v);
    if (auto v = get(sec + ".center")) b.center = parse_double(sec + ".center", *v);
  };
  bump("initial", c.u0);
  bump("test", c.test);
  if (auto v = get("fluctuate.ks_threshold")) c.ks_threshold = parse_double("fluctuate.ks_threshold", *v);
  if (auto v = get("fluctuate.skew_tol")) c.skew_tol = parse_double("fluctuate.skew_tol", *v);
  if (auto v = get("fluctuate.kurt_tol")) c.kurt_tol = parse_double("fluctuate.kurt_tol", *v);
  if (auto v = get("fluctuate.script_steps")) c.script_steps = static_cast<int>(parse_int("fluctuate.script_steps", *v));
  if (auto v = get("rho.xi")) c.xi = parse_list("rho.xi", *v);
  if (auto v = get("graphs.nbar_max")) c.nbar_max = static_cast<int>(parse_int("graphs.nbar_max", *v));
  if (auto v = get("simulate.dump_fields")) c.dump_fields = parse_bool("simulate.dump_fields", *v);
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_config(in);
}

/// Replaces the base seed; the canonical text (and so the hash) follows.
inline void override_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.entries["experiment.seed"] = std::to_string(seed);
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

/// Little-endian float64 dump with a JSON sidecar describing the layout.
inline void dump_field(const std::filesystem::path& dir, const std::string& name, const Field& f,
                       const nlohmann::json& meta) {
  std::vector<double> data = f.values;
  if constexpr (std::endian::native == std::endian::big)
    for (double& v : data) v = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(v)));
  std::ofstream out(dir / (name + ".f64"), std::ios::binary);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  nlohmann::json side = meta;
  side["dtype"] = "float64";
  side["endianness"] = "little";
  side["layout"] = "row-major, last axis fastest";
  side["shape"] = std::vector<int>(f.grid.dim, f.grid.n);
  side["grid"] = {{"dim", f.grid.dim}, {"n", f.grid.n}, {"length", f.grid.length}};
  write_text(dir / (name + ".json"), side.dump(2) + "\n");
}

inline nlohmann::json stats_json(const EnsembleStats& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"n", s.n},        {"mean", num(s.mean)},         {"var", num(s.var)},
          {"se", num(s.se)}, {"skew", num(s.skew)},         {"kurt", num(s.kurtosis)},
          {"excess_kurtosis", num(s.excess_kurtosis)}, {"ks_stat", num(s.ks_stat)},
          {"ks_p", num(s.ks_p)}, {"degenerate", s.degenerate}};
}

/// One realization of the rescaled problem.
struct Realization {
  Field u;
  double X = 0.0;  // (u, M)
  double I = 0.0;  // ||u||^2
};

/// Runs `count` realizations at eps (stream = eps index) in blocks and hands
/// them to `reduce` in realization order.
template <class Reduce>
void run_realizations(const ExperimentConfig& c, std::size_t eps_index, const Field& u0, const Field& M, int workers,
                      Reduce&& reduce) {
  const double e = c.eps.at(eps_index);
  const auto p = c.params(e);
  const std::size_t count = static_cast<std::size_t>(c.realizations);
  const std::size_t block = std::max<std::size_t>(64, 8 * static_cast<std::size_t>(workers));
  for (std::size_t start = 0; start < count; start += block) {
    const std::size_t len = std::min(block, count - start);
    auto chunk = parallel_map(len, workers, [&](std::size_t i) {
      const std::uint64_t seed = realization_seed(c.seed, eps_index, start + i);
      const auto q = scaled_potential(c.spectrum, c.grid, e, c.m, seed);
      Realization r;
      r.u = solve_random(u0, q, p);
      r.X = inner_product(r.u, M);
      r.I = l2_norm_squared(r.u);
      return r;
    });
    for (std::size_t i = 0; i < len; ++i) reduce(start + i, realization_seed(c.seed, eps_index, start + i), chunk[i]);
  }
}

inline nlohmann::json theory_block(const ExperimentConfig& c, const MediumConstants& mc) {
  nlohmann::json t{{"rho", mc.rho}, {"rho_f", mc.rho_f}, {"t_max", mc.t_max}};
  nlohmann::json per_eps = nlohmann::json::array();
  for (double e : c.eps)
    per_eps.push_back({{"eps", e},
                       {"alpha", mc.alpha_of_eps(e)},
                       {"beta", mc.beta_of_eps(e)},
                       {"potential_variance_scale", potential_variance_scale(c.grid.dim, c.m, e)}});
  t["per_eps"] = per_eps;
  if (!c.spectrum.is_long_range()) t["sigma2"] = sigma_squared(c.spectrum, c.grid.dim);
  else {
    t["hurst"] = hurst(c.grid.dim, c.spectrum.decay);
    t["riesz_constant"] = riesz_constant(c.grid.dim, c.spectrum.decay);
  }
  return t;
}

// ---------------------------------------------------------------- kinds

inline nlohmann::json run_rho(const ExperimentConfig& c, const std::filesystem::path& out, const MediumConstants& mc) {
  std::string csv = "eps,xi,rho_eps,rho_eps_minus_rho\n";
  nlohmann::json table = nlohmann::json::array();
  for (double e : c.eps)
    for (double x : c.xi) {
      const double r = compute_rho_eps(c.spectrum, c.grid.dim, c.m, e, x);
      csv += fmt(e) + "," + fmt(x) + "," + fmt(r) + "," + fmt(r - mc.rho) + "\n";
      table.push_back({{"eps", e}, {"xi", x}, {"rho_eps", r}});
    }
  write_text(out / "rho_eps.csv", csv);
  return {{"rho_eps", table}};
}

inline nlohmann::json run_simulate(const ExperimentConfig& c, const std::filesystem::path& out, int workers) {
  const Field u0 = make_bump(c.grid, c.u0), M = make_bump(c.grid, c.test);
  std::string csv = "eps,index,seed,X,I\n";
  nlohmann::json per = nlohmann::json::array();
  if (c.dump_fields) std::filesystem::create_directories(out / "fields");
  for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
    const double e = c.eps[ei];
    Field mean(c.grid);
    std::vector<double> X, I;
    run_realizations(c, ei, u0, M, workers, [&](std::size_t idx, std::uint64_t seed, const Realization& r) {
      for (std::size_t j = 0; j < mean.values.size(); ++j) mean.values[j] += r.u.values[j];
      X.push_back(r.X);
      I.push_back(r.I);
      csv += fmt(e) + "," + std::to_string(idx) + "," + std::to_string(seed) + "," + fmt(r.X) + "," + fmt(r.I) + "\n";
    });
    for (double& v : mean.values) v /= static_cast<double>(c.realizations);
    const Field U = propagate(u0, corrected_propagator(c.spectrum, c.grid, c.m, e), c.t_final, c.m);
    Field diff = mean;
    for (std::size_t j = 0; j < diff.values.size(); ++j) diff.values[j] -= U.values[j];
    const double meanI = std::accumulate(I.begin(), I.end(), 0.0) / static_cast<double>(I.size());
    per.push_back({{"eps", e},
                   {"n_samples", c.realizations},
                   {"mean_energy", meanI},
                   {"mean_X", std::accumulate(X.begin(), X.end(), 0.0) / static_cast<double>(X.size())},
                   {"mean_field_X", inner_product(U, M)},
                   {"mean_minus_mean_field_l2", std::sqrt(l2_norm_squared(diff))}});
    if (c.dump_fields) {
      const nlohmann::json meta{{"eps", e}, {"t", c.t_final}, {"n_samples", c.realizations}};
      dump_field(out / "fields", "ensemble_mean_eps" + std::to_string(ei), mean, meta);
      dump_field(out / "fields", "mean_field_eps" + std::to_string(ei), U, meta);
      if (ei == 0) dump_field(out / "fields", "u0", u0, {{"t", 0.0}});
    }
  }
  write_text(out / "samples.csv", csv);
  return {{"per_eps", per}};
}

inline nlohmann::json run_converge(const ExperimentConfig& c, const std::filesystem::path& out, int workers,
                                   const MediumConstants& mc) {
  const Field u0 = make_bump(c.grid, c.u0), M = make_bump(c.grid, c.test);
  std::string csv = "eps,n_samples,error,se,bias\n";
  std::vector<RatePoint> pts;
  nlohmann::json per = nlohmann::json::array();
  const double cell = c.grid.cell_volume();
  for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
    const double e = c.eps[ei];
    const Field U = propagate(u0, corrected_propagator(c.spectrum, c.grid, c.m, e), c.t_final, c.m);
    Field mean(c.grid);
    double s = 0.0, s2 = 0.0;
    run_realizations(c, ei, u0, M, workers, [&](std::size_t, std::uint64_t, const Realization& r) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < U.values.size(); ++j) {
        const double dd = r.u.values[j] - U.values[j];
        d2 += dd * dd;
        mean.values[j] += r.u.values[j];
      }
      d2 *= cell;
      s += d2, s2 += d2 * d2;
    });
    const double n = static_cast<double>(c.realizations);
    const double e2 = s / n;
    const double error = std::sqrt(e2);
    // Delta method: se(E) = se(E^2) / (2E).
    const double se = n > 1 ? std::sqrt(std::max(0.0, s2 / n - e2 * e2) / (n - 1.0)) / (2.0 * error) : 0.0;
    double bias2 = 0.0;
    for (std::size_t j = 0; j < U.values.size(); ++j) bias2 += std::pow(mean.values[j] / n - U.values[j], 2);
    const double bias = std::sqrt(bias2 * cell);
    csv += fmt(e) + "," + std::to_string(c.realizations) + "," + fmt(error) + "," + fmt(se) + "," + fmt(bias) + "\n";
    per.push_back({{"eps", e}, {"n_samples", c.realizations}, {"error", error}, {"se", se}, {"bias", bias}});
    pts.push_back({e, error});
  }
  write_text(out / "rate.csv", csv);
  const auto fit = rate_fit(pts);
  const double beta = mc.beta_of_eps(c.eps.front());
  const double target = 0.5 * beta;
  return {{"per_eps", per},
          {"fit", {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}, {"slope_se", fit.slope_se}}},
          {"theory", {{"beta", beta}, {"beta_over_2", target}}},
          {"slope_relative_deviation", std::abs(fit.slope - target) / target}};
}

inline nlohmann::json run_fluctuate(const ExperimentConfig& c, const std::filesystem::path& out, int workers,
                                    const MediumConstants& mc) {
  const Field u0 = make_bump(c.grid, c.u0), M = make_bump(c.grid, c.test);
  const Field Mt = script_M(c.t_final, M, u0, mc.rho, c.m, c.script_steps);
  const double theory = limit_variance_short(c.spectrum, Mt);
  std::string csv = "eps,n_samples,mean,var,se,skew,kurt,ks_p,var_normalized,var_normalized_se,theory,z\n";
  nlohmann::json per = nlohmann::json::array();
  std::vector<std::pair<double, double>> normalized;  // (value, se)
  for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
    const double e = c.eps[ei];
    std::vector<double> X;
    X.reserve(c.realizations);
    run_realizations(c, ei, u0, M, workers,
                     [&](std::size_t, std::uint64_t, const Realization& r) { X.push_back(r.X); });
    const auto st = ensemble_stats(std::span<const double>(X));
    const double scale = potential_variance_scale(c.grid.dim, c.m, e);
    double m4 = 0.0;
    for (double x : X) m4 += std::pow(x - st.mean, 4);
    m4 /= static_cast<double>(X.size());
    const double var_se = std::sqrt(std::max(0.0, m4 - st.var * st.var) / static_cast<double>(X.size()));
    const double vn = st.var / scale, vn_se = var_se / scale;
    const double z = vn_se > 0.0 ? (vn - theory) / vn_se : std::numeric_limits<double>::quiet_NaN();
    // Centering on the mean field instead of the ensemble mean.
    const Field U = propagate(u0, corrected_propagator(c.spectrum, c.grid, c.m, e), c.t_final, c.m);
    const double xu = inner_product(U, M);
    double mf2 = 0.0;
    for (double x : X) mf2 += (x - xu) * (x - xu);
    mf2 /= static_cast<double>(X.size());
    csv += fmt(e) + "," + std::to_string(st.n) + "," + fmt(st.mean) + "," + fmt(st.var) + "," + fmt(st.se) + "," +
           fmt(st.skew) + "," + fmt(st.kurtosis) + "," + fmt(st.ks_p) + "," + fmt(vn) + "," + fmt(vn_se) + "," +
           fmt(theory) + "," + fmt(z) + "\n";
    const bool normal = !st.degenerate && std::abs(st.skew) < c.skew_tol && std::abs(st.kurtosis - 3.0) < c.kurt_tol &&
                        st.ks_p > c.ks_threshold;
    per.push_back({{"eps", e},
                   {"stats", stats_json(st)},
                   {"var_normalized", vn},
                   {"var_normalized_se", vn_se},
                   {"z", z},
                   {"variance_within_3se", std::abs(z) <= 3.0},
                   {"normality_pass", normal},
                   {"mean_field_centering",
                    {{"mean_field_X", xu}, {"offset", st.mean - xu}, {"var_normalized", mf2 / scale}}}});
    normalized.emplace_back(vn, vn_se);
  }
  write_text(out / "stats.csv", csv);
  // Scaling check: normalized variances agree pairwise within 3 combined SE.
  bool scaling = true;
  for (std::size_t i = 0; i < normalized.size(); ++i)
    for (std::size_t j = i + 1; j < normalized.size(); ++j) {
      const double se = std::hypot(normalized[i].second, normalized[j].second);
      scaling = scaling && std::abs(normalized[i].first - normalized[j].first) <= 3.0 * se;
    }
  return {{"per_eps", per},
          {"theory_variance", theory},
          {"script_M_l2", std::sqrt(l2_norm_squared(Mt))},
          {"scaling_consistent", scaling},
          {"thresholds", {{"ks_p", c.ks_threshold}, {"skew", c.skew_tol}, {"kurt", c.kurt_tol}}}};
}

inline std::string census_csv(int nbar_max) {
  std::string csv = "nbar,n,m,total,crossing,simple,crossing_simple\n";
  for (const auto& r : census(nbar_max))
    csv += std::to_string(r.nbar) + "," + std::to_string(r.n) + "," + std::to_string(r.m) + "," +
           std::to_string(r.total) + "," + std::to_string(r.crossing) + "," + std::to_string(r.simple) + "," +
           std::to_string(r.crossing_simple) + "\n";
  return csv;
}

/// Graph evaluations next to their Monte Carlo counterparts on a small 1-d
/// problem: the (2,0) simple graph against E[(u_2, M)] (u_0, M), and the
/// (1,1) crossing graph with the rho-shifted propagator against Var[(u_c, M)].
struct GraphOracle {
  double graph = 0.0;
  double mc = 0.0;
  double se = 0.0;
  double z() const { return se > 0.0 ? (mc - graph) / se : std::numeric_limits<double>::quiet_NaN(); }
};

struct GraphOracles {
  GraphOracle simple_2_0;
  GraphOracle crossing_1_1;
};

inline GraphOracles graph_oracles(const MomentProblem& base, int count, std::uint64_t seed, int workers) {
  GraphOracles out;
  const auto& p = base.params;
  const Field free_u = propagate(base.u0, PropagatorSpec::free_evolution(), p.t_final, p.m);
  const double x0 = inner_product(free_u, base.M);
  out.simple_2_0.graph = evaluate_moment(2, 0, base, GraphSelection::simple).real();
  auto xs = parallel_map(static_cast<std::size_t>(count), workers, [&](std::size_t i) {
    const auto q = scaled_potential(base.spectrum, base.grid, p.eps, p.m, realization_seed(seed, 0, i));
    return inner_product(duhamel_term(2, base.u0, q.field, p), base.M) * x0;
  });
  double s = 0.0, s2 = 0.0;
  for (double x : xs) s += x, s2 += x * x;
  const double n = static_cast<double>(count);
  out.simple_2_0.mc = s / n;
  out.simple_2_0.se = std::sqrt(std::max(0.0, s2 / n - out.simple_2_0.mc * out.simple_2_0.mc) / n);

  MomentProblem shifted = base;
  const double rho = compute_rho(base.spectrum, base.grid.dim, p.m);
  shifted.propagator_shift = rho;
  out.crossing_1_1.graph = evaluate_moment(1, 1, shifted, GraphSelection::crossing).real();
  auto cs = parallel_map(static_cast<std::size_t>(count), workers, [&](std::size_t i) {
    const auto q = scaled_potential(base.spectrum, base.grid, p.eps, p.m, realization_seed(seed, 1, i));
    return inner_product(corrector(base.u0, q, rho, p), base.M);
  });
  // The corrector has mean zero exactly, so its second moment is the variance.
  double c2 = 0.0, c4 = 0.0;
  for (double x : cs) c2 += x * x, c4 += x * x * x * x;
  out.crossing_1_1.mc = c2 / n;
  out.crossing_1_1.se = std::sqrt(std::max(0.0, c4 / n - out.crossing_1_1.mc * out.crossing_1_1.mc) / n);
  return out;
}

inline nlohmann::json run_graphs(const ExperimentConfig& c, const std::filesystem::path& out, int workers) {
  write_text(out / "census.csv", census_csv(c.nbar_max));
  nlohmann::json counts = nlohmann::json::array();
  for (int nb = 1; nb <= c.nbar_max; ++nb) counts.push_back({{"nbar", nb}, {"pairings", double_factorial_odd(nb)}});
  nlohmann::json res{{"pairing_counts", counts}};
  if (c.grid.dim != 1 || c.grid.n > kMaxMomentGrid) {
    res["oracles"] = nullptr;
    res["oracles_skipped"] = "moment evaluation needs d = 1 and n <= 64";
    return res;
  }
  MomentProblem pr;
  pr.grid = c.grid;
  pr.spectrum = c.spectrum;
  pr.params = c.params(c.eps.front());
  pr.u0 = make_bump(c.grid, c.u0);
  pr.M = make_bump(c.grid, c.test);
  const auto o = graph_oracles(pr, c.realizations, c.seed, workers);
  auto js = [](const GraphOracle& g) {
    return nlohmann::json{{"graph", g.graph}, {"monte_carlo", g.mc}, {"se", g.se}, {"z", g.z()}};
  };
  res["oracles"] = {{"simple_2_0", js(o.simple_2_0)}, {"crossing_1_1", js(o.crossing_1_1)}, {"eps", c.eps.front()}};
  return res;
}

inline nlohmann::json run_longrange(const ExperimentConfig& c, const MediumConstants& mc) {
  const Field u0 = make_bump(c.grid, c.u0), M = make_bump(c.grid, c.test);
  const Field Mt = script_M(c.t_final, M, u0, mc.rho, c.m, c.script_steps);
  nlohmann::json res;
  res["hurst"] = hurst(c.grid.dim, c.spectrum.decay);
  res["riesz_constant"] = riesz_constant(c.grid.dim, c.spectrum.decay);
  res["regularity_integral"] = regularity_integral(u0, c.spectrum.decay);
  try {
    const auto v = limit_variance_long(c.spectrum, Mt);
    res["sigma_M"] = {{"spectral", v.spectral},
                      {"kernel", v.kernel},
                      {"relative_gap", v.relative_gap()},
                      {"self_lag_error_estimate", v.self_lag_error}};
  } catch (const KernelSingular& e) {
    const auto v = limit_variance_long(c.spectrum, Mt, {.kernel = false});
    res["sigma_M"] = {{"spectral", v.spectral}, {"kernel", nullptr}, {"kernel_error", e.what()}};
  }
  return res;
}

}  // namespace detail

struct RunOptions {
  int workers = 1;
};

/// Runs the experiment into `out`, which must not already hold a run.
/// Returns the JSON summary also written to out/result.json.
inline nlohmann::json run_experiment(const ExperimentConfig& c, const std::filesystem::path& out,
                                     const RunOptions& opts = {}) {
  validate_config(c);
  namespace fs = std::filesystem;
  if (fs::exists(out / "result.json")) throw ConfigError("output directory '" + out.string() + "' already holds a run");
  fs::create_directories(out);
  const auto started = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  const auto mc = medium_constants(c.spectrum, c.grid.dim, c.m);

  nlohmann::json res;
  res["schema_version"] = kSchemaVersion;
  res["kind"] = c.kind;
  res["config_hash"] = config_hash(c);
  res["config"] = c.entries;
  res["seeds"] = {{"base", c.seed}, {"rule", "realization_seed(base, eps_index, realization_index)"}};
  res["theory"] = detail::theory_block(c, mc);
  detail::write_text(out / "config.ini", canonical_text(c));

  nlohmann::json body;
  if (c.kind == "rho") body = detail::run_rho(c, out, mc);
  else if (c.kind == "simulate") body = detail::run_simulate(c, out, opts.workers);
  else if (c.kind == "converge") body = detail::run_converge(c, out, opts.workers, mc);
  else if (c.kind == "fluctuate") body = detail::run_fluctuate(c, out, opts.workers, mc);
  else if (c.kind == "graphs") body = detail::run_graphs(c, out, opts.workers);
  else if (c.kind == "longrange") body = detail::run_longrange(c, mc);
  res["results"] = body;

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res["meta"] = {{"started_unix", std::chrono::duration_cast<std::chrono::seconds>(started.time_since_epoch()).count()},
                 {"wall_seconds", seconds},
                 {"workers", opts.workers}};
  detail::write_text(out / "result.json", res.dump(2) + "\n");
  return res;
}

}  // namespace homog
