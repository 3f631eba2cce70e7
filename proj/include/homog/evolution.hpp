#pragma once

// Propagators and time steppers for
//   (d/dt + |D|^m - V(x)) u = 0,   V = eps^{-alpha} q(x/eps),
// plus the truncated Duhamel iterates and the single-scattering corrector.
//
// Time integrals u_n(t) = int_0^t Free(t-s)[V u_{n-1}(s)] ds use the trapezoid
// rule on the step grid.  To first order in V that rule coincides with the
// Strang splitting, so both routes share the same discrete Duhamel structure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "homog/effective_medium.hpp"
#include "homog/errors.hpp"
#include "homog/random_field.hpp"
#include "homog/spectral_grid.hpp"

namespace homog {

struct EvolutionParams {
  int d = 1;
  double m = 2.0;
  double eps = 1.0;
  double t_final = 1.0;
  int steps = 100;

  double dt() const { return t_final / steps; }

  void validate() const {
    if (!(m > 0.0)) throw InvalidArgument("symbol order m must be positive");
    if (!(eps > 0.0) || eps > 1.0) throw InvalidArgument("eps must lie in (0, 1]");
    if (!(t_final >= 0.0) || !std::isfinite(t_final)) throw InvalidArgument("t_final must be non-negative");
    if (steps < 1) throw InvalidArgument("need at least one time step");
  }
};

/// |xi_k|^m on the lattice.
inline std::vector<double> symbol_values(const GridSpec& grid, double m) {
  auto norms = frequency_norms(grid);
  for (auto& r : norms) r = r > 0.0 ? std::pow(r, m) : 0.0;
  return norms;
}

/// Which zeroth-order shift accompanies |xi|^m in the multiplier
/// exp(-t (|xi|^m - shift(xi))).
struct PropagatorSpec {
  enum class Kind { free, homogenized, corrected };

  Kind kind = Kind::free;
  double rho = 0.0;
  std::vector<double> mode_shift;  // corrected: rho_eps(xi_k) per lattice mode

  static PropagatorSpec free_evolution() { return {}; }
  static PropagatorSpec homogenized(double rho) { return {Kind::homogenized, rho, {}}; }
  static PropagatorSpec corrected(std::vector<double> shifts) { return {Kind::corrected, 0.0, std::move(shifts)}; }

  double shift(std::size_t k) const {
    switch (kind) {
      case Kind::free:
        return 0.0;
      case Kind::homogenized:
        return rho;
      case Kind::corrected:
        return mode_shift.at(k);
    }
    return 0.0;
  }
};

/// rho_eps(xi_k) for every lattice mode.  Modes are grouped by |k|^2 so each
/// distinct radius is integrated once.
inline std::vector<double> rho_eps_on_lattice(const PowerSpectrum& spectrum, const GridSpec& grid, double m,
                                              double eps) {
  std::map<long, double> cache;
  std::vector<double> out(grid.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto idx = grid.unflatten(k);
    long key = 0;
    for (int a = 0; a < grid.dim; ++a) {
      const long w = grid.wavenumber(idx[a]);
      key += w * w;
    }
    auto it = cache.find(key);
    if (it == cache.end()) {
      const double r = grid.dk() * std::sqrt(static_cast<double>(key));
      it = cache.emplace(key, compute_rho_eps(spectrum, grid.dim, m, eps, r)).first;
    }
    out[k] = it->second;
  }
  return out;
}

inline PropagatorSpec corrected_propagator(const PowerSpectrum& spectrum, const GridSpec& grid, double m, double eps) {
  return PropagatorSpec::corrected(rho_eps_on_lattice(spectrum, grid, m, eps));
}

inline SpectralField propagate_spectral(const SpectralField& F, const PropagatorSpec& spec, double t, double m) {
  if (!(t >= 0.0)) throw InvalidArgument("propagation time must be non-negative");
  const auto lam = symbol_values(F.grid, m);
  SpectralField out = F;
  for (std::size_t k = 0; k < out.coeffs.size(); ++k) out.coeffs[k] *= std::exp(-t * (lam[k] - spec.shift(k)));
  return out;
}

/// Exact spectral propagation over time t.
inline Field propagate(const Field& u0, const PropagatorSpec& spec, double t, double m) {
  return inverse_transform(propagate_spectral(forward_transform(u0), spec, t, m));
}

struct SolverOptions {
  bool dealias = false;  // 2/3-rule truncation after every spectral step
  double overflow_limit = 1e100;
};

namespace detail {

inline void check_same_grid(const Field& a, const Field& b) {
  if (!(a.grid == b.grid)) throw GridMismatch("initial condition and potential live on different grids");
}

inline std::vector<double> dealias_mask(const GridSpec& grid) {
  std::vector<double> mask(grid.size(), 1.0);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const auto idx = grid.unflatten(k);
    for (int a = 0; a < grid.dim; ++a)
      if (3 * std::abs(grid.wavenumber(idx[a])) > grid.n) mask[k] = 0.0;
  }
  return mask;
}

inline std::vector<Complex> to_complex(const Field& f) { return {f.values.begin(), f.values.end()}; }

inline Field real_part(const GridSpec& grid, const std::vector<Complex>& buf) {
  Field out(grid);
  for (std::size_t j = 0; j < buf.size(); ++j) out.values[j] = buf[j].real();
  return out;
}

}  // namespace detail

/// Strang splitting: half potential step, exact spectral step, half potential
/// step.  Exact when V is constant since the two flows commute.
inline Field solve_random(const Field& u0, const Field& potential, const EvolutionParams& p,
                          const SolverOptions& opts = {}) {
  p.validate();
  detail::check_same_grid(u0, potential);
  const GridSpec& grid = u0.grid;
  const std::size_t size = grid.size();
  const double h = p.dt();
  const double norm = 1.0 / static_cast<double>(size);

  std::vector<double> half(size), full(size);
  for (std::size_t j = 0; j < size; ++j) {
    half[j] = std::exp(0.5 * h * potential.values[j]);
    full[j] = half[j] * half[j];
  }
  auto spectral = symbol_values(grid, p.m);
  const auto mask = opts.dealias ? detail::dealias_mask(grid) : std::vector<double>(size, 1.0);
  for (std::size_t k = 0; k < size; ++k) spectral[k] = std::exp(-h * spectral[k]) * norm * mask[k];

  auto u = detail::to_complex(u0);
  for (std::size_t j = 0; j < size; ++j) u[j] *= half[j];
  for (int step = 0; step < p.steps; ++step) {
    fft_inplace(grid, u, FFTW_FORWARD);
    for (std::size_t k = 0; k < size; ++k) u[k] *= spectral[k];
    fft_inplace(grid, u, FFTW_BACKWARD);
    const auto& factor = step + 1 < p.steps ? full : half;
    double peak = 0.0;
    for (std::size_t j = 0; j < size; ++j) {
      u[j] *= factor[j];
      peak = std::max(peak, std::abs(u[j].real()));
    }
    if (!(peak <= opts.overflow_limit))
      throw Overflow("solution exceeded " + std::to_string(opts.overflow_limit) + " at step " +
                     std::to_string(step + 1) + "; t is beyond the stable regime");
  }
  return detail::real_part(grid, u);
}

inline Field solve_random(const Field& u0, const FieldSample& potential, const EvolutionParams& p,
                          const SolverOptions& opts = {}) {
  return solve_random(u0, potential.field, p, opts);
}

/// Duhamel iterates u_0 ... u_{max_n} at t_final.  u_0 is the free evolution;
/// u_n(t_j) = sum_i w_i Free(t_j - t_i)[V u_{n-1}(t_i)] with trapezoid weights.
inline std::vector<Field> duhamel_terms(int max_n, const Field& u0, const Field& potential, const EvolutionParams& p) {
  if (max_n < 0) throw InvalidArgument("Duhamel order must be non-negative");
  p.validate();
  detail::check_same_grid(u0, potential);
  const GridSpec& grid = u0.grid;
  const std::size_t size = grid.size();
  const int J = p.steps;
  const double h = p.dt();
  const double norm = 1.0 / static_cast<double>(size);
  const auto lam = symbol_values(grid, p.m);
  std::vector<double> decay(size);
  for (std::size_t k = 0; k < size; ++k) decay[k] = std::exp(-h * lam[k]);

  // level[j] holds the raw DFT of u_r(t_j).
  std::vector<std::vector<Complex>> level(J + 1, std::vector<Complex>(size));
  auto base = detail::to_complex(u0);
  fft_inplace(grid, base, FFTW_FORWARD);
  for (int j = 0; j <= J; ++j)
    for (std::size_t k = 0; k < size; ++k) level[j][k] = base[k] * std::exp(-j * h * lam[k]);

  auto to_field = [&](std::vector<Complex> buf) {
    fft_inplace(grid, buf, FFTW_BACKWARD);
    for (auto& c : buf) c *= norm;
    return detail::real_part(grid, buf);
  };

  std::vector<Field> out;
  out.push_back(to_field(level[J]));
  std::vector<Complex> acc(size), g(size);
  for (int r = 1; r <= max_n; ++r) {
    for (int j = 0; j <= J; ++j) {
      g = level[j];
      fft_inplace(grid, g, FFTW_BACKWARD);
      for (std::size_t x = 0; x < size; ++x) g[x] *= norm * potential.values[x];
      fft_inplace(grid, g, FFTW_FORWARD);
      if (j == 0) {
        for (std::size_t k = 0; k < size; ++k) acc[k] = 0.5 * h * g[k];
        std::fill(level[0].begin(), level[0].end(), Complex{});
      } else {
        for (std::size_t k = 0; k < size; ++k) {
          acc[k] = decay[k] * acc[k] + h * g[k];
          level[j][k] = acc[k] - 0.5 * h * g[k];
        }
      }
    }
    out.push_back(to_field(level[J]));
  }
  return out;
}

inline Field duhamel_term(int n, const Field& u0, const Field& potential, const EvolutionParams& p) {
  return duhamel_terms(n, u0, potential, p).back();
}

/// Single-scattering corrector u^c(t) = int_0^t G_{t-s}[V G_s u0] ds with the
/// homogenized propagator G (shift rho), trapezoid in s.
inline Field corrector(const Field& u0, const Field& potential, double rho, const EvolutionParams& p) {
  p.validate();
  detail::check_same_grid(u0, potential);
  const GridSpec& grid = u0.grid;
  const std::size_t size = grid.size();
  const int J = p.steps;
  const double h = p.dt();
  const double norm = 1.0 / static_cast<double>(size);
  auto lam = symbol_values(grid, p.m);
  for (auto& l : lam) l -= rho;

  auto base = detail::to_complex(u0);
  fft_inplace(grid, base, FFTW_FORWARD);
  std::vector<Complex> acc(size), g(size);
  for (int j = 0; j <= J; ++j) {
    const double s = j * h;
    for (std::size_t k = 0; k < size; ++k) g[k] = base[k] * std::exp(-s * lam[k]) * norm;
    fft_inplace(grid, g, FFTW_BACKWARD);
    for (std::size_t x = 0; x < size; ++x) g[x] *= potential.values[x];
    fft_inplace(grid, g, FFTW_FORWARD);
    const double w = (j == 0 || j == J) ? 0.5 * h : h;
    for (std::size_t k = 0; k < size; ++k) acc[k] += w * std::exp(-(p.t_final - s) * lam[k]) * g[k];
  }
  fft_inplace(grid, acc, FFTW_BACKWARD);
  for (auto& c : acc) c *= norm;
  return detail::real_part(grid, acc);
}

inline Field corrector(const Field& u0, const FieldSample& potential, double rho, const EvolutionParams& p) {
  return corrector(u0, potential.field, rho, p);
}

}  // namespace homog
