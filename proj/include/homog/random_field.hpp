#pragma once

// Stationary mean-zero Gaussian fields with a prescribed power spectrum,
// synthesized through the spectral representation on the torus.
//
// A lattice field q(x) = sum_k a_k exp(i xi_k . x) with a_{-k} = conj(a_k) and
// E|a_k|^2 = Rhat(xi_k) dxi^d has covariance sum_k Rhat(xi_k) dxi^d
// exp(i xi_k . x), the L-periodization of R sampled on the lattice.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "homog/effective_medium.hpp"
#include "homog/errors.hpp"
#include "homog/spectral_grid.hpp"
#include "homog/spectrum.hpp"

namespace homog {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of realization `index` in stream `stream` (e.g. the eps index).
inline std::uint64_t realization_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

struct FieldSample {
  Field field;
  std::uint64_t seed = 0;
  PowerSpectrum spectrum;
  double scale = 1.0;  // eps
};

/// Per-mode variances E|a_k|^2 of the lattice coefficients.
inline std::vector<double> lattice_variances(const PowerSpectrum& spectrum, const GridSpec& grid, double eps = 1.0,
                                             double amplitude_scale = 1.0) {
  std::vector<double> var(grid.size());
  const double w = amplitude_scale * grid.dual_cell_volume();
  for (std::size_t k = 0; k < var.size(); ++k) {
    const double r = frequency_at(grid, k).norm;
    // The singular zero mode of a long-range spectrum only adds a random
    // constant; it is dropped.
    if (r == 0.0 && spectrum.is_long_range()) {
      var[k] = 0.0;
      continue;
    }
    const double v = w * spectrum(eps * r);
    if (!(v >= 0.0) || !std::isfinite(v)) throw SpectrumNegative("spectrum is negative or not finite on the lattice");
    var[k] = v;
  }
  return var;
}

/// Draws a real Gaussian lattice field with the given per-mode variances.
/// Independent complex Gaussians fill one half of the modes; their mirrors
/// get the conjugate, self-conjugate modes get a real Gaussian.
inline Field synthesize_from_variances(const GridSpec& grid, std::span<const double> variances, std::uint64_t seed) {
  grid.validate();
  if (variances.size() != grid.size()) throw GridMismatch("variance count does not match grid");
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Complex> coeff(grid.size());
  for (std::size_t k = 0; k < coeff.size(); ++k) {
    const std::size_t mk = grid.mirror(k);
    if (mk < k) continue;
    const double v = variances[k];
    if (mk == k) {
      coeff[k] = std::sqrt(v) * normal(rng);
    } else {
      const double sd = std::sqrt(0.5 * v);
      const double re = normal(rng);
      const double im = normal(rng);
      coeff[k] = Complex(sd * re, sd * im);
      coeff[mk] = std::conj(coeff[k]);
    }
  }
  fft_inplace(grid, coeff, FFTW_BACKWARD);
  Field out(grid);
  for (std::size_t j = 0; j < coeff.size(); ++j) out.values[j] = coeff[j].real();
  return out;
}

inline FieldSample synthesize(const PowerSpectrum& spectrum, const GridSpec& grid, std::uint64_t seed) {
  const auto var = lattice_variances(spectrum, grid);
  return FieldSample{synthesize_from_variances(grid, var, seed), seed, spectrum, 1.0};
}

/// Share of the spectrum's mass beyond radius `cutoff` (radial quadrature).
inline double spectral_tail_fraction(const PowerSpectrum& s, int d, double cutoff) {
  if (s.amplitude == 0.0) return 0.0;
  auto g = [&](double r) { return r > 0.0 ? std::pow(r, d - 1.0) * s(r) : 0.0; };
  const double total = quad::radial(s, g, "spectral mass");
  double tail = 0.0;
  if (s.compact()) {
    tail = quad::finite(g, std::min(cutoff, s.split_radius()), s.split_radius(), "spectral tail");
  } else {
    tail = quad::semi_infinite(g, cutoff, "spectral tail");
  }
  return tail / total;
}

inline constexpr double kMaxUnresolvedFraction = 0.01;

/// Samples eps^{-alpha} q(x/eps) directly on the grid: its power spectrum is
/// eps^{d - 2 alpha} Rhat(eps xi).  alpha follows from (d, m).
inline FieldSample scaled_potential(const PowerSpectrum& spectrum, const GridSpec& grid, double eps, double m,
                                    std::uint64_t seed) {
  grid.validate();
  if (!(eps > 0.0) || eps > 1.0) throw DomainError("eps must lie in (0, 1]");
  // The inscribed ball of radius pi/dx lies inside the lattice box, so its tail
  // bounds the unresolved mass from above.
  const double nyquist = std::numbers::pi / grid.dx();
  const double tail = spectral_tail_fraction(spectrum, grid.dim, eps * nyquist);
  if (tail > kMaxUnresolvedFraction)
    throw ResolutionError("grid does not resolve the scaled spectrum: " + std::to_string(100.0 * tail) +
                          "% of its mass lies beyond the Nyquist radius");
  const double scale = potential_variance_scale(grid.dim, m, eps);
  const auto var = lattice_variances(spectrum, grid, eps, scale);
  return FieldSample{synthesize_from_variances(grid, var, seed), seed, spectrum, eps};
}

/// Lattice covariance sum_k var_k cos(xi_k . x) at site offset `lag` along
/// axis 0.  This is the periodized target the synthesized ensembles follow.
inline double lattice_covariance(const GridSpec& grid, std::span<const double> variances, int lag) {
  double s = 0.0;
  for (std::size_t k = 0; k < variances.size(); ++k) s += variances[k] * std::cos(frequency_at(grid, k).xi[0] * lag * grid.dx());
  return s;
}

struct CovarianceEstimate {
  std::vector<double> value;  // indexed by lag along axis 0
  std::vector<double> se;
};

/// Stationary covariance estimate: per sample, the site average of
/// q(x) q(x + lag e_0) (mean is known to be zero); then mean and standard
/// error over samples.
inline CovarianceEstimate empirical_covariance(std::span<const FieldSample> samples, int max_lag) {
  if (samples.size() < 2) throw InvalidArgument("covariance estimate needs at least two samples");
  const GridSpec grid = samples.front().field.grid;
  if (max_lag < 0 || max_lag >= grid.n) throw InvalidArgument("max_lag out of range");
  for (const auto& s : samples)
    if (!(s.field.grid == grid)) throw GridMismatch("samples live on different grids");

  const std::size_t nl = static_cast<std::size_t>(max_lag) + 1;
  std::vector<double> sum(nl, 0.0), sum2(nl, 0.0);
  for (const auto& s : samples) {
    for (std::size_t l = 0; l < nl; ++l) {
      double acc = 0.0;
      for (std::size_t j = 0; j < grid.size(); ++j) {
        auto idx = grid.unflatten(j);
        idx[0] += static_cast<int>(l);
        acc += s.field.values[j] * s.field.values[grid.flatten(idx)];
      }
      acc /= static_cast<double>(grid.size());
      sum[l] += acc;
      sum2[l] += acc * acc;
    }
  }
  const double ns = static_cast<double>(samples.size());
  CovarianceEstimate out{std::vector<double>(nl), std::vector<double>(nl)};
  for (std::size_t l = 0; l < nl; ++l) {
    const double mean = sum[l] / ns;
    const double var = std::max(0.0, (sum2[l] - ns * mean * mean) / (ns - 1.0));
    out.value[l] = mean;
    out.se[l] = std::sqrt(var / ns);
  }
  return out;
}

}  // namespace homog
