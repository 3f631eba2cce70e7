#pragma once

// Limit laws of the fluctuation theory and the ensemble statistics used to
// test them: the weight field script_M, the short- and long-range limit
// variances, fBm covariances, moment/KS summaries and log-log rate fits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "homog/effective_medium.hpp"
#include "homog/errors.hpp"
#include "homog/evolution.hpp"
#include "homog/spectral_grid.hpp"
#include "homog/spectrum.hpp"

namespace homog {

struct MomentSample {
  double eps = 0.0;
  std::uint64_t seed = 0;
  double X = 0.0;  // (u, M) of the realization
  double I = 0.0;  // energy ||u||^2
  double t = 0.0;
};

struct LimitLaw {
  enum class Kind { short_range, long_range };
  Kind kind = Kind::short_range;
  double variance = 0.0;
  double hurst = 0.5;
};

/// script_M_t(x) = int_0^t (G_s M)(x) (G_{t-s} u0)(x) ds with the homogenized
/// propagator G (shift rho), trapezoid in s with `steps` intervals.
inline Field script_M(double t, const Field& M, const Field& u0, double rho, double m, int steps = 64) {
  if (!(M.grid == u0.grid)) throw GridMismatch("M and u0 must share a grid");
  if (!(t >= 0.0)) throw InvalidArgument("t must be non-negative");
  if (steps < 1) throw InvalidArgument("script_M needs at least one step");
  Field out(M.grid);
  if (t == 0.0) return out;
  const auto spec = PropagatorSpec::homogenized(rho);
  const auto Mhat = forward_transform(M);
  const auto uhat = forward_transform(u0);
  const double h = t / steps;
  for (int j = 0; j <= steps; ++j) {
    const double s = j * h;
    const Field a = inverse_transform(propagate_spectral(Mhat, spec, s, m));
    const Field b = inverse_transform(propagate_spectral(uhat, spec, t - s, m));
    const double w = (j == 0 || j == steps) ? 0.5 * h : h;
    for (std::size_t x = 0; x < out.values.size(); ++x) out.values[x] += w * a.values[x] * b.values[x];
  }
  return out;
}

/// sigma^2 = (2 pi)^d Rhat(0) = int R(x) dx.
inline double sigma_squared(const PowerSpectrum& spectrum, int d) {
  if (spectrum.is_long_range()) throw InvalidArgument("sigma^2 is defined for short-range spectra");
  return std::pow(2.0 * std::numbers::pi, d) * spectrum(0.0);
}

/// (2 pi)^d Rhat(0) int script_M^2.
inline double limit_variance_short(const PowerSpectrum& spectrum, const Field& Mt) {
  return sigma_squared(spectrum, Mt.grid.dim) * l2_norm_squared(Mt);
}

namespace detail {

// Average of |v|^{-p} over the axis-aligned cell of side `h` centred on
// h * offset, in d = 1 or 2.  The origin cell is integrated in polar form,
// other cells by tanh-sinh in each axis (singular corners are excluded).
inline double cell_average_inverse_power(int d, double p, double h, const std::array<int, 3>& offset) {
  const double half = 0.5 * h;
  const bool origin = offset[0] == 0 && (d == 1 || offset[1] == 0);
  if (d == 1) {
    if (origin) return 2.0 * std::pow(half, 1.0 - p) / (1.0 - p) / h;
    const double a = h * offset[0] - half, b = h * offset[0] + half;
    auto f = [&](double v) { return std::pow(std::abs(v), -p); };
    return quad::finite(f, a, b, "cell average") / h;
  }
  if (origin) {
    // 8 int_0^{pi/4} int_0^{half / cos th} r^{1-p} dr dth
    auto f = [&](double th) { return std::pow(half / std::cos(th), 2.0 - p) / (2.0 - p); };
    return 8.0 * quad::finite(f, 0.0, std::numbers::pi / 4.0, "origin cell") / (h * h);
  }
  const double cx = h * offset[0], cy = h * offset[1];
  auto inner = [&](double x) {
    auto f = [&](double y) { return std::pow(x * x + y * y, -0.5 * p); };
    return quad::finite(f, cy - half, cy + half, "cell average");
  };
  return quad::finite(inner, cx - half, cx + half, "cell average") / (h * h);
}

inline constexpr int kNearCells = 4;

}  // namespace detail

/// Both evaluations of the long-range limit variance
///   Sigma_M = (2 pi)^d Shat(0) int int M(x) phi(x - y) M(y) dx dy
///           = Shat(0) int |Mhat(xi)|^2 |xi|^{-n} dxi,   phi = c_n |x|^{n-d}.
struct LongRangeVariance {
  double spectral = 0.0;
  double kernel = 0.0;
  double diagonal_share = 0.0;   // share of the kernel sum from the zero-lag cell
  double self_lag_error = 0.0;   // estimated relative error of that cell

  double value() const { return spectral; }
  double relative_gap() const { return spectral == 0.0 ? 0.0 : std::abs(kernel - spectral) / std::abs(spectral); }
};

struct LongRangeOptions {
  bool kernel = true;  // also evaluate the physical double integral
  double self_lag_tol = 5e-3;
};

/// Lattice forms of Sigma_M.  The weight |xi|^{-n} and the kernel |x|^{n-d} are
/// averaged over lattice cells within kNearCells of their singularity (exactly
/// on the singular cell); farther cells use point values.  The kernel sum is a
/// linear convolution on a zero-padded (2N)^d grid with the field placed on
/// the centred box [-L/2, L/2)^d, where script_M must vanish near the edge.
/// The zero-lag cell assumes script_M constant across one cell.  Its error is
/// estimated as the cell's share of the sum times the relative discrete
/// Laplacian (M, Delta_h M) / (M, M) over 24 (midpoint Taylor term); above self_lag_tol KernelSingular is thrown.
inline LongRangeVariance limit_variance_long(const PowerSpectrum& spectrum, const Field& Mt,
                                             const LongRangeOptions& opts = {}) {
  if (!spectrum.is_long_range()) throw InvalidArgument("limit_variance_long needs a long-range spectrum");
  const GridSpec& g = Mt.grid;
  const int d = g.dim;
  if (d > 2) throw InvalidArgument("long-range limit variance is implemented for d <= 2");
  const double n = spectrum.decay;
  const double c_n = riesz_constant(d, n);
  const double s0 = spectrum.base(0.0);
  LongRangeVariance out;
  if (s0 == 0.0) return out;

  // Spectral side.
  const auto Mhat = forward_transform(Mt);
  double spectral = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto idx = g.unflatten(k);
    std::array<int, 3> off{0, 0, 0};
    int reach = 0;
    for (int a = 0; a < d; ++a) {
      off[a] = g.wavenumber(idx[a]);
      reach = std::max(reach, std::abs(off[a]));
    }
    const double w = reach <= detail::kNearCells ? detail::cell_average_inverse_power(d, n, g.dk(), off)
                                                 : std::pow(frequency_at(g, k).norm, -n);
    spectral += std::norm(Mhat.coeffs[k]) * w;
  }
  out.spectral = s0 * spectral * g.dual_cell_volume();
  if (!opts.kernel) {
    out.kernel = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  // Kernel side: sum_x sum_y M(x) M(y) Kbar(x - y) dx^{2d} by zero-padded FFT.
  const GridSpec big{d, 2 * g.n, 2.0 * g.length};
  std::vector<Complex> mb(big.size()), kb(big.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    auto idx = g.unflatten(j);
    for (int a = 0; a < d; ++a) idx[a] = g.wavenumber(idx[a]);
    mb[big.flatten(idx)] = Mt.values[j];
  }
  double diagonal = 0.0;
  for (std::size_t j = 0; j < big.size(); ++j) {
    const auto idx = big.unflatten(j);
    std::array<int, 3> off{0, 0, 0};
    int reach = 0;
    double r2 = 0.0;
    for (int a = 0; a < d; ++a) {
      off[a] = big.wavenumber(idx[a]);
      reach = std::max(reach, std::abs(off[a]));
      r2 += std::pow(off[a] * g.dx(), 2);
    }
    double kv = 0.0;
    try {
      kv = reach <= detail::kNearCells ? detail::cell_average_inverse_power(d, d - n, g.dx(), off)
                                       : std::pow(r2, -0.5 * (d - n));
    } catch (const DivergentIntegral& e) {
      throw KernelSingular(std::string("Riesz kernel cell average failed: ") + e.what());
    }
    kb[j] = c_n * kv;
  }
  double m2 = 0.0, lap = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double v = Mt.values[j];
    m2 += v * v;
    const auto idx = g.unflatten(j);
    for (int a = 0; a < d; ++a) {
      auto lo = idx, hi = idx;
      --lo[a], ++hi[a];
      lap += v * (Mt.values[g.flatten(lo)] + Mt.values[g.flatten(hi)] - 2.0 * v);
    }
  }
  diagonal = kb[0].real() * m2;
  fft_inplace(big, mb, FFTW_FORWARD);
  fft_inplace(big, kb, FFTW_FORWARD);
  double total = 0.0;
  for (std::size_t k = 0; k < big.size(); ++k) total += std::norm(mb[k]) * kb[k].real();
  total /= static_cast<double>(big.size());
  const double cell = g.cell_volume();
  const double factor = std::pow(2.0 * std::numbers::pi, d) * s0 * cell * cell;
  out.kernel = factor * total;
  out.diagonal_share = total != 0.0 ? diagonal / total : 0.0;
  out.self_lag_error = out.diagonal_share * std::abs(lap) / (24.0 * m2);
  if (!std::isfinite(out.kernel) || out.self_lag_error > opts.self_lag_tol)
    throw KernelSingular("zero-lag cell error estimate " + std::to_string(out.self_lag_error) +
                         " exceeds tolerance; refine the grid");
  return out;
}

/// max over lattice shifts tau of int_{|xi| < 1} |u0hat(xi + tau)|^2 |xi|^{-n} dxi.
inline double regularity_integral(const Field& u0, double n) {
  const GridSpec& g = u0.grid;
  const auto U = forward_transform(u0);
  std::vector<std::size_t> ball;
  std::vector<double> weight;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto f = frequency_at(g, k);
    if (f.norm >= 1.0) continue;
    const auto idx = g.unflatten(k);
    std::array<int, 3> off{0, 0, 0};
    for (int a = 0; a < g.dim; ++a) off[a] = g.wavenumber(idx[a]);
    ball.push_back(k);
    weight.push_back(g.dim <= 2 ? detail::cell_average_inverse_power(g.dim, n, g.dk(), off)
                                : (f.norm > 0.0 ? std::pow(f.norm, -n) : 0.0));
  }
  double best = 0.0;
  for (std::size_t tau = 0; tau < g.size(); ++tau) {
    const auto ti = g.unflatten(tau);
    double s = 0.0;
    for (std::size_t b = 0; b < ball.size(); ++b) {
      auto idx = g.unflatten(ball[b]);
      for (int a = 0; a < g.dim; ++a) idx[a] += ti[a];
      s += std::norm(U.coeffs[g.flatten(idx)]) * weight[b];
    }
    best = std::max(best, s * g.dual_cell_volume());
  }
  return best;
}

namespace detail {

inline void check_hurst(double H) {
  if (!(H > 0.0 && H < 1.0)) throw DomainError("Hurst parameter must lie in (0, 1), got " + std::to_string(H));
}

inline double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

/// Isotropic fBm covariance (|x|^{2H} + |y|^{2H} - |x-y|^{2H}) / 2.
inline double fbm_covariance(std::span<const double> x, std::span<const double> y, double H) {
  detail::check_hurst(H);
  if (x.size() != y.size()) throw InvalidArgument("points must have the same dimension");
  std::vector<double> diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - y[i];
  const double e = 2.0 * H;
  return 0.5 * (std::pow(detail::norm_of(x), e) + std::pow(detail::norm_of(y), e) - std::pow(detail::norm_of(diff), e));
}

/// Anisotropic product form 2^{-d} prod_i (|x_i|^{2H_i} + |y_i|^{2H_i} - |x_i - y_i|^{2H_i}).
inline double fbm_covariance(std::span<const double> x, std::span<const double> y, std::span<const double> H) {
  if (x.size() != y.size() || x.size() != H.size()) throw InvalidArgument("points and Hurst vector must match");
  double p = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    detail::check_hurst(H[i]);
    const double e = 2.0 * H[i];
    p *= 0.5 * (std::pow(std::abs(x[i]), e) + std::pow(std::abs(y[i]), e) - std::pow(std::abs(x[i] - y[i]), e));
  }
  return p;
}

inline constexpr std::size_t kMinEnsemble = 100;

struct EnsembleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double var = 0.0;  // unbiased
  double se = 0.0;   // standard error of the mean
  double skew = 0.0;
  double kurtosis = 3.0;  // plain (normal = 3)
  double excess_kurtosis = 0.0;
  double ks_stat = 0.0;
  double ks_p = 1.0;
  bool degenerate = false;  // zero variance: shape statistics undefined
};

/// Survival function of the Kolmogorov distribution, P(K > lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.3) {
    // Small-lambda form: P(K <= l) = sqrt(2 pi)/l sum exp(-(2k-1)^2 pi^2 / (8 l^2)).
    double s = 0.0;
    for (int k = 1; k <= 50; ++k)
      s += std::exp(-std::pow(2.0 * k - 1.0, 2) * std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda));
    return 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Sample moments (bias-corrected skewness and excess kurtosis) and the
/// Kolmogorov-Smirnov distance to the normal law with the sample mean and
/// standard deviation.  The p-value uses the asymptotic Kolmogorov law with
/// the Stephens finite-size factor; with fitted parameters it is conservative.
inline EnsembleStats ensemble_stats(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < kMinEnsemble)
    throw TooFewSamples("ensemble statistics need at least " + std::to_string(kMinEnsemble) + " samples, got " +
                        std::to_string(n));
  EnsembleStats st;
  st.n = n;
  const double dn = static_cast<double>(n);
  st.mean = std::accumulate(values.begin(), values.end(), 0.0) / dn;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double c = v - st.mean;
    const double c2 = c * c;
    m2 += c2, m3 += c2 * c, m4 += c2 * c2;
  }
  m2 /= dn, m3 /= dn, m4 /= dn;
  st.var = m2 * dn / (dn - 1.0);
  st.se = std::sqrt(st.var / dn);
  const double scale = std::max(std::abs(st.mean), 1e-300);
  if (m2 <= 1e-28 * scale * scale) {
    st.var = 0.0;
    st.se = 0.0;
    st.degenerate = true;
    st.skew = st.kurtosis = st.excess_kurtosis = st.ks_stat = st.ks_p = std::numeric_limits<double>::quiet_NaN();
    return st;
  }
  const double g1 = m3 / std::pow(m2, 1.5);
  const double g2 = m4 / (m2 * m2) - 3.0;
  st.skew = g1 * std::sqrt(dn * (dn - 1.0)) / (dn - 2.0);
  st.excess_kurtosis = ((dn + 1.0) * g2 + 6.0) * (dn - 1.0) / ((dn - 2.0) * (dn - 3.0));
  st.kurtosis = st.excess_kurtosis + 3.0;

  std::vector<double> z(values.begin(), values.end());
  std::sort(z.begin(), z.end());
  const double sd = std::sqrt(st.var);
  double D = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = normal_cdf((z[i] - st.mean) / sd);
    D = std::max({D, (i + 1.0) / dn - F, F - static_cast<double>(i) / dn});
  }
  st.ks_stat = D;
  const double rn = std::sqrt(dn);
  st.ks_p = kolmogorov_survival((rn + 0.12 + 0.11 / rn) * D);
  return st;
}

inline EnsembleStats ensemble_stats(std::span<const MomentSample> samples) {
  std::vector<double> x;
  x.reserve(samples.size());
  for (const auto& s : samples) {
    if (!std::isfinite(s.X)) throw InvalidArgument("non-finite moment sample");
    x.push_back(s.X);
  }
  return ensemble_stats(std::span<const double>(x));
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};

struct RatePoint {
  double eps = 0.0;
  double error = 0.0;
};

inline constexpr std::size_t kMinRatePoints = 4;
inline constexpr double kMinRateSpan = 8.0;

/// Least squares of log(error) on log(eps).
inline RateFit rate_fit(std::span<const RatePoint> points) {
  if (points.size() < kMinRatePoints) throw InvalidArgument("rate fit needs at least 4 points");
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& p : points) {
    if (!(p.eps > 0.0) || !(p.error > 0.0))
      throw NonPositive("rate fit needs positive eps and error, got (" + std::to_string(p.eps) + ", " +
                        std::to_string(p.error) + ")");
    lo = std::min(lo, p.eps);
    hi = std::max(hi, p.eps);
  }
  if (hi / lo < kMinRateSpan * (1.0 - 1e-12)) throw InvalidArgument("rate fit needs eps spanning a factor of 8");
  const double n = static_cast<double>(points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : points) {
    const double x = std::log(p.eps), y = std::log(p.error);
    sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
  }
  const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
  RateFit f;
  f.slope = cxy / cxx;
  f.intercept = (sy - f.slope * sx) / n;
  const double sse = std::max(0.0, cyy - f.slope * cxy);
  f.r2 = cyy > 0.0 ? 1.0 - sse / cyy : 1.0;
  f.slope_se = n > 2.0 ? std::sqrt(sse / (n - 2.0) / cxx) : 0.0;
  return f;
}

}  // namespace homog
