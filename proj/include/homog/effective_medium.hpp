#pragma once

// Closed-form constants of the homogenized limit: the effective potential,
// its eps-corrected version, the potential and error scalings, the bound
// rho_f with the admissible horizon, and the long-range constants.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "homog/errors.hpp"
#include "homog/spectrum.hpp"

namespace homog {

namespace detail {

inline bool same_order(double d, double m) { return std::abs(d - m) < 1e-12; }

inline void require_d_ge_m(int d, double m) {
  if (d < 1) throw DomainError("dimension must be positive");
  if (!(m > 0.0)) throw DomainError("symbol order must be positive");
  if (d + 1e-12 < m) throw DomainError("d < m regime is not covered (stochastic limit)");
}

inline void require_quadrature_dim(int d) {
  if (d > 3) throw DomainError("spectral quadratures are implemented for d <= 3");
}

inline void require_eps(double eps, bool allow_one) {
  if (!(eps > 0.0) || eps > 1.0 || (!allow_one && eps == 1.0))
    throw DomainError("eps must lie in (0, 1), got " + std::to_string(eps));
}

}  // namespace detail

/// Effective potential rho: c_d Rhat(0) when d = m, int Rhat(xi)/|xi|^m dxi
/// when d > m.
inline double compute_rho(const PowerSpectrum& spectrum, int d, double m) {
  detail::require_d_ge_m(d, m);
  detail::require_quadrature_dim(d);
  if (spectrum.amplitude == 0.0) return 0.0;
  if (detail::same_order(d, m)) {
    if (spectrum.is_long_range()) throw DivergentIntegral("long-range spectrum requires d > m + n");
    return sphere_measure(d) * spectrum(0.0);
  }
  if (d <= m + spectrum.decay) throw DivergentIntegral("rho diverges: need d > m + n");
  const double p = d - 1.0 - m;
  const double v =
      quad::radial(spectrum, [&](double r) { return r > 0.0 ? std::pow(r, p) * spectrum(r) : 0.0; }, "rho");
  return sphere_measure(d) * v;
}

namespace detail {

// int_{R^d} Rhat(|xi1 - y|) |xi1|^{-m} dxi1 for |y| = shift > 0.
inline double shifted_weighted_integral(const PowerSpectrum& s, int d, double m, double shift) {
  const double rs = s.split_radius();
  const double y = shift;
  // Radial breakpoints: the origin singularity, the shift, and the radii
  // where the shifted support (or the gaussian split) touches the sphere.
  auto outer = [&](auto&& g, const char* what) {
    std::vector<double> cuts{0.0, std::abs(rs - y), y, y + rs};
    std::sort(cuts.begin(), cuts.end());
    double v = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) v += quad::finite(g, cuts[i], cuts[i + 1], what);
    if (!s.compact()) v += quad::semi_infinite(g, cuts.back(), what);
    return v;
  };
  if (d == 1) {
    auto g = [&](double r) {
      if (r <= 0.0) return 0.0;
      const double a = std::abs(r - y);
      const double left = a > 0.0 || !s.is_long_range() ? s(a) : 0.0;
      return std::pow(r, -m) * (left + s(r + y));
    };
    return outer(g, "rho_eps (d=1)");
  }
  // Angular integral of Rhat(|r theta - y|) over the sphere.  With
  // q^2 = (r-y)^2 + 4 r y u the distance is computed without cancellation:
  // d = 3 uses u = (1-c)/2 in [0,1], d = 2 uses u = sin^2(phi), phi in
  // [0, pi/2].  Near-singular behaviour (the cone or the |xi|^{-n} factor at
  // r = y) then sits at the left end, which suits tanh-sinh.  A compact
  // spectrum is integrated only up to the u where q reaches its cutoff.
  auto angular = [&](double r) {
    const double a = (r - y) * (r - y);
    const double span = 4.0 * r * y;
    auto value = [&](double u) {
      const double q = std::sqrt(a + span * u);
      return q > 0.0 || !s.is_long_range() ? s(q) : 0.0;
    };
    double umax = 1.0;
    if (s.compact()) {
      if (a >= rs * rs) return 0.0;
      if (span > 0.0) umax = std::min(1.0, (rs * rs - a) / span);
    }
    // Next to the cutoff the integrand is at rounding level; the floor keeps
    // that noise from failing the convergence check.
    const double floor = 1e-13 * s.amplitude;
    if (d == 2) {
      auto h = [&](double phi) {
        const double sp = std::sin(phi);
        return value(sp * sp);
      };
      return 4.0 * quad::finite(h, 0.0, std::asin(std::sqrt(umax)), "rho_eps angular", floor);
    }
    return 4.0 * std::numbers::pi * quad::finite(value, 0.0, umax, "rho_eps angular", floor);
  };
  auto g = [&](double r) { return r > 0.0 ? std::pow(r, d - 1.0 - m) * angular(r) : 0.0; };
  return outer(g, "rho_eps");
}

}  // namespace detail

/// rho_eps(xi): int Rhat(xi1 - eps xi)/|xi1|^m dxi1 (d > m) or c_d Rhat(eps xi)
/// (d = m).  Spectra are radial, so only |xi| matters.
inline double compute_rho_eps(const PowerSpectrum& spectrum, int d, double m, double eps, double xi_norm) {
  detail::require_d_ge_m(d, m);
  detail::require_quadrature_dim(d);
  if (eps < 0.0) throw DomainError("eps must be non-negative");
  const double y = eps * std::abs(xi_norm);
  if (y == 0.0) return compute_rho(spectrum, d, m);
  if (spectrum.amplitude == 0.0) return 0.0;
  if (detail::same_order(d, m)) return sphere_measure(d) * spectrum(y);
  if (d <= m + spectrum.decay) throw DivergentIntegral("rho_eps diverges: need d > m + n");
  return detail::shifted_weighted_integral(spectrum, d, m, y);
}

/// eps^alpha: eps^{m/2} |ln eps|^{1/2} for d = m, eps^{m/2} for d > m.
inline double alpha_scale(int d, double m, double eps) {
  detail::require_d_ge_m(d, m);
  const bool critical = detail::same_order(d, m);
  detail::require_eps(eps, !critical);
  const double base = std::pow(eps, m / 2.0);
  return critical ? base * std::sqrt(std::abs(std::log(eps))) : base;
}

/// eps^beta, four branches in d relative to m and 2m.
inline double beta_scale(int d, double m, double eps) {
  detail::require_d_ge_m(d, m);
  detail::require_eps(eps, false);
  const double lg = std::abs(std::log(eps));
  if (detail::same_order(d, m)) return 1.0 / lg;
  if (d < 2.0 * m - 1e-12) return std::pow(eps, d - m);
  if (detail::same_order(d, 2.0 * m)) return std::pow(eps, m) * lg;
  return std::pow(eps, m);
}

/// Exponent x with eps^x equal to the given scale.
inline double exponent_of(double scale, double eps) { return std::log(scale) / std::log(eps); }

/// Variance scaling eps^{d - 2 alpha} of the rescaled potential's spectrum.
inline double potential_variance_scale(int d, double m, double eps) {
  const double a = alpha_scale(d, m, eps);
  return std::pow(eps, d) / (a * a);
}

/// Radially symmetric decreasing bound f(|xi|) >= Rhat(xi) with
/// f(r) <= tau r^{-decay}.
struct RadialBound {
  std::function<double(double)> f;
  double tau = 0.0;
  double decay = 0.0;
  double split = 1.0;
  bool compact = false;
};

/// The model spectra are themselves radial and decreasing, so they bound
/// themselves; tau is the supremum of the base factor.
inline RadialBound dominating_bound(const PowerSpectrum& s) {
  return RadialBound{[s](double r) { return s(r); }, s.amplitude, s.decay, s.split_radius(), s.compact()};
}

struct BoundConstants {
  double rho_f = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
};

inline constexpr double kHorizonMargin = 1e-3;

/// rho_f and the horizon T_max = (1 - margin) / (4 rho_f).
inline BoundConstants rho_f_bound(const RadialBound& bound, int d, double m) {
  detail::require_d_ge_m(d, m);
  BoundConstants out;
  if (detail::same_order(d, m)) {
    if (bound.decay > 0.0) throw DivergentIntegral("d = m requires a bounded spectrum (n = 0)");
    out.rho_f = sphere_measure(d) * bound.f(0.0);
  } else {
    if (d <= m + bound.decay) throw DivergentIntegral("rho_f diverges: need d > m + n");
    const double p = d - 1.0 - m;
    auto g = [&](double r) { return r > 0.0 ? std::pow(r, p) * bound.f(r) : 0.0; };
    double v = quad::finite(g, 0.0, bound.split, "rho_f");
    if (!bound.compact) v += quad::semi_infinite(g, bound.split, "rho_f");
    out.rho_f = std::max(sphere_measure(d) * v, bound.tau);
  }
  if (out.rho_f > 0.0) out.t_max = (1.0 - kHorizonMargin) / (4.0 * out.rho_f);
  return out;
}

/// c_n = Gamma((d-n)/2) / (2^n pi^{d/2} Gamma(n/2)), normalizing the Riesz
/// kernel c_n |x|^{n-d} whose transform is |xi|^{-n}.
inline double riesz_constant(int d, double n) {
  if (!(n > 0.0) || !(n < d)) throw DomainError("Riesz constant needs 0 < n < d");
  return std::tgamma((d - n) / 2.0) / (std::pow(2.0, n) * std::pow(std::numbers::pi, d / 2.0) * std::tgamma(n / 2.0));
}

/// Hurst parameter of the limiting fractional Brownian field, 2H = 1 + n/d.
inline double hurst(int d, double n) { return 0.5 * (1.0 + n / d); }

struct MediumConstants {
  double rho = 0.0;
  double rho_f = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
  int d = 1;
  double m = 1.0;

  double alpha_of_eps(double eps) const { return exponent_of(alpha_scale(d, m, eps), eps); }
  double beta_of_eps(double eps) const { return exponent_of(beta_scale(d, m, eps), eps); }
};

inline MediumConstants medium_constants(const PowerSpectrum& spectrum, int d, double m) {
  MediumConstants c;
  c.d = d;
  c.m = m;
  c.rho = compute_rho(spectrum, d, m);
  const auto b = rho_f_bound(dominating_bound(spectrum), d, m);
  c.rho_f = b.rho_f;
  c.t_max = b.t_max;
  return c;
}

}  // namespace homog
