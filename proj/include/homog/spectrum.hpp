#pragma once

// Power spectrum models and the radial quadratures used to integrate them.
//
// Normalization: (2 pi)^d Rhat(xi) = int exp(-i xi.x) R(x) dx, hence
// R(x) = int exp(i xi.x) Rhat(xi) dxi and R(0) = int Rhat.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "homog/errors.hpp"

namespace homog {

/// Radially symmetric power spectrum Rhat(xi).
///
/// Short-range shapes:
///   gaussian: A exp(-|xi|^2 / w^2)
///   bump:     A max(0, 1 - |xi|/r_c)^2
/// A long-range spectrum multiplies a short-range base Shat by |xi|^{-n}
/// (decay exponent n > 0); it is singular at the origin.
struct PowerSpectrum {
  enum class Shape { gaussian, bump };

  Shape shape = Shape::gaussian;
  double amplitude = 1.0;
  double scale = 1.0;  // gaussian width w or bump cutoff r_c
  double decay = 0.0;  // n; zero for short range

  static PowerSpectrum gaussian(double amplitude, double width) {
    return PowerSpectrum{Shape::gaussian, amplitude, width, 0.0}.checked();
  }
  static PowerSpectrum bump(double amplitude, double cutoff) {
    return PowerSpectrum{Shape::bump, amplitude, cutoff, 0.0}.checked();
  }
  static PowerSpectrum long_range(double decay, const PowerSpectrum& base) {
    if (!(decay > 0.0)) throw InvalidArgument("long-range decay exponent must be positive");
    PowerSpectrum s = base;
    s.decay = decay;
    return s;
  }

  bool is_long_range() const { return decay > 0.0; }

  /// The bounded factor Shat (the whole spectrum when short range).
  double base(double r) const {
    switch (shape) {
      case Shape::gaussian:
        return amplitude * std::exp(-(r * r) / (scale * scale));
      case Shape::bump: {
        const double u = 1.0 - r / scale;
        return u > 0.0 ? amplitude * u * u : 0.0;
      }
    }
    return 0.0;
  }

  double operator()(double r) const {
    if (!is_long_range()) return base(r);
    if (r == 0.0) return amplitude == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::pow(r, -decay) * base(r);
  }

  /// Radius beyond which the base spectrum vanishes (bump) or where the
  /// quadratures switch to a semi-infinite rule (gaussian).
  double split_radius() const { return scale; }
  bool compact() const { return shape == Shape::bump; }

  std::string describe() const {
    std::string s = shape == Shape::gaussian ? "gaussian" : "bump";
    s += "(A=" + std::to_string(amplitude) + ", scale=" + std::to_string(scale) + ")";
    if (is_long_range()) s = "long_range(n=" + std::to_string(decay) + ", " + s + ")";
    return s;
  }

 private:
  PowerSpectrum checked() const {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
      throw SpectrumNegative("spectrum amplitude must be finite and non-negative");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("spectrum scale must be positive");
    return *this;
  }
};

/// |S^{d-1}|: 2, 2 pi, 4 pi.
inline double sphere_measure(int d) {
  return 2.0 * std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0);
}

namespace quad {

inline constexpr double kRelTol = 1e-10;

inline constexpr double kAbsFloor = 1e-20;

inline void check(double value, double error, const char* what, double abs_floor = kAbsFloor) {
  if (!std::isfinite(value) || !std::isfinite(error) || error > 1e-8 * std::abs(value) + abs_floor)
    throw DivergentIntegral(std::string("quadrature did not converge: ") + what + " (value " + std::to_string(value) + ", error " + std::to_string(error) + ")");
}

/// int_a^b f, endpoint singularities allowed.
template <class F>
double finite(F&& f, double a, double b, const char* what, double abs_floor = kAbsFloor) {
  if (b <= a) return 0.0;
  // Intervals at rounding scale have no interior abscissas; take the midpoint.
  if (b - a <= 1e-13 * std::max(std::abs(a), std::abs(b))) return (b - a) * f(0.5 * (a + b));
  boost::math::quadrature::tanh_sinh<double> rule(15);
  double err = 0.0;
  double l1 = 0.0;
  const double v = rule.integrate(f, a, b, kRelTol, &err, &l1);
  check(v, err, what, abs_floor);
  return v;
}

/// int_a^inf f
template <class F>
double semi_infinite(F&& f, double a, const char* what) {
  boost::math::quadrature::exp_sinh<double> rule(12);
  double err = 0.0;
  double l1 = 0.0;
  const double v = rule.integrate([&](double u) { return f(a + u); }, kRelTol, &err, &l1);
  check(v, err, what);
  return v;
}

/// Smooth integrand on a finite interval (adaptive Gauss-Kronrod).  abs_floor
/// absorbs rounding noise on pieces whose integral is negligible.
template <class F>
double smooth(F&& f, double a, double b, const char* what, double abs_floor = kAbsFloor, unsigned max_depth = 20) {
  if (b <= a) return 0.0;
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, max_depth, kRelTol, &err);
  check(v, err, what, abs_floor);
  return v;
}

/// int_0^inf g(r) dr for a radial integrand built on `spectrum`, with splits at
/// the origin and at the spectrum's split radius.
template <class G>
double radial(const PowerSpectrum& spectrum, G&& g, const char* what) {
  const double rs = spectrum.split_radius();
  double v = finite(g, 0.0, rs, what);
  if (!spectrum.compact()) v += semi_infinite(g, rs, what);
  return v;
}

}  // namespace quad

}  // namespace homog
