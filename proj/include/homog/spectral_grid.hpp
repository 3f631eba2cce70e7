#pragma once

// Periodic torus discretization and the Fourier machinery everything else
// builds on.
//
// Transform convention (fixed once for the whole library):
//   forward:  F(xi_k) = dx^d * sum_x f(x) exp(-i xi_k . x)
//   inverse:  f(x)    = L^{-d} * sum_k F(xi_k) exp(+i xi_k . x)
// so that F approximates the continuum transform int exp(-i xi.x) f(x) dx and
// the inverse carries dxi^d / (2 pi)^d = L^{-d}.  Lattice sites are x_j = j*dx,
// frequencies are stored in wrap-around order with the zero mode at index 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include <fftw3.h>

#include "homog/errors.hpp"

namespace homog {

using Complex = std::complex<double>;

struct GridSpec {
  int dim = 1;
  int n = 64;  // points per axis
  double length = 2.0 * std::numbers::pi;

  void validate() const {
    if (dim < 1 || dim > 3) throw InvalidArgument("grid dimension must be 1, 2 or 3");
    if (n < 4 || (n & (n - 1)) != 0)
      throw InvalidArgument("points per axis must be a power of two >= 4, got " + std::to_string(n));
    if (!(length > 0.0) || !std::isfinite(length))
      throw InvalidArgument("grid length must be positive and finite");
  }

  double dx() const { return length / n; }
  double dk() const { return 2.0 * std::numbers::pi / length; }
  double cell_volume() const { return std::pow(dx(), dim); }
  double dual_cell_volume() const { return std::pow(dk(), dim); }
  double volume() const { return std::pow(length, dim); }

  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(n);
    return s;
  }

  /// Signed integer wavenumber of an axis index, in {-n/2, ..., n/2-1}.
  int wavenumber(int index) const { return index < n / 2 ? index : index - n; }

  std::array<int, 3> unflatten(std::size_t flat) const {
    std::array<int, 3> idx{0, 0, 0};
    for (int a = dim - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(flat % static_cast<std::size_t>(n));
      flat /= static_cast<std::size_t>(n);
    }
    return idx;
  }

  std::size_t flatten(const std::array<int, 3>& idx) const {
    std::size_t flat = 0;
    for (int a = 0; a < dim; ++a) {
      const int i = ((idx[a] % n) + n) % n;
      flat = flat * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
    }
    return flat;
  }

  /// Flat index of the mode -k (or of the site -x).
  std::size_t mirror(std::size_t flat) const {
    auto idx = unflatten(flat);
    for (int a = 0; a < dim; ++a) idx[a] = (n - idx[a]) % n;
    return flatten(idx);
  }

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.dim == b.dim && a.n == b.n && a.length == b.length;
  }
};

/// A point of the frequency lattice.
struct Frequency {
  std::array<double, 3> xi{0.0, 0.0, 0.0};
  double norm = 0.0;
};

inline Frequency frequency_at(const GridSpec& grid, std::size_t flat) {
  Frequency f;
  const auto idx = grid.unflatten(flat);
  double s = 0.0;
  for (int a = 0; a < grid.dim; ++a) {
    f.xi[a] = grid.dk() * grid.wavenumber(idx[a]);
    s += f.xi[a] * f.xi[a];
  }
  f.norm = std::sqrt(s);
  return f;
}

/// |xi_k| for every lattice mode, in storage order.
inline std::vector<double> frequency_norms(const GridSpec& grid) {
  std::vector<double> out(grid.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = frequency_at(grid, k).norm;
  return out;
}

/// Site coordinates x_j = j*dx along each axis.
inline std::array<double, 3> position_at(const GridSpec& grid, std::size_t flat) {
  std::array<double, 3> x{0.0, 0.0, 0.0};
  const auto idx = grid.unflatten(flat);
  for (int a = 0; a < grid.dim; ++a) x[a] = grid.dx() * idx[a];
  return x;
}

struct Field {
  GridSpec grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(const GridSpec& g) : grid(g), values(g.size(), 0.0) {}
  Field(const GridSpec& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw GridMismatch("field value count does not match grid");
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

struct SpectralField {
  GridSpec grid;
  std::vector<Complex> coeffs;

  SpectralField() = default;
  explicit SpectralField(const GridSpec& g) : grid(g), coeffs(g.size(), Complex{}) {}
};

/// Builds a field by evaluating f(x) at every site, where x is the position
/// array of the site.
template <class Fn>
Field sample_field(const GridSpec& grid, Fn&& f) {
  Field out(grid);
  for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] = f(position_at(grid, j));
  return out;
}

namespace detail {

// FFTW planning is not thread-safe; execution on distinct arrays is.  Plans are
// in-place, unaligned, and shared per (dim, n, sign).
class PlanCache {
 public:
  static fftw_plan get(const GridSpec& grid, int sign) {
    static std::mutex mutex;
    static std::map<std::tuple<int, int, int>, fftw_plan> plans;
    std::lock_guard<std::mutex> lock(mutex);
    const auto key = std::make_tuple(grid.dim, grid.n, sign);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    std::vector<Complex> scratch(grid.size());
    auto* data = reinterpret_cast<fftw_complex*>(scratch.data());
    std::array<int, 3> dims{grid.n, grid.n, grid.n};
    fftw_plan plan = fftw_plan_dft(grid.dim, dims.data(), data, data, sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans.emplace(key, plan);
    return plan;
  }
};

}  // namespace detail

/// Raw in-place DFT on a buffer laid out like `grid` (no normalization).
inline void fft_inplace(const GridSpec& grid, std::span<Complex> data, int sign) {
  fftw_plan plan = detail::PlanCache::get(grid, sign);
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan, p, p);
}

inline SpectralField forward_transform(const Field& f) {
  f.grid.validate();
  if (f.values.size() != f.grid.size()) throw GridMismatch("field value count does not match grid");
  SpectralField out(f.grid);
  for (std::size_t j = 0; j < f.values.size(); ++j) out.coeffs[j] = f.values[j];
  fft_inplace(f.grid, out.coeffs, FFTW_FORWARD);
  const double scale = f.grid.cell_volume();
  for (auto& c : out.coeffs) c *= scale;
  return out;
}

/// Largest |F(k) - conj F(-k)| relative to max |F|.
inline double hermitian_asymmetry(const SpectralField& F) {
  double peak = 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < F.coeffs.size(); ++k) {
    peak = std::max(peak, std::abs(F.coeffs[k]));
    worst = std::max(worst, std::abs(F.coeffs[k] - std::conj(F.coeffs[F.grid.mirror(k)])));
  }
  return peak > 0.0 ? worst / peak : 0.0;
}

inline Field inverse_transform(const SpectralField& F) {
  F.grid.validate();
  if (F.coeffs.size() != F.grid.size()) throw GridMismatch("coefficient count does not match grid");
  if (const double asym = hermitian_asymmetry(F); asym > 1e-9)
    throw HermitianViolation("spectrum is not Hermitian (relative asymmetry " + std::to_string(asym) + ")");
  std::vector<Complex> buf = F.coeffs;
  fft_inplace(F.grid, buf, FFTW_BACKWARD);
  Field out(F.grid);
  const double scale = 1.0 / F.grid.volume();
  for (std::size_t j = 0; j < buf.size(); ++j) out.values[j] = buf[j].real() * scale;
  return out;
}

/// Pointwise product coeffs(k) * symbol(xi_k).  `symbol` takes a Frequency and
/// returns a real or complex number.
template <class Symbol>
SpectralField apply_multiplier(const SpectralField& F, Symbol&& symbol) {
  SpectralField out = F;
  for (std::size_t k = 0; k < out.coeffs.size(); ++k) {
    const auto s = symbol(frequency_at(F.grid, k));
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(s)>>) {
      out.coeffs[k] *= static_cast<double>(s);
    } else {
      out.coeffs[k] *= Complex(s);
    }
  }
  return out;
}

/// sum |f|^2 dx^d
inline double l2_norm_squared(const Field& f) {
  double s = 0.0;
  for (double v : f.values) s += v * v;
  return s * f.grid.cell_volume();
}

/// Spectral-side energy L^{-d} sum |F|^2; equals l2_norm_squared of the
/// inverse transform (Parseval).
inline double spectral_energy(const SpectralField& F) {
  double s = 0.0;
  for (const auto& c : F.coeffs) s += std::norm(c);
  return s / F.grid.volume();
}

/// (f, g) = sum f g dx^d
inline double inner_product(const Field& f, const Field& g) {
  if (!(f.grid == g.grid)) throw GridMismatch("inner product of fields on different grids");
  double s = 0.0;
  for (std::size_t j = 0; j < f.values.size(); ++j) s += f.values[j] * g.values[j];
  return s * f.grid.cell_volume();
}

}  // namespace homog
