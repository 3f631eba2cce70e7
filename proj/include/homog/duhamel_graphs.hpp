#pragma once

// Wick pairings of the Duhamel moment expansion and their lattice evaluation.
//
// A moment E[X_n X_m] with X_k = (u_k(t), M) involves n potential factors from
// the upper copy and m from the lower copy.  Factors are numbered 1..n (upper
// row, outermost first) and n+1..n+m (lower row).  A pairing is a perfect
// matching of those 2*nbar labels; a pair is crossing when it couples the two
// rows and simple when it joins neighbours within one row.
//
// Lattice model.  The potential is V(x) = sum_j a_j exp(i xi_j x) with
// E[a_j a_j'] = P_j [j' = -j], P_j = eps^{d-2 alpha} Rhat(eps xi_j) dxi^d, and
// (V u)^(xi_i) = sum_j a_j uhat(xi_i - xi_j).  Factor r of a row carries the
// mode j_r = eta_{r-1} - eta_r, so continuum deltas become Kronecker deltas on
// mode indices.  Pair expectations:
//   upper-upper, lower-lower:  P_j [j' = -j]
//   upper-lower:               P_j [j' = j]     (the lower row is conjugated)
// Time integrals use the same trapezoid recursion as duhamel_terms, so the
// evaluation is the exact expectation of the discrete Monte Carlo quantity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "homog/effective_medium.hpp"
#include "homog/errors.hpp"
#include "homog/evolution.hpp"
#include "homog/random_field.hpp"
#include "homog/spectral_grid.hpp"

namespace homog {

struct GraphPairing {
  int nbar = 0;
  std::vector<std::pair<int, int>> pairs;  // (k, l) with k < l, labels 1..2 nbar

  /// Partner of every label (index 0 unused).
  std::vector<int> partners() const {
    std::vector<int> out(2 * nbar + 1, 0);
    for (auto [k, l] : pairs) out[k] = l, out[l] = k;
    return out;
  }
};

struct GraphClass {
  bool is_crossing = false;
  bool is_simple_graph = false;
  bool is_crossing_simple = false;
};

inline constexpr int kMaxPairingOrder = 7;

inline long long double_factorial_odd(int nbar) {
  long long v = 1;
  for (int k = 2 * nbar - 1; k > 1; k -= 2) v *= k;
  return v;
}

namespace detail {

inline void enumerate_rec(std::vector<int>& partner, int size, std::vector<GraphPairing>& out, int nbar) {
  int first = 1;
  while (first <= size && partner[first] != 0) ++first;
  if (first > size) {
    GraphPairing g{nbar, {}};
    for (int k = 1; k <= size; ++k)
      if (partner[k] > k) g.pairs.emplace_back(k, partner[k]);
    out.push_back(std::move(g));
    return;
  }
  for (int l = first + 1; l <= size; ++l) {
    if (partner[l] != 0) continue;
    partner[first] = l, partner[l] = first;
    enumerate_rec(partner, size, out, nbar);
    partner[first] = 0, partner[l] = 0;
  }
}

}  // namespace detail

/// Every perfect matching of {1..2 nbar}, in lexicographic order.
inline std::vector<GraphPairing> enumerate_pairings(int nbar) {
  if (nbar < 1 || nbar > kMaxPairingOrder)
    throw TooLarge("pairing order must lie in 1.." + std::to_string(kMaxPairingOrder) + ", got " +
                   std::to_string(nbar));
  std::vector<GraphPairing> out;
  out.reserve(static_cast<std::size_t>(double_factorial_odd(nbar)));
  std::vector<int> partner(2 * nbar + 1, 0);
  detail::enumerate_rec(partner, 2 * nbar, out, nbar);
  return out;
}

/// Classification for the split of the 2 nbar factors into rows of n and m.
inline GraphClass classify(const GraphPairing& g, int n, int m) {
  if (n < 0 || m < 0 || n + m != 2 * g.nbar)
    throw SplitMismatch("row split " + std::to_string(n) + "+" + std::to_string(m) + " does not cover " +
                        std::to_string(2 * g.nbar) + " factors");
  int crossing = 0;
  int simple = 0;
  for (auto [k, l] : g.pairs) {
    if (k <= n && l > n) {
      ++crossing;
    } else if (l == k + 1) {
      ++simple;
    }
  }
  const int total = static_cast<int>(g.pairs.size());
  GraphClass c;
  c.is_crossing = crossing > 0;
  c.is_simple_graph = simple == total;
  c.is_crossing_simple = crossing == 1 && simple == total - 1;
  return c;
}

/// Maps factor labels in the numbering that skips n+1 (upper factors 1..n,
/// lower factors n+2..n+m+1) to the contiguous labels used here.
inline GraphPairing from_skipped_labels(int nbar, int n, const std::vector<std::pair<int, int>>& pairs) {
  auto map = [&](int p) {
    if (p == n + 1 || p < 1 || p > 2 * nbar + 1) throw InvalidArgument("label " + std::to_string(p) + " is not a factor");
    return p <= n ? p : p - 1;
  };
  GraphPairing g{nbar, {}};
  for (auto [a, b] : pairs) {
    int k = map(a), l = map(b);
    if (k > l) std::swap(k, l);
    g.pairs.emplace_back(k, l);
  }
  std::sort(g.pairs.begin(), g.pairs.end());
  return g;
}

struct CensusRow {
  int nbar = 0;
  int n = 0;
  int m = 0;
  long long total = 0;
  long long crossing = 0;
  long long simple = 0;
  long long crossing_simple = 0;
};

/// Class counts for every nbar <= nbar_max and every split n + m = 2 nbar.
inline std::vector<CensusRow> census(int nbar_max) {
  if (nbar_max < 1 || nbar_max > kMaxPairingOrder)
    throw TooLarge("census order must lie in 1.." + std::to_string(kMaxPairingOrder));
  std::vector<CensusRow> rows;
  for (int nbar = 1; nbar <= nbar_max; ++nbar) {
    const auto graphs = enumerate_pairings(nbar);
    for (int n = 2 * nbar; n >= 0; --n) {
      CensusRow r{nbar, n, 2 * nbar - n, static_cast<long long>(graphs.size()), 0, 0, 0};
      for (const auto& g : graphs) {
        const auto c = classify(g, n, r.m);
        r.crossing += c.is_crossing;
        r.simple += c.is_simple_graph;
        r.crossing_simple += c.is_crossing_simple;
      }
      rows.push_back(r);
    }
  }
  return rows;
}

/// Factor modes as integer combinations of the pair variables: factor r has
/// mode sum_p coeff[r][p] v_p.  The first label of each pair carries +v_p;
/// its partner carries -v_p within a row and +v_p across rows.
struct ConstraintSystem {
  int n = 0;
  int m = 0;
  std::vector<std::vector<int>> coeff;  // indexed [label - 1][pair]

  /// Coefficients of eta_0 - eta_last for one row (0 upper, 1 lower).
  std::vector<int> momentum_transfer(int row) const {
    std::vector<int> out(coeff.empty() ? 0 : coeff.front().size(), 0);
    const int lo = row == 0 ? 0 : n;
    const int hi = row == 0 ? n : n + m;
    for (int r = lo; r < hi; ++r)
      for (std::size_t p = 0; p < out.size(); ++p) out[p] += coeff[r][p];
    return out;
  }
};

inline ConstraintSystem assemble_constraints(const GraphPairing& g, int n, int m) {
  classify(g, n, m);
  ConstraintSystem cs{n, m, std::vector<std::vector<int>>(n + m, std::vector<int>(g.pairs.size(), 0))};
  for (std::size_t p = 0; p < g.pairs.size(); ++p) {
    const auto [k, l] = g.pairs[p];
    const bool cross = k <= n && l > n;
    cs.coeff[k - 1][p] = 1;
    cs.coeff[l - 1][p] = cross ? 1 : -1;
  }
  return cs;
}

enum class GraphSelection { all, crossing, non_crossing, simple, crossing_simple };

inline bool selected(const GraphClass& c, GraphSelection s) {
  switch (s) {
    case GraphSelection::all:
      return true;
    case GraphSelection::crossing:
      return c.is_crossing;
    case GraphSelection::non_crossing:
      return !c.is_crossing;
    case GraphSelection::simple:
      return c.is_simple_graph;
    case GraphSelection::crossing_simple:
      return c.is_crossing_simple;
  }
  return false;
}

inline constexpr int kMaxMomentOrder = 4;
inline constexpr int kMaxMomentGrid = 64;

/// Inputs shared by all moment evaluations.  propagator_shift replaces
/// |xi|^m by |xi|^m - shift in every time kernel (shift = rho gives the
/// moments of the corrector).
struct MomentProblem {
  GridSpec grid;
  PowerSpectrum spectrum;
  EvolutionParams params;
  Field u0;
  Field M;
  double propagator_shift = 0.0;
};

namespace detail {

class RowKernel {
 public:
  explicit RowKernel(const MomentProblem& pr)
      : size_(static_cast<int>(pr.grid.size())),
        steps_(pr.params.steps),
        h_(pr.params.dt()),
        lam_(symbol_values(pr.grid, pr.params.m)),
        u0hat_(forward_transform(pr.u0).coeffs),
        mhat_(forward_transform(pr.M).coeffs),
        inv_volume_(1.0 / pr.grid.volume()) {
    for (auto& l : lam_) l -= pr.propagator_shift;
    decay_.resize(lam_.size());
    for (std::size_t k = 0; k < lam_.size(); ++k) decay_[k] = std::exp(-h_ * lam_[k]);
    g_.resize(steps_ + 1);
    next_.resize(steps_ + 1);
  }

  /// sum_{xi_0} uhat_row(t, xi_0) conj(Mhat(xi_0)) / L^d for the row whose
  /// factors carry `modes` (outermost first); the row's potential
  /// coefficients are stripped off.
  Complex row_value(const std::vector<int>& modes) {
    Complex total{};
    const int len = static_cast<int>(modes.size());
    path_.resize(len + 1);
    for (int xi0 = 0; xi0 < size_; ++xi0) {
      const Complex mc = std::conj(mhat_[xi0]);
      if (mc == Complex{}) continue;
      path_[0] = xi0;
      for (int r = 1; r <= len; ++r) path_[r] = wrap(path_[r - 1] - modes[r - 1]);
      const Complex start = u0hat_[path_[len]];
      if (start == Complex{}) continue;
      total += kernel(start) * mc;
    }
    return total * inv_volume_;
  }

 private:
  int wrap(int k) const { return ((k % size_) + size_) % size_; }

  // Innermost level: free evolution of u0 along eta_len; each further level
  // applies the trapezoid Duhamel step with the symbol of the next mode out.
  Complex kernel(Complex start) {
    const int len = static_cast<int>(path_.size()) - 1;
    const double lin = lam_[path_[len]];
    for (int j = 0; j <= steps_; ++j) g_[j] = start * std::exp(-j * h_ * lin);
    for (int level = len - 1; level >= 0; --level) {
      const double dec = decay_[path_[level]];
      Complex acc = 0.5 * h_ * g_[0];
      next_[0] = Complex{};
      for (int j = 1; j <= steps_; ++j) {
        acc = dec * acc + h_ * g_[j];
        next_[j] = acc - 0.5 * h_ * g_[j];
      }
      std::swap(g_, next_);
    }
    return g_[steps_];
  }

  int size_;
  int steps_;
  double h_;
  std::vector<double> lam_;
  std::vector<double> decay_;
  std::vector<Complex> u0hat_;
  std::vector<Complex> mhat_;
  double inv_volume_;
  std::vector<Complex> g_, next_;
  std::vector<int> path_;
};

inline void check_problem(const MomentProblem& pr, int n, int m) {
  pr.grid.validate();
  pr.params.validate();
  if (n < 0 || m < 0) throw InvalidArgument("moment orders must be non-negative");
  if (n + m > kMaxMomentOrder) throw TooLarge("graph evaluation is limited to n + m <= 4");
  if (pr.grid.dim != 1) throw InvalidArgument("graph evaluation is implemented for d = 1");
  if (pr.grid.n > kMaxMomentGrid) throw TooLarge("graph evaluation needs at most 64 lattice points");
  if (!(pr.u0.grid == pr.grid) || !(pr.M.grid == pr.grid)) throw GridMismatch("u0 and M must live on the moment grid");
}

// Sum over the selected pairings of n + m factors; with_lower = false drops
// the lower row entirely (first moments).
inline Complex moment_sum(int n, int m, bool with_lower, const MomentProblem& pr, GraphSelection sel) {
  const int factors = n + m;
  const auto var = lattice_variances(pr.spectrum, pr.grid, pr.params.eps,
                                     potential_variance_scale(pr.grid.dim, pr.params.m, pr.params.eps));
  RowKernel kernel(pr);
  const int size = static_cast<int>(pr.grid.size());

  auto evaluate_graph = [&](const GraphPairing* g) {
    const int npairs = g ? static_cast<int>(g->pairs.size()) : 0;
    const auto cs = g ? assemble_constraints(*g, n, m) : ConstraintSystem{n, m, {}};
    std::vector<int> v(npairs, 0);
    std::vector<int> upper(n), lower(m);
    Complex total{};
    for (;;) {
      double weight = 1.0;
      for (int p = 0; p < npairs && weight != 0.0; ++p) weight *= var[v[p]];
      if (weight != 0.0) {
        for (int r = 0; r < factors; ++r) {
          int mode = 0;
          for (int p = 0; p < npairs; ++p) mode += cs.coeff[r][p] * v[p];
          mode = ((mode % size) + size) % size;
          if (r < n) {
            upper[r] = mode;
          } else {
            lower[r - n] = mode;
          }
        }
        Complex value = kernel.row_value(upper);
        if (with_lower) value *= std::conj(kernel.row_value(lower));
        total += weight * value;
      }
      int p = 0;
      while (p < npairs && ++v[p] == size) v[p++] = 0;
      if (p == npairs) break;
    }
    return total;
  };

  if (factors == 0) return evaluate_graph(nullptr);
  if (factors % 2 != 0) return Complex{};
  Complex total{};
  for (const auto& g : enumerate_pairings(factors / 2))
    if (selected(classify(g, n, m), sel)) total += evaluate_graph(&g);
  return total;
}

}  // namespace detail

/// E[X_n X_m] restricted to the selected graph class, X_k = (u_k(t), M).
/// For m = 0 the lower row is the deterministic free term X_0.
inline Complex evaluate_moment(int n, int m, const MomentProblem& pr, GraphSelection sel = GraphSelection::all) {
  detail::check_problem(pr, n, m);
  if (n + m == 0) return detail::moment_sum(0, 0, true, pr, sel);
  return detail::moment_sum(n, m, true, pr, sel);
}

/// E[X_n] (sum over pairings within one row).
inline Complex expected_projection(int n, const MomentProblem& pr, GraphSelection sel = GraphSelection::all) {
  detail::check_problem(pr, n, 0);
  return detail::moment_sum(n, 0, false, pr, sel);
}

/// sup over the step grid and the lattice of |(I - B_eps) U_eps - exp(-t|xi|^m) u0hat|
/// relative to sup |u0hat|, where U_eps = exp(-t(|xi|^m - rho_eps(xi))) u0hat and
/// B_eps U(t) = rho_eps int_0^t exp(-|xi|^m v) U(t - v) dv by trapezoid.
inline double mean_field_residual(const PowerSpectrum& spectrum, const GridSpec& grid, const EvolutionParams& p,
                                  const Field& u0) {
  p.validate();
  if (!(u0.grid == grid)) throw GridMismatch("u0 must live on the residual grid");
  const auto u0hat = forward_transform(u0).coeffs;
  double scale = 0.0;
  for (const auto& c : u0hat) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return 0.0;
  const auto rho = rho_eps_on_lattice(spectrum, grid, p.m, p.eps);
  const auto lam = symbol_values(grid, p.m);
  const double h = p.dt();
  double worst = 0.0;
  std::vector<double> mf(p.steps + 1);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (u0hat[k] == Complex{}) continue;
    for (int j = 0; j <= p.steps; ++j) mf[j] = std::exp(-j * h * (lam[k] - rho[k]));
    for (int j = 0; j <= p.steps; ++j) {
      double b = 0.0;
      for (int i = 0; i <= j; ++i) {
        const double w = (i == 0 || i == j) ? 0.5 * h : h;
        b += w * std::exp(-lam[k] * i * h) * mf[j - i];
      }
      if (j == 0) b = 0.0;
      const double r = mf[j] - rho[k] * b - std::exp(-j * h * lam[k]);
      worst = std::max(worst, std::abs(r) * std::abs(u0hat[k]));
    }
  }
  return worst / scale;
}

/// sup over the step grid and lattice of |U_eps(t, xi) - U(t, xi)|, the gap
/// between the eps-corrected and the homogenized multipliers.
inline double propagator_gap(const PowerSpectrum& spectrum, const GridSpec& grid, const EvolutionParams& p) {
  p.validate();
  const auto rho_eps = rho_eps_on_lattice(spectrum, grid, p.m, p.eps);
  const double rho = compute_rho(spectrum, grid.dim, p.m);
  const auto lam = symbol_values(grid, p.m);
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int j = 0; j <= p.steps; ++j) {
      const double t = j * p.dt();
      worst = std::max(worst, std::abs(std::exp(-t * (lam[k] - rho_eps[k])) - std::exp(-t * (lam[k] - rho))));
    }
  }
  return worst;
}

}  // namespace homog
