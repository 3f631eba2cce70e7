#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "homog/random_field.hpp"

using namespace homog;

namespace {

std::vector<FieldSample> ensemble(const PowerSpectrum& s, const GridSpec& g, int count, std::uint64_t base) {
  std::vector<FieldSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synthesize(s, g, realization_seed(base, 0, i)));
  return out;
}

// Oracle for the lattice variance at lag 0: direct sum of Rhat over the
// frequency lattice, written independently of lattice_variances.
double lattice_sum_oracle(const PowerSpectrum& s, const GridSpec& g, double eps, double scale) {
  const double dk = 2.0 * std::numbers::pi / g.length;
  double total = 0.0;
  for (int i = -g.n / 2; i < g.n / 2; ++i) {
    const double xi = dk * i;
    if (xi == 0.0 && s.is_long_range()) continue;
    total += scale * s(eps * std::abs(xi)) * dk;
  }
  return total;
}

}  // namespace

TEST(Synthesize, ZeroAmplitudeGivesZeroField) {
  const GridSpec g{2, 16, 4.0};
  const auto q = synthesize(PowerSpectrum::gaussian(0.0, 1.0), g, 7);
  for (double v : q.field.values) EXPECT_EQ(v, 0.0);
}

TEST(Synthesize, DeterministicPerSeed) {
  const GridSpec g{2, 32, 6.0};
  const auto s = PowerSpectrum::gaussian(1.0, 2.0);
  const auto a = synthesize(s, g, 99), b = synthesize(s, g, 99), c = synthesize(s, g, 100);
  EXPECT_EQ(a.field.values, b.field.values);
  EXPECT_NE(a.field.values, c.field.values);
}

TEST(Synthesize, SpectrumIsHermitianAndReal) {
  const GridSpec g{3, 8, 3.0};
  const auto q = synthesize(PowerSpectrum::bump(2.0, 4.0), g, 3);
  EXPECT_TRUE(q.field.all_finite());
  EXPECT_LT(hermitian_asymmetry(forward_transform(q.field)), 1e-12);
}

TEST(Synthesize, LagZeroVarianceMatchesLatticeSum) {
  const GridSpec g{1, 64, 20.0};
  const auto s = PowerSpectrum::gaussian(1.3, 1.5);
  const auto samples = ensemble(s, g, 10000, 2024);
  const auto est = empirical_covariance(samples, 3);
  const double target = lattice_sum_oracle(s, g, 1.0, 1.0);
  EXPECT_NEAR(est.value[0], target, 3.0 * est.se[0]);
  // The periodized covariance at lags 1..3 follows the same lattice law.
  const auto var = lattice_variances(s, g);
  for (int lag = 1; lag <= 3; ++lag) EXPECT_NEAR(est.value[lag], lattice_covariance(g, var, lag), 3.0 * est.se[lag]);
}

TEST(Synthesize, ContinuumCovarianceOnWideBox) {
  // R(0) = int Rhat = A w sqrt(pi) in d = 1 once the box resolves the spectrum.
  const GridSpec g{1, 128, 40.0};
  const auto s = PowerSpectrum::gaussian(1.0, 2.0);
  const double lattice = lattice_covariance(g, lattice_variances(s, g), 0);
  EXPECT_NEAR(lattice, 2.0 * std::sqrt(std::numbers::pi), 1e-10);
}

TEST(Synthesize, FlatSpectrumDecorrelatesBeyondLagOne) {
  // Width far beyond the lattice box: Rhat is flat on every mode, so the
  // periodized covariance is a lattice delta.
  const GridSpec g{1, 32, 8.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1e4);
  const auto samples = ensemble(s, g, 4000, 5);
  const auto est = empirical_covariance(samples, 6);
  for (int lag = 1; lag <= 6; ++lag) EXPECT_NEAR(est.value[lag], 0.0, 3.0 * est.se[lag] + 1e-6 * est.value[0]);
}

TEST(Synthesize, SiteMarginalIsGaussian) {
  const GridSpec g{1, 32, 10.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  std::vector<double> x;
  for (int i = 0; i < 10000; ++i) x.push_back(synthesize(s, g, realization_seed(1, 2, i)).field.values[5]);
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : x) {
    const double c = v - mean;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  EXPECT_LT(std::abs(m3 / std::pow(m2, 1.5)), 0.1);
  EXPECT_LT(std::abs(m4 / (m2 * m2) - 3.0), 0.2);
}

TEST(Synthesize, StationaryAcrossSites) {
  const GridSpec g{1, 32, 10.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  const int count = 4000;
  double a = 0, b = 0, a2 = 0, b2 = 0;
  for (int i = 0; i < count; ++i) {
    const auto q = synthesize(s, g, realization_seed(3, 0, i));
    const double pa = q.field.values[0] * q.field.values[2];
    const double pb = q.field.values[17] * q.field.values[19];
    a += pa, b += pb, a2 += pa * pa, b2 += pb * pb;
  }
  a /= count, b /= count;
  const double se = std::sqrt((a2 / count - a * a + b2 / count - b * b) / count);
  EXPECT_NEAR(a, b, 3.0 * se);
}

TEST(LongRange, ZeroModeDropped) {
  const GridSpec g{2, 16, 8.0};
  const auto s = PowerSpectrum::long_range(0.5, PowerSpectrum::gaussian(1.0, 1.0));
  const auto var = lattice_variances(s, g);
  EXPECT_EQ(var[0], 0.0);
  EXPECT_GT(var[1], 0.0);
  const auto q = synthesize(s, g, 4);
  const double mean = std::accumulate(q.field.values.begin(), q.field.values.end(), 0.0);
  EXPECT_NEAR(mean, 0.0, 1e-10);
}

TEST(ScaledPotential, AmplitudeScaleForFractionalSymbol) {
  // d = 1, m = 0.4, eps = 0.1: alpha = 0.2 and the spectrum gains eps^0.6.
  EXPECT_NEAR(exponent_of(alpha_scale(1, 0.4, 0.1), 0.1), 0.2, 1e-12);
  EXPECT_NEAR(potential_variance_scale(1, 0.4, 0.1), std::pow(0.1, 0.6), 1e-15);
  const GridSpec g{1, 256, 16.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  const auto var = lattice_variances(s, g, 0.1, std::pow(0.1, 0.6));
  const double expected = lattice_sum_oracle(s, g, 0.1, std::pow(0.1, 0.6));
  EXPECT_NEAR(std::accumulate(var.begin(), var.end(), 0.0), expected, 1e-12 * expected);
}

TEST(ScaledPotential, EpsOneMatchesSynthesizeLaw) {
  // With eps = 1 the variance scale is 1 for d > m, so the sample is
  // bit-identical to synthesize for the same seed.
  const GridSpec g{1, 64, 20.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  EXPECT_EQ(scaled_potential(s, g, 1.0, 0.5, 42).field.values, synthesize(s, g, 42).field.values);
}

TEST(ScaledPotential, VarianceMatchesLatticeOracle) {
  const GridSpec g{1, 256, 16.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  const double eps = 0.1, m = 0.4;
  std::vector<FieldSample> samples;
  for (int i = 0; i < 10000; ++i) samples.push_back(scaled_potential(s, g, eps, m, realization_seed(8, 1, i)));
  const auto est = empirical_covariance(samples, 0);
  const double target = lattice_sum_oracle(s, g, eps, potential_variance_scale(1, m, eps));
  EXPECT_NEAR(est.value[0], target, 3.0 * est.se[0]);
  // And that target is eps^{-2 alpha} R(0) up to the lattice truncation.
  EXPECT_NEAR(target, std::pow(eps, -0.4) * std::sqrt(std::numbers::pi), 1e-6);
}

TEST(ScaledPotential, EmpiricalSpectrumMatchesScaledLaw) {
  const GridSpec g{1, 64, 8.0};
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  const double eps = 0.2, m = 0.4;
  const auto var = lattice_variances(s, g, eps, potential_variance_scale(1, m, eps));
  const int count = 3000;
  std::vector<double> sum(g.size()), sum2(g.size());
  for (int i = 0; i < count; ++i) {
    auto q = scaled_potential(s, g, eps, m, realization_seed(9, 0, i));
    std::vector<Complex> buf(q.field.values.begin(), q.field.values.end());
    fft_inplace(g, buf, FFTW_FORWARD);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double p = std::norm(buf[k]) / (static_cast<double>(g.size()) * g.size());
      sum[k] += p;
      sum2[k] += p * p;
    }
  }
  for (std::size_t k = 1; k < 12; ++k) {
    const double mean = sum[k] / count;
    const double se = std::sqrt((sum2[k] / count - mean * mean) / count);
    EXPECT_NEAR(mean, var[k], 3.0 * se) << "mode " << k;
  }
}

TEST(ScaledPotential, UnresolvedSpectrumRejected) {
  const GridSpec g{1, 16, 40.0};
  EXPECT_THROW(scaled_potential(PowerSpectrum::gaussian(1.0, 1.0), g, 0.05, 0.4, 1), ResolutionError);
}

TEST(EmpiricalCovariance, ZeroFieldsGiveZero) {
  const GridSpec g{1, 16, 4.0};
  std::vector<FieldSample> samples(3, FieldSample{Field(g), 0, PowerSpectrum::gaussian(0.0, 1.0), 1.0});
  const auto est = empirical_covariance(samples, 4);
  for (double v : est.value) EXPECT_EQ(v, 0.0);
}

TEST(EmpiricalCovariance, MixedGridsRejected) {
  const auto s = PowerSpectrum::gaussian(1.0, 1.0);
  std::vector<FieldSample> samples{FieldSample{Field(GridSpec{1, 16, 4.0}), 0, s, 1.0},
                                   FieldSample{Field(GridSpec{1, 32, 4.0}), 0, s, 1.0}};
  EXPECT_THROW(empirical_covariance(samples, 1), GridMismatch);
}
