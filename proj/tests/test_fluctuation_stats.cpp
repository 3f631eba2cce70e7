#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "homog/fluctuation_stats.hpp"

using namespace homog;

namespace {

Field gaussian_bump(const GridSpec& g, double width) {
  return sample_field(g, [&](const std::array<double, 3>& x) {
    double r2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double c = x[a] < 0.5 * g.length ? x[a] : x[a] - g.length;  // centred box
      r2 += c * c;
    }
    return std::exp(-r2 / (2.0 * width * width));
  });
}

Field constant(const GridSpec& g, double c) {
  Field f(g);
  for (double& v : f.values) v = c;
  return f;
}

}  // namespace

TEST(ScriptM, ZeroTimeAndZeroWeight) {
  const GridSpec g{1, 32, 10.0};
  const auto u0 = gaussian_bump(g, 1.0);
  for (double v : script_M(0.0, u0, u0, 0.3, 1.0).values) EXPECT_EQ(v, 0.0);
  for (double v : script_M(0.7, Field(g), u0, 0.3, 1.0).values) EXPECT_EQ(v, 0.0);
}

TEST(ScriptM, ConstantsGiveLinearGrowth) {
  const GridSpec g{2, 8, 4.0};
  const auto c = constant(g, 1.5);
  for (double v : script_M(0.8, c, c, 0.0, 1.0, 5).values) EXPECT_NEAR(v, 1.5 * 1.5 * 0.8, 1e-12);
  // The homogenized shift multiplies both factors: c^2 t e^{rho t}.
  for (double v : script_M(0.8, c, c, 0.4, 1.0, 5).values) EXPECT_NEAR(v, 2.25 * 0.8 * std::exp(0.32), 1e-12);
}

TEST(ScriptM, SingleModeClosedForm) {
  // M = 1, u0 = cos(k x): integrand cos(kx) e^{rho t} e^{-lam (t - s)}.
  const GridSpec g{1, 64, 2.0 * std::numbers::pi};
  const double t = 0.6, rho = 0.2, m = 1.4;
  const int k = 3;
  const double lam = std::pow(k, m);
  const auto u0 = sample_field(g, [&](const std::array<double, 3>& x) { return std::cos(k * x[0]); });
  const auto out = script_M(t, constant(g, 1.0), u0, rho, m, 4000);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double exact = u0.values[j] * std::exp(rho * t) * (1.0 - std::exp(-lam * t)) / lam;
    EXPECT_NEAR(out.values[j], exact, 1e-6);
  }
}

TEST(ScriptM, Bilinear) {
  const GridSpec g{1, 64, 12.0};
  const auto a = gaussian_bump(g, 1.0), b = gaussian_bump(g, 2.0);
  auto ab = a;
  for (std::size_t j = 0; j < g.size(); ++j) ab.values[j] = 2.0 * a.values[j] - 3.0 * b.values[j];
  const auto lhs = script_M(0.5, ab, b, 0.1, 1.0, 16);
  const auto ra = script_M(0.5, a, b, 0.1, 1.0, 16), rb = script_M(0.5, b, b, 0.1, 1.0, 16);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(lhs.values[j], 2.0 * ra.values[j] - 3.0 * rb.values[j], 1e-10);
  const auto rhs = script_M(0.5, b, ab, 0.1, 1.0, 16);
  const auto sa = script_M(0.5, b, a, 0.1, 1.0, 16);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(rhs.values[j], 2.0 * sa.values[j] - 3.0 * rb.values[j], 1e-10);
}

TEST(ScriptM, GridMismatch) {
  EXPECT_THROW(script_M(1.0, Field(GridSpec{1, 16, 4.0}), Field(GridSpec{1, 32, 4.0}), 0.0, 1.0), GridMismatch);
}

TEST(LimitVarianceShort, MatchesSigmaSquaredTimesNorm) {
  const GridSpec g{1, 128, 20.0};
  const auto s = PowerSpectrum::gaussian(1.3, 2.0);
  const auto Mt = gaussian_bump(g, 1.5);
  EXPECT_DOUBLE_EQ(limit_variance_short(s, Mt), sigma_squared(s, 1) * l2_norm_squared(Mt));
  // sigma^2 = 2 pi A in d = 1 and int M^2 = sqrt(pi) w for the bump.
  EXPECT_NEAR(limit_variance_short(s, Mt), 2.0 * std::numbers::pi * 1.3 * std::sqrt(std::numbers::pi) * 1.5, 1e-9);
  EXPECT_EQ(limit_variance_short(s, Field(g)), 0.0);
  EXPECT_EQ(limit_variance_short(PowerSpectrum::gaussian(0.0, 1.0), Mt), 0.0);
}

TEST(LimitVarianceLong, ZeroWeight) {
  const auto s = PowerSpectrum::long_range(0.5, PowerSpectrum::gaussian(1.0, 1.0));
  const auto v = limit_variance_long(s, Field(GridSpec{2, 32, 20.0}));
  EXPECT_EQ(v.spectral, 0.0);
  EXPECT_EQ(v.kernel, 0.0);
}

TEST(LimitVarianceLong, GaussianClosedFormOneD) {
  // M = e^{-x^2/2}: Shat(0) int 2 pi e^{-xi^2} |xi|^{-n} = 2 pi Shat(0) Gamma((1-n)/2).
  const GridSpec g{1, 256, 40.0};
  const double n = 0.4;
  const auto s = PowerSpectrum::long_range(n, PowerSpectrum::gaussian(1.7, 1.0));
  const double exact = 1.7 * 2.0 * std::numbers::pi * std::tgamma(0.5 * (1.0 - n));
  const auto v = limit_variance_long(s, gaussian_bump(g, 1.0));
  EXPECT_NEAR(v.spectral, exact, 5e-3 * exact);
  EXPECT_NEAR(v.kernel, exact, 1e-2 * exact);
}

TEST(LimitVarianceLong, GaussianClosedFormTwoD) {
  // d = 2: Shat(0) 4 pi^3 Gamma(1 - n/2).
  const GridSpec g{2, 128, 40.0};
  const double n = 0.5;
  const auto s = PowerSpectrum::long_range(n, PowerSpectrum::gaussian(1.0, 1.0));
  const double exact = 4.0 * std::pow(std::numbers::pi, 3) * std::tgamma(1.0 - 0.5 * n);
  const auto v = limit_variance_long(s, gaussian_bump(g, 1.0));
  EXPECT_NEAR(v.spectral, exact, 5e-3 * exact);
  EXPECT_NEAR(v.kernel, exact, 1e-2 * exact);
  EXPECT_LT(v.relative_gap(), 0.01);
}

TEST(LimitVarianceLong, SmallDecayRecoversShortRange) {
  const GridSpec g{2, 64, 24.0};
  const auto base = PowerSpectrum::gaussian(0.8, 1.0);
  const auto Mt = gaussian_bump(g, 1.5);
  const double target = limit_variance_short(base, Mt);
  double prev = std::numeric_limits<double>::infinity();
  for (double n : {0.1, 1e-2, 1e-3, 1e-4}) {
    const double v = limit_variance_long(PowerSpectrum::long_range(n, base), Mt, {.kernel = false}).spectral;
    const double gap = std::abs(v - target) / target;
    EXPECT_LT(gap, prev);
    prev = gap;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(LimitVarianceLong, CoarseGridFlagsSelfLag) {
  // A weight narrower than a cell puts the whole double sum on the diagonal.
  const GridSpec g{1, 16, 40.0};
  const auto s = PowerSpectrum::long_range(0.3, PowerSpectrum::gaussian(1.0, 1.0));
  EXPECT_THROW(limit_variance_long(s, gaussian_bump(g, 0.2)), KernelSingular);
  EXPECT_NO_THROW(limit_variance_long(s, gaussian_bump(g, 0.2), {.kernel = false}));
}

TEST(LimitVarianceLong, RejectsShortRange) {
  EXPECT_THROW(limit_variance_long(PowerSpectrum::gaussian(1.0, 1.0), Field(GridSpec{1, 16, 4.0})), InvalidArgument);
}

TEST(Regularity, ZeroAndPositive) {
  const GridSpec g{2, 32, 20.0};
  EXPECT_EQ(regularity_integral(Field(g), 0.5), 0.0);
  const double v = regularity_integral(gaussian_bump(g, 1.0), 0.5);
  EXPECT_GT(v, 0.0);
  EXPECT_TRUE(std::isfinite(v));
  // A stronger singularity weighs the low modes more.
  EXPECT_GT(regularity_integral(gaussian_bump(g, 1.0), 1.5), v);
}

TEST(Fbm, Examples) {
  const std::vector<double> x{1.0}, y{2.0}, o{0.0};
  EXPECT_NEAR(fbm_covariance(x, y, 0.5), 1.0, 1e-15);
  EXPECT_EQ(fbm_covariance(o, y, 0.7), 0.0);
  const std::vector<double> p{0.3, -1.2};
  EXPECT_NEAR(fbm_covariance(p, p, 0.8), std::pow(std::hypot(0.3, 1.2), 1.6), 1e-14);
  const std::vector<double> H{0.5, 0.5}, a{1.0, 2.0}, b{3.0, 1.0};
  // Product of Brownian covariances min(x_i, y_i) for positive coordinates.
  EXPECT_NEAR(fbm_covariance(a, b, H), 1.0 * 1.0, 1e-14);
  EXPECT_NEAR(fbm_covariance(a, a, H), 1.0 * 2.0, 1e-14);
}

TEST(Fbm, DomainErrors) {
  const std::vector<double> x{1.0}, y{2.0};
  EXPECT_THROW(fbm_covariance(x, y, 0.0), DomainError);
  EXPECT_THROW(fbm_covariance(x, y, 1.0), DomainError);
  const std::vector<double> bad{1.2};
  EXPECT_THROW(fbm_covariance(x, y, bad), DomainError);
}

TEST(Fbm, PositiveSemidefinite) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-3.0, 3.0), UH(0.05, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + trial % 3;
    const int count = 2 + trial % 7;
    std::vector<std::vector<double>> pts(count, std::vector<double>(d));
    for (auto& p : pts)
      for (double& c : p) c = U(rng);
    std::vector<double> Hs(d);
    for (double& h : Hs) h = UH(rng);
    const bool aniso = trial % 2 == 1;
    Eigen::MatrixXd C(count, count);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < count; ++j)
        C(i, j) = aniso ? fbm_covariance(pts[i], pts[j], Hs) : fbm_covariance(pts[i], pts[j], Hs[0]);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10) << "trial " << trial;
  }
}

TEST(EnsembleStats, TooFew) {
  std::vector<double> x(99, 1.0);
  EXPECT_THROW(ensemble_stats(std::span<const double>(x)), TooFewSamples);
}

TEST(EnsembleStats, ConstantIsDegenerate) {
  std::vector<double> x(200, 2.5);
  const auto st = ensemble_stats(std::span<const double>(x));
  EXPECT_EQ(st.var, 0.0);
  EXPECT_TRUE(st.degenerate);
  EXPECT_DOUBLE_EQ(st.mean, 2.5);
}

TEST(EnsembleStats, NormalSelfTest) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> N(3.0, 2.0);
  std::vector<double> x(10000);
  for (double& v : x) v = N(rng);
  const auto st = ensemble_stats(std::span<const double>(x));
  EXPECT_NEAR(st.mean, 3.0, 3.0 * st.se);
  EXPECT_NEAR(st.var, 4.0, 0.2);
  EXPECT_LT(std::abs(st.skew), 0.1);
  EXPECT_LT(std::abs(st.kurtosis - 3.0), 0.2);
  EXPECT_GT(st.ks_p, 0.01);
}

TEST(EnsembleStats, DetectsNonNormal) {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> E(1.0);
  std::vector<double> x(2000);
  for (double& v : x) v = E(rng);
  const auto st = ensemble_stats(std::span<const double>(x));
  EXPECT_NEAR(st.skew, 2.0, 0.4);
  EXPECT_LT(st.ks_p, 1e-6);
}

TEST(EnsembleStats, KnownMoments) {
  // Hand-checked: 100 copies of {-1, 1} has mean 0, variance 200/199, zero skew,
  // and excess kurtosis from g2 = -2.
  std::vector<double> x;
  for (int i = 0; i < 100; ++i) x.insert(x.end(), {-1.0, 1.0});
  const auto st = ensemble_stats(std::span<const double>(x));
  const double n = 200.0;
  EXPECT_NEAR(st.mean, 0.0, 1e-15);
  EXPECT_NEAR(st.var, n / (n - 1.0), 1e-14);
  EXPECT_NEAR(st.skew, 0.0, 1e-12);
  EXPECT_NEAR(st.excess_kurtosis, ((n + 1.0) * -2.0 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)), 1e-12);
}

TEST(EnsembleStats, KolmogorovSurvivalReference) {
  // P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098 (standard table values).
  EXPECT_NEAR(kolmogorov_survival(1.36), 0.0494, 5e-4);
  EXPECT_NEAR(kolmogorov_survival(1.63), 0.0098, 3e-4);
  EXPECT_NEAR(kolmogorov_survival(0.29), 1.0 - 0.000010, 1e-4);
  // Both series agree where they meet.
  EXPECT_NEAR(kolmogorov_survival(0.3 - 1e-9), kolmogorov_survival(0.3 + 1e-9), 1e-9);
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
}

TEST(RateFit, ExactPowerLaw) {
  std::vector<RatePoint> pts;
  for (double e : {0.2, 0.1, 0.05, 0.025, 0.0125}) pts.push_back({e, 3.0 * e * e});
  const auto f = rate_fit(pts);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-10);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(RateFit, NoisyRegression) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<RatePoint> pts;
  for (int i = 0; i < 8; ++i) {
    const double e = 0.2 * std::pow(0.5, i);
    pts.push_back({e, 0.7 * std::pow(e, 0.4) * (1.0 + 0.05 * U(rng))});
  }
  EXPECT_NEAR(rate_fit(pts).slope, 0.4, 0.05);
}

TEST(RateFit, Preconditions) {
  std::vector<RatePoint> pts{{0.2, 1.0}, {0.1, 0.5}, {0.05, 0.0}, {0.025, 0.1}};
  EXPECT_THROW(rate_fit(pts), NonPositive);
  pts[2].error = 0.2;
  EXPECT_NO_THROW(rate_fit(pts));
  pts.pop_back();
  EXPECT_THROW(rate_fit(pts), InvalidArgument);
  std::vector<RatePoint> narrow{{0.2, 1.0}, {0.15, 0.5}, {0.1, 0.4}, {0.05, 0.1}};
  EXPECT_THROW(rate_fit(narrow), InvalidArgument);
}
