#include <gtest/gtest.h>

#include <cmath>

#include "follmer_lab/measures.hpp"
#include "follmer_lab/numerics.hpp"

namespace flab {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exception";
  return ErrorKind::config_error;
}

TEST(Measure, RejectsInvalidModels) {
  EXPECT_EQ(kind_of([] { Measure::mixture({0.5, 0.6}, std::vector<double>{1.0, 2.0}); }), ErrorKind::invalid_model);
  EXPECT_EQ(kind_of([] { Measure::mixture({1.0, 0.0}, std::vector<double>{1.0, 2.0}); }), ErrorKind::invalid_model);
  EXPECT_EQ(kind_of([] { Measure::gaussian(-1.0); }), ErrorKind::invalid_model);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  EXPECT_EQ(kind_of([&] { Measure::gaussian(Eigen::VectorXd::Zero(2), asym); }), ErrorKind::invalid_model);
  EXPECT_EQ(kind_of([] { Measure::counterexample(1.0, 10.0); }), ErrorKind::invalid_model);
}

TEST(Measure, ProductOffsetsAndIdentifiers) {
  const Measure p = Measure::product({Measure::gaussian(0.5), Measure::mixture({0.9, 0.1}, std::vector<double>{0.5, 0.8})});
  EXPECT_EQ(p.dim(), 2u);
  ASSERT_EQ(p.blocks().size(), 2u);
  EXPECT_EQ(p.blocks()[1].offset, 1u);
  EXPECT_EQ(p.id(), "product:(gaussian:var=0.5;mixture:w=0.9,0.1,var=0.5,0.8)");
  EXPECT_TRUE(p.is_centered());
  EXPECT_FALSE(p.all_blocks_gaussian());
  EXPECT_THROW(p.scalar_block(), Error);
}

TEST(MeanCov, MixtureAndProduct) {
  const auto [m1, c1] = mean_cov(Measure::mixture({0.9, 0.1}, std::vector<double>{1.0, 10.0}));
  EXPECT_DOUBLE_EQ(m1[0], 0.0);
  EXPECT_NEAR(c1(0, 0), 1.9, 1e-15);
  const auto [m2, c2] = mean_cov(Measure::product({Measure::gaussian(2.0), Measure::gaussian(0.5)}));
  EXPECT_NEAR(c2(0, 0), 2.0, 0.0);
  EXPECT_NEAR(c2(1, 1), 0.5, 0.0);
  EXPECT_NEAR(c2(0, 1), 0.0, 0.0);
}

TEST(Density, MixtureRelativeToGaussian) {
  const Measure m = Measure::mixture({0.5, 0.5}, std::vector<double>{0.25, 4.0});
  const double x = 0.7;
  const double direct = 0.5 * std::exp(-x * x / 0.5) / std::sqrt(2.0 * std::numbers::pi * 0.25) +
                        0.5 * std::exp(-x * x / 8.0) / std::sqrt(2.0 * std::numbers::pi * 4.0);
  EXPECT_NEAR(density_rel_gaussian(m, vec({x})), direct / normal::pdf(x), 1e-14);
  // A bivariate Gaussian against the closed form.
  Eigen::MatrixXd c(2, 2);
  c << 2.0, 0.3, 0.3, 0.5;
  const Measure g = Measure::gaussian(Eigen::VectorXd::Zero(2), c);
  const Eigen::VectorXd p = vec({0.4, -1.1});
  const double expected = -0.5 * p.dot(c.inverse() * p) - 0.5 * std::log(c.determinant()) + 0.5 * p.squaredNorm();
  EXPECT_NEAR(log_density_rel_gaussian(g, p), expected, 1e-13);
}

TEST(Density, SingularModelHasNoDensity) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
  c(0, 0) = 1.0;
  const Measure g = Measure::gaussian(Eigen::VectorXd::Zero(2), c);
  EXPECT_EQ(kind_of([&] { log_density_rel_gaussian(g, vec({0.0, 0.0})); }), ErrorKind::singular_model);
}

TEST(Quantile, InvertsCdfIncludingDeepTails) {
  const Measure m = Measure::mixture({0.9, 0.1}, std::vector<double>{1.0, 10.0});
  for (double u : {1e-10, 0.01, 0.3, 0.5, 0.77, 0.999}) EXPECT_NEAR(cdf(m, quantile(m, u)), u, 1e-13 * (1.0 + u / 1e-3)) << u;
  // Scaled Gaussian: T(z) = sigma z.
  const Measure g = Measure::gaussian(4.0);
  for (double z : {-30.0, -8.0, -1.0, 0.0, 2.5, 37.0}) EXPECT_NEAR(transport_from_normal(g, z), 2.0 * z, 1e-12 * (1.0 + std::abs(z)));
  EXPECT_NEAR(quantile(Measure::gaussian(4.0), 0.975), 3.919927969080108, 1e-13);
}

TEST(Sample, IsReproducibleAndMatchesMoments) {
  const Measure m = Measure::mixture({0.5, 0.5}, std::vector<double>{0.25, 4.0});
  const Eigen::MatrixXd a = sample(m, 50000, 9);
  const Eigen::MatrixXd b = sample(m, 50000, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, sample(m, 50000, 10));
  // Row i does not depend on n.
  EXPECT_EQ(sample(m, 10, 9).row(7), a.row(7));
  const double mean = a.mean();
  const double var = (a.array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 4.0 * std::sqrt(2.125 / 50000));
  // Var of X^2 for this mixture is E X^4 - (E X^2)^2 = 3 (0.5 * 0.0625 + 0.5 * 16) - 2.125^2.
  EXPECT_NEAR(var, 2.125, 4.0 * std::sqrt((3.0 * (0.5 * 0.0625 + 8.0) - 2.125 * 2.125) / 50000));
}

TEST(Poincare, GaussianIsLargestEigenvalue) {
  const PoincareEstimate p = poincare_constant(Measure::product({Measure::gaussian(0.5), Measure::gaussian(2.0)}));
  EXPECT_EQ(p.method, PoincareEstimate::Method::closed_form);
  EXPECT_DOUBLE_EQ(p.lower, 2.0);
  EXPECT_DOUBLE_EQ(p.upper, 2.0);
}

TEST(Poincare, SpectralValueOfGaussianIsItsVariance) {
  EXPECT_NEAR(poincare_spectral(Measure::gaussian(0.5)), 0.5, 1e-4);
  EXPECT_NEAR(poincare_spectral(Measure::gaussian(3.0)), 3.0, 1e-3);
}

TEST(Poincare, MuckenhouptBracketContainsSpectralValue) {
  for (const Measure& m : {Measure::mixture({0.9, 0.1}, std::vector<double>{0.5, 0.8}),
                           Measure::mixture({0.5, 0.5}, std::vector<double>{0.25, 4.0}),
                           Measure::mixture({0.9, 0.1}, std::vector<double>{1.0, 10.0})}) {
    const PoincareEstimate p = poincare_constant(m);
    const double spectral = poincare_spectral(m);
    EXPECT_EQ(p.method, PoincareEstimate::Method::muckenhoupt);
    EXPECT_LE(p.lower, spectral * (1.0 + 1e-3)) << m.id();
    EXPECT_GE(p.upper, spectral * (1.0 - 1e-3)) << m.id();
    // C_p is at least the variance.
    EXPECT_GE(spectral, mean_cov(m).second(0, 0) * (1.0 - 1e-3)) << m.id();
  }
}

TEST(SmoothedEmpirical, MatchesDirectSum) {
  const std::vector<double> ys{-3.0, -0.5, 0.0, 0.1, 2.0, 40.0};
  const SmoothedEmpirical s(ys);
  for (double x : {-10.0, -0.2, 0.05, 1.7, 39.0, 100.0}) {
    double direct = 0.0;
    for (double y : ys) direct += normal::pdf(x - y);
    direct /= static_cast<double>(ys.size());
    if (x == 100.0) {
      EXPECT_NEAR(s.log_density(x), normal::log_pdf(60.0) - std::log(6.0), 1e-10);
    } else {
      EXPECT_NEAR(s(x) / direct, 1.0, 1e-14) << x;
    }
  }
  EXPECT_THROW(SmoothedEmpirical(std::vector<double>{}), Error);
}

}  // namespace
}  // namespace flab
