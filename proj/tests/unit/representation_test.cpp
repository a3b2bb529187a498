#include "bsdelab/representation.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace bsdelab;
using namespace bsdelab::testing;

namespace {

/// Implicit Euler on n steps of dY = -a Y dt with Y(t+eps) = y, as a difference quotient.
double discrete_linear_quotient(double a, double y, double eps, std::size_t n) {
    const double h = eps / static_cast<double>(n);
    return (y * std::pow(1.0 - a * h, -static_cast<double>(n)) - y) / eps;
}

RepresentationProbe probe(double y, const Vec& z, double eps, std::size_t M) {
    RepresentationProbe p;
    p.y = y;
    p.z = z;
    p.epsilon = eps;
    p.paths = M;
    return p;
}

}  // namespace

TEST(ProbeGenerator, ConstantGeneratorIsExact) {
    for (double eps : {0.5, 0.1, 0.01}) {
        const ProbeEstimate e = probe_generator(constant_generator(0.7), probe(1.3, v1(0.4), eps, 2000),
                                                RegressionBasis::polynomial(2), RandomSource{1, 0});
        EXPECT_NEAR(e.estimate, 0.7, 1e-10) << "eps=" << eps;
    }
}

TEST(ProbeGenerator, SingleStepRecoversStateFreeGenerator) {
    GeneratorSpec g;
    g.g = [](double t, const Vec&, double, const Vec&, const Vec&) { return 2.0 + t; };
    ProbeOptions opts;
    opts.grid_steps = 1;
    RepresentationProbe p = probe(0.5, v1(1.0), 0.05, 1000);
    p.t = 0.3;
    const ProbeEstimate e = probe_generator(g, p, RegressionBasis::polynomial(2), RandomSource{2, 0}, opts);
    EXPECT_EQ(e.grid_steps, 1u);
    EXPECT_NEAR(e.estimate, 2.3, 1e-10);
}

TEST(ProbeGenerator, LinearGeneratorClosedForm) {
    const double eps = 0.01;
    const ProbeEstimate e = probe_generator(linear_generator(1.0), probe(1.0, v1(0.0), eps, 1000),
                                            RegressionBasis::polynomial(2), RandomSource{3, 0});
    EXPECT_NEAR(e.estimate, (std::exp(eps) - 1.0) / eps, 5e-4);
    EXPECT_NEAR(e.estimate, discrete_linear_quotient(1.0, 1.0, eps, e.grid_steps), 1e-10);
}

TEST(ProbeGenerator, AbsoluteZGeneratorTendsToOne) {
    GeneratorSpec g;
    g.g = [](double, const Vec&, double, const Vec& z, const Vec&) { return z.norm(); };
    g.lipschitz = 1.0;
    const ProbeEstimate e = probe_generator(g, probe(0.0, v1(1.0), std::ldexp(1.0, -7), 100000),
                                            RegressionBasis::polynomial(2), RandomSource{4, 0});
    EXPECT_NEAR(e.estimate, 1.0, 5e-2);
}

TEST(ProbeGenerator, RejectsBadNorm) {
    RepresentationProbe p = probe(0.0, v1(0.0), 0.1, 10);
    p.p_norm = 2.0;
    EXPECT_THROW(probe_generator(constant_generator(1.0), p, RegressionBasis::polynomial(1), RandomSource{5, 0}),
                 InvalidArgument);
}

TEST(ProbeGridSteps, RefinesUntilContractionThenRejects) {
    EXPECT_EQ(probe_grid_steps(0.1, 0.0), 16u);
    const std::size_t n = probe_grid_steps(1.0, 100.0);
    EXPECT_LT(1.0 / static_cast<double>(n) * 100.0, 1.0);
    EXPECT_THROW(probe_grid_steps(1.0, 1e5), InvalidArgument);
}

TEST(ConditionalResidual, ConstantGenerator) {
    EXPECT_LT(conditional_expectation_residual(constant_generator(-2.0), probe(0.0, v1(1.0), 0.1, 1000),
                                               RegressionBasis::polynomial(2), RandomSource{6, 0}),
              1e-10);
}

TEST(ConditionalResidual, LinearGeneratorBias) {
    const double r = conditional_expectation_residual(linear_generator(1.0), probe(1.0, v1(0.0), 0.01, 1000),
                                                      RegressionBasis::polynomial(2), RandomSource{7, 0});
    EXPECT_NEAR(r, (std::exp(0.01) - 1.0) / 0.01 - 1.0, 5e-4);
}

TEST(ConditionalResidual, DecreasesAlongLadder) {
    const auto ladder = geometric_ladder(3, 9);
    double previous = INFINITY;
    for (double eps : ladder) {
        const double r = conditional_expectation_residual(linear_generator(1.0), probe(1.0, v1(0.0), eps, 1000),
                                                          RegressionBasis::polynomial(2), RandomSource{8, 0});
        EXPECT_LT(r, previous) << "eps=" << eps;
        previous = r;
    }
}

TEST(GeometricLadder, PowersOfTwo) {
    const auto l = geometric_ladder(3, 5);
    ASSERT_EQ(l.size(), 3u);
    EXPECT_EQ(l[0], 0.125);
    EXPECT_EQ(l[2], 0.03125);
}

TEST(VerifyLimit, ConstantGeneratorFlaggedExact) {
    LimitOptions opts;
    opts.replications = 4;
    const RateFit fit = verify_limit(constant_generator(5.0), 0.0, 0.0, v1(0.0), geometric_ladder(1, 4), 500,
                                     RegressionBasis::polynomial(2), RandomSource{9, 0}, 1.0, opts);
    EXPECT_TRUE(fit.exact);
    for (double e : fit.errors) EXPECT_LT(e, 1e-10);
}

TEST(VerifyLimit, LinearGeneratorFirstOrderRate) {
    LimitOptions opts;
    opts.replications = 8;
    const auto ladder = geometric_ladder(3, 9);
    const RateFit fit = verify_limit(linear_generator(1.0), 0.0, 1.0, v1(0.0), ladder, 1000,
                                     RegressionBasis::polynomial(2), RandomSource{10, 0}, 1.0, opts);
    EXPECT_FALSE(fit.exact);
    EXPECT_GE(fit.slope, 0.8);
    EXPECT_LE(fit.slope, 1.2);
    EXPECT_LE(fit.slope_low, fit.slope);
    EXPECT_GE(fit.slope_high, fit.slope);
    for (std::size_t j = 0; j < ladder.size(); ++j) {
        const double bias = (std::exp(ladder[j]) - 1.0) / ladder[j] - 1.0;
        EXPECT_LE(std::abs(fit.errors[j] - bias), 3.0 * fit.std_errors[j] + ladder[j] / fit.grid_steps[j]);
        if (j > 0) EXPECT_LE(fit.errors[j], fit.errors[j - 1] + 3.0 * fit.std_errors[j]);
    }
    std::ostringstream os;
    write_rate_csv(os, fit);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "epsilon,error,stderr");
}

TEST(OneSided, JumpInTimeIsResolved) {
    const double t_star = 0.5;
    GeneratorSpec g;
    g.g = [t_star](double t, const Vec&, double, const Vec&, const Vec&) { return t >= t_star ? 1.0 : 0.0; };
    g.continuous_in_t = false;
    const OneSidedProbes p =
        probe_one_sided(g, t_star, 0.0, v1(0.0), 0.01, 200, RegressionBasis::polynomial(1), RandomSource{11, 0});
    EXPECT_NEAR(p.left, 0.0, 1e-10);
    EXPECT_NEAR(p.right, 1.0, 1e-10);
    EXPECT_NEAR(p.jump, 1.0, 1e-10);

    RepresentationProbe away = probe(0.0, v1(0.0), 0.01, 200);
    away.t = 0.2;
    EXPECT_NEAR(probe_generator(g, away, RegressionBasis::polynomial(1), RandomSource{12, 0}).estimate, 0.0, 1e-10);
    away.t = 0.7;
    EXPECT_NEAR(probe_generator(g, away, RegressionBasis::polynomial(1), RandomSource{12, 0}).estimate, 1.0, 1e-10);

    const RateFit fit = verify_limit(g, 0.2, 0.0, v1(0.0), geometric_ladder(3, 4), 100,
                                     RegressionBasis::polynomial(1), RandomSource{13, 0}, 1.0, LimitOptions{2, {}});
    EXPECT_TRUE(fit.almost_every_t_caveat);
}
