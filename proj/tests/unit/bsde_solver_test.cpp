#include "bsdelab/bsde_solver.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bsdelab;
using namespace bsdelab::testing;

namespace {

PathEnsemble brownian(std::size_t N, std::size_t M, std::uint64_t seed, double t0 = 0.0, double T = 1.0) {
    return simulate(scalar_problem(), t0, v1(0.0), ControlProcess::constant(v1(0.0)), make_grid(t0, T, N), M,
                    RandomSource{seed, 0});
}

std::vector<double> terminal_of(const PathEnsemble& e, const std::function<double(double)>& f) {
    std::vector<double> out(e.paths());
    for (std::size_t m = 0; m < e.paths(); ++m) out[m] = f(e.state(m, e.steps())[0]);
    return out;
}

ControlProblem linear_benchmark() {
    ControlProblem p = scalar_problem();
    p.controls = ControlSet(v1(-1.0), v1(1.0));
    p.drift = [](double, const Vec&, const Vec& v) -> Vec { return v; };
    p.terminal = [](const Vec& x) { return x[0]; };
    return p;
}

}  // namespace

TEST(SolveBsde, ConstantTerminalZeroGenerator) {
    const PathEnsemble e = brownian(20, 500, 1);
    const std::vector<double> xi(e.paths(), 2.5);
    const BsdeSolution s = solve_bsde(xi, constant_generator(0.0), e, RegressionBasis::polynomial(2));
    for (Eigen::Index m = 0; m < s.Y.rows(); ++m) {
        for (Eigen::Index i = 0; i < s.Y.cols(); ++i) ASSERT_EQ(s.Y(m, i), 2.5);
    }
    for (double z : s.Z) ASSERT_EQ(z, 0.0);
    EXPECT_EQ(s.y0, 2.5);
}

TEST(SolveBsde, ExponentialDiscount) {
    const PathEnsemble e = brownian(100, 10000, 2);
    const std::vector<double> xi(e.paths(), 1.0);
    const BsdeSolution s = solve_bsde(xi, linear_generator(-0.1), e, RegressionBasis::polynomial(2));
    EXPECT_NEAR(s.y0, std::exp(-0.1), 5e-3);
    // Implicit Euler for Y' = 0.1 Y backward gives (1 + 0.1 dt)^{-N} exactly.
    EXPECT_NEAR(s.y0, std::pow(1.0 + 0.1 / 100.0, -100.0), 1e-12);
}

TEST(SolveBsde, ConstantGeneratorIntegratesExactly) {
    for (double c : {-1.5, 0.3, 4.0}) {
        const PathEnsemble e = brownian(37, 200, 3);
        const std::vector<double> xi(e.paths(), 0.0);
        const BsdeSolution s = solve_bsde(xi, constant_generator(c), e, RegressionBasis::polynomial(2));
        EXPECT_NEAR(s.y0, c, 1e-10);
    }
}

TEST(SolveBsde, TerminalColumnIsBitwiseCopy) {
    const PathEnsemble e = brownian(10, 300, 4);
    const auto xi = terminal_of(e, [](double x) { return std::sin(3.0 * x) + 1e-17; });
    const BsdeSolution s = solve_bsde(xi, linear_generator(0.5), e, RegressionBasis::polynomial(3));
    for (std::size_t m = 0; m < e.paths(); ++m) ASSERT_EQ(s.Y(static_cast<Eigen::Index>(m), 10), xi[m]);
}

TEST(SolveBsde, ZeroGeneratorGivesSampleMean) {
    const PathEnsemble e = brownian(25, 4000, 5);
    const auto xi = terminal_of(e, [](double x) { return std::cos(x) + x * x * x; });
    const BsdeSolution s = solve_bsde(xi, constant_generator(0.0), e, RegressionBasis::polynomial(2));
    double mean = 0.0;
    for (double v : xi) mean += v;
    mean /= static_cast<double>(xi.size());
    EXPECT_NEAR(s.y0, mean, 1e-10);
}

TEST(SolveBsde, PicardIterationsWithinContractionBound) {
    const std::size_t N = 100;
    const PathEnsemble e = brownian(N, 1000, 6);
    const auto xi = terminal_of(e, [](double x) { return 1.0 + 0.5 * std::sin(x); });
    GeneratorSpec g;
    g.g = [](double, const Vec&, double y, const Vec& z, const Vec&) { return -5.0 * std::sin(y) + std::abs(z[0]); };
    g.lipschitz = 5.0;
    const BsdeSolution s = solve_bsde(xi, g, e, RegressionBasis::polynomial(2));
    const double dtK = 5.0 / N;
    const int bound = static_cast<int>(std::ceil(std::log(1e-10) / std::log(dtK)));
    for (int it : s.picard_iterations) EXPECT_LE(it, bound);
}

TEST(SolveBsde, RejectsContractionViolation) {
    const PathEnsemble e = brownian(4, 10, 7);
    const std::vector<double> xi(e.paths(), 1.0);
    EXPECT_THROW(solve_bsde(xi, linear_generator(4.0), e, RegressionBasis::polynomial(1)), InvalidArgument);
    EXPECT_NO_THROW(solve_bsde(xi, linear_generator(3.9), e, RegressionBasis::polynomial(1)));
}

TEST(SolveBsde, RejectsDroppedIncrements) {
    PathEnsemble e = brownian(4, 10, 8);
    e.drop_increments();
    const std::vector<double> xi(10, 1.0);
    EXPECT_THROW(solve_bsde(xi, constant_generator(0.0), e, RegressionBasis::polynomial(1)), InvalidArgument);
}

TEST(SolveBsde, RidgeFallbackOnDegenerateStates) {
    // sigma = 0 makes every state equal, so only the intercept is identifiable.
    const PathEnsemble e = simulate(frozen_problem(), 0.0, v1(0.4), ControlProcess::constant(v1(0.0)),
                                    make_grid(0.0, 1.0, 5), 50, RandomSource{9, 0});
    const std::vector<double> xi(50, 3.0);
    const BsdeSolution s = solve_bsde(xi, linear_generator(-0.2), e, RegressionBasis::polynomial(2));
    EXPECT_NEAR(s.y0, 3.0 * std::pow(1.0 + 0.2 / 5.0, -5.0), 1e-10);
}

TEST(SolveBsde, StandardErrorMatchesPlainMonteCarlo) {
    const PathEnsemble e = brownian(20, 20000, 10);
    const auto xi = terminal_of(e, [](double x) { return x * x; });
    const BsdeSolution s = solve_bsde(xi, constant_generator(0.0), e, RegressionBasis::polynomial(2));
    // Var(B_1^2) = 2.
    EXPECT_NEAR(s.y0_std_error, std::sqrt(2.0 / 20000.0), 0.1 * std::sqrt(2.0 / 20000.0));
}

TEST(BackwardSemigroup, ConstantTerminal) {
    const PathEnsemble e = brownian(10, 100, 11);
    const SemigroupResult r =
        backward_semigroup(scalar_problem(), e, [](const Vec&) { return 1.75; }, RegressionBasis::polynomial(2));
    EXPECT_EQ(r.value, 1.75);
}

TEST(BackwardSemigroup, ExponentialOverHalfHorizon) {
    ControlProblem p = scalar_problem();
    p.generator = linear_generator(-0.1);
    const SemigroupResult r = backward_semigroup(p, 0.5, v1(0.0), ControlProcess::constant(v1(0.0)), 0.5,
                                                 [](const Vec&) { return 1.0; }, make_grid(0.5, 1.0, 50), 2000,
                                                 RegressionBasis::polynomial(2), RandomSource{12, 0});
    EXPECT_NEAR(r.value, std::exp(-0.05), 5e-3);
}

TEST(SemigroupConsistency, LinearBenchmarkSharedNoise) {
    const SemigroupConsistency c = semigroup_consistency(linear_benchmark(), 0.0, v1(0.0),
                                                         ControlProcess::constant(v1(1.0)), 0.5, 50, 10000,
                                                         RegressionBasis::polynomial(2), RandomSource{13, 0});
    EXPECT_LE(c.residual, 1e-2);
    EXPECT_NEAR(c.full, 1.0 + 0.0, 5e-2);
}

TEST(SemigroupConsistency, ResidualShrinksWithSteps) {
    ControlProblem p = linear_benchmark();
    p.generator.g = [](double t, const Vec&, double y, const Vec&, const Vec&) { return -0.5 * y + std::cos(3.0 * t); };
    p.generator.lipschitz = 0.5;
    const ControlProcess ctrl = ControlProcess::constant(v1(1.0));
    const auto coarse = semigroup_consistency(p, 0.0, v1(0.0), ctrl, 0.5, 25, 2000, RegressionBasis::polynomial(2),
                                              RandomSource{14, 0});
    const auto fine = semigroup_consistency(p, 0.0, v1(0.0), ctrl, 0.5, 200, 2000, RegressionBasis::polynomial(2),
                                            RandomSource{14, 0});
    EXPECT_LT(fine.residual, coarse.residual);
}

TEST(Comparison, IdenticalTerminals) {
    const PathEnsemble e = brownian(10, 200, 15);
    const auto xi = terminal_of(e, [](double x) { return std::tanh(x); });
    const ComparisonReport r = comparison_check(linear_generator(0.3), xi, xi, e, RegressionBasis::polynomial(2));
    EXPECT_TRUE(r.ordered);
    EXPECT_EQ(r.gap, 0.0);
}

TEST(Comparison, UnitShiftWithZeroGenerator) {
    const PathEnsemble e = brownian(10, 200, 16);
    const std::vector<double> low(200, 0.25);
    const std::vector<double> high(200, 1.25);
    const ComparisonReport r = comparison_check(constant_generator(0.0), low, high, e, RegressionBasis::polynomial(2));
    EXPECT_TRUE(r.ordered);
    EXPECT_EQ(r.gap, 1.0);
}

TEST(Comparison, LinearGeneratorGapIsDiscount) {
    const double rate = 0.1;
    const std::size_t N = 100;
    const PathEnsemble e = brownian(N, 500, 17);
    const std::vector<double> low(500, 0.0);
    const std::vector<double> high(500, 1.0);
    const ComparisonReport r = comparison_check(linear_generator(-rate), low, high, e, RegressionBasis::polynomial(2));
    EXPECT_TRUE(r.ordered);
    EXPECT_NEAR(r.gap, std::exp(-rate), 1e-3);
}

TEST(SolveBsde, LinearTerminalRecoversUnitZ) {
    const PathEnsemble e = brownian(10, 20000, 18);
    const auto xi = terminal_of(e, [](double x) { return x; });
    const BsdeSolution s = solve_bsde(xi, constant_generator(0.0), e, RegressionBasis::polynomial(1));
    double mean = 0.0;
    for (double z : s.Z) mean += z;
    mean /= static_cast<double>(s.Z.size());
    EXPECT_NEAR(mean, 1.0, 2e-2);
}

TEST(Comparison, PartitionBasisOrdersAbsZGenerator) {
    const PathEnsemble e = brownian(20, 2000, 19);
    GeneratorSpec g;
    g.g = [](double, const Vec&, double y, const Vec& z, const Vec&) { return 0.9 * y - 0.8 * z[0] - 0.8 * std::abs(z[0]); };
    g.lipschitz = 2.5;
    const auto low = terminal_of(e, [](double x) { return -0.6 * std::sin(1.5 * x); });
    const auto high = terminal_of(e, [](double x) { return -0.6 * std::sin(1.5 * x) + 0.7 * std::exp(-4.0 * x * x); });
    const ComparisonReport r = comparison_check(g, low, high, e, RegressionBasis::local_constant(0.25));
    EXPECT_TRUE(r.ordered) << r.gap;
    EXPECT_GT(r.gap, 0.0);
}
