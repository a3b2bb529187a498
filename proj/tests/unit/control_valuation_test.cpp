#include "bsdelab/benchmarks.hpp"
#include "bsdelab/control_valuation.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bsdelab;
using namespace bsdelab::testing;

namespace {

DppConfig config(const ControlProblem& p, int per_axis, std::size_t epochs, std::size_t substeps, std::size_t paths) {
    DppConfig c;
    c.mesh = p.controls.mesh(per_axis);
    c.epochs = epochs;
    c.substeps = substeps;
    c.paths = paths;
    return c;
}

/// Three nodes on [-0.5, 0.5]; x = 0 is the middle node.
SpaceGrid small_grid() { return SpaceGrid(v1(-0.5), v1(0.5), {3}); }

const ControlProblem& heat() { return find_benchmark("heat-fk").problem; }
const ControlProblem& linear() { return find_benchmark("linear-drift-control").problem; }

}  // namespace

TEST(EstimateValue, SingleEpochHeatIsPlainMonteCarlo) {
    const DppConfig cfg = config(heat(), 1, 1, 5, 20000);
    const ValueEstimate e = estimate_value(heat(), 0.0, v1(0.0), cfg, small_grid(), RandomSource{1, 0});
    EXPECT_FALSE(e.clamped);
    EXPECT_GT(e.std_error, 0.0);
    // Var(B_1^2) = 2 with antithetic pairs carrying identical values.
    EXPECT_NEAR(e.std_error, std::sqrt(2.0 / 10000.0), 0.1 * std::sqrt(2.0 / 10000.0));
    EXPECT_LE(std::abs(e.value - 1.0), 3.0 * e.std_error);
}

TEST(EstimateValue, HeatWithinThreeStandardErrors) {
    const ControlProblem& p = heat();
    DppConfig cfg = config(p, 1, 4, 5, 4000);
    const SpaceGrid space = valuation_space_grid(p, 0.0, cfg.mesh, v1(-0.5), v1(0.5), 0.05);
    const ValueEstimate e = estimate_value(p, 0.0, v1(0.0), cfg, space, RandomSource{2, 0});
    // Linear interpolation of a convex value overshoots by at most h^2/4 per epoch.
    const double interpolation = 4.0 * 0.05 * 0.05 / 4.0;
    EXPECT_LE(std::abs(e.value - 1.0), 3.0 * e.std_error + interpolation);
}

TEST(EstimateValue, LinearDriftControlPicksMaximalDrift) {
    const ControlProblem& p = linear();
    const DppConfig cfg = config(p, 3, 4, 5, 1000);
    const SpaceGrid space = valuation_space_grid(p, 0.0, cfg.mesh, v1(-1.0), v1(1.0), 0.25);
    const ValueEstimate e = estimate_value(p, 0.0, v1(0.0), cfg, space, RandomSource{3, 0});
    EXPECT_NEAR(e.value, 1.0, 5e-2);
    EXPECT_NEAR(e.grid.interpolate(0.0, v1(0.5)), 1.5, 5e-2);
}

TEST(EstimateValue, FrozenDynamicsReturnTerminalExactly) {
    ControlProblem p = frozen_problem();
    p.terminal = [](const Vec& x) { return std::sin(3.0 * x[0]); };
    const SpaceGrid space(v1(-1.0), v1(1.0), {9});
    const ValueEstimate e = estimate_value(p, 0.0, v1(0.25), config(p, 1, 3, 4, 50), space, RandomSource{4, 0});
    for (std::size_t i = 0; i <= 3; ++i) {
        for (std::size_t node = 0; node < space.size(); ++node) {
            EXPECT_NEAR(e.grid.at(i, node), std::sin(3.0 * space.point(node)[0]), 1e-12);
        }
    }
    EXPECT_NEAR(e.value, std::sin(0.75), 1e-12);
}

TEST(EstimateValue, TerminalSliceIsPhiBitwise) {
    const ControlProblem& p = heat();
    const SpaceGrid space(v1(-2.0), v1(2.0), {17});
    const ValueEstimate e = estimate_value(p, 0.5, v1(0.0), config(p, 1, 2, 2, 100), space, RandomSource{5, 0});
    for (std::size_t node = 0; node < space.size(); ++node) {
        ASSERT_EQ(e.grid.at(2, node), p.terminal(space.point(node)));
    }
    EXPECT_EQ(e.grid.time().node(0), 0.5);
}

TEST(EstimateValue, IndependentOfEpochCountForSingletonControl) {
    const ControlProblem& p = heat();
    const double h = 0.05;
    const SpaceGrid space = valuation_space_grid(p, 0.0, {v1(0.0)}, v1(-0.5), v1(0.5), h);
    const ValueEstimate one = estimate_value(p, 0.0, v1(0.0), config(p, 1, 1, 8, 8000), space, RandomSource{6, 0});
    const ValueEstimate four = estimate_value(p, 0.0, v1(0.0), config(p, 1, 4, 2, 8000), space, RandomSource{7, 0});
    const double noise = std::hypot(one.std_error, four.std_error);
    EXPECT_LE(std::abs(one.value - four.value), 3.0 * noise + 4.0 * h * h / 4.0);
}

TEST(EstimateValue, LargerMeshNeverLowersValue) {
    const ControlProblem& p = linear();
    const SpaceGrid space = valuation_space_grid(p, 0.0, p.controls.mesh(5), v1(-0.5), v1(0.5), 0.25);
    const ValueEstimate coarse = estimate_value(p, 0.0, v1(0.0), config(p, 2, 3, 4, 500), space, RandomSource{8, 0});
    const ValueEstimate fine = estimate_value(p, 0.0, v1(0.0), config(p, 5, 3, 4, 500), space, RandomSource{8, 0});
    for (std::size_t node = 0; node < space.size(); ++node) {
        const double se = std::hypot(coarse.grid.std_errors()[node], fine.grid.std_errors()[node]);
        EXPECT_GE(fine.grid.at(0, node), coarse.grid.at(0, node) - 3.0 * se) << "node " << node;
    }
}

TEST(EstimateValue, ReportsClamping) {
    const ControlProblem& p = heat();
    const SpaceGrid tiny(v1(-0.1), v1(0.1), {3});
    const ValueEstimate e = estimate_value(p, 0.0, v1(0.0), config(p, 1, 2, 2, 100), tiny, RandomSource{9, 0});
    EXPECT_GT(e.clamped_solves, 0u);
    EXPECT_TRUE(e.clamped);
}

TEST(EstimateValue, RejectsContractionViolation) {
    ControlProblem p = scalar_problem();
    p.generator = linear_generator(20.0);
    EXPECT_THROW(estimate_value(p, 0.0, v1(0.0), config(p, 1, 1, 10, 10), small_grid(), RandomSource{10, 0}),
                 InvalidArgument);
    EXPECT_NO_THROW(estimate_value(p, 0.0, v1(0.0), config(p, 1, 1, 21, 10), small_grid(), RandomSource{10, 0}));
}

TEST(DppConfig, RejectsBadSettings) {
    const ControlProblem& p = linear();
    DppConfig c = config(p, 3, 1, 1, 10);
    EXPECT_NO_THROW(c.check(p));
    DppConfig empty = c;
    empty.mesh.clear();
    EXPECT_THROW(empty.check(p), InvalidArgument);
    DppConfig odd = c;
    odd.paths = 11;
    EXPECT_THROW(odd.check(p), InvalidArgument);
    odd.antithetic = false;
    EXPECT_NO_THROW(odd.check(p));
    DppConfig outside = c;
    outside.mesh.push_back(v1(2.0));
    EXPECT_THROW(outside.check(p), InvalidArgument);
    DppConfig no_epochs = c;
    no_epochs.epochs = 0;
    EXPECT_THROW(no_epochs.check(p), InvalidArgument);
}

TEST(CheckDpp, ZeroDeltaHasZeroResidual) {
    const ControlProblem& p = heat();
    const DppResult r = check_dpp(p, 0.0, v1(0.0), 0.0, config(p, 1, 2, 2, 200), small_grid(), RandomSource{11, 0});
    EXPECT_EQ(r.residual, 0.0);
    EXPECT_EQ(r.semigroup, r.value);
}

TEST(CheckDpp, HeatWithinThreeStandardErrors) {
    const ControlProblem& p = heat();
    const DppConfig cfg = config(p, 1, 2, 4, 4000);
    const SpaceGrid space = valuation_space_grid(p, 0.0, cfg.mesh, v1(-0.5), v1(0.5), 0.05);
    const DppResult r = check_dpp(p, 0.0, v1(0.0), 0.5, cfg, space, RandomSource{12, 0});
    EXPECT_GT(r.combined_std_error, 0.0);
    EXPECT_LE(r.residual, 3.0 * r.combined_std_error + 2.0 * 0.05 * 0.05 / 4.0);
}

TEST(CheckDpp, LinearDriftWithinTolerance) {
    const ControlProblem& p = linear();
    const DppConfig cfg = config(p, 3, 4, 5, 1000);
    const SpaceGrid space = valuation_space_grid(p, 0.0, cfg.mesh, v1(-1.0), v1(1.0), 0.25);
    const DppResult r = check_dpp(p, 0.0, v1(0.0), 0.5, cfg, space, RandomSource{13, 0});
    EXPECT_LE(r.residual, 1e-2 + 3.0 * r.combined_std_error);
    EXPECT_EQ(cfg.mesh[r.argmax][0], 1.0);
}

TEST(CheckDpp, RejectsDeltaBeyondHorizon) {
    const ControlProblem& p = heat();
    EXPECT_THROW(check_dpp(p, 0.5, v1(0.0), 0.6, config(p, 1, 1, 1, 10), small_grid(), RandomSource{14, 0}),
                 InvalidArgument);
}

TEST(DeterministicCheck, FrozenDynamicsHaveNoSpread) {
    ControlProblem p = frozen_problem();
    p.terminal = [](const Vec& x) { return x[0] * x[0]; };
    const DeterminismReport r =
        deterministic_check(p, 0.0, v1(0.5), 4, config(p, 1, 2, 2, 20), small_grid(), RandomSource{15, 0});
    ASSERT_EQ(r.values.size(), 4u);
    EXPECT_EQ(r.spread, 0.0);
}

TEST(DeterministicCheck, HeatSpreadWithinSixStandardErrors) {
    const ControlProblem& p = heat();
    const DeterminismReport r =
        deterministic_check(p, 0.0, v1(0.0), 8, config(p, 1, 1, 2, 10000), small_grid(), RandomSource{16, 0});
    EXPECT_GT(r.spread, 0.0);
    EXPECT_LE(r.spread, 6.0 * r.std_error);
}

TEST(DeterministicCheck, SpreadHalvesWhenPathsQuadruple) {
    const ControlProblem& p = heat();
    const std::size_t reps = 256;
    const DeterminismReport small =
        deterministic_check(p, 0.0, v1(0.0), reps, config(p, 1, 1, 1, 2000), small_grid(), RandomSource{17, 0});
    const DeterminismReport large =
        deterministic_check(p, 0.0, v1(0.0), reps, config(p, 1, 1, 1, 8000), small_grid(), RandomSource{18, 0});
    const double ratio = small.spread / large.spread;
    EXPECT_GE(ratio, 2.0 / 1.5);
    EXPECT_LE(ratio, 2.0 * 1.5);
}
