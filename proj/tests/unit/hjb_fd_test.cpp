#include "bsdelab/hjb_fd.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace bsdelab;
using namespace bsdelab::testing;

namespace {

ControlProblem heat_problem() {
    ControlProblem p = scalar_problem();
    p.terminal = [](const Vec& x) { return x[0] * x[0]; };
    return p;
}

ControlProblem linear_control_problem() {
    ControlProblem p = scalar_problem();
    p.controls = ControlSet(v1(-1.0), v1(1.0));
    p.drift = [](double, const Vec&, const Vec& v) -> Vec { return v; };
    p.terminal = [](const Vec& x) { return x[0]; };
    return p;
}

SmoothTestFunction analytic1(std::function<double(double, double)> u, std::function<double(double, double)> ut,
                             std::function<double(double, double)> ux, std::function<double(double, double)> uxx) {
    return SmoothTestFunction::analytic([u](double t, const Vec& x) { return u(t, x[0]); },
                                        [ut](double t, const Vec& x) { return ut(t, x[0]); },
                                        [ux](double t, const Vec& x) -> Vec { return v1(ux(t, x[0])); },
                                        [uxx](double t, const Vec& x) -> Mat { return Mat::Constant(1, 1, uxx(t, x[0])); });
}

ValueGrid solve_cfl(const HjbOperator& op, const SpaceGrid& space) {
    const std::size_t N = cfl_steps(op, space, 0.0, op.problem.horizon);
    return solve_hjb(op, space, make_grid(0.0, op.problem.horizon, N));
}

double inner_error(const ValueGrid& u, const std::function<double(double, const Vec&)>& exact) {
    double err = 0.0;
    for (std::size_t node = 0; node < u.space().size(); ++node) {
        if (!u.space().in_inner_half(node)) continue;
        for (std::size_t i = 0; i <= u.time().steps(); ++i) {
            err = std::max(err, std::abs(u.at(i, node) - exact(u.time().node(i), u.space().point(node))));
        }
    }
    return err;
}

}  // namespace

TEST(SpaceGrid, LastNodeIsUpperAndIndexingRoundTrips) {
    const SpaceGrid g(v2(-1.0, 0.0), v2(1.0, 0.3), {21, 7});
    EXPECT_EQ(g.coord(0, 20), 1.0);
    EXPECT_EQ(g.coord(1, 6), 0.3);
    EXPECT_EQ(g.size(), 147u);
    for (std::size_t f = 0; f < g.size(); f += 13) EXPECT_EQ(g.flat_index(g.multi_index(f)), f);
    EXPECT_TRUE(g.is_boundary(0));
    EXPECT_FALSE(g.is_boundary(g.flat_index({10, 3})));
    EXPECT_TRUE(g.in_inner_half(g.flat_index({10, 3})));
    EXPECT_FALSE(g.in_inner_half(g.flat_index({2, 3})));
    const SpaceGrid s = SpaceGrid::with_spacing(v1(-1.0), v1(0.95), 0.1);
    EXPECT_NEAR(s.upper(0), 1.0, 1e-12);
    EXPECT_NEAR(s.spacing(0), 0.1, 1e-12);
}

TEST(ValueGrid, InterpolationIsExactAtNodesAndClamps) {
    ValueGrid u(make_grid(0.0, 1.0, 2), SpaceGrid(v1(0.0), v1(1.0), {5}), ValueGrid::Provenance::fd);
    for (std::size_t i = 0; i <= 2; ++i) {
        for (std::size_t node = 0; node < 5; ++node) u.at(i, node) = 10.0 * i + node * node;
    }
    bool clamped = false;
    EXPECT_EQ(u.interpolate_slice(1, v1(0.5), &clamped), 14.0);
    EXPECT_FALSE(clamped);
    EXPECT_DOUBLE_EQ(u.interpolate_slice(0, v1(0.125)), 0.5);
    EXPECT_DOUBLE_EQ(u.interpolate(0.25, v1(0.5)), 9.0);
    EXPECT_EQ(u.interpolate_slice(0, v1(3.0), &clamped), 16.0);
    EXPECT_TRUE(clamped);
}

TEST(ApplyLv, Examples) {
    const ControlProblem heat = heat_problem();
    const HjbOperator op(heat, {v1(0.0)});
    const SmoothTestFunction constant = analytic1([](double, double) { return 3.0; }, [](double, double) { return 0.0; },
                                                  [](double, double) { return 0.0; }, [](double, double) { return 0.0; });
    EXPECT_EQ(apply_Lv(op, constant, 0.2, v1(0.4), v1(0.0)), 0.0);
    const SmoothTestFunction square = analytic1([](double, double x) { return x * x; }, [](double, double) { return 0.0; },
                                                [](double, double x) { return 2.0 * x; }, [](double, double) { return 2.0; });
    EXPECT_DOUBLE_EQ(apply_Lv(op, square, 0.2, v1(0.4), v1(0.0)), 1.0);

    ControlProblem drift = linear_control_problem();
    drift.diffusion = [](double, const Vec&, const Vec&) -> Mat { return Mat::Zero(1, 1); };
    const HjbOperator dop(drift, drift.controls.mesh(3));
    const SmoothTestFunction identity = analytic1([](double, double x) { return x; }, [](double, double) { return 0.0; },
                                                  [](double, double) { return 1.0; }, [](double, double) { return 0.0; });
    EXPECT_DOUBLE_EQ(apply_Lv(dop, identity, 0.0, v1(0.3), v1(0.7)), 0.7);
}

TEST(HjbResidual, ClosedFormsVanish) {
    const ControlProblem lin = linear_control_problem();
    const HjbOperator lop(lin, lin.controls.mesh(11));
    const SmoothTestFunction ulin = analytic1([](double t, double x) { return x + (1.0 - t); },
                                              [](double, double) { return -1.0; }, [](double, double) { return 1.0; },
                                              [](double, double) { return 0.0; });
    const HjbOperator hop(heat_problem(), {v1(0.0)});
    const SmoothTestFunction uheat = analytic1([](double t, double x) { return x * x + (1.0 - t); },
                                               [](double, double) { return -1.0; },
                                               [](double, double x) { return 2.0 * x; }, [](double, double) { return 2.0; });
    for (double t : {0.0, 0.3, 0.9}) {
        for (double x : {-0.7, 0.0, 0.4}) {
            const HjbResidual r = hjb_residual(lop, ulin, t, v1(x));
            EXPECT_NEAR(r.value, 0.0, 1e-10);
            EXPECT_EQ(lop.mesh[r.argmax][0], 1.0);
            EXPECT_NEAR(hjb_residual(hop, uheat, t, v1(x)).value, 0.0, 1e-10);
        }
    }
    const HjbOperator zop(frozen_problem(), {v1(0.0)});
    const SmoothTestFunction time = analytic1([](double t, double) { return t; }, [](double, double) { return 1.0; },
                                              [](double, double) { return 0.0; }, [](double, double) { return 0.0; });
    EXPECT_DOUBLE_EQ(hjb_residual(zop, time, 0.5, v1(0.1)).value, 1.0);
}

TEST(HjbOperator, RejectsMeshOutsideU) {
    EXPECT_THROW(HjbOperator(linear_control_problem(), {v1(2.0)}), InvalidArgument);
    EXPECT_THROW(HjbOperator(linear_control_problem(), {}), InvalidArgument);
}

TEST(SolveHjb, FrozenDynamicsReproducePhi) {
    ControlProblem p = frozen_problem();
    p.terminal = [](const Vec& x) { return x[0] * x[0]; };
    const HjbOperator op(p, {v1(0.0)});
    const ValueGrid u = solve_hjb(op, SpaceGrid::with_spacing(v1(-1.0), v1(1.0), 0.1), make_grid(0.0, 1.0, 10));
    for (std::size_t i = 0; i <= 10; ++i) {
        for (std::size_t node = 0; node < u.space().size(); ++node) {
            const double x = u.space().point(node)[0];
            ASSERT_EQ(u.at(i, node), x * x);
        }
    }
}

TEST(SolveHjb, HeatBenchmark) {
    const HjbOperator op(heat_problem(), {v1(0.0)});
    const ValueGrid u = solve_cfl(op, padded_space_grid(op, v1(-1.0), v1(1.0), 0.05));
    EXPECT_NEAR(u.interpolate(0.0, v1(0.0)), 1.0, 2e-2);
    EXPECT_LE(inner_error(u, [](double t, const Vec& x) { return x[0] * x[0] + 1.0 - t; }), 2e-2);
}

TEST(SolveHjb, LinearControlBenchmark) {
    const ControlProblem p = linear_control_problem();
    const HjbOperator op(p, p.controls.mesh(11));
    const ValueGrid u = solve_cfl(op, padded_space_grid(op, v1(-1.0), v1(1.0), 0.05));
    EXPECT_NEAR(u.interpolate(0.0, v1(0.0)), 1.0, 2e-2);
}

TEST(SolveHjb, TerminalSliceIsPhiBitwise) {
    ControlProblem p = heat_problem();
    p.terminal = [](const Vec& x) { return std::sin(7.0 * x[0]) / 3.0; };
    const HjbOperator op(p, {v1(0.0)});
    const ValueGrid u = solve_cfl(op, SpaceGrid::with_spacing(v1(-2.0), v1(2.0), 0.1));
    const std::size_t N = u.time().steps();
    for (std::size_t node = 0; node < u.space().size(); ++node) {
        ASSERT_EQ(u.at(N, node), p.terminal(u.space().point(node)));
    }
}

TEST(SolveHjb, DiscreteMaximumPrinciple) {
    ControlProblem p = linear_control_problem();
    p.terminal = [](const Vec& x) { return std::cos(3.0 * x[0]) + 0.2 * x[0]; };
    const HjbOperator op(p, p.controls.mesh(5));
    const SpaceGrid space = SpaceGrid::with_spacing(v1(-2.0), v1(2.0), 0.05);
    const ValueGrid u = solve_cfl(op, space);
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t node = 0; node < space.size(); ++node) {
        lo = std::min(lo, p.terminal(space.point(node)));
        hi = std::max(hi, p.terminal(space.point(node)));
    }
    for (double v : u.values()) {
        ASSERT_GE(v, lo - 1e-12);
        ASSERT_LE(v, hi + 1e-12);
    }
}

TEST(SolveHjb, SchemeIsMonotone) {
    ControlProblem p;
    p.n = p.d = p.k = 2;
    p.controls = ControlSet(v2(-1.0, -1.0), v2(1.0, 1.0));
    p.drift = [](double, const Vec& x, const Vec& v) -> Vec { return v2(v[0] - 0.3 * x[0], 0.5 * v[1] + 0.2); };
    p.diffusion = [](double, const Vec&, const Vec&) -> Mat {
        Mat s(2, 2);
        s << 1.0, 0.0, 0.6, 0.8;
        return s;
    };
    p.generator.g = [](double, const Vec&, double y, const Vec& z, const Vec& v) {
        return -0.3 * y + 0.2 * std::abs(z[0]) + 0.1 * v[1];
    };
    p.generator.lipschitz = 0.5;
    auto phi = [](const Vec& x) { return std::sin(2.0 * x[0]) * std::cos(x[1]) + x[0] * x[1]; };
    p.terminal = phi;
    const SpaceGrid space = SpaceGrid::with_spacing(v2(-1.0, -1.0), v2(1.0, 1.0), 0.2);
    const HjbOperator op(p, p.controls.mesh(3));
    const double dt = cfl_time_step(op, space, 0.0);
    const TimeGrid grid({1.0 - 0.9 * dt, 1.0});
    p.horizon = 1.0;
    NormalStream rng(RandomSource{21, 0});
    const ValueGrid u0 = solve_hjb(op, space, grid);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t bumped = static_cast<std::size_t>(rng.next_uniform() * space.size());
        const Vec xb = space.point(bumped);
        ControlProblem q = p;
        q.terminal = [phi, xb](const Vec& x) { return phi(x) + ((x - xb).norm() < 1e-12 ? 1e-6 : 0.0); };
        const ValueGrid u1 = solve_hjb(HjbOperator(q, op.mesh), space, grid);
        for (std::size_t node = 0; node < space.size(); ++node) ASSERT_GE(u1.at(0, node) - u0.at(0, node), 0.0);
    }
}

TEST(SolveHjb, MeshRefinementNeverDecreasesValue) {
    ControlProblem p = linear_control_problem();
    p.terminal = [](const Vec& x) { return -std::abs(x[0] - 0.2) + 0.3 * std::sin(4.0 * x[0]); };
    p.generator.g = [](double, const Vec&, double y, const Vec&, const Vec& v) { return -0.1 * y - 0.5 * v[0] * v[0]; };
    p.generator.lipschitz = 0.1;
    const SpaceGrid space = SpaceGrid::with_spacing(v1(-2.0), v1(2.0), 0.05);
    const HjbOperator coarse(p, p.controls.mesh(3));
    const HjbOperator fine(p, p.controls.mesh(9));
    const std::size_t N = std::max(cfl_steps(coarse, space, 0.0, 1.0), cfl_steps(fine, space, 0.0, 1.0));
    const ValueGrid uc = solve_hjb(coarse, space, make_grid(0.0, 1.0, N));
    const ValueGrid uf = solve_hjb(fine, space, make_grid(0.0, 1.0, N));
    for (std::size_t k = 0; k < uc.values().size(); ++k) ASSERT_GE(uf.values()[k], uc.values()[k] - 1e-14);
}

TEST(SolveHjb, ErrorDecreasesUnderRefinement) {
    // u = exp(-(T - t)/2) cos x solves the heat equation with Phi = cos.
    ControlProblem p = heat_problem();
    p.terminal = [](const Vec& x) { return std::cos(x[0]); };
    const HjbOperator op(p, {v1(0.0)});
    auto exact = [](double t, const Vec& x) { return std::exp(-0.5 * (1.0 - t)) * std::cos(x[0]); };
    const double e1 = inner_error(solve_cfl(op, padded_space_grid(op, v1(-1.0), v1(1.0), 0.1)), exact);
    const double e2 = inner_error(solve_cfl(op, padded_space_grid(op, v1(-1.0), v1(1.0), 0.05)), exact);
    EXPECT_LT(e2, e1);
    EXPECT_LT(e2, 0.5 * e1);
}

TEST(SolveHjb, CrossDerivativeStencilIsExactForBilinearPayoff) {
    const double rho = 0.6;
    ControlProblem p;
    p.n = p.d = 2;
    p.k = 1;
    p.drift = [](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(2); };
    p.diffusion = [rho](double, const Vec&, const Vec&) -> Mat {
        Mat s(2, 2);
        s << 1.0, 0.0, rho, std::sqrt(1.0 - rho * rho);
        return s;
    };
    p.generator.g = [](double, const Vec&, double, const Vec&, const Vec&) { return 0.0; };
    p.terminal = [](const Vec& x) { return x[0] * x[1]; };
    p.controls = ControlSet::singleton(Vec::Zero(1));
    const HjbOperator op(p, {Vec::Zero(1)});
    const SpaceGrid space = SpaceGrid::with_spacing(v2(-2.0, -2.0), v2(2.0, 2.0), 0.25);
    const double dt = cfl_time_step(op, space, 0.0);
    const ValueGrid u = solve_hjb(op, space, TimeGrid({1.0 - dt, 1.0}));
    for (std::size_t node = 0; node < space.size(); ++node) {
        if (space.is_boundary(node)) continue;
        const Vec x = space.point(node);
        EXPECT_NEAR(u.at(0, node), x[0] * x[1] + rho * dt, 1e-12);
    }
}

TEST(SolveHjb, RejectsNonDominantCorrelation) {
    ControlProblem p;
    p.n = p.d = 2;
    p.k = 1;
    p.drift = [](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(2); };
    p.diffusion = [](double, const Vec&, const Vec&) -> Mat {
        Mat s(2, 2);
        s << 1.0, 0.0, 1.2, 0.1;
        return s;
    };
    p.generator.g = [](double, const Vec&, double, const Vec&, const Vec&) { return 0.0; };
    p.terminal = [](const Vec& x) { return x[0]; };
    p.controls = ControlSet::singleton(Vec::Zero(1));
    const HjbOperator op(p, {Vec::Zero(1)});
    const SpaceGrid space = SpaceGrid::with_spacing(v2(-1.0, -1.0), v2(1.0, 1.0), 0.25);
    EXPECT_THROW(solve_cfl(op, space), InvalidArgument);
}

TEST(SolveHjb, CflViolationReportsAdmissibleStep) {
    const HjbOperator op(heat_problem(), {v1(0.0)});
    const SpaceGrid space = SpaceGrid::with_spacing(v1(-1.0), v1(1.0), 0.05);
    const double dt = cfl_time_step(op, space, 0.0);
    EXPECT_NEAR(dt, 0.05 * 0.05, 1e-15);
    try {
        solve_hjb(op, space, make_grid(0.0, 1.0, 10));
        FAIL() << "expected CFL rejection";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("maximal admissible dt"), std::string::npos) << e.what();
    }
}

TEST(SolveHjb, BlowUpNamesNode) {
    ControlProblem p = frozen_problem();
    p.terminal = [](const Vec& x) { return 1e200 * (1.0 + x[0] * x[0]); };
    p.generator.g = [](double, const Vec&, double y, const Vec&, const Vec&) { return y * y; };
    p.generator.lipschitz = 0.0;
    const HjbOperator op(p, {v1(0.0)});
    try {
        solve_hjb(op, SpaceGrid::with_spacing(v1(-1.0), v1(1.0), 0.5), make_grid(0.0, 1.0, 4));
        FAIL() << "expected blow-up";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
    }
}

TEST(SolveHjb, GridMustEndAtHorizon) {
    const HjbOperator op(heat_problem(), {v1(0.0)});
    EXPECT_THROW(solve_hjb(op, SpaceGrid::with_spacing(v1(-1.0), v1(1.0), 0.5), make_grid(0.0, 0.5, 4)),
                 InvalidArgument);
}

TEST(ValueExport, SlabRoundTripAndCsvHeader) {
    const HjbOperator op(heat_problem(), {v1(0.0)});
    const ValueGrid u = solve_cfl(op, SpaceGrid::with_spacing(v1(-1.0), v1(1.0), 0.25));
    std::stringstream slab;
    write_value_slab(slab, u);
    const ValueGrid r = read_value_slab(slab);
    EXPECT_EQ(r.provenance(), ValueGrid::Provenance::fd);
    EXPECT_EQ(r.values(), u.values());
    EXPECT_EQ(r.space().size(), u.space().size());
    EXPECT_EQ(r.time().steps(), u.time().steps());
    std::ostringstream csv;
    write_value_csv(csv, u);
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "t,x1,u");
    EXPECT_EQ(to_string(ValueGrid::Provenance::mc), "mc");
}
