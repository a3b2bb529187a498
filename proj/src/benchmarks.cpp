#include "bsdelab/benchmarks.hpp"

#include "bsdelab/hjb_fd.hpp"

#include <cmath>

namespace bsdelab {

namespace {

Vec zero1() { return Vec::Zero(1); }

ControlProblem scalar_problem() {
    ControlProblem p;
    p.n = p.d = p.k = 1;
    p.horizon = 1.0;
    p.drift = [](double, const Vec&, const Vec&) -> Vec { return zero1(); };
    p.diffusion = [](double, const Vec&, const Vec&) -> Mat { return Mat::Identity(1, 1); };
    p.generator.g = [](double, const Vec&, double, const Vec&, const Vec&) { return 0.0; };
    p.controls = ControlSet::singleton(zero1());
    return p;
}

SmoothTestFunction closed(std::function<double(double, const Vec&)> u, std::function<double(double, const Vec&)> ut,
                          std::function<double(double, const Vec&)> ux, std::function<double(double, const Vec&)> uxx) {
    return SmoothTestFunction::analytic(
        std::move(u), std::move(ut),
        [ux](double t, const Vec& x) -> Vec { return Vec::Constant(1, ux(t, x)); },
        [uxx](double t, const Vec& x) -> Mat { return Mat::Constant(1, 1, uxx(t, x)); });
}

/// Quadratic payoffs are Lipschitz only on bounded sets; the declared constant
/// covers the default validation box.
constexpr double kQuadraticLipschitz = 2.0 * 5.0;

std::vector<BenchmarkCase> build_registry() {
    std::vector<BenchmarkCase> cases;
    {
        BenchmarkCase c;
        c.name = "zero-dynamics";
        c.description = "b = 0, sigma = 0, g = 0, Phi(x) = x^2; u(t,x) = x^2";
        c.problem = scalar_problem();
        c.problem.diffusion = [](double, const Vec&, const Vec&) -> Mat { return Mat::Zero(1, 1); };
        c.problem.terminal = [](const Vec& x) { return x[0] * x[0]; };
        c.problem.terminal_lipschitz = kQuadraticLipschitz;
        c.closed_form = ClosedForm{closed([](double, const Vec& x) { return x[0] * x[0]; },
                                          [](double, const Vec&) { return 0.0; },
                                          [](double, const Vec& x) { return 2.0 * x[0]; },
                                          [](double, const Vec&) { return 2.0; }),
                                   "frozen state"};
        c.defaults.paths = 200;
        c.defaults.epochs = 2;
        c.defaults.substeps = 2;
        cases.push_back(std::move(c));
    }
    {
        BenchmarkCase c;
        c.name = "heat-fk";
        c.description = "b = 0, sigma = 1, g = 0, Phi(x) = x^2, U = {0}; u(t,x) = x^2 + (T - t)";
        c.problem = scalar_problem();
        c.problem.terminal = [](const Vec& x) { return x[0] * x[0]; };
        c.problem.terminal_lipschitz = kQuadraticLipschitz;
        c.closed_form = ClosedForm{closed([](double t, const Vec& x) { return x[0] * x[0] + (1.0 - t); },
                                          [](double, const Vec&) { return -1.0; },
                                          [](double, const Vec& x) { return 2.0 * x[0]; },
                                          [](double, const Vec&) { return 2.0; }),
                                   "heat-kernel expectation E[(x + B_{T-t})^2]"};
        c.defaults.mc_spacing = 0.05;
        c.defaults.paths = 4000;
        cases.push_back(std::move(c));
    }
    {
        BenchmarkCase c;
        c.name = "linear-drift-control";
        c.description = "b = v, sigma = 1, U = [-1, 1], g = 0, Phi(x) = x; u(t,x) = x + (T - t)";
        c.problem = scalar_problem();
        c.problem.drift = [](double, const Vec&, const Vec& v) -> Vec { return v; };
        c.problem.controls = ControlSet(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
        c.problem.coefficient_lipschitz = 1.0;
        c.problem.terminal = [](const Vec& x) { return x[0]; };
        c.problem.terminal_lipschitz = 1.0;
        c.closed_form = ClosedForm{closed([](double t, const Vec& x) { return x[0] + (1.0 - t); },
                                          [](double, const Vec&) { return -1.0; },
                                          [](double, const Vec&) { return 1.0; },
                                          [](double, const Vec&) { return 0.0; }),
                                   "maximal drift v = 1 is optimal for a linear payoff"};
        c.defaults.mc_spacing = 0.25;
        c.defaults.paths = 1000;
        cases.push_back(std::move(c));
    }
    {
        BenchmarkCase c;
        c.name = "exp-discount-bsde";
        c.description = "b = 0, sigma = 1, g = -0.1 y, Phi = 1; u(t,x) = exp(-0.1 (T - t))";
        c.problem = scalar_problem();
        c.problem.generator.g = [](double, const Vec&, double y, const Vec&, const Vec&) { return -0.1 * y; };
        c.problem.generator.lipschitz = 0.1;
        c.problem.terminal = [](const Vec&) { return 1.0; };
        c.closed_form = ClosedForm{closed([](double t, const Vec&) { return std::exp(-0.1 * (1.0 - t)); },
                                          [](double t, const Vec&) { return 0.1 * std::exp(-0.1 * (1.0 - t)); },
                                          [](double, const Vec&) { return 0.0; },
                                          [](double, const Vec&) { return 0.0; }),
                                   "linear BSDE with constant terminal"};
        c.defaults.mc_spacing = 0.25;
        c.defaults.paths = 1000;
        cases.push_back(std::move(c));
    }
    return cases;
}

}  // namespace

const std::vector<BenchmarkCase>& benchmark_registry() {
    static const std::vector<BenchmarkCase> registry = build_registry();
    return registry;
}

std::vector<std::pair<std::string, std::string>> list_benchmarks() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& c : benchmark_registry()) out.emplace_back(c.name, c.description);
    return out;
}

const BenchmarkCase& find_benchmark(const std::string& name) {
    for (const auto& c : benchmark_registry()) {
        if (c.name == name) return c;
    }
    throw InvalidArgument("unknown benchmark '" + name + "'");
}

SelfTestResult registry_self_test(const BenchmarkCase& c, std::size_t points, const RandomSource& rng) {
    SelfTestResult r;
    r.name = c.name;
    if (!c.closed_form) return r;
    const HjbOperator op(c.problem, c.problem.controls.mesh(c.defaults.mesh_per_axis));
    NormalStream s(rng);
    for (std::size_t j = 0; j < points; ++j) {
        const double t = c.problem.horizon * s.next_uniform();
        Vec x(c.problem.n);
        for (int a = 0; a < c.problem.n; ++a) {
            x[a] = c.defaults.window_lower[a] + (c.defaults.window_upper[a] - c.defaults.window_lower[a]) * s.next_uniform();
        }
        const double res = std::abs(hjb_residual(op, c.closed_form->u, t, x).value);
        r.max_residual = std::max(r.max_residual, res);
        ++r.points;
    }
    r.pass = r.max_residual <= kSelfTestTolerance;
    return r;
}

}  // namespace bsdelab
