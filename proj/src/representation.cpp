#include "bsdelab/representation.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <ostream>

namespace bsdelab {

void RepresentationProbe::check() const {
    if (!(t >= 0.0)) throw InvalidArgument("RepresentationProbe: t must be >= 0");
    if (!(epsilon > 0.0)) throw InvalidArgument("RepresentationProbe: epsilon must be > 0");
    if (z.size() < 1 || z.size() > kMaxDim) throw InvalidArgument("RepresentationProbe: bad z dimension");
    if (paths == 0) throw InvalidArgument("RepresentationProbe: need at least one path");
    if (!(p_norm >= 1.0 && p_norm < 2.0)) throw InvalidArgument("RepresentationProbe: p_norm must lie in [1, 2)");
}

std::size_t probe_grid_steps(double epsilon, double lipschitz, const ProbeOptions& opts) {
    std::size_t steps = opts.grid_steps;
    if (steps == 0) {
        steps = 16;
        if (lipschitz > 0.0) {
            const double dt_max = 0.5 / lipschitz;
            const double wanted = std::ceil(epsilon / dt_max);
            steps = wanted >= static_cast<double>(opts.max_grid_steps)
                        ? opts.max_grid_steps
                        : std::max<std::size_t>(16, static_cast<std::size_t>(wanted));
        }
    }
    while (epsilon / static_cast<double>(steps) * lipschitz >= 1.0) {
        if (steps >= opts.max_grid_steps) {
            throw InvalidArgument("probe_generator: dt * K >= 1 even at " + std::to_string(opts.max_grid_steps) +
                                  " steps");
        }
        steps = std::min(opts.max_grid_steps, steps * 2);
    }
    return steps;
}

namespace {

ControlProblem probe_problem(int d) {
    ControlProblem p;
    p.n = d;
    p.d = d;
    p.k = 1;
    p.drift = [d](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(d); };
    p.diffusion = [d](double, const Vec&, const Vec&) -> Mat { return Mat::Identity(d, d); };
    p.generator.g = [](double, const Vec&, double, const Vec&, const Vec&) { return 0.0; };
    p.terminal = [](const Vec&) { return 0.0; };
    p.controls = ControlSet::singleton(Vec::Zero(1));
    p.horizon = std::numeric_limits<double>::max();
    return p;
}

}  // namespace

ProbeEstimate probe_generator(const GeneratorSpec& gen, const RepresentationProbe& probe,
                              const RegressionBasis& basis, const RandomSource& rng, const ProbeOptions& opts) {
    probe.check();
    const int d = static_cast<int>(probe.z.size());
    const std::size_t steps = probe_grid_steps(probe.epsilon, gen.lipschitz, opts);
    const TimeGrid grid = make_grid(probe.t, probe.t + probe.epsilon, steps);
    const ControlProblem p = probe_problem(d);
    SimulationOptions sim;
    sim.antithetic = opts.antithetic;
    const PathEnsemble paths = simulate(p, probe.t, Vec::Zero(d), ControlProcess::constant(Vec::Zero(1)), grid,
                                        probe.paths, rng, sim);

    const double y = probe.y;
    const Vec z = probe.z;
    GeneratorSpec shifted = gen;
    shifted.g = [&gen, y](double r, const Vec& x, double yhat, const Vec& zz, const Vec& v) {
        return gen(r, x, yhat + y, zz, v);
    };
    std::vector<double> terminal(probe.paths);
    for (std::size_t m = 0; m < probe.paths; ++m) terminal[m] = z.dot(paths.state(m, steps));
    BsdeOptions bo;
    bo.paired_paths = opts.antithetic;
    const BsdeSolution sol = solve_bsde(terminal, shifted, paths, basis, bo);

    // Frozen-argument drift integral, averaged over paths.
    std::vector<double> frozen(probe.paths, 0.0);
    const Vec v0 = Vec::Zero(1);
    for (std::size_t m = 0; m < probe.paths; ++m) {
        double acc = 0.0;
        for (std::size_t i = 0; i < steps; ++i) acc += grid.step(i) * gen(grid.node(i), paths.state(m, i), y, z, v0);
        frozen[m] = acc;
    }

    ProbeEstimate out;
    out.estimate = sol.y0 / probe.epsilon;
    out.frozen_drift = shifted_mean(frozen) / probe.epsilon;
    out.grid_steps = steps;
    return out;
}

double conditional_expectation_residual(const GeneratorSpec& gen, const RepresentationProbe& probe,
                                        const RegressionBasis& basis, const RandomSource& rng,
                                        const ProbeOptions& opts) {
    const ProbeEstimate e = probe_generator(gen, probe, basis, rng, opts);
    return std::abs(e.estimate - e.frozen_drift);
}

std::vector<double> geometric_ladder(int first_exponent, int last_exponent) {
    if (last_exponent < first_exponent) throw InvalidArgument("geometric_ladder: last exponent below first");
    std::vector<double> out;
    for (int e = first_exponent; e <= last_exponent; ++e) out.push_back(std::ldexp(1.0, -e));
    return out;
}

RateFit verify_limit(const GeneratorSpec& gen, double t, double y, const Vec& z, const std::vector<double>& ladder,
                     std::size_t M, const RegressionBasis& basis, const RandomSource& rng, double p_norm,
                     const LimitOptions& opts) {
    if (ladder.empty()) throw InvalidArgument("verify_limit: empty ladder");
    for (std::size_t j = 0; j < ladder.size(); ++j) {
        if (!(ladder[j] > 0.0) || (j > 0 && !(ladder[j] < ladder[j - 1]))) {
            throw InvalidArgument("verify_limit: ladder must be positive and strictly decreasing");
        }
    }
    if (opts.replications < 2) throw InvalidArgument("verify_limit: need at least two replications");

    RateFit fit;
    fit.epsilons = ladder;
    fit.target = gen(t, Vec::Zero(z.size()), y, z, Vec::Zero(1));
    fit.almost_every_t_caveat = !gen.continuous_in_t;
    const auto R = opts.replications;

    for (std::size_t j = 0; j < ladder.size(); ++j) {
        RepresentationProbe probe{t, y, z, ladder[j], M, p_norm};
        std::vector<double> dev(R), est(R);
        std::size_t steps = 0;
        for (std::size_t r = 0; r < R; ++r) {
            const ProbeEstimate e = probe_generator(gen, probe, basis, rng.child(j).child(r), opts.probe);
            est[r] = e.estimate;
            dev[r] = std::pow(std::abs(e.estimate - fit.target), p_norm);
            steps = e.grid_steps;
        }
        const double mean_dev = shifted_mean(dev);
        double ss = 0.0;
        for (double v : dev) ss += (v - mean_dev) * (v - mean_dev);
        const double se_dev = std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R));
        const double err = std::pow(mean_dev, 1.0 / p_norm);
        // Delta method for the p-th root.
        const double se = p_norm == 1.0 || mean_dev == 0.0
                              ? se_dev
                              : se_dev * std::pow(mean_dev, 1.0 / p_norm - 1.0) / p_norm;
        fit.errors.push_back(err);
        fit.std_errors.push_back(se);
        fit.mean_estimates.push_back(shifted_mean(est));
        fit.grid_steps.push_back(steps);
    }

    fit.exact = std::all_of(fit.errors.begin(), fit.errors.end(), [](double e) { return e < 1e-12; });
    if (fit.exact || ladder.size() < 2) {
        fit.slope = fit.slope_low = fit.slope_high = std::numeric_limits<double>::quiet_NaN();
        return fit;
    }
    const auto J = ladder.size();
    std::vector<double> lx(J), ly(J);
    for (std::size_t j = 0; j < J; ++j) {
        lx[j] = std::log(ladder[j]);
        ly[j] = std::log(std::max(fit.errors[j], 1e-300));
    }
    double mx = 0, my = 0;
    for (std::size_t j = 0; j < J; ++j) mx += lx[j], my += ly[j];
    mx /= static_cast<double>(J);
    my /= static_cast<double>(J);
    double sxx = 0, sxy = 0;
    for (std::size_t j = 0; j < J; ++j) {
        sxx += (lx[j] - mx) * (lx[j] - mx);
        sxy += (lx[j] - mx) * (ly[j] - my);
    }
    fit.slope = sxy / sxx;
    if (J > 2) {
        const double intercept = my - fit.slope * mx;
        double rss = 0;
        for (std::size_t j = 0; j < J; ++j) {
            const double r = ly[j] - intercept - fit.slope * lx[j];
            rss += r * r;
        }
        const double se = std::sqrt(rss / static_cast<double>(J - 2) / sxx);
        const boost::math::students_t dist(static_cast<double>(J - 2));
        const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
        fit.slope_low = fit.slope - q * se;
        fit.slope_high = fit.slope + q * se;
    } else {
        fit.slope_low = -std::numeric_limits<double>::infinity();
        fit.slope_high = std::numeric_limits<double>::infinity();
    }
    return fit;
}

void write_rate_csv(std::ostream& os, const RateFit& fit) {
    os.precision(17);
    os << "epsilon,error,stderr\n";
    for (std::size_t j = 0; j < fit.epsilons.size(); ++j) {
        os << fit.epsilons[j] << ',' << fit.errors[j] << ',' << fit.std_errors[j] << '\n';
    }
}

OneSidedProbes probe_one_sided(const GeneratorSpec& gen, double t_star, double y, const Vec& z, double epsilon,
                               std::size_t M, const RegressionBasis& basis, const RandomSource& rng,
                               const ProbeOptions& opts) {
    if (!(t_star - epsilon >= 0.0)) throw InvalidArgument("probe_one_sided: need t* - eps >= 0");
    OneSidedProbes out;
    out.left = probe_generator(gen, {t_star - epsilon, y, z, epsilon, M, 1.0}, basis, rng.child(0), opts).estimate;
    out.right = probe_generator(gen, {t_star, y, z, epsilon, M, 1.0}, basis, rng.child(1), opts).estimate;
    out.jump = out.right - out.left;
    return out;
}

}  // namespace bsdelab
