#include "bsdelab/bsde_solver.hpp"

#include "bsdelab/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace bsdelab {

namespace {

double sample_std_error(const Eigen::VectorXd& values, bool paired) {
    const auto M = values.size();
    if (paired && M >= 4) {
        const auto pairs = M / 2;
        std::vector<double> avg(static_cast<std::size_t>(pairs));
        for (Eigen::Index j = 0; j < pairs; ++j) avg[j] = 0.5 * (values[2 * j] + values[2 * j + 1]);
        const double mean = shifted_mean(avg);
        double ss = 0.0;
        for (double a : avg) ss += (a - mean) * (a - mean);
        return std::sqrt(ss / static_cast<double>(pairs - 1) / static_cast<double>(pairs));
    }
    if (M < 2) return 0.0;
    const double mean = shifted_mean(std::span<const double>(values.data(), static_cast<std::size_t>(M)));
    const double ss = (values.array() - mean).square().sum();
    return std::sqrt(ss / static_cast<double>(M - 1) / static_cast<double>(M));
}

}  // namespace

BsdeSolution solve_bsde(std::span<const double> terminal, const GeneratorSpec& gen, const PathEnsemble& paths,
                        const RegressionBasis& basis, const BsdeOptions& opts) {
    const std::size_t M = paths.paths();
    const std::size_t N = paths.steps();
    const int n = paths.state_dim();
    const int d = paths.noise_dim();
    if (terminal.size() != M) throw InvalidArgument("solve_bsde: terminal data must have one entry per path");
    if (!paths.has_increments()) throw InvalidArgument("solve_bsde: ensemble has no Brownian increments");
    if (!gen.g) throw InvalidArgument("solve_bsde: empty generator");
    for (std::size_t i = 0; i < N; ++i) {
        if (paths.grid().step(i) * gen.lipschitz >= 1.0) {
            throw InvalidArgument("solve_bsde: dt * K >= 1 at step " + std::to_string(i) +
                                  " (contraction of the implicit step violated)");
        }
    }
    for (double v : terminal) {
        if (!std::isfinite(v)) throw NumericalError("solve_bsde: non-finite terminal data");
    }

    BsdeSolution sol;
    sol.noise_dim = d;
    sol.Y.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N + 1));
    std::copy(terminal.begin(), terminal.end(), sol.Y.col(static_cast<Eigen::Index>(N)).data());
    sol.Z.assign(M * N * d, 0.0);
    sol.picard_iterations.assign(N, 0);
    sol.ridge_steps.assign(N, false);

    Eigen::MatrixXd y_target(static_cast<Eigen::Index>(M), 1);
    Eigen::MatrixXd z_targets(static_cast<Eigen::Index>(M), d);
    const std::size_t stride = (N + 1) * static_cast<std::size_t>(n);
    std::vector<int> iters(M);
    Eigen::VectorXd pathwise(static_cast<Eigen::Index>(M));
    std::copy(terminal.begin(), terminal.end(), pathwise.data());

    for (std::size_t step = N; step-- > 0;) {
        const double s = paths.grid().node(step);
        const double dt = paths.grid().step(step);
        const auto next = sol.Y.col(static_cast<Eigen::Index>(step + 1));
        const StateView view{paths.state_data(0, step), M, n, stride};
        y_target.col(0) = next;
        const RegressionResult fit_y = regress(basis, view, y_target);
        // Z targets use the residual of Y_{i+1} against its fitted conditional mean.
        for (std::size_t m = 0; m < M; ++m) {
            const auto row = static_cast<Eigen::Index>(m);
            const double r = next[row] - fit_y.fitted(row, 0);
            const double* db = paths.increment_data(m, step);
            for (int j = 0; j < d; ++j) z_targets(row, j) = r * db[j];
        }
        const RegressionResult fit_z = regress(basis, view, z_targets);
        sol.ridge_steps[step] = fit_y.ridge_fallback || fit_z.ridge_fallback;

        auto current = sol.Y.col(static_cast<Eigen::Index>(step));
        parallel_for(M, [&](std::size_t begin, std::size_t end) {
            for (std::size_t m = begin; m < end; ++m) {
                const auto row = static_cast<Eigen::Index>(m);
                const Vec x = paths.state(m, step);
                const Vec v = paths.control(m, step);
                Vec z(d);
                for (int j = 0; j < d; ++j) z[j] = fit_z.fitted(row, j) / dt;
                std::copy(z.data(), z.data() + d, &sol.Z[(m * N + step) * d]);
                const double e = fit_y.fitted(row, 0);
                double y = e + dt * gen(s, x, e, z, v);
                int it = 1;
                if (gen.lipschitz > 0.0) {
                    while (it < opts.picard_max_iterations) {
                        const double y_next = e + dt * gen(s, x, y, z, v);
                        ++it;
                        const bool done = std::abs(y_next - y) <= opts.picard_tolerance;
                        y = y_next;
                        if (done) break;
                    }
                }
                if (!std::isfinite(y)) {
                    throw NumericalError("solve_bsde: non-finite Y at path " + std::to_string(m) + ", step " +
                                         std::to_string(step));
                }
                current[row] = y;
                pathwise[row] += y - e;
                iters[m] = it;
            }
        });
        sol.picard_iterations[step] = *std::max_element(iters.begin(), iters.end());
    }
    const auto first = sol.Y.col(0);
    sol.y0 = shifted_mean(std::span<const double>(first.data(), M));
    sol.y0_std_error = N > 0 ? sample_std_error(pathwise, opts.paired_paths) : 0.0;
    return sol;
}

SemigroupResult backward_semigroup(const ControlProblem& p, const PathEnsemble& paths,
                                   const std::function<double(const Vec&)>& xi, const RegressionBasis& basis,
                                   const BsdeOptions& opts) {
    const std::size_t M = paths.paths();
    const std::size_t N = paths.steps();
    std::vector<double> terminal(M);
    for (std::size_t m = 0; m < M; ++m) terminal[m] = xi(paths.state(m, N));
    const BsdeSolution sol = solve_bsde(terminal, p.generator, paths, basis, opts);
    return {sol.y0, sol.y0_std_error};
}

SemigroupResult backward_semigroup(const ControlProblem& p, double t, const Vec& x, const ControlProcess& ctrl,
                                   double delta, const std::function<double(const Vec&)>& xi,
                                   const TimeGrid& grid, std::size_t M, const RegressionBasis& basis,
                                   const RandomSource& rng, const SimulationOptions& sim, const BsdeOptions& opts) {
    const double tol = 1e-12 * std::max(1.0, p.horizon);
    if (!(delta > 0.0) || t + delta > p.horizon + tol) {
        throw InvalidArgument("backward_semigroup: require 0 < delta <= T - t");
    }
    if (std::abs(grid.t0() - t) > tol || std::abs(grid.horizon() - (t + delta)) > tol) {
        throw InvalidArgument("backward_semigroup: grid must span [t, t + delta]");
    }
    const PathEnsemble paths = simulate(p, t, x, ctrl, grid, M, rng, sim);
    BsdeOptions o = opts;
    o.paired_paths = o.paired_paths || sim.antithetic;
    return backward_semigroup(p, paths, xi, basis, o);
}

SemigroupConsistency semigroup_consistency(const ControlProblem& p, double t, const Vec& x,
                                           const ControlProcess& ctrl, double delta, std::size_t N, std::size_t M,
                                           const RegressionBasis& basis, const RandomSource& rng,
                                           const BsdeOptions& opts) {
    const double T = p.horizon;
    const double tol = 1e-12 * std::max(1.0, T);
    if (!(delta > 0.0) || t + delta > T + tol) throw InvalidArgument("semigroup_consistency: require 0 < delta <= T - t");
    if (N == 0) throw InvalidArgument("semigroup_consistency: N must be positive");
    const bool split = t + delta < T - tol;

    const TimeGrid route_a = make_grid(t, T, N);
    std::vector<double> all(route_a.nodes().begin(), route_a.nodes().end());
    const TimeGrid first = make_grid(t, split ? t + delta : T, N);
    all.insert(all.end(), first.nodes().begin(), first.nodes().end());
    std::optional<TimeGrid> second;
    if (split) {
        second = make_grid(t + delta, T, N);
        all.insert(all.end(), second->nodes().begin(), second->nodes().end());
    }
    std::sort(all.begin(), all.end());
    std::vector<double> merged;
    for (double s : all) {
        if (merged.empty() || s - merged.back() > tol) merged.push_back(s);
    }
    merged.back() = T;
    const TimeGrid fine_grid(merged);

    auto indices_of = [&](const TimeGrid& g) {
        std::vector<std::size_t> idx;
        for (double s : g.nodes()) {
            auto j = fine_grid.find_node(s);
            if (!j) throw Error("semigroup_consistency: node not in merged grid");
            idx.push_back(*j);
        }
        return idx;
    };

    const PathEnsemble fine = simulate(p, t, x, ctrl, fine_grid, M, rng);
    const PathEnsemble ens_a = coarsen(fine, indices_of(route_a));
    const PathEnsemble ens_first = coarsen(fine, indices_of(first));

    SemigroupConsistency out;
    out.full = backward_semigroup(p, ens_a, p.terminal, basis, opts).value;
    if (!split) {
        out.composed = backward_semigroup(p, ens_first, p.terminal, basis, opts).value;
    } else {
        const PathEnsemble ens_second = coarsen(fine, indices_of(*second));
        std::vector<double> terminal(M);
        for (std::size_t m = 0; m < M; ++m) terminal[m] = p.terminal(ens_second.state(m, ens_second.steps()));
        const BsdeSolution tail = solve_bsde(terminal, p.generator, ens_second, basis, opts);
        const auto mid = tail.Y.col(0);
        out.composed = solve_bsde(std::span<const double>(mid.data(), M), p.generator, ens_first, basis, opts).y0;
    }
    out.residual = std::abs(out.full - out.composed);
    return out;
}

ComparisonReport comparison_check(const GeneratorSpec& gen, std::span<const double> terminal_low,
                                  std::span<const double> terminal_high, const PathEnsemble& paths,
                                  const RegressionBasis& basis, const BsdeOptions& opts) {
    if (terminal_low.size() != terminal_high.size()) {
        throw InvalidArgument("comparison_check: terminal arrays differ in size");
    }
    for (std::size_t m = 0; m < terminal_low.size(); ++m) {
        if (terminal_low[m] > terminal_high[m]) {
            throw InvalidArgument("comparison_check: terminals not ordered at path " + std::to_string(m));
        }
    }
    ComparisonReport r;
    r.y0_low = solve_bsde(terminal_low, gen, paths, basis, opts).y0;
    r.y0_high = solve_bsde(terminal_high, gen, paths, basis, opts).y0;
    r.gap = r.y0_high - r.y0_low;
    r.ordered = r.y0_low <= r.y0_high + 1e-12;
    return r;
}

}  // namespace bsdelab
