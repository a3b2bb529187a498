#include "bsdelab/control_valuation.hpp"

#include "bsdelab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsdelab {

void DppConfig::check(const ControlProblem& p) const {
    if (mesh.empty()) throw InvalidArgument("DppConfig: control mesh is empty");
    if (epochs == 0) throw InvalidArgument("DppConfig: epochs must be >= 1");
    if (substeps == 0) throw InvalidArgument("DppConfig: substeps must be >= 1");
    if (paths < 2) throw InvalidArgument("DppConfig: need at least two paths");
    if (antithetic && paths % 2 != 0) throw InvalidArgument("DppConfig: antithetic sampling needs an even path count");
    for (std::size_t q = 0; q < mesh.size(); ++q) {
        if (!p.controls.contains(mesh[q])) {
            throw InvalidArgument("DppConfig: mesh point " + std::to_string(q) + " " + describe(mesh[q]) +
                                  " lies outside U");
        }
    }
}

namespace {

struct NodeSolve {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t argmax = 0;
    bool clamped = false;
};

/// max over the mesh of the one-epoch backward semigroup started at x. The
/// terminal is slice `next_slice` of u, or Phi itself on the last epoch.
NodeSolve solve_node(const ControlProblem& p, const Vec& x, const TimeGrid& inner, const DppConfig& cfg,
                     const std::vector<double>& increments, const ValueGrid& u, std::size_t next_slice,
                     bool terminal_is_phi) {
    const std::size_t M = cfg.paths;
    const std::size_t N = inner.steps();
    NodeSolve best;
    best.value = -std::numeric_limits<double>::infinity();
    BsdeOptions bo;
    bo.paired_paths = cfg.antithetic;
    std::vector<double> terminal(M);
    for (std::size_t q = 0; q < cfg.mesh.size(); ++q) {
        const PathEnsemble paths =
            simulate_with_increments(p, x, ControlProcess::constant(cfg.mesh[q]), inner, M, increments);
        bool clamped = false;
        for (std::size_t m = 0; m < M; ++m) {
            const Vec xm = paths.state(m, N);
            if (terminal_is_phi) {
                terminal[m] = p.terminal(xm);
            } else {
                bool c = false;
                terminal[m] = u.interpolate_slice(next_slice, xm, &c);
                clamped = clamped || c;
            }
        }
        const BsdeSolution sol = solve_bsde(terminal, p.generator, paths, cfg.basis, bo);
        if (sol.y0 > best.value) {
            double carried = 0.0;
            if (!terminal_is_phi) {
                std::vector<double> se(M);
                const double s = u.time().node(next_slice);
                for (std::size_t m = 0; m < M; ++m) se[m] = u.interpolate_std_error(s, paths.state(m, N));
                carried = shifted_mean(se);
            }
            best.value = sol.y0;
            best.std_error = std::sqrt(sol.y0_std_error * sol.y0_std_error + carried * carried);
            best.argmax = q;
        }
        best.clamped = best.clamped || clamped;
    }
    return best;
}

}  // namespace

SpaceGrid valuation_space_grid(const ControlProblem& p, double t, const std::vector<Vec>& mesh,
                               const Vec& window_lower, const Vec& window_upper, double h) {
    const SpaceGrid window = SpaceGrid::with_spacing(window_lower, window_upper, h);
    const double span = p.horizon - t;
    if (!(span > 0.0)) throw InvalidArgument("valuation_space_grid: require t < T");
    double bmax = 0.0, smax = 0.0;
    for (double s : {t, t + 0.5 * span, p.horizon}) {
        for (std::size_t node = 0; node < window.size(); ++node) {
            const Vec x = window.point(node);
            for (const Vec& v : mesh) {
                bmax = std::max(bmax, p.drift(s, x, v).norm());
                smax = std::max(smax, p.diffusion(s, x, v).norm());
            }
        }
    }
    const double margin = bmax * span + 4.0 * smax * std::sqrt(span);
    if (margin == 0.0) return window;
    const Vec lo = window_lower.array() - margin;
    const Vec hi = window_upper.array() + margin;
    return SpaceGrid::with_spacing(lo, hi, h);
}

ValueEstimate estimate_value(const ControlProblem& p, double t, const Vec& x, const DppConfig& cfg,
                             const SpaceGrid& space, const RandomSource& rng) {
    p.check_shape();
    cfg.check(p);
    if (space.dim() != p.n) throw InvalidArgument("estimate_value: space grid dimension differs from n");
    if (x.size() != p.n) throw InvalidArgument("estimate_value: x has wrong dimension");
    const double T = p.horizon;
    if (!(t >= 0.0 && t < T)) throw InvalidArgument("estimate_value: require 0 <= t < T");

    const TimeGrid epochs = make_grid(t, T, cfg.epochs);
    ValueEstimate out{ValueGrid(epochs, space, ValueGrid::Provenance::mc)};
    ValueGrid& u = out.grid;
    const std::size_t E = cfg.epochs;
    const std::size_t nodes = space.size();
    u.std_errors().assign((E + 1) * nodes, 0.0);
    for (std::size_t node = 0; node < nodes; ++node) u.at(E, node) = p.terminal(space.point(node));

    SimulationOptions sim;
    sim.antithetic = cfg.antithetic;
    std::vector<unsigned char> clamped(nodes);
    for (std::size_t i = E; i-- > 0;) {
        const TimeGrid inner = make_grid(epochs.node(i), epochs.node(i + 1), cfg.substeps);
        for (std::size_t s = 0; s < inner.steps(); ++s) {
            if (inner.step(s) * p.generator.lipschitz >= 1.0) {
                throw InvalidArgument("estimate_value: dt * K >= 1 on the inner grid");
            }
        }
        const std::vector<double> increments = draw_increments(inner, cfg.paths, p.d, rng.child(i), sim);
        parallel_for(nodes, [&](std::size_t begin, std::size_t end) {
            for (std::size_t node = begin; node < end; ++node) {
                const NodeSolve r = solve_node(p, space.point(node), inner, cfg, increments, u, i + 1, i + 1 == E);
                u.at(i, node) = r.value;
                u.std_errors()[i * nodes + node] = r.std_error;
                clamped[node] = r.clamped;
            }
        });
        for (std::size_t node = 0; node < nodes; ++node) out.clamped_solves += clamped[node];
    }
    bool c = false;
    out.value = u.interpolate(t, x, &c);
    out.std_error = u.interpolate_std_error(t, x);
    out.clamped = c || out.clamped_solves > 0;
    return out;
}

DppResult check_dpp(const ControlProblem& p, double t, const Vec& x, double delta, const DppConfig& cfg,
                    const SpaceGrid& space, const RandomSource& rng) {
    const double T = p.horizon;
    if (!(delta >= 0.0) || t + delta > T + 1e-12 * std::max(1.0, T)) {
        throw InvalidArgument("check_dpp: require 0 <= delta <= T - t");
    }
    const ValueEstimate est = estimate_value(p, t, x, cfg, space, rng.child(0));
    return check_dpp(p, t, x, delta, cfg, est, rng.child(1));
}

DppResult check_dpp(const ControlProblem& p, double t, const Vec& x, double delta, const DppConfig& cfg,
                    const ValueEstimate& est, const RandomSource& rng) {
    const double T = p.horizon;
    const double tol = 1e-12 * std::max(1.0, T);
    if (!(delta >= 0.0) || t + delta > T + tol) throw InvalidArgument("check_dpp: require 0 <= delta <= T - t");
    if (std::abs(est.grid.time().t0() - t) > tol) throw InvalidArgument("check_dpp: value grid does not start at t");
    DppResult r;
    r.value = est.value;
    if (delta == 0.0) {
        r.semigroup = r.value;
        return r;
    }
    const ValueGrid& u = est.grid;
    const double epoch_len = (T - t) / static_cast<double>(cfg.epochs);
    const auto steps = std::max<std::size_t>(
        cfg.substeps, static_cast<std::size_t>(std::llround(delta / epoch_len * static_cast<double>(cfg.substeps))));
    const double end = std::min(T, t + delta);
    const TimeGrid grid = make_grid(t, end, steps);
    const std::function<double(const Vec&)> xi = [&u, end](const Vec& y) { return u.interpolate(end, y); };

    SimulationOptions sim;
    sim.antithetic = cfg.antithetic;
    const std::vector<double> increments = draw_increments(grid, cfg.paths, p.d, rng, sim);
    BsdeOptions bo;
    bo.paired_paths = cfg.antithetic;
    r.semigroup = -std::numeric_limits<double>::infinity();
    double sg_se = 0.0, carried = 0.0;
    for (std::size_t q = 0; q < cfg.mesh.size(); ++q) {
        const PathEnsemble paths =
            simulate_with_increments(p, x, ControlProcess::constant(cfg.mesh[q]), grid, cfg.paths, increments);
        const SemigroupResult g = backward_semigroup(p, paths, xi, cfg.basis, bo);
        if (g.value > r.semigroup) {
            r.semigroup = g.value;
            r.argmax = q;
            sg_se = g.std_error;
            std::vector<double> se(cfg.paths);
            for (std::size_t m = 0; m < cfg.paths; ++m) se[m] = u.interpolate_std_error(end, paths.state(m, steps));
            carried = shifted_mean(se);
        }
    }
    r.residual = std::abs(r.value - r.semigroup);
    r.combined_std_error = std::sqrt(est.std_error * est.std_error + sg_se * sg_se + carried * carried);
    return r;
}

DeterminismReport deterministic_check(const ControlProblem& p, double t, const Vec& x, std::size_t replications,
                                      const DppConfig& cfg, const SpaceGrid& space, const RandomSource& rng) {
    if (replications < 2) throw InvalidArgument("deterministic_check: need at least two replications");
    DeterminismReport rep;
    double se = 0.0;
    for (std::size_t r = 0; r < replications; ++r) {
        const ValueEstimate e = estimate_value(p, t, x, cfg, space, rng.child(r));
        rep.values.push_back(e.value);
        se += e.std_error;
    }
    const auto [lo, hi] = std::minmax_element(rep.values.begin(), rep.values.end());
    rep.spread = *hi - *lo;
    rep.std_error = se / static_cast<double>(replications);
    return rep;
}

}  // namespace bsdelab
