#pragma once

#include "bsdelab/bsde_solver.hpp"
#include "bsdelab/hjb_fd.hpp"

#include <vector>

namespace bsdelab {

/// Discrete dynamic programming over epoch-constant controls drawn from a
/// finite mesh.
struct DppConfig {
    std::vector<Vec> mesh;
    /// Decision epochs on [t, T].
    std::size_t epochs = 10;
    /// Backward Euler steps inside each epoch.
    std::size_t substeps = 10;
    std::size_t paths = 2000;
    RegressionBasis basis = RegressionBasis::polynomial(2);
    bool antithetic = true;

    /// Throws InvalidArgument on an empty mesh, zero epochs/substeps/paths, or
    /// mesh points outside U.
    void check(const ControlProblem& p) const;
};

struct ValueEstimate {
    /// u on the epoch grid times the space grid (provenance mc). Standard
    /// errors accumulate across epochs in quadrature.
    ValueGrid grid;
    /// u(t, x) read off the grid.
    double value = 0.0;
    double std_error = 0.0;
    /// Number of (node, control, epoch) solves whose paths left the space
    /// grid and were clamped during interpolation.
    std::size_t clamped_solves = 0;
    /// Some evaluation point (including x itself) was clamped.
    bool clamped = false;
};

/// Backward over epochs t = t_0 < ... < t_E = T:
///   u(t_i, x_j) = max over the mesh of G^{t_i, x_j; v}_{t_i, t_{i+1}}[u(t_{i+1}, X)]
/// with u(T, .) = Phi and u(t_{i+1}, .) interpolated multilinearly on the space
/// grid. Every node and control of one epoch reuses the same Brownian
/// increments (common random numbers); epochs draw from `rng.child(i)`.
ValueEstimate estimate_value(const ControlProblem& p, double t, const Vec& x, const DppConfig& cfg,
                             const SpaceGrid& space, const RandomSource& rng);

/// Space grid for Monte-Carlo valuation: `window` plus a margin of
/// max|b| (T - t) + 4 max|sigma| sqrt(T - t), with |b|, |sigma| maximized over
/// the window nodes and the mesh.
SpaceGrid valuation_space_grid(const ControlProblem& p, double t, const std::vector<Vec>& mesh,
                               const Vec& window_lower, const Vec& window_upper, double h);

struct DppResult {
    /// u(t, x) from the value grid.
    double value = 0.0;
    /// max over the mesh of G_{t, t+delta}[u(t+delta, X_{t+delta})].
    double semigroup = 0.0;
    std::size_t argmax = 0;
    double residual = 0.0;
    /// Quadrature sum of the standard errors of both sides.
    double combined_std_error = 0.0;
};

/// |u(t, x) - max_v G^{t,x;v}_{t,t+delta}[u(t+delta, .)]|, with u(t+delta, .)
/// interpolated in time when t+delta is not an epoch node. delta = 0 returns
/// a zero residual and skips the semigroup side.
DppResult check_dpp(const ControlProblem& p, double t, const Vec& x, double delta, const DppConfig& cfg,
                    const SpaceGrid& space, const RandomSource& rng);

/// Same, reusing a value grid computed by estimate_value at (t, x). The
/// semigroup side draws from `rng`.
DppResult check_dpp(const ControlProblem& p, double t, const Vec& x, double delta, const DppConfig& cfg,
                    const ValueEstimate& est, const RandomSource& rng);

struct DeterminismReport {
    std::vector<double> values;
    /// max - min over replications.
    double spread = 0.0;
    /// Mean of the per-replication standard errors.
    double std_error = 0.0;
};

/// Repeats estimate_value with independent substreams rng.child(r).
DeterminismReport deterministic_check(const ControlProblem& p, double t, const Vec& x, std::size_t replications,
                                      const DppConfig& cfg, const SpaceGrid& space, const RandomSource& rng);

}  // namespace bsdelab
