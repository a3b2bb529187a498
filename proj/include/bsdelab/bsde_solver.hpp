#pragma once

#include "bsdelab/forward_sim.hpp"
#include "bsdelab/regression.hpp"

#include <functional>
#include <span>
#include <vector>

namespace bsdelab {

struct BsdeOptions {
    double picard_tolerance = 1e-10;
    int picard_max_iterations = 50;
    /// Paths come in antithetic pairs (2j, 2j+1); standard errors are then
    /// computed from pair averages.
    bool paired_paths = false;
};

/// Discrete (Y, Z) on a path ensemble.
struct BsdeSolution {
    /// Y(m, i), paths x nodes. Column N holds the terminal data verbatim.
    Eigen::MatrixXd Y;
    /// Z as [M][N][d].
    std::vector<double> Z;
    int noise_dim = 1;
    /// Value at the initial node (mean over paths of Y(., 0)).
    double y0 = 0.0;
    /// Sampling standard error of y0, taken over the pathwise sums
    /// xi + sum_i dt g(t_i, X_i, Y_i, Z_i).
    double y0_std_error = 0.0;
    /// Picard iterations per step (max over paths).
    std::vector<int> picard_iterations;
    /// Steps whose regression needed the ridge fallback.
    std::vector<bool> ridge_steps;

    Vec z(std::size_t m, std::size_t i) const {
        return Eigen::Map<const Eigen::VectorXd>(&Z[(m * (Y.cols() - 1) + i) * noise_dim], noise_dim);
    }
};

/// Backward Euler with regression-based conditional expectations:
///
///   Z_i = E[(Y_{i+1} - E[Y_{i+1} | X_i]) dB_i | X_i] / dt_i
///   Y_i = E[Y_{i+1} | X_i] + dt_i * g(s_i, X_i, Y_i, Z_i, v_i)
///
/// The inner conditional mean in the Z target is the fitted value of the Y
/// regression, so the local-constant basis yields per-cell sample covariances.
/// The implicit Y-equation is solved by Picard iteration. Controls are read
/// from the ensemble's control trace. Rejects grids with dt * K >= 1.
BsdeSolution solve_bsde(std::span<const double> terminal, const GeneratorSpec& gen, const PathEnsemble& paths,
                        const RegressionBasis& basis, const BsdeOptions& opts = {});

struct SemigroupResult {
    double value = 0.0;
    double std_error = 0.0;
};

/// G^{t,x;v}_{t,t+delta}[xi]: simulates the controlled state on `grid`
/// (which must span [t, t+delta]), evaluates xi at the endpoint and returns the
/// initial value of the BSDE with driver p.generator.
SemigroupResult backward_semigroup(const ControlProblem& p, double t, const Vec& x, const ControlProcess& ctrl,
                                   double delta, const std::function<double(const Vec&)>& xi,
                                   const TimeGrid& grid, std::size_t M, const RegressionBasis& basis,
                                   const RandomSource& rng, const SimulationOptions& sim = {},
                                   const BsdeOptions& opts = {});

/// Same, on an already simulated ensemble.
SemigroupResult backward_semigroup(const ControlProblem& p, const PathEnsemble& paths,
                                   const std::function<double(const Vec&)>& xi, const RegressionBasis& basis,
                                   const BsdeOptions& opts = {});

struct SemigroupConsistency {
    /// G_{t,T}[Phi(X_T)] on N steps.
    double full = 0.0;
    /// G_{t,t+delta}[Y_{t+delta}] with Y_{t+delta} from a solve on [t+delta, T];
    /// each segment uses N steps.
    double composed = 0.0;
    double residual = 0.0;
};

/// Both routes share one Brownian path simulated on the union of their grids.
SemigroupConsistency semigroup_consistency(const ControlProblem& p, double t, const Vec& x,
                                           const ControlProcess& ctrl, double delta, std::size_t N, std::size_t M,
                                           const RegressionBasis& basis, const RandomSource& rng,
                                           const BsdeOptions& opts = {});

struct ComparisonReport {
    bool ordered = true;
    double y0_low = 0.0;
    double y0_high = 0.0;
    double gap = 0.0;  // y0_high - y0_low
};

/// Solves the BSDE for both terminals on the same paths and checks
/// Y0(low) <= Y0(high) + 1e-12.
ComparisonReport comparison_check(const GeneratorSpec& gen, std::span<const double> terminal_low,
                                  std::span<const double> terminal_high, const PathEnsemble& paths,
                                  const RegressionBasis& basis, const BsdeOptions& opts = {});

}  // namespace bsdelab
