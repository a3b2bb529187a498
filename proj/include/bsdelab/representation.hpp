#pragma once

#include "bsdelab/bsde_solver.hpp"

#include <iosfwd>
#include <vector>

namespace bsdelab {

/// Probe BSDE on [t, t+eps] with terminal y + <z, B_{t+eps} - B_t>. The
/// generator sees x = B_r - B_t as its state argument and v = 0.
struct RepresentationProbe {
    double t = 0.0;
    double y = 0.0;
    Vec z = Vec::Zero(1);
    double epsilon = 0.1;
    std::size_t paths = 10000;
    /// Exponent of the empirical L^p error, in [1, 2).
    double p_norm = 1.0;

    void check() const;
};

struct ProbeOptions {
    /// Backward steps on [t, t+eps]; 0 selects max(16, ceil(eps / dt_max))
    /// with dt_max = 0.5 / K.
    std::size_t grid_steps = 0;
    /// Refinement cap when dt * K >= 1.
    std::size_t max_grid_steps = 10000;
    bool antithetic = true;
};

struct ProbeEstimate {
    /// (Y^eps_t - y) / eps.
    double estimate = 0.0;
    /// eps^{-1} E[ int_t^{t+eps} g(r, X_r, y, z) dr ] with (y, z) frozen,
    /// left-node rule on the probe grid.
    double frozen_drift = 0.0;
    std::size_t grid_steps = 0;
};

/// Default number of probe steps for `eps` and Lipschitz constant K, refined
/// until dt * K < 1; throws InvalidArgument past the cap.
std::size_t probe_grid_steps(double epsilon, double lipschitz, const ProbeOptions& opts = {});

/// Solves the probe BSDE for Yhat = Y - y (so no cancellation in Y - y) and
/// returns the difference quotient.
ProbeEstimate probe_generator(const GeneratorSpec& gen, const RepresentationProbe& probe,
                              const RegressionBasis& basis, const RandomSource& rng, const ProbeOptions& opts = {});

/// eps^{-1} |E[(Y^eps_t - y) - int g(r, y, z) dr]| with (y, z) frozen.
double conditional_expectation_residual(const GeneratorSpec& gen, const RepresentationProbe& probe,
                                        const RegressionBasis& basis, const RandomSource& rng,
                                        const ProbeOptions& opts = {});

/// {2^-first, ..., 2^-last}, strictly decreasing.
std::vector<double> geometric_ladder(int first_exponent, int last_exponent);

struct RateFit {
    std::vector<double> epsilons;
    /// Empirical L^p norm of (estimate - g(t, y, z)) over replications.
    std::vector<double> errors;
    std::vector<double> std_errors;
    std::vector<double> mean_estimates;
    std::vector<std::size_t> grid_steps;
    double target = 0.0;
    double slope = 0.0;
    double slope_low = 0.0;
    double slope_high = 0.0;
    /// Every error below 1e-12; slope undefined.
    bool exact = false;
    /// Set when the generator is flagged discontinuous in t, so recovery is
    /// only claimed for almost every t.
    bool almost_every_t_caveat = false;
};

struct LimitOptions {
    std::size_t replications = 32;
    ProbeOptions probe;
};

/// Runs the probe on every rung of the ladder with independent replications
/// and fits log(error) against log(eps) by least squares (95% band from the
/// Student t quantile).
RateFit verify_limit(const GeneratorSpec& gen, double t, double y, const Vec& z, const std::vector<double>& ladder,
                     std::size_t M, const RegressionBasis& basis, const RandomSource& rng, double p_norm = 1.0,
                     const LimitOptions& opts = {});

/// CSV with columns epsilon,error,stderr.
void write_rate_csv(std::ostream& os, const RateFit& fit);

struct OneSidedProbes {
    double left = 0.0;   // probe on [t* - eps, t*]
    double right = 0.0;  // probe on [t*, t* + eps]
    double jump = 0.0;   // right - left
};

/// Probes a generator on both sides of a suspected discontinuity in t.
OneSidedProbes probe_one_sided(const GeneratorSpec& gen, double t_star, double y, const Vec& z, double epsilon,
                               std::size_t M, const RegressionBasis& basis, const RandomSource& rng,
                               const ProbeOptions& opts = {});

}  // namespace bsdelab
