#pragma once

#include "bsdelab/problem.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace bsdelab {

/// Simulated forward trajectories on a time grid together with the Brownian
/// increments and the controls that produced them.
///
/// Storage is row-major and path-major: X is [M][N+1][n], dB is [M][N][d],
/// controls is [M][N][k].
class PathEnsemble {
public:
    PathEnsemble(TimeGrid grid, std::size_t paths, int n, int d, int k);

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t steps() const { return grid_.steps(); }
    int state_dim() const { return n_; }
    int noise_dim() const { return d_; }
    int control_dim() const { return k_; }

    Vec state(std::size_t m, std::size_t i) const;
    Vec increment(std::size_t m, std::size_t i) const;
    Vec control(std::size_t m, std::size_t i) const;

    double* state_data(std::size_t m, std::size_t i) { return &x_[(m * (steps() + 1) + i) * n_]; }
    const double* state_data(std::size_t m, std::size_t i) const { return &x_[(m * (steps() + 1) + i) * n_]; }
    double* increment_data(std::size_t m, std::size_t i) { return &db_[(m * steps() + i) * d_]; }
    const double* increment_data(std::size_t m, std::size_t i) const { return &db_[(m * steps() + i) * d_]; }
    double* control_data(std::size_t m, std::size_t i) { return &ctrl_[(m * steps() + i) * k_]; }
    const double* control_data(std::size_t m, std::size_t i) const { return &ctrl_[(m * steps() + i) * k_]; }

    const std::vector<double>& states() const { return x_; }
    const std::vector<double>& increments() const { return db_; }
    const std::vector<double>& controls() const { return ctrl_; }

    bool has_increments() const { return !db_.empty(); }
    /// Releases the increment array; later resimulation is rejected.
    void drop_increments();

    /// The control process used to generate the ensemble, if known.
    const std::shared_ptr<const ControlProcess>& control_process() const { return process_; }
    void set_control_process(std::shared_ptr<const ControlProcess> p) { process_ = std::move(p); }

private:
    TimeGrid grid_;
    std::size_t paths_;
    int n_, d_, k_;
    std::vector<double> x_;
    std::vector<double> db_;
    std::vector<double> ctrl_;
    std::shared_ptr<const ControlProcess> process_;
};

struct SimulationOptions {
    /// Pair path 2j+1 with the negated increments of path 2j. Both share the
    /// substream of pair j.
    bool antithetic = false;
};

/// Euler–Maruyama for dX = b(s, X, v) ds + sigma(s, X, v) dB started at x0 on
/// `grid` (which must start at t0). Path m draws from `rng.child(m)` (or
/// `rng.child(m / 2)` for antithetic pairs).
PathEnsemble simulate(const ControlProblem& p, double t0, const Vec& x0, const ControlProcess& ctrl,
                      const TimeGrid& grid, std::size_t M, const RandomSource& rng,
                      const SimulationOptions& opts = {});

/// Increments only, laid out as PathEnsemble::increments(). Reused across
/// initial states and controls for common-random-number comparisons.
std::vector<double> draw_increments(const TimeGrid& grid, std::size_t M, int d, const RandomSource& rng,
                                    const SimulationOptions& opts = {});

/// Forward Euler–Maruyama driven by supplied increments.
PathEnsemble simulate_with_increments(const ControlProblem& p, const Vec& x0, const ControlProcess& ctrl,
                                      const TimeGrid& grid, std::size_t M, std::vector<double> increments);

/// Same noise as `base`, different initial state.
PathEnsemble resimulate_with_offset(const PathEnsemble& base, const ControlProblem& p, const Vec& x0);

/// Sub-ensemble on the selected node indices (strictly increasing). Increments
/// of merged steps are summed; controls are those in force at the start of
/// each coarse step.
PathEnsemble coarsen(const PathEnsemble& fine, std::span<const std::size_t> node_indices);

/// Little-endian binary layout:
///   magic "BSDLPE01" (8 bytes)
///   u64 M, u64 N, u64 n, u64 d, u64 k
///   f64 nodes[N+1]
///   f64 X[M][N+1][n], f64 dB[M][N][d], f64 controls[M][N][k]
void write_ensemble(std::ostream& os, const PathEnsemble& e);
PathEnsemble read_ensemble(std::istream& is);
void write_ensemble(const std::string& path, const PathEnsemble& e);
PathEnsemble read_ensemble(const std::string& path);

}  // namespace bsdelab
