#pragma once

#include "bsdelab/problem.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

struct ClosedForm {
    /// Analytic u(t, x) with exact derivatives.
    SmoothTestFunction u;
    std::string note;
};

/// Defaults used by the harness when a config does not override them.
struct BenchmarkDefaults {
    /// Reported region for (t0, x) comparisons.
    Vec window_lower = Vec::Constant(1, -1.0);
    Vec window_upper = Vec::Constant(1, 1.0);
    /// Spacing of the finite-difference grid.
    double fd_spacing = 0.05;
    /// Spacing of the Monte-Carlo valuation grid.
    double mc_spacing = 0.1;
    std::size_t epochs = 10;
    std::size_t substeps = 10;
    std::size_t paths = 2000;
    int mesh_per_axis = 11;
    double fd_tolerance = 2e-2;
    double mc_tolerance = 5e-2;
    double cross_tolerance = 5e-2;
};

struct BenchmarkCase {
    std::string name;
    std::string description;
    ControlProblem problem;
    std::optional<ClosedForm> closed_form;
    BenchmarkDefaults defaults;
};

/// All registered cases in a fixed order.
const std::vector<BenchmarkCase>& benchmark_registry();

/// Identifiers with one-line descriptions, in registry order.
std::vector<std::pair<std::string, std::string>> list_benchmarks();

/// Throws InvalidArgument for unknown names.
const BenchmarkCase& find_benchmark(const std::string& name);

struct SelfTestResult {
    std::string name;
    double max_residual = 0.0;
    std::size_t points = 0;
    bool pass = true;
};

/// hjb_residual of the closed form at `points` random interior points of
/// [0, T) x window must stay within 1e-8. Cases without a closed form pass
/// trivially with zero points.
SelfTestResult registry_self_test(const BenchmarkCase& c, std::size_t points, const RandomSource& rng);

inline constexpr double kSelfTestTolerance = 1e-8;

}  // namespace bsdelab
