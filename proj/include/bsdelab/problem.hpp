#pragma once

#include "bsdelab/random.hpp"
#include "bsdelab/types.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bsdelab {

/// Strictly increasing time nodes t0 = s_0 < ... < s_N = T.
class TimeGrid {
public:
    /// Arbitrary nodes; must be strictly increasing with at least two entries.
    explicit TimeGrid(std::vector<double> nodes);

    double t0() const { return nodes_.front(); }
    double horizon() const { return nodes_.back(); }
    std::size_t steps() const { return nodes_.size() - 1; }
    double node(std::size_t i) const { return nodes_[i]; }
    double step(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }
    std::span<const double> nodes() const { return nodes_; }
    bool uniform() const { return uniform_; }

    /// Index of the node equal to `t` (within 1e-12 relative), if any.
    std::optional<std::size_t> find_node(double t) const;

private:
    std::vector<double> nodes_;
    bool uniform_ = false;
};

/// Uniform grid on [t0, T] with N steps. The last node is T exactly.
TimeGrid make_grid(double t0, double T, std::size_t N);

/// Driver g(t, x, y, z, v) of a BSDE together with its declared Lipschitz
/// constant in (y, z).
struct GeneratorSpec {
    using Fn = std::function<double(double t, const Vec& x, double y, const Vec& z, const Vec& v)>;

    Fn g;
    double lipschitz = 0.0;
    bool continuous_in_t = true;

    double operator()(double t, const Vec& x, double y, const Vec& z, const Vec& v) const {
        return g(t, x, y, z, v);
    }
};

/// Compact control set: an axis-aligned box, optionally replaced by an
/// explicit finite subset of it.
class ControlSet {
public:
    ControlSet(Vec lower, Vec upper, std::vector<Vec> points = {});

    static ControlSet singleton(const Vec& v) { return ControlSet(v, v, {v}); }

    int dim() const { return static_cast<int>(lower_.size()); }
    const Vec& lower() const { return lower_; }
    const Vec& upper() const { return upper_; }
    const std::vector<Vec>& points() const { return points_; }

    bool contains(const Vec& v, double tol = 1e-12) const;

    /// Finite mesh: the explicit points when present, otherwise a tensor mesh
    /// with `per_axis` points per non-degenerate axis (lexicographic order).
    std::vector<Vec> mesh(int per_axis = 11) const;

    /// Uniform draw from the box, or a uniformly chosen explicit point.
    Vec sample(NormalStream& rng) const;

private:
    Vec lower_;
    Vec upper_;
    std::vector<Vec> points_;
};

/// Controlled FBSDE coefficients: forward dX = b dt + sigma dB, backward
/// driver g, terminal Phi, horizon T, controls in U.
struct ControlProblem {
    int n = 1;
    int d = 1;
    int k = 1;
    std::function<Vec(double t, const Vec& x, const Vec& v)> drift;
    std::function<Mat(double t, const Vec& x, const Vec& v)> diffusion;
    GeneratorSpec generator;
    std::function<double(const Vec& x)> terminal;
    /// Declared Lipschitz constant of (b, sigma) in (x, v), and of g in (x, v).
    double coefficient_lipschitz = 0.0;
    /// Declared Lipschitz constant of Phi. Quadratic payoffs declare the
    /// constant valid on the sampling box of `validate_problem`.
    double terminal_lipschitz = 0.0;
    ControlSet controls = ControlSet::singleton(Vec::Zero(1));
    double horizon = 1.0;

    /// Throws InvalidArgument when dimensions or callables are inconsistent.
    void check_shape() const;
};

/// Admissible control: constant, piecewise constant on a grid, or feedback.
class ControlProcess {
public:
    enum class Kind { constant, piecewise_constant, feedback };

    static ControlProcess constant(Vec v);
    /// `values[j]` applies on [nodes[j], nodes[j+1]).
    static ControlProcess piecewise_constant(TimeGrid grid, std::vector<Vec> values);
    static ControlProcess feedback(std::function<Vec(double t, const Vec& x)> map);

    Kind kind() const { return kind_; }
    Vec value(double t, const Vec& x) const;

    /// Throws InvalidArgument when a stored value lies outside U. Feedback
    /// maps are checked at evaluation time by the simulator.
    void check_admissible(const ControlSet& U) const;

private:
    Kind kind_ = Kind::constant;
    std::vector<Vec> values_;
    std::optional<TimeGrid> grid_;
    std::function<Vec(double, const Vec&)> map_;
};

/// Test function phi(t, x) with first time and second space derivatives.
/// Missing analytic derivatives fall back to central differences.
class SmoothTestFunction {
public:
    using ValueFn = std::function<double(double, const Vec&)>;
    using GradFn = std::function<Vec(double, const Vec&)>;
    using HessFn = std::function<Mat(double, const Vec&)>;

    enum class Mode { analytic, finite_difference };

    static SmoothTestFunction analytic(ValueFn value, ValueFn time_derivative, GradFn gradient,
                                       HessFn hessian);
    static SmoothTestFunction finite_difference(ValueFn value, double step = 1e-5);

    Mode mode() const { return mode_; }
    double step() const { return step_; }

    double value(double t, const Vec& x) const { return value_(t, x); }
    double time_derivative(double t, const Vec& x) const;
    Vec gradient(double t, const Vec& x) const;
    Mat hessian(double t, const Vec& x) const;

    /// phi + other, derivatives combined in the weaker of the two modes.
    SmoothTestFunction plus(const SmoothTestFunction& other) const;

private:
    Mode mode_ = Mode::finite_difference;
    double step_ = 1e-5;
    ValueFn value_;
    ValueFn dt_;
    GradFn grad_;
    HessFn hess_;
};

struct LipschitzViolation {
    std::string coefficient;  // "drift+diffusion", "generator", "generator(x,v)", "terminal"
    double lhs = 0.0;         // observed increment
    double rhs = 0.0;         // declared bound K * distance
    std::string detail;
};

struct ValidationReport {
    std::vector<LipschitzViolation> violations;
    bool consistent() const { return violations.empty(); }
};

struct ValidationOptions {
    /// Half-width of the sampling box for states.
    double state_radius = 5.0;
    double value_radius = 5.0;
    double relative_slack = 1e-9;
};

/// Spot-checks the declared Lipschitz constants of b, sigma, g and Phi on
/// `samples` random pairs. Non-finite evaluations are reported as violations
/// carrying the offending input.
ValidationReport validate_problem(const ControlProblem& p, std::size_t samples, const RandomSource& rng,
                                  const ValidationOptions& opts = {});

std::string describe(const Vec& v);

}  // namespace bsdelab
