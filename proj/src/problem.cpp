#include "bsdelab/problem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bsdelab {

// ---------------------------------------------------------------- TimeGrid

TimeGrid::TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 2) throw InvalidArgument("TimeGrid: need at least two nodes");
    for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
        if (!(nodes_[i + 1] > nodes_[i]) || !std::isfinite(nodes_[i + 1])) {
            throw InvalidArgument("TimeGrid: nodes must be finite and strictly increasing");
        }
    }
    const double dt = (nodes_.back() - nodes_.front()) / static_cast<double>(steps());
    uniform_ = true;
    for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
        if (std::abs(nodes_[i + 1] - nodes_[i] - dt) > 1e-12 * std::max(1.0, std::abs(dt))) uniform_ = false;
    }
}

std::optional<std::size_t> TimeGrid::find_node(double t) const {
    const double scale = std::max(1.0, std::abs(horizon()));
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), t - 1e-12 * scale);
    if (it != nodes_.end() && std::abs(*it - t) <= 1e-12 * scale) {
        return static_cast<std::size_t>(it - nodes_.begin());
    }
    return std::nullopt;
}

TimeGrid make_grid(double t0, double T, std::size_t N) {
    if (!(std::isfinite(t0) && std::isfinite(T))) throw InvalidArgument("make_grid: non-finite bounds");
    if (t0 < 0.0) throw InvalidArgument("make_grid: t0 must be nonnegative");
    if (!(t0 < T)) throw InvalidArgument("make_grid: require t0 < T");
    if (N == 0) throw InvalidArgument("make_grid: N must be positive");
    std::vector<double> nodes(N + 1);
    const double dt = (T - t0) / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) nodes[i] = t0 + static_cast<double>(i) * dt;
    nodes[N] = T;
    return TimeGrid(std::move(nodes));
}

// -------------------------------------------------------------- ControlSet

ControlSet::ControlSet(Vec lower, Vec upper, std::vector<Vec> points)
    : lower_(std::move(lower)), upper_(std::move(upper)), points_(std::move(points)) {
    if (lower_.size() == 0 || lower_.size() != upper_.size()) {
        throw InvalidArgument("ControlSet: bounds must be nonempty and of equal dimension");
    }
    for (int i = 0; i < lower_.size(); ++i) {
        if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]) || lower_[i] > upper_[i]) {
            throw InvalidArgument("ControlSet: box must be bounded with lower <= upper");
        }
    }
    for (const auto& p : points_) {
        if (p.size() != lower_.size() || !contains(p)) {
            throw InvalidArgument("ControlSet: explicit point " + describe(p) + " outside the box");
        }
    }
}

bool ControlSet::contains(const Vec& v, double tol) const {
    if (v.size() != lower_.size()) return false;
    for (int i = 0; i < v.size(); ++i) {
        if (!(v[i] >= lower_[i] - tol && v[i] <= upper_[i] + tol)) return false;
    }
    if (points_.empty()) return true;
    return std::any_of(points_.begin(), points_.end(),
                       [&](const Vec& p) { return (p - v).lpNorm<Eigen::Infinity>() <= tol; });
}

std::vector<Vec> ControlSet::mesh(int per_axis) const {
    if (!points_.empty()) return points_;
    if (per_axis < 2) throw InvalidArgument("ControlSet::mesh: need at least two points per axis");
    const int k = dim();
    std::vector<std::vector<double>> axes(k);
    for (int i = 0; i < k; ++i) {
        if (lower_[i] == upper_[i]) {
            axes[i] = {lower_[i]};
            continue;
        }
        axes[i].resize(per_axis);
        const double h = (upper_[i] - lower_[i]) / (per_axis - 1);
        for (int j = 0; j + 1 < per_axis; ++j) axes[i][j] = lower_[i] + j * h;
        axes[i][per_axis - 1] = upper_[i];
    }
    std::vector<Vec> out;
    std::vector<std::size_t> idx(k, 0);
    while (true) {
        Vec v(k);
        for (int i = 0; i < k; ++i) v[i] = axes[i][idx[i]];
        out.push_back(v);
        int axis = k - 1;
        while (axis >= 0 && ++idx[axis] == axes[axis].size()) idx[axis--] = 0;
        if (axis < 0) break;
    }
    return out;
}

Vec ControlSet::sample(NormalStream& rng) const {
    if (!points_.empty()) {
        const auto j = static_cast<std::size_t>(rng.next_uniform() * static_cast<double>(points_.size()));
        return points_[std::min(j, points_.size() - 1)];
    }
    Vec v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = lower_[i] + rng.next_uniform() * (upper_[i] - lower_[i]);
    return v;
}

// ---------------------------------------------------------- ControlProblem

void ControlProblem::check_shape() const {
    auto in_range = [](int m) { return m >= 1 && m <= kMaxDim; };
    if (!in_range(n) || !in_range(d) || !in_range(k)) {
        throw InvalidArgument("ControlProblem: dimensions must lie in [1, " + std::to_string(kMaxDim) + "]");
    }
    if (!drift || !diffusion || !generator.g || !terminal) {
        throw InvalidArgument("ControlProblem: drift, diffusion, generator and terminal are required");
    }
    if (controls.dim() != k) throw InvalidArgument("ControlProblem: control set dimension differs from k");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("ControlProblem: horizon must be > 0");
    if (generator.lipschitz < 0.0 || coefficient_lipschitz < 0.0 || terminal_lipschitz < 0.0) {
        throw InvalidArgument("ControlProblem: Lipschitz constants must be nonnegative");
    }
}

// ---------------------------------------------------------- ControlProcess

ControlProcess ControlProcess::constant(Vec v) {
    ControlProcess c;
    c.kind_ = Kind::constant;
    c.values_ = {std::move(v)};
    return c;
}

ControlProcess ControlProcess::piecewise_constant(TimeGrid grid, std::vector<Vec> values) {
    if (values.size() != grid.steps()) {
        throw InvalidArgument("ControlProcess: need one value per grid interval");
    }
    ControlProcess c;
    c.kind_ = Kind::piecewise_constant;
    c.values_ = std::move(values);
    c.grid_ = std::move(grid);
    return c;
}

ControlProcess ControlProcess::feedback(std::function<Vec(double, const Vec&)> map) {
    if (!map) throw InvalidArgument("ControlProcess: empty feedback map");
    ControlProcess c;
    c.kind_ = Kind::feedback;
    c.map_ = std::move(map);
    return c;
}

Vec ControlProcess::value(double t, const Vec& x) const {
    switch (kind_) {
        case Kind::constant:
            return values_.front();
        case Kind::piecewise_constant: {
            const auto nodes = grid_->nodes();
            auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
            std::size_t j = it == nodes.begin() ? 0 : static_cast<std::size_t>(it - nodes.begin()) - 1;
            return values_[std::min(j, values_.size() - 1)];
        }
        case Kind::feedback:
            return map_(t, x);
    }
    return values_.front();
}

void ControlProcess::check_admissible(const ControlSet& U) const {
    for (const auto& v : values_) {
        if (!U.contains(v)) throw InvalidArgument("ControlProcess: value " + describe(v) + " outside U");
    }
}

// ------------------------------------------------------ SmoothTestFunction

SmoothTestFunction SmoothTestFunction::analytic(ValueFn value, ValueFn time_derivative, GradFn gradient,
                                                HessFn hessian) {
    if (!value || !time_derivative || !gradient || !hessian) {
        throw InvalidArgument("SmoothTestFunction: analytic mode needs all derivatives");
    }
    SmoothTestFunction f;
    f.mode_ = Mode::analytic;
    f.value_ = std::move(value);
    f.dt_ = std::move(time_derivative);
    f.grad_ = std::move(gradient);
    f.hess_ = std::move(hessian);
    return f;
}

SmoothTestFunction SmoothTestFunction::finite_difference(ValueFn value, double step) {
    if (!value) throw InvalidArgument("SmoothTestFunction: empty value function");
    if (!(step > 0.0)) throw InvalidArgument("SmoothTestFunction: step must be positive");
    SmoothTestFunction f;
    f.mode_ = Mode::finite_difference;
    f.step_ = step;
    f.value_ = std::move(value);
    return f;
}

double SmoothTestFunction::time_derivative(double t, const Vec& x) const {
    if (mode_ == Mode::analytic) return dt_(t, x);
    return (value_(t + step_, x) - value_(t - step_, x)) / (2.0 * step_);
}

Vec SmoothTestFunction::gradient(double t, const Vec& x) const {
    if (mode_ == Mode::analytic) return grad_(t, x);
    Vec g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += step_;
        xm[i] -= step_;
        g[i] = (value_(t, xp) - value_(t, xm)) / (2.0 * step_);
    }
    return g;
}

Mat SmoothTestFunction::hessian(double t, const Vec& x) const {
    if (mode_ == Mode::analytic) return hess_(t, x);
    const int n = static_cast<int>(x.size());
    const double h = step_;
    const double f0 = value_(t, x);
    Mat H(n, n);
    for (int i = 0; i < n; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        H(i, i) = (value_(t, xp) - 2.0 * f0 + value_(t, xm)) / (h * h);
        for (int j = i + 1; j < n; ++j) {
            Vec pp = x, pm = x, mp = x, mm = x;
            pp[i] += h, pp[j] += h;
            pm[i] += h, pm[j] -= h;
            mp[i] -= h, mp[j] += h;
            mm[i] -= h, mm[j] -= h;
            H(i, j) = (value_(t, pp) - value_(t, pm) - value_(t, mp) + value_(t, mm)) / (4.0 * h * h);
            H(j, i) = H(i, j);
        }
    }
    return H;
}

SmoothTestFunction SmoothTestFunction::plus(const SmoothTestFunction& other) const {
    auto a = *this;
    auto b = other;
    ValueFn value = [a, b](double t, const Vec& x) { return a.value(t, x) + b.value(t, x); };
    if (a.mode_ == Mode::analytic && b.mode_ == Mode::analytic) {
        return analytic(
            value, [a, b](double t, const Vec& x) { return a.time_derivative(t, x) + b.time_derivative(t, x); },
            [a, b](double t, const Vec& x) -> Vec { return a.gradient(t, x) + b.gradient(t, x); },
            [a, b](double t, const Vec& x) -> Mat { return a.hessian(t, x) + b.hessian(t, x); });
    }
    const double step = a.mode_ == Mode::finite_difference && b.mode_ == Mode::finite_difference
                            ? std::min(a.step_, b.step_)
                            : (a.mode_ == Mode::finite_difference ? a.step_ : b.step_);
    return finite_difference(std::move(value), step);
}

// -------------------------------------------------------------- validation

std::string describe(const Vec& v) {
    std::ostringstream os;
    os.precision(17);
    os << '[';
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << ']';
    return os.str();
}

namespace {

Vec uniform_box(NormalStream& rng, int dim, double radius) {
    Vec x(dim);
    for (int i = 0; i < dim; ++i) x[i] = radius * (2.0 * rng.next_uniform() - 1.0);
    return x;
}

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

ValidationReport validate_problem(const ControlProblem& p, std::size_t samples, const RandomSource& rng,
                                  const ValidationOptions& opts) {
    if (samples == 0) throw InvalidArgument("validate_problem: samples must be >= 1");
    p.check_shape();
    ValidationReport report;
    NormalStream gen(rng);
    const double slack = opts.relative_slack;
    auto exceeds = [slack](double lhs, double rhs) { return lhs > rhs * (1.0 + slack) + 1e-12; };
    auto add = [&](std::string which, double lhs, double rhs, std::string detail) {
        report.violations.push_back({std::move(which), lhs, rhs, std::move(detail)});
    };

    for (std::size_t s = 0; s < samples; ++s) {
        const double t = gen.next_uniform() * p.horizon;
        const Vec x1 = uniform_box(gen, p.n, opts.state_radius);
        const Vec x2 = uniform_box(gen, p.n, opts.state_radius);
        const Vec v1 = p.controls.sample(gen);
        const Vec v2 = p.controls.sample(gen);
        const std::string where = "t=" + std::to_string(t) + " x=" + describe(x1) + " x'=" + describe(x2) +
                                  " v=" + describe(v1) + " v'=" + describe(v2);

        // (b, sigma) jointly in (x, v)
        const Vec b1 = p.drift(t, x1, v1), b2 = p.drift(t, x2, v2);
        const Mat s1 = p.diffusion(t, x1, v1), s2 = p.diffusion(t, x2, v2);
        if (!all_finite(b1) || !all_finite(b2) || !s1.allFinite() || !s2.allFinite()) {
            add("drift+diffusion", NAN, NAN, "non-finite evaluation at " + where);
        } else {
            const double lhs = (b1 - b2).norm() + (s1 - s2).norm();
            const double rhs = p.coefficient_lipschitz * ((x1 - x2).norm() + (v1 - v2).norm());
            if (exceeds(lhs, rhs)) add("drift+diffusion", lhs, rhs, where);
        }

        // g in (y, z) at fixed (t, x, v)
        const double y1 = opts.value_radius * (2.0 * gen.next_uniform() - 1.0);
        const double y2 = opts.value_radius * (2.0 * gen.next_uniform() - 1.0);
        const Vec z1 = uniform_box(gen, p.d, opts.value_radius);
        const Vec z2 = uniform_box(gen, p.d, opts.value_radius);
        const double g1 = p.generator(t, x1, y1, z1, v1);
        const double g2 = p.generator(t, x1, y2, z2, v1);
        const std::string gwhere = "t=" + std::to_string(t) + " x=" + describe(x1) + " y=" + std::to_string(y1) +
                                   " y'=" + std::to_string(y2) + " z=" + describe(z1) + " z'=" + describe(z2);
        if (!std::isfinite(g1) || !std::isfinite(g2)) {
            add("generator", NAN, NAN, "non-finite evaluation at " + gwhere);
        } else {
            const double lhs = std::abs(g1 - g2);
            const double rhs = p.generator.lipschitz * (std::abs(y1 - y2) + (z1 - z2).norm());
            if (exceeds(lhs, rhs)) add("generator", lhs, rhs, gwhere);
        }

        // g in (x, v) at fixed (t, y, z)
        const double g3 = p.generator(t, x2, y1, z1, v2);
        if (!std::isfinite(g3)) {
            add("generator(x,v)", NAN, NAN, "non-finite evaluation at " + where);
        } else {
            const double lhs = std::abs(g1 - g3);
            const double rhs = p.coefficient_lipschitz * ((x1 - x2).norm() + (v1 - v2).norm());
            if (exceeds(lhs, rhs)) add("generator(x,v)", lhs, rhs, where);
        }

        const double f1 = p.terminal(x1), f2 = p.terminal(x2);
        if (!std::isfinite(f1) || !std::isfinite(f2)) {
            add("terminal", NAN, NAN, "non-finite evaluation at x=" + describe(x1) + " x'=" + describe(x2));
        } else {
            const double lhs = std::abs(f1 - f2);
            const double rhs = p.terminal_lipschitz * (x1 - x2).norm();
            if (exceeds(lhs, rhs)) add("terminal", lhs, rhs, "x=" + describe(x1) + " x'=" + describe(x2));
        }
    }
    return report;
}

}  // namespace bsdelab
