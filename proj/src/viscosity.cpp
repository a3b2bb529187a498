#include "bsdelab/viscosity.hpp"

#include "bsdelab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsdelab {

double PerturbedGenerator::F(double r, const Vec& x, double y, const Vec& z, const Vec& v) const {
    const double value = phi.value(r, x);
    const double dt = phi.time_derivative(r, x);
    const Vec grad = phi.gradient(r, x);
    const Mat hess = phi.hessian(r, x);
    if (!std::isfinite(value) || !std::isfinite(dt) || !grad.allFinite() || !hess.allFinite()) {
        throw NumericalError("PerturbedGenerator: test function derivatives are not finite at x=" + describe(x));
    }
    const Mat s = problem.diffusion(r, x, v);
    const double L = 0.5 * (s * s.transpose()).cwiseProduct(hess).sum() + problem.drift(r, x, v).dot(grad);
    const Vec zz = z + s.transpose() * grad;
    return dt + L + problem.generator(r, x, y + value, zz, v);
}

PerturbedGenerator build_F(const ControlProblem& p, const SmoothTestFunction& phi) {
    p.check_shape();
    return PerturbedGenerator{p, phi};
}

std::string to_string(ExtremumKind k) { return k == ExtremumKind::local_max ? "local_max" : "local_min"; }

namespace {

bool dominates(ExtremumKind kind, double center, double other) {
    return kind == ExtremumKind::local_max ? center >= other - kCertificateTolerance
                                           : center <= other + kCertificateTolerance;
}

/// Calls f(offsets) for every offset vector in [-r, r]^dims except zero.
template <class Fn>
bool for_each_offset(int dims, int r, Fn&& f) {
    std::vector<int> off(static_cast<std::size_t>(dims), -r);
    while (true) {
        if (std::any_of(off.begin(), off.end(), [](int o) { return o != 0; })) {
            if (!f(off)) return false;
        }
        int a = 0;
        while (a < dims && off[a] == r) off[a++] = -r;
        if (a == dims) return true;
        ++off[a];
    }
}

double tolerance_for(const ViscosityOptions& opts, bool grid) {
    if (opts.tolerance >= 0.0) return opts.tolerance;
    return grid ? kGridViscosityTolerance : kAnalyticViscosityTolerance;
}

ViscosityRecord make_record(const HjbOperator& op, const SmoothTestFunction& phi, std::size_t phi_index,
                            const ExtremumCertificate& c, double u_value, double tol) {
    const ViscosityExpression e = viscosity_expression(op, phi, c.t, c.x, u_value);
    ViscosityRecord r;
    r.phi_index = phi_index;
    r.t = c.t;
    r.x = c.x;
    r.kind = c.kind;
    r.expression = e.value;
    r.argmax_control = op.mesh[e.argmax];
    r.margin = c.kind == ExtremumKind::local_max ? -e.value : e.value;
    r.pass = r.margin >= -tol;
    return r;
}

std::pair<std::size_t, std::size_t> snap(const ValueGrid& u, const SamplePoint& p) {
    const TimeGrid& g = u.time();
    std::size_t slice = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= g.steps(); ++i) {
        const double d = std::abs(g.node(i) - p.t);
        if (d < best) best = d, slice = i;
    }
    const SpaceGrid& s = u.space();
    if (p.x.size() != s.dim()) throw InvalidArgument("viscosity check: sample point has wrong dimension");
    std::vector<std::size_t> idx(static_cast<std::size_t>(s.dim()));
    for (int a = 0; a < s.dim(); ++a) {
        const double j = std::round((p.x[a] - s.lower(a)) / s.spacing(a));
        idx[a] = static_cast<std::size_t>(std::clamp(j, 0.0, static_cast<double>(s.count(a) - 1)));
    }
    return {slice, s.flat_index(idx)};
}

ViscosityReport check_grid(const ValueGrid& u, const HjbOperator& op, const std::vector<SmoothTestFunction>& phis,
                           const std::vector<SamplePoint>& points, const ViscosityOptions& opts, ExtremumKind kind) {
    ViscosityReport rep;
    rep.tolerance = tolerance_for(opts, true);
    rep.radius = opts.radius;
    for (std::size_t k = 0; k < phis.size(); ++k) {
        std::vector<ExtremumCertificate> certs;
        if (points.empty()) {
            certs = find_extrema(u, phis[k], kind, opts.radius);
        } else {
            for (std::size_t j = 0; j < points.size(); ++j) {
                const auto [slice, node] = snap(u, points[j]);
                auto c = certify_node(u, phis[k], kind, slice, node, opts.radius);
                if (c) {
                    certs.push_back(std::move(*c));
                } else {
                    rep.warnings.push_back("test function " + std::to_string(k) + ", point " + std::to_string(j) +
                                           ": no " + to_string(kind) + " certificate; skipped");
                }
            }
        }
        std::vector<ViscosityRecord> recs(certs.size());
        parallel_for(certs.size(), [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                recs[j] = make_record(op, phis[k], k, certs[j], u.at(certs[j].slice, certs[j].node), rep.tolerance);
            }
        });
        rep.records.insert(rep.records.end(), recs.begin(), recs.end());
    }
    return rep;
}

ViscosityReport check_analytic(const CandidateFn& u, const HjbOperator& op,
                               const std::vector<SmoothTestFunction>& phis, const std::vector<SamplePoint>& points,
                               const ViscosityOptions& opts, ExtremumKind kind) {
    ViscosityReport rep;
    rep.tolerance = tolerance_for(opts, false);
    rep.radius = opts.radius;
    for (std::size_t k = 0; k < phis.size(); ++k) {
        std::vector<std::optional<ViscosityRecord>> recs(points.size());
        parallel_for(points.size(), [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                const auto c = certify_point(u, phis[k], kind, points[j].t, points[j].x, op.problem.horizon,
                                             opts.radius, opts.lattice_step);
                if (c) recs[j] = make_record(op, phis[k], k, *c, u(c->t, c->x), rep.tolerance);
            }
        });
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (recs[j]) {
                rep.records.push_back(std::move(*recs[j]));
            } else {
                rep.warnings.push_back("test function " + std::to_string(k) + ", point " + std::to_string(j) +
                                       ": no " + to_string(kind) + " certificate; skipped");
            }
        }
    }
    return rep;
}

}  // namespace

std::optional<ExtremumCertificate> certify_node(const ValueGrid& u, const SmoothTestFunction& phi, ExtremumKind kind,
                                                std::size_t slice, std::size_t node, int radius) {
    if (radius < 1) throw InvalidArgument("certify_node: radius must be >= 1");
    const SpaceGrid& s = u.space();
    const TimeGrid& g = u.time();
    const int n = s.dim();
    if (slice >= g.steps() || node >= s.size()) return std::nullopt;
    const auto idx = s.multi_index(node);
    for (int a = 0; a < n; ++a) {
        if (idx[a] < static_cast<std::size_t>(radius) || idx[a] + radius >= s.count(a)) return std::nullopt;
    }
    auto diff = [&](std::size_t i, std::size_t k) { return phi.value(g.node(i), s.point(k)) - u.at(i, k); };
    ExtremumCertificate c;
    c.t = g.node(slice);
    c.x = s.point(node);
    c.kind = kind;
    c.radius = radius;
    c.slice = slice;
    c.node = node;
    c.center = diff(slice, node);
    const bool ok = for_each_offset(n + 1, radius, [&](const std::vector<int>& off) {
        const long i = static_cast<long>(slice) + off[0];
        if (i < 0 || i > static_cast<long>(g.steps())) return true;
        long k = static_cast<long>(node);
        for (int a = 0; a < n; ++a) k += off[a + 1] * static_cast<long>(s.stride(a));
        const double v = diff(static_cast<std::size_t>(i), static_cast<std::size_t>(k));
        c.evidence.push_back(v);
        return dominates(kind, c.center, v);
    });
    if (!ok) return std::nullopt;
    return c;
}

std::vector<ExtremumCertificate> find_extrema(const ValueGrid& u, const SmoothTestFunction& phi, ExtremumKind kind,
                                              int radius) {
    for (double v : u.values()) {
        if (!std::isfinite(v)) throw NumericalError("find_extrema: candidate has non-finite values");
    }
    const std::size_t nodes = u.space().size();
    const std::size_t total = u.time().steps() * nodes;
    std::vector<std::optional<ExtremumCertificate>> found(total);
    parallel_for(total, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) found[j] = certify_node(u, phi, kind, j / nodes, j % nodes, radius);
    });
    std::vector<ExtremumCertificate> out;
    for (auto& c : found) {
        if (c) out.push_back(std::move(*c));
    }
    return out;
}

std::optional<ExtremumCertificate> certify_point(const CandidateFn& u, const SmoothTestFunction& phi,
                                                 ExtremumKind kind, double t, const Vec& x, double horizon,
                                                 int radius, double step) {
    if (radius < 1) throw InvalidArgument("certify_point: radius must be >= 1");
    if (!(step > 0.0)) throw InvalidArgument("certify_point: lattice step must be positive");
    const int n = static_cast<int>(x.size());
    ExtremumCertificate c;
    c.t = t;
    c.x = x;
    c.kind = kind;
    c.radius = radius;
    c.center = phi.value(t, x) - u(t, x);
    const bool ok = for_each_offset(n + 1, radius, [&](const std::vector<int>& off) {
        const double s = t + off[0] * step;
        if (s < 0.0 || s > horizon) return true;
        Vec y = x;
        for (int a = 0; a < n; ++a) y[a] += off[a + 1] * step;
        const double v = phi.value(s, y) - u(s, y);
        c.evidence.push_back(v);
        return dominates(kind, c.center, v);
    });
    if (!ok) return std::nullopt;
    return c;
}

ViscosityExpression viscosity_expression(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x,
                                         double u_value) {
    const double dt = phi.time_derivative(t, x);
    const Vec grad = phi.gradient(t, x);
    const Mat hess = phi.hessian(t, x);
    if (!std::isfinite(dt) || !grad.allFinite() || !hess.allFinite()) {
        throw NumericalError("viscosity_expression: non-finite test function derivatives at x=" + describe(x));
    }
    ViscosityExpression e;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < op.mesh.size(); ++q) {
        const Vec& v = op.mesh[q];
        const Mat s = op.problem.diffusion(t, x, v);
        const double h = 0.5 * (s * s.transpose()).cwiseProduct(hess).sum() + op.problem.drift(t, x, v).dot(grad) +
                         op.problem.generator(t, x, u_value, s.transpose() * grad, v);
        if (h > best) {
            best = h;
            e.argmax = q;
        }
    }
    e.value = dt + best;
    return e;
}

bool ViscosityReport::all_pass() const {
    return std::all_of(records.begin(), records.end(), [](const ViscosityRecord& r) { return r.pass; });
}

std::size_t ViscosityReport::failures() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const ViscosityRecord& r) { return !r.pass; }));
}

ViscosityReport check_supersolution(const ValueGrid& u, const HjbOperator& op,
                                    const std::vector<SmoothTestFunction>& phis,
                                    const std::vector<SamplePoint>& points, const ViscosityOptions& opts) {
    return check_grid(u, op, phis, points, opts, ExtremumKind::local_max);
}

ViscosityReport check_subsolution(const ValueGrid& u, const HjbOperator& op,
                                  const std::vector<SmoothTestFunction>& phis,
                                  const std::vector<SamplePoint>& points, const ViscosityOptions& opts) {
    return check_grid(u, op, phis, points, opts, ExtremumKind::local_min);
}

ViscosityReport check_supersolution(const CandidateFn& u, const HjbOperator& op,
                                    const std::vector<SmoothTestFunction>& phis,
                                    const std::vector<SamplePoint>& points, const ViscosityOptions& opts) {
    return check_analytic(u, op, phis, points, opts, ExtremumKind::local_max);
}

ViscosityReport check_subsolution(const CandidateFn& u, const HjbOperator& op,
                                  const std::vector<SmoothTestFunction>& phis,
                                  const std::vector<SamplePoint>& points, const ViscosityOptions& opts) {
    return check_analytic(u, op, phis, points, opts, ExtremumKind::local_min);
}

SmoothTestFunction quadratic_bump(const Vec& x0, double scale) {
    const auto n = x0.size();
    return SmoothTestFunction::analytic(
        [x0, scale](double, const Vec& x) { return scale * (x - x0).squaredNorm(); },
        [](double, const Vec&) { return 0.0; },
        [x0, scale](double, const Vec& x) -> Vec { return 2.0 * scale * (x - x0); },
        [n, scale](double, const Vec&) -> Mat { return 2.0 * scale * Mat::Identity(n, n); });
}

SmoothTestFunction time_ramp(double c, double horizon) {
    return SmoothTestFunction::analytic([c, horizon](double t, const Vec&) { return c * (horizon - t); },
                                        [c](double, const Vec&) { return -c; },
                                        [](double, const Vec& x) -> Vec { return Vec::Zero(x.size()); },
                                        [](double, const Vec& x) -> Mat { return Mat::Zero(x.size(), x.size()); });
}

ValueGrid add_time_ramp(const ValueGrid& u, double c) {
    ValueGrid out = u;
    const double T = u.time().horizon();
    for (std::size_t i = 0; i <= u.time().steps(); ++i) {
        const double shift = c * (T - u.time().node(i));
        for (std::size_t k = 0; k < u.space().size(); ++k) out.at(i, k) += shift;
    }
    return out;
}

}  // namespace bsdelab
