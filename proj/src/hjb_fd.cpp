#include "bsdelab/hjb_fd.hpp"

#include "bsdelab/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace bsdelab {

// ---------------------------------------------------------------------------
// SpaceGrid

SpaceGrid::SpaceGrid(Vec lower, Vec upper, std::vector<std::size_t> counts)
    : lower_(std::move(lower)), upper_(std::move(upper)), counts_(std::move(counts)) {
    const auto n = counts_.size();
    if (n == 0 || n > static_cast<std::size_t>(kMaxDim)) throw InvalidArgument("SpaceGrid: bad dimension");
    if (static_cast<std::size_t>(lower_.size()) != n || static_cast<std::size_t>(upper_.size()) != n) {
        throw InvalidArgument("SpaceGrid: bounds and counts differ in dimension");
    }
    h_.resize(n);
    strides_.resize(n);
    for (std::size_t a = 0; a < n; ++a) {
        if (!std::isfinite(lower_[a]) || !std::isfinite(upper_[a]) || !(upper_[a] > lower_[a])) {
            throw InvalidArgument("SpaceGrid: bounds must be finite with lower < upper on axis " + std::to_string(a));
        }
        if (counts_[a] < 3) throw InvalidArgument("SpaceGrid: need at least 3 nodes on axis " + std::to_string(a));
        h_[a] = (upper_[a] - lower_[a]) / static_cast<double>(counts_[a] - 1);
    }
    size_ = 1;
    for (std::size_t a = n; a-- > 0;) {
        strides_[a] = size_;
        size_ *= counts_[a];
    }
}

SpaceGrid SpaceGrid::with_spacing(const Vec& lower, const Vec& upper, double h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("SpaceGrid: spacing must be positive");
    if (lower.size() != upper.size()) throw InvalidArgument("SpaceGrid: bounds differ in dimension");
    std::vector<std::size_t> counts(static_cast<std::size_t>(lower.size()));
    Vec up = upper;
    for (Eigen::Index a = 0; a < lower.size(); ++a) {
        const double cells = std::ceil((upper[a] - lower[a]) / h - 1e-9);
        counts[a] = static_cast<std::size_t>(std::max(2.0, cells)) + 1;
        up[a] = lower[a] + static_cast<double>(counts[a] - 1) * h;
    }
    return SpaceGrid(lower, up, std::move(counts));
}

double SpaceGrid::coord(int axis, std::size_t j) const {
    if (j + 1 == counts_[axis]) return upper_[axis];
    return lower_[axis] + static_cast<double>(j) * h_[axis];
}

std::vector<std::size_t> SpaceGrid::multi_index(std::size_t flat) const {
    std::vector<std::size_t> idx(counts_.size());
    for (std::size_t a = 0; a < counts_.size(); ++a) {
        idx[a] = flat / strides_[a];
        flat %= strides_[a];
    }
    return idx;
}

std::size_t SpaceGrid::flat_index(const std::vector<std::size_t>& idx) const {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < counts_.size(); ++a) flat += idx[a] * strides_[a];
    return flat;
}

Vec SpaceGrid::point(std::size_t flat) const {
    Vec x(dim());
    for (int a = 0; a < dim(); ++a) {
        x[a] = coord(a, flat / strides_[a]);
        flat %= strides_[a];
    }
    return x;
}

bool SpaceGrid::is_boundary(std::size_t flat) const {
    for (std::size_t a = 0; a < counts_.size(); ++a) {
        const std::size_t j = flat / strides_[a];
        flat %= strides_[a];
        if (j == 0 || j + 1 == counts_[a]) return true;
    }
    return false;
}

bool SpaceGrid::in_inner_half(std::size_t flat) const {
    const Vec x = point(flat);
    for (int a = 0; a < dim(); ++a) {
        const double mid = 0.5 * (lower_[a] + upper_[a]);
        const double quarter = 0.25 * (upper_[a] - lower_[a]);
        if (std::abs(x[a] - mid) > quarter * (1.0 + 1e-12)) return false;
    }
    return true;
}

bool SpaceGrid::contains(const Vec& x) const {
    if (x.size() != dim()) return false;
    for (int a = 0; a < dim(); ++a) {
        if (x[a] < lower_[a] || x[a] > upper_[a]) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// ValueGrid

ValueGrid::ValueGrid(TimeGrid time, SpaceGrid space, Provenance provenance)
    : time_(std::move(time)), space_(std::move(space)), provenance_(provenance),
      u_((time_.steps() + 1) * space_.size(), 0.0) {}

double ValueGrid::interpolate_array(const double* data, const Vec& x, bool* clamped) const {
    const int n = space_.dim();
    if (x.size() != n) throw InvalidArgument("ValueGrid: point has wrong dimension");
    std::size_t base = 0;
    double w[kMaxDim];
    bool was_clamped = false;
    for (int a = 0; a < n; ++a) {
        double xa = x[a];
        if (!std::isfinite(xa)) throw NumericalError("ValueGrid: non-finite interpolation point " + describe(x));
        if (xa < space_.lower(a)) xa = space_.lower(a), was_clamped = true;
        if (xa > space_.upper(a)) xa = space_.upper(a), was_clamped = true;
        const double h = space_.spacing(a);
        const auto last_cell = static_cast<double>(space_.count(a) - 2);
        const auto j = static_cast<std::size_t>(std::clamp(std::floor((xa - space_.lower(a)) / h), 0.0, last_cell));
        double wa;
        if (xa == space_.coord(a, j)) {
            wa = 0.0;
        } else if (xa == space_.coord(a, j + 1)) {
            wa = 1.0;
        } else {
            wa = std::clamp((xa - space_.coord(a, j)) / h, 0.0, 1.0);
        }
        w[a] = wa;
        base += j * space_.stride(a);
    }
    if (clamped) *clamped = was_clamped;
    double acc = 0.0;
    for (unsigned corner = 0; corner < (1u << n); ++corner) {
        double weight = 1.0;
        std::size_t offset = base;
        for (int a = 0; a < n; ++a) {
            if (corner & (1u << a)) {
                weight *= w[a];
                offset += space_.stride(a);
            } else {
                weight *= 1.0 - w[a];
            }
        }
        if (weight != 0.0) acc += weight * data[offset];
    }
    return acc;
}

double ValueGrid::interpolate_slice(std::size_t i, const Vec& x, bool* clamped) const {
    if (i > time_.steps()) throw InvalidArgument("ValueGrid: slice index out of range");
    return interpolate_array(&u_[i * space_.size()], x, clamped);
}

namespace {

/// Bracketing slices and weight of the later one for time t (clamped).
std::pair<std::size_t, double> time_bracket(const TimeGrid& g, double t, bool& clamped) {
    if (auto j = g.find_node(t)) return {*j, 0.0};
    if (t <= g.t0()) {
        clamped = true;
        return {0, 0.0};
    }
    if (t >= g.horizon()) {
        clamped = true;
        return {g.steps(), 0.0};
    }
    const auto nodes = g.nodes();
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
    const auto j = static_cast<std::size_t>(it - nodes.begin()) - 1;
    return {j, (t - g.node(j)) / g.step(j)};
}

}  // namespace

double ValueGrid::interpolate(double t, const Vec& x, bool* clamped) const {
    bool tc = false;
    const auto [j, w] = time_bracket(time_, t, tc);
    bool sc = false;
    double v = interpolate_slice(j, x, &sc);
    if (w > 0.0) {
        bool sc2 = false;
        v = (1.0 - w) * v + w * interpolate_slice(j + 1, x, &sc2);
        sc = sc || sc2;
    }
    if (clamped) *clamped = tc || sc;
    return v;
}

double ValueGrid::interpolate_std_error(double t, const Vec& x) const {
    if (stderr_.empty()) return 0.0;
    bool tc = false;
    const auto [j, w] = time_bracket(time_, t, tc);
    double v = interpolate_array(&stderr_[j * space_.size()], x, nullptr);
    if (w > 0.0) v = (1.0 - w) * v + w * interpolate_array(&stderr_[(j + 1) * space_.size()], x, nullptr);
    return v;
}

std::string to_string(ValueGrid::Provenance p) { return p == ValueGrid::Provenance::fd ? "fd" : "mc"; }

// ---------------------------------------------------------------------------
// Operator

HjbOperator::HjbOperator(ControlProblem p, std::vector<Vec> control_mesh)
    : problem(std::move(p)), mesh(std::move(control_mesh)) {
    problem.check_shape();
    if (mesh.empty()) throw InvalidArgument("HjbOperator: control mesh is empty");
    for (std::size_t q = 0; q < mesh.size(); ++q) {
        if (!problem.controls.contains(mesh[q])) {
            throw InvalidArgument("HjbOperator: mesh point " + std::to_string(q) + " " + describe(mesh[q]) +
                                  " lies outside U");
        }
    }
}

namespace {

double half_trace(const Mat& a, const Mat& hess) { return 0.5 * a.cwiseProduct(hess).sum(); }

void require_finite(double v, const char* what, double t, const Vec& x) {
    if (!std::isfinite(v)) {
        throw NumericalError(std::string(what) + ": non-finite value at t=" + std::to_string(t) + ", x=" + describe(x));
    }
}

double spectral_norm_psd(const Mat& a) {
    if (a.rows() == 1) return std::abs(a(0, 0));
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

double apply_Lv(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x, const Vec& v) {
    if (!op.problem.controls.contains(v)) throw InvalidArgument("apply_Lv: control " + describe(v) + " not in U");
    const Vec grad = phi.gradient(t, x);
    const Mat hess = phi.hessian(t, x);
    if (!grad.allFinite() || !hess.allFinite()) {
        throw NumericalError("apply_Lv: non-finite derivative of the test function at x=" + describe(x));
    }
    const Mat s = op.problem.diffusion(t, x, v);
    const Mat a = s * s.transpose();
    const double out = half_trace(a, hess) + op.problem.drift(t, x, v).dot(grad);
    require_finite(out, "apply_Lv", t, x);
    return out;
}

HjbResidual hjb_residual(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x) {
    const double value = phi.value(t, x);
    const double dt = phi.time_derivative(t, x);
    const Vec grad = phi.gradient(t, x);
    const Mat hess = phi.hessian(t, x);
    if (!std::isfinite(value) || !std::isfinite(dt) || !grad.allFinite() || !hess.allFinite()) {
        throw NumericalError("hjb_residual: non-finite test function data at x=" + describe(x));
    }
    HjbResidual r;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < op.mesh.size(); ++q) {
        const Vec& v = op.mesh[q];
        const Mat s = op.problem.diffusion(t, x, v);
        const Vec z = s.transpose() * grad;
        const double h = half_trace(s * s.transpose(), hess) + op.problem.drift(t, x, v).dot(grad) +
                         op.problem.generator(t, x, value, z, v);
        require_finite(h, "hjb_residual", t, x);
        if (h > best) {
            best = h;
            r.argmax = q;
        }
    }
    r.value = dt + best;
    return r;
}

double cfl_time_step(const HjbOperator& op, const SpaceGrid& space, double t) {
    double h = std::numeric_limits<double>::infinity();
    for (int a = 0; a < space.dim(); ++a) h = std::min(h, space.spacing(a));
    const double n = space.dim();
    const double K = op.problem.generator.lipschitz;
    double worst = 0.0;
    for (std::size_t node = 0; node < space.size(); ++node) {
        const Vec x = space.point(node);
        for (const Vec& v : op.mesh) {
            const Mat s = op.problem.diffusion(t, x, v);
            const double denom = n * spectral_norm_psd(s * s.transpose()) +
                                 h * op.problem.drift(t, x, v).lpNorm<1>() + h * h * K;
            worst = std::max(worst, denom);
        }
    }
    if (worst == 0.0) return std::numeric_limits<double>::infinity();
    return h * h / worst;
}

std::size_t cfl_steps(const HjbOperator& op, const SpaceGrid& space, double t0, double T, std::size_t samples) {
    if (!(T > t0)) throw InvalidArgument("cfl_steps: require T > t0");
    samples = std::max<std::size_t>(samples, 1);
    double dt = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < samples; ++s) {
        const double t = t0 + (T - t0) * static_cast<double>(s) / static_cast<double>(samples);
        dt = std::min(dt, cfl_time_step(op, space, t));
    }
    if (!std::isfinite(dt)) return 1;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((T - t0) / dt * (1.0 + 1e-9))));
}

namespace {

struct NodeUpdate {
    double value;
    double cfl_denominator;
};

NodeUpdate update_node(const HjbOperator& op, const SpaceGrid& space, const double* u, double t, double dt,
                       std::size_t node) {
    const int n = space.dim();
    const Vec x = space.point(node);
    const double u0 = u[node];
    bool lo[kMaxDim], hi[kMaxDim];
    double up[kMaxDim], dn[kMaxDim], h[kMaxDim];
    double hmin = std::numeric_limits<double>::infinity();
    std::size_t rest = node;
    for (int a = 0; a < n; ++a) {
        const std::size_t j = rest / space.stride(a);
        rest %= space.stride(a);
        lo[a] = j == 0;
        hi[a] = j + 1 == space.count(a);
        h[a] = space.spacing(a);
        hmin = std::min(hmin, h[a]);
        up[a] = hi[a] ? u0 : u[node + space.stride(a)];
        dn[a] = lo[a] ? u0 : u[node - space.stride(a)];
    }
    Vec grad(n);
    for (int a = 0; a < n; ++a) {
        grad[a] = lo[a] || hi[a] ? 0.0 : (up[a] - dn[a]) / (2.0 * h[a]);
    }

    const double K = op.problem.generator.lipschitz;
    double best = -std::numeric_limits<double>::infinity();
    double cfl = 0.0;
    for (std::size_t q = 0; q < op.mesh.size(); ++q) {
        const Vec& v = op.mesh[q];
        const Vec b = op.problem.drift(t, x, v);
        const Mat s = op.problem.diffusion(t, x, v);
        const Mat A = s * s.transpose();
        cfl = std::max(cfl, n * spectral_norm_psd(A) + hmin * b.lpNorm<1>() + hmin * hmin * K);
        double L = 0.0;
        for (int a = 0; a < n; ++a) {
            if (!lo[a] && !hi[a]) L += 0.5 * A(a, a) * (up[a] - 2.0 * u0 + dn[a]) / (h[a] * h[a]);
            if (b[a] > 0.0 && !hi[a]) L += b[a] * (up[a] - u0) / h[a];
            if (b[a] < 0.0 && !lo[a]) L += b[a] * (u0 - dn[a]) / h[a];
        }
        for (int a = 0; a < n; ++a) {
            for (int c = a + 1; c < n; ++c) {
                const double ac = A(a, c);
                if (ac == 0.0 || lo[a] || hi[a] || lo[c] || hi[c]) continue;
                const std::size_t sa = space.stride(a), sc = space.stride(c);
                const double axis = up[a] + dn[a] + up[c] + dn[c];
                double diag;
                if (ac > 0.0) {
                    diag = u[node + sa + sc] + u[node - sa - sc];
                } else {
                    diag = u[node + sa - sc] + u[node - sa + sc];
                }
                L += std::abs(ac) / (2.0 * h[a] * h[c]) * (2.0 * u0 + diag - axis);
            }
        }
        if (n > 1) {
            for (int a = 0; a < n; ++a) {
                if (lo[a] || hi[a]) continue;
                double off = 0.0;
                for (int c = 0; c < n; ++c) {
                    if (c != a && !lo[c] && !hi[c]) off += std::abs(A(a, c)) / h[c];
                }
                if (A(a, a) / h[a] < off * (1.0 - 1e-12)) {
                    throw InvalidArgument("solve_hjb: sigma sigma^T is not diagonally dominant at node " +
                                          std::to_string(node) + " x=" + describe(x) + " control " + describe(v) +
                                          "; the cross-derivative stencil would not be monotone");
                }
            }
        }
        const Vec z = s.transpose() * grad;
        const double val = L + op.problem.generator(t, x, u0, z, v);
        if (val > best) best = val;
    }
    return {u0 + dt * best, cfl};
}

}  // namespace

ValueGrid solve_hjb(const HjbOperator& op, const SpaceGrid& space, const TimeGrid& grid) {
    if (space.dim() != op.problem.n) throw InvalidArgument("solve_hjb: space grid dimension differs from n");
    const double tol = 1e-12 * std::max(1.0, op.problem.horizon);
    if (std::abs(grid.horizon() - op.problem.horizon) > tol) {
        throw InvalidArgument("solve_hjb: time grid must end at the horizon T");
    }
    ValueGrid out(grid, space, ValueGrid::Provenance::fd);
    const std::size_t N = grid.steps();
    const std::size_t nodes = space.size();
    for (std::size_t node = 0; node < nodes; ++node) {
        const double phi = op.problem.terminal(space.point(node));
        if (!std::isfinite(phi)) {
            throw NumericalError("solve_hjb: non-finite terminal value at node " + std::to_string(node));
        }
        out.at(N, node) = phi;
    }
    double hmin = std::numeric_limits<double>::infinity();
    for (int a = 0; a < space.dim(); ++a) hmin = std::min(hmin, space.spacing(a));

    std::vector<double> cfl(nodes);
    for (std::size_t i = N; i-- > 0;) {
        const double t = grid.node(i);
        const double dt = grid.step(i);
        const double* next = &out.at(i + 1, 0);
        double* cur = &out.at(i, 0);
        parallel_for(nodes, [&](std::size_t begin, std::size_t end) {
            for (std::size_t node = begin; node < end; ++node) {
                const NodeUpdate r = update_node(op, space, next, t, dt, node);
                cur[node] = r.value;
                cfl[node] = r.cfl_denominator;
            }
        });
        const double worst = *std::max_element(cfl.begin(), cfl.end());
        const double dt_max = worst > 0.0 ? hmin * hmin / worst : std::numeric_limits<double>::infinity();
        if (dt > dt_max * (1.0 + 1e-9)) {
            throw InvalidArgument("solve_hjb: CFL condition violated at step " + std::to_string(i) + " (dt = " +
                                  std::to_string(dt) + ", maximal admissible dt = " + std::to_string(dt_max) + ")");
        }
        for (std::size_t node = 0; node < nodes; ++node) {
            if (!std::isfinite(cur[node])) {
                throw NumericalError("solve_hjb: blow-up at node " + std::to_string(node) + " x=" +
                                     describe(space.point(node)) + ", step " + std::to_string(i));
            }
        }
    }
    return out;
}

SpaceGrid padded_space_grid(const HjbOperator& op, const Vec& window_lower, const Vec& window_upper, double h) {
    const SpaceGrid window = SpaceGrid::with_spacing(window_lower, window_upper, h);
    const double T = op.problem.horizon;
    double bmax = 0.0, smax = 0.0;
    for (double t : {0.0, 0.5 * T, T}) {
        for (std::size_t node = 0; node < window.size(); ++node) {
            const Vec x = window.point(node);
            for (const Vec& v : op.mesh) {
                bmax = std::max(bmax, op.problem.drift(t, x, v).norm());
                smax = std::max(smax, op.problem.diffusion(t, x, v).norm());
            }
        }
    }
    const double margin = 3.0 * (bmax * T + smax * std::sqrt(T) * 3.0);
    const Vec lo = window_lower.array() - margin;
    const Vec hi = window_upper.array() + margin;
    return SpaceGrid::with_spacing(lo, hi, h);
}

// ---------------------------------------------------------------------------
// Export

void write_value_csv(std::ostream& os, const ValueGrid& u) {
    const SpaceGrid& s = u.space();
    os.precision(17);
    os << 't';
    for (int a = 0; a < s.dim(); ++a) os << ",x" << (a + 1);
    os << ",u\n";
    for (std::size_t i = 0; i <= u.time().steps(); ++i) {
        for (std::size_t node = 0; node < s.size(); ++node) {
            os << u.time().node(i);
            const Vec x = s.point(node);
            for (int a = 0; a < s.dim(); ++a) os << ',' << x[a];
            os << ',' << u.at(i, node) << '\n';
        }
    }
}

namespace {

constexpr char kSlabMagic[8] = {'B', 'S', 'D', 'L', 'V', 'G', '0', '1'};

template <class T>
void put(std::ostream& os, T value) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), 8);
}

template <class T>
T get(std::istream& is) {
    std::uint64_t bits;
    if (!is.read(reinterpret_cast<char*>(&bits), 8)) throw Error("read_value_slab: truncated input");
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
}

}  // namespace

void write_value_slab(std::ostream& os, const ValueGrid& u) {
    os.write(kSlabMagic, 8);
    put<std::uint64_t>(os, u.provenance() == ValueGrid::Provenance::fd ? 0 : 1);
    put<std::uint64_t>(os, u.time().steps());
    put<std::uint64_t>(os, static_cast<std::uint64_t>(u.space().dim()));
    for (int a = 0; a < u.space().dim(); ++a) {
        put<double>(os, u.space().lower(a));
        put<double>(os, u.space().upper(a));
        put<std::uint64_t>(os, u.space().count(a));
    }
    for (double t : u.time().nodes()) put<double>(os, t);
    for (double v : u.values()) put<double>(os, v);
    if (!os) throw Error("write_value_slab: write failed");
}

ValueGrid read_value_slab(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kSlabMagic, 8) != 0) throw Error("read_value_slab: bad magic");
    const auto prov = get<std::uint64_t>(is);
    const auto N = get<std::uint64_t>(is);
    const auto n = get<std::uint64_t>(is);
    if (prov > 1 || n == 0 || n > static_cast<std::uint64_t>(kMaxDim)) throw Error("read_value_slab: bad header");
    Vec lo(static_cast<Eigen::Index>(n)), hi(static_cast<Eigen::Index>(n));
    std::vector<std::size_t> counts(n);
    for (std::size_t a = 0; a < n; ++a) {
        lo[static_cast<Eigen::Index>(a)] = get<double>(is);
        hi[static_cast<Eigen::Index>(a)] = get<double>(is);
        counts[a] = get<std::uint64_t>(is);
    }
    std::vector<double> nodes(N + 1);
    for (double& t : nodes) t = get<double>(is);
    ValueGrid out(TimeGrid(std::move(nodes)), SpaceGrid(lo, hi, std::move(counts)),
                  prov == 0 ? ValueGrid::Provenance::fd : ValueGrid::Provenance::mc);
    for (std::size_t i = 0; i <= N; ++i) {
        for (std::size_t node = 0; node < out.space().size(); ++node) out.at(i, node) = get<double>(is);
    }
    return out;
}

}  // namespace bsdelab
