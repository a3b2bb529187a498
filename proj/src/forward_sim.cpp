#include "bsdelab/forward_sim.hpp"

#include "bsdelab/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace bsdelab {

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t paths, int n, int d, int k)
    : grid_(std::move(grid)), paths_(paths), n_(n), d_(d), k_(k) {
    if (paths_ == 0) throw InvalidArgument("PathEnsemble: need at least one path");
    x_.assign(paths_ * (steps() + 1) * n_, 0.0);
    db_.assign(paths_ * steps() * d_, 0.0);
    ctrl_.assign(paths_ * steps() * k_, 0.0);
}

Vec PathEnsemble::state(std::size_t m, std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(state_data(m, i), n_);
}

Vec PathEnsemble::increment(std::size_t m, std::size_t i) const {
    if (!has_increments()) throw InvalidArgument("PathEnsemble: increments were dropped");
    return Eigen::Map<const Eigen::VectorXd>(increment_data(m, i), d_);
}

Vec PathEnsemble::control(std::size_t m, std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(control_data(m, i), k_);
}

void PathEnsemble::drop_increments() {
    db_.clear();
    db_.shrink_to_fit();
}

std::vector<double> draw_increments(const TimeGrid& grid, std::size_t M, int d, const RandomSource& rng,
                                    const SimulationOptions& opts) {
    if (M == 0) throw InvalidArgument("draw_increments: M must be >= 1");
    const std::size_t N = grid.steps();
    std::vector<double> db(M * N * d);
    std::vector<double> sqrt_dt(N);
    for (std::size_t i = 0; i < N; ++i) sqrt_dt[i] = std::sqrt(grid.step(i));
    parallel_for(M, [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            double* out = &db[m * N * d];
            if (opts.antithetic && (m % 2 == 1)) {
                // Replays the pair's stream, so chunking cannot matter.
                NormalStream stream(rng.child(m / 2));
                for (std::size_t i = 0; i < N; ++i)
                    for (int j = 0; j < d; ++j) out[i * d + j] = -(sqrt_dt[i] * stream.next_normal());
                continue;
            }
            NormalStream stream(rng.child(opts.antithetic ? m / 2 : m));
            for (std::size_t i = 0; i < N; ++i)
                for (int j = 0; j < d; ++j) out[i * d + j] = sqrt_dt[i] * stream.next_normal();
        }
    });
    return db;
}

PathEnsemble simulate_with_increments(const ControlProblem& p, const Vec& x0, const ControlProcess& ctrl,
                                      const TimeGrid& grid, std::size_t M, std::vector<double> increments) {
    p.check_shape();
    if (x0.size() != p.n) throw InvalidArgument("simulate: x0 has wrong dimension");
    if (!x0.allFinite()) throw InvalidArgument("simulate: x0 must be finite");
    ctrl.check_admissible(p.controls);
    const std::size_t N = grid.steps();
    if (increments.size() != M * N * static_cast<std::size_t>(p.d)) {
        throw InvalidArgument("simulate: increment array has wrong size");
    }
    PathEnsemble e(grid, M, p.n, p.d, p.k);
    const bool feedback = ctrl.kind() == ControlProcess::Kind::feedback;
    parallel_for(M, [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            Vec x = x0;
            std::copy(x.data(), x.data() + p.n, e.state_data(m, 0));
            for (std::size_t i = 0; i < N; ++i) {
                const double s = grid.node(i);
                const double dt = grid.step(i);
                const Vec v = ctrl.value(s, x);
                if (feedback && !p.controls.contains(v)) {
                    throw InvalidArgument("simulate: feedback control " + describe(v) + " outside U at path " +
                                          std::to_string(m) + ", step " + std::to_string(i));
                }
                std::copy(v.data(), v.data() + p.k, e.control_data(m, i));
                const Eigen::Map<const Eigen::VectorXd> db(&increments[(m * N + i) * p.d], p.d);
                const Vec b = p.drift(s, x, v);
                const Mat sig = p.diffusion(s, x, v);
                x += b * dt + sig * db;
                if (!x.allFinite()) {
                    throw NumericalError("simulate: non-finite state at path " + std::to_string(m) + ", step " +
                                         std::to_string(i + 1));
                }
                std::copy(x.data(), x.data() + p.n, e.state_data(m, i + 1));
            }
        }
    });
    std::copy(increments.begin(), increments.end(), e.increment_data(0, 0));
    e.set_control_process(std::make_shared<const ControlProcess>(ctrl));
    return e;
}

PathEnsemble simulate(const ControlProblem& p, double t0, const Vec& x0, const ControlProcess& ctrl,
                      const TimeGrid& grid, std::size_t M, const RandomSource& rng, const SimulationOptions& opts) {
    if (M == 0) throw InvalidArgument("simulate: M must be >= 1");
    if (std::abs(grid.t0() - t0) > 1e-12 * std::max(1.0, std::abs(t0))) {
        throw InvalidArgument("simulate: grid must start at t0");
    }
    p.check_shape();
    return simulate_with_increments(p, x0, ctrl, grid, M, draw_increments(grid, M, p.d, rng, opts));
}

PathEnsemble resimulate_with_offset(const PathEnsemble& base, const ControlProblem& p, const Vec& x0) {
    if (!base.has_increments()) throw InvalidArgument("resimulate_with_offset: base ensemble has no increments");
    if (!base.control_process()) throw InvalidArgument("resimulate_with_offset: base ensemble has no control");
    return simulate_with_increments(p, x0, *base.control_process(), base.grid(), base.paths(), base.increments());
}

PathEnsemble coarsen(const PathEnsemble& fine, std::span<const std::size_t> node_indices) {
    if (node_indices.size() < 2) throw InvalidArgument("coarsen: need at least two nodes");
    if (!fine.has_increments()) throw InvalidArgument("coarsen: ensemble has no increments");
    std::vector<double> nodes;
    for (std::size_t j = 0; j < node_indices.size(); ++j) {
        if (node_indices[j] > fine.steps() || (j > 0 && node_indices[j] <= node_indices[j - 1])) {
            throw InvalidArgument("coarsen: node indices must be increasing and in range");
        }
        nodes.push_back(fine.grid().node(node_indices[j]));
    }
    const int n = fine.state_dim(), d = fine.noise_dim(), k = fine.control_dim();
    PathEnsemble out(TimeGrid(std::move(nodes)), fine.paths(), n, d, k);
    for (std::size_t m = 0; m < fine.paths(); ++m) {
        for (std::size_t j = 0; j < node_indices.size(); ++j) {
            std::copy_n(fine.state_data(m, node_indices[j]), n, out.state_data(m, j));
            if (j + 1 == node_indices.size()) break;
            std::copy_n(fine.control_data(m, node_indices[j]), k, out.control_data(m, j));
            double* db = out.increment_data(m, j);
            std::fill_n(db, d, 0.0);
            for (std::size_t i = node_indices[j]; i < node_indices[j + 1]; ++i) {
                const double* src = fine.increment_data(m, i);
                for (int c = 0; c < d; ++c) db[c] += src[c];
            }
        }
    }
    out.set_control_process(fine.control_process());
    return out;
}

// ------------------------------------------------------------ binary dump

namespace {

constexpr char kMagic[8] = {'B', 'S', 'D', 'L', 'P', 'E', '0', '1'};

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::little) {
        return value;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        std::reverse(bytes, bytes + sizeof(T));
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }
}

void put_u64(std::ostream& os, std::uint64_t v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64s(std::ostream& os, const double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const double v = to_little(data[i]);
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InvalidArgument("read_ensemble: truncated header");
    return to_little(v);
}

void get_f64s(std::istream& is, double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InvalidArgument("read_ensemble: truncated data");
        data[i] = to_little(v);
    }
}

}  // namespace

void write_ensemble(std::ostream& os, const PathEnsemble& e) {
    if (!e.has_increments()) throw InvalidArgument("write_ensemble: ensemble has no increments");
    os.write(kMagic, sizeof kMagic);
    put_u64(os, e.paths());
    put_u64(os, e.steps());
    put_u64(os, static_cast<std::uint64_t>(e.state_dim()));
    put_u64(os, static_cast<std::uint64_t>(e.noise_dim()));
    put_u64(os, static_cast<std::uint64_t>(e.control_dim()));
    put_f64s(os, e.grid().nodes().data(), e.steps() + 1);
    put_f64s(os, e.states().data(), e.states().size());
    put_f64s(os, e.increments().data(), e.increments().size());
    put_f64s(os, e.controls().data(), e.controls().size());
    if (!os) throw Error("write_ensemble: stream failure");
}

PathEnsemble read_ensemble(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw InvalidArgument("read_ensemble: bad magic");
    }
    const auto M = get_u64(is), N = get_u64(is), n = get_u64(is), d = get_u64(is), k = get_u64(is);
    auto dim_ok = [](std::uint64_t v) { return v >= 1 && v <= static_cast<std::uint64_t>(kMaxDim); };
    if (M == 0 || N == 0 || !dim_ok(n) || !dim_ok(d) || !dim_ok(k)) throw InvalidArgument("read_ensemble: bad header");
    std::vector<double> nodes(N + 1);
    get_f64s(is, nodes.data(), nodes.size());
    PathEnsemble e(TimeGrid(std::move(nodes)), M, static_cast<int>(n), static_cast<int>(d), static_cast<int>(k));
    get_f64s(is, e.state_data(0, 0), e.states().size());
    get_f64s(is, e.increment_data(0, 0), e.increments().size());
    get_f64s(is, e.control_data(0, 0), e.controls().size());
    return e;
}

void write_ensemble(const std::string& path, const PathEnsemble& e) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_ensemble: cannot open " + path);
    write_ensemble(os, e);
}

PathEnsemble read_ensemble(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("read_ensemble: cannot open " + path);
    return read_ensemble(is);
}

}  // namespace bsdelab
