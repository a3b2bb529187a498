#pragma once

#include "bsdelab/problem.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bsdelab {

/// Tensor-product grid on a box. Node j of axis a sits at lower + j * h_a; the
/// last node is `upper` exactly.
class SpaceGrid {
public:
    SpaceGrid(Vec lower, Vec upper, std::vector<std::size_t> counts);

    /// Uniform spacing `h` on every axis; the upper bound is rounded out to a
    /// whole number of cells.
    static SpaceGrid with_spacing(const Vec& lower, const Vec& upper, double h);

    int dim() const { return static_cast<int>(counts_.size()); }
    std::size_t size() const { return size_; }
    std::size_t count(int axis) const { return counts_[axis]; }
    double spacing(int axis) const { return h_[axis]; }
    double lower(int axis) const { return lower_[axis]; }
    double upper(int axis) const { return upper_[axis]; }
    double coord(int axis, std::size_t j) const;
    std::size_t stride(int axis) const { return strides_[axis]; }

    std::vector<std::size_t> multi_index(std::size_t flat) const;
    std::size_t flat_index(const std::vector<std::size_t>& idx) const;
    Vec point(std::size_t flat) const;
    bool is_boundary(std::size_t flat) const;
    /// Node lies in the middle half of the box on every axis.
    bool in_inner_half(std::size_t flat) const;
    bool contains(const Vec& x) const;

private:
    Vec lower_, upper_;
    std::vector<std::size_t> counts_;
    std::vector<double> h_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

/// u(t, x) sampled on a time grid times a space grid.
class ValueGrid {
public:
    enum class Provenance { fd, mc };

    ValueGrid(TimeGrid time, SpaceGrid space, Provenance provenance);

    const TimeGrid& time() const { return time_; }
    const SpaceGrid& space() const { return space_; }
    Provenance provenance() const { return provenance_; }

    double& at(std::size_t i, std::size_t node) { return u_[i * space_.size() + node]; }
    double at(std::size_t i, std::size_t node) const { return u_[i * space_.size() + node]; }
    std::span<const double> slice(std::size_t i) const { return {&u_[i * space_.size()], space_.size()}; }
    std::span<double> slice(std::size_t i) { return {&u_[i * space_.size()], space_.size()}; }
    const std::vector<double>& values() const { return u_; }

    /// Optional per-node Monte-Carlo standard errors (mc provenance).
    std::vector<double>& std_errors() { return stderr_; }
    const std::vector<double>& std_errors() const { return stderr_; }

    /// Multilinear interpolation on slice i; points outside the box are
    /// clamped and `clamped` (if given) is set.
    double interpolate_slice(std::size_t i, const Vec& x, bool* clamped = nullptr) const;
    /// Linear in time between slices, multilinear in space.
    double interpolate(double t, const Vec& x, bool* clamped = nullptr) const;
    double interpolate_std_error(double t, const Vec& x) const;

private:
    double interpolate_array(const double* data, const Vec& x, bool* clamped) const;

    TimeGrid time_;
    SpaceGrid space_;
    Provenance provenance_;
    std::vector<double> u_;
    std::vector<double> stderr_;
};

std::string to_string(ValueGrid::Provenance p);

/// Family of operators L^v together with the finite control mesh used for the
/// supremum.
struct HjbOperator {
    ControlProblem problem;
    std::vector<Vec> mesh;

    HjbOperator(ControlProblem p, std::vector<Vec> control_mesh);
};

/// (1/2) Tr(sigma sigma^T D^2 phi) + <b, grad phi> at (t, x, v).
double apply_Lv(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x, const Vec& v);

struct HjbResidual {
    double value = 0.0;
    std::size_t argmax = 0;
};

/// d_t phi + max over the mesh of { L^v phi + g(t, x, phi, sigma^T grad phi, v) }.
HjbResidual hjb_residual(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x);

/// Largest time step admitted by the monotonicity (CFL) bound
///   dt <= h^2 / (n max|sigma sigma^T| + h max|b|_1 + h^2 K)
/// over the space nodes and control mesh at time t.
double cfl_time_step(const HjbOperator& op, const SpaceGrid& space, double t);

/// Smallest uniform step count on [t0, T] satisfying the CFL bound at
/// `samples` probe times.
std::size_t cfl_steps(const HjbOperator& op, const SpaceGrid& space, double t0, double T, std::size_t samples = 9);

/// Explicit monotone scheme, backward from u(T, .) = Phi:
///   u_i = u_{i+1} + dt * max_v { L^v_h u_{i+1} + g(t_i, x, u_{i+1}, sigma^T D_h u_{i+1}, v) }
/// with upwinded drift, central second differences, and the 7-point
/// cross-derivative stencil; the gradient passed to g is the central
/// difference. Boundary nodes use inward one-sided drift differences, drop
/// second-order terms, and pass g a zero gradient component along every axis
/// on which they lie on the boundary. Ties in the control maximum go to the
/// smallest mesh index.
///
/// Monotone under the CFL bound when sigma sigma^T is diagonally dominant
/// (checked; InvalidArgument otherwise) and the z-dependence of g satisfies
/// the cell condition K |sigma| h <= min_a (A_aa - sum_c |A_ac|) (not checked).
ValueGrid solve_hjb(const HjbOperator& op, const SpaceGrid& space, const TimeGrid& grid);

/// Space grid covering `window` plus a margin of
/// 3 * (max|b| T + max|sigma| sqrt(T) * 3), with |b| and |sigma| maximized over
/// window nodes (spacing h) and the control mesh.
SpaceGrid padded_space_grid(const HjbOperator& op, const Vec& window_lower, const Vec& window_upper, double h);

/// CSV: t,x1,...,xn,u (one row per time slice and node).
void write_value_csv(std::ostream& os, const ValueGrid& u);

/// Little-endian binary slab:
///   magic "BSDLVG01", u64 provenance (0 fd, 1 mc), u64 N, u64 n,
///   per axis: f64 lower, f64 upper, u64 count
///   f64 time nodes[N+1], f64 u[N+1][nodes] (last axis fastest).
void write_value_slab(std::ostream& os, const ValueGrid& u);
ValueGrid read_value_slab(std::istream& is);

}  // namespace bsdelab
