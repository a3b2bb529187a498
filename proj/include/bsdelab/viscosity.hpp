#pragma once

#include "bsdelab/hjb_fd.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

/// F(r, x, y, z, v) = d_r phi + L^v phi + g(r, x, y + phi, z + sigma^T grad phi, v)
/// for a fixed test function phi.
struct PerturbedGenerator {
    ControlProblem problem;
    SmoothTestFunction phi;

    double F(double r, const Vec& x, double y, const Vec& z, const Vec& v) const;
    /// Lipschitz constant in (y, z), inherited from g.
    double lipschitz() const { return problem.generator.lipschitz; }
};

PerturbedGenerator build_F(const ControlProblem& p, const SmoothTestFunction& phi);

enum class ExtremumKind { local_max, local_min };

std::string to_string(ExtremumKind k);

/// Discrete evidence that (t, x) is a local extremum of phi - u.
struct ExtremumCertificate {
    double t = 0.0;
    Vec x;
    ExtremumKind kind = ExtremumKind::local_max;
    /// Neighborhood radius: grid nodes (grid candidates) or lattice steps
    /// (analytic candidates), in every space axis and in time.
    int radius = 1;
    /// Value of phi - u at the center.
    double center = 0.0;
    /// phi - u at every sampled neighbor (center excluded).
    std::vector<double> evidence;
    /// Grid location when the candidate is a ValueGrid.
    std::size_t slice = 0;
    std::size_t node = 0;
};

inline constexpr double kCertificateTolerance = 1e-9;

/// Scans nodes at least `radius` away from the space boundary, on slices
/// 0..N-1, and certifies those where phi - u dominates (local_max) or is
/// dominated by (local_min) every value in the space-time neighborhood of the
/// given radius, within 1e-9. Time neighbors are clipped to the grid.
std::vector<ExtremumCertificate> find_extrema(const ValueGrid& u, const SmoothTestFunction& phi, ExtremumKind kind,
                                              int radius = 1);

/// Certificate at one grid node, if it qualifies.
std::optional<ExtremumCertificate> certify_node(const ValueGrid& u, const SmoothTestFunction& phi, ExtremumKind kind,
                                                std::size_t slice, std::size_t node, int radius = 1);

using CandidateFn = std::function<double(double t, const Vec& x)>;

/// Certificate for an analytic candidate on the lattice
/// {(t + i*step, x + j*step) : |i|, |j_a| <= radius}, time clipped to [0, T].
std::optional<ExtremumCertificate> certify_point(const CandidateFn& u, const SmoothTestFunction& phi,
                                                 ExtremumKind kind, double t, const Vec& x, double horizon,
                                                 int radius = 1, double step = 1e-2);

struct ViscosityOptions {
    int radius = 1;
    /// Negative selects the default: 1e-2 for grid candidates, 1e-8 for
    /// analytic ones.
    double tolerance = -1.0;
    /// Lattice spacing for analytic certificates.
    double lattice_step = 1e-2;
};

inline constexpr double kGridViscosityTolerance = 1e-2;
inline constexpr double kAnalyticViscosityTolerance = 1e-8;

/// d_t phi + max over the mesh of { L^v phi + g(t, x, u_value, sigma^T grad phi, v) }.
struct ViscosityExpression {
    double value = 0.0;
    std::size_t argmax = 0;
};

ViscosityExpression viscosity_expression(const HjbOperator& op, const SmoothTestFunction& phi, double t, const Vec& x,
                                         double u_value);

struct ViscosityRecord {
    std::size_t phi_index = 0;
    double t = 0.0;
    Vec x;
    ExtremumKind kind = ExtremumKind::local_max;
    double expression = 0.0;
    Vec argmax_control;
    /// -expression for the supersolution test, expression for the
    /// subsolution test; PASS iff margin >= -tolerance.
    double margin = 0.0;
    bool pass = false;
};

struct ViscosityReport {
    std::vector<ViscosityRecord> records;
    std::vector<std::string> warnings;
    double tolerance = 0.0;
    int radius = 1;
    bool all_pass() const;
    std::size_t failures() const;
};

struct SamplePoint {
    double t = 0.0;
    Vec x;
};

/// Supersolution test at local maxima of phi - u. With `points` empty every
/// certified node is tested; otherwise each point is snapped to the nearest
/// grid node and skipped (with a warning) when it carries no certificate.
ViscosityReport check_supersolution(const ValueGrid& u, const HjbOperator& op,
                                    const std::vector<SmoothTestFunction>& phis,
                                    const std::vector<SamplePoint>& points = {}, const ViscosityOptions& opts = {});

/// Subsolution test at local minima of phi - u.
ViscosityReport check_subsolution(const ValueGrid& u, const HjbOperator& op,
                                  const std::vector<SmoothTestFunction>& phis,
                                  const std::vector<SamplePoint>& points = {}, const ViscosityOptions& opts = {});

/// Analytic candidates: certificates from a local lattice around each point.
ViscosityReport check_supersolution(const CandidateFn& u, const HjbOperator& op,
                                    const std::vector<SmoothTestFunction>& phis,
                                    const std::vector<SamplePoint>& points, const ViscosityOptions& opts = {});
ViscosityReport check_subsolution(const CandidateFn& u, const HjbOperator& op,
                                  const std::vector<SmoothTestFunction>& phis,
                                  const std::vector<SamplePoint>& points, const ViscosityOptions& opts = {});

/// scale * |x - x0|^2 with analytic derivatives.
SmoothTestFunction quadratic_bump(const Vec& x0, double scale);
/// c * (T - t) with analytic derivatives.
SmoothTestFunction time_ramp(double c, double horizon);
/// u + c * (T - t) on every node of a grid candidate.
ValueGrid add_time_ramp(const ValueGrid& u, double c);

}  // namespace bsdelab
