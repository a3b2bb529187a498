#pragma once

#include "bsdelab/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bsdelab {

/// Basis for least-squares conditional expectations E[target | X_i].
struct RegressionBasis {
    enum class Kind { polynomial, local_constant };

    Kind kind = Kind::polynomial;
    /// Total degree of the global polynomial basis.
    int degree = 2;
    /// Cell width of the hypercube partition.
    double cell_width = 0.5;

    static RegressionBasis polynomial(int degree = 2) { return {Kind::polynomial, degree, 0.5}; }
    static RegressionBasis local_constant(double width) { return {Kind::local_constant, 2, width}; }

    std::string name() const;
};

/// Row-major block of states: `rows` states of dimension `dim`, row r at
/// `data + r * stride`.
struct StateView {
    const double* data = nullptr;
    std::size_t rows = 0;
    int dim = 0;
    std::size_t stride = 0;

    const double* row(std::size_t r) const { return data + r * stride; }
};

struct RegressionResult {
    /// Fitted values, column-major [rows x targets].
    Eigen::MatrixXd fitted;
    /// The normal equations were rank-deficient and the ridge fallback was used.
    bool ridge_fallback = false;
};

/// Ridge parameter of the rank-deficiency fallback.
inline constexpr double kRidgeLambda = 1e-8;

/// Projects each target column onto the span of the basis evaluated at the
/// states. The intercept is fitted exactly as the sample mean (computed
/// relative to the first row, so constant targets are reproduced bitwise);
/// non-constant features are standardized before solving the normal
/// equations. Sums run in row order, independent of threading.
RegressionResult regress(const RegressionBasis& basis, const StateView& states, const Eigen::MatrixXd& targets);

/// Monomial exponents of total degree 1..p in `dim` variables, graded
/// lexicographic order.
std::vector<std::vector<int>> monomial_exponents(int dim, int degree);

/// Mean relative to the first element; exact for constant data.
double shifted_mean(std::span<const double> values);

}  // namespace bsdelab
