#include "bsdelab/regression.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace bsdelab {

std::string RegressionBasis::name() const {
    if (kind == Kind::polynomial) return "polynomial(degree=" + std::to_string(degree) + ")";
    return "local_constant(width=" + std::to_string(cell_width) + ")";
}

std::vector<std::vector<int>> monomial_exponents(int dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(dim, 0);
    std::function<void(int, int, int)> rec = [&](int axis, int remaining, int total) {
        if (axis == dim - 1) {
            e[axis] = remaining;
            out.push_back(e);
            return;
        }
        for (int p = remaining; p >= 0; --p) {
            e[axis] = p;
            rec(axis + 1, remaining - p, total);
        }
    };
    for (int total = 1; total <= degree; ++total) rec(0, total, total);
    return out;
}

double shifted_mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    const double ref = values.front();
    double acc = 0.0;
    for (double v : values) acc += v - ref;
    return ref + acc / static_cast<double>(values.size());
}

namespace {

RegressionResult regress_polynomial(int degree, const StateView& states, const Eigen::MatrixXd& targets) {
    const std::size_t M = states.rows;
    const auto R = targets.cols();
    const auto exps = monomial_exponents(states.dim, degree);
    const auto q = static_cast<Eigen::Index>(exps.size());

    Eigen::MatrixXd F(static_cast<Eigen::Index>(M), q);
    for (std::size_t m = 0; m < M; ++m) {
        const double* x = states.row(m);
        for (Eigen::Index j = 0; j < q; ++j) {
            double v = 1.0;
            for (int a = 0; a < states.dim; ++a)
                for (int p = 0; p < exps[j][a]; ++p) v *= x[a];
            F(static_cast<Eigen::Index>(m), j) = v;
        }
    }

    RegressionResult res;
    res.fitted.resize(static_cast<Eigen::Index>(M), R);
    Eigen::VectorXd target_mean(R);
    for (Eigen::Index r = 0; r < R; ++r) {
        target_mean[r] = shifted_mean(std::span<const double>(targets.col(r).data(), M));
    }

    // Standardize features; zero-variance columns stay identically zero.
    for (Eigen::Index j = 0; j < q; ++j) {
        const double mu = shifted_mean(std::span<const double>(F.col(j).data(), M));
        F.col(j).array() -= mu;
        const double sd = std::sqrt(F.col(j).squaredNorm() / static_cast<double>(M));
        if (sd > 1e-300) F.col(j) /= sd;
    }

    const double inv_m = 1.0 / static_cast<double>(M);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q, q);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(q, R);
    for (std::size_t m = 0; m < M; ++m) {
        const auto row = F.row(static_cast<Eigen::Index>(m));
        gram.noalias() += row.transpose() * row;
        for (Eigen::Index r = 0; r < R; ++r) {
            rhs.col(r).noalias() += row.transpose() * (targets(static_cast<Eigen::Index>(m), r) - target_mean[r]);
        }
    }
    gram *= inv_m;
    rhs *= inv_m;

    Eigen::MatrixXd beta;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (q > 0 && llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
        beta = llt.solve(rhs);
    } else {
        res.ridge_fallback = true;
        gram.diagonal().array() += kRidgeLambda;
        beta = gram.ldlt().solve(rhs);
    }

    for (Eigen::Index r = 0; r < R; ++r) {
        res.fitted.col(r).setConstant(target_mean[r]);
        if (q > 0) res.fitted.col(r).noalias() += F * beta.col(r);
    }
    return res;
}

RegressionResult regress_local_constant(double width, const StateView& states, const Eigen::MatrixXd& targets) {
    if (!(width > 0.0)) throw InvalidArgument("regress: cell width must be positive");
    const std::size_t M = states.rows;
    const auto R = targets.cols();
    std::map<std::vector<long long>, std::vector<std::size_t>> cells;
    std::vector<long long> key(states.dim);
    for (std::size_t m = 0; m < M; ++m) {
        const double* x = states.row(m);
        for (int a = 0; a < states.dim; ++a) key[a] = static_cast<long long>(std::floor(x[a] / width));
        cells[key].push_back(m);
    }
    RegressionResult res;
    res.fitted.resize(static_cast<Eigen::Index>(M), R);
    std::vector<double> buf;
    for (const auto& [_, members] : cells) {
        for (Eigen::Index r = 0; r < R; ++r) {
            buf.clear();
            for (auto m : members) buf.push_back(targets(static_cast<Eigen::Index>(m), r));
            const double mean = shifted_mean(buf);
            for (auto m : members) res.fitted(static_cast<Eigen::Index>(m), r) = mean;
        }
    }
    return res;
}

}  // namespace

RegressionResult regress(const RegressionBasis& basis, const StateView& states, const Eigen::MatrixXd& targets) {
    if (states.rows == 0 || static_cast<std::size_t>(targets.rows()) != states.rows) {
        throw InvalidArgument("regress: targets and states disagree in row count");
    }
    RegressionResult res = basis.kind == RegressionBasis::Kind::polynomial
                               ? regress_polynomial(basis.degree, states, targets)
                               : regress_local_constant(basis.cell_width, states, targets);
    if (!res.fitted.allFinite()) throw NumericalError("regress: non-finite fitted values");
    return res;
}

}  // namespace bsdelab
