#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/heat.hpp"
#include "fraclab/parallel.hpp"

namespace fraclab {

/// Interior trace of the potential problem with exterior data f:
/// rows t_1..t_N, Omega columns.
inline MatrixXd forward_map(const FracOperator& op, const MatrixXd& potential, const SpaceTimeField& f,
                            const TimeGrid& tg) {
    HeatProblem pb;
    pb.potential = potential;
    pb.exterior = f;
    const SpaceTimeField u = solve_linear(op, pb, tg);
    const IndexRange om = op.omega();
    return u.values.block(1, om.begin, tg.n_steps(), om.size());
}

/// (x, y)_{L^2(Omega_T)} for traces on rows t_1..t_N.
inline double trace_inner(const MatrixXd& x, const MatrixXd& y, const Grid& grid, const TimeGrid& tg) {
    return tg.dt() * grid.spacing() * x.cwiseProduct(y).sum();
}

inline double trace_norm(const MatrixXd& x, const Grid& grid, const TimeGrid& tg) {
    return std::sqrt(trace_inner(x, x, grid, tg));
}

/// Tensor bumps in W_T ordered coarse to fine: every prefix of length 4, 8,
/// 16 or 32 is a full tensor product of nested center and window subsets.
inline std::vector<BumpSpec> default_basis_specs(const Grid& grid, const TimeGrid& tg) {
    const Interval w = grid.w_interval();
    const double width = w.hi - w.lo;
    const double radius = 0.25 * width * (1.0 - 1e-9);
    std::vector<double> centers(4);
    for (int j = 0; j < 4; ++j) centers[j] = w.lo + radius + j * (width - 2.0 * radius) / 3.0;

    const double T = tg.horizon();
    const double margin = 0.01 * T, len = 0.25 * T;
    std::vector<std::pair<double, double>> windows(8);
    for (int j = 0; j < 8; ++j) {
        const double on = margin + j * (T - len - 2.0 * margin) / 7.0;
        windows[j] = {on, on + len};
    }
    const int center_order[4] = {0, 2, 1, 3};
    const int window_order[8] = {0, 4, 2, 6, 1, 5, 3, 7};
    // Prefix sizes: 2x2, 2x4, 4x4, 4x8; each stage appends only new pairs.
    std::vector<BumpSpec> specs;
    std::vector<std::pair<int, int>> seen;
    auto add_stage = [&](int nc, int nw) {
        for (int c = 0; c < nc; ++c)
            for (int k = 0; k < nw; ++k) {
                if (std::find(seen.begin(), seen.end(), std::make_pair(c, k)) != seen.end()) continue;
                seen.emplace_back(c, k);
                const auto& win = windows[window_order[k]];
                specs.push_back({centers[center_order[c]], radius, win.first, win.second, 1.0});
            }
    };
    add_stage(2, 2);
    add_stage(2, 4);
    add_stage(4, 4);
    add_stage(4, 8);
    return specs;
}

/// Basis elements, their interior traces and the Gram matrix in L^2(Omega_T).
struct ControlBasis {
    std::vector<BumpSpec> elements;
    std::vector<MatrixXd> traces;
    MatrixXd gram;

    Index size() const { return static_cast<Index>(elements.size()); }
};

inline ControlBasis build_control_basis(const FracOperator& op, const MatrixXd& potential, const TimeGrid& tg,
                                        std::vector<BumpSpec> specs, int threads = 1) {
    ControlBasis b;
    b.elements = std::move(specs);
    const std::size_t k = b.elements.size();
    for (const auto& e : b.elements) check_bump_support(op.grid, tg, e);
    b.traces.resize(k);
    parallel_for(k, threads, [&](std::size_t j) {
        b.traces[j] = forward_map(op, potential, make_bump(op.grid, tg, b.elements[j]), tg);
    });
    b.gram.resize(static_cast<Index>(k), static_cast<Index>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            b.gram(i, j) = b.gram(j, i) = trace_inner(b.traces[i], b.traces[j], op.grid, tg);
    return b;
}

struct RungeResult {
    VectorXd coefficients;
    double residual = 0.0;           // ||sum c_i P f_i - r||_{L^2(Omega_T)}
    double relative_residual = 0.0;  // residual / ||r||
    double lambda = 0.0;
    double gram_condition = 0.0;
    double control_norm = 0.0;       // ||c||_2
};

/// lambda = 1e-8 trace(Gram) / K.
inline double default_runge_lambda(const MatrixXd& gram) {
    return 1e-8 * gram.trace() / static_cast<double>(gram.rows());
}

/// Regularized least squares over the first `k` basis elements. With no
/// lambda given, the default above is used.
inline RungeResult approximate(const MatrixXd& target, const ControlBasis& basis, Index k,
                               std::optional<double> lambda, const Grid& grid, const TimeGrid& tg) {
    if (k < 1 || k > basis.size()) throw ParamError("basis prefix length out of range");
    if (target.rows() != tg.n_steps() || target.cols() != grid.omega().size())
        throw ShapeError("target must be sampled on Omega x (0, T]");
    const MatrixXd g = basis.gram.topLeftCorner(k, k);
    const double lam = lambda ? *lambda : default_runge_lambda(g);
    if (!(lam >= 0.0)) throw ParamError("regularization weight must be nonnegative");

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(g, Eigen::EigenvaluesOnly);
    const double emax = es.eigenvalues().maxCoeff(), emin = es.eigenvalues().minCoeff();
    RungeResult res;
    res.lambda = lam;
    res.gram_condition = emin > 0.0 ? emax / emin : std::numeric_limits<double>::infinity();
    if (lam == 0.0 && !(res.gram_condition <= 1e14))
        throw IllConditionedError("Gram matrix condition estimate exceeds 1e14; use a positive lambda");

    VectorXd moments(k);
    for (Index i = 0; i < k; ++i) moments(i) = trace_inner(basis.traces[i], target, grid, tg);
    MatrixXd sys = g;
    sys.diagonal().array() += lam;
    Eigen::LDLT<MatrixXd> ldlt(sys);
    if (ldlt.info() != Eigen::Success) throw SingularSystemError("normal equations could not be factorized");
    res.coefficients = ldlt.solve(moments);

    MatrixXd fit = MatrixXd::Zero(target.rows(), target.cols());
    for (Index i = 0; i < k; ++i) fit += res.coefficients(i) * basis.traces[i];
    res.residual = trace_norm(fit - target, grid, tg);
    const double tn = trace_norm(target, grid, tg);
    res.relative_residual = tn > 0.0 ? res.residual / tn : 0.0;
    res.control_norm = res.coefficients.norm();
    return res;
}

}  // namespace fraclab
