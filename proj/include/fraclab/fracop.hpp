#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/grid.hpp"

namespace fraclab {

/// C(1,s) such that C P.V. int (u(x)-u(y))/|x-y|^{1+2s} dy has Fourier symbol |xi|^{2s}.
inline double fractional_constant(double s) {
    return s * std::pow(4.0, s) * std::tgamma(0.5 + s) /
           (std::sqrt(std::numbers::pi) * std::tgamma(1.0 - s));
}

namespace detail {

// Hurwitz zeta sum_{k>=0} (a+k)^{-sigma} by Euler-Maclaurin; accurate for a >~ 100.
inline double hurwitz_zeta_tail(double sigma, double a) {
    double sum = std::pow(a, 1.0 - sigma) / (sigma - 1.0) + 0.5 * std::pow(a, -sigma);
    const double bernoulli[] = {1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0};
    double rising = sigma;  // sigma (sigma+1) ... (sigma+2k-2)
    double factorial = 2.0;
    double power = std::pow(a, -sigma - 1.0);
    for (int k = 1; k <= 4; ++k) {
        sum += bernoulli[k - 1] / factorial * rising * power;
        rising *= (sigma + 2 * k - 1) * (sigma + 2 * k);
        factorial *= (2 * k + 1) * (2 * k + 2);
        power /= a * a;
    }
    return sum;
}

// Generalized binomial coefficient binom(p, k).
inline double binomial(double p, int k) {
    double b = 1.0;
    for (int j = 0; j < k; ++j) b *= (p - j) / (j + 1);
    return b;
}

// Coefficients b_j of  int (1-|eta|)(1+eta/d)^p d eta = sum_j b_j d^{-2j}.
inline std::vector<double> hat_series(double p, int terms) {
    std::vector<double> b(terms);
    for (int j = 0; j < terms; ++j)
        b[j] = binomial(p, 2 * j) * 2.0 / ((2.0 * j + 1.0) * (2.0 * j + 2.0));
    return b;
}

// int phi_d(zeta) zeta^p d zeta for the unit hat centred at d >= 1.
inline double hat_moment(double p, Index d, const std::vector<double>& series) {
    const double dd = static_cast<double>(d);
    if (d >= 8) {
        double acc = 0.0, inv = 1.0;
        for (double b : series) {
            acc += b * inv;
            inv /= dd * dd;
        }
        return std::pow(dd, p) * acc;
    }
    auto f0 = [p](double z) { return std::pow(z, p + 1.0) / (p + 1.0); };
    auto f1 = [p](double z) { return std::pow(z, p + 2.0) / (p + 2.0); };
    const double a = dd - 1.0, b = dd + 1.0;
    const double left = (f1(dd) - f1(a)) - a * (f0(dd) - f0(a));
    const double right = b * (f0(b) - f0(dd)) - (f1(b) - f1(dd));
    return left + right;
}

}  // namespace detail

/// Dense lattice discretization of the fractional Laplacian on the box with
/// zero exterior. Row i holds the quadrature weights at x_i; the matrix is
/// symmetric Toeplitz and the contribution of the exterior |y| > L is folded
/// into the diagonal in closed form.
///
/// The singular integral is written as int_0^inf g(z) z^{1-2s} dz with
/// g(z) = (2u(x) - u(x+z) - u(x-z)) / z^2, g is interpolated linearly on the
/// lattice z_d = d h and the hat functions are integrated exactly against the
/// weight. g(0) = -u''(x) uses the centred second difference. The scheme is
/// second order for smooth fields.
struct FracOperator {
    double s = 0.5;
    double normalization = 0.0;
    MatrixXd matrix;
    Grid grid;

    /// kappa[d] = |A_{i,i+d}| for d >= 1, kappa[0] = diagonal.
    std::vector<double> kappa;

    Index n_points() const { return matrix.rows(); }
    const IndexRange& omega() const { return grid.omega(); }

    /// Principal submatrix on a lattice range (exterior rows/columns dropped).
    MatrixXd restricted(const IndexRange& r) const {
        return matrix.block(r.begin, r.begin, r.size(), r.size());
    }
};

inline FracOperator assemble(const Grid& grid, double s) {
    if (!(s > 0.0 && s < 1.0)) throw ParamError("fractional order s must lie in (0, 1)");

    const Index n = grid.n_points();
    const double h = grid.spacing();
    const double p = 1.0 - 2.0 * s;
    const auto series = detail::hat_series(p, 12);

    // Weights w_d = int phi_d z^p / d^2 in units of h^{-2s}.
    const double w0 = 1.0 / ((p + 1.0) * (p + 2.0));
    const Index d_max = n + 1000;
    std::vector<double> w(static_cast<std::size_t>(d_max) + 1, 0.0);
    double partial = 0.0;
    for (Index d = 1; d <= d_max; ++d) {
        w[d] = detail::hat_moment(p, d, series) / (static_cast<double>(d) * d);
        partial += w[d];
    }
    double tail = 0.0;
    for (std::size_t j = 0; j < series.size(); ++j)
        tail += series[j] * detail::hurwitz_zeta_tail(2.0 + 2.0 * j - p, d_max + 1.0);

    FracOperator op;
    op.s = s;
    op.grid = grid;
    op.normalization = fractional_constant(s);
    const double scale = op.normalization * std::pow(h, -2.0 * s);

    op.kappa.assign(static_cast<std::size_t>(n), 0.0);
    op.kappa[0] = scale * 2.0 * (w0 + partial + tail);
    if (n > 1) op.kappa[1] = scale * (w0 + w[1]);
    for (Index d = 2; d < n; ++d) op.kappa[d] = scale * w[d];

    op.matrix.resize(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const Index d = i > j ? i - j : j - i;
            op.matrix(i, j) = d == 0 ? op.kappa[0] : -op.kappa[d];
        }
    }
    return op;
}

inline VectorXd apply(const FracOperator& op, const VectorXd& field) {
    if (field.size() != op.n_points())
        throw ShapeError("field length does not match the operator size");
    return op.matrix * field;
}

/// Applies the operator to every time level (rows) of a space-time array.
inline MatrixXd apply_rows(const FracOperator& op, const MatrixXd& rows) {
    if (rows.cols() != op.n_points())
        throw ShapeError("field width does not match the operator size");
    return rows * op.matrix;  // symmetric
}

inline SpaceTimeField apply(const FracOperator& op, const SpaceTimeField& u) {
    return {apply_rows(op, u.values), std::nullopt};
}

/// Discrete L^2 norm with weight h.
inline double l2_norm(const VectorXd& u, const Grid& grid) {
    return std::sqrt(grid.spacing() * u.squaredNorm());
}

/// (A u, u)_{L^2}.
inline double quadratic_form(const FracOperator& op, const VectorXd& u) {
    return op.grid.spacing() * u.dot(op.matrix * u);
}

/// Dirichlet eigenpairs of the Omega-restricted operator, eigenvectors
/// extended by zero and normalized in L^2(Omega) with weight h.
struct EigenBasis {
    VectorXd eigenvalues;  // ascending
    MatrixXd vectors;      // n_points x modes

    Index modes() const { return eigenvalues.size(); }
};

inline EigenBasis dirichlet_eigenpairs(const FracOperator& op, Index m_modes) {
    const IndexRange omega = op.omega();
    if (m_modes < 1 || m_modes > omega.size())
        throw ParamError("number of modes must lie in [1, |Omega|]");
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(op.restricted(omega));
    if (solver.info() != Eigen::Success) throw ConvergenceError("symmetric eigensolver failed");

    const double inv_sqrt_h = 1.0 / std::sqrt(op.grid.spacing());
    EigenBasis basis;
    basis.eigenvalues = solver.eigenvalues().head(m_modes);
    basis.vectors = MatrixXd::Zero(op.n_points(), m_modes);
    for (Index k = 0; k < m_modes; ++k) {
        VectorXd v = solver.eigenvectors().col(k);
        const double sum = v.sum();
        Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        const double sign = std::abs(sum) > 1e-8 ? (sum > 0 ? 1.0 : -1.0) : (v(imax) > 0 ? 1.0 : -1.0);
        basis.vectors.col(k).segment(omega.begin, omega.size()) = sign * inv_sqrt_h * v;
    }
    return basis;
}

/// Bessel-potential norm sqrt(sum (1+xi^2)^s |u^(xi)|^2 dxi / 2pi) of the
/// zero-extended field, via a zero-padded discrete transform on the box.
/// Reduces to the discrete L^2 norm for s = 0.
inline double hs_norm(const VectorXd& u, double s, const Grid& grid) {
    const Index n = u.size();
    if (n != grid.n_points()) throw ShapeError("field length does not match the grid");
    Index m = 1;
    while (m < 2 * n) m <<= 1;
    std::vector<std::complex<double>> in(static_cast<std::size_t>(m)), out;
    for (Index i = 0; i < n; ++i) in[i] = u(i);
    Eigen::FFT<double> fft;
    fft.fwd(out, in);
    const double h = grid.spacing();
    const double dxi = 2.0 * std::numbers::pi / (static_cast<double>(m) * h);
    double acc = 0.0;
    for (Index k = 0; k < m; ++k) {
        const double kk = k <= m / 2 ? static_cast<double>(k) : static_cast<double>(k - m);
        const double xi = kk * dxi;
        acc += std::pow(1.0 + xi * xi, s) * std::norm(out[k]);
    }
    return std::sqrt(h * acc / static_cast<double>(m));
}

/// Exterior norm of data supported in W_T: root-sum-square of
/// max_t max(||f(t)||_{H^s}, sup|f(t)|) and ||(-Delta)^s f||_{L^2(Omega_T)}.
inline double ext_norm(const SpaceTimeField& f, const FracOperator& op, const TimeGrid& tg) {
    const Grid& grid = op.grid;
    if (f.values.rows() != tg.n_levels() || f.values.cols() != grid.n_points())
        throw ShapeError("exterior data shape does not match the grids");
    if (!f.vanishes_off(grid.w_set())) throw SupportError("exterior data must be supported in W_T");

    double first = 0.0;
    for (Index n = 0; n < tg.n_levels(); ++n) {
        const VectorXd row = f.values.row(n).transpose();
        const double sup = row.cwiseAbs().maxCoeff();
        if (sup == 0.0) continue;
        first = std::max({first, sup, hs_norm(row, op.s, grid)});
    }
    const MatrixXd af = apply_rows(op, f.values).middleCols(grid.omega().begin, grid.omega().size());
    const double second_sq = tg.dt() * grid.spacing() * af.bottomRows(tg.n_steps()).squaredNorm();
    return std::sqrt(first * first + second_sq);
}

}  // namespace fraclab
