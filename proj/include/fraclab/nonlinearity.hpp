#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/grid.hpp"

namespace fraclab {

/// Coefficient c(t, x) on the lattice, either time independent (one value
/// per grid point) or one row per time level.
class CoefficientField {
public:
    CoefficientField() = default;

    static CoefficientField spatial(VectorXd values) {
        CoefficientField c;
        c.spatial_ = std::move(values);
        return c;
    }
    static CoefficientField space_time(MatrixXd values) {
        CoefficientField c;
        c.space_time_ = std::move(values);
        return c;
    }

    bool time_independent() const { return space_time_.size() == 0; }
    Index n_points() const { return time_independent() ? spatial_.size() : space_time_.cols(); }

    double operator()(Index n, Index i) const {
        return time_independent() ? spatial_(i) : space_time_(n, i);
    }

    double sup() const {
        if (time_independent()) return spatial_.size() ? spatial_.cwiseAbs().maxCoeff() : 0.0;
        return space_time_.size() ? space_time_.cwiseAbs().maxCoeff() : 0.0;
    }
    bool all_finite() const { return time_independent() ? spatial_.allFinite() : space_time_.allFinite(); }

    const VectorXd& spatial_values() const { return spatial_; }
    const MatrixXd& space_time_values() const { return space_time_; }

    /// Dense (levels x points) samples.
    MatrixXd sample(Index n_levels) const {
        if (!time_independent()) return space_time_;
        return spatial_.transpose().replicate(n_levels, 1);
    }

private:
    VectorXd spatial_;
    MatrixXd space_time_;
};

/// One monomial c_k(t,x) z^k / k! of a polynomial nonlinearity.
struct PolyTerm {
    int k = 2;
    CoefficientField coefficient;
};

/// The zeroth-order nonlinearity q(t, x, z) and its z-derivatives, with the
/// structural constants delta, Phi and M_k used by the well-posedness theory.
class Nonlinearity {
public:
    using Evaluator = std::function<double(int k, Index n, Index i, double z)>;

    Nonlinearity() = default;
    Nonlinearity(int order, double delta, Evaluator eval, std::function<double(double)> phi,
                 std::vector<double> bounds, bool time_independent, bool sampled)
        : order_(order),
          delta_(delta),
          eval_(std::move(eval)),
          phi_(std::move(phi)),
          bounds_(std::move(bounds)),
          time_independent_(time_independent),
          sampled_(sampled) {}

    int order() const { return order_; }
    double delta() const { return delta_; }
    bool time_independent() const { return time_independent_; }
    /// True when Phi and M_k were estimated by sampling rather than derived.
    bool sampled_bounds() const { return sampled_; }

    /// k-th z-derivative at lattice site (t_n, x_i).
    double eval(int k, Index n, Index i, double z) const { return eval_(k, n, i, z); }
    double phi(double eps) const { return phi_(eps); }
    /// M_k for 2 <= k <= m+1.
    double bound(int k) const {
        if (k < 2 || k > order_ + 1) throw ParamError("M_k is defined for 2 <= k <= m+1");
        return bounds_[static_cast<std::size_t>(k - 2)];
    }

    /// d^k q / dz^k (., 0) sampled on Omega_T (other columns zero).
    MatrixXd jet(int k, const TimeGrid& tg, const Grid& grid) const {
        MatrixXd c = MatrixXd::Zero(tg.n_levels(), grid.n_points());
        const IndexRange om = grid.omega();
        for (Index n = 0; n < tg.n_levels(); ++n)
            for (Index i = om.begin; i < om.end; ++i) c(n, i) = eval(k, n, i, 0.0);
        return c;
    }

    const std::vector<PolyTerm>& terms() const { return terms_; }

    friend Nonlinearity make_polynomial_q(std::vector<PolyTerm>, double, int);

private:
    int order_ = 2;
    double delta_ = 0.0;
    Evaluator eval_;
    std::function<double(double)> phi_;
    std::vector<double> bounds_;
    bool time_independent_ = true;
    bool sampled_ = false;
    std::vector<PolyTerm> terms_;
};

namespace detail {
inline double factorial(int k) {
    double f = 1.0;
    for (int j = 2; j <= k; ++j) f *= j;
    return f;
}
}  // namespace detail

/// q(t,x,z) = sum_k c_k(t,x) z^k / k! with every k >= 2, so that q(.,0) = 0
/// and dq/dz(.,0) = 0 hold by construction. Derivatives are exact.
inline Nonlinearity make_polynomial_q(std::vector<PolyTerm> terms, double delta, int order) {
    if (order < 2) throw ParamError("jet order m must be at least 2");
    if (!(delta > 0.0)) throw ParamError("delta must be positive");
    bool time_independent = true;
    for (const auto& t : terms) {
        if (t.k < 2) throw ParamError("polynomial nonlinearity admits only powers k >= 2");
        if (!t.coefficient.all_finite()) throw ParamError("coefficient field is not finite");
        time_independent = time_independent && t.coefficient.time_independent();
    }
    std::sort(terms.begin(), terms.end(), [](const PolyTerm& a, const PolyTerm& b) { return a.k < b.k; });

    auto shared = std::make_shared<const std::vector<PolyTerm>>(terms);
    auto eval = [shared](int k, Index n, Index i, double z) {
        double acc = 0.0;
        for (const auto& t : *shared) {
            if (t.k < k) continue;
            const int p = t.k - k;
            acc += t.coefficient(n, i) * std::pow(z, p) / detail::factorial(p);
        }
        return acc;
    };
    std::vector<double> sups;
    for (const auto& t : terms) sups.push_back(t.coefficient.sup());
    auto phi = [shared, sups](double eps) {
        double acc = 0.0;
        for (std::size_t j = 0; j < shared->size(); ++j) {
            const int k = (*shared)[j].k;
            acc += sups[j] * std::pow(eps, k - 1) / detail::factorial(k - 1);
        }
        return acc;
    };
    std::vector<double> bounds;
    for (int k = 2; k <= order + 1; ++k) {
        double mk = 0.0;
        for (std::size_t j = 0; j < terms.size(); ++j)
            if (terms[j].k >= k) mk += sups[j] * std::pow(delta, terms[j].k - k) / detail::factorial(terms[j].k - k);
        bounds.push_back(mk);
    }
    Nonlinearity q(order, delta, eval, phi, bounds, time_independent, false);
    q.terms_ = std::move(terms);
    return q;
}

/// Wraps an arbitrary evaluator. Phi and M_k are estimated on the given
/// lattice and z samples, which under-approximates the true suprema; the
/// result is flagged via `sampled_bounds()`.
inline Nonlinearity make_sampled_q(Nonlinearity::Evaluator eval, double delta, int order,
                                   const Grid& grid, const TimeGrid& tg,
                                   const std::vector<double>& z_samples, bool time_independent) {
    if (order < 2) throw ParamError("jet order m must be at least 2");
    if (!(delta > 0.0)) throw ParamError("delta must be positive");
    std::vector<double> zs;
    for (double z : z_samples)
        if (std::abs(z) <= delta) zs.push_back(z);
    zs.push_back(0.0);
    std::sort(zs.begin(), zs.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });

    const IndexRange om = grid.omega();
    auto sup_over_lattice = [&](int k, double z) {
        double m = 0.0;
        for (Index n = 0; n < tg.n_levels(); ++n)
            for (Index i = om.begin; i < om.end; ++i) m = std::max(m, std::abs(eval(k, n, i, z)));
        return m;
    };
    // Phi table: running max of |dq/dz| over |z| <= eps.
    std::vector<std::pair<double, double>> table;
    double running = 0.0;
    for (double z : zs) {
        running = std::max(running, sup_over_lattice(1, z));
        table.emplace_back(std::abs(z), running);
    }
    auto phi = [table](double eps) {
        double v = table.front().second;
        for (const auto& [a, m] : table) {
            if (a > eps) break;
            v = m;
        }
        return v;
    };
    std::vector<double> bounds;
    for (int k = 2; k <= order + 1; ++k) {
        double mk = 0.0;
        for (double z : zs) mk = std::max(mk, sup_over_lattice(k, z));
        bounds.push_back(mk);
    }
    return Nonlinearity(order, delta, std::move(eval), phi, bounds, time_independent, true);
}

/// Outcome of sampling the structural assumptions on q over Omega_T.
struct AssumptionReport {
    bool vanishes_at_zero = false;       // q(t,x,0) = 0
    double sup_q_at_zero = 0.0;
    bool derivative_vanishes = false;    // dq/dz(t,x,0) = 0, forced by Phi(eps) -> 0
    double sup_dq_at_zero = 0.0;
    bool phi_nondecreasing = false;
    std::vector<bool> bounded;           // per k = 2..m+1: |d^k q| <= M_k on |z| <= delta
    std::vector<double> measured;        // sampled sup |d^k q|
    bool sampled_bounds = false;
    std::size_t rejected_samples = 0;    // z samples outside [-delta, delta]

    bool all_pass() const {
        return vanishes_at_zero && derivative_vanishes && phi_nondecreasing &&
               std::all_of(bounded.begin(), bounded.end(), [](bool b) { return b; });
    }
};

inline AssumptionReport check_assumptions(const Nonlinearity& q, const Grid& grid,
                                          const TimeGrid& tg, const std::vector<double>& z_samples) {
    constexpr double tol = 1e-13;
    AssumptionReport rep;
    rep.sampled_bounds = q.sampled_bounds();
    std::vector<double> zs;
    for (double z : z_samples) {
        if (std::abs(z) <= q.delta()) zs.push_back(z);
        else ++rep.rejected_samples;
    }
    const IndexRange om = grid.omega();
    auto sup_at = [&](int k, double z) {
        double m = 0.0;
        for (Index n = 0; n < tg.n_levels(); ++n)
            for (Index i = om.begin; i < om.end; ++i) m = std::max(m, std::abs(q.eval(k, n, i, z)));
        return m;
    };
    rep.sup_q_at_zero = sup_at(0, 0.0);
    rep.vanishes_at_zero = rep.sup_q_at_zero <= tol;
    rep.sup_dq_at_zero = sup_at(1, 0.0);
    rep.derivative_vanishes = rep.sup_dq_at_zero <= tol && q.phi(0.0) <= tol;

    std::vector<double> eps;
    for (double z : zs) eps.push_back(std::abs(z));
    std::sort(eps.begin(), eps.end());
    rep.phi_nondecreasing = true;
    for (std::size_t j = 1; j < eps.size(); ++j)
        if (q.phi(eps[j]) < q.phi(eps[j - 1])) rep.phi_nondecreasing = false;

    for (int k = 2; k <= q.order() + 1; ++k) {
        double m = 0.0;
        for (double z : zs) m = std::max(m, sup_at(k, z));
        rep.measured.push_back(m);
        const double mk = q.bound(k);
        rep.bounded.push_back(std::isfinite(m) && m <= mk * (1.0 + 1e-12) + tol);
    }
    return rep;
}

}  // namespace fraclab
