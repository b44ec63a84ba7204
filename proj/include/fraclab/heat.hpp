#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/nonlinearity.hpp"

namespace fraclab {

/// Data of the linear exterior-value problem
///   (d_t + (-Delta)^s + a) u = F in Omega_T,  u = f in the exterior,  u(0) = phi.
/// Empty matrices mean zero data. Only the Omega columns of `potential` and
/// `source` are read.
struct HeatProblem {
    MatrixXd potential;  // levels x n_points, or empty
    MatrixXd source;     // levels x n_points, or empty
    SpaceTimeField exterior;  // supported in W_T, or empty values
    VectorXd initial;    // n_points, zero off Omega, or empty
};

namespace detail {

inline void check_problem(const FracOperator& op, const TimeGrid& tg, const MatrixXd& potential,
                          const MatrixXd& source, const SpaceTimeField& exterior,
                          const VectorXd& initial) {
    const Index levels = tg.n_levels(), n = op.n_points();
    auto check_shape = [&](const MatrixXd& m, const char* name) {
        if (m.size() != 0 && (m.rows() != levels || m.cols() != n))
            throw ShapeError(std::string(name) + " has the wrong shape");
        if (m.size() != 0 && !m.allFinite()) throw ParamError(std::string(name) + " is not finite");
    };
    check_shape(potential, "potential");
    check_shape(source, "source");
    check_shape(exterior.values, "exterior data");
    if (exterior.values.size() != 0 && !exterior.vanishes_off(op.grid.w_set()))
        throw SupportError("exterior data must be supported in W_T");
    if (initial.size() != 0) {
        if (initial.size() != n) throw ShapeError("initial data has the wrong length");
        const IndexRange om = op.omega();
        if (initial.head(om.begin).cwiseAbs().sum() != 0.0 ||
            initial.tail(n - om.end).cwiseAbs().sum() != 0.0)
            throw SupportError("initial data must vanish outside Omega");
    }
}

/// F - (-Delta)^s f on Omega, all levels.
inline MatrixXd reduced_source(const FracOperator& op, const TimeGrid& tg, const MatrixXd& source,
                               const SpaceTimeField& exterior) {
    const IndexRange om = op.omega();
    MatrixXd rhs = MatrixXd::Zero(tg.n_levels(), om.size());
    if (source.size() != 0) rhs += source.middleCols(om.begin, om.size());
    if (exterior.values.size() != 0)
        rhs -= exterior.values * op.matrix.middleCols(om.begin, om.size());
    return rhs;
}

/// Factorization of a step matrix; Cholesky when possible.
class StepFactor {
public:
    StepFactor() = default;
    explicit StepFactor(const MatrixXd& m) {
        if (!m.allFinite()) throw SingularSystemError("step matrix is not finite");
        llt_.compute(m);
        use_llt_ = llt_.info() == Eigen::Success;
        if (use_llt_ && !(llt_.rcond() > 1e-14))
            throw SingularSystemError("step matrix is numerically singular");
        if (!use_llt_) {
            lu_.compute(m);
            if (!(lu_.rcond() > 1e-14)) throw SingularSystemError("step matrix is numerically singular");
        }
    }
    VectorXd solve(const VectorXd& b) const {
        if (use_llt_) return llt_.solve(b);
        return lu_.solve(b);
    }
    MatrixXd solve(const MatrixXd& b) const {
        if (use_llt_) return llt_.solve(b);
        return lu_.solve(b);
    }

private:
    bool use_llt_ = true;
    Eigen::LLT<MatrixXd> llt_;
    Eigen::PartialPivLU<MatrixXd> lu_;
};

}  // namespace detail

/// Implicit Euler on the zero-exterior unknown v restricted to Omega:
///   (I/dt + A_Omega + diag(a^{n+1})) v^{n+1} = v^n/dt + rhs^{n+1}.
/// The step matrix is factorized once when the potential does not depend on t.
class HeatStepper {
public:
    HeatStepper(const FracOperator& op, const TimeGrid& tg, MatrixXd potential_omega = {})
        : tg_(tg), a_(std::move(potential_omega)) {
        base_ = op.restricted(op.omega());
        base_.diagonal().array() += 1.0 / tg.dt();
        if (a_.size() == 0) {
            fixed_ = detail::StepFactor(base_);
        } else if ((a_.rowwise() - a_.row(0)).cwiseAbs().maxCoeff() == 0.0) {
            fixed_ = detail::StepFactor(step_matrix(1));
        }
    }

    Index size() const { return base_.rows(); }

    /// Solves for v on Omega; `rhs` is levels x |Omega|, `initial` is |Omega| or empty.
    MatrixXd solve(const MatrixXd& rhs, const VectorXd& initial = {}) const {
        MatrixXd v = MatrixXd::Zero(tg_.n_levels(), size());
        if (initial.size()) v.row(0) = initial.transpose();
        const double inv_dt = 1.0 / tg_.dt();
        for (Index n = 0; n < tg_.n_steps(); ++n) {
            const VectorXd b = inv_dt * v.row(n).transpose() + rhs.row(n + 1).transpose();
            if (fixed_) {
                v.row(n + 1) = fixed_->solve(b).transpose();
            } else {
                v.row(n + 1) = detail::StepFactor(step_matrix(n + 1)).solve(b).transpose();
            }
        }
        if (!v.allFinite()) throw SingularSystemError("time step produced non-finite values");
        return v;
    }

private:
    MatrixXd step_matrix(Index level) const {
        MatrixXd m = base_;
        m.diagonal() += a_.row(level).transpose();
        return m;
    }

    TimeGrid tg_;
    MatrixXd a_;
    MatrixXd base_;
    std::optional<detail::StepFactor> fixed_;
};

inline MatrixXd omega_columns(const MatrixXd& m, const IndexRange& om) {
    if (m.size() == 0) return {};
    return m.middleCols(om.begin, om.size());
}

/// Solves the linear problem through the reduction v = u - f.
inline SpaceTimeField solve_linear(const FracOperator& op, const HeatProblem& pb, const TimeGrid& tg) {
    detail::check_problem(op, tg, pb.potential, pb.source, pb.exterior, pb.initial);
    const IndexRange om = op.omega();
    HeatStepper stepper(op, tg, omega_columns(pb.potential, om));
    const MatrixXd rhs = detail::reduced_source(op, tg, pb.source, pb.exterior);
    const VectorXd init = pb.initial.size() ? VectorXd(pb.initial.segment(om.begin, om.size())) : VectorXd();
    SpaceTimeField u = pb.exterior.values.size() ? SpaceTimeField{pb.exterior.values, std::nullopt}
                                                 : SpaceTimeField::zeros(tg, op.grid);
    u.values.middleCols(om.begin, om.size()) += stepper.solve(rhs, init);
    return u;
}

/// Galerkin solution in the span of the first m Dirichlet eigenvectors.
struct GalerkinResult {
    SpaceTimeField v;
    MatrixXd coefficients;  // levels x modes
    EigenBasis basis;
};

inline GalerkinResult solve_linear_galerkin(const FracOperator& op, const HeatProblem& pb,
                                            const TimeGrid& tg, Index m_modes) {
    detail::check_problem(op, tg, pb.potential, pb.source, pb.exterior, pb.initial);
    if (pb.exterior.values.size() != 0 && pb.exterior.values.cwiseAbs().maxCoeff() != 0.0)
        throw ParamError("Galerkin solver expects zero exterior data; reduce the problem first");

    const IndexRange om = op.omega();
    const double h = op.grid.spacing();
    GalerkinResult res;
    res.basis = dirichlet_eigenpairs(op, m_modes);
    const MatrixXd w = res.basis.vectors.middleRows(om.begin, om.size());  // |Omega| x m
    const VectorXd& lambda = res.basis.eigenvalues;

    const MatrixXd rhs = detail::reduced_source(op, tg, pb.source, pb.exterior);
    const MatrixXd a = omega_columns(pb.potential, om);

    MatrixXd d = MatrixXd::Zero(tg.n_levels(), m_modes);
    if (pb.initial.size()) d.row(0) = (h * w.transpose() * pb.initial.segment(om.begin, om.size())).transpose();
    const double inv_dt = 1.0 / tg.dt();
    for (Index n = 0; n < tg.n_steps(); ++n) {
        // e^{kl}(t) = lambda_l delta_kl + (a(t) w_l, w_k)
        MatrixXd e = MatrixXd::Zero(m_modes, m_modes);
        e.diagonal() = lambda;
        if (a.size()) e += h * w.transpose() * a.row(n + 1).transpose().asDiagonal() * w;
        e.diagonal().array() += inv_dt;
        const VectorXd b = inv_dt * d.row(n).transpose() + h * w.transpose() * rhs.row(n + 1).transpose();
        Eigen::PartialPivLU<MatrixXd> lu(e);
        if (!(lu.rcond() > 1e-14)) throw SingularSystemError("Galerkin step matrix is singular");
        d.row(n + 1) = lu.solve(b).transpose();
    }
    res.coefficients = d;
    res.v = SpaceTimeField::zeros(tg, op.grid);
    res.v.values.middleCols(om.begin, om.size()) = d * w.transpose();
    return res;
}

/// Elliptic barrier phi >= 0 with (-Delta)^s phi >= 1 on Omega; the
/// parabolic barrier is e^t phi.
struct Barrier {
    VectorXd phi;
    IndexRange enlarged;
    double sup = 0.0;

    double sup_parabolic(const TimeGrid& tg) const { return std::exp(tg.horizon()) * sup; }
};

/// Twice the solution of (-Delta)^s w = 1 on Omega' (Omega enlarged by half
/// its radius), zero outside. Verified pointwise before returning.
inline Barrier build_barrier(const FracOperator& op) {
    const Grid& grid = op.grid;
    const Interval& om = grid.omega_interval();
    const Interval enlarged{om.center() - 1.5 * om.radius(), om.center() + 1.5 * om.radius()};
    if (enlarged.lo <= -grid.box_halfwidth() || enlarged.hi >= grid.box_halfwidth())
        throw BarrierError("enlarged domain for the barrier does not fit inside the box");
    Barrier b;
    b.enlarged = grid.snap(enlarged);
    const MatrixXd a = op.restricted(b.enlarged);
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw BarrierError("restricted operator is not positive definite");
    b.phi = VectorXd::Zero(op.n_points());
    b.phi.segment(b.enlarged.begin, b.enlarged.size()) = 2.0 * llt.solve(VectorXd::Ones(b.enlarged.size()));

    const VectorXd lap = apply(op, b.phi);
    const IndexRange omr = grid.omega();
    if (lap.segment(omr.begin, omr.size()).minCoeff() < 1.0 - 1e-12)
        throw BarrierError("barrier verification failed: (-Delta)^s phi < 1 somewhere in Omega");
    if (b.phi.minCoeff() < -1e-14) throw BarrierError("barrier verification failed: phi < 0");
    b.sup = b.phi.maxCoeff();
    return b;
}

/// min over the Omega_T lattice of (D_t + (-Delta)^s)(e^t phi), with a
/// backward difference in time.
inline double parabolic_barrier_minimum(const Barrier& b, const FracOperator& op, const TimeGrid& tg) {
    const IndexRange om = op.omega();
    const VectorXd lap = apply(op, b.phi).segment(om.begin, om.size());
    const VectorXd phi = b.phi.segment(om.begin, om.size());
    double m = std::numeric_limits<double>::infinity();
    for (Index n = 1; n < tg.n_levels(); ++n) {
        const double et = std::exp(tg.t(n)), etm = std::exp(tg.t(n - 1));
        m = std::min(m, ((et - etm) / tg.dt() * phi + et * lap).minCoeff());
    }
    return m;
}

/// Sup-norm bound for the discrete linear problem with |a| <= a_sup,
/// |f|, |phi| <= data_sup and |F| <= source_sup:
///   |u| <= rho (data_sup + sup(e^t phi_bar) source_sup),  rho = (1 - a_sup dt)^{-n_steps}.
/// rho is the discrete counterpart of e^{T ||a||}; it dominates it.
inline double linf_bound(const Barrier& b, const TimeGrid& tg, double a_sup, double data_sup,
                         double source_sup) {
    if (!(a_sup * tg.dt() < 1.0)) throw ParamError("time step too large for the potential bound");
    const double rho = std::pow(1.0 - a_sup * tg.dt(), -static_cast<double>(tg.n_steps()));
    return rho * (data_sup + b.sup_parabolic(tg) * source_sup);
}

/// Stopping rule and safeguards of the fixed-point iteration.
struct SolverOptions {
    double tol_rel = 1e-10;
    int max_iter = 100;
    int divergence_window = 5;
};

struct NonlinearResult {
    SpaceTimeField u;
    std::vector<double> updates;  // sup-norm of v_{j+1} - v_j
    int iterations = 0;
    bool converged = false;

    /// updates[j] / updates[j-1]
    std::vector<double> ratios() const {
        std::vector<double> r;
        for (std::size_t j = 1; j < updates.size(); ++j)
            r.push_back(updates[j - 1] > 0 ? updates[j] / updates[j - 1] : 0.0);
        return r;
    }
};

namespace detail {

/// Picard iteration v <- S(-q(., u0 + v)) on Omega with zero exterior and
/// initial data. `propagate` maps a source on Omega (levels x |Omega|) to the
/// corresponding zero-data solution on Omega.
inline NonlinearResult picard(const SpaceTimeField& u0, const Nonlinearity& q, const IndexRange& om,
                              const std::function<MatrixXd(const MatrixXd&)>& propagate,
                              const SolverOptions& opts) {
    const Index levels = u0.values.rows();
    const MatrixXd base = u0.values.middleCols(om.begin, om.size());
    const double tol = opts.tol_rel * std::max(1.0, u0.sup_norm());
    NonlinearResult res;
    MatrixXd v = MatrixXd::Zero(levels, om.size());
    MatrixXd src(levels, om.size());
    int growth = 0;
    for (int j = 1; j <= opts.max_iter; ++j) {
        const MatrixXd z = base + v;
        const double zmax = z.cwiseAbs().maxCoeff();
        if (zmax > q.delta())
            throw SmallnessError("solution leaves the admissible ball |u| <= delta (sup |u| = " +
                                 std::to_string(zmax) + "); exterior data too large");
        for (Index n = 0; n < levels; ++n)
            for (Index i = 0; i < om.size(); ++i) src(n, i) = -q.eval(0, n, om.begin + i, z(n, i));
        MatrixXd next = propagate(src);
        const double upd = (next - v).cwiseAbs().maxCoeff();
        if (!std::isfinite(upd)) throw DivergenceError("fixed-point iterate is not finite");
        if (!res.updates.empty() && upd > res.updates.back()) {
            if (++growth >= opts.divergence_window)
                throw DivergenceError("fixed-point updates grew for " + std::to_string(growth) +
                                      " consecutive iterations");
        } else {
            growth = 0;
        }
        res.updates.push_back(upd);
        res.iterations = j;
        v = std::move(next);
        if (upd <= tol) {
            res.converged = true;
            break;
        }
    }
    const double zmax = (base + v).cwiseAbs().maxCoeff();
    if (zmax > q.delta())
        throw SmallnessError("solution leaves the admissible ball |u| <= delta; exterior data too large");
    res.u = u0;
    res.u.support.reset();
    res.u.values.middleCols(om.begin, om.size()) += v;
    return res;
}

}  // namespace detail

/// Semilinear problem (d_t + (-Delta)^s) u + q(t,x,u) = 0, u = f outside
/// Omega, u(0) = 0, solved by fixed-point iteration around the free solution.
inline NonlinearResult solve_nonlinear(const FracOperator& op, const Nonlinearity& q,
                                       const SpaceTimeField& f, const TimeGrid& tg,
                                       const SolverOptions& opts = {}) {
    HeatProblem free;
    free.exterior = f;
    const SpaceTimeField u0 = solve_linear(op, free, tg);
    const HeatStepper stepper(op, tg);
    auto propagate = [&](const MatrixXd& src) { return stepper.solve(src); };
    return detail::picard(u0, q, op.omega(), propagate, opts);
}

}  // namespace fraclab
