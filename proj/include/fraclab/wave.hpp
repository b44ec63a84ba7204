#pragma once

#include <Eigen/Dense>

#include <optional>

#include "fraclab/errors.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/heat.hpp"
#include "fraclab/nonlinearity.hpp"

namespace fraclab {

/// (d_t^2 + (-Delta)^s + a) u = F in Omega_T, u = f outside Omega,
/// u(0) = phi, d_t u(0) = psi. Empty members mean zero data.
struct WaveProblem {
    MatrixXd potential;
    MatrixXd source;
    SpaceTimeField exterior;
    VectorXd initial;   // position, zero off Omega
    VectorXd velocity;  // zero off Omega
};

inline void require_wave_order(double s) {
    if (!(s > 0.5 && s < 1.0))
        throw ParamError("the fractional wave solver requires 1/2 < s < 1: the sup-norm control of "
                         "the one-dimensional wave problem is only available in that range");
}

/// Average-acceleration Newmark (beta = 1/4, gamma = 1/2) on the zero-exterior
/// unknown restricted to Omega. Unconditionally stable; conserves the discrete
/// energy exactly when a = 0 and the source vanishes.
class WaveStepper {
public:
    struct State {
        MatrixXd position;  // levels x |Omega|
        MatrixXd velocity;
    };

    WaveStepper(const FracOperator& op, const TimeGrid& tg, MatrixXd potential_omega = {})
        : tg_(tg), a_(std::move(potential_omega)) {
        require_wave_order(op.s);
        stiffness_ = op.restricted(op.omega());
        const double q = 0.25 * tg.dt() * tg.dt();
        if (a_.size() == 0) {
            fixed_ = detail::StepFactor(MatrixXd::Identity(size(), size()) + q * stiffness_);
        } else if ((a_.rowwise() - a_.row(0)).cwiseAbs().maxCoeff() == 0.0) {
            fixed_ = detail::StepFactor(MatrixXd::Identity(size(), size()) + q * stiffness(1));
        }
    }

    Index size() const { return stiffness_.rows(); }

    State solve_state(const MatrixXd& rhs, const VectorXd& initial = {}, const VectorXd& velocity = {}) const {
        const Index levels = tg_.n_levels(), m = size();
        const double dt = tg_.dt(), q = 0.25 * dt * dt;
        State st{MatrixXd::Zero(levels, m), MatrixXd::Zero(levels, m)};
        if (initial.size()) st.position.row(0) = initial.transpose();
        if (velocity.size()) st.velocity.row(0) = velocity.transpose();
        VectorXd acc = rhs.row(0).transpose() - stiffness(0) * st.position.row(0).transpose();
        for (Index n = 0; n < tg_.n_steps(); ++n) {
            const VectorXd pred = st.position.row(n).transpose() + dt * st.velocity.row(n).transpose() + q * acc;
            const MatrixXd k = stiffness(n + 1);
            const VectorXd b = rhs.row(n + 1).transpose() - k * pred;
            const VectorXd next = fixed_ ? fixed_->solve(b)
                                         : detail::StepFactor(MatrixXd::Identity(m, m) + q * k).solve(b);
            st.position.row(n + 1) = (pred + q * next).transpose();
            st.velocity.row(n + 1) = st.velocity.row(n) + (0.5 * dt * (acc + next)).transpose();
            acc = next;
        }
        if (!st.position.allFinite()) throw SingularSystemError("time step produced non-finite values");
        return st;
    }

    MatrixXd solve(const MatrixXd& rhs, const VectorXd& initial = {}, const VectorXd& velocity = {}) const {
        return solve_state(rhs, initial, velocity).position;
    }

private:
    MatrixXd stiffness(Index level) const {
        if (a_.size() == 0) return stiffness_;
        MatrixXd k = stiffness_;
        k.diagonal() += a_.row(level).transpose();
        return k;
    }

    TimeGrid tg_;
    MatrixXd a_;
    MatrixXd stiffness_;
    std::optional<detail::StepFactor> fixed_;
};

struct WaveSolution {
    SpaceTimeField u;
    MatrixXd velocity;  // d_t u on Omega, levels x |Omega|
};

inline WaveSolution solve_linear_wave(const FracOperator& op, const WaveProblem& pb, const TimeGrid& tg) {
    require_wave_order(op.s);
    detail::check_problem(op, tg, pb.potential, pb.source, pb.exterior, pb.initial);
    detail::check_problem(op, tg, {}, {}, {}, pb.velocity);
    const IndexRange om = op.omega();
    const WaveStepper stepper(op, tg, omega_columns(pb.potential, om));
    const MatrixXd rhs = detail::reduced_source(op, tg, pb.source, pb.exterior);
    auto seg = [&](const VectorXd& v) { return v.size() ? VectorXd(v.segment(om.begin, om.size())) : VectorXd(); };
    auto st = stepper.solve_state(rhs, seg(pb.initial), seg(pb.velocity));
    WaveSolution sol;
    sol.u = pb.exterior.values.size() ? SpaceTimeField{pb.exterior.values, std::nullopt}
                                      : SpaceTimeField::zeros(tg, op.grid);
    sol.u.values.middleCols(om.begin, om.size()) += st.position;
    sol.velocity = std::move(st.velocity);
    return sol;
}

/// Second-order finite-difference time derivative of the Omega columns.
inline MatrixXd time_derivative_omega(const SpaceTimeField& u, const IndexRange& om, const TimeGrid& tg) {
    const MatrixXd v = u.values.middleCols(om.begin, om.size());
    const Index L = v.rows();
    MatrixXd d(L, v.cols());
    const double inv = 1.0 / (2.0 * tg.dt());
    d.row(0) = inv * (-3.0 * v.row(0) + 4.0 * v.row(1) - v.row(2));
    for (Index n = 1; n + 1 < L; ++n) d.row(n) = inv * (v.row(n + 1) - v.row(n - 1));
    d.row(L - 1) = inv * (3.0 * v.row(L - 1) - 4.0 * v.row(L - 2) + v.row(L - 3));
    return d;
}

/// E(t) = 1/2 ||d_t u||^2_{L^2(Omega)} + 1/2 ((-Delta)^s u, u)_{L^2}.
inline VectorXd energy_series(const SpaceTimeField& u, const FracOperator& op, const TimeGrid& tg) {
    const MatrixXd ut = time_derivative_omega(u, op.omega(), tg);
    const double h = op.grid.spacing();
    VectorXd e(u.values.rows());
    for (Index n = 0; n < e.size(); ++n) {
        const VectorXd row = u.values.row(n).transpose();
        e(n) = 0.5 * h * ut.row(n).squaredNorm() + 0.5 * quadratic_form(op, row);
    }
    return e;
}

/// Semilinear wave problem with zero initial data, by the same fixed-point
/// iteration as the diffusion solver with the Newmark propagator.
inline NonlinearResult solve_nonlinear_wave(const FracOperator& op, const Nonlinearity& q,
                                            const SpaceTimeField& f, const TimeGrid& tg,
                                            const SolverOptions& opts = {}) {
    WaveProblem free;
    free.exterior = f;
    const SpaceTimeField u0 = solve_linear_wave(op, free, tg).u;
    const WaveStepper stepper(op, tg);
    auto propagate = [&](const MatrixXd& src) { return stepper.solve(src); };
    return detail::picard(u0, q, op.omega(), propagate, opts);
}

}  // namespace fraclab
