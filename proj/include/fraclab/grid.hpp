#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>

#include "fraclab/errors.hpp"

namespace fraclab {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = Eigen::Index;

/// Physical open interval (lo, hi).
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double center() const { return 0.5 * (lo + hi); }
    double radius() const { return 0.5 * (hi - lo); }
    bool operator==(const Interval&) const = default;
};

/// Half-open range of lattice indices [begin, end).
struct IndexRange {
    Index begin = 0;
    Index end = 0;

    Index size() const { return end - begin; }
    bool contains(Index i) const { return i >= begin && i < end; }
    bool empty() const { return end <= begin; }
    bool operator==(const IndexRange&) const = default;
};

/// Gap in lattice steps between two disjoint ranges (0 if they touch or overlap).
inline Index index_gap(const IndexRange& a, const IndexRange& b) {
    if (a.end <= b.begin) return b.begin - (a.end - 1);
    if (b.end <= a.begin) return a.begin - (b.end - 1);
    return 0;
}

/// Uniform lattice x_i = -L + i h on the box [-L, L], with the interior set
/// Omega and the exterior control/measurement sets W and V snapped to indices.
class Grid {
public:
    Grid() = default;

    double box_halfwidth() const { return half_width_; }
    Index n_points() const { return n_points_; }
    double spacing() const { return h_; }
    double x(Index i) const { return -half_width_ + static_cast<double>(i) * h_; }

    const IndexRange& omega() const { return omega_; }
    const IndexRange& w_set() const { return w_set_; }
    const IndexRange& v_set() const { return v_set_; }

    const Interval& omega_interval() const { return omega_iv_; }
    const Interval& w_interval() const { return w_iv_; }
    const Interval& v_interval() const { return v_iv_; }

    VectorXd coordinates() const {
        VectorXd xs(n_points_);
        for (Index i = 0; i < n_points_; ++i) xs(i) = x(i);
        return xs;
    }

    /// Indices strictly inside the open interval.
    IndexRange snap(const Interval& iv) const {
        const double eps = 1e-9 * h_;
        Index begin = static_cast<Index>(std::ceil((iv.lo + half_width_) / h_ - 1e-9));
        while (begin < n_points_ && x(begin) <= iv.lo + eps) ++begin;
        Index end = begin;
        while (end < n_points_ && x(end) < iv.hi - eps) ++end;
        return {begin, end};
    }

    friend Grid build_grid(double, Index, Interval, Interval, Interval);

private:
    double half_width_ = 0.0;
    Index n_points_ = 0;
    double h_ = 0.0;
    IndexRange omega_, w_set_, v_set_;
    Interval omega_iv_, w_iv_, v_iv_;
};

namespace detail {

inline std::string describe(const char* name, const Interval& iv) {
    std::ostringstream os;
    os << name << "=(" << iv.lo << ", " << iv.hi << ")";
    return os.str();
}

}  // namespace detail

/// Builds the lattice and validates the set geometry. W and V may coincide;
/// both must keep a gap of at least two lattice steps from Omega.
inline Grid build_grid(double box_halfwidth, Index n_points, Interval omega, Interval w_set,
                       Interval v_set) {
    if (!(box_halfwidth > 0.0) || !std::isfinite(box_halfwidth))
        throw DomainError("box half-width must be positive and finite");
    if (n_points < 32) throw DomainError("grid needs at least 32 points");

    Grid g;
    g.half_width_ = box_halfwidth;
    g.n_points_ = n_points;
    g.h_ = 2.0 * box_halfwidth / static_cast<double>(n_points - 1);
    g.omega_iv_ = omega;
    g.w_iv_ = w_set;
    g.v_iv_ = v_set;

    auto check_inside = [&](const char* name, const Interval& iv) {
        if (!(iv.lo < iv.hi)) throw DomainError(detail::describe(name, iv) + " is empty");
        if (iv.lo <= -box_halfwidth || iv.hi >= box_halfwidth)
            throw DomainError(detail::describe(name, iv) + " leaves the box");
    };
    check_inside("Omega", omega);
    check_inside("W", w_set);
    check_inside("V", v_set);

    auto check_closure = [&](const char* name, const Interval& iv) {
        if (iv.lo <= omega.hi && omega.lo <= iv.hi)
            throw OverlapError("closure of " + detail::describe(name, iv) +
                               " meets the closure of " + detail::describe("Omega", omega));
    };
    check_closure("W", w_set);
    check_closure("V", v_set);

    g.omega_ = g.snap(omega);
    g.w_set_ = g.snap(w_set);
    g.v_set_ = g.snap(v_set);

    auto check_size = [](const char* name, const IndexRange& r) {
        if (r.size() < 4)
            throw DomainError(std::string(name) + " contains fewer than 4 grid points");
    };
    check_size("Omega", g.omega_);
    check_size("W", g.w_set_);
    check_size("V", g.v_set_);

    if (index_gap(g.omega_, g.w_set_) < 2 || index_gap(g.omega_, g.v_set_) < 2)
        throw OverlapError("exterior sets must stay at least two grid steps away from Omega");
    return g;
}

/// Uniform time lattice t_n = n dt on [0, T].
class TimeGrid {
public:
    TimeGrid() = default;
    TimeGrid(double horizon, Index n_steps) : horizon_(horizon), n_steps_(n_steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw DomainError("time horizon must be positive");
        if (n_steps < 8) throw DomainError("time grid needs at least 8 steps");
        dt_ = horizon / static_cast<double>(n_steps);
    }

    double horizon() const { return horizon_; }
    Index n_steps() const { return n_steps_; }
    Index n_levels() const { return n_steps_ + 1; }
    double dt() const { return dt_; }
    double t(Index n) const { return static_cast<double>(n) * dt_; }

    bool operator==(const TimeGrid&) const = default;

private:
    double horizon_ = 0.0;
    Index n_steps_ = 0;
    double dt_ = 0.0;
};

/// Samples of a space-time function: row n is time level t_n, column i is x_i.
struct SpaceTimeField {
    MatrixXd values;
    std::optional<IndexRange> support;

    static SpaceTimeField zeros(const TimeGrid& tg, const Grid& grid) {
        return {MatrixXd::Zero(tg.n_levels(), grid.n_points()), std::nullopt};
    }

    Index n_levels() const { return values.rows(); }
    Index n_points() const { return values.cols(); }

    /// Restriction to a column range, all time levels.
    auto restrict(const IndexRange& r) const { return values.middleCols(r.begin, r.size()); }
    auto restrict(const IndexRange& r) { return values.middleCols(r.begin, r.size()); }

    bool is_finite() const { return values.allFinite(); }

    /// True when every sample off `r` is exactly zero.
    bool vanishes_off(const IndexRange& r) const {
        if (r.begin > 0 && values.leftCols(r.begin).cwiseAbs().maxCoeff() != 0.0) return false;
        const Index tail = values.cols() - r.end;
        if (tail > 0 && values.rightCols(tail).cwiseAbs().maxCoeff() != 0.0) return false;
        return true;
    }

    double sup_norm() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
};

inline SpaceTimeField operator+(const SpaceTimeField& a, const SpaceTimeField& b) {
    if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
        throw ShapeError("field shapes differ");
    return {a.values + b.values, std::nullopt};
}

inline SpaceTimeField operator*(double alpha, const SpaceTimeField& a) {
    return {alpha * a.values, a.support};
}

/// Smooth compactly supported space-time bump: a spatial mollifier of the
/// given radius times a temporal mollifier on (t_on, t_off), scaled so that
/// the peak value equals `amplitude`.
struct BumpSpec {
    double center = 0.0;
    double radius = 0.0;
    double t_on = 0.0;
    double t_off = 0.0;
    double amplitude = 1.0;

    double value(double t, double x) const {
        const double r = (x - center) / radius;
        if (!(std::abs(r) < 1.0)) return 0.0;
        const double tau = (t - t_on) * (t_off - t);
        if (!(tau > 0.0)) return 0.0;
        const double half = 0.5 * (t_off - t_on);
        const double space = std::exp(1.0 - 1.0 / (1.0 - r * r));
        const double time = std::exp(1.0 - half * half / tau);
        return amplitude * space * time;
    }

    bool operator==(const BumpSpec&) const = default;
};

inline void check_bump_support(const Grid& grid, const TimeGrid& tg, const BumpSpec& b) {
    const Interval& w = grid.w_interval();
    if (!(b.radius > 0.0)) throw SupportError("bump radius must be positive");
    if (b.center - b.radius < w.lo || b.center + b.radius > w.hi)
        throw SupportError("bump support leaves W");
    if (!(b.t_on > 0.0 && b.t_on < b.t_off && b.t_off < tg.horizon()))
        throw SupportError("bump time window must satisfy 0 < t_on < t_off < T");
}

inline SpaceTimeField make_bump(const Grid& grid, const TimeGrid& tg, const BumpSpec& b) {
    check_bump_support(grid, tg, b);
    SpaceTimeField f = SpaceTimeField::zeros(tg, grid);
    const IndexRange w = grid.w_set();
    for (Index n = 0; n < tg.n_levels(); ++n)
        for (Index i = w.begin; i < w.end; ++i) f.values(n, i) = b.value(tg.t(n), grid.x(i));
    f.support = w;
    return f;
}

inline SpaceTimeField make_bump(const Grid& grid, const TimeGrid& tg, double center,
                                double radius, double t_on, double t_off, double amplitude) {
    return make_bump(grid, tg, BumpSpec{center, radius, t_on, t_off, amplitude});
}

}  // namespace fraclab
