#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/heat.hpp"
#include "fraclab/nonlinearity.hpp"
#include "fraclab/parallel.hpp"
#include "fraclab/wave.hpp"

namespace fraclab {

enum class Equation { heat, wave };

inline std::string to_string(Equation e) { return e == Equation::heat ? "heat" : "wave"; }

inline Equation parse_equation(const std::string& s) {
    if (s == "heat") return Equation::heat;
    if (s == "wave") return Equation::wave;
    throw ParamError("unknown equation '" + s + "' (expected heat or wave)");
}

/// Zero-potential solution operators of one equation on fixed grids, with
/// the step matrix factorized once.
class Propagator {
public:
    Propagator(std::shared_ptr<const FracOperator> op, const TimeGrid& tg, Equation eq)
        : op_(std::move(op)), tg_(tg), eq_(eq) {
        if (eq == Equation::heat) stepper_.emplace<HeatStepper>(*op_, tg_);
        else stepper_.emplace<WaveStepper>(*op_, tg_);
    }

    const FracOperator& op() const { return *op_; }
    std::shared_ptr<const FracOperator> op_ptr() const { return op_; }
    const TimeGrid& time_grid() const { return tg_; }
    Equation equation() const { return eq_; }

    /// Zero-data solution on Omega for a source on Omega (levels x |Omega|).
    MatrixXd source(const MatrixXd& src) const {
        if (eq_ == Equation::heat) return std::get<HeatStepper>(stepper_).solve(src);
        return std::get<WaveStepper>(stepper_).solve(src);
    }

    /// Free solution: no potential, no source, zero initial data, exterior g.
    SpaceTimeField free(const SpaceTimeField& g) const {
        detail::check_problem(*op_, tg_, {}, {}, g, {});
        const IndexRange om = op_->omega();
        SpaceTimeField u{g.values, std::nullopt};
        u.values.middleCols(om.begin, om.size()) += source(detail::reduced_source(*op_, tg_, {}, g));
        return u;
    }

    NonlinearResult nonlinear(const Nonlinearity& q, const SpaceTimeField& f, const SolverOptions& opts = {}) const {
        const SpaceTimeField u0 = free(f);
        auto propagate = [this](const MatrixXd& src) { return source(src); };
        return detail::picard(u0, q, op_->omega(), propagate, opts);
    }

private:
    std::shared_ptr<const FracOperator> op_;
    TimeGrid tg_;
    Equation eq_;
    std::variant<std::monostate, HeatStepper, WaveStepper> stepper_;
};

/// (-Delta)^s u sampled on V x time: levels x |V|.
struct DNData {
    MatrixXd values;
    std::string provenance;  // JSON text describing how the data was produced
};

inline DNData dn_map(const SpaceTimeField& u, const FracOperator& op) {
    if (u.values.cols() != op.n_points()) throw ShapeError("field width does not match the operator");
    const IndexRange v = op.grid.v_set();
    return {u.values * op.matrix.middleCols(v.begin, v.size()), ""};
}

/// Same, for a zero-exterior field given by its Omega columns.
inline MatrixXd dn_map_omega(const MatrixXd& v_omega, const FracOperator& op) {
    const IndexRange om = op.omega(), v = op.grid.v_set();
    return v_omega * op.matrix.block(om.begin, v.begin, om.size(), v.size());
}

/// Nonlinear forward model whose DN map is being studied.
struct Model {
    std::shared_ptr<const FracOperator> op;
    Nonlinearity q;
    Equation equation = Equation::heat;
    TimeGrid tg;
    SolverOptions opts;
};

inline DNData dn_of_input(const Propagator& prop, const Nonlinearity& q, const SpaceTimeField& f,
                          const SolverOptions& opts = {}) {
    return dn_map(prop.nonlinear(q, f, opts).u, prop.op());
}

inline DNData dn_of_input(const Model& model, const SpaceTimeField& f) {
    return dn_of_input(Propagator(model.op, model.tg, model.equation), model.q, f, model.opts);
}

/// First linearization: the free solution with exterior data g. It does not
/// involve q because dq/dz(., 0) = 0.
inline SpaceTimeField first_linearized(const FracOperator& op, const SpaceTimeField& g,
                                       const TimeGrid& tg, Equation eq) {
    if (eq == Equation::heat) {
        HeatProblem pb;
        pb.exterior = g;
        return solve_linear(op, pb, tg);
    }
    WaveProblem pb;
    pb.exterior = g;
    return solve_linear_wave(op, pb, tg).u;
}

using IndexSet = std::uint32_t;  // bit l set <=> input l belongs to the set

inline int set_size(IndexSet s) { return std::popcount(s); }

inline IndexSet full_set(int p) { return p >= 32 ? ~IndexSet{0} : (IndexSet{1} << p) - 1; }

/// All set partitions of `s`, each as a list of blocks. Every partition is
/// produced exactly once (the block holding the lowest element is chosen first).
inline std::vector<std::vector<IndexSet>> set_partitions(IndexSet s) {
    std::vector<std::vector<IndexSet>> out;
    std::vector<IndexSet> current;
    std::function<void(IndexSet)> rec = [&](IndexSet rest) {
        if (rest == 0) {
            out.push_back(current);
            return;
        }
        const IndexSet low = rest & (~rest + 1);
        const IndexSet others = rest & ~low;
        // enumerate subsets of `others`
        IndexSet sub = others;
        while (true) {
            current.push_back(low | sub);
            rec(others & ~sub);
            current.pop_back();
            if (sub == 0) break;
            sub = (sub - 1) & others;
        }
    };
    rec(s);
    return out;
}

/// Solutions U_S of the linearized hierarchy for inputs g_1..g_p. Singletons
/// are free solutions; |S| >= 2 have zero exterior and initial data.
struct LinearizedFamily {
    std::vector<SpaceTimeField> inputs;
    std::map<IndexSet, SpaceTimeField> solutions;

    bool has(IndexSet s) const { return s == 0 || solutions.count(s) > 0; }
    const SpaceTimeField& at(IndexSet s) const {
        auto it = solutions.find(s);
        if (it == solutions.end()) throw MissingBlockError("linearized solution for block " + std::to_string(s) + " is missing");
        return it->second;
    }
};

inline LinearizedFamily make_family(const Propagator& prop, std::vector<SpaceTimeField> inputs) {
    if (inputs.size() > 16) throw ParamError("at most 16 inputs are supported");
    LinearizedFamily fam;
    fam.inputs = std::move(inputs);
    for (std::size_t l = 0; l < fam.inputs.size(); ++l)
        fam.solutions.emplace(IndexSet{1} << l, prop.free(fam.inputs[l]));
    return fam;
}

/// Sum over set partitions pi of S with at least two blocks of
/// d^{|pi|} q / dz^{|pi|} (., 0) * prod_{B in pi} U_B, on Omega (levels x |Omega|).
inline MatrixXd partition_source(const Nonlinearity& q, IndexSet s, const LinearizedFamily& fam,
                                 const TimeGrid& tg, const Grid& grid) {
    const IndexRange om = grid.omega();
    MatrixXd total = MatrixXd::Zero(tg.n_levels(), om.size());
    std::map<int, MatrixXd> jets;
    for (const auto& part : set_partitions(s)) {
        if (part.size() < 2) continue;
        const int order = static_cast<int>(part.size());
        auto it = jets.find(order);
        if (it == jets.end())
            it = jets.emplace(order, q.jet(order, tg, grid).middleCols(om.begin, om.size())).first;
        if (it->second.cwiseAbs().maxCoeff() == 0.0) continue;
        MatrixXd prod = it->second;
        for (IndexSet b : part) prod.array() *= fam.at(b).values.middleCols(om.begin, om.size()).array();
        total += prod;
    }
    return total;
}

/// U_S for |S| >= 2: zero-data solve with source -partition_source; stored in the family.
inline const SpaceTimeField& linearized_solution(const Propagator& prop, const Nonlinearity& q, IndexSet s,
                                                 LinearizedFamily& fam) {
    if (set_size(s) < 2) throw ParamError("linearized_solution needs |S| >= 2");
    const FracOperator& op = prop.op();
    const IndexRange om = op.omega();
    const MatrixXd src = partition_source(q, s, fam, prop.time_grid(), op.grid);
    SpaceTimeField u = SpaceTimeField::zeros(prop.time_grid(), op.grid);
    u.values.middleCols(om.begin, om.size()) = prop.source(-src);
    u.support = om;
    return fam.solutions.insert_or_assign(s, std::move(u)).first->second;
}

/// Fills U_B for every B in the power set of S (by increasing size).
inline void complete_family(const Propagator& prop, const Nonlinearity& q, IndexSet s, LinearizedFamily& fam) {
    std::vector<IndexSet> subsets;
    for (IndexSet b = s;; b = (b - 1) & s) {
        if (set_size(b) >= 2 && !fam.has(b)) subsets.push_back(b);
        if (b == 0) break;
    }
    std::sort(subsets.begin(), subsets.end(), [](IndexSet a, IndexSet b) {
        return set_size(a) != set_size(b) ? set_size(a) < set_size(b) : a < b;
    });
    for (IndexSet b : subsets) linearized_solution(prop, q, b, fam);
}

/// Central mixed difference over the 2^p sign stencil:
///   sum_sigma (prod sigma) D(sigma eps/2) / eps^p,
/// where `evaluate(weights)` returns the DN data for the input sum_l w_l g_l.
/// Patterns are evaluated independently and reduced in a fixed order.
inline MatrixXd mixed_difference(const std::function<MatrixXd(const std::vector<double>&, IndexSet)>& evaluate,
                                 int p, double eps, int threads = 1) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw StencilError("stencil step must be positive");
    const std::size_t patterns = std::size_t{1} << p;
    std::vector<MatrixXd> values(patterns);
    parallel_for(patterns, threads, [&](std::size_t pat) {
        std::vector<double> w(static_cast<std::size_t>(p));
        for (int l = 0; l < p; ++l) w[l] = ((pat >> l) & 1u) ? -0.5 * eps : 0.5 * eps;
        values[pat] = evaluate(w, static_cast<IndexSet>(pat));
    });
    MatrixXd acc = MatrixXd::Zero(values[0].rows(), values[0].cols());
    for (std::size_t pat = 0; pat < patterns; ++pat) {
        const double sign = (std::popcount(pat) % 2 == 0) ? 1.0 : -1.0;
        acc += sign * values[pat];
    }
    return acc / std::pow(eps, p);
}

/// Mixed difference of the nonlinear DN map for the inputs g_l, l in S.
/// Approximates (-Delta)^s U_S on V_T with O(eps^2) error.
inline DNData mixed_difference_dn(const Model& model, const std::vector<SpaceTimeField>& g, IndexSet s,
                                  double eps, int threads = 1) {
    const Propagator prop(model.op, model.tg, model.equation);
    std::vector<const SpaceTimeField*> sel;
    for (std::size_t l = 0; l < g.size(); ++l)
        if ((s >> l) & 1u) sel.push_back(&g[l]);
    if (sel.empty()) throw ParamError("mixed difference needs a nonempty index set");

    const IndexRange om = model.op->omega();
    double linear_sup = 0.0;
    for (const auto* gl : sel) linear_sup += prop.free(*gl).values.middleCols(om.begin, om.size()).cwiseAbs().maxCoeff();
    if (0.5 * eps * linear_sup > model.q.delta())
        throw StencilError("stencil step too large: the linear response already leaves |u| <= delta");

    auto evaluate = [&](const std::vector<double>& w, IndexSet) {
        SpaceTimeField f = SpaceTimeField::zeros(model.tg, model.op->grid);
        for (std::size_t l = 0; l < sel.size(); ++l) f.values += w[l] * sel[l]->values;
        return dn_of_input(prop, model.q, f, model.opts).values;
    };
    DNData out{mixed_difference(evaluate, static_cast<int>(sel.size()), eps, threads), ""};
    out.provenance = "{\"kind\":\"mixed_difference\",\"eps\":" + std::to_string(eps) +
                     ",\"set\":" + std::to_string(s) + "}";
    return out;
}

}  // namespace fraclab
