#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fraclab/errors.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/linearize.hpp"
#include "fraclab/nonlinearity.hpp"
#include "fraclab/parallel.hpp"

namespace fraclab {

/// One term w * g of an exterior input.
struct WeightedBump {
    double weight = 1.0;
    BumpSpec bump;
};
using ExteriorInput = std::vector<WeightedBump>;

inline SpaceTimeField realize(const ExteriorInput& input, const Grid& grid, const TimeGrid& tg) {
    SpaceTimeField f = SpaceTimeField::zeros(tg, grid);
    for (const auto& wb : input) f.values += wb.weight * make_bump(grid, tg, wb.bump).values;
    f.support = grid.w_set();
    return f;
}

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t hash_input(const ExteriorInput& input, std::uint64_t seed) {
    std::uint64_t h = fnv1a(&seed, sizeof seed);
    for (const auto& wb : input) {
        const double v[6] = {wb.weight, wb.bump.center, wb.bump.radius, wb.bump.t_on, wb.bump.t_off, wb.bump.amplitude};
        h = fnv1a(v, sizeof v, h);
    }
    return h;
}

}  // namespace detail

/// Black-box access to DN data on the inversion grids (V x time levels).
class DNOracle {
public:
    virtual ~DNOracle() = default;
    /// DN data for the input; `label` names the measurement (used by file-backed oracles).
    virtual DNData measure(const ExteriorInput& input, const std::string& label) const = 0;
    /// Largest admissible exterior norm.
    virtual double budget() const { return std::numeric_limits<double>::infinity(); }
};

/// Analytic coefficient profile c(t, x) = spatial(x) * (1 + time_rate * t).
struct CoefficientSpec {
    std::string kind = "constant";  // constant | bump | gaussian | cosine
    double amplitude = 0.0;
    double center = 0.0;
    double width = 1.0;
    double offset = 0.0;
    double time_rate = 0.0;

    double spatial(double x) const {
        const double r = (x - center) / width;
        if (kind == "constant") return amplitude;
        if (kind == "bump") return offset + (std::abs(r) < 1.0 ? amplitude * std::exp(1.0 - 1.0 / (1.0 - r * r)) : 0.0);
        if (kind == "gaussian") return offset + amplitude * std::exp(-r * r);
        if (kind == "cosine") return offset + amplitude * std::cos(std::numbers::pi * r);
        throw ParamError("unknown coefficient kind '" + kind + "'");
    }
    double operator()(double t, double x) const { return spatial(x) * (1.0 + time_rate * t); }

    /// Samples on the lattice; time independent unless time_rate != 0.
    CoefficientField sample(const Grid& grid, const TimeGrid& tg) const {
        if (time_rate == 0.0) {
            VectorXd c(grid.n_points());
            for (Index i = 0; i < c.size(); ++i) c(i) = spatial(grid.x(i));
            return CoefficientField::spatial(c);
        }
        MatrixXd c(tg.n_levels(), grid.n_points());
        for (Index n = 0; n < c.rows(); ++n)
            for (Index i = 0; i < c.cols(); ++i) c(n, i) = (*this)(tg.t(n), grid.x(i));
        return CoefficientField::space_time(c);
    }
};

/// Hidden polynomial model q = sum_k c_k z^k / k! used by synthetic oracles.
struct GroundTruth {
    std::vector<std::pair<int, CoefficientSpec>> terms;
    double delta = 1.0;

    int order() const {
        int m = 2;
        for (const auto& t : terms) m = std::max(m, t.first);
        return m;
    }
    Nonlinearity build(const Grid& grid, const TimeGrid& tg) const {
        std::vector<PolyTerm> poly;
        for (const auto& [k, spec] : terms) poly.push_back({k, spec.sample(grid, tg)});
        return make_polynomial_q(std::move(poly), delta, order());
    }
    const CoefficientSpec* find(int k) const {
        for (const auto& t : terms)
            if (t.first == k) return &t.second;
        return nullptr;
    }
};

/// Geometry and discretization shared by the inversion and synthetic data.
struct ExperimentGeometry {
    double box = 3.0;
    Index n_points = 161;
    Interval omega{-1.0, 1.0};
    Interval w{1.2, 2.4};
    Interval v{-2.4, -1.2};
    double s = 0.5;
    double horizon = 1.0;
    Index n_steps = 64;
    Equation equation = Equation::heat;

    Grid grid(int refine = 1) const {
        return build_grid(box, refine * (n_points - 1) + 1, omega, w, v);
    }
    TimeGrid time_grid(int refine = 1) const { return TimeGrid(horizon, refine * n_steps); }
};

/// DN data computed from a hidden ground-truth model, optionally on refined
/// grids (decoupled mode) and with additive Gaussian noise that depends only
/// on the input and the seed.
class SyntheticOracle : public DNOracle {
public:
    SyntheticOracle(const ExperimentGeometry& geo, GroundTruth truth, int refine_space = 1, int refine_time = 1,
                    double budget = std::numeric_limits<double>::infinity(), double noise = 0.0,
                    std::uint64_t seed = 0)
        : geo_(geo), truth_(std::move(truth)), rs_(refine_space), rt_(refine_time), budget_(budget),
          noise_(noise), seed_(seed) {
        if (rs_ < 1 || rt_ < 1) throw ParamError("refinement factors must be positive");
        coarse_ = geo_.grid();
        tg_ = geo_.time_grid(rt_);
        op_ = std::make_shared<const FracOperator>(assemble(geo_.grid(rs_), geo_.s));
        q_ = truth_.build(op_->grid, tg_);
        prop_ = std::make_shared<const Propagator>(op_, tg_, geo_.equation);
        opts_.tol_rel = 1e-13;
        opts_.max_iter = 200;
    }

    double budget() const override { return budget_; }
    const Nonlinearity& model() const { return q_; }
    const FracOperator& op() const { return *op_; }
    const TimeGrid& time_grid() const { return tg_; }

    DNData measure(const ExteriorInput& input, const std::string& label) const override {
        const SpaceTimeField f = realize(input, op_->grid, tg_);
        const double norm = ext_norm(f, *op_, tg_);
        if (norm > budget_)
            throw SmallnessError("oracle refuses input '" + label + "': exterior norm " + std::to_string(norm) +
                                 " exceeds the budget " + std::to_string(budget_));
        const NonlinearResult r = prop_->nonlinear(q_, f, opts_);
        if (!r.converged) throw ConvergenceError("oracle solve did not converge for '" + label + "'");
        const MatrixXd fine = dn_map(r.u, *op_).values;

        const IndexRange cv = coarse_.v_set(), fv = op_->grid.v_set();
        DNData out;
        out.values.resize(geo_.n_steps + 1, cv.size());
        for (Index n = 0; n <= geo_.n_steps; ++n)
            for (Index i = 0; i < cv.size(); ++i) out.values(n, i) = fine(rt_ * n, rs_ * (cv.begin + i) - fv.begin);
        if (noise_ > 0.0) {
            std::mt19937_64 rng(detail::hash_input(input, seed_));
            std::normal_distribution<double> nd(0.0, noise_);
            for (Index n = 0; n < out.values.rows(); ++n)
                for (Index i = 0; i < out.values.cols(); ++i) out.values(n, i) += nd(rng);
        }
        out.provenance = "{\"oracle\":\"synthetic\",\"label\":\"" + label + "\",\"refine_space\":" +
                         std::to_string(rs_) + ",\"refine_time\":" + std::to_string(rt_) + "}";
        return out;
    }

private:
    ExperimentGeometry geo_;
    GroundTruth truth_;
    int rs_, rt_;
    double budget_, noise_;
    std::uint64_t seed_;
    Grid coarse_;
    TimeGrid tg_;
    std::shared_ptr<const FracOperator> op_;
    Nonlinearity q_;
    std::shared_ptr<const Propagator> prop_;
    SolverOptions opts_;
};

/// Inputs and numerical parameters of the jet recovery.
struct RecoveryConfig {
    int order = 2;
    std::map<int, std::vector<std::vector<BumpSpec>>> tuples;  // order k -> list of k-tuples
    std::map<int, double> eps;                                  // stencil step per order (default if absent)
    std::map<int, double> lambda;                               // relative Tikhonov weight per order
    bool time_independent = true;
    double delta = 1.0;  // radius of the admissible ball assumed for the default step
    std::string data_mode = "inverse-crime";
    int threads = 1;
};

inline constexpr double default_recovery_lambda = 1e-7;

/// Spatially staggered bumps in W with overlapping time windows.
inline std::vector<std::vector<BumpSpec>> default_tuples(const Grid& grid, const TimeGrid& tg, int k, int count) {
    const Interval w = grid.w_interval();
    const double width = w.hi - w.lo;
    const double radius = 0.28 * width;
    const double T = tg.horizon();
    const double centers[4] = {w.lo + 0.3 * width, w.hi - 0.3 * width, w.lo + 0.5 * width, w.lo + 0.4 * width};
    const std::pair<double, double> windows[3] = {{0.05 * T, 0.6 * T}, {0.15 * T, 0.85 * T}, {0.03 * T, 0.95 * T}};
    std::vector<std::vector<BumpSpec>> out;
    for (int j = 0; j < count; ++j) {
        std::vector<BumpSpec> tuple;
        for (int l = 0; l < k; ++l) {
            const auto& win = windows[(j + 2 * l) % 3];
            tuple.push_back({centers[(j + l) % 4], radius, win.first, win.second, 1.0});
        }
        out.push_back(std::move(tuple));
    }
    return out;
}

inline void validate(const RecoveryConfig& cfg, const Grid& grid, const TimeGrid& tg) {
    if (cfg.order < 2) throw ParamError("jet order m must be at least 2");
    if (!(cfg.delta > 0.0)) throw ParamError("delta must be positive");
    for (int k = 2; k <= cfg.order; ++k) {
        auto it = cfg.tuples.find(k);
        if (it == cfg.tuples.end() || it->second.empty())
            throw ParamError("no input tuples for order " + std::to_string(k));
        for (const auto& tuple : it->second) {
            if (static_cast<int>(tuple.size()) != k)
                throw ParamError("order " + std::to_string(k) + " tuples must contain exactly k bumps");
            double latest_on = 0.0, earliest_off = tg.horizon();
            for (const auto& b : tuple) {
                check_bump_support(grid, tg, b);
                latest_on = std::max(latest_on, b.t_on);
                earliest_off = std::min(earliest_off, b.t_off);
            }
            if (cfg.time_independent && !(latest_on < earliest_off))
                throw ParamError("time-independent recovery needs a common time at which every input of a tuple "
                                 "is nonzero");
        }
        auto e = cfg.eps.find(k);
        if (e != cfg.eps.end() && !(e->second > 0.0)) throw ParamError("stencil step must be positive");
        auto l = cfg.lambda.find(k);
        if (l != cfg.lambda.end() && !(l->second >= 0.0)) throw ParamError("lambda must be nonnegative");
    }
}

/// Result of the regularized source inversion.
struct SourceInversionResult {
    CoefficientField coefficient;  // full grid, zero off Omega
    double residual = 0.0;         // ||G c - D|| in L^2(V_T), summed over tuples
    double relative_residual = 0.0;
    double lambda_relative = 0.0;
    double lambda = 0.0;           // absolute weight on ||c||^2
    double condition = 0.0;        // sigma_max / sigma_min of the stacked forward map
    Index rank = 0;
    Index unknowns = 0;
    std::string method = "dense column assembly, SVD-filtered Tikhonov";
    std::string data_mode;
};

namespace detail {

/// Stacked forward matrix for unknown c on Omega (or Omega x levels 1..N):
/// column = DN trace (rows 1..N, weighted by sqrt(dt h)) of the zero-data
/// solution with source -c P_j.
inline MatrixXd forward_matrix(const Propagator& prop, const std::vector<MatrixXd>& products, bool time_independent,
                               int threads) {
    const FracOperator& op = prop.op();
    const TimeGrid& tg = prop.time_grid();
    const IndexRange om = op.omega(), vs = op.grid.v_set();
    const Index n_om = om.size(), n_v = vs.size(), steps = tg.n_steps();
    const Index block_rows = steps * n_v;
    const Index n_unknown = time_independent ? n_om : steps * n_om;
    const Index rows = block_rows * static_cast<Index>(products.size());
    if (static_cast<double>(rows) * static_cast<double>(n_unknown) > 6e7)
        throw ParamError("inversion too large for dense assembly; reduce the grid or the number of tuples");
    const double w = std::sqrt(tg.dt() * op.grid.spacing());
    const MatrixXd om_to_v = op.matrix.block(om.begin, vs.begin, n_om, n_v);
    MatrixXd g = MatrixXd::Zero(rows, n_unknown);

    auto flatten = [&](const MatrixXd& dn, Index row0, Index col) {
        for (Index n = 1; n <= steps; ++n) g.block(row0 + (n - 1) * n_v, col, n_v, 1) = w * dn.row(n).transpose();
    };

    if (time_independent) {
        const std::size_t jobs = products.size() * static_cast<std::size_t>(n_om);
        parallel_for(jobs, threads, [&](std::size_t job) {
            const std::size_t j = job / static_cast<std::size_t>(n_om);
            const Index i = static_cast<Index>(job % static_cast<std::size_t>(n_om));
            MatrixXd src = MatrixXd::Zero(tg.n_levels(), n_om);
            src.col(i) = -products[j].col(i);
            flatten(prop.source(src) * om_to_v, static_cast<Index>(j) * block_rows, i);
        });
    } else {
        // unit impulse at level 1, site i; responses are shift invariant in time
        std::vector<MatrixXd> impulse(static_cast<std::size_t>(n_om));
        parallel_for(impulse.size(), threads, [&](std::size_t i) {
            MatrixXd src = MatrixXd::Zero(tg.n_levels(), n_om);
            src(1, static_cast<Index>(i)) = 1.0;
            impulse[i] = prop.source(src) * om_to_v;
        });
        for (std::size_t j = 0; j < products.size(); ++j)
            for (Index n = 1; n <= steps; ++n)
                for (Index i = 0; i < n_om; ++i) {
                    const double p = -products[j](n, i);
                    if (p == 0.0) continue;
                    const Index col = (n - 1) * n_om + i;
                    for (Index m = n; m <= steps; ++m)
                        g.block(static_cast<Index>(j) * block_rows + (m - 1) * n_v, col, n_v, 1) =
                            (w * p) * impulse[static_cast<std::size_t>(i)].row(m - n + 1).transpose();
                }
    }
    return g;
}

inline VectorXd stack_data(const std::vector<MatrixXd>& data, const TimeGrid& tg, double w) {
    const Index steps = tg.n_steps();
    const Index n_v = data.empty() ? 0 : data[0].cols();
    VectorXd r(static_cast<Index>(data.size()) * steps * n_v);
    for (std::size_t j = 0; j < data.size(); ++j)
        for (Index n = 1; n <= steps; ++n)
            r.segment((static_cast<Index>(j) * steps + (n - 1)) * n_v, n_v) = w * data[j].row(n).transpose();
    return r;
}

}  // namespace detail

/// Minimizes sum_j ||dn_map(solve(-c P_j)) - D_j||^2 + lambda ||c||^2 with
/// lambda = lambda_relative * trace(G^T G) / n_unknowns. `products` and
/// `data` are (levels x |Omega|) and (levels x |V|) arrays.
inline SourceInversionResult source_inversion(const std::vector<MatrixXd>& products, const std::vector<MatrixXd>& data,
                                              const Propagator& prop, double lambda_relative, bool time_independent,
                                              int threads = 1) {
    if (products.empty() || products.size() != data.size()) throw ShapeError("need one data array per product");
    if (!(lambda_relative >= 0.0)) throw ParamError("lambda must be nonnegative");
    const FracOperator& op = prop.op();
    const TimeGrid& tg = prop.time_grid();
    const IndexRange om = op.omega();
    for (std::size_t j = 0; j < products.size(); ++j) {
        if (products[j].rows() != tg.n_levels() || products[j].cols() != om.size())
            throw ShapeError("product must be sampled on Omega x time levels");
        if (data[j].rows() != tg.n_levels() || data[j].cols() != op.grid.v_set().size())
            throw ShapeError("DN data must be sampled on V x time levels");
    }

    const MatrixXd g = detail::forward_matrix(prop, products, time_independent, threads);
    const VectorXd r = detail::stack_data(data, tg, std::sqrt(tg.dt() * op.grid.spacing()));
    const Index n_u = g.cols();

    SourceInversionResult res;
    res.unknowns = n_u;
    res.lambda_relative = lambda_relative;
    Eigen::BDCSVD<MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    const double tol = static_cast<double>(std::max(g.rows(), g.cols())) * std::numeric_limits<double>::epsilon() * smax;
    res.rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++res.rank;
    res.condition = (sv.size() && sv(sv.size() - 1) > 0.0) ? smax / sv(sv.size() - 1)
                                                           : std::numeric_limits<double>::infinity();
    const VectorXd ur = smax > 0.0 ? VectorXd(svd.matrixU().transpose() * r) : VectorXd::Zero(sv.size());
    res.lambda_relative = lambda_relative;
    res.lambda = lambda_relative * sv.squaredNorm() / static_cast<double>(n_u);

    VectorXd c = VectorXd::Zero(n_u);
    if (smax > 0.0) {
        if (lambda_relative == 0.0 && res.rank < n_u)
            throw RankDeficientError("stacked forward map has numerical rank " + std::to_string(res.rank) + " < " +
                                     std::to_string(n_u) + " unknowns; use a positive lambda");
        VectorXd filtered(sv.size());
        for (Index i = 0; i < sv.size(); ++i) {
            const double denom = sv(i) * sv(i) + res.lambda;
            filtered(i) = denom > 0.0 ? sv(i) * ur(i) / denom : 0.0;
        }
        c = svd.matrixV() * filtered;
    }
    res.residual = (g * c - r).norm();
    const double rn = r.norm();
    res.relative_residual = rn > 0.0 ? res.residual / rn : 0.0;

    if (time_independent) {
        VectorXd full = VectorXd::Zero(op.n_points());
        full.segment(om.begin, om.size()) = c;
        res.coefficient = CoefficientField::spatial(full);
    } else {
        MatrixXd full = MatrixXd::Zero(tg.n_levels(), op.n_points());
        for (Index n = 1; n <= tg.n_steps(); ++n)
            full.row(n).segment(om.begin, om.size()) = c.segment((n - 1) * om.size(), om.size()).transpose();
        full.row(0) = full.row(1);
        res.coefficient = CoefficientField::space_time(full);
    }
    return res;
}

/// Diagnostics and estimate for one jet order.
struct JetOrderResult {
    int order = 2;
    CoefficientField coefficient;
    SourceInversionResult inversion;
    double eps = 0.0;
    int retries = 0;
    VectorXd sensitivity;  // sum_j int |prod_l U_l^{(j)}| dt on the full grid
    std::vector<double> measured_norms;  // ||D_j|| before the known-part subtraction
    std::vector<double> data_norms;      // ||D_j - dn_map(W_j^known)||
};

struct JetEstimate {
    std::vector<JetOrderResult> orders;  // k = 2, 3, ... in order
    bool complete = false;
    int failed_order = 0;
    std::string failure;  // "<ErrorKind>: message" when incomplete

    const JetOrderResult* find(int k) const {
        for (const auto& o : orders)
            if (o.order == k) return &o;
        return nullptr;
    }
};

/// Default stencil step min(0.05, delta / (4 m max_l sup|U_l|)) with U_l the
/// free responses (the gain of the linear solve times sup|g_l|).
inline double default_stencil_step(double delta, int m, double max_linear_sup) {
    if (!(max_linear_sup > 0.0)) return 0.05;
    return std::min(0.05, delta / (4.0 * m * max_linear_sup));
}

/// Recovers d^k q / dz^k (., 0) from the oracle, given the lower jets c_2..c_{k-1}.
inline JetOrderResult recover_jet_k(const DNOracle& oracle, int k, const std::vector<CoefficientField>& lower_jets,
                                    const RecoveryConfig& cfg, const Propagator& prop) {
    const FracOperator& op = prop.op();
    const Grid& grid = op.grid;
    const TimeGrid& tg = prop.time_grid();
    const IndexRange om = grid.omega();
    if (static_cast<int>(lower_jets.size()) != k - 2)
        throw ParamError("recovering order " + std::to_string(k) + " needs jets 2.." + std::to_string(k - 1));
    auto tup = cfg.tuples.find(k);
    if (tup == cfg.tuples.end() || tup->second.empty()) throw ParamError("no input tuples for this order");
    const auto& tuples = tup->second;

    // Polynomial model of the known lower jets.
    std::vector<PolyTerm> known_terms;
    for (int j = 2; j < k; ++j) known_terms.push_back({j, lower_jets[static_cast<std::size_t>(j - 2)]});
    const Nonlinearity known = make_polynomial_q(known_terms, cfg.delta, std::max(2, k));

    JetOrderResult out;
    out.order = k;
    out.sensitivity = VectorXd::Zero(grid.n_points());
    const IndexSet full = full_set(k);

    std::vector<LinearizedFamily> families;
    double max_linear = 0.0;
    for (const auto& tuple : tuples) {
        std::vector<SpaceTimeField> g;
        for (const auto& b : tuple) g.push_back(make_bump(grid, tg, b));
        families.push_back(make_family(prop, std::move(g)));
        for (int l = 0; l < k; ++l)
            max_linear = std::max(max_linear, families.back().at(IndexSet{1} << l).restrict(om).cwiseAbs().maxCoeff());
    }
    auto e = cfg.eps.find(k);
    double eps = e != cfg.eps.end() ? e->second : default_stencil_step(cfg.delta, cfg.order, max_linear);

    std::vector<MatrixXd> measured(tuples.size());
    for (int attempt = 0;; ++attempt) {
        try {
            parallel_for(tuples.size(), cfg.threads, [&](std::size_t j) {
                auto evaluate = [&](const std::vector<double>& w, IndexSet pattern) {
                    ExteriorInput input;
                    for (int l = 0; l < k; ++l) input.push_back({w[static_cast<std::size_t>(l)], tuples[j][static_cast<std::size_t>(l)]});
                    std::string label = "k" + std::to_string(k) + "_t" + std::to_string(j) + "_e" + std::to_string(attempt) + "_";
                    for (int l = 0; l < k; ++l) label += ((pattern >> l) & 1u) ? 'm' : 'p';
                    return oracle.measure(input, label).values;
                };
                measured[j] = mixed_difference(evaluate, k, eps, 1);
            });
            break;
        } catch (const SmallnessError&) {
            if (attempt >= 1) throw;
            eps *= 0.5;
            ++out.retries;
        }
    }
    out.eps = eps;

    std::vector<MatrixXd> products(tuples.size()), residual_data(tuples.size());
    for (std::size_t j = 0; j < tuples.size(); ++j) {
        LinearizedFamily& fam = families[j];
        complete_family(prop, known, full, fam);
        residual_data[j] = measured[j] - dn_map(fam.at(full), op).values;
        MatrixXd p = MatrixXd::Ones(tg.n_levels(), om.size());
        for (int l = 0; l < k; ++l) p.array() *= fam.at(IndexSet{1} << l).restrict(om).array();
        for (Index n = 1; n < tg.n_levels(); ++n)
            out.sensitivity.segment(om.begin, om.size()) += tg.dt() * p.row(n).cwiseAbs().transpose();
        products[j] = std::move(p);
        out.measured_norms.push_back(measured[j].norm());
        out.data_norms.push_back(residual_data[j].norm());
    }

    auto l = cfg.lambda.find(k);
    const double lam = l != cfg.lambda.end() ? l->second : default_recovery_lambda;
    out.inversion = source_inversion(products, residual_data, prop, lam, cfg.time_independent, cfg.threads);
    out.inversion.data_mode = cfg.data_mode;
    out.coefficient = out.inversion.coefficient;
    return out;
}

/// Induction over k = 2..m; c_0 = c_1 = 0 hold by assumption. Stops at the
/// first failing order and returns the partial estimate with a failure tag.
inline JetEstimate recover_all(const DNOracle& oracle, const RecoveryConfig& cfg, const Propagator& prop) {
    validate(cfg, prop.op().grid, prop.time_grid());
    JetEstimate est;
    std::vector<CoefficientField> jets;
    for (int k = 2; k <= cfg.order; ++k) {
        try {
            est.orders.push_back(recover_jet_k(oracle, k, jets, cfg, prop));
        } catch (const Error& err) {
            est.failed_order = k;
            est.failure = err.kind() + ": " + err.what();
            return est;
        }
        jets.push_back(est.orders.back().coefficient);
    }
    est.complete = true;
    return est;
}

/// Relative L^2(Omega) (or L^2(Omega_T)) error of a recovered coefficient.
inline double relative_error(const CoefficientField& estimate, const CoefficientField& truth, const Grid& grid,
                             const TimeGrid& tg) {
    const IndexRange om = grid.omega();
    const MatrixXd a = estimate.sample(tg.n_levels()).middleCols(om.begin, om.size());
    const MatrixXd b = truth.sample(tg.n_levels()).middleCols(om.begin, om.size());
    const double nb = b.norm();
    return nb > 0.0 ? (a - b).norm() / nb : a.norm();
}

}  // namespace fraclab
