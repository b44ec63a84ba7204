#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fraclab/fracop.hpp"
#include "fraclab/heat.hpp"
#include "fraclab/inverse.hpp"
#include "fraclab/io.hpp"
#include "fraclab/linearize.hpp"
#include "fraclab/runge.hpp"
#include "fraclab/verify.hpp"
#include "fraclab/wave.hpp"

namespace fraclab::app {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int exit_ok = 0;
inline constexpr int exit_verify_failed = 1;
inline constexpr int exit_config = 2;
inline constexpr int exit_module = 3;

struct RunOptions {
    fs::path config;
    std::optional<fs::path> out;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    int threads = 1;
};

/// Files produced by a task, written only once the task has finished.
struct Outputs {
    std::vector<std::pair<std::string, std::string>> files;
    int status = exit_ok;
    std::optional<std::pair<std::string, std::string>> error;  // kind, message

    void add(std::string name, std::string content) { files.emplace_back(std::move(name), std::move(content)); }
};

namespace detail {

inline std::string where(const std::string& ctx, const std::string& key) { return ctx.empty() ? key : ctx + "." + key; }

template <class T>
T get(const json& j, const std::string& key, T fallback, const std::string& ctx = "") {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("'" + where(ctx, key) + "' has the wrong type");
    }
}

template <class T>
T require(const json& j, const std::string& key, const std::string& ctx = "") {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null())
        throw ConfigError("missing required key '" + where(ctx, key) + "'");
    return get<T>(j, key, T{}, ctx);
}

inline const json& block(const json& cfg, const std::string& key) {
    static const json empty = json::object();
    if (!cfg.contains(key)) return empty;
    if (!cfg.at(key).is_object()) throw ConfigError("'" + key + "' must be a section");
    return cfg.at(key);
}

inline Interval interval(const json& j, const std::string& key, const std::string& ctx) {
    const auto v = require<std::vector<double>>(j, key, ctx);
    if (v.size() != 2) throw ConfigError("'" + where(ctx, key) + "' must be [lo, hi]");
    return {v[0], v[1]};
}

inline BumpSpec bump(const json& j, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError("'" + ctx + "' must be a bump object");
    return {require<double>(j, "center", ctx), require<double>(j, "radius", ctx), require<double>(j, "t_on", ctx),
            require<double>(j, "t_off", ctx), get<double>(j, "amplitude", 1.0, ctx)};
}

inline std::vector<BumpSpec> bumps(const json& j, const std::string& ctx) {
    if (!j.is_array()) throw ConfigError("'" + ctx + "' must be a list of bumps");
    std::vector<BumpSpec> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(bump(j[i], ctx + "[" + std::to_string(i) + "]"));
    return out;
}

inline json bump_json(const BumpSpec& b) {
    return {{"center", b.center}, {"radius", b.radius}, {"t_on", b.t_on}, {"t_off", b.t_off}, {"amplitude", b.amplitude}};
}

inline CoefficientSpec coefficient_spec(const json& j, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError("'" + ctx + "' must be a coefficient object");
    CoefficientSpec c;
    c.kind = get<std::string>(j, "kind", "constant", ctx);
    if (c.kind != "constant" && c.kind != "bump" && c.kind != "gaussian" && c.kind != "cosine")
        throw ConfigError("'" + ctx + ".kind' must be constant, bump, gaussian or cosine");
    c.amplitude = get<double>(j, "amplitude", 0.0, ctx);
    c.center = get<double>(j, "center", 0.0, ctx);
    c.width = get<double>(j, "width", 1.0, ctx);
    c.offset = get<double>(j, "offset", 0.0, ctx);
    c.time_rate = get<double>(j, "time_rate", 0.0, ctx);
    if (!(c.width > 0.0)) throw ConfigError("'" + ctx + ".width' must be positive");
    return c;
}

/// Coefficient given either analytically or as a CSV file (one row, or one row per time level).
struct CoefficientInput {
    std::optional<CoefficientSpec> spec;
    std::optional<fs::path> file;

    CoefficientField build(const Grid& grid, const TimeGrid& tg) const {
        if (spec) return spec->sample(grid, tg);
        const io::CsvTable t = io::read_csv(*file);
        if (t.values.cols() != grid.n_points())
            throw ConfigError(file->string() + ": expected " + std::to_string(grid.n_points()) + " columns");
        if (t.values.rows() == 1) return CoefficientField::spatial(t.values.row(0).transpose());
        if (t.values.rows() == tg.n_levels()) return CoefficientField::space_time(t.values);
        throw ConfigError(file->string() + ": expected 1 or " + std::to_string(tg.n_levels()) + " rows");
    }
};

inline CoefficientInput coefficient(const json& j, const std::string& ctx, const fs::path& base) {
    if (j.is_object() && j.contains("file")) {
        const fs::path p = base / require<std::string>(j, "file", ctx);
        if (!fs::exists(p)) throw ConfigError("coefficient file not found: " + p.string());
        return {std::nullopt, p};
    }
    return {coefficient_spec(j, ctx), std::nullopt};
}

struct ModelSpec {
    std::vector<std::pair<int, CoefficientInput>> terms;
    double delta = 1.0;
    int order = 2;

    bool empty() const { return terms.empty(); }

    Nonlinearity build(const Grid& grid, const TimeGrid& tg) const {
        std::vector<PolyTerm> poly;
        for (const auto& [k, c] : terms) poly.push_back({k, c.build(grid, tg)});
        return make_polynomial_q(std::move(poly), delta, order);
    }

    GroundTruth truth() const {
        GroundTruth t;
        t.delta = delta;
        for (const auto& [k, c] : terms) {
            if (!c.spec) throw ConfigError("synthetic recovery needs analytic coefficients, not files");
            t.terms.push_back({k, *c.spec});
        }
        return t;
    }
};

inline ModelSpec model_spec(const json& model, const fs::path& base) {
    ModelSpec m;
    json terms = json::array();
    json source = model;
    fs::path term_base = base;
    if (model.contains("q_file")) {
        const fs::path p = base / require<std::string>(model, "q_file", "model");
        if (!fs::exists(p)) throw ConfigError("nonlinearity file not found: " + p.string());
        source = io::load_config(p);
        term_base = p.parent_path();
        terms = source.contains("terms") ? source["terms"] : json::array();
    } else if (model.contains("q")) {
        terms = model["q"];
    }
    if (!terms.is_array()) throw ConfigError("'model.q' must be a list of {k, coefficient} terms");
    int kmax = 2;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const std::string ctx = "model.q[" + std::to_string(i) + "]";
        const int k = require<int>(terms[i], "k", ctx);
        if (k < 2) throw ConfigError("'" + ctx + ".k' must be at least 2");
        if (!terms[i].contains("coefficient")) throw ConfigError("missing required key '" + ctx + ".coefficient'");
        m.terms.push_back({k, coefficient(terms[i]["coefficient"], ctx + ".coefficient", term_base)});
        kmax = std::max(kmax, k);
    }
    m.delta = get<double>(source, "delta", get<double>(model, "delta", 1.0, "model"), "model");
    m.order = get<int>(source, "m", get<int>(model, "order", kmax, "model"), "model");
    if (!(m.delta > 0.0)) throw ConfigError("'model.delta' must be positive");
    if (m.order < 2) throw ConfigError("'model.order' must be at least 2");
    return m;
}

/// Everything shared by the tasks, parsed before any computation.
struct Setup {
    json cfg;
    std::string task;
    std::uint64_t seed = 0;
    int threads = 1;
    fs::path base;
    fs::path out;
    ExperimentGeometry geo;
    ModelSpec model;
    json prov;

    Grid grid() const { return geo.grid(); }
    TimeGrid time_grid() const { return geo.time_grid(); }
};

inline Setup setup(const json& cfg, const RunOptions& opts) {
    Setup st;
    st.cfg = cfg;
    st.task = require<std::string>(cfg, "task");
    static const std::vector<std::string> tasks = {"solve-heat", "solve-wave", "dn", "linearize", "runge", "recover",
                                                   "verify"};
    if (std::find(tasks.begin(), tasks.end(), st.task) == tasks.end())
        throw ConfigError("unknown task '" + st.task + "'");
    st.seed = opts.seed ? *opts.seed : get<std::uint64_t>(cfg, "seed", verify::Options{}.seed);
    st.threads = std::max(1, opts.threads);
    st.base = opts.config.has_parent_path() ? opts.config.parent_path() : fs::path(".");
    if (opts.out) st.out = *opts.out;
    else if (cfg.contains("out")) st.out = st.base / get<std::string>(cfg, "out", "");
    else st.out = "fraclab_out";

    if (st.task != "verify") {
        const json& g = block(cfg, "grid");
        if (g.empty()) throw ConfigError("missing required section 'grid'");
        st.geo.box = get<double>(g, "L", 3.0, "grid");
        st.geo.n_points = get<Index>(g, "N", 161, "grid");
        st.geo.omega = interval(g, "omega", "grid");
        st.geo.w = interval(g, "w", "grid");
        st.geo.v = interval(g, "v", "grid");
        const json& t = block(cfg, "time");
        st.geo.horizon = get<double>(t, "T", 1.0, "time");
        st.geo.n_steps = get<Index>(t, "n_steps", 64, "time");
        st.geo.s = require<double>(block(cfg, "operator"), "s", "operator");
        const json& m = block(cfg, "model");
        std::string eq = get<std::string>(m, "equation", "heat", "model");
        if (st.task == "solve-heat") eq = "heat";
        if (st.task == "solve-wave") eq = "wave";
        if (eq != "heat" && eq != "wave") throw ConfigError("'model.equation' must be heat or wave");
        st.geo.equation = parse_equation(eq);
        st.model = model_spec(m, st.base);
    }
    json hashed = cfg;
    if (opts.noise) hashed["recover"]["noise"] = *opts.noise;
    st.cfg = hashed;
    st.prov = io::provenance(hashed, st.seed, st.task);
    return st;
}

inline json with_prov(const Setup& st, json body) {
    body["provenance"] = st.prov;
    return body;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline MatrixXd dense(const CoefficientField& c, const TimeGrid& tg) { return c.sample(tg.n_levels()); }

/// Values on Omega, zero elsewhere.
inline VectorXd omega_profile(const CoefficientInput& c, const Grid& grid, const TimeGrid& tg) {
    const MatrixXd full = c.build(grid, tg).sample(1);
    VectorXd v = VectorXd::Zero(grid.n_points());
    const IndexRange om = grid.omega();
    v.segment(om.begin, om.size()) = full.row(0).segment(om.begin, om.size()).transpose();
    return v;
}

inline SpaceTimeField exterior(const std::vector<BumpSpec>& bs, const Grid& grid, const TimeGrid& tg) {
    SpaceTimeField f = SpaceTimeField::zeros(tg, grid);
    for (const auto& b : bs) f.values += make_bump(grid, tg, b).values;
    f.support = grid.w_set();
    return f;
}

inline SolverOptions solver_options(const json& cfg) {
    const json& s = block(cfg, "solver");
    SolverOptions o;
    o.tol_rel = get<double>(s, "tol_rel", 1e-12, "solver");
    o.max_iter = get<int>(s, "max_iter", 200, "solver");
    return o;
}

inline json nonlinear_json(const NonlinearResult& r) {
    return {{"iterations", r.iterations}, {"converged", r.converged}, {"updates", r.updates}, {"ratios", r.ratios()}};
}

inline void add_operator_export(const Setup& st, const FracOperator& op, Outputs& out) {
    std::vector<std::string> header;
    for (Index i = 0; i < op.n_points(); ++i) header.push_back("x=" + io::format_double(op.grid.x(i)));
    out.add("operator.csv", io::csv_text(st.prov, header, op.matrix));
    out.add("operator.json", dump(with_prov(st, {{"s", op.s}, {"grid", io::grid_json(op.grid, st.time_grid(), op.s)},
                                                  {"normalization", fractional_constant(op.s)},
                                                  {"layout", "row i is (-Delta)^s applied to the hat function at x_i"}})));
}

// ---- tasks -----------------------------------------------------------------

inline Outputs task_solve(const Setup& st) {
    const json& p = block(st.cfg, "problem");
    const Grid grid = st.grid();
    const TimeGrid tg = st.time_grid();
    const bool wave = st.geo.equation == Equation::wave;
    const auto bs = p.contains("exterior") ? bumps(p["exterior"], "problem.exterior") : std::vector<BumpSpec>{};
    std::optional<CoefficientInput> potential, source, initial, velocity;
    if (p.contains("potential")) potential = coefficient(p["potential"], "problem.potential", st.base);
    if (p.contains("source")) source = coefficient(p["source"], "problem.source", st.base);
    if (p.contains("initial")) initial = coefficient(p["initial"], "problem.initial", st.base);
    if (p.contains("velocity")) {
        if (!wave) throw ConfigError("'problem.velocity' applies to solve-wave only");
        velocity = coefficient(p["velocity"], "problem.velocity", st.base);
    }
    const bool nonlinear = !st.model.empty();
    if (nonlinear && (potential || source || initial || velocity))
        throw ConfigError("nonlinear solves take exterior data only; drop potential/source/initial/velocity or model.q");
    const bool export_op = get<bool>(st.cfg, "export_operator", false);

    const auto op = std::make_shared<const FracOperator>(assemble(grid, st.geo.s));
    if (wave) require_wave_order(st.geo.s);
    const SpaceTimeField f = exterior(bs, grid, tg);
    SpaceTimeField u;
    json meta = {{"problem_type", wave ? "wave" : "heat"}, {"nonlinear", nonlinear}};
    if (nonlinear) {
        const Propagator prop(op, tg, st.geo.equation);
        const NonlinearResult r = prop.nonlinear(st.model.build(grid, tg), f, solver_options(st.cfg));
        u = r.u;
        meta["solver"] = nonlinear_json(r);
        meta["flags"] = json::array();
        if (!r.converged) meta["flags"].push_back("not_converged");
    } else if (!wave) {
        HeatProblem pb;
        pb.exterior = f;
        if (potential) pb.potential = dense(potential->build(grid, tg), tg);
        if (source) pb.source = dense(source->build(grid, tg), tg);
        if (initial) pb.initial = omega_profile(*initial, grid, tg);
        u = solve_linear(*op, pb, tg);
    } else {
        WaveProblem pb;
        pb.exterior = f;
        if (potential) pb.potential = dense(potential->build(grid, tg), tg);
        if (source) pb.source = dense(source->build(grid, tg), tg);
        if (initial) pb.initial = omega_profile(*initial, grid, tg);
        if (velocity) pb.velocity = omega_profile(*velocity, grid, tg);
        u = solve_linear_wave(*op, pb, tg).u;
    }
    meta["sup_norm"] = u.sup_norm();
    if (wave) {
        const VectorXd e = energy_series(u, *op, tg);
        meta["energy"] = std::vector<double>(e.data(), e.data() + e.size());
    }
    Outputs out;
    out.add("solution.csv", io::field_csv(st.prov, u.values, tg, grid));
    out.add("solution.json", dump(with_prov(st, {{"grid", io::grid_json(grid, tg, st.geo.s)}, {"metadata", meta}})));
    if (export_op) add_operator_export(st, *op, out);
    return out;
}

inline Outputs task_dn(const Setup& st) {
    const json& d = block(st.cfg, "dn");
    if (!d.contains("inputs")) throw ConfigError("missing required key 'dn.inputs'");
    const auto bs = bumps(d["inputs"], "dn.inputs");
    const Grid grid = st.grid();
    const TimeGrid tg = st.time_grid();
    const auto op = std::make_shared<const FracOperator>(assemble(grid, st.geo.s));
    const Propagator prop(op, tg, st.geo.equation);
    const SpaceTimeField f = exterior(bs, grid, tg);
    json meta = {{"nonlinear", !st.model.empty()}};
    DNData data;
    if (st.model.empty()) {
        data = dn_map(prop.free(f), *op);
    } else {
        const NonlinearResult r = prop.nonlinear(st.model.build(grid, tg), f, solver_options(st.cfg));
        data = dn_map(r.u, *op);
        meta["solver"] = nonlinear_json(r);
    }
    json prov = st.prov;
    prov["model_hash"] = io::config_hash(block(st.cfg, "model"));
    prov["input_hash"] = io::config_hash(d["inputs"]);
    Outputs out;
    out.add("dn.csv", io::field_csv(prov, data.values, tg, grid, grid.v_set().begin));
    meta["grid"] = io::grid_json(grid, tg, st.geo.s);
    meta["provenance"] = prov;
    out.add("dn.json", dump(meta));
    return out;
}

inline Outputs task_linearize(const Setup& st) {
    const json& l = block(st.cfg, "linearize");
    if (!l.contains("inputs")) throw ConfigError("missing required key 'linearize.inputs'");
    if (st.model.empty()) throw ConfigError("linearize needs a nonlinearity (model.q or model.q_file)");
    const auto bs = bumps(l["inputs"], "linearize.inputs");
    if (bs.empty() || bs.size() > 8) throw ConfigError("'linearize.inputs' must list 1 to 8 bumps");
    const auto eps = get<std::vector<double>>(l, "eps", {0.1, 0.05, 0.025}, "linearize");
    std::vector<IndexSet> sets;
    if (l.contains("sets")) {
        for (const auto& s : l["sets"]) {
            IndexSet mask = 0;
            for (const auto& i : s) {
                const int idx = i.get<int>();
                if (idx < 0 || idx >= static_cast<int>(bs.size())) throw ConfigError("'linearize.sets' index out of range");
                mask |= IndexSet{1} << idx;
            }
            if (mask == 0) throw ConfigError("'linearize.sets' entries must be nonempty");
            sets.push_back(mask);
        }
    } else {
        for (std::size_t p = 1; p <= bs.size(); ++p) sets.push_back(full_set(static_cast<int>(p)));
    }
    const Grid grid = st.grid();
    const TimeGrid tg = st.time_grid();
    const auto op = std::make_shared<const FracOperator>(assemble(grid, st.geo.s));
    const Propagator prop(op, tg, st.geo.equation);
    const Nonlinearity q = st.model.build(grid, tg);
    std::vector<SpaceTimeField> inputs;
    for (const auto& b : bs) inputs.push_back(make_bump(grid, tg, b));
    LinearizedFamily fam = make_family(prop, inputs);
    Model model{op, q, st.geo.equation, tg, solver_options(st.cfg)};
    model.opts.tol_rel = std::min(model.opts.tol_rel, 1e-14);

    Outputs out;
    json sets_json = json::array();
    for (IndexSet s : sets) {
        if (set_size(s) > q.order())
            throw ParamError("set of size " + std::to_string(set_size(s)) + " exceeds the jet order m = " +
                             std::to_string(q.order()));
        complete_family(prop, q, s, fam);
        const MatrixXd exact = dn_map(fam.at(s), *op).values;
        const std::string tag = "S" + std::to_string(s);
        out.add("linearized_" + tag + ".csv", io::field_csv(st.prov, exact, tg, grid, grid.v_set().begin));
        std::vector<double> errs;
        for (std::size_t j = 0; j < eps.size(); ++j) {
            const MatrixXd md = mixed_difference_dn(model, inputs, s, eps[j], st.threads).values;
            json prov = st.prov;
            prov["eps"] = eps[j];
            prov["set"] = s;
            out.add("mixed_" + tag + "_e" + std::to_string(j) + ".csv",
                    io::field_csv(prov, md, tg, grid, grid.v_set().begin));
            const double en = exact.norm();
            errs.push_back(en > 0 ? (md - exact).norm() / en : (md - exact).norm());
        }
        std::vector<double> orders;
        for (std::size_t j = 1; j < errs.size(); ++j) orders.push_back(std::log(errs[j - 1] / errs[j]) / std::log(eps[j - 1] / eps[j]));
        json members = json::array();
        for (int i = 0; i < 32; ++i)
            if ((s >> i) & 1u) members.push_back(i);
        sets_json.push_back({{"set", members}, {"mask", s}, {"relative_errors", errs}, {"observed_orders", orders}});
    }
    out.add("linearize.json", dump(with_prov(st, {{"eps", eps}, {"sets", sets_json}, {"grid", io::grid_json(grid, tg, st.geo.s)}})));
    return out;
}

inline Outputs task_runge(const Setup& st) {
    if (st.geo.equation != Equation::heat) throw ConfigError("runge is defined for the heat equation only");
    const json& r = block(st.cfg, "runge");
    const Grid grid = st.grid();
    const TimeGrid tg = st.time_grid();
    const auto ks = get<std::vector<Index>>(r, "K", {4, 8, 16, 32}, "runge");
    std::optional<double> lambda;
    if (r.contains("lambda")) lambda = get<double>(r, "lambda", 0.0, "runge");
    std::optional<CoefficientInput> pot;
    if (r.contains("potential")) pot = coefficient(r["potential"], "runge.potential", st.base);
    struct Target {
        double x0, t0, wx, wt;
    };
    std::vector<Target> targets;
    if (r.contains("targets")) {
        for (std::size_t i = 0; i < r["targets"].size(); ++i) {
            const std::string ctx = "runge.targets[" + std::to_string(i) + "]";
            const json& t = r["targets"][i];
            targets.push_back({require<double>(t, "x0", ctx), require<double>(t, "t0", ctx), get<double>(t, "width_x", 0.5, ctx),
                               get<double>(t, "width_t", 0.3, ctx)});
        }
    } else {
        targets = {{-0.6, 0.4, 0.5, 0.3}, {-0.3, 0.7, 0.5, 0.3}, {0.0, 0.5, 0.5, 0.3}, {0.3, 0.8, 0.5, 0.3}, {0.6, 0.6, 0.5, 0.3}};
    }
    const FracOperator op = assemble(grid, st.geo.s);
    const MatrixXd potential = pot ? dense(pot->build(grid, tg), tg) : MatrixXd::Zero(tg.n_levels(), grid.n_points());
    const ControlBasis basis = build_control_basis(op, potential, tg, default_basis_specs(grid, tg), st.threads);
    for (Index k : ks)
        if (k < 1 || k > basis.size()) throw ConfigError("'runge.K' entries must lie in [1, " + std::to_string(basis.size()) + "]");
    const IndexRange om = grid.omega();
    MatrixXd table(static_cast<Index>(ks.size()), static_cast<Index>(targets.size()) + 1);
    std::vector<std::string> header{"K"};
    json results = json::array();
    for (std::size_t j = 0; j < targets.size(); ++j) {
        const Target& tt = targets[j];
        header.push_back("target" + std::to_string(j));
        MatrixXd target(tg.n_steps(), om.size());
        for (Index n = 0; n < target.rows(); ++n)
            for (Index i = 0; i < target.cols(); ++i) {
                const double x = grid.x(om.begin + i), t = tg.t(n + 1);
                target(n, i) = std::exp(-std::pow((x - tt.x0) / tt.wx, 2) - std::pow((t - tt.t0) / tt.wt, 2));
            }
        json per_k = json::array();
        for (std::size_t a = 0; a < ks.size(); ++a) {
            const RungeResult res = approximate(target, basis, ks[a], lambda, grid, tg);
            table(static_cast<Index>(a), 0) = static_cast<double>(ks[a]);
            table(static_cast<Index>(a), static_cast<Index>(j) + 1) = res.residual;
            per_k.push_back({{"K", ks[a]}, {"residual", res.residual}, {"relative_residual", res.relative_residual},
                             {"lambda", res.lambda}, {"gram_condition", res.gram_condition},
                             {"control_norm", res.control_norm},
                             {"coefficients", std::vector<double>(res.coefficients.data(), res.coefficients.data() + res.coefficients.size())}});
        }
        results.push_back({{"x0", tt.x0}, {"t0", tt.t0}, {"width_x", tt.wx}, {"width_t", tt.wt}, {"fits", per_k}});
    }
    json elements = json::array();
    for (const auto& e : basis.elements) elements.push_back(bump_json(e));
    Outputs out;
    out.add("runge_residuals.csv", io::csv_text(st.prov, header, table));
    out.add("runge.json", dump(with_prov(st, {{"targets", results}, {"grid", io::grid_json(grid, tg, st.geo.s)}})));
    out.add("basis.json", dump(with_prov(st, {{"elements", elements}})));
    return out;
}

inline std::map<int, double> per_order(const json& r, const std::string& key, int order, std::optional<double> fallback) {
    std::map<int, double> out;
    if (r.contains(key)) {
        const json& v = r.at(key);
        if (v.is_number()) {
            for (int k = 2; k <= order; ++k) out[k] = v.get<double>();
        } else if (v.is_object()) {
            for (const auto& [k, x] : v.items()) {
                if (!x.is_number()) throw ConfigError("'recover." + key + "." + k + "' must be a number");
                out[std::stoi(k)] = x.get<double>();
            }
        } else {
            throw ConfigError("'recover." + key + "' must be a number or a map from order to number");
        }
    }
    if (fallback)
        for (int k = 2; k <= order; ++k) out.emplace(k, *fallback);
    return out;
}

inline Outputs task_recover(const Setup& st, const RunOptions& opts, std::ostream& log) {
    const json& r = block(st.cfg, "recover");
    const std::string mode = get<std::string>(r, "mode", "inverse-crime", "recover");
    if (mode != "inverse-crime" && mode != "decoupled" && mode != "external")
        throw ConfigError("'recover.mode' must be inverse-crime, decoupled or external");
    const int order = get<int>(r, "order", st.model.empty() ? 2 : st.model.order, "recover");
    const int count = get<int>(r, "tuples_per_order", 6, "recover");
    const double noise = opts.noise ? *opts.noise : get<double>(r, "noise", 0.0, "recover");
    const double budget = get<double>(r, "budget", std::numeric_limits<double>::infinity(), "recover");
    if (!(noise >= 0.0)) throw ConfigError("noise level must be nonnegative");
    if (count < 1) throw ConfigError("'recover.tuples_per_order' must be positive");
    std::optional<fs::path> data_dir, record_dir;
    if (mode == "external") {
        data_dir = st.base / require<std::string>(r, "data_dir", "recover");
        if (!fs::is_directory(*data_dir)) throw ConfigError("DN data directory not found: " + data_dir->string());
    } else if (st.model.empty()) {
        throw ConfigError("synthetic recovery needs the ground-truth nonlinearity (model.q or model.q_file)");
    }
    if (r.contains("record_dir")) record_dir = st.base / get<std::string>(r, "record_dir", "", "recover");
    std::optional<GroundTruth> truth;
    if (!st.model.empty()) truth = st.model.truth();

    const Grid grid = st.grid();
    const TimeGrid tg = st.time_grid();
    RecoveryConfig cfg;
    cfg.order = order;
    cfg.time_independent = get<bool>(r, "time_independent", true, "recover");
    cfg.delta = st.model.empty() ? get<double>(r, "delta", 1.0, "recover") : st.model.delta;
    cfg.data_mode = mode;
    cfg.threads = st.threads;
    const double lambda_default = mode == "inverse-crime" ? default_recovery_lambda : verify::decoupled_lambda;
    cfg.lambda = per_order(r, "lambda", order, lambda_default);
    cfg.eps = per_order(r, "eps", order, std::nullopt);
    if (r.contains("tuples")) {
        const json& t = r["tuples"];
        if (!t.is_object()) throw ConfigError("'recover.tuples' must map orders to lists of tuples");
        for (const auto& [k, list] : t.items()) {
            if (!list.is_array()) throw ConfigError("'recover.tuples." + k + "' must be a list of tuples");
            std::vector<std::vector<BumpSpec>> tuples;
            for (std::size_t j = 0; j < list.size(); ++j)
                tuples.push_back(bumps(list[j], "recover.tuples." + k + "[" + std::to_string(j) + "]"));
            cfg.tuples[std::stoi(k)] = std::move(tuples);
        }
    }
    for (int k = 2; k <= order; ++k)
        if (!cfg.tuples.count(k)) cfg.tuples[k] = default_tuples(grid, tg, k, count);

    const auto op = std::make_shared<const FracOperator>(assemble(grid, st.geo.s));
    const Propagator prop(op, tg, st.geo.equation);
    std::unique_ptr<DNOracle> base;
    if (mode == "external") base = std::make_unique<io::FileOracle>(*data_dir, tg.n_levels(), grid.v_set().size());
    else base = std::make_unique<SyntheticOracle>(st.geo, *truth, mode == "decoupled" ? 2 : 1, 1, budget, noise, st.seed);
    std::unique_ptr<DNOracle> recorder;
    if (record_dir) recorder = std::make_unique<io::RecordingOracle>(*base, *record_dir, st.prov, grid, tg);
    const DNOracle& oracle = recorder ? *recorder : *base;

    const JetEstimate est = recover_all(oracle, cfg, prop);

    Outputs out;
    json orders = json::array(), diag = json::array();
    const IndexRange om = grid.omega();
    for (const auto& o : est.orders) {
        const std::string name = "c" + std::to_string(o.order);
        const MatrixXd field = o.coefficient.sample(o.coefficient.time_independent() ? 1 : tg.n_levels());
        std::vector<std::string> header;
        for (Index i = 0; i < grid.n_points(); ++i) header.push_back("x=" + io::format_double(grid.x(i)));
        if (o.coefficient.time_independent()) out.add(name + ".csv", io::csv_text(st.prov, header, field));
        else out.add(name + ".csv", io::field_csv(st.prov, field, tg, grid));

        const CoefficientSpec* spec = truth ? truth->find(o.order) : nullptr;
        std::optional<CoefficientField> true_field;
        if (spec) true_field = spec->sample(grid, tg);
        else if (truth) true_field = CoefficientField::spatial(VectorXd::Zero(grid.n_points()));
        const Index level = o.coefficient.time_independent() ? 0 : tg.n_levels() / 2;
        std::vector<std::string> ph{"x", "estimate"};
        if (true_field) ph.push_back("truth");
        ph.push_back("sensitivity");
        MatrixXd profile(om.size(), static_cast<Index>(ph.size()));
        for (Index i = 0; i < om.size(); ++i) {
            Index c = 0;
            profile(i, c++) = grid.x(om.begin + i);
            profile(i, c++) = o.coefficient(level, om.begin + i);
            if (true_field) profile(i, c++) = (*true_field)(level, om.begin + i);
            profile(i, c++) = o.sensitivity(om.begin + i);
        }
        out.add(name + "_profile.csv", io::csv_text(st.prov, ph, profile));

        json item = {{"order", o.order}, {"eps", o.eps}, {"retries", o.retries}, {"time_independent", o.coefficient.time_independent()},
                     {"file", name + ".csv"}};
        json d = {{"order", o.order},
                  {"eps", o.eps},
                  {"retries", o.retries},
                  {"residual", o.inversion.residual},
                  {"relative_residual", o.inversion.relative_residual},
                  {"lambda_relative", o.inversion.lambda_relative},
                  {"lambda", o.inversion.lambda},
                  {"condition", o.inversion.condition},
                  {"rank", o.inversion.rank},
                  {"unknowns", o.inversion.unknowns},
                  {"method", o.inversion.method},
                  {"measured_norms", o.measured_norms},
                  {"data_norms", o.data_norms}};
        if (true_field) {
            const double e = relative_error(o.coefficient, *true_field, grid, tg);
            item["relative_error"] = e;
            d["relative_error"] = e;
        }
        orders.push_back(item);
        diag.push_back(d);
        log << "order " << o.order << ": eps " << o.eps << ", relative residual " << o.inversion.relative_residual
            << (true_field ? ", relative error " + std::to_string(relative_error(o.coefficient, *true_field, grid, tg)) : "")
            << "\n";
    }
    out.add("jet_estimate.json", dump(with_prov(st, {{"complete", est.complete}, {"failed_order", est.failed_order},
                                                      {"failure", est.failure}, {"data_mode", mode},
                                                      {"orders", orders}, {"grid", io::grid_json(grid, tg, st.geo.s)}})));
    out.add("diagnostics.json", dump(with_prov(st, {{"orders", diag}, {"noise", noise}, {"budget", budget < 1e300 ? json(budget) : json("inf")}})));
    if (!est.complete) {
        out.status = exit_module;
        const auto colon = est.failure.find(':');
        out.error = std::make_pair(est.failure.substr(0, colon),
                                   colon == std::string::npos ? est.failure : est.failure.substr(colon + 2));
    }
    return out;
}

inline Outputs task_verify(const Setup& st, std::ostream& log) {
    const json& v = block(st.cfg, "verify");
    verify::Options o;
    o.seed = st.seed;
    o.threads = st.threads;
    o.only = get<std::vector<int>>(v, "only", {}, "verify");
    for (int id : o.only)
        if (id < 1 || id > 11) throw ConfigError("'verify.only' entries must lie in 1..11");
    json results = json::array();
    std::string text;
    bool all = true;
    verify::run(o, [&](const verify::CriterionResult& r) {
        const std::string line = verify::format_line(r);
        log << line << "\n" << std::flush;
        text += line + "\n";
        results.push_back(verify::to_json(r));
        all = all && r.passed;
    });
    Outputs out;
    out.add("verify.json", dump(with_prov(st, {{"passed", all}, {"criteria", results}})));
    out.add("verify.txt", "# " + st.prov.dump() + "\n" + text);
    if (!all) out.status = exit_verify_failed;
    return out;
}

inline json error_json(const std::string& kind, const std::string& message, const std::string& task, int code) {
    return {{"error", kind}, {"message", message}, {"task", task}, {"exit_code", code}};
}

}  // namespace detail

/// Runs one configured task; returns the process exit code. Nothing is
/// written unless the task completes or returns a partial estimate.
inline int run_config(const json& cfg, const RunOptions& opts, std::ostream& log = std::cout,
                      std::ostream& err = std::cerr) {
    detail::Setup st;
    const std::string task = cfg.is_object() && cfg.contains("task") && cfg["task"].is_string() ? cfg["task"].get<std::string>() : "";
    try {
        st = detail::setup(cfg, opts);
    } catch (const ConfigError& e) {
        err << detail::error_json("ConfigError", e.what(), task, exit_config).dump() << "\n";
        return exit_config;
    } catch (const Error& e) {
        err << detail::error_json(e.kind(), e.what(), task, exit_module).dump() << "\n";
        return exit_module;
    }
    Outputs out;
    try {
        if (st.task == "solve-heat" || st.task == "solve-wave") out = detail::task_solve(st);
        else if (st.task == "dn") out = detail::task_dn(st);
        else if (st.task == "linearize") out = detail::task_linearize(st);
        else if (st.task == "runge") out = detail::task_runge(st);
        else if (st.task == "recover") out = detail::task_recover(st, opts, log);
        else out = detail::task_verify(st, log);
    } catch (const ConfigError& e) {
        err << detail::error_json("ConfigError", e.what(), st.task, exit_config).dump() << "\n";
        return exit_config;
    } catch (const Error& e) {
        err << detail::error_json(e.kind(), e.what(), st.task, exit_module).dump() << "\n";
        return exit_module;
    } catch (const std::exception& e) {
        err << detail::error_json("InternalError", e.what(), st.task, exit_module).dump() << "\n";
        return exit_module;
    }
    try {
        for (const auto& [name, content] : out.files) io::write_atomic(st.out / name, content);
    } catch (const std::exception& e) {
        err << detail::error_json("IOError", e.what(), st.task, exit_module).dump() << "\n";
        return exit_module;
    }
    log << "wrote " << out.files.size() << " files to " << st.out.string() << "\n";
    if (out.error) err << detail::error_json(out.error->first, out.error->second, st.task, out.status).dump() << "\n";
    return out.status;
}

inline int run(const RunOptions& opts, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    json cfg;
    try {
        cfg = io::load_config(opts.config);
    } catch (const ConfigError& e) {
        err << detail::error_json("ConfigError", e.what(), "", exit_config).dump() << "\n";
        return exit_config;
    }
    return run_config(cfg, opts, log, err);
}

}  // namespace fraclab::app
