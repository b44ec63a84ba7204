#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fraclab/inverse.hpp"

using namespace fraclab;

namespace {

ExperimentGeometry small_geometry(Equation eq = Equation::heat) {
    ExperimentGeometry geo;
    geo.s = 0.75;
    geo.n_points = 81;
    geo.n_steps = 32;
    geo.equation = eq;
    return geo;
}

CoefficientSpec bump_c2() { return {"bump", 2.0, 0.0, 0.8, 0.0, 0.0}; }
CoefficientSpec gauss_c3(double a = 1.5) { return {"gaussian", a, 0.2, 0.5, 0.0, 0.0}; }

struct Inversion {
    std::shared_ptr<const FracOperator> op;
    std::unique_ptr<Propagator> prop;

    explicit Inversion(const ExperimentGeometry& geo)
        : op(std::make_shared<const FracOperator>(assemble(geo.grid(), geo.s))),
          prop(std::make_unique<Propagator>(op, geo.time_grid(), geo.equation)) {}

    const Grid& grid() const { return op->grid; }
    const TimeGrid& tg() const { return prop->time_grid(); }

    RecoveryConfig config(int m, int count = 6) const {
        RecoveryConfig cfg;
        cfg.order = m;
        for (int k = 2; k <= m; ++k) cfg.tuples[k] = default_tuples(grid(), tg(), k, count);
        return cfg;
    }
};

GroundTruth truth_of(std::vector<std::pair<int, CoefficientSpec>> terms) {
    GroundTruth t;
    t.terms = std::move(terms);
    return t;
}

// Synthetic data D = dn_map(solve(-c P)) for a known spatial c.
DNData forward_data(const Propagator& prop, const VectorXd& c_omega, const MatrixXd& p) {
    MatrixXd src = p;
    for (Index n = 0; n < src.rows(); ++n) src.row(n).array() *= c_omega.transpose().array();
    return DNData{dn_map_omega(prop.source(-src), prop.op()), ""};
}

std::vector<MatrixXd> free_products(const Inversion& inv, int count) {
    const IndexRange om = inv.grid().omega();
    std::vector<MatrixXd> out;
    for (const auto& tuple : default_tuples(inv.grid(), inv.tg(), 2, count)) {
        MatrixXd p = MatrixXd::Ones(inv.tg().n_levels(), om.size());
        for (const auto& b : tuple) p.array() *= inv.prop->free(make_bump(inv.grid(), inv.tg(), b)).restrict(om).array();
        out.push_back(p);
    }
    return out;
}

VectorXd omega_samples(const CoefficientSpec& c, const Grid& grid) {
    const IndexRange om = grid.omega();
    VectorXd v(om.size());
    for (Index i = 0; i < v.size(); ++i) v(i) = c.spatial(grid.x(om.begin + i));
    return v;
}

}  // namespace

TEST(CoefficientSpec, ProfilesAndErrors) {
    EXPECT_DOUBLE_EQ((CoefficientSpec{"constant", 3.0}).spatial(0.7), 3.0);
    const CoefficientSpec b{"bump", 2.0, 0.5, 0.4, 0.1, 0.0};
    EXPECT_DOUBLE_EQ(b.spatial(0.5), 2.1);
    EXPECT_DOUBLE_EQ(b.spatial(0.95), 0.1);
    EXPECT_NEAR((CoefficientSpec{"gaussian", 1.0, 0.0, 2.0}).spatial(2.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR((CoefficientSpec{"cosine", 1.0, 0.0, 1.0}).spatial(1.0), -1.0, 1e-15);
    const CoefficientSpec timed{"constant", 2.0, 0.0, 1.0, 0.0, 0.5};
    EXPECT_DOUBLE_EQ(timed(1.0, 0.0), 3.0);
    EXPECT_THROW((CoefficientSpec{"square", 1.0}).spatial(0.0), ParamError);
}

TEST(SyntheticOracle, DeterministicAndBudgeted) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    const auto tuple = default_tuples(inv.grid(), inv.tg(), 2, 1)[0];
    const ExteriorInput input{{0.05, tuple[0]}, {-0.03, tuple[1]}};
    SyntheticOracle clean(geo, truth_of({{2, bump_c2()}}));
    const DNData a = clean.measure(input, "a"), b = clean.measure(input, "b");
    EXPECT_TRUE(a.values == b.values);
    EXPECT_EQ(a.values.rows(), inv.tg().n_levels());
    EXPECT_EQ(a.values.cols(), inv.grid().v_set().size());

    SyntheticOracle noisy(geo, truth_of({{2, bump_c2()}}), 1, 1, std::numeric_limits<double>::infinity(), 1e-3, 7);
    const DNData n1 = noisy.measure(input, "x"), n2 = noisy.measure(input, "y");
    EXPECT_TRUE(n1.values == n2.values);
    const double spread = (n1.values - a.values).norm() / std::sqrt(static_cast<double>(a.values.size()));
    EXPECT_NEAR(spread, 1e-3, 2e-4);
    const ExteriorInput other{{0.05, tuple[0]}, {-0.02, tuple[1]}};
    EXPECT_FALSE((noisy.measure(other, "x").values - clean.measure(other, "x").values) == (n1.values - a.values));

    const double norm = ext_norm(realize(input, inv.grid(), inv.tg()), *inv.op, inv.tg());
    SyntheticOracle strict(geo, truth_of({{2, bump_c2()}}), 1, 1, 0.5 * norm);
    EXPECT_THROW(strict.measure(input, "refused"), SmallnessError);
}

TEST(SyntheticOracle, RefinedGridDataIsClose) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    const auto tuple = default_tuples(inv.grid(), inv.tg(), 2, 1)[0];
    const ExteriorInput input{{0.1, tuple[0]}, {0.1, tuple[1]}};
    const auto truth = truth_of({{2, bump_c2()}});
    const MatrixXd coarse = SyntheticOracle(geo, truth).measure(input, "c").values;
    const MatrixXd fine = SyntheticOracle(geo, truth, 2, 1).measure(input, "f").values;
    const double rel = (fine - coarse).norm() / coarse.norm();
    EXPECT_GT(rel, 1e-6);
    EXPECT_LT(rel, 0.05);
}

TEST(SourceInversion, ZeroProductGivesZero) {
    const Inversion inv(small_geometry());
    const MatrixXd p = MatrixXd::Zero(inv.tg().n_levels(), inv.grid().omega().size());
    const MatrixXd d = MatrixXd::Random(inv.tg().n_levels(), inv.grid().v_set().size());
    const auto r = source_inversion({p}, {d}, *inv.prop, 1e-3, true);
    EXPECT_EQ(r.coefficient.sup(), 0.0);
}

TEST(SourceInversion, InverseCrimeConsistency) {
    const Inversion inv(small_geometry());
    const auto products = free_products(inv, 6);
    const VectorXd c = omega_samples(bump_c2(), inv.grid());
    std::vector<MatrixXd> data;
    for (const auto& p : products) data.push_back(forward_data(*inv.prop, c, p).values);
    const auto r = source_inversion(products, data, *inv.prop, 1e-10, true);
    const IndexRange om = inv.grid().omega();
    const VectorXd got = r.coefficient.spatial_values().segment(om.begin, om.size());
    EXPECT_LE((got - c).norm() / c.norm(), 0.05);
    EXPECT_LT(r.relative_residual, 1e-4);
    EXPECT_EQ(r.unknowns, om.size());
    EXPECT_GT(r.rank, 0);
    EXPECT_EQ(r.coefficient.spatial_values().head(om.begin).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SourceInversion, MoreTuplesGiveSmallerErrorAtMatchedResidual) {
    const Inversion inv(small_geometry());
    const auto products = free_products(inv, 6);
    const VectorXd c = omega_samples(bump_c2(), inv.grid());
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<MatrixXd> data;
    for (const auto& p : products) {
        MatrixXd d = forward_data(*inv.prop, c, p).values;
        MatrixXd e(d.rows(), d.cols());
        for (Index i = 0; i < e.size(); ++i) e(i) = nd(rng);
        e *= 1e-3 * d.norm() / e.norm();
        data.push_back(d + e);
    }
    const IndexRange om = inv.grid().omega();
    // Discrepancy choice: the lambda whose weighted residual best matches the noise level.
    auto matched_error = [&](std::size_t count, double noise_sq) {
        const std::vector<MatrixXd> p(products.begin(), products.begin() + static_cast<long>(count));
        const std::vector<MatrixXd> d(data.begin(), data.begin() + static_cast<long>(count));
        const double target = std::sqrt(noise_sq * inv.tg().dt() * inv.grid().spacing());
        double best_gap = std::numeric_limits<double>::infinity(), err = 0.0;
        for (int e = -12; e <= 0; ++e) {
            const auto r = source_inversion(p, d, *inv.prop, std::pow(10.0, e), true);
            const double gap = std::abs(std::log(r.residual / target));
            if (gap < best_gap) {
                best_gap = gap;
                err = (r.coefficient.spatial_values().segment(om.begin, om.size()) - c).norm() / c.norm();
            }
        }
        return err;
    };
    double noise_one = 0.0;
    {
        // noise of the first tuple alone (levels 1..N)
        const MatrixXd d0 = forward_data(*inv.prop, c, products[0]).values;
        noise_one = (data[0] - d0).bottomRows(inv.tg().n_steps()).squaredNorm();
    }
    double noise_all = 0.0;
    for (std::size_t j = 0; j < products.size(); ++j)
        noise_all += (data[j] - forward_data(*inv.prop, c, products[j]).values).bottomRows(inv.tg().n_steps()).squaredNorm();
    const double e1 = matched_error(1, noise_one), e6 = matched_error(6, noise_all);
    EXPECT_LT(e6, e1);
}

TEST(SourceInversion, RankDeficiencyAndShapes) {
    const Inversion inv(small_geometry());
    const IndexRange om = inv.grid().omega();
    MatrixXd p = MatrixXd::Zero(inv.tg().n_levels(), om.size());
    p.col(3).setConstant(1.0);  // only one site is visible
    const MatrixXd d = forward_data(*inv.prop, VectorXd::Ones(om.size()), p).values;
    EXPECT_THROW(source_inversion({p}, {d}, *inv.prop, 0.0, true), RankDeficientError);
    EXPECT_NO_THROW(source_inversion({p}, {d}, *inv.prop, 1e-8, true));
    EXPECT_THROW(source_inversion({p}, {d}, *inv.prop, -1.0, true), ParamError);
    EXPECT_THROW(source_inversion({p}, {}, *inv.prop, 1e-8, true), ShapeError);
    EXPECT_THROW(source_inversion({p.leftCols(3)}, {d}, *inv.prop, 1e-8, true), ShapeError);
}

TEST(RecoveryConfig, Validation) {
    const Inversion inv(small_geometry());
    RecoveryConfig cfg = inv.config(3);
    EXPECT_NO_THROW(validate(cfg, inv.grid(), inv.tg()));
    RecoveryConfig bad = cfg;
    bad.order = 1;
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), ParamError);
    bad = cfg;
    bad.tuples[3][0].pop_back();
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), ParamError);
    bad = cfg;
    bad.tuples.erase(3);
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), ParamError);
    bad = cfg;
    bad.tuples[2][0][0].t_on = 0.1;
    bad.tuples[2][0][0].t_off = 0.2;
    bad.tuples[2][0][1].t_on = 0.3;
    bad.tuples[2][0][1].t_off = 0.5;
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), ParamError);
    bad.time_independent = false;
    EXPECT_NO_THROW(validate(bad, inv.grid(), inv.tg()));
    bad = cfg;
    bad.tuples[2][0][0].center = 0.0;
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), SupportError);
    bad = cfg;
    bad.eps[2] = 0.0;
    EXPECT_THROW(validate(bad, inv.grid(), inv.tg()), ParamError);
}

TEST(RecoverJet, QuadraticBumpInverseCrime) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    const SyntheticOracle oracle(geo, truth_of({{2, bump_c2()}}));
    const JetEstimate est = recover_all(oracle, inv.config(2), *inv.prop);
    ASSERT_TRUE(est.complete) << est.failure;
    const JetOrderResult& r = *est.find(2);
    EXPECT_LE(relative_error(r.coefficient, bump_c2().sample(inv.grid(), inv.tg()), inv.grid(), inv.tg()), 0.10);
    EXPECT_EQ(r.eps, 0.05);
    EXPECT_EQ(r.retries, 0);
    EXPECT_EQ(r.inversion.data_mode, "inverse-crime");
    EXPECT_GE(r.sensitivity.minCoeff(), 0.0);
    EXPECT_GT(r.sensitivity.segment(inv.grid().omega().begin, inv.grid().omega().size()).minCoeff(), 0.0);
    EXPECT_EQ(r.sensitivity.head(inv.grid().omega().begin).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RecoverJet, ZeroJetGivesZero) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    const SyntheticOracle oracle(geo, truth_of({{3, gauss_c3()}}));
    RecoveryConfig cfg = inv.config(2);
    cfg.eps[2] = 0.005;
    const JetEstimate est = recover_all(oracle, cfg, *inv.prop);
    ASSERT_TRUE(est.complete);
    EXPECT_LE(est.find(2)->coefficient.sup(), 1e-6 * gauss_c3().amplitude);
}

TEST(RecoverJet, HigherJetsDoNotLeakIntoLowerOrder) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    auto recovered = [&](double amp, double eps) {
        const SyntheticOracle oracle(geo, truth_of({{2, bump_c2()}, {3, gauss_c3(amp)}, {4, {"constant", amp}}}));
        RecoveryConfig cfg = inv.config(2);
        cfg.eps[2] = eps;
        return recover_all(oracle, cfg, *inv.prop).find(2)->coefficient.spatial_values();
    };
    const double scale = bump_c2().amplitude;
    EXPECT_LE((recovered(0.0, 0.005) - recovered(1.5, 0.005)).cwiseAbs().maxCoeff(), 1e-6 * scale);
    // The leak is the O(eps^2) stencil truncation.
    const double l1 = (recovered(0.0, 0.04) - recovered(1.5, 0.04)).cwiseAbs().maxCoeff();
    const double l2 = (recovered(0.0, 0.02) - recovered(1.5, 0.02)).cwiseAbs().maxCoeff();
    EXPECT_NEAR(std::log2(l1 / l2), 2.0, 0.2);
}

TEST(RecoverJet, KnownPartSubtractionLeavesTruncationError) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    // Third jet vanishes: after removing the known second-jet part only stencil error remains.
    const SyntheticOracle oracle(geo, truth_of({{2, bump_c2()}}));
    const std::vector<CoefficientField> lower{bump_c2().sample(inv.grid(), inv.tg())};
    std::vector<double> residual, measured;
    // Steps large enough that the truncation error sits above roundoff.
    for (double eps : {0.16, 0.08}) {
        RecoveryConfig cfg = inv.config(3);
        cfg.eps[3] = eps;
        const JetOrderResult r = recover_jet_k(oracle, 3, lower, cfg, *inv.prop);
        double res = 0.0, mea = 0.0;
        for (std::size_t j = 0; j < r.data_norms.size(); ++j) {
            res += r.data_norms[j] * r.data_norms[j];
            mea += r.measured_norms[j] * r.measured_norms[j];
        }
        residual.push_back(std::sqrt(res));
        measured.push_back(std::sqrt(mea));
    }
    EXPECT_LT(residual[0], 1e-4 * measured[0]);
    EXPECT_NEAR(std::log2(residual[0] / residual[1]), 2.0, 0.25);
}

TEST(RecoverJet, IdenticalResponsesGiveIdenticalBits) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    const SyntheticOracle a(geo, truth_of({{2, bump_c2()}}));
    const SyntheticOracle b(geo, truth_of({{2, bump_c2()}}));
    RecoveryConfig cfg = inv.config(2);
    const auto ea = recover_all(a, cfg, *inv.prop), eb = recover_all(b, cfg, *inv.prop);
    EXPECT_TRUE(ea.find(2)->coefficient.spatial_values() == eb.find(2)->coefficient.spatial_values());
    cfg.threads = 3;
    const auto ec = recover_all(a, cfg, *inv.prop);
    EXPECT_TRUE(ea.find(2)->coefficient.spatial_values() == ec.find(2)->coefficient.spatial_values());
}

TEST(RecoverJet, BudgetRefusalShrinksStepOnce) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    RecoveryConfig cfg = inv.config(2);
    cfg.eps[2] = 0.05;
    double largest = 0.0;
    for (const auto& tuple : cfg.tuples[2])
        for (double s1 : {-1.0, 1.0})
            for (double s2 : {-1.0, 1.0}) {
                const ExteriorInput in{{0.025 * s1, tuple[0]}, {0.025 * s2, tuple[1]}};
                largest = std::max(largest, ext_norm(realize(in, inv.grid(), inv.tg()), *inv.op, inv.tg()));
            }
    const auto truth = truth_of({{2, bump_c2()}});
    const SyntheticOracle tight(geo, truth, 1, 1, 0.75 * largest);
    const JetEstimate est = recover_all(tight, cfg, *inv.prop);
    ASSERT_TRUE(est.complete) << est.failure;
    EXPECT_EQ(est.find(2)->retries, 1);
    EXPECT_DOUBLE_EQ(est.find(2)->eps, 0.025);

    const SyntheticOracle refusing(geo, truth, 1, 1, 0.2 * largest);
    const JetEstimate failed = recover_all(refusing, cfg, *inv.prop);
    EXPECT_FALSE(failed.complete);
    EXPECT_EQ(failed.failed_order, 2);
    EXPECT_EQ(failed.failure.rfind("SmallnessError", 0), 0u);
    EXPECT_TRUE(failed.orders.empty());
}

TEST(RecoverJet, PartialEstimateOnLaterFailure) {
    const ExperimentGeometry geo = small_geometry();
    const Inversion inv(geo);
    RecoveryConfig cfg = inv.config(3);
    cfg.eps[2] = 0.05;
    cfg.eps[3] = 0.5;  // far too large: refused even after halving
    double largest = 0.0;
    for (const auto& tuple : cfg.tuples[2])
        for (double s1 : {-1.0, 1.0})
            for (double s2 : {-1.0, 1.0}) {
                const ExteriorInput in{{0.025 * s1, tuple[0]}, {0.025 * s2, tuple[1]}};
                largest = std::max(largest, ext_norm(realize(in, inv.grid(), inv.tg()), *inv.op, inv.tg()));
            }
    const SyntheticOracle oracle(geo, truth_of({{2, bump_c2()}, {3, gauss_c3()}}), 1, 1, 1.01 * largest);
    const JetEstimate est = recover_all(oracle, cfg, *inv.prop);
    EXPECT_FALSE(est.complete);
    EXPECT_EQ(est.failed_order, 3);
    ASSERT_EQ(est.orders.size(), 1u);
    EXPECT_EQ(est.orders[0].order, 2);
    EXPECT_EQ(est.failure.rfind("SmallnessError", 0), 0u);
}

TEST(RecoverJet, TimeDependentCoefficient) {
    const ExperimentGeometry geo = [] {
        ExperimentGeometry g = small_geometry();
        g.n_points = 41;
        g.n_steps = 16;
        return g;
    }();
    const Inversion inv(geo);
    CoefficientSpec c2 = bump_c2();
    c2.time_rate = 0.8;
    const SyntheticOracle oracle(geo, truth_of({{2, c2}}));
    RecoveryConfig cfg = inv.config(2);
    cfg.time_independent = false;
    const JetEstimate est = recover_all(oracle, cfg, *inv.prop);
    ASSERT_TRUE(est.complete) << est.failure;
    const CoefficientField& got = est.find(2)->coefficient;
    ASSERT_FALSE(got.time_independent());
    const MatrixXd a = got.space_time_values();
    const MatrixXd b = c2.sample(inv.grid(), inv.tg()).space_time_values();
    EXPECT_TRUE(a.row(0) == a.row(1));
    // Early levels precede every input and are not identifiable.
    const IndexRange om = inv.grid().omega();
    for (Index n = 0; n < a.rows(); ++n) {
        if (inv.tg().t(n) < 0.25 || inv.tg().t(n) > 0.9) continue;
        const double err = (a.row(n) - b.row(n)).segment(om.begin, om.size()).norm() /
                           b.row(n).segment(om.begin, om.size()).norm();
        EXPECT_LE(err, 0.10) << "t=" << inv.tg().t(n);
    }
}

TEST(RecoverJet, WaveOracle) {
    const ExperimentGeometry geo = small_geometry(Equation::wave);
    const Inversion inv(geo);
    const SyntheticOracle oracle(geo, truth_of({{2, bump_c2()}}));
    const JetEstimate est = recover_all(oracle, inv.config(2), *inv.prop);
    ASSERT_TRUE(est.complete) << est.failure;
    EXPECT_LE(relative_error(est.find(2)->coefficient, bump_c2().sample(inv.grid(), inv.tg()), inv.grid(), inv.tg()),
              0.15);
}

TEST(RecoverJet, DefaultStepRespectsDelta) {
    EXPECT_DOUBLE_EQ(default_stencil_step(1.0, 3, 0.1), 0.05);
    EXPECT_DOUBLE_EQ(default_stencil_step(0.12, 3, 1.0), 0.01);
    EXPECT_DOUBLE_EQ(default_stencil_step(1.0, 2, 0.0), 0.05);
}
