#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fraclab/linearize.hpp"

using namespace fraclab;

namespace {

struct Bench {
    std::shared_ptr<const FracOperator> op;
    TimeGrid tg;
    const Grid& grid() const { return op->grid; }
};

Bench make_bench(double s = 0.5, Index n = 81, Index steps = 32) {
    const Grid g = build_grid(3.0, n, {-1.0, 1.0}, {1.2, 2.4}, {-2.4, -1.2});
    return {std::make_shared<const FracOperator>(assemble(g, s)), TimeGrid(1.0, steps)};
}

CoefficientField smooth(const Grid& g, double amp, double freq) {
    VectorXd c(g.n_points());
    for (Index i = 0; i < c.size(); ++i) c(i) = amp * (1.0 + 0.5 * std::cos(freq * g.x(i)));
    return CoefficientField::spatial(c);
}

std::vector<SpaceTimeField> inputs(const Bench& b, int p) {
    const std::vector<BumpSpec> specs = {
        {1.6, 0.35, 0.05, 0.6, 1.0}, {1.9, 0.45, 0.1, 0.8, 1.0}, {2.0, 0.35, 0.15, 0.7, 1.0}, {1.75, 0.5, 0.08, 0.9, 1.0}};
    std::vector<SpaceTimeField> g;
    for (int l = 0; l < p; ++l) g.push_back(make_bump(b.grid(), b.tg, specs[l]));
    return g;
}

Model make_model(const Bench& b, Nonlinearity q, Equation eq = Equation::heat) {
    Model m{b.op, std::move(q), eq, b.tg, {}};
    m.opts.tol_rel = 1e-14;
    m.opts.max_iter = 200;
    return m;
}

// Restricted-growth-string enumeration of set partitions of {0..p-1}; shares
// nothing with the bitmask recursion in the library.
std::set<std::vector<IndexSet>> brute_force_partitions(int p) {
    std::set<std::vector<IndexSet>> out;
    std::vector<int> a(static_cast<std::size_t>(p), 0);
    std::function<void(int, int)> rec = [&](int i, int max_label) {
        if (i == p) {
            std::vector<IndexSet> blocks(static_cast<std::size_t>(max_label + 1), 0);
            for (int j = 0; j < p; ++j) blocks[a[j]] |= IndexSet{1} << j;
            std::sort(blocks.begin(), blocks.end());
            out.insert(blocks);
            return;
        }
        for (int label = 0; label <= max_label + 1; ++label) {
            a[i] = label;
            rec(i + 1, std::max(max_label, label));
        }
    };
    if (p == 0) return out;
    a[0] = 0;
    rec(1, 0);
    return out;
}

}  // namespace

TEST(SetPartitions, MatchBruteForceEnumeration) {
    const std::vector<std::size_t> bell = {1, 2, 5, 15, 52, 203};
    for (int p = 1; p <= 6; ++p) {
        const auto parts = set_partitions(full_set(p));
        EXPECT_EQ(parts.size(), bell[p - 1]);
        std::set<std::vector<IndexSet>> mine;
        for (auto blocks : parts) {
            std::sort(blocks.begin(), blocks.end());
            mine.insert(blocks);
        }
        EXPECT_EQ(mine.size(), parts.size()) << "duplicates for p=" << p;
        EXPECT_EQ(mine, brute_force_partitions(p));
    }
}

TEST(SetPartitions, WorkOnSparseMasks) {
    const auto parts = set_partitions(0b10110);
    EXPECT_EQ(parts.size(), 5u);
    for (const auto& blocks : parts) {
        IndexSet u = 0;
        for (IndexSet b : blocks) {
            EXPECT_EQ(u & b, 0u);
            u |= b;
        }
        EXPECT_EQ(u, 0b10110u);
    }
}

TEST(DNMap, ZeroAndLinearity) {
    const Bench b = make_bench();
    const SpaceTimeField zero = SpaceTimeField::zeros(b.tg, b.grid());
    const DNData d0 = dn_map(zero, *b.op);
    EXPECT_EQ(d0.values.rows(), b.tg.n_levels());
    EXPECT_EQ(d0.values.cols(), b.grid().v_set().size());
    EXPECT_EQ(d0.values.cwiseAbs().maxCoeff(), 0.0);
    const auto g = inputs(b, 2);
    const DNData lhs = dn_map(2.0 * g[0] + (-3.0) * g[1], *b.op);
    const MatrixXd rhs = 2.0 * dn_map(g[0], *b.op).values - 3.0 * dn_map(g[1], *b.op).values;
    EXPECT_LT((lhs.values - rhs).cwiseAbs().maxCoeff(), 1e-12 * rhs.cwiseAbs().maxCoeff());
}

TEST(DNOfInput, ZeroInputAndOddSymmetry) {
    const Bench b = make_bench();
    const Model odd = make_model(b, make_polynomial_q({{3, smooth(b.grid(), 5.0, 1.0)}}, 0.5, 3));
    const DNData zero = dn_of_input(odd, SpaceTimeField::zeros(b.tg, b.grid()));
    EXPECT_EQ(zero.values.cwiseAbs().maxCoeff(), 0.0);
    const SpaceTimeField f = 0.8 * inputs(b, 1)[0];
    const DNData plus = dn_of_input(odd, f), minus = dn_of_input(odd, -1.0 * f);
    EXPECT_LT((plus.values + minus.values).cwiseAbs().maxCoeff(), 1e-12 * plus.values.cwiseAbs().maxCoeff());
}

TEST(DNOfInput, DeterministicForEqualModels) {
    const Bench b = make_bench();
    const Model m1 = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2));
    const Model m2 = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2));
    const SpaceTimeField f = 0.5 * inputs(b, 1)[0];
    EXPECT_TRUE(dn_of_input(m1, f).values == dn_of_input(m2, f).values);
}

TEST(DNOfInput, QuadraticRemainderOfTheLinearization) {
    const Bench b = make_bench();
    const Model m = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2));
    const SpaceTimeField g = inputs(b, 1)[0];
    const MatrixXd lin = dn_map(first_linearized(*b.op, g, b.tg, Equation::heat), *b.op).values;
    std::vector<double> rem;
    for (double eps : {0.2, 0.1, 0.05}) rem.push_back((dn_of_input(m, eps * g).values - eps * lin).norm());
    EXPECT_GT(std::log2(rem[0] / rem[1]), 1.8);
    EXPECT_GT(std::log2(rem[1] / rem[2]), 1.8);
}

TEST(FirstLinearized, MatchesLinearSolveAndIgnoresQ) {
    const Bench b = make_bench();
    const SpaceTimeField g = inputs(b, 1)[0];
    const SpaceTimeField u = first_linearized(*b.op, g, b.tg, Equation::heat);
    HeatProblem pb;
    pb.exterior = g;
    EXPECT_TRUE(u.values == solve_linear(*b.op, pb, b.tg).values);
    const Propagator prop(b.op, b.tg, Equation::heat);
    EXPECT_LT((prop.free(g).values - u.values).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(first_linearized(*b.op, SpaceTimeField::zeros(b.tg, b.grid()), b.tg, Equation::heat).sup_norm(), 0.0);
}

TEST(PartitionSource, PairAndTripleFormulas) {
    const Bench b = make_bench();
    const Propagator prop(b.op, b.tg, Equation::heat);
    const CoefficientField c2 = smooth(b.grid(), 2.0, 1.3);
    const Nonlinearity q = make_polynomial_q({{2, c2}}, 0.5, 3);
    LinearizedFamily fam = make_family(prop, inputs(b, 3));
    const IndexRange om = b.grid().omega();
    auto om_cols = [&](IndexSet s) { return fam.at(s).values.middleCols(om.begin, om.size()).array(); };
    const Eigen::ArrayXXd c2_om = q.jet(2, b.tg, b.grid()).middleCols(om.begin, om.size()).array();

    const MatrixXd pair = partition_source(q, 0b011, fam, b.tg, b.grid());
    EXPECT_LT((pair.array() - c2_om * om_cols(1) * om_cols(2)).abs().maxCoeff(), 1e-14);

    EXPECT_THROW(partition_source(q, 0b111, fam, b.tg, b.grid()), MissingBlockError);
    complete_family(prop, q, 0b111, fam);
    const MatrixXd triple = partition_source(q, 0b111, fam, b.tg, b.grid());
    const Eigen::ArrayXXd expected =
        c2_om * (om_cols(0b011) * om_cols(0b100) + om_cols(0b101) * om_cols(0b010) + om_cols(0b110) * om_cols(0b001));
    EXPECT_LT((triple.array() - expected).abs().maxCoeff(), 1e-14 * (1.0 + expected.abs().maxCoeff()));
}

TEST(PartitionSource, FourSetAgainstBruteForceTerms) {
    const Bench b = make_bench();
    const Grid& g = b.grid();
    const CoefficientField c2 = smooth(g, 2.0, 1.0), c4 = smooth(g, -1.5, 2.0);
    const Nonlinearity q = make_polynomial_q({{2, c2}, {4, c4}}, 0.5, 4);
    // arbitrary fields for every block, so the check is purely combinatorial
    LinearizedFamily fam;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    for (IndexSet s = 1; s < 16; ++s) {
        SpaceTimeField u = SpaceTimeField::zeros(b.tg, g);
        for (Index n = 0; n < u.values.rows(); ++n)
            for (Index i = 0; i < u.values.cols(); ++i) u.values(n, i) = nd(rng);
        fam.solutions.emplace(s, u);
    }
    const MatrixXd src = partition_source(q, 0b1111, fam, b.tg, g);
    const IndexRange om = g.omega();
    MatrixXd expected = MatrixXd::Zero(src.rows(), src.cols());
    int c2_terms = 0, c4_terms = 0;
    for (const auto& blocks : brute_force_partitions(4)) {
        if (blocks.size() == 2) ++c2_terms;
        if (blocks.size() == 4) ++c4_terms;
        if (blocks.size() != 2 && blocks.size() != 4) continue;
        const CoefficientField& c = blocks.size() == 2 ? c2 : c4;
        for (Index n = 0; n < src.rows(); ++n)
            for (Index i = 0; i < src.cols(); ++i) {
                double prod = c(n, om.begin + i);
                for (IndexSet blk : blocks) prod *= fam.at(blk).values(n, om.begin + i);
                expected(n, i) += prod;
            }
    }
    EXPECT_EQ(c2_terms, 7);
    EXPECT_EQ(c4_terms, 1);
    EXPECT_LT((src - expected).cwiseAbs().maxCoeff(), 1e-12 * expected.cwiseAbs().maxCoeff());
}

TEST(LinearizedSolution, VanishesWithoutSecondDerivativeAndIsSymmetric) {
    const Bench b = make_bench();
    const Propagator prop(b.op, b.tg, Equation::heat);
    LinearizedFamily fam = make_family(prop, inputs(b, 2));
    const Nonlinearity cubic = make_polynomial_q({{3, smooth(b.grid(), 1.0, 1.0)}}, 0.5, 3);
    EXPECT_EQ(linearized_solution(prop, cubic, 0b11, fam).sup_norm(), 0.0);

    const Nonlinearity q = make_polynomial_q({{2, smooth(b.grid(), 2.0, 1.0)}}, 0.5, 2);
    const SpaceTimeField u12 = linearized_solution(prop, q, 0b11, fam);
    LinearizedFamily swapped = make_family(prop, {fam.inputs[1], fam.inputs[0]});
    const SpaceTimeField u21 = linearized_solution(prop, q, 0b11, swapped);
    EXPECT_LT((u12.values - u21.values).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(u12.vanishes_off(b.grid().omega()));
    EXPECT_GT(u12.sup_norm(), 0.0);
    EXPECT_THROW(linearized_solution(prop, q, 0b01, fam), ParamError);
}

TEST(MixedDifference, FirstOrderIsExactForLinearModel) {
    const Bench b = make_bench();
    const Model m = make_model(b, make_polynomial_q({}, 0.5, 2));
    const auto g = inputs(b, 1);
    const MatrixXd d1 = mixed_difference_dn(m, g, 0b1, 0.1).values;
    const MatrixXd d2 = mixed_difference_dn(m, g, 0b1, 0.01).values;
    EXPECT_LT((d1 - d2).cwiseAbs().maxCoeff(), 1e-10 * d1.cwiseAbs().maxCoeff());
}

TEST(MixedDifference, ConvergesAtSecondOrderForOrdersOneToThree) {
    const Bench b = make_bench();
    const Nonlinearity q = make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}, {3, smooth(b.grid(), -4.0, 2.0)}}, 0.5, 3);
    const Model m = make_model(b, q);
    const Propagator prop(b.op, b.tg, Equation::heat);
    const auto g = inputs(b, 3);
    LinearizedFamily fam = make_family(prop, g);
    complete_family(prop, q, 0b111, fam);
    for (IndexSet s : {IndexSet{0b1}, IndexSet{0b11}, IndexSet{0b111}}) {
        const MatrixXd exact = dn_map(fam.at(s), *b.op).values;
        std::vector<double> err;
        for (double eps : {0.1, 0.05, 0.025}) err.push_back((mixed_difference_dn(m, g, s, eps).values - exact).norm());
        EXPECT_GE(std::log2(err[0] / err[1]), 1.7) << "set " << s;
        EXPECT_GE(std::log2(err[1] / err[2]), 1.7) << "set " << s;
    }
}

TEST(MixedDifference, EqualModelsGiveEqualDifferences) {
    const Bench b = make_bench();
    const auto g = inputs(b, 2);
    const Model m1 = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2));
    const Model m2 = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2));
    EXPECT_TRUE(mixed_difference_dn(m1, g, 0b11, 0.05).values == mixed_difference_dn(m2, g, 0b11, 0.05).values);
}

TEST(MixedDifference, ThreadCountDoesNotChangeBits) {
    const Bench b = make_bench();
    const auto g = inputs(b, 3);
    const Model m = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 3));
    EXPECT_TRUE(mixed_difference_dn(m, g, 0b111, 0.05, 1).values == mixed_difference_dn(m, g, 0b111, 0.05, 4).values);
}

TEST(MixedDifference, RejectsOversizedStencil) {
    const Bench b = make_bench();
    const auto g = inputs(b, 2);
    const Model m = make_model(b, make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.01, 2));
    EXPECT_THROW(mixed_difference_dn(m, g, 0b11, 5.0), StencilError);
    EXPECT_THROW(mixed_difference_dn(m, g, 0b11, 0.0), StencilError);
}

TEST(DNEquality, SharedJetsGiveEqualLinearizedData) {
    const Bench b = make_bench();
    const Grid& gr = b.grid();
    const Propagator prop(b.op, b.tg, Equation::heat);
    // same jets up to order 3, different order-4 jets
    const Nonlinearity q1 = make_polynomial_q({{2, smooth(gr, 2.0, 1.0)}, {3, smooth(gr, 1.0, 2.0)}, {4, smooth(gr, 5.0, 1.0)}}, 0.5, 4);
    const Nonlinearity q2 = make_polynomial_q({{2, smooth(gr, 2.0, 1.0)}, {3, smooth(gr, 1.0, 2.0)}, {4, smooth(gr, -7.0, 3.0)}}, 0.5, 4);
    LinearizedFamily f1 = make_family(prop, inputs(b, 4)), f2 = make_family(prop, inputs(b, 4));
    complete_family(prop, q1, 0b1111, f1);
    complete_family(prop, q2, 0b1111, f2);
    for (IndexSet s = 1; s < 16; ++s) {
        const double diff = (dn_map(f1.at(s), *b.op).values - dn_map(f2.at(s), *b.op).values).cwiseAbs().maxCoeff();
        if (set_size(s) <= 3) {
            EXPECT_LE(diff, 1e-9) << "set " << s;
        } else {
            EXPECT_GT(diff, 1e-8);
        }
    }
}

TEST(DNEquality, SecondOrderDifferenceSolvesTheSourceProblem) {
    const Bench b = make_bench();
    const Grid& gr = b.grid();
    const Propagator prop(b.op, b.tg, Equation::heat);
    const CoefficientField c2a = smooth(gr, 2.0, 1.0), c2b = smooth(gr, -1.0, 3.0);
    const Nonlinearity q1 = make_polynomial_q({{2, c2a}}, 0.5, 2), q2 = make_polynomial_q({{2, c2b}}, 0.5, 2);
    LinearizedFamily f1 = make_family(prop, inputs(b, 2)), f2 = make_family(prop, inputs(b, 2));
    const SpaceTimeField w = 1.0 * linearized_solution(prop, q1, 0b11, f1) + (-1.0) * linearized_solution(prop, q2, 0b11, f2);
    // (D_t + A) W + (c2a - c2b) U_1 U_2 = 0 on Omega, checked with the implicit Euler residual
    const IndexRange om = gr.omega();
    const MatrixXd aw = apply_rows(*b.op, w.values);
    double worst = 0.0, scale = 0.0;
    for (Index n = 1; n < b.tg.n_levels(); ++n)
        for (Index i = om.begin; i < om.end; ++i) {
            const double src = (c2a(n, i) - c2b(n, i)) * f1.at(1).values(n, i) * f1.at(2).values(n, i);
            const double r = (w.values(n, i) - w.values(n - 1, i)) / b.tg.dt() + aw(n, i) + src;
            worst = std::max(worst, std::abs(r));
            scale = std::max(scale, std::abs(src));
        }
    EXPECT_LE(worst, 1e-8 * std::max(1.0, scale));
}

TEST(Propagator, WaveFamilyMatchesMixedDifference) {
    const Bench b = make_bench(0.75, 81, 32);
    const Nonlinearity q = make_polynomial_q({{2, smooth(b.grid(), 3.0, 1.0)}}, 0.5, 2);
    const Model m = make_model(b, q, Equation::wave);
    const Propagator prop(b.op, b.tg, Equation::wave);
    const auto g = inputs(b, 2);
    LinearizedFamily fam = make_family(prop, g);
    const MatrixXd exact = dn_map(linearized_solution(prop, q, 0b11, fam), *b.op).values;
    std::vector<double> err;
    for (double eps : {0.1, 0.05}) err.push_back((mixed_difference_dn(m, g, 0b11, eps).values - exact).norm());
    EXPECT_GE(std::log2(err[0] / err[1]), 1.7);
    EXPECT_THROW(Propagator(std::make_shared<const FracOperator>(assemble(b.grid(), 0.4)), b.tg, Equation::wave),
                 ParamError);
}
