#include <gtest/gtest.h>

#include <cmath>

#include "fraclab/nonlinearity.hpp"

using namespace fraclab;

namespace {

Grid small_grid() { return build_grid(3.0, 81, {-1.0, 1.0}, {1.2, 2.4}, {-2.4, -1.2}); }

VectorXd profile(const Grid& g, double amp) {
    VectorXd c(g.n_points());
    for (Index i = 0; i < c.size(); ++i) c(i) = amp * (1.0 + 0.5 * std::cos(g.x(i)));
    return c;
}

std::vector<double> z_grid(double delta, int n) {
    std::vector<double> z;
    for (int j = -n; j <= n; ++j) z.push_back(delta * j / n);
    return z;
}

}  // namespace

TEST(PolynomialQ, DerivativesAreExact) {
    const Grid g = small_grid();
    const VectorXd c2 = profile(g, 2.0), c3 = profile(g, -1.0);
    const Nonlinearity q = make_polynomial_q(
        {{2, CoefficientField::spatial(c2)}, {3, CoefficientField::spatial(c3)}}, 0.5, 3);
    const Index i = 40;
    const double z = 0.3;
    EXPECT_NEAR(q.eval(0, 0, i, z), c2(i) * z * z / 2 + c3(i) * z * z * z / 6, 1e-15);
    EXPECT_NEAR(q.eval(1, 0, i, z), c2(i) * z + c3(i) * z * z / 2, 1e-15);
    EXPECT_NEAR(q.eval(2, 0, i, z), c2(i) + c3(i) * z, 1e-15);
    EXPECT_NEAR(q.eval(3, 0, i, z), c3(i), 1e-15);
    EXPECT_EQ(q.eval(4, 0, i, z), 0.0);
    EXPECT_EQ(q.eval(0, 3, i, 0.0), 0.0);
    EXPECT_EQ(q.eval(1, 3, i, 0.0), 0.0);
}

TEST(PolynomialQ, StructuralConstants) {
    const Grid g = small_grid();
    const Nonlinearity q = make_polynomial_q({{2, CoefficientField::spatial(profile(g, 2.0))}}, 0.5, 2);
    const double sup = profile(g, 2.0).maxCoeff();
    EXPECT_NEAR(q.phi(0.1), 0.1 * sup, 1e-14);
    EXPECT_EQ(q.phi(0.0), 0.0);
    EXPECT_NEAR(q.bound(2), sup, 1e-14);
    EXPECT_EQ(q.bound(3), 0.0);
    EXPECT_THROW(q.bound(4), ParamError);
    EXPECT_THROW(q.bound(1), ParamError);
}

TEST(PolynomialQ, RejectsLinearTermsAndBadParameters) {
    const Grid g = small_grid();
    const auto c = CoefficientField::spatial(profile(g, 1.0));
    EXPECT_THROW(make_polynomial_q({{1, c}}, 0.5, 2), ParamError);
    EXPECT_THROW(make_polynomial_q({{2, c}}, 0.0, 2), ParamError);
    EXPECT_THROW(make_polynomial_q({{2, c}}, 0.5, 1), ParamError);
    VectorXd bad = profile(g, 1.0);
    bad(3) = std::nan("");
    EXPECT_THROW(make_polynomial_q({{2, CoefficientField::spatial(bad)}}, 0.5, 2), ParamError);
}

TEST(PolynomialQ, JetOnOmegaOnly) {
    const Grid g = small_grid();
    const TimeGrid tg(1.0, 8);
    const Nonlinearity q = make_polynomial_q({{2, CoefficientField::spatial(profile(g, 1.0))}}, 0.5, 2);
    const MatrixXd j2 = q.jet(2, tg, g);
    EXPECT_EQ(j2.rows(), 9);
    EXPECT_EQ(j2(4, 0), 0.0);
    EXPECT_NEAR(j2(4, 40), profile(g, 1.0)(40), 1e-15);
    EXPECT_EQ(q.jet(3, tg, g).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Assumptions, PolynomialPasses) {
    const Grid g = small_grid();
    const TimeGrid tg(1.0, 8);
    MatrixXd ct(9, g.n_points());
    for (Index n = 0; n < 9; ++n) ct.row(n) = profile(g, 1.0 + 0.1 * n).transpose();
    const Nonlinearity q = make_polynomial_q(
        {{2, CoefficientField::space_time(ct)}, {4, CoefficientField::spatial(profile(g, 3.0))}}, 0.4, 3);
    EXPECT_FALSE(q.time_independent());
    const AssumptionReport rep = check_assumptions(q, g, tg, z_grid(0.4, 20));
    EXPECT_TRUE(rep.all_pass());
    EXPECT_EQ(rep.rejected_samples, 0u);
    EXPECT_EQ(rep.bounded.size(), 3u);
}

TEST(Assumptions, NonzeroDerivativeAtZeroFails) {
    const Grid g = small_grid();
    const TimeGrid tg(1.0, 8);
    // q = z + z^2: dq/dz(0) = 1
    auto eval = [](int k, Index, Index, double z) {
        switch (k) {
            case 0: return z + z * z;
            case 1: return 1.0 + 2.0 * z;
            case 2: return 2.0;
            default: return 0.0;
        }
    };
    const Nonlinearity q = make_sampled_q(eval, 0.5, 2, g, tg, z_grid(0.5, 10), true);
    EXPECT_TRUE(q.sampled_bounds());
    const AssumptionReport rep = check_assumptions(q, g, tg, z_grid(0.5, 10));
    EXPECT_TRUE(rep.vanishes_at_zero);
    EXPECT_FALSE(rep.derivative_vanishes);
    EXPECT_FALSE(rep.all_pass());
}

TEST(Assumptions, SamplesOutsideTheBallAreCounted) {
    const Grid g = small_grid();
    const TimeGrid tg(1.0, 8);
    const Nonlinearity q = make_polynomial_q({{2, CoefficientField::spatial(profile(g, 1.0))}}, 0.2, 2);
    const AssumptionReport rep = check_assumptions(q, g, tg, {-0.5, -0.1, 0.0, 0.1, 0.3});
    EXPECT_EQ(rep.rejected_samples, 2u);
    EXPECT_TRUE(rep.all_pass());
}

TEST(SampledQ, SineNonlinearity) {
    // q = sin(z) - z has q(0) = q'(0) = 0, q'' = -sin z, q''' = -cos z
    const Grid g = small_grid();
    const TimeGrid tg(1.0, 8);
    auto eval = [](int k, Index, Index, double z) {
        switch (k) {
            case 0: return std::sin(z) - z;
            case 1: return std::cos(z) - 1.0;
            case 2: return -std::sin(z);
            case 3: return -std::cos(z);
            default: return std::sin(z);
        }
    };
    const Nonlinearity q = make_sampled_q(eval, 0.5, 2, g, tg, z_grid(0.5, 50), true);
    EXPECT_NEAR(q.bound(3), 1.0, 1e-12);
    EXPECT_NEAR(q.phi(0.5), 1.0 - std::cos(0.5), 1e-12);
    EXPECT_TRUE(check_assumptions(q, g, tg, z_grid(0.5, 50)).all_pass());
}
