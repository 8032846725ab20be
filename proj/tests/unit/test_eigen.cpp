#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <malthus/malthus.hpp>

using namespace malthus;

namespace {

ModelSpec adder(double d0 = 0.0) {
    return make_adder(1.0, Hazard::constant(1.0), FragmentationDensity::beta(5, 5), d0);
}

const RenewalOperator& op8() {
    static const RenewalOperator op(adder(), SizeGrid::uniform(8.0, 512));
    return op;
}

const EigenResult& sol8() {
    static const EigenResult r = solve_malthus(op8());
    return r;
}

} // namespace

TEST(LeadingEigen, SpectralValueAtGrowthRateIsOne) {
    EXPECT_NEAR(mu_of(op8(), 1.0), 1.0, 1e-3);
}

TEST(LeadingEigen, SupercriticalAtZeroSubcriticalAtLargeLambda) {
    EXPECT_GT(mu_of(op8(), 0.0), 1.0);
    EXPECT_LT(mu_of(op8(), 50.0), 1.0);
}

TEST(LeadingEigen, StrictlyDecreasingInLambda) {
    double prev = mu_of(op8(), 0.0);
    for (double l : {0.5, 1.0, 2.0}) {
        const double mu = mu_of(op8(), l);
        EXPECT_LT(mu, prev);
        prev = mu;
    }
}

TEST(LeadingEigen, IndependentOfStartingVector) {
    const auto km = op8().matrix(1.0);
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    std::vector<double> s1(km->size()), s2(km->size());
    for (auto& v : s1) v = u(gen);
    for (auto& v : s2) v = u(gen);
    const auto a = leading_eigen(*km, {}, s1), b = leading_eigen(*km, {}, s2);
    const double na = std::accumulate(a.eta.begin(), a.eta.end(), 0.0);
    const double nb = std::accumulate(b.eta.begin(), b.eta.end(), 0.0);
    for (std::size_t i = 0; i < a.eta.size(); ++i) EXPECT_NEAR(a.eta[i] / na, b.eta[i] / nb, 1e-8 * (a.eta[i] / na) + 1e-14);
    EXPECT_NEAR(a.mu, b.mu, 1e-10);
}

TEST(SolveMalthus, AdderRootBelowGrowthRate) {
    const auto& r = sol8();
    EXPECT_GE(r.lambda_R, 0.99);
    EXPECT_LE(r.lambda_R, 1.0);
    EXPECT_NEAR(r.mu, 1.0, 1e-9);
    EXPECT_LE(r.residual, 1e-8);
    EXPECT_LE(r.dual_residual, 1e-8);
}

TEST(SolveMalthus, Normalisations) {
    const auto& r = sol8();
    EXPECT_EQ(r.eta[op8().grid().index_of(1.0)], 1.0);
    EXPECT_NEAR(std::accumulate(r.nu.begin(), r.nu.end(), 0.0), 1.0, 1e-12);
    for (double v : r.eta) EXPECT_GT(v, 0.0);
    for (double v : r.nu) EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(r.nu_eta));
    EXPECT_GT(r.nu_eta, 0.0);
}

TEST(SolveMalthus, DeathShiftsTheSpectrum) {
    const RenewalOperator op(adder(0.2), SizeGrid::uniform(8.0, 512));
    const auto r = solve_malthus(op);
    EXPECT_NEAR(r.lambda_R, sol8().lambda_R, 1e-12);
    EXPECT_NEAR(lambda_malthus(r), sol8().lambda_R - 0.2, 1e-12);
}

TEST(SolveMalthus, NondecreasingInR) {
    double prev = 0.0;
    for (const auto& g : SizeGrid::nested({4.0, 8.0, 16.0}, 512)) {
        const auto r = solve_malthus(RenewalOperator(adder(), g));
        EXPECT_GE(r.lambda_R, prev) << "R = " << g.R;
        prev = r.lambda_R;
    }
}

TEST(SolveMalthus, BracketFailureWithoutGrowth) {
    // fewer than one offspring per division on average: mu(0) < 1
    auto m = adder();
    m.kernel = Kernel::fragmentation(FragmentationDensity::beta(5, 5), 0.9);
    const RenewalOperator op(m, SizeGrid::uniform(4.0, 64));
    EXPECT_THROW(solve_malthus(op), BracketFailure);
}

TEST(ReconstructH, BoundaryEqualsEta) {
    const auto& r = sol8();
    for (std::size_t i : {std::size_t{20}, std::size_t{64}, std::size_t{200}, std::size_t{400}}) {
        const double y = op8().grid().nodes[i];
        EXPECT_NEAR(reconstruct_h(op8(), r, {0.0, y}), r.eta[i], 1e-6 * (1 + r.eta[i]));
    }
}

TEST(ReconstructH, BoundaryProfileIsLinear) {
    const auto& r = sol8();
    for (double y : {0.5, 1.0, 2.0, 3.0, 4.0}) EXPECT_NEAR(reconstruct_h(op8(), r, {0.0, y}) / y, 1.0, 0.01);
}

TEST(ReconstructH, GeneratorResidualWithinGridError) {
    const auto m = adder();
    const RenewalOperator op(m, SizeGrid::uniform(8.0, 256));
    const auto r = solve_malthus(op);
    const ScalarField h = [&](PhasePoint x) { return reconstruct_h(op, r, x); };
    double grid_error = std::abs(r.lambda_R - m.lambda_growth);
    for (double y : {0.5, 1.0, 2.0, 3.0}) grid_error = std::max(grid_error, std::abs(h({0.0, y}) / y - 1.0));
    for (PhasePoint x : {PhasePoint{0.2, 1.0}, PhasePoint{0.5, 1.5}, PhasePoint{0.1, 0.6}}) {
        const double hx = h(x);
        EXPECT_LT(std::abs(apply_generator(m, h, x) - r.lambda_R * hx) / hx, 5.0 * grid_error);
    }
}

TEST(EulerLotka, ZeroAtGrowthRateUntruncated) {
    const FirstJumpLaw law(adder());
    for (double y : {0.5, 1.0, 2.7}) EXPECT_NEAR(euler_lotka_residual(law, 1.0, y), 0.0, 1e-9);
}

TEST(EulerLotka, ZeroLambdaGivesOffspringExcess) {
    const FirstJumpLaw law(adder());
    EXPECT_NEAR(euler_lotka_residual(law, 0.0, 1.3), 1.0, 1e-9);
}

TEST(EulerLotka, StrictlyDecreasingInLambda) {
    const FirstJumpLaw law(adder());
    double prev = euler_lotka_residual(law, 0.0, 1.0);
    for (double l : {0.25, 0.5, 1.0, 1.5}) {
        const double v = euler_lotka_residual(law, l, 1.0);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(EulerLotka, TruncatedResidualAtRoot) {
    // Sizes are drawn from the bulk [0.25, 8]; within a few units of R the
    // truncated eigenfunction departs from y and the identity no longer applies.
    const auto m = adder();
    const RenewalOperator op(m, SizeGrid::uniform(16.0, 512));
    const auto r = solve_malthus(op);
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<std::size_t> pick(op.grid().index_of(0.25), op.grid().index_of(8.0));
    for (int k = 0; k < 5; ++k) {
        const double y = op.grid().nodes[pick(gen)];
        EXPECT_LT(std::abs(euler_lotka_residual(op.law(), r.lambda_R, y, 16.0)), 1e-6) << "y = " << y;
    }
}
