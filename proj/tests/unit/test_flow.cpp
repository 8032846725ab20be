#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <malthus/malthus.hpp>

using namespace malthus;

namespace {

ModelSpec adder() { return make_adder(1.0, Hazard::constant(1.0), FragmentationDensity::beta(5, 5), 0.0); }
ModelSpec general() {
    return make_general("exponential", 1.0, Hazard::constant(1.0), FragmentationDensity::beta(5, 5), 0.0);
}

struct Sample {
    PhasePoint x;
    double t;
};

std::vector<Sample> samples(std::size_t n, unsigned seed, double t_lo = -1.0, double t_hi = 2.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> ua(0.0, 2.0), uy(0.5, 3.0), ut(t_lo, t_hi);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({{ua(gen), uy(gen)}, ut(gen)});
    return out;
}

} // namespace

TEST(Advance, AdderClosedFormDoublesSize) {
    const FlowEngine f(adder());
    const auto p = f.advance({0.0, 1.0}, std::log(2.0));
    EXPECT_NEAR(p.a, 1.0, 1e-15);
    EXPECT_NEAR(p.y, 2.0, 1e-15);
}

TEST(Advance, ZeroTimeIsIdentity) {
    for (const auto& m : {adder(), general()}) {
        const FlowEngine f(m);
        const PhasePoint x{0.37, 1.91};
        EXPECT_EQ(f.advance(x, 0.0), x);
    }
}

TEST(Advance, IntegratorMatchesClosedForm) {
    const FlowEngine g(general());
    ASSERT_FALSE(g.closed_form());
    const auto p = g.advance({0.0, 1.0}, std::log(2.0));
    EXPECT_NEAR(p.a, 1.0, 1e-8);
    EXPECT_NEAR(p.y, 2.0, 1e-8);
    const FlowEngine c(adder());
    for (const auto& s : samples(50, 1)) {
        const auto q = g.advance(s.x, s.t), r = c.advance(s.x, s.t);
        if (r.y <= 0.0 || r.a < 0.0) continue;
        EXPECT_NEAR(q.a, r.a, 1e-8 * (1 + std::abs(r.a)));
        EXPECT_NEAR(q.y, r.y, 1e-8 * (1 + r.y));
    }
}

TEST(Advance, GroupLawAndInverse) {
    for (const auto& m : {adder(), general()}) {
        const FlowEngine f(m);
        std::mt19937_64 gen(7);
        std::uniform_real_distribution<double> ut(-5.0, 5.0);
        for (const auto& s : samples(30, 2)) {
            const double t = ut(gen);
            const auto back = f.advance(f.advance(s.x, t), -t);
            EXPECT_NEAR(back.a, s.x.a, 1e-8 * (1 + s.x.a));
            EXPECT_NEAR(back.y, s.x.y, 1e-8 * (1 + s.x.y));
            const auto two = f.advance(f.advance(s.x, 0.3), 0.7);
            const auto one = f.advance(s.x, 1.0);
            EXPECT_NEAR(two.a, one.a, 1e-8 * (1 + one.a));
            EXPECT_NEAR(two.y, one.y, 1e-8 * (1 + one.y));
        }
    }
}

TEST(Advance, AgeIncreasesAlongTheFlow) {
    const FlowEngine f(general());
    const PhasePoint x{0.2, 0.8};
    double prev = x.a;
    for (int k = 1; k <= 40; ++k) {
        const double a = f.advance(x, 0.05 * k).a;
        EXPECT_GT(a, prev);
        prev = a;
    }
}

TEST(Advance, GronwallEnvelopeOnCompact) {
    const ModelSpec m = adder();
    const FlowEngine f(m);
    const double a_lo = 0.1, a_hi = 0.5;
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> ua(a_lo, a_hi), uy(0.5, 1.0), ut(0.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const PhasePoint x{ua(gen), uy(gen)};
        const double t = ut(gen);
        const double a = f.advance(x, t).a;
        EXPECT_GE(a, a_lo * std::exp(m.bounds.c0 * t) * (1 - 1e-12));
        EXPECT_LE(a, (a_hi + m.bounds.c1 * t) * std::exp(m.bounds.c1 * t));
    }
}

TEST(TransitTime, AdderLogTwo) {
    const FlowEngine f(adder());
    EXPECT_NEAR(f.transit_time({0.0, 1.0}, {1.0, 2.0}), std::log(2.0), 1e-15);
    EXPECT_EQ(f.transit_time({0.3, 1.2}, {0.3, 1.2}), 0.0);
}

TEST(TransitTime, RoundTripOnOrbit) {
    for (const auto& m : {adder(), general()}) {
        const FlowEngine f(m);
        for (const auto& s : samples(30, 4, 0.0, 2.0)) {
            const auto x1 = f.advance(s.x, s.t);
            const double t = f.transit_time(s.x, x1);
            const auto back = f.advance(s.x, t);
            EXPECT_NEAR(back.a, x1.a, 1e-8 * (1 + x1.a));
            EXPECT_NEAR(back.y, x1.y, 1e-8 * (1 + x1.y));
        }
    }
}

TEST(TransitTime, OffOrbitIsRejected) {
    const FlowEngine f(adder());
    EXPECT_THROW(f.transit_time({0.0, 1.0}, {1.0, 2.5}), OffOrbit);
}

TEST(Orbit, SizeAtAgeAdder) {
    const FlowEngine f(adder());
    EXPECT_DOUBLE_EQ(f.size_at_age({0.5, 2.0}, 1.5), 3.0);
    EXPECT_DOUBLE_EQ(f.size_at_age({0.5, 2.0}, 0.5), 2.0);
    EXPECT_DOUBLE_EQ(f.age_at_size({0.5, 2.0}, 3.0), 1.5);
    EXPECT_THROW(f.size_at_age({0.5, 2.0}, -1.0), OffDomain);
    EXPECT_THROW(f.age_at_size({0.5, 2.0}, 1.0), OffDomain);
}

TEST(Orbit, IntegratorMatchesClosedFormQueries) {
    const FlowEngine g(general()), c(adder());
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> ua(0.0, 1.0), uy(0.5, 2.0), ud(0.0, 3.0);
    for (int i = 0; i < 100; ++i) {
        const PhasePoint x{ua(gen), uy(gen)};
        const double a = x.a + ud(gen);
        EXPECT_NEAR(g.size_at_age(x, a), c.size_at_age(x, a), 1e-8 * (1 + a));
        const double y = x.y + ud(gen);
        EXPECT_NEAR(g.age_at_size(x, y), c.age_at_size(x, y), 1e-8 * (1 + y));
    }
}

TEST(Jacobian, AdderClosedForm) {
    const FlowEngine f(adder());
    for (double t : {0.1, 0.7, 2.0}) {
        const auto J = f.flow_jacobian({0.3, 1.4}, t);
        EXPECT_DOUBLE_EQ(J(0, 0), 1.0);
        EXPECT_NEAR(J(0, 1), std::exp(t) - 1.0, 1e-14);
        EXPECT_DOUBLE_EQ(J(1, 0), 0.0);
        EXPECT_NEAR(J(1, 1), std::exp(t), 1e-14);
    }
    const auto I = f.flow_jacobian({0.3, 1.4}, 0.0);
    EXPECT_EQ(I.m, Jacobian2x2::identity().m);
}

TEST(Jacobian, VariationalEquationMatchesFiniteDifferences) {
    const FlowEngine g(general());
    for (const auto& s : samples(20, 6, -1.0, 2.0)) {
        const auto J = g.flow_jacobian(s.x, s.t);
        const double h = 1e-6;
        for (int c = 0; c < 2; ++c) {
            PhasePoint xp = s.x, xm = s.x;
            (c == 0 ? xp.a : xp.y) += h;
            (c == 0 ? xm.a : xm.y) -= h;
            const auto p = g.advance(xp, s.t), m = g.advance(xm, s.t);
            EXPECT_NEAR(J(0, c), (p.a - m.a) / (2 * h), 1e-5 * (1 + std::abs(J(0, c))));
            EXPECT_NEAR(J(1, c), (p.y - m.y) / (2 * h), 1e-5 * (1 + std::abs(J(1, c))));
        }
        EXPECT_GT(J.det(), 0.0);
    }
}

TEST(Flow, LinearGrowthUsesIntegrator) {
    const auto m = make_general("linear", 2.0, Hazard::constant(1.0), FragmentationDensity::uniform(), 0.0);
    const FlowEngine f(m);
    const auto p = f.advance({0.1, 1.0}, 0.5);
    EXPECT_NEAR(p.a, 1.1, 1e-9);
    EXPECT_NEAR(p.y, 2.0, 1e-9);
    EXPECT_NEAR(f.transit_time({0.1, 1.0}, {1.1, 2.0}), 0.5, 1e-9);
}
