#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include <malthus/malthus.hpp>

#include "support.hpp"

using namespace malthus;

namespace {

ModelSpec adder(double d0 = 0.2, Hazard B = Hazard::constant(1.0)) {
    return make_adder(1.0, B, FragmentationDensity::beta(5, 5), d0);
}

// Cumulative hazard of a piecewise-linear table with constant extension,
// integrated segment by segment.
double table_cumulative(const std::vector<double>& a, const std::vector<double>& B, double x) {
    double H = 0.0;
    if (x <= a.front()) return B.front() * x;
    H += B.front() * a.front();
    for (std::size_t k = 0; k + 1 < a.size(); ++k) {
        const double lo = a[k], hi = std::min(a[k + 1], x);
        if (hi <= lo) break;
        const double Bhi = B[k] + (B[k + 1] - B[k]) * (hi - lo) / (a[k + 1] - a[k]);
        H += 0.5 * (B[k] + Bhi) * (hi - lo);
    }
    if (x > a.back()) H += B.back() * (x - a.back());
    return H;
}

std::vector<double> draw_added_sizes(const Hazard& B, std::size_t n, std::uint64_t seed) {
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) {
        Stream rng(mix_keys(seed, i));
        xs[i] = sample_division_age(B, {0.0, 1.0}, rng);
    }
    return xs;
}

} // namespace

TEST(DivisionAge, ExponentialForUnitHazard) {
    const auto xs = draw_added_sizes(Hazard::constant(1.0), 100000, 11);
    const double D = oracle::ks_statistic(xs, [](double a) { return -std::expm1(-a); });
    EXPECT_LT(D, oracle::ks_critical_1pct(xs.size()));
}

TEST(DivisionAge, TabulatedHazardMatchesIntegratedCdf) {
    const std::vector<double> a{0.0, 0.5, 1.0, 2.0}, B{0.2, 1.5, 0.8, 2.0};
    const auto xs = draw_added_sizes(Hazard::table(a, B), 100000, 12);
    const double D = oracle::ks_statistic(xs, [&](double x) { return -std::expm1(-table_cumulative(a, B, x)); });
    EXPECT_LT(D, oracle::ks_critical_1pct(xs.size()));
}

TEST(DivisionAge, MinimalAgeIsRespected) {
    const auto xs = draw_added_sizes(Hazard::constant(3.0, 0.4), 10000, 13);
    for (double x : xs) EXPECT_GE(x, 0.4);
}

TEST(DivisionAge, InversionRoundTrip) {
    const Hazard tab = Hazard::table({0.0, 0.5, 1.0, 2.0}, {0.2, 1.5, 0.8, 2.0});
    for (const auto& B : {Hazard::constant(1.0), Hazard::constant(2.0, 0.3), tab})
        for (double u : {1e-6, 0.01, 0.3, 0.5, 0.9, 0.999999}) EXPECT_NEAR(B.cdf(B.quantile(u)), u, 1e-10);
}

TEST(DivisionAge, ConditionedOnCurrentAge) {
    // memoryless for B = 1: the remaining added size is Exp(1) from any age
    std::vector<double> rem(20000);
    for (std::size_t i = 0; i < rem.size(); ++i) {
        Stream rng(mix_keys(99, i));
        rem[i] = sample_division_age(Hazard::constant(1.0), {0.7, 1.5}, rng) - 0.7;
    }
    EXPECT_LT(oracle::ks_statistic(rem, [](double a) { return -std::expm1(-a); }), oracle::ks_critical_1pct(rem.size()));
}

TEST(DivisionTime, AdderClosedForm) {
    const FlowEngine f(adder());
    EXPECT_NEAR(division_time_from_added_size(f, {0.0, 1.0}, 1.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(division_time_from_added_size(f, {0.0, 1.0}, 1e-12), 0.0, 1e-11);
    const FlowEngine g(make_general("exponential", 1.0, Hazard::constant(1.0), FragmentationDensity::beta(5, 5)));
    for (double d : {0.1, 0.5, 2.0, 5.0})
        EXPECT_NEAR(division_time_from_added_size(g, {0.3, 1.7}, d), division_time_from_added_size(f, {0.3, 1.7}, d), 1e-8);
}

TEST(Population, ZeroHorizonRecordsTheFounder) {
    SimConfig c;
    c.t_end = 0.0;
    const auto tr = simulate_population(adder(), {0.0, 1.0}, c);
    ASSERT_EQ(tr.records.size(), 1u);
    EXPECT_EQ(tr.records[0].count, 1u);
    EXPECT_EQ(tr.records[0].individuals[0], (PhasePoint{0.0, 1.0}));
    EXPECT_EQ(empirical_functional(tr.records[0], [](PhasePoint x) { return x.y; }), 1.0);
}

TEST(Population, DivisionsConserveMassExactly) {
    SimConfig c;
    c.seed = 5;
    c.t_end = 4.0;
    c.record_times = {0.5, 1.0, 2.0, 3.0, 4.0};
    c.keep_events = true;
    for (std::size_t r = 0; r < 20; ++r) {
        const auto tr = simulate_population(adder(0.0), {0.0, 1.0}, c, r);
        for (std::size_t k = 1; k < tr.records.size(); ++k) EXPECT_GE(tr.records[k].count, tr.records[k - 1].count);
        for (const auto& e : tr.events) {
            ASSERT_EQ(e.kind, EventKind::Division);
            EXPECT_EQ(e.y1 + e.y2, e.y);
            EXPECT_GT(e.y1, 0.0);
            EXPECT_GT(e.y2, 0.0);
        }
        for (const auto& rec : tr.records) {
            EXPECT_EQ(rec.count, rec.individuals.size());
            for (const auto& p : rec.individuals) {
                EXPECT_GE(p.a, 0.0);
                EXPECT_LE(p.a, p.y);
            }
        }
    }
}

TEST(Population, NewbornsStartAtZeroAge) {
    SimConfig c;
    c.seed = 6;
    c.t_end = 3.0;
    c.keep_events = true;
    const auto tr = simulate_population(adder(0.0), {0.0, 1.0}, c);
    // just after a division, the two newest individuals have age 0 and the recorded sizes
    ASSERT_FALSE(tr.events.empty());
    const auto& e = tr.events.front();
    SimConfig c2 = c;
    c2.t_end = e.t;
    c2.record_times = {e.t};
    const auto snap = simulate_population(adder(0.0), {0.0, 1.0}, c2);
    int newborns = 0;
    for (const auto& p : snap.records[0].individuals)
        if (p.a == 0.0 && (p.y == e.y1 || p.y == e.y2)) ++newborns;
    EXPECT_EQ(newborns, 2);
}

TEST(Population, ReproducibleGivenSeed) {
    SimConfig c;
    c.seed = 77;
    c.t_end = 3.0;
    c.replicates = 4;
    c.keep_events = true;
    const auto a = simulate_replicates(adder(), {0.0, 1.0}, c);
    const auto b = simulate_replicates(adder(), {0.0, 1.0}, c);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t r = 0; r < a.size(); ++r) {
        ASSERT_EQ(a[r].events.size(), b[r].events.size());
        for (std::size_t k = 0; k < a[r].events.size(); ++k) {
            EXPECT_EQ(a[r].events[k].t, b[r].events[k].t);
            EXPECT_EQ(a[r].events[k].key, b[r].events[k].key);
            EXPECT_EQ(a[r].events[k].y1, b[r].events[k].y1);
        }
    }
}

TEST(Population, CapStopsWithFlag) {
    SimConfig c;
    c.t_end = 20.0;
    c.cap = 200;
    const auto tr = simulate_population(adder(0.0), {0.0, 1.0}, c);
    EXPECT_TRUE(tr.cap_exceeded);
    EXPECT_TRUE(tr.records.empty());
}

TEST(Population, MeanSizeGrowsAtMalthusRate) {
    SimConfig c;
    c.seed = 21;
    c.t_end = 3.0;
    c.replicates = 500;
    c.keep_individuals = false;
    const auto trs = simulate_replicates(adder(), {0.0, 1.0}, c);
    double mean = 0.0;
    for (const auto& tr : trs) mean += static_cast<double>(tr.records.back().count);
    mean /= 500.0;
    EXPECT_NEAR(mean / std::exp(0.8 * 3.0), 1.0, 0.1);
    double mh = 0.0;
    for (const auto& tr : trs) mh += tr.records.back().sum_h;
    EXPECT_NEAR(mh / 500.0 / std::exp(0.8 * 3.0), 1.0, 0.1);
}

TEST(Population, RescaledHFunctionalIsAMartingale) {
    SimConfig c;
    c.seed = 31;
    c.t_end = 3.0;
    c.record_times = {1.0, 3.0};
    c.replicates = 500;
    c.keep_individuals = false;
    const auto trs = simulate_replicates(adder(), {0.0, 1.0}, c);
    std::vector<double> d(trs.size());
    double m1 = 0.0, m3 = 0.0;
    for (std::size_t r = 0; r < trs.size(); ++r) {
        const double v1 = std::exp(-0.8) * trs[r].records[0].sum_h, v3 = std::exp(-2.4) * trs[r].records[1].sum_h;
        m1 += v1;
        m3 += v3;
        d[r] = v3 - v1;
    }
    const double n = static_cast<double>(trs.size());
    const double md = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : d) ss += (v - md) * (v - md);
    const double se = std::sqrt(ss / (n - 1) / n);
    EXPECT_LT(std::abs(md), 3.0 * se) << m1 / n << " vs " << m3 / n;
}

TEST(Population, DeathNeverIncreasesMeanCount) {
    SimConfig c;
    c.seed = 41;
    c.t_end = 3.0;
    c.replicates = 200;
    c.keep_individuals = false;
    auto mean_count = [&](double d0, double& se) {
        const auto trs = simulate_replicates(adder(d0), {0.0, 1.0}, c);
        double s = 0.0, ss = 0.0;
        for (const auto& tr : trs) {
            const double v = static_cast<double>(tr.records.back().count);
            s += v;
            ss += v * v;
        }
        const double n = static_cast<double>(trs.size());
        const double m = s / n;
        se = std::sqrt((ss / n - m * m) / n);
        return m;
    };
    double se0 = 0.0, se1 = 0.0;
    const double low = mean_count(0.1, se0), high = mean_count(0.5, se1);
    EXPECT_LE(high, low + 2.0 * std::hypot(se0, se1));
}

TEST(Malthus, RecoversExactSlopeFromSyntheticData) {
    std::vector<double> t{0, 1, 2, 3, 4}, v;
    for (double s : t) v.push_back(3.0 * std::exp(0.8 * s));
    EXPECT_NEAR(malthus_slope(t, v), 0.8, 1e-12);
    EXPECT_NEAR(malthus_slope(t, {5, 5, 5, 5, 5}), 0.0, 1e-15);
    EXPECT_THROW(malthus_slope(t, {5, 5, 0, 0, 0}), DegenerateData);
    EXPECT_THROW(malthus_slope({1.0}, {1.0}), DegenerateData);
}

TEST(Malthus, EstimateFromReplicates) {
    SimConfig c;
    c.seed = 8;
    c.t_end = 4.0;
    c.record_times = {0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4};
    c.replicates = 500;
    c.keep_individuals = false;
    const auto est = estimate_malthus(simulate_replicates(adder(), {0.0, 1.0}, c));
    EXPECT_NEAR(est.lambda_hat, 0.8, 0.04);
    EXPECT_GT(est.stderr_, 0.0);
    SimConfig one = c;
    one.record_times = {4};
    EXPECT_THROW(estimate_malthus(simulate_replicates(adder(), {0.0, 1.0}, one)), DegenerateData);
}

TEST(Generator, ConsistencyForConstantAndSize) {
    const auto m = adder();
    const ScalarField one = [](PhasePoint) { return 1.0; };
    const ScalarField y = [](PhasePoint x) { return x.y; };
    const auto r1 = generator_consistency_check(m, one, {0.2, 1.0}, 0.01, 100000, 3);
    EXPECT_LT(std::abs(r1.z), 3.0);
    const auto ry = generator_consistency_check(m, y, {0.2, 1.0}, 0.01, 100000, 3);
    EXPECT_LT(std::abs(ry.z), 3.0);
    EXPECT_NEAR(ry.generator, 0.8, 1e-6);
}

TEST(Generator, NoDivisionBeforeMinimalAge) {
    const auto m = make_adder(1.0, Hazard::constant(1.0, 0.5), FragmentationDensity::beta(5, 5), 0.0);
    const auto r = generator_consistency_check(m, [](PhasePoint) { return 1.0; }, {0.0, 1.0}, 0.01, 1000, 4);
    EXPECT_EQ(r.simulated, 0.0);
    EXPECT_EQ(r.generator, 0.0);
}

TEST(TaggedLineage, SizeBiasedFractionsHaveShiftedMean) {
    // mean of 2 rho F(rho) for Beta(5,5) is 2 m2 = 6/11
    const auto F = FragmentationDensity::beta(5, 5);
    double s = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        Stream rng(mix_keys(5, static_cast<std::uint64_t>(i)));
        s += sample_size_biased_fraction(F, rng);
    }
    EXPECT_NEAR(s / n, 6.0 / 11.0, 4.0 * std::sqrt(0.021 / n));
}
