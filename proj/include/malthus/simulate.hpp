#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flow.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace malthus {

struct SimConfig {
    std::uint64_t seed = 1;
    double t_end = 1.0;
    std::size_t cap = 1'000'000;
    std::size_t replicates = 1;
    std::vector<double> record_times;  // empty: {t_end}
    bool keep_events = false;
    bool keep_individuals = true;
};

enum class EventKind : std::uint8_t { Division, Death };

struct EventRecord {
    double t;
    EventKind kind;
    std::uint64_t key;  // stream key of the individual
    double a, y;        // state at the event
    double rho;         // fraction of the first child (divisions only)
    double y1 = 0.0, y2 = 0.0;  // children sizes (divisions only)
};

/// Z_t as a multiset of phase points.
struct PopulationState {
    double t = 0.0;
    std::vector<PhasePoint> individuals;
    std::size_t count = 0;  // kept even when individuals are not stored
    double sum_h = 0.0;     // sum of sizes
    double sum_a = 0.0;
    double sum_y2 = 0.0;
};

struct Trajectory {
    std::size_t replicate = 0;
    std::vector<PopulationState> records;
    std::vector<EventRecord> events;
    bool cap_exceeded = false;
};

/// Added size at division for an individual currently at x: the smallest A
/// with H(A) = H(x.a) + E, E ~ Exp(1), by inversion of the cumulative hazard.
inline double sample_division_age(const Hazard& B, PhasePoint x, Stream& rng) {
    const double e = -std::log(rng.uniform());
    return B.inverse_cumulative(B.cumulative(x.a) + e);
}

inline double sample_division_age(const ModelSpec& m, PhasePoint x, Stream& rng) {
    if (!m.hazard) throw InvalidModel("division-age sampling requires an age hazard B(a)");
    return sample_division_age(*m.hazard, x, rng);
}

/// Time until the added size grows from x.a to x.a + delta_a.
inline double division_time_from_added_size(const FlowEngine& flow, PhasePoint x, double delta_a) {
    return flow.division_time_from_added_size(x, delta_a);
}

/// Draws rho ~ F.
inline double sample_fraction(const FragmentationDensity& F, Stream& rng) { return F.quantile(rng.uniform()); }

/// Draws rho from the size-biased density 2 rho F(rho) by rejection.
inline double sample_size_biased_fraction(const FragmentationDensity& F, Stream& rng) {
    for (;;) {
        const double r = sample_fraction(F, rng);
        if (rng.uniform() < r) return r;
    }
}

inline double empirical_functional(const PopulationState& s, const ScalarField& f) {
    double acc = 0.0;
    for (const auto& x : s.individuals) acc += f(x);
    return acc;
}

namespace detail {

struct Cell {
    double birth;
    PhasePoint x0;  // state at birth (or at time 0 for the founder)
    double t_div;
    double t_death;
    Stream rng;
    bool alive;
};

inline void validate_config(const SimConfig& c) {
    if (!(c.t_end >= 0.0)) throw ConfigError("t_end must be nonnegative");
    for (std::size_t i = 0; i < c.record_times.size(); ++i) {
        const double t = c.record_times[i];
        if (t < 0.0 || t > c.t_end) throw ConfigError("record_times must lie in [0, t_end]");
        if (i > 0 && t < c.record_times[i - 1]) throw ConfigError("record_times must be sorted");
    }
    if (c.cap == 0) throw ConfigError("cap must be positive");
}

inline std::uint64_t replicate_key(std::uint64_t seed, std::size_t replicate) {
    return mix_keys(splitmix64(seed), static_cast<std::uint64_t>(replicate));
}

} // namespace detail

/// One replicate of the branching process started from delta_{x0}. Every
/// individual carries its own stream, derived from its parent's key and its
/// birth order, so results do not depend on how events interleave.
inline Trajectory simulate_one(const FlowEngine& flow, PhasePoint x0, const SimConfig& cfg, std::size_t replicate) {
    detail::validate_config(cfg);
    const ModelSpec& m = flow.model();
    const auto* F = m.fragmentation();
    if (!F) throw InvalidModel("simulation requires a fragmentation kernel");
    const std::vector<double> rec = cfg.record_times.empty() ? std::vector<double>{cfg.t_end} : cfg.record_times;

    Trajectory tr;
    tr.replicate = replicate;
    std::vector<detail::Cell> cells;
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    std::size_t alive = 0;

    auto spawn = [&](double t, PhasePoint x, Stream rng) {
        const double a_div = sample_division_age(m, x, rng);
        const double t_div = t + flow.division_time_from_added_size(x, a_div - x.a);
        const double t_death = t + rng.exponential(m.d0);
        cells.push_back({t, x, t_div, t_death, rng, true});
        queue.emplace(std::min(t_div, t_death), cells.size() - 1);
        ++alive;
    };

    auto snapshot = [&](double t) {
        PopulationState s;
        s.t = t;
        for (const auto& c : cells) {
            if (!c.alive) continue;
            const PhasePoint p = flow.advance(c.x0, t - c.birth);
            ++s.count;
            s.sum_h += p.y;
            s.sum_a += p.a;
            s.sum_y2 += p.y * p.y;
            if (cfg.keep_individuals) s.individuals.push_back(p);
        }
        tr.records.push_back(std::move(s));
    };

    spawn(0.0, x0, Stream(detail::replicate_key(cfg.seed, replicate)));
    std::size_t next_rec = 0;
    while (next_rec < rec.size()) {
        const double t_next = queue.empty() ? std::numeric_limits<double>::infinity() : queue.top().first;
        if (t_next > rec[next_rec]) {
            snapshot(rec[next_rec]);
            ++next_rec;
            continue;
        }
        const std::size_t id = queue.top().second;
        queue.pop();
        auto& c = cells[id];
        c.alive = false;
        --alive;
        const PhasePoint p = flow.advance(c.x0, t_next - c.birth);
        if (c.t_death <= c.t_div) {
            if (cfg.keep_events) tr.events.push_back({t_next, EventKind::Death, c.rng.key(), p.a, p.y, 0.0});
            continue;
        }
        Stream parent = c.rng;
        const double rho = sample_fraction(*F, parent);
        double y1, y2;
        if (rho >= 0.5) {
            y1 = rho * p.y;
            y2 = p.y - y1;
        } else {
            y2 = (1.0 - rho) * p.y;
            y1 = p.y - y2;
        }
        if (cfg.keep_events) tr.events.push_back({t_next, EventKind::Division, parent.key(), p.a, p.y, rho, y1, y2});
        const Stream s1 = parent.child(0), s2 = parent.child(1);
        spawn(t_next, {0.0, y1}, s1);
        spawn(t_next, {0.0, y2}, s2);
        if (alive > cfg.cap) {
            tr.cap_exceeded = true;
            break;
        }
    }
    return tr;
}

inline Trajectory simulate_population(const ModelSpec& m, PhasePoint x0, const SimConfig& cfg,
                                      std::size_t replicate = 0) {
    return simulate_one(FlowEngine(m), x0, cfg, replicate);
}

/// cfg.replicates independent replicates, run in parallel and returned in
/// replicate order.
inline std::vector<Trajectory> simulate_replicates(const ModelSpec& m, PhasePoint x0, const SimConfig& cfg) {
    detail::validate_config(cfg);
    const FlowEngine flow(m);
    std::vector<Trajectory> out(cfg.replicates);
    parallel_for(cfg.replicates, [&](std::size_t r) { out[r] = simulate_one(flow, x0, cfg, r); });
    return out;
}

struct MalthusEstimate {
    double lambda_hat = 0.0;
    double stderr_ = 0.0;
    std::vector<double> times;
    std::vector<double> mean_counts;
};

namespace detail {
inline double ls_slope(const std::vector<double>& t, const std::vector<double>& v) {
    const double n = static_cast<double>(t.size());
    const double mt = std::accumulate(t.begin(), t.end(), 0.0) / n;
    const double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        sxy += (t[i] - mt) * (v[i] - mv);
        sxx += (t[i] - mt) * (t[i] - mt);
    }
    return sxy / sxx;
}
} // namespace detail

/// Least-squares slope of log mean count against time over the latter half of
/// the given times.
inline double malthus_slope(const std::vector<double>& times, const std::vector<double>& mean_counts) {
    if (times.size() != mean_counts.size() || times.size() < 2) throw DegenerateData("need at least 2 record times");
    const std::size_t start = times.size() / 2 == times.size() - 1 ? 0 : times.size() / 2;
    std::vector<double> t, v;
    for (std::size_t i = start; i < times.size(); ++i) {
        if (!(mean_counts[i] > 0.0)) throw DegenerateData("mean count vanishes at t = " + std::to_string(times[i]));
        t.push_back(times[i]);
        v.push_back(std::log(mean_counts[i]));
    }
    if (t.size() < 2) throw DegenerateData("need at least 2 usable record times");
    return detail::ls_slope(t, v);
}

/// Malthus rate from simulated replicates, with a bootstrap standard error
/// over replicates (fixed internal seed, so the result is deterministic).
inline MalthusEstimate estimate_malthus(const std::vector<Trajectory>& trajs, std::size_t bootstrap = 200) {
    if (trajs.empty()) throw DegenerateData("no trajectories");
    const std::size_t nt = trajs.front().records.size();
    if (nt < 2) throw DegenerateData("need at least 2 record times");
    MalthusEstimate est;
    for (const auto& rec : trajs.front().records) est.times.push_back(rec.t);
    auto means = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> mc(nt, 0.0);
        for (std::size_t r : idx) {
            if (trajs[r].records.size() != nt) throw DegenerateData("replicates have different record counts");
            for (std::size_t k = 0; k < nt; ++k) mc[k] += static_cast<double>(trajs[r].records[k].count);
        }
        for (double& v : mc) v /= static_cast<double>(idx.size());
        return mc;
    };
    std::vector<std::size_t> all(trajs.size());
    std::iota(all.begin(), all.end(), 0);
    est.mean_counts = means(all);
    est.lambda_hat = malthus_slope(est.times, est.mean_counts);

    std::mt19937_64 gen(0x5eed0f1a7e5ULL);
    std::uniform_int_distribution<std::size_t> pick(0, trajs.size() - 1);
    std::vector<double> slopes;
    for (std::size_t b = 0; b < bootstrap; ++b) {
        std::vector<std::size_t> idx(trajs.size());
        for (auto& i : idx) i = pick(gen);
        try {
            slopes.push_back(malthus_slope(est.times, means(idx)));
        } catch (const DegenerateData&) {
        }
    }
    if (slopes.size() >= 2) {
        const double mu = std::accumulate(slopes.begin(), slopes.end(), 0.0) / static_cast<double>(slopes.size());
        double ss = 0.0;
        for (double s : slopes) ss += (s - mu) * (s - mu);
        est.stderr_ = std::sqrt(ss / static_cast<double>(slopes.size() - 1));
    }
    return est;
}

struct ConsistencyReport {
    double simulated = 0.0;  // (E <Z_dt, f> - f(x0)) / dt
    double stderr_ = 0.0;
    double generator = 0.0;  // Q f(x0)
    double z = 0.0;
    std::size_t replicates = 0;
    double dt = 0.0;
};

/// Compares the one-step Monte Carlo derivative of E <Z_t, f> at t = 0 with Q f(x0).
inline ConsistencyReport generator_consistency_check(const ModelSpec& m, const ScalarField& f, PhasePoint x0,
                                                     double dt, std::size_t replicates, std::uint64_t seed = 1) {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    SimConfig cfg;
    cfg.seed = seed;
    cfg.t_end = dt;
    cfg.record_times = {dt};
    cfg.replicates = replicates;
    const FlowEngine flow(m);
    std::vector<double> vals(replicates);
    parallel_for(replicates, [&](std::size_t r) {
        const auto tr = simulate_one(flow, x0, cfg, r);
        vals[r] = empirical_functional(tr.records.back(), f);
    });
    const double n = static_cast<double>(replicates);
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double sd = replicates > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    ConsistencyReport rep;
    rep.replicates = replicates;
    rep.dt = dt;
    rep.simulated = (mean - f(x0)) / dt;
    rep.stderr_ = sd / std::sqrt(n) / dt;
    rep.generator = apply_generator(m, f, x0);
    const double diff = rep.simulated - rep.generator;
    rep.z = rep.stderr_ > 0.0 ? diff / rep.stderr_ : (diff == 0.0 ? 0.0 : std::copysign(HUGE_VAL, diff));
    return rep;
}

/// State at time t of the h-transformed (tagged-lineage) chain of the adder,
/// h = y: the division clock is unchanged and the post-jump size is rho y
/// with rho drawn from the size-biased density 2 rho F(rho).
inline PhasePoint tagged_lineage_state(const FlowEngine& flow, PhasePoint x, double t, Stream& rng) {
    const ModelSpec& m = flow.model();
    if (!m.is_adder() || !m.fragmentation()) throw InvalidModel("tagged lineage sampler requires an adder model");
    double now = 0.0;
    for (;;) {
        const double a_div = sample_division_age(m, x, rng);
        const double tau = flow.division_time_from_added_size(x, a_div - x.a);
        if (now + tau > t) return flow.advance(x, t - now);
        now += tau;
        const PhasePoint p = flow.advance(x, tau);
        x = {0.0, sample_size_biased_fraction(*m.fragmentation(), rng) * p.y};
    }
}

} // namespace malthus
