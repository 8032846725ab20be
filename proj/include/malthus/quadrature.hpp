#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace malthus::quad {

struct Rule {
    std::vector<double> nodes;   // on [-1, 1]
    std::vector<double> weights;
};

namespace detail {

inline Rule compute_gauss_legendre(int n) {
    Rule r;
    r.nodes.resize(static_cast<std::size_t>(n));
    r.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) {
                p1 = x;
                p0 = 1.0;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        r.nodes[static_cast<std::size_t>(i)] = -x;
        r.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
        r.weights[static_cast<std::size_t>(i)] = w;
        r.weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    return r;
}

} // namespace detail

/// Gauss-Legendre rule with `n` points on [-1, 1]. Rules are computed once and cached.
inline const Rule& gauss_legendre(int n) {
    static std::mutex mtx;
    static std::map<int, Rule> cache;
    std::lock_guard lock(mtx);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_legendre(n)).first;
    return it->second;
}

/// Nodes and weights of a composite rule on [lo, hi].
struct Points {
    std::vector<double> x;
    std::vector<double> w;

    template <class F>
    double integrate(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * f(x[i]);
        return s;
    }
};

/// Composite Gauss-Legendre: `panels` equal panels of `order` points each.
inline Points composite_gl(double lo, double hi, int panels, int order = 8) {
    Points p;
    if (!(hi > lo) || panels <= 0) return p;
    const Rule& r = gauss_legendre(order);
    const double h = (hi - lo) / panels;
    p.x.reserve(static_cast<std::size_t>(panels * order));
    p.w.reserve(static_cast<std::size_t>(panels * order));
    for (int k = 0; k < panels; ++k) {
        const double mid = lo + (k + 0.5) * h;
        for (std::size_t i = 0; i < r.nodes.size(); ++i) {
            p.x.push_back(mid + 0.5 * h * r.nodes[i]);
            p.w.push_back(0.5 * h * r.weights[i]);
        }
    }
    return p;
}

/// Integrates f over [lo, hi] with a composite Gauss-Legendre rule.
template <class F>
double integrate(F&& f, double lo, double hi, int panels = 16, int order = 8) {
    if (!(hi > lo)) return 0.0;
    const Rule& r = gauss_legendre(order);
    const double h = (hi - lo) / panels;
    double s = 0.0;
    for (int k = 0; k < panels; ++k) {
        const double mid = lo + (k + 0.5) * h;
        double ps = 0.0;
        for (std::size_t i = 0; i < r.nodes.size(); ++i) ps += r.weights[i] * f(mid + 0.5 * h * r.nodes[i]);
        s += 0.5 * h * ps;
    }
    return s;
}

/// Trapezoid weights for strictly increasing nodes.
inline std::vector<double> trapezoid_weights(std::span<const double> nodes) {
    const std::size_t n = nodes.size();
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double h = nodes[i + 1] - nodes[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

} // namespace malthus::quad
