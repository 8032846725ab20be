#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "errors.hpp"

namespace malthus::ode {

struct Tolerances {
    double atol = 1e-12;
    double rtol = 1e-10;
    double h_min = 1e-14;
    std::size_t max_steps = 1'000'000;
};

/// Adaptive Dormand-Prince 5(4) integration of y' = f(t, y) from t0 to t1.
/// t1 < t0 integrates backwards. Throws IntegrationFailure when the step
/// size underflows or the step budget is exhausted.
template <std::size_t N, class F>
std::array<double, N> integrate(F&& f, std::array<double, N> y, double t0, double t1,
                                const Tolerances& tol = {}) {
    using State = std::array<double, N>;
    if (t1 == t0) return y;

    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

    const double dir = t1 > t0 ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    double t = t0;
    double h = dir * std::min(span, 0.01 * std::max(1.0, span));

    auto axpy = [](const State& base, std::initializer_list<std::pair<double, const State*>> terms,
                   double step) {
        State r = base;
        for (const auto& [c, k] : terms)
            for (std::size_t i = 0; i < N; ++i) r[i] += step * c * (*k)[i];
        return r;
    };

    State k1 = f(t, y);
    for (std::size_t step = 0; step < tol.max_steps; ++step) {
        if (dir * (t + h - t1) > 0.0) h = t1 - t;

        const State k2 = f(t + c2 * h, axpy(y, {{a21, &k1}}, h));
        const State k3 = f(t + c3 * h, axpy(y, {{a31, &k1}, {a32, &k2}}, h));
        const State k4 = f(t + c4 * h, axpy(y, {{a41, &k1}, {a42, &k2}, {a43, &k3}}, h));
        const State k5 = f(t + c5 * h, axpy(y, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}, h));
        const State k6 =
            f(t + h, axpy(y, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}, h));
        const State y5 = axpy(y, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}}, h);
        const State k7 = f(t + h, y5);

        double err = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                                  e7 * k7[i]);
            const double sc = tol.atol + tol.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            err = std::max(err, std::abs(e) / sc);
        }
        if (!std::isfinite(err)) err = 1e10;

        if (err <= 1.0) {
            t += h;
            y = y5;
            k1 = k7;
            if (dir * (t1 - t) <= 0.0) return y;
        }
        const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        h *= fac;
        if (std::abs(h) < tol.h_min * std::max(1.0, std::abs(t)))
            throw IntegrationFailure("adaptive step size underflow at t = " + std::to_string(t));
    }
    throw IntegrationFailure("step budget exhausted before reaching t = " + std::to_string(t1));
}

} // namespace malthus::ode
