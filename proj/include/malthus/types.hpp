#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

namespace malthus {

/// A point of the phase space: `a` is the age (added size for the adder model)
/// and `y` the current size.
struct PhasePoint {
    double a = 0.0;
    double y = 1.0;

    friend bool operator==(const PhasePoint&, const PhasePoint&) = default;
};

using ScalarField = std::function<double(PhasePoint)>;
using VectorField = std::function<std::array<double, 2>(PhasePoint)>;

/// Row-major 2x2 matrix; used for flow Jacobians and Jacobians of g.
struct Jacobian2x2 {
    std::array<double, 4> m{1.0, 0.0, 0.0, 1.0};

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(2 * r + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(2 * r + c)]; }

    double det() const { return m[0] * m[3] - m[1] * m[2]; }

    static Jacobian2x2 identity() { return {}; }

    Jacobian2x2 operator*(const Jacobian2x2& o) const {
        Jacobian2x2 r;
        r.m = {m[0] * o.m[0] + m[1] * o.m[2], m[0] * o.m[1] + m[1] * o.m[3],
               m[2] * o.m[0] + m[3] * o.m[2], m[2] * o.m[1] + m[3] * o.m[3]};
        return r;
    }

    /// Spectral (operator 2-) norm.
    double norm2() const {
        const double a = m[0] * m[0] + m[2] * m[2];
        const double b = m[0] * m[1] + m[2] * m[3];
        const double d = m[1] * m[1] + m[3] * m[3];
        const double tr = a + d;
        const double disc = std::sqrt(std::max(0.0, (a - d) * (a - d) + 4.0 * b * b));
        return std::sqrt(0.5 * (tr + disc));
    }
};

inline double euclidean_norm(const std::array<double, 2>& v) { return std::hypot(v[0], v[1]); }

} // namespace malthus
