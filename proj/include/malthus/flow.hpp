#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "errors.hpp"
#include "model.hpp"
#include "ode.hpp"
#include "types.hpp"

namespace malthus {

struct FlowSettings {
    ode::Tolerances tol{};
    bool closed_form = true;  // use adder formulas when the model is an adder
};

/// Deterministic transport phi^t generated by g, with orbit queries.
class FlowEngine {
public:
    explicit FlowEngine(ModelSpec model, FlowSettings settings = {})
        : m_(std::move(model)), s_(settings) {}

    const ModelSpec& model() const { return m_; }
    const FlowSettings& settings() const { return s_; }
    bool closed_form() const { return s_.closed_form && m_.is_adder(); }

    PhasePoint advance(PhasePoint x, double t) const {
        if (t == 0.0) return x;
        if (closed_form()) {
            const double e = std::expm1(m_.lambda_growth * t);
            return {x.a + x.y * e, x.y * (1.0 + e)};
        }
        const auto rhs = [this](double, const std::array<double, 2>& s) {
            const PhasePoint p{s[0], s[1]};
            return std::array<double, 2>{m_.g1(p), m_.g2(p)};
        };
        const auto r = ode::integrate<2>(rhs, {x.a, x.y}, 0.0, t, s_.tol);
        return {r[0], r[1]};
    }

    /// D phi^t(x), by the variational equation or in closed form.
    Jacobian2x2 flow_jacobian(PhasePoint x, double t) const {
        if (t == 0.0) return Jacobian2x2::identity();
        if (closed_form()) {
            const double e = std::exp(m_.lambda_growth * t);
            Jacobian2x2 J;
            J.m = {1.0, e - 1.0, 0.0, e};
            return J;
        }
        const auto rhs = [this](double, const std::array<double, 6>& s) {
            const PhasePoint p{s[0], s[1]};
            const Jacobian2x2 G = m_.jacobian_g(p);
            return std::array<double, 6>{m_.g1(p), m_.g2(p),
                                         G(0, 0) * s[2] + G(0, 1) * s[4], G(0, 0) * s[3] + G(0, 1) * s[5],
                                         G(1, 0) * s[2] + G(1, 1) * s[4], G(1, 0) * s[3] + G(1, 1) * s[5]};
        };
        const auto r = ode::integrate<6>(rhs, {x.a, x.y, 1.0, 0.0, 0.0, 1.0}, 0.0, t, s_.tol);
        Jacobian2x2 J;
        J.m = {r[2], r[3], r[4], r[5]};
        return J;
    }

    /// Time t with age(phi^t x) = a_target; negative when a_target < x.a.
    double time_to_age(PhasePoint x, double a_target) const {
        if (a_target == x.a) return 0.0;
        if (closed_form()) {
            const double r = (a_target - x.a) / x.y;
            if (!(r > -1.0)) throw OffDomain(msg("age", a_target, x));
            return std::log1p(r) / m_.lambda_growth;
        }
        return solve_time(x, a_target, 0);
    }

    /// Time t with size(phi^t x) = y_target.
    double time_to_size(PhasePoint x, double y_target) const {
        if (y_target == x.y) return 0.0;
        if (!(y_target > 0.0)) throw OffDomain(msg("size", y_target, x));
        if (closed_form()) return std::log(y_target / x.y) / m_.lambda_growth;
        return solve_time(x, y_target, 1);
    }

    /// Y_x(a): size on the orbit of x when its age equals a.
    double size_at_age(PhasePoint x, double a) const {
        if (a < 0.0) throw OffDomain(msg("age", a, x));
        if (closed_form()) {
            const double y = x.y + (a - x.a);
            if (!(y > 0.0)) throw OffDomain(msg("age", a, x));
            return y;
        }
        return advance(x, time_to_age(x, a)).y;
    }

    /// A_x(y): age on the orbit of x when its size equals y.
    double age_at_size(PhasePoint x, double y) const {
        if (!(y > 0.0)) throw OffDomain(msg("size", y, x));
        double a;
        if (closed_form()) {
            a = x.a + (y - x.y);
        } else {
            a = advance(x, time_to_size(x, y)).a;
        }
        if (a < -1e-12 * (1.0 + std::abs(x.a))) throw OffDomain(msg("size", y, x));
        return std::max(a, 0.0);
    }

    /// Time to travel from x0 to x1 along the orbit of x0. Throws OffOrbit when
    /// |x1.y - Y_{x0}(x1.a)| > 1e-6 (1 + x1.y).
    double transit_time(PhasePoint x0, PhasePoint x1) const {
        if (x0 == x1) return 0.0;
        double t;
        try {
            t = time_to_age(x0, x1.a);
        } catch (const OffDomain&) {
            throw OffOrbit(msg("point", x1.a, x0));
        }
        const double y_orbit = closed_form() ? x0.y + (x1.a - x0.a) : advance(x0, t).y;
        if (std::abs(x1.y - y_orbit) > 1e-6 * (1.0 + std::abs(x1.y))) {
            std::ostringstream os;
            os << "(" << x1.a << ", " << x1.y << ") is off the orbit of (" << x0.a << ", " << x0.y
               << "): orbit size at that age is " << y_orbit;
            throw OffOrbit(os.str());
        }
        return t;
    }

    /// Time from x until the added size reaches x.a + delta_a.
    double division_time_from_added_size(PhasePoint x, double delta_a) const {
        if (delta_a <= 0.0) return 0.0;
        return time_to_age(x, x.a + delta_a);
    }

private:
    static std::string msg(const char* what, double v, PhasePoint x) {
        std::ostringstream os;
        os << what << " " << v << " is unreachable along the orbit of (" << x.a << ", " << x.y << ")";
        return os.str();
    }

    // Solves coord(phi^t x) = target for t by bracketing, bisection and Newton.
    double solve_time(PhasePoint x, double target, int coord) const {
        auto value = [&](const PhasePoint& p) { return coord == 0 ? p.a : p.y; };
        auto speed = [&](const PhasePoint& p) { return coord == 0 ? m_.g1(p) : m_.g2(p); };
        const double start = value(x);
        const double dir = target > start ? 1.0 : -1.0;
        double lo = 0.0, hi = dir;
        PhasePoint p_hi;
        for (int k = 0;; ++k) {
            if (k > 200) throw OffDomain(msg(coord == 0 ? "age" : "size", target, x));
            try {
                p_hi = advance(x, hi);
            } catch (const IntegrationFailure&) {
                throw OffDomain(msg(coord == 0 ? "age" : "size", target, x));
            }
            const double v = value(p_hi);
            if (!std::isfinite(v) || p_hi.y <= 0.0 || (dir < 0 && p_hi.a < 0.0 && coord == 1)) {
                throw OffDomain(msg(coord == 0 ? "age" : "size", target, x));
            }
            if (dir * (v - target) >= 0.0) break;
            lo = hi;
            hi *= 2.0;
        }
        // bisection to a coarse bracket
        for (int it = 0; it < 60 && std::abs(hi - lo) > 1e-6 * (1.0 + std::abs(hi)); ++it) {
            const double mid = 0.5 * (lo + hi);
            const double v = value(advance(x, mid));
            if (dir * (v - target) >= 0.0) hi = mid;
            else lo = mid;
        }
        double t = 0.5 * (lo + hi);
        for (int it = 0; it < 8; ++it) {
            const PhasePoint p = advance(x, t);
            const double r = value(p) - target;
            const double sp = speed(p);
            if (!(std::abs(sp) > 0.0)) break;
            const double dt = r / sp;
            t -= dt;
            if (std::abs(dt) < 1e-14 * (1.0 + std::abs(t))) break;
        }
        return t;
    }

    ModelSpec m_;
    FlowSettings s_;
};

} // namespace malthus
