#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace malthus {

/// Age hazard rate B(a) of the added size at division. Either a constant b or a
/// table (a_i, B_i) with linear interpolation and constant extrapolation. B
/// vanishes on [0, a_star] when a_star > 0.
class Hazard {
public:
    enum class Kind { Constant, Table };

    static Hazard constant(double b, double a_star = 0.0) {
        if (!(b > 0.0) || !std::isfinite(b)) throw InvalidModel("(A1) hazard constant must be positive");
        if (!(a_star >= 0.0)) throw InvalidModel("(ii) a_star must be nonnegative");
        Hazard h;
        h.kind_ = Kind::Constant;
        h.b_ = b;
        h.a_star_ = a_star;
        h.build_knots();
        return h;
    }

    static Hazard table(std::vector<double> a, std::vector<double> B, double a_star = 0.0) {
        if (a.size() != B.size() || a.empty())
            throw InvalidModel("hazard table: a and B must be nonempty and of equal length");
        for (std::size_t i = 1; i < a.size(); ++i)
            if (!(a[i] > a[i - 1])) throw InvalidModel("hazard table: a must be strictly increasing");
        for (double v : B)
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidModel("hazard table: B must be finite and >= 0");
        if (!(a_star >= 0.0)) throw InvalidModel("(ii) a_star must be nonnegative");
        Hazard h;
        h.kind_ = Kind::Table;
        h.a_ = std::move(a);
        h.B_ = std::move(B);
        h.a_star_ = a_star;
        h.build_knots();
        return h;
    }

    Kind kind() const { return kind_; }
    double a_star() const { return a_star_; }
    const std::vector<double>& table_a() const { return a_; }
    const std::vector<double>& table_B() const { return B_; }
    double constant_value() const { return b_; }

    double operator()(double a) const {
        if (a < 0.0 || (a_star_ > 0.0 && a <= a_star_)) return 0.0;
        return raw(a);
    }

    /// Cumulative hazard H(a) = int_0^a B.
    double cumulative(double a) const {
        if (a <= knots_.front()) return 0.0;
        const std::size_t s = segment(a);
        const double x0 = knots_[s];
        const double d = a - x0;
        if (s + 1 == knots_.size()) return cum_[s] + vals_[s] * d;
        const double slope = (vals_[s + 1] - vals_[s]) / (knots_[s + 1] - x0);
        return cum_[s] + vals_[s] * d + 0.5 * slope * d * d;
    }

    double survival(double a) const { return std::exp(-cumulative(a)); }

    /// Density of the added size at division, psi(a) = B(a) exp(-H(a)).
    double density(double a) const { return (*this)(a)*survival(a); }

    double cdf(double a) const { return -std::expm1(-cumulative(a)); }

    /// Smallest a with H(a) = target (target >= 0).
    double inverse_cumulative(double target) const {
        if (!(target > 0.0)) return knots_.front();
        auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
        const std::size_t s = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - cum_.begin()) - 1));
        const double x0 = knots_[s];
        const double rem = target - cum_[s];
        double a;
        if (s + 1 == knots_.size()) {
            if (!(vals_[s] > 0.0)) return std::numeric_limits<double>::infinity();
            a = x0 + rem / vals_[s];
        } else {
            const double slope = (vals_[s + 1] - vals_[s]) / (knots_[s + 1] - x0);
            double d;
            if (std::abs(slope) < 1e-300) {
                d = rem / vals_[s];
            } else {
                // 0.5 slope d^2 + v d - rem = 0, stable root
                const double v = vals_[s];
                const double disc = std::sqrt(std::max(0.0, v * v + 2.0 * slope * rem));
                d = 2.0 * rem / (v + disc);
            }
            a = x0 + d;
            // Newton polish on H(a) - target
            for (int it2 = 0; it2 < 3; ++it2) {
                const double r = cumulative(a) - target;
                const double dB = raw(a);
                if (!(dB > 0.0)) break;
                a -= r / dB;
            }
        }
        return a;
    }

    /// Inverse CDF of the added size at division.
    double quantile(double u) const { return inverse_cumulative(-std::log1p(-u)); }

    /// Infimum and supremum of B over (a_star, inf).
    double lower_bound() const { return *std::min_element(vals_.begin(), vals_.end()); }
    double upper_bound() const { return *std::max_element(vals_.begin(), vals_.end()); }

    /// Age at which the survival function drops below `eps`.
    double age_at_survival(double eps) const { return inverse_cumulative(-std::log(eps)); }

private:
    Hazard() = default;

    double raw(double a) const {
        if (kind_ == Kind::Constant) return b_;
        if (a <= a_.front()) return B_.front();
        if (a >= a_.back()) return B_.back();
        const auto it = std::upper_bound(a_.begin(), a_.end(), a);
        const std::size_t j = static_cast<std::size_t>(it - a_.begin());
        const double w = (a - a_[j - 1]) / (a_[j] - a_[j - 1]);
        return (1.0 - w) * B_[j - 1] + w * B_[j];
    }

    std::size_t segment(double a) const {
        const auto it = std::upper_bound(knots_.begin(), knots_.end(), a);
        return static_cast<std::size_t>(it - knots_.begin()) - 1;
    }

    void build_knots() {
        knots_.clear();
        knots_.push_back(a_star_);
        for (double x : a_)
            if (x > a_star_) knots_.push_back(x);
        vals_.clear();
        for (double x : knots_) vals_.push_back(raw(x));
        cum_.assign(knots_.size(), 0.0);
        for (std::size_t s = 0; s + 1 < knots_.size(); ++s)
            cum_[s + 1] = cum_[s] + 0.5 * (vals_[s] + vals_[s + 1]) * (knots_[s + 1] - knots_[s]);
        if (!(vals_.back() > 0.0)) throw InvalidModel("(ii) hazard must stay positive at large ages");
    }

    Kind kind_ = Kind::Constant;
    double b_ = 1.0;
    double a_star_ = 0.0;
    std::vector<double> a_, B_;
    std::vector<double> knots_, vals_, cum_;
};

} // namespace malthus
