#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "errors.hpp"
#include "quadrature.hpp"

namespace malthus {

/// Moments m_k = int_0^1 rho^k F(rho) d rho for k = 0, 1, 2.
struct MomentTable {
    double m0 = 1.0;
    double m1 = 0.5;
    double m2 = 1.0 / 3.0;
};

/// Density F of the fraction rho in (0, 1) kept by one child at division.
class FragmentationDensity {
public:
    enum class Kind { Uniform, Beta, Table };

    static FragmentationDensity uniform() {
        FragmentationDensity f;
        f.kind_ = Kind::Uniform;
        f.finish();
        return f;
    }

    static FragmentationDensity beta(double alpha, double beta) {
        if (!(alpha > 0.0 && beta > 0.0)) throw InvalidModel("(A2) beta parameters must be positive");
        FragmentationDensity f;
        f.kind_ = Kind::Beta;
        f.alpha_ = alpha;
        f.beta_ = beta;
        f.finish();
        return f;
    }

    /// Tabulated density values F_i at increasing nodes rho_i in [0, 1], linearly
    /// interpolated and zero outside [rho_0, rho_last]. Renormalized when the mass
    /// is within 1e-6 of one, rejected otherwise.
    static FragmentationDensity table(std::vector<double> rho, std::vector<double> F) {
        if (rho.size() != F.size() || rho.size() < 2)
            throw InvalidModel("fragmentation table: rho and F must have equal length >= 2");
        for (std::size_t i = 1; i < rho.size(); ++i)
            if (!(rho[i] > rho[i - 1])) throw InvalidModel("fragmentation table: rho must be strictly increasing");
        if (rho.front() < 0.0 || rho.back() > 1.0)
            throw InvalidModel("fragmentation table: support must lie in [0, 1]");
        for (double v : F)
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidModel("(A2) fragmentation density must be >= 0");
        FragmentationDensity f;
        f.kind_ = Kind::Table;
        f.rho_ = std::move(rho);
        f.F_ = std::move(F);
        double mass = 0.0;
        for (std::size_t i = 0; i + 1 < f.rho_.size(); ++i)
            mass += 0.5 * (f.F_[i] + f.F_[i + 1]) * (f.rho_[i + 1] - f.rho_[i]);
        if (std::abs(mass - 1.0) > 1e-6)
            throw InvalidModel("(A2) fragmentation density mass m0 = " + std::to_string(mass) + " differs from 1");
        for (double& v : f.F_) v /= mass;
        f.finish();
        return f;
    }

    Kind kind() const { return kind_; }
    double alpha() const { return alpha_; }
    double beta_param() const { return beta_; }
    const std::vector<double>& table_rho() const { return rho_; }
    const std::vector<double>& table_F() const { return F_; }

    double operator()(double r) const {
        if (r < lo_ || r > hi_) return 0.0;
        switch (kind_) {
        case Kind::Uniform: return 1.0;
        case Kind::Beta:
            if (r <= 0.0 || r >= 1.0) return 0.0;
            return std::exp((alpha_ - 1.0) * std::log(r) + (beta_ - 1.0) * std::log1p(-r) - log_beta_);
        case Kind::Table: {
            const auto it = std::upper_bound(rho_.begin(), rho_.end(), r);
            if (it == rho_.end()) return F_.back();
            const std::size_t j = static_cast<std::size_t>(it - rho_.begin());
            if (j == 0) return F_.front();
            const double w = (r - rho_[j - 1]) / (rho_[j] - rho_[j - 1]);
            return (1.0 - w) * F_[j - 1] + w * F_[j];
        }
        }
        return 0.0;
    }

    double cdf(double r) const {
        if (r <= lo_) return 0.0;
        if (r >= hi_) return 1.0;
        switch (kind_) {
        case Kind::Uniform: return r;
        case Kind::Beta: return boost::math::ibeta(alpha_, beta_, r);
        case Kind::Table: {
            const auto it = std::upper_bound(rho_.begin(), rho_.end(), r);
            const std::size_t j = static_cast<std::size_t>(it - rho_.begin());
            const double d = r - rho_[j - 1];
            const double slope = (F_[j] - F_[j - 1]) / (rho_[j] - rho_[j - 1]);
            return cum_[j - 1] + F_[j - 1] * d + 0.5 * slope * d * d;
        }
        }
        return 0.0;
    }

    double quantile(double u) const {
        if (u <= 0.0) return lo_;
        if (u >= 1.0) return hi_;
        switch (kind_) {
        case Kind::Uniform: return u;
        case Kind::Beta: return boost::math::ibeta_inv(alpha_, beta_, u);
        case Kind::Table: {
            const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
            std::size_t j = static_cast<std::size_t>(it - cum_.begin());
            j = std::clamp<std::size_t>(j, 1, rho_.size() - 1);
            const double rem = u - cum_[j - 1];
            const double v = F_[j - 1];
            const double slope = (F_[j] - F_[j - 1]) / (rho_[j] - rho_[j - 1]);
            const double disc = std::sqrt(std::max(0.0, v * v + 2.0 * slope * rem));
            double d = (v + disc) > 0.0 ? 2.0 * rem / (v + disc) : 0.0;
            return std::clamp(rho_[j - 1] + d, rho_[j - 1], rho_[j]);
        }
        }
        return u;
    }

    const MomentTable& moments() const { return moments_; }

    /// Support [lo, hi] of F.
    double support_lo() const { return lo_; }
    double support_hi() const { return hi_; }

    /// max |F(rho) - F(1 - rho)| on a uniform 257-point grid.
    double asymmetry() const {
        double worst = 0.0;
        for (int i = 0; i <= 256; ++i) {
            const double r = i / 256.0;
            worst = std::max(worst, std::abs((*this)(r) - (*this)(1.0 - r)));
        }
        return worst;
    }

    /// Integrates phi(rho) F(rho) over the support.
    template <class Phi>
    double integrate(Phi&& phi) const {
        return quad::integrate([&](double r) { return phi(r) * (*this)(r); }, lo_, hi_, panels_, 8);
    }

    /// Integrates phi(rho) F(rho) over [a, b] clipped to the support.
    template <class Phi>
    double integrate(Phi&& phi, double a, double b) const {
        a = std::max(a, lo_);
        b = std::min(b, hi_);
        if (!(b > a)) return 0.0;
        const int panels = std::max(2, static_cast<int>(std::ceil(panels_ * (b - a) / (hi_ - lo_))));
        return quad::integrate([&](double r) { return phi(r) * (*this)(r); }, a, b, panels, 8);
    }

private:
    FragmentationDensity() = default;

    void finish() {
        if (kind_ == Kind::Table) {
            lo_ = rho_.front();
            hi_ = rho_.back();
            cum_.assign(rho_.size(), 0.0);
            for (std::size_t i = 0; i + 1 < rho_.size(); ++i)
                cum_[i + 1] = cum_[i] + 0.5 * (F_[i] + F_[i + 1]) * (rho_[i + 1] - rho_[i]);
            panels_ = static_cast<int>(std::min<std::size_t>(4096, std::max<std::size_t>(32, rho_.size() - 1)));
            moments_.m0 = cum_.back();
            moments_.m1 = table_moment(1);
            moments_.m2 = table_moment(2);
            return;
        }
        lo_ = 0.0;
        hi_ = 1.0;
        if (kind_ == Kind::Beta) {
            log_beta_ = std::lgamma(alpha_) + std::lgamma(beta_) - std::lgamma(alpha_ + beta_);
            const double s = alpha_ + beta_;
            moments_.m0 = 1.0;
            moments_.m1 = alpha_ / s;
            moments_.m2 = alpha_ * (alpha_ + 1.0) / (s * (s + 1.0));
        } else {
            moments_ = {1.0, 0.5, 1.0 / 3.0};
        }
    }

    // exact moments of the piecewise-linear density
    double table_moment(int k) const {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < rho_.size(); ++i) {
            const double x0 = rho_[i], x1 = rho_[i + 1];
            const double slope = (F_[i + 1] - F_[i]) / (x1 - x0);
            const double c0 = F_[i] - slope * x0;
            s += c0 * (std::pow(x1, k + 1) - std::pow(x0, k + 1)) / (k + 1) +
                 slope * (std::pow(x1, k + 2) - std::pow(x0, k + 2)) / (k + 2);
        }
        return s;
    }

    Kind kind_ = Kind::Uniform;
    double alpha_ = 1.0, beta_ = 1.0, log_beta_ = 0.0;
    std::vector<double> rho_, F_, cum_;
    double lo_ = 0.0, hi_ = 1.0;
    int panels_ = 32;
    MomentTable moments_;
};

} // namespace malthus
