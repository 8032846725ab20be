#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "renewal.hpp"

namespace malthus {

struct PowerSettings {
    double tol = 1e-12;            // change of successive Rayleigh quotients
    double residual_tol = 1e-10;   // ||G eta - mu eta||_inf / ||eta||_inf
    std::size_t max_iter = 100000;
};

/// Krein-Rutman triplet of a discretised operator. `eta` is normalised by its
/// sum and `nu` has mass 1.
struct LeadingEigen {
    double mu = 0.0;
    std::vector<double> eta;
    std::vector<double> nu;
    std::size_t iterations = 0;
    double residual = 0.0;
    double dual_residual = 0.0;
};

namespace detail {

inline double sup_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Power iteration for x -> op(x) on positive vectors; returns (mu, x, iterations, residual).
template <class Op>
std::tuple<double, std::vector<double>, std::size_t, double> power_iterate(Op&& op, std::vector<double> x,
                                                                          const PowerSettings& s) {
    double sum = std::accumulate(x.begin(), x.end(), 0.0);
    for (double& v : x) v /= sum;
    double q_prev = 0.0;
    for (std::size_t it = 1; it <= s.max_iter; ++it) {
        std::vector<double> y = op(x);
        const double sy = std::accumulate(y.begin(), y.end(), 0.0);
        if (!(sy > 0.0) || !std::isfinite(sy)) throw NoConvergence("power iteration lost positivity");
        const double q = sy;  // <1, G x> / <1, x> with <1, x> = 1
        double res = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) res = std::max(res, std::abs(y[i] - q * x[i]));
        res /= sup_norm(x) * q;
        for (double& v : y) v /= sy;
        x = std::move(y);
        if (it > 1 && std::abs(q - q_prev) < s.tol * std::max(1.0, std::abs(q)) && res <= s.residual_tol)
            return {q, std::move(x), it, res};
        q_prev = q;
    }
    throw NoConvergence("power iteration did not converge within " + std::to_string(s.max_iter) + " iterations");
}

} // namespace detail

/// Leading eigenvalue mu, eigenvector eta (G eta = mu eta) and dual measure nu
/// (J nu = mu nu) of the truncated operator. `start` defaults to the constant vector.
inline LeadingEigen leading_eigen(const KernelMatrix& km, const PowerSettings& s = {},
                                  std::optional<std::vector<double>> start = std::nullopt) {
    const std::size_t n = km.size();
    std::vector<double> x0 = start.value_or(std::vector<double>(n, 1.0));
    if (x0.size() != n) throw GridMismatch("start vector length differs from the grid");
    LeadingEigen r;
    auto [mu, eta, it, res] = detail::power_iterate([&](const std::vector<double>& v) { return km.apply(v); }, x0, s);
    r.mu = mu;
    r.eta = std::move(eta);
    r.iterations = it;
    r.residual = res;

    auto [mu_d, nu, it_d, res_d] =
        detail::power_iterate([&](const std::vector<double>& v) { return km.apply_adjoint(v); }, std::vector<double>(n, 1.0), s);
    (void)mu_d;
    (void)res_d;
    r.nu = std::move(nu);
    r.iterations = std::max(r.iterations, it_d);
    const auto Jnu = km.apply_adjoint(r.nu);
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) l1 += std::abs(Jnu[i] - r.mu * r.nu[i]);
    r.dual_residual = l1;
    return r;
}

/// Malthus candidate of the truncated problem and its eigen-elements.
struct EigenResult {
    double R = 0.0;
    double lambda_R = 0.0;        // root of mu(lambda) = 1 for the death-free kernel
    double lambda_malthus = 0.0;  // lambda_R - d0
    double d0 = 0.0;
    double mu = 0.0;
    double residual = 0.0;        // ||G eta - mu eta||_inf / ||eta||_inf
    double dual_residual = 0.0;   // ||J nu - mu nu||_1
    std::vector<double> grid;
    std::vector<double> weights;
    std::vector<double> eta;      // eta(1) = 1
    std::vector<double> nu;       // mass 1
    double nu_eta = 0.0;          // <nu, eta>; eta / nu_eta satisfies <nu, .> = 1
    double max_correction = 0.0;  // largest redistribution term c_i
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    std::shared_ptr<const KernelMatrix> matrix;
};

struct MalthusSettings {
    double mu_tol = 1e-10;
    double width_tol = 1e-10;
    std::size_t max_evaluations = 200;
    PowerSettings power{};
};

namespace detail {
inline double value_at_one(const SizeGrid& g, std::span<const double> f) {
    const std::size_t i = g.index_of(1.0);
    if (i < g.size()) return f[i];
    return g.interpolate(f, 1.0);
}
} // namespace detail

inline double mu_of(const RenewalOperator& op, double lambda, const PowerSettings& s = {}) {
    return leading_eigen(*op.matrix(lambda), s).mu;
}

/// Solves mu^R_lambda = 1 by Illinois-accelerated bisection. The bracket is
/// widened automatically within [0, 100 lambda_growth].
inline EigenResult solve_malthus(const RenewalOperator& op, double lambda_lo = 0.0, double lambda_hi = -1.0,
                                 const MalthusSettings& s = {}) {
    const ModelSpec& m = op.law().model();
    const double cap = 100.0 * m.lambda_growth;
    if (lambda_hi <= lambda_lo) lambda_hi = std::max(2.0 * m.lambda_growth, lambda_lo + m.lambda_growth);
    std::size_t evals = 0;
    auto f = [&](double l) {
        ++evals;
        return mu_of(op, l, s.power) - 1.0;
    };

    double a = std::max(0.0, lambda_lo), b = std::min(lambda_hi, cap);
    double fa = f(a);
    if (fa <= 0.0 && a > 0.0) {
        a = 0.0;
        fa = f(a);
    }
    if (fa <= 0.0) throw BracketFailure("mu(0) <= 1: no positive Malthus root");
    double fb = f(b);
    while (fb >= 0.0) {
        if (b >= cap) throw BracketFailure("mu(lambda) >= 1 up to lambda = 100 lambda_growth");
        a = b;
        fa = fb;
        b = std::min(2.0 * b, cap);
        fb = f(b);
    }

    double c = a, fc = fa;
    int side = 0;
    while (evals < s.max_evaluations) {
        c = (a * fb - b * fa) / (fb - fa);
        if (!(c > a && c < b)) c = 0.5 * (a + b);
        fc = f(c);
        if (std::abs(fc) < s.mu_tol || (b - a) < s.width_tol) break;
        if (fc > 0.0) {
            a = c;
            fa = fc;
            if (side == 1) fb *= 0.5;
            side = 1;
        } else {
            b = c;
            fb = fc;
            if (side == -1) fa *= 0.5;
            side = -1;
        }
    }
    if (std::abs(fc) >= s.mu_tol && (b - a) >= s.width_tol)
        throw NoConvergence("Malthus root not located within the evaluation budget");

    EigenResult r;
    const auto km = op.matrix(c);
    const LeadingEigen le = leading_eigen(*km, s.power);
    r.R = op.R();
    r.lambda_R = c;
    r.d0 = op.death_rate();
    r.lambda_malthus = c - r.d0;
    r.mu = le.mu;
    r.residual = le.residual;
    r.dual_residual = le.dual_residual;
    r.grid = op.grid().nodes;
    r.weights = op.grid().weights;
    r.nu = le.nu;
    const double nu_mass = std::accumulate(r.nu.begin(), r.nu.end(), 0.0);
    for (double& v : r.nu) v /= nu_mass;
    r.eta = le.eta;
    const double e1 = detail::value_at_one(op.grid(), r.eta);
    for (double& v : r.eta) v /= e1;
    r.nu_eta = std::inner_product(r.nu.begin(), r.nu.end(), r.eta.begin(), 0.0);
    r.max_correction = km->max_correction();
    r.iterations = le.iterations;
    r.evaluations = evals;
    r.matrix = km;
    return r;
}

/// Malthus exponent of the model with death: lambda_R - d0.
inline double lambda_malthus(const EigenResult& r) { return r.lambda_R - r.d0; }

/// h_R(x) = int_0^R eta(z) K^R_{lambda_R}(x, z) dz on the grid.
inline double reconstruct_h(const RenewalOperator& op, const EigenResult& r, PhasePoint x) {
    if (op.grid().size() != r.eta.size()) throw GridMismatch("eigen result and operator grids differ");
    const auto row = op.kernel_row(x, r.lambda_R);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += r.weights[j] * r.eta[j] * row[j];
    return s;
}

/// C_(0,y) E[exp(lambda (int_y^Z dz / g2(0, z) - T))] - 1. With R set, the
/// truncated law of Eq. (22) is used: offspring above R are redistributed
/// uniformly over [0, R].
inline double euler_lotka_residual(const FirstJumpLaw& law, double lambda, double y,
                                   std::optional<double> R = std::nullopt) {
    const ModelSpec& m = law.model();
    const auto* F = m.fragmentation();
    if (!F) throw InvalidModel("Euler-Lotka residual requires a fragmentation kernel");
    const double mult = m.kernel.multiplicity();
    const bool cf = law.closed_form();
    const double s = lambda / m.lambda_growth;
    auto growth_factor = [&](double z) {
        return cf ? std::pow(z / y, s) : std::exp(lambda * law.boundary_time(y, z));
    };
    double uniform_avg = 0.0;  // (1/R) int_0^R exp(lambda tau(y, z)) dz
    if (R) {
        uniform_avg = cf ? std::pow(*R / y, s) / (s + 1.0)
                         : quad::integrate(growth_factor, 0.0, *R, 64, 8) / *R;
    }
    const auto nodes = law.orbit({0.0, y});
    double total = 0.0;
    for (const auto& n : nodes) {
        const double Y = n.size;
        double inner;
        if (R && Y > *R) {
            inner = mult * F->integrate([&](double r) { return growth_factor(r * Y); }, 0.0, *R / Y) +
                    mult * (1.0 - F->cdf(*R / Y)) * uniform_avg;
        } else {
            inner = mult * F->integrate([&](double r) { return growth_factor(r * Y); });
        }
        total += n.w * std::exp(-lambda * n.time) * inner;
    }
    if (!nodes.empty()) {
        const double tail = law.settings().survival_eps * mult * growth_factor(nodes.back().size) *
                            std::exp(-lambda * nodes.back().time);
        if (tail > law.settings().tail_tol)
            throw TailBoundExceeded("Euler-Lotka tail bound " + std::to_string(tail) + " exceeds tolerance");
    }
    return total - 1.0;
}

} // namespace malthus
