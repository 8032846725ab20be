#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "flow.hpp"
#include "io.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "random.hpp"
#include "simulate.hpp"

namespace malthus {

/// Cell grid over [a_lo, a_hi] x [y_lo, y_hi].
struct GridBox {
    double a_lo = 0.0, a_hi = 4.0;
    double y_lo = 0.0, y_hi = 8.0;
    std::size_t na = 16, ny = 32;

    bool operator==(const GridBox&) const = default;
};

/// Piecewise-constant density on a GridBox; values are cell averages, stored
/// with the y index running fastest.
class Density2D {
public:
    Density2D() = default;
    explicit Density2D(GridBox g) : g_(g) {
        if (g.na == 0 || g.ny == 0 || !(g.a_hi > g.a_lo) || !(g.y_hi > g.y_lo))
            throw ConfigError("Density2D grid must have positive extent and cell counts");
        v_.assign(g.na * g.ny, 0.0);
    }

    const GridBox& grid() const { return g_; }
    std::size_t na() const { return g_.na; }
    std::size_t ny() const { return g_.ny; }
    std::size_t size() const { return v_.size(); }
    double da() const { return (g_.a_hi - g_.a_lo) / static_cast<double>(g_.na); }
    double dy() const { return (g_.y_hi - g_.y_lo) / static_cast<double>(g_.ny); }
    double cell_area() const { return da() * dy(); }
    double a_center(std::size_t i) const { return g_.a_lo + (static_cast<double>(i) + 0.5) * da(); }
    double y_center(std::size_t j) const { return g_.y_lo + (static_cast<double>(j) + 0.5) * dy(); }

    double& operator()(std::size_t i, std::size_t j) { return v_[i * g_.ny + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v_[i * g_.ny + j]; }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    double mass() const { return std::accumulate(v_.begin(), v_.end(), 0.0) * cell_area(); }
    bool same_grid(const Density2D& o) const { return g_ == o.g_; }

    std::optional<std::size_t> cell_of(PhasePoint x) const {
        if (x.a < g_.a_lo || x.a >= g_.a_hi || x.y < g_.y_lo || x.y >= g_.y_hi) return std::nullopt;
        const auto i = std::min(g_.na - 1, static_cast<std::size_t>((x.a - g_.a_lo) / da()));
        const auto j = std::min(g_.ny - 1, static_cast<std::size_t>((x.y - g_.y_lo) / dy()));
        return i * g_.ny + j;
    }

    void write_csv(std::ostream& os) const {
        os << "a,y,value\n";
        for (std::size_t i = 0; i < g_.na; ++i)
            for (std::size_t j = 0; j < g_.ny; ++j)
                os << io::fmt(a_center(i)) << ',' << io::fmt(y_center(j)) << ',' << io::fmt((*this)(i, j)) << '\n';
    }

private:
    GridBox g_{};
    std::vector<double> v_;
};

/// Cell averages of f by an order x order Gauss-Legendre product rule per cell.
inline Density2D cell_average(const GridBox& g, const ScalarField& f, int order = 4) {
    Density2D d(g);
    const auto& r = quad::gauss_legendre(order);
    const double ha = 0.5 * d.da(), hy = 0.5 * d.dy();
    parallel_for(d.size(), [&](std::size_t k) {
        const std::size_t i = k / g.ny, j = k % g.ny;
        const double ca = d.a_center(i), cy = d.y_center(j);
        double s = 0.0;
        for (std::size_t p = 0; p < r.nodes.size(); ++p)
            for (std::size_t q = 0; q < r.nodes.size(); ++q)
                s += r.weights[p] * r.weights[q] * f({ca + ha * r.nodes[p], cy + hy * r.nodes[q]});
        d.values()[k] = 0.25 * s;
    });
    return d;
}

/// Histogram density of weighted points; points outside the box are dropped.
inline Density2D histogram(const GridBox& g, const std::vector<PhasePoint>& pts, double weight = 1.0) {
    Density2D d(g);
    const double w = weight / d.cell_area();
    for (const auto& p : pts)
        if (auto c = d.cell_of(p)) d.values()[*c] += w;
    return d;
}

inline double default_V(PhasePoint x) { return 1.0 / x.y + x.y; }

/// int int (1 + V) |u - v| by the cell rule, V at cell centres.
inline double weighted_tv(const Density2D& u, const Density2D& v, const ScalarField& V = default_V) {
    if (!u.same_grid(v)) throw GridMismatch("weighted_tv: densities live on different grids");
    double s = 0.0;
    for (std::size_t i = 0; i < u.na(); ++i)
        for (std::size_t j = 0; j < u.ny(); ++j)
            s += (1.0 + V({u.a_center(i), u.y_center(j)})) * std::abs(u(i, j) - v(i, j));
    return s * u.cell_area();
}

// ---------------------------------------------------------------------------
// eta* and pi*

struct EtaStarSettings {
    std::size_t n = 1024;
    double y_max = 8.0;
    double tol = 1e-10;
    std::size_t max_sweeps = 10000;
    int order = 4;             // Gauss-Legendre points per u panel
    double tail_width = 0.125; // u panel width beyond y_max
    double survival_eps = 1e-16;
};

/// Birth-size profile eta* on a uniform grid, normalised so that pi* has mass 1.
struct EtaStar {
    std::vector<double> nodes;
    std::vector<double> values;
    std::vector<double> weights;     // trapezoid
    std::vector<double> mass_coeff;  // mass(pi*) = sum c_j eta_j
    double y_max = 8.0;
    std::size_t sweeps = 0;
    double residual = 0.0;           // ||eta - T eta||_inf / ||eta||_inf
    std::optional<Hazard> hazard;
    std::shared_ptr<const Eigen::MatrixXd> T;

    double operator()(double s) const {
        if (s < 0.0 || s > y_max || nodes.size() < 2) return 0.0;
        const double h = nodes[1] - nodes[0];
        const std::size_t k = std::min(nodes.size() - 2, static_cast<std::size_t>(s / h));
        const double t = (s - nodes[k]) / h;
        return (1.0 - t) * values[k] + t * values[k + 1];
    }

    /// pi*(a, y) = exp(-int_0^a B) eta*(y - a) / y^2, zero for y <= a.
    double pi(double a, double y) const {
        if (a < 0.0 || y <= a) return 0.0;
        return hazard->survival(a) * (*this)(y - a) / (y * y);
    }
    double pi(PhasePoint x) const { return pi(x.a, x.y); }

    double pi_mass() const { return std::inner_product(mass_coeff.begin(), mass_coeff.end(), values.begin(), 0.0); }

    /// One application of the discrete fixed-point operator.
    std::vector<double> apply(const std::vector<double>& eta) const {
        const Eigen::VectorXd r = (*T) * Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(eta.size()));
        return {r.data(), r.data() + r.size()};
    }
};

namespace detail {

inline std::vector<double> hazard_knots(const Hazard& B) {
    std::vector<double> k;
    if (B.a_star() > 0.0) k.push_back(B.a_star());
    if (B.kind() == Hazard::Kind::Table)
        for (double a : B.table_a())
            if (a > B.a_star()) k.push_back(a);
    return k;
}

// Gauss-Legendre over [lo, hi] split at the given interior breaks.
template <class Fn>
void gl_pieces(double lo, double hi, const std::vector<double>& breaks, const quad::Rule& r, Fn&& visit) {
    double a = lo;
    auto piece = [&](double x0, double x1) {
        if (!(x1 > x0)) return;
        const double c = 0.5 * (x0 + x1), h = 0.5 * (x1 - x0);
        for (std::size_t p = 0; p < r.nodes.size(); ++p) visit(c + h * r.nodes[p], h * r.weights[p]);
    };
    for (double b : breaks) {
        if (b <= a || b >= hi) continue;
        piece(a, b);
        a = b;
    }
    piece(a, hi);
}

// Phi(s) = int_0^inf S(a) / (s + a)^2 da.
inline double pi_mass_density(const Hazard& B, double s, double a_cut) {
    std::vector<double> br = hazard_knots(B);
    for (double x = s; x < a_cut; x *= 2.0) br.push_back(x);
    std::sort(br.begin(), br.end());
    const auto& r = quad::gauss_legendre(16);
    double acc = 0.0;
    gl_pieces(0.0, a_cut, br, r, [&](double a, double w) { acc += w * B.survival(a) / ((s + a) * (s + a)); });
    return acc;
}

} // namespace detail

/// Solves eta(x) = m int F(rho) int psi(x / rho - z) eta(z) dz drho on [0, y_max].
/// The operator is discretised through the parent size u = x / rho:
/// T eta(x) = m int_x^inf (x / u^2) F(x / u) C(u) du, C(u) = int psi(u - z) eta(z) dz,
/// with eta piecewise linear. Offspring above y_max are removed by renormalising
/// each source column, so the truncated chain conserves mass.
inline EtaStar solve_eta_star(const ModelSpec& m, const EtaStarSettings& s = {}) {
    if (!m.hazard || !m.fragmentation()) throw InvalidModel("solve_eta_star requires an adder-type model");
    if (s.n < 3 || !(s.y_max > 0.0)) throw ConfigError("eta* grid needs n >= 3 nodes and y_max > 0");
    const Hazard& B = *m.hazard;
    const FragmentationDensity& F = *m.fragmentation();
    const double mult = m.kernel.multiplicity();
    const std::size_t n = s.n;
    const double h = s.y_max / static_cast<double>(n - 1);

    EtaStar out;
    out.y_max = s.y_max;
    out.hazard = B;
    out.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.nodes[i] = static_cast<double>(i) * h;
    out.nodes.back() = s.y_max;
    out.weights = quad::trapezoid_weights(out.nodes);

    double a_cut = B.age_at_survival(s.survival_eps);
    if (!std::isfinite(a_cut)) throw IntegrationFailure("hazard survival does not decay");

    // u quadrature: grid cells, then coarser panels up to y_max + a_cut.
    const auto& r = quad::gauss_legendre(s.order);
    std::vector<double> uq, wq;
    auto add_panel = [&](double lo, double hi) {
        const double c = 0.5 * (lo + hi), hw = 0.5 * (hi - lo);
        for (std::size_t p = 0; p < r.nodes.size(); ++p) {
            uq.push_back(c + hw * r.nodes[p]);
            wq.push_back(hw * r.weights[p]);
        }
    };
    for (std::size_t k = 0; k + 1 < n; ++k) add_panel(out.nodes[k], out.nodes[k + 1]);
    for (double lo = s.y_max; lo < s.y_max + a_cut; lo += s.tail_width) add_panel(lo, lo + s.tail_width);
    const std::size_t Q = uq.size();

    const auto knots = detail::hazard_knots(B);
    Eigen::MatrixXd Psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(Q), static_cast<Eigen::Index>(n));
    parallel_for(Q, [&](std::size_t q) {
        const double u = uq[q];
        std::vector<double> br;
        for (double kn : knots) br.push_back(u - kn);
        std::sort(br.begin(), br.end());
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const double lo = out.nodes[k];
            if (lo >= u) break;
            const double hi = std::min(out.nodes[k + 1], u);
            double c0 = 0.0, c1 = 0.0;
            detail::gl_pieces(lo, hi, br, r, [&](double z, double w) {
                const double p = w * B.density(u - z);
                const double t = (z - lo) / h;
                c0 += p * (1.0 - t);
                c1 += p * t;
            });
            Psi(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(k)) += c0;
            Psi(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(k + 1)) += c1;
        }
    });

    Eigen::MatrixXd Fm = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(Q));
    parallel_for(n, [&](std::size_t i) {
        const double x = out.nodes[i];
        if (x == 0.0) return;
        // u panels start at node i, i.e. at quadrature index 4 i
        for (std::size_t q = i * r.nodes.size(); q < Q; ++q) {
            const double rho = x / uq[q];
            Fm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = mult * wq[q] * rho / uq[q] * F(rho);
        }
    });

    auto T = std::make_shared<Eigen::MatrixXd>(Fm * Psi);
    Fm.resize(0, 0);
    Psi.resize(0, 0);
    for (std::size_t j = 0; j < n; ++j) {
        double cm = 0.0;
        for (std::size_t i = 0; i < n; ++i) cm += out.weights[i] * (*T)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (cm > 0.0) T->col(static_cast<Eigen::Index>(j)) *= out.weights[j] / cm;
    }
    out.T = T;

    // mass(pi*) = int eta(s) Phi(s) ds, eta piecewise linear; eta(0) = 0 by construction
    out.mass_coeff.assign(n, 0.0);
    {
        const auto& r8 = quad::gauss_legendre(8);
        std::vector<double> c0(n - 1, 0.0), c1(n - 1, 0.0);
        parallel_for(n - 1, [&](std::size_t k) {
            const double lo = out.nodes[k], c = lo + 0.5 * h;
            for (std::size_t p = 0; p < r8.nodes.size(); ++p) {
                const double sp = c + 0.5 * h * r8.nodes[p];
                const double w = 0.5 * h * r8.weights[p] * detail::pi_mass_density(B, sp, a_cut);
                const double t = (sp - lo) / h;
                c0[k] += w * (1.0 - t);
                c1[k] += w * t;
            }
        });
        for (std::size_t k = 0; k + 1 < n; ++k) {
            out.mass_coeff[k] += c0[k];
            out.mass_coeff[k + 1] += c1[k];
        }
        out.mass_coeff[0] = 0.0;
    }

    std::vector<double> eta(n, 1.0);
    eta[0] = 0.0;
    for (std::size_t sweep = 1; sweep <= s.max_sweeps; ++sweep) {
        std::vector<double> next = out.apply(eta);
        const double mass = std::inner_product(out.mass_coeff.begin(), out.mass_coeff.end(), next.begin(), 0.0);
        if (!(mass > 0.0)) throw NoConvergence("eta* iteration lost positivity");
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            next[i] = std::max(0.0, next[i] / mass);
            diff = std::max(diff, std::abs(next[i] - eta[i]));
        }
        eta = std::move(next);
        if (diff < s.tol) {
            out.sweeps = sweep;
            out.values = eta;
            const auto Te = out.apply(eta);
            double res = 0.0, sup = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                res = std::max(res, std::abs(eta[i] - Te[i]));
                sup = std::max(sup, std::abs(eta[i]));
            }
            out.residual = res / sup;
            return out;
        }
    }
    throw NoConvergence("eta* fixed point not reached within " + std::to_string(s.max_sweeps) + " sweeps");
}

// ---------------------------------------------------------------------------
// Foster-Lyapunov drift

struct DriftSettings {
    double a_lo = 0.0, a_hi = 10.0;
    double y_lo = 0.0, y_hi = 10.0;
    std::size_t n = 64;
    std::optional<double> c;
    std::optional<double> d;
};

struct DriftReport {
    double c = 0.0;
    double d = 0.0;
    PhasePoint worst_point{};
    double worst_margin = -std::numeric_limits<double>::infinity();  // max of A V + c V - d
    std::size_t violations = 0;
    std::size_t points = 0;
    bool pass = false;
};

/// d = lambda (b_plus + 1 / (b_minus (1 - 2 m2))), the maximum over y of the
/// quadratic bound on A V + lambda V for V = y + 1 / y.
inline double adder_drift_constant(const ModelSpec& m) {
    if (!m.is_adder() || !m.fragmentation()) throw InvalidModel("drift constant is defined for the adder model");
    const double m2 = m.fragmentation()->moments().m2;
    if (!(m2 < 0.5)) throw InvalidModel("(A2) violated: m2 must be below 1/2");
    return m.lambda_growth * (m.bounds.beta_plus + 1.0 / (m.bounds.beta_minus * (1.0 - 2.0 * m2)));
}

/// Checks A V <= -c V + d at the cell centres of an n x n grid over the box.
inline DriftReport check_drift(const MarkovModel& A, const ScalarField& V, const DriftSettings& s = {}) {
    DriftReport rep;
    rep.c = s.c.value_or(A.base.lambda_growth);
    rep.d = s.d ? *s.d : adder_drift_constant(A.base);
    const std::size_t n = s.n;
    const double da = (s.a_hi - s.a_lo) / static_cast<double>(n), dy = (s.y_hi - s.y_lo) / static_cast<double>(n);
    std::vector<double> margin(n * n);
    parallel_for(n * n, [&](std::size_t k) {
        const PhasePoint x{s.a_lo + (static_cast<double>(k / n) + 0.5) * da, s.y_lo + (static_cast<double>(k % n) + 0.5) * dy};
        margin[k] = A.apply(V, x) + rep.c * V(x) - rep.d;
    });
    rep.points = margin.size();
    for (std::size_t k = 0; k < margin.size(); ++k) {
        if (margin[k] > 0.0) ++rep.violations;
        if (margin[k] > rep.worst_margin) {
            rep.worst_margin = margin[k];
            rep.worst_point = {s.a_lo + (static_cast<double>(k / n) + 0.5) * da, s.y_lo + (static_cast<double>(k % n) + 0.5) * dy};
        }
    }
    rep.pass = rep.worst_margin <= 1e-8 * (1.0 + std::abs(rep.d));
    return rep;
}

inline DriftReport check_drift(const ModelSpec& m, const DriftSettings& s = {}) {
    return check_drift(adder_h_transform(m), default_V, s);
}

// ---------------------------------------------------------------------------
// Doeblin minorant

struct DoeblinSettings {
    // compact K = [a_lo, a_hi] x [y_lo, y_hi]
    double a_lo = 0.0, a_hi = 0.5;
    double y_lo = 1.0, y_hi = 2.0;
    std::optional<double> delta;  // width of D(z) = [2z, 2z + delta]; default 2 y_hi
    std::optional<double> Delta;  // skeleton step; default log(1 + delta / (2 y_hi)) / lambda
    double q = 0.5;               // mu_j = (1 - q) q^j
    std::size_t j_cap = 64;
    GridBox grid{0.0, 2.0, 0.0, 4.0, 16, 16};
    int sub = 4;                  // Gauss-Legendre points per cell side
    std::size_t compact_points = 8;
    std::size_t time_points = 512;
};

struct DoeblinConstants {
    double A0 = 0.0, B0 = 0.0, C0 = 0.0, H0 = 0.0, c1 = 0.0;
    std::vector<double> E0;  // at cell centres, NaN outside the support
    double Delta = 0.0, delta = 0.0;
    std::size_t j_star = 0;
    std::vector<double> mu_weights;  // mu_0 .. mu_{j*}
    double beta_tilde = 0.0;         // 2 B0 + Lambda
    double log_skeleton = 0.0;       // log(min mu_j) - 2 B0 (1 + t*) e^{c1 t*} - Lambda t*
    double z_lo = 0.0, z_hi = 0.0;   // support of the birth size y - a
    double lambda_malthus = 0.0;
};

struct DoeblinResult {
    DoeblinConstants constants;
    Density2D nu;                 // may underflow to 0; use log_nu
    std::vector<double> log_nu;   // log of cell averages, -inf off the support
    double log_mass = -std::numeric_limits<double>::infinity();
    bool empty = true;
    std::vector<std::string> warnings;
};

/// epsilon(z) = min over z' in [2z, 2z + delta] of F(z / z') / z'.
inline double kernel_minoration(const FragmentationDensity& F, double z, double delta, int samples = 256) {
    double e = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= samples; ++k) {
        const double zp = 2.0 * z + delta * k / samples;
        e = std::min(e, F(z / zp) / zp);
    }
    return e;
}

namespace detail {
inline double spectral_norm(const Jacobian2x2& J) {
    const double a = J(0, 0), b = J(0, 1), c = J(1, 0), d = J(1, 1);
    const double s1 = a * a + b * b + c * c + d * d;
    const double det = a * d - b * c;
    return std::sqrt(0.5 * (s1 + std::sqrt(std::max(0.0, s1 * s1 - 4.0 * det * det))));
}

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}
} // namespace detail

/// Explicit lower bound nu on sum_j mu_j P_{j Delta}(x, .) for x in K, for the
/// h-transformed adder chain. Built from the one-jump term of the Duhamel
/// expansion; values are kept in log space because the skeleton factor is
/// doubly exponential in j* Delta.
inline DoeblinResult doeblin_minorant(const MarkovModel& A, const DoeblinSettings& s = {}) {
    const ModelSpec& m = A.base;
    if (!m.is_adder() || !m.hazard || !m.fragmentation())
        throw InvalidModel("doeblin_minorant is implemented for the adder model");
    if (!(s.y_lo > 0.0 && s.y_hi >= s.y_lo && s.a_hi >= s.a_lo && s.a_lo >= 0.0))
        throw ConfigError("compact must satisfy 0 <= a_lo <= a_hi and 0 < y_lo <= y_hi");
    if (!(s.q > 0.0 && s.q < 1.0)) throw ConfigError("geometric weight q must lie in (0, 1)");
    const FlowEngine flow(m);
    const Hazard& B = *m.hazard;
    const FragmentationDensity& F = *m.fragmentation();
    const double lam = m.lambda_growth, Lam = A.lambda;

    DoeblinResult res;
    auto& K = res.constants;
    K.lambda_malthus = Lam;
    K.delta = s.delta.value_or(2.0 * s.y_hi);
    K.Delta = s.Delta.value_or(std::log1p(K.delta / (2.0 * s.y_hi)) / lam);
    if (!(K.delta > 0.0 && K.Delta > 0.0)) throw ConfigError("delta and Delta must be positive");
    K.z_lo = 0.5 * s.y_hi;
    K.z_hi = K.delta / (2.0 * std::expm1(lam * K.Delta));
    K.c1 = std::max(m.bounds.c1, lam);

    const std::size_t ns = static_cast<std::size_t>(s.sub);
    const auto& r = quad::gauss_legendre(s.sub);
    Density2D nu(s.grid);
    auto sub_point = [&](std::size_t cell, std::size_t p, std::size_t q) {
        const std::size_t i = cell / s.grid.ny, j = cell % s.grid.ny;
        return PhasePoint{nu.a_center(i) + 0.5 * nu.da() * r.nodes[p], nu.y_center(j) + 0.5 * nu.dy() * r.nodes[q]};
    };
    // latest skeleton time needed to cover target x from the slowest start y_lo
    auto exit_time = [&](PhasePoint x) -> double {
        const double z = x.y - x.a;
        if (x.a < 0.0 || !(z > 0.0) || z < K.z_lo || z > K.z_hi) return -1.0;
        const double tau = std::log(x.y / z) / lam;
        return tau + std::log((2.0 * z + K.delta) / s.y_lo) / lam;
    };

    double t_need = 0.0;
    for (std::size_t c = 0; c < nu.size(); ++c)
        for (std::size_t p = 0; p < ns; ++p)
            for (std::size_t q = 0; q < ns; ++q) t_need = std::max(t_need, exit_time(sub_point(c, p, q)));
    K.j_star = std::min<std::size_t>(s.j_cap, static_cast<std::size_t>(std::ceil(t_need / K.Delta - 1e-12)));
    K.j_star = std::max<std::size_t>(K.j_star, 1);
    const double t_star = static_cast<double>(K.j_star) * K.Delta;
    for (std::size_t j = 0; j <= K.j_star; ++j) K.mu_weights.push_back((1.0 - s.q) * std::pow(s.q, static_cast<double>(j)));

    // constants over a grid of K
    std::vector<PhasePoint> kpts;
    const std::size_t nk = std::max<std::size_t>(2, s.compact_points);
    for (std::size_t i = 0; i < nk; ++i)
        for (std::size_t j = 0; j < nk; ++j) {
            const double a = s.a_lo + (s.a_hi - s.a_lo) * static_cast<double>(i) / static_cast<double>(nk - 1);
            const double y = s.y_lo + (s.y_hi - s.y_lo) * static_cast<double>(j) / static_cast<double>(nk - 1);
            if (a <= y) kpts.push_back({a, y});
        }
    K.A0 = std::numeric_limits<double>::infinity();
    K.H0 = 0.0;
    double y_max_K = 0.0;
    for (const auto& x : kpts) {
        K.A0 = std::min(K.A0, m.bounds.beta_minus * m.g1(x) * A.normalizer(x) / A.eval_h(x));
        K.H0 = std::max(K.H0, A.eval_h(x));
        y_max_K = std::max(y_max_K, x.y);
    }
    K.B0 = m.bounds.beta_plus * y_max_K;
    const double T = std::max(t_star, B.age_at_survival(1e-16) / (lam * s.y_lo));
    K.C0 = 0.0;
    for (const auto& x : kpts) {
        const double hx = A.eval_h(x), H0x = B.cumulative(x.a);
        for (std::size_t k = 0; k <= s.time_points; ++k) {
            const double t = T * static_cast<double>(k) / static_cast<double>(s.time_points);
            const PhasePoint xt = flow.advance(x, t);
            const double psi = A.jump_rate(xt) * std::exp(-(B.cumulative(xt.a) - H0x));
            K.C0 = std::max(K.C0, A.normalizer(xt) * psi * std::exp(-Lam * t) / hx);
        }
    }
    K.beta_tilde = 2.0 * K.B0 + Lam;
    K.log_skeleton = std::log(K.mu_weights.back()) - 2.0 * K.B0 * (1.0 + t_star) * std::exp(K.c1 * t_star) - Lam * t_star;

    if (!(K.A0 > 0.0)) res.warnings.push_back("EmptyMinorant: A0 = 0 (hazard vanishes on part of the compact orbit)");
    const double log_pref = 2.0 * std::log(K.A0) - std::log(K.C0) - std::log(K.H0);

    auto log_nu_at = [&](PhasePoint x) -> double {
        const double te = exit_time(x);
        if (te < 0.0 || te > t_star) return -std::numeric_limits<double>::infinity();
        const double z = x.y - x.a;
        const double tau = std::log(x.y / z) / lam;
        const PhasePoint x0{0.0, z};
        const double log_surv = -B.cumulative(x.a);
        const double jac = euclidean_norm(m.g(x)) * detail::spectral_norm(flow.flow_jacobian(x0, tau));
        const double eps = kernel_minoration(F, z, K.delta);
        if (!(eps > 0.0)) return -std::numeric_limits<double>::infinity();
        return log_pref + log_surv + std::log(A.eval_h(x0)) - std::log(jac) + std::log(eps) + K.log_skeleton;
    };

    res.log_nu.assign(nu.size(), -std::numeric_limits<double>::infinity());
    K.E0.assign(nu.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(nu.size(), [&](std::size_t c) {
        std::vector<double> terms;
        for (std::size_t p = 0; p < ns; ++p)
            for (std::size_t q = 0; q < ns; ++q)
                terms.push_back(std::log(0.25 * r.weights[p] * r.weights[q]) + log_nu_at(sub_point(c, p, q)));
        res.log_nu[c] = detail::log_sum_exp(terms);
        const PhasePoint xc{nu.a_center(c / s.grid.ny), nu.y_center(c % s.grid.ny)};
        if (exit_time(xc) >= 0.0) {
            const double z = xc.y - xc.a;
            K.E0[c] = detail::spectral_norm(flow.flow_jacobian({0.0, z}, std::log(xc.y / z) / lam));
        }
    });
    std::vector<double> mass_terms;
    for (std::size_t c = 0; c < nu.size(); ++c) {
        nu.values()[c] = std::exp(res.log_nu[c]);
        mass_terms.push_back(res.log_nu[c] + std::log(nu.cell_area()));
    }
    res.log_mass = detail::log_sum_exp(mass_terms);
    res.empty = !std::isfinite(res.log_mass);
    if (res.empty) res.warnings.push_back("EmptyMinorant: the assembled minorant vanishes on the grid");
    res.nu = std::move(nu);
    return res;
}

inline DoeblinResult doeblin_minorant(const ModelSpec& m, const DoeblinSettings& s = {}) {
    return doeblin_minorant(adder_h_transform(m), s);
}

/// Monte Carlo estimate of sum_j mu_j P_{j Delta}(x0, .) on the minorant grid,
/// with per-cell standard errors (a zero count is given the error of one count).
struct SkeletonEstimate {
    Density2D density;
    std::vector<double> stderr_;
    std::size_t samples = 0;
};

inline SkeletonEstimate skeleton_density_mc(const ModelSpec& m, PhasePoint x0, const DoeblinResult& d, double q,
                                            std::size_t samples, std::uint64_t seed) {
    const FlowEngine flow(m);
    std::vector<PhasePoint> end(samples);
    const double Delta = d.constants.Delta;
    parallel_for(samples, [&](std::size_t k) {
        Stream rng(mix_keys(splitmix64(seed), k));
        const auto J = static_cast<double>(std::floor(std::log(rng.uniform()) / std::log(q)));
        end[k] = tagged_lineage_state(flow, x0, J * Delta, rng);
    });
    SkeletonEstimate est;
    est.samples = samples;
    est.density = Density2D(d.nu.grid());
    std::vector<double> counts(est.density.size(), 0.0);
    for (const auto& p : end)
        if (auto c = est.density.cell_of(p)) counts[*c] += 1.0;
    const double norm = static_cast<double>(samples) * est.density.cell_area();
    est.stderr_.resize(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        est.density.values()[c] = counts[c] / norm;
        est.stderr_[c] = std::sqrt(std::max(counts[c], 1.0)) / norm;
    }
    return est;
}

// ---------------------------------------------------------------------------
// Convergence to the stationary profile

struct DecayRow {
    double t = 0.0;
    double distance = 0.0;
    double stderr_ = 0.0;
};

struct ErgodicityReport {
    std::vector<DecayRow> rows;
    double omega_hat = 0.0;
    std::vector<Density2D> profiles;  // e^{-Lambda t} E[Z_t] / h(x0)
    Density2D target;                 // cell averages of pi*
};

struct ErgodicitySettings {
    GridBox grid{0.0, 4.0, 0.0, 8.0, 16, 32};
    std::size_t bootstrap = 50;
    std::uint64_t seed = 7;
};

/// Weighted total-variation distance between the rescaled empirical mean
/// measure and pi* at each record time, with a bootstrap standard error over
/// replicates and the fitted exponential decay rate.
inline ErgodicityReport ergodicity_report(const std::vector<Trajectory>& trajs, const EtaStar& eta, double h_x0,
                                          double Lambda, const ErgodicitySettings& s = {},
                                          const ScalarField& V = default_V) {
    if (trajs.empty()) throw InsufficientData("no trajectories");
    const std::size_t nt = trajs.front().records.size();
    if (nt < 3) throw InsufficientData("need snapshots at 3 or more times");
    for (const auto& tr : trajs) {
        if (tr.records.size() != nt) throw InsufficientData("replicates have different record counts");
        for (const auto& rec : tr.records)
            if (rec.count != rec.individuals.size()) throw InsufficientData("snapshots lack per-individual states");
    }
    if (!(h_x0 > 0.0)) throw NonPositiveH("h(x0) must be positive");

    ErgodicityReport rep;
    rep.target = cell_average(s.grid, [&](PhasePoint x) { return eta.pi(x); });
    const std::size_t nr = trajs.size();

    auto profile = [&](std::size_t k, const std::vector<std::size_t>& idx) {
        Density2D d(s.grid);
        const double w = std::exp(-Lambda * trajs.front().records[k].t) / (h_x0 * static_cast<double>(idx.size())) / d.cell_area();
        for (std::size_t rr : idx)
            for (const auto& p : trajs[rr].records[k].individuals)
                if (auto c = d.cell_of(p)) d.values()[*c] += w;
        return d;
    };

    std::vector<std::size_t> all(nr);
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 gen(s.seed);
    std::uniform_int_distribution<std::size_t> pick(0, nr - 1);
    std::vector<std::vector<std::size_t>> boots(s.bootstrap, std::vector<std::size_t>(nr));
    for (auto& b : boots)
        for (auto& i : b) i = pick(gen);

    for (std::size_t k = 0; k < nt; ++k) {
        DecayRow row;
        row.t = trajs.front().records[k].t;
        rep.profiles.push_back(profile(k, all));
        row.distance = weighted_tv(rep.profiles.back(), rep.target, V);
        if (s.bootstrap >= 2) {
            std::vector<double> ds(s.bootstrap);
            parallel_for(s.bootstrap, [&](std::size_t b) { ds[b] = weighted_tv(profile(k, boots[b]), rep.target, V); });
            const double mu = std::accumulate(ds.begin(), ds.end(), 0.0) / static_cast<double>(ds.size());
            double ss = 0.0;
            for (double v : ds) ss += (v - mu) * (v - mu);
            row.stderr_ = std::sqrt(ss / static_cast<double>(ds.size() - 1));
        }
        rep.rows.push_back(row);
    }
    std::vector<double> t, ld;
    for (const auto& row : rep.rows)
        if (row.distance > 0.0 && row.t > 0.0) {
            t.push_back(row.t);
            ld.push_back(std::log(row.distance));
        }
    if (t.size() >= 2) rep.omega_hat = -detail::ls_slope(t, ld);
    return rep;
}

} // namespace malthus
