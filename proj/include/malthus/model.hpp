#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fragmentation.hpp"
#include "hazard.hpp"
#include "quadrature.hpp"
#include "types.hpp"

namespace malthus {

/// Constants of the flow and rate assumptions.
struct Bounds {
    double c0 = 1.0, c1 = 1.0, c2 = 1.0;
    double beta_minus = 1.0, beta_plus = 1.0;
    double K_bar = 2.0;
    double a_star = 0.0;
};

/// Rectangular working domain used for sampling-based checks.
struct Box {
    double a_lo = 0.0, a_hi = 8.0;
    double y_lo = 0.125, y_hi = 8.0;
};

/// Offspring kernel k(x, z): either a binary fragmentation kernel
/// k(a, y, z) = (m / y) F(z / y) 1{z <= y} or a user-supplied general kernel.
class Kernel {
public:
    using Density = std::function<double(PhasePoint, double)>;
    using Mass = std::function<double(PhasePoint)>;

    Kernel() : Kernel(fragmentation(FragmentationDensity::uniform())) {}

    static Kernel fragmentation(FragmentationDensity F, double multiplicity = 2.0) {
        Kernel k(0);
        k.frag_ = std::make_shared<const FragmentationDensity>(std::move(F));
        k.multiplicity_ = multiplicity;
        return k;
    }

    /// General kernel with density k(x, z) supported in [0, support(x)]. `mass` may be empty.
    static Kernel general(Density density, Mass support, Mass mass = {}) {
        Kernel k(0);
        k.density_ = std::move(density);
        k.support_ = std::move(support);
        k.mass_ = std::move(mass);
        return k;
    }

    bool is_fragmentation() const { return static_cast<bool>(frag_); }
    const FragmentationDensity* fragmentation_density() const { return frag_.get(); }
    double multiplicity() const { return multiplicity_; }

    double operator()(PhasePoint x, double z) const {
        if (frag_) {
            if (z < 0.0 || z > x.y) return 0.0;
            return multiplicity_ / x.y * (*frag_)(z / x.y);
        }
        return density_(x, z);
    }

    double support_upper(PhasePoint x) const {
        if (frag_) return x.y * frag_->support_hi();
        return support_(x);
    }

    /// Total offspring int k(x, z) dz.
    double mass(PhasePoint x) const {
        if (frag_) return multiplicity_ * frag_->moments().m0;
        if (mass_) return mass_(x);
        return integrate(x, [](double) { return 1.0; });
    }

    /// int_R^inf k(x, z) dz.
    double mass_above(PhasePoint x, double R) const {
        if (frag_) {
            if (R >= x.y * frag_->support_hi()) return 0.0;
            return multiplicity_ * (1.0 - frag_->cdf(R / x.y));
        }
        const double up = support_(x);
        if (R >= up) return 0.0;
        return quad::integrate([&](double z) { return density_(x, z); }, std::max(R, 0.0), up, 64, 8);
    }

    /// int phi(z) k(x, z) dz.
    template <class Phi>
    double integrate(PhasePoint x, Phi&& phi) const {
        if (frag_) return multiplicity_ * frag_->integrate([&](double r) { return phi(r * x.y); });
        const double up = support_(x);
        return quad::integrate([&](double z) { return phi(z) * density_(x, z); }, 0.0, up, 64, 8);
    }

private:
    explicit Kernel(int) {}

    std::shared_ptr<const FragmentationDensity> frag_;
    double multiplicity_ = 2.0;
    Density density_;
    Mass support_, mass_;
};

enum class ModelType { Adder, General };

/// Structured-population model: flow g, hazard B, kernel k, death rate d0 and
/// the declared bound constants. Immutable once built.
struct ModelSpec {
    ModelType type = ModelType::General;
    ScalarField g1, g2;
    std::function<Jacobian2x2(PhasePoint)> Dg;  // optional closed form
    ScalarField B;
    Kernel kernel;
    double d0 = 0.0;
    Bounds bounds;
    double lambda_growth = 1.0;
    std::optional<Hazard> hazard;
    Box box;
    std::string growth = "exponential";

    bool is_adder() const { return type == ModelType::Adder; }
    const FragmentationDensity* fragmentation() const { return kernel.fragmentation_density(); }

    std::array<double, 2> g(PhasePoint x) const { return {g1(x), g2(x)}; }
    double beta(PhasePoint x) const { return g1(x) * B(x); }

    /// Jacobian of g: closed form when supplied, else central differences.
    Jacobian2x2 jacobian_g(PhasePoint x) const {
        if (Dg) return Dg(x);
        const double ha = 1e-6 * (1.0 + std::abs(x.a));
        const double hy = 1e-6 * (1.0 + std::abs(x.y));
        const PhasePoint ap{x.a + ha, x.y}, am{x.a - ha, x.y}, yp{x.a, x.y + hy}, ym{x.a, x.y - hy};
        Jacobian2x2 J;
        J(0, 0) = (g1(ap) - g1(am)) / (2 * ha);
        J(0, 1) = (g1(yp) - g1(ym)) / (2 * hy);
        J(1, 0) = (g2(ap) - g2(am)) / (2 * ha);
        J(1, 1) = (g2(yp) - g2(ym)) / (2 * hy);
        return J;
    }
};

/// Adder model: g = (lambda y, lambda y), beta = lambda y B(a),
/// k(a, y, z) = (2 / y) F(z / y) 1{z <= y}, death rate d0.
inline ModelSpec make_adder(double lambda_growth, const Hazard& B, const FragmentationDensity& F, double d0) {
    if (!(lambda_growth > 0.0)) throw InvalidModel("lambda_growth must be positive");
    ModelSpec m;
    m.type = ModelType::Adder;
    m.lambda_growth = lambda_growth;
    m.d0 = d0;
    const double lam = lambda_growth;
    m.g1 = [lam](PhasePoint x) { return lam * x.y; };
    m.g2 = [lam](PhasePoint x) { return lam * x.y; };
    m.Dg = [lam](PhasePoint) {
        Jacobian2x2 J;
        J.m = {0.0, lam, 0.0, lam};
        return J;
    };
    m.hazard = B;
    m.B = [B](PhasePoint x) { return B(x.a); };
    m.kernel = Kernel::fragmentation(F, 2.0);
    m.bounds.c0 = lam;
    m.bounds.c1 = lam;
    m.bounds.c2 = lam;
    m.bounds.beta_minus = B.lower_bound();
    m.bounds.beta_plus = B.upper_bound();
    m.bounds.K_bar = 2.0;
    m.bounds.a_star = B.a_star();
    m.growth = "exponential";
    return m;
}

/// General-form model integrated numerically by the flow engine. `growth` is
/// "exponential" (g = (lambda y, lambda y)) or "linear" (g = (lambda, lambda)).
/// No closed-form Jacobian is attached.
inline ModelSpec make_general(const std::string& growth, double lambda_growth, const Hazard& B,
                              const FragmentationDensity& F, double d0 = 0.0) {
    if (!(lambda_growth > 0.0)) throw InvalidModel("lambda_growth must be positive");
    ModelSpec m;
    m.type = ModelType::General;
    m.growth = growth;
    m.lambda_growth = lambda_growth;
    m.d0 = d0;
    const double lam = lambda_growth;
    if (growth == "exponential") {
        m.g1 = [lam](PhasePoint x) { return lam * x.y; };
        m.g2 = [lam](PhasePoint x) { return lam * x.y; };
        m.bounds.c0 = lam;
    } else if (growth == "linear") {
        m.g1 = [lam](PhasePoint) { return lam; };
        m.g2 = [lam](PhasePoint) { return lam; };
        m.bounds.c0 = 0.0;
    } else {
        throw InvalidModel("unknown growth law '" + growth + "'");
    }
    m.hazard = B;
    m.B = [B](PhasePoint x) { return B(x.a); };
    m.kernel = Kernel::fragmentation(F, 2.0);
    m.bounds.c1 = lam;
    m.bounds.c2 = lam;
    m.bounds.beta_minus = B.lower_bound();
    m.bounds.beta_plus = B.upper_bound();
    m.bounds.K_bar = 2.0;
    m.bounds.a_star = B.a_star();
    return m;
}

namespace detail {
inline std::array<double, 2> fd_gradient(const ScalarField& f, PhasePoint x) {
    const double ha = 1e-6 * (1.0 + std::abs(x.a));
    const double hy = 1e-6 * (1.0 + std::abs(x.y));
    return {(f({x.a + ha, x.y}) - f({x.a - ha, x.y})) / (2 * ha),
            (f({x.a, x.y + hy}) - f({x.a, x.y - hy})) / (2 * hy)};
}
} // namespace detail

/// Generator Q f(x) = g . grad f + beta (int f(0, z) k(x, z) dz - f(x)) - d0 f(x).
/// Gradients by central differences with step 1e-6 (1 + |x|).
inline double apply_generator(const ModelSpec& m, const ScalarField& f, PhasePoint x) {
    const auto grad = detail::fd_gradient(f, x);
    const double fx = f(x);
    const double transport = m.g1(x) * grad[0] + m.g2(x) * grad[1];
    const double b = m.beta(x);
    double jump = 0.0;
    if (b != 0.0) jump = b * (m.kernel.integrate(x, [&](double z) { return f({0.0, z}); }) - fx);
    return transport + jump - m.d0 * fx;
}

/// Conservative jump-flow model obtained by the Doob h-transform of a model.
struct MarkovModel {
    ModelSpec base;
    ScalarField h;
    double lambda = 0.0;
    std::function<double(PhasePoint)> normalizer_closed_form;  // int h(0, z) k(x, z) dz, optional

    double eval_h(PhasePoint x) const {
        const double v = h(x);
        if (!(v > 0.0)) {
            std::ostringstream os;
            os << "h(" << x.a << ", " << x.y << ") = " << v << " is not positive";
            throw NonPositiveH(os.str());
        }
        return v;
    }

    /// int h(0, z) k(x, z) dz.
    double normalizer(PhasePoint x) const {
        if (normalizer_closed_form) return normalizer_closed_form(x);
        return base.kernel.integrate(x, [&](double z) { return eval_h({0.0, z}); });
    }

    std::array<double, 2> g(PhasePoint x) const { return base.g(x); }

    double jump_rate(PhasePoint x) const {
        const double b = base.beta(x);
        if (b == 0.0) return 0.0;
        return b * normalizer(x) / eval_h(x);
    }

    /// Density of the post-jump size z.
    double post_jump_density(PhasePoint x, double z) const {
        const double kz = base.kernel(x, z);
        if (kz == 0.0) return 0.0;
        return eval_h({0.0, z}) * kz / normalizer(x);
    }

    /// E[f(0, Z)] under the post-jump law from x.
    double post_jump_expectation(PhasePoint x, const ScalarField& f) const {
        const double num = base.kernel.integrate(x, [&](double z) { return f({0.0, z}) * eval_h({0.0, z}); });
        return num / normalizer(x);
    }

    /// A f(x) = g . grad f + rate(x) (E f(0, Z) - f(x)).
    double apply(const ScalarField& f, PhasePoint x) const {
        const auto grad = detail::fd_gradient(f, x);
        const auto gx = g(x);
        const double rate = jump_rate(x);
        double jump = 0.0;
        if (rate != 0.0) jump = rate * (post_jump_expectation(x, f) - f(x));
        return gx[0] * grad[0] + gx[1] * grad[1] + jump;
    }
};

/// Doob h-transform with eigenvalue lambda. `normalizer` optionally supplies
/// int h(0, z) k(x, z) dz in closed form.
inline MarkovModel h_transform(const ModelSpec& m, ScalarField h, double lambda,
                               std::function<double(PhasePoint)> normalizer = {}) {
    MarkovModel a;
    a.base = m;
    a.h = std::move(h);
    a.lambda = lambda;
    a.normalizer_closed_form = std::move(normalizer);
    return a;
}

/// h-transform of an adder model with its exact eigenpair h = y, Lambda = lambda_growth - d0.
inline MarkovModel adder_h_transform(const ModelSpec& m) {
    if (!m.is_adder() || !m.fragmentation()) throw InvalidModel("adder_h_transform requires an adder model");
    const double two_m1 = m.kernel.multiplicity() * m.fragmentation()->moments().m1;
    return h_transform(
        m, [](PhasePoint x) { return x.y; }, m.lambda_growth - m.d0,
        [two_m1](PhasePoint x) { return two_m1 * x.y; });
}

/// One line of a validation report.
struct Check {
    std::string name;
    bool passed = true;
    bool structural = false;
    std::string detail;
};

struct ValidationOptions {
    int na = 64;
    int ny = 64;
    std::optional<Box> box;
};

struct ValidationReport {
    std::vector<Check> checks;
    std::vector<std::string> warnings;
    int na = 64, ny = 64;
    Box box;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
    const Check* first_failure() const {
        for (const auto& c : checks)
            if (!c.passed) return &c;
        return nullptr;
    }
};

/// Sampling-based check of the model assumptions on an na x ny grid of the box.
/// Never throws; see validate() for the throwing variant.
inline ValidationReport assess(const ModelSpec& m, const ValidationOptions& opt = {}) {
    ValidationReport rep;
    rep.na = opt.na;
    rep.ny = opt.ny;
    rep.box = opt.box.value_or(m.box);
    const Box& bx = rep.box;
    const auto& bd = m.bounds;

    std::vector<PhasePoint> pts;
    for (int i = 0; i < opt.na; ++i)
        for (int j = 0; j < opt.ny; ++j) {
            const double a = bx.a_lo + (bx.a_hi - bx.a_lo) * (opt.na > 1 ? i / double(opt.na - 1) : 0.0);
            const double y = bx.y_lo + (bx.y_hi - bx.y_lo) * (opt.ny > 1 ? j / double(opt.ny - 1) : 0.0);
            if (y <= 0.0) continue;
            if (m.is_adder() && a > y) continue;
            pts.push_back({a, y});
        }

    auto add = [&](std::string name, bool ok, bool structural, std::string detail) {
        rep.checks.push_back({std::move(name), ok, structural, std::move(detail)});
    };
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(10);
        os << v;
        return os.str();
    };

    add("lambda_growth > 0", m.lambda_growth > 0.0, true, "lambda_growth = " + fmt(m.lambda_growth));

    // Assumption (ii): hazard bounds and minimal division age
    add("(ii) 0 < beta_minus <= beta_plus", bd.beta_minus > 0.0 && bd.beta_minus <= bd.beta_plus, true,
        "beta_minus = " + fmt(bd.beta_minus) + ", beta_plus = " + fmt(bd.beta_plus));
    {
        bool ok = true;
        std::string where;
        for (const auto& x : pts) {
            const double b = m.B(x);
            const bool bad = (bd.a_star > 0.0 && x.a <= bd.a_star)
                                 ? b != 0.0
                                 : (b < bd.beta_minus - 1e-12 || b > bd.beta_plus + 1e-12);
            if (bad) {
                ok = false;
                where = "B(" + fmt(x.a) + ", " + fmt(x.y) + ") = " + fmt(b);
                break;
            }
        }
        add("(ii) beta_minus <= B <= beta_plus beyond a_star, B = 0 below", ok, false,
            ok ? "sampled " + std::to_string(pts.size()) + " points" : where);
    }
    if (bd.a_star <= 0.0)
        rep.warnings.push_back("(ii) a_star = 0: beta(0, .) is not identically zero; the boundary "
                               "eigenfunction closed form is not guaranteed");

    // Assumption (i): flow control
    {
        bool ok = true;
        std::string where;
        for (const auto& x : pts) {
            const double a1 = m.g1(x), a2 = m.g2(x);
            if (!(a1 > 0.0)) { ok = false; where = "g1 <= 0 at (" + fmt(x.a) + ", " + fmt(x.y) + ")"; break; }
            if (a2 > m.g2({0.0, x.y}) + 1e-12 * (1 + std::abs(a2))) {
                ok = false;
                where = "g2(a, y) > g2(0, y) at (" + fmt(x.a) + ", " + fmt(x.y) + ")";
                break;
            }
            if (!m.is_adder()) {
                const double tol = 1e-12;
                const auto J = m.jacobian_g(x);
                const double dmax = std::max({std::abs(J(0, 0)), std::abs(J(0, 1)), std::abs(J(1, 0)), std::abs(J(1, 1))});
                if (a1 < bd.c0 * x.a - tol || a1 > bd.c1 * (1 + x.a) + tol || a2 > bd.c1 * (1 + x.y) + tol ||
                    dmax > bd.c2 * (1 + x.a + x.y) + 1e-6) {
                    ok = false;
                    where = "growth bound violated at (" + fmt(x.a) + ", " + fmt(x.y) + ")";
                    break;
                }
            }
        }
        add("(i) smooth and controlled flow", ok, false,
            ok ? (m.is_adder() ? "g1 > 0 and g2(a,y) <= g2(0,y); growth-constant bounds not applicable to the "
                                 "adder (g1 = lambda y is controlled through a <= y)"
                               : "sampled " + std::to_string(pts.size()) + " points")
               : where);
    }

    // Assumption (iii): kernel mass and support
    {
        bool ok = true;
        bool supp = true;
        std::string where;
        for (const auto& x : pts) {
            const double mass = m.kernel.mass(x);
            if (!(mass > 1.0 && mass <= bd.K_bar + 1e-8)) {
                ok = false;
                where = "int k = " + fmt(mass) + " at (" + fmt(x.a) + ", " + fmt(x.y) + ")";
                break;
            }
            if (m.kernel.support_upper(x) > x.y * (1 + 1e-12)) supp = false;
        }
        add("(iii) 1 < int k <= K_bar", ok, false, ok ? "K_bar = " + fmt(bd.K_bar) : where);
        add("(iii)-(a) fragmentation support in (0, y)", supp, false, supp ? "" : "kernel charges sizes above y");
    }

    if (const auto* F = m.fragmentation()) {
        // (iv): F positive with connected support
        bool connected = true;
        int transitions = 0;
        bool prev = (*F)(0.0) > 0.0;
        for (int i = 1; i <= 1024; ++i) {
            const bool cur = (*F)(i / 1024.0) > 0.0;
            if (cur != prev) ++transitions;
            prev = cur;
        }
        connected = transitions <= 2;
        add("(iv) F positive on a connected support", connected, false,
            "sign changes on a 1025-point grid: " + std::to_string(transitions));
    }

    if (m.is_adder()) {
        add("(A1) 0 < b_lower <= B <= b_upper", bd.beta_minus > 0.0, true,
            "b_lower = " + fmt(bd.beta_minus) + ", b_upper = " + fmt(bd.beta_plus));
        if (const auto* F = m.fragmentation()) {
            const auto& mo = F->moments();
            const bool m1ok = std::abs(mo.m1 - 0.5) <= 1e-8;
            add("(A2) m0 = 1, m1 = 1/2, m2 <= 1/2", m1ok && std::abs(mo.m0 - 1.0) <= 1e-8 && mo.m2 <= 0.5, true,
                "m0 = " + fmt(mo.m0) + ", m1 = " + fmt(mo.m1) + ", m2 = " + fmt(mo.m2));
            if (F->asymmetry() > 1e-8)
                rep.warnings.push_back("(A2) F is not symmetric; k = (2/y) F(z/y) and the simulated split "
                                       "(rho y, (1 - rho) y) describe different offspring laws");
        }
        add("(A3) lambda > d0", m.lambda_growth > m.d0, true,
            "lambda = " + fmt(m.lambda_growth) + ", d0 = " + fmt(m.d0));
    } else {
        add("d0 >= 0", m.d0 >= 0.0, true, "d0 = " + fmt(m.d0));
    }
    return rep;
}

/// Runs assess() and throws InvalidModel naming the first failed structural
/// check. Non-structural failures are returned in the report.
inline ValidationReport validate(const ModelSpec& m, const ValidationOptions& opt = {}) {
    ValidationReport rep = assess(m, opt);
    for (const auto& c : rep.checks)
        if (!c.passed && c.structural) throw InvalidModel(c.name + " violated: " + c.detail);
    return rep;
}

} // namespace malthus
