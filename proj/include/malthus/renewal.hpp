#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "flow.hpp"
#include "io.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

namespace malthus {

struct RenewalSettings {
    double survival_eps = 1e-12;  // survival level at which the age integrals are cut
    double tail_tol = 1e-9;       // certified tail bound for kernel_K
    double panel_width = 1.0 / 16.0;
    int order = 8;                // Gauss-Legendre points per panel, pointwise queries
    double grid_tail_width = 0.125;
    int grid_order = 4;           // points per panel in matrix assembly
};

/// Size grid on (0, R]: nodes i R / N for i = 1..N, with y = 1 inserted when it
/// is not a node. Weights are the trapezoid weights on [0, R] with the value at
/// 0 extrapolated linearly from the first two nodes, so they sum to R and
/// integrate affine functions exactly.
struct SizeGrid {
    double R = 8.0;
    std::vector<double> nodes;
    std::vector<double> weights;

    static SizeGrid uniform(double R, int n) {
        if (!(R > 0.0) || n < 2) throw InvalidModel("size grid needs R > 0 and at least 2 nodes");
        SizeGrid g;
        g.R = R;
        const double h = R / n;
        for (int i = 1; i <= n; ++i) g.nodes.push_back(i == n ? R : i * h);
        if (R > 1.0) {
            auto it = std::lower_bound(g.nodes.begin(), g.nodes.end(), 1.0);
            if (std::abs(*it - 1.0) <= 1e-12) *it = 1.0;
            else g.nodes.insert(it, 1.0);
        }
        g.build_weights();
        return g;
    }

    static SizeGrid from_nodes(std::vector<double> nodes) {
        SizeGrid g;
        g.nodes = std::move(nodes);
        if (g.nodes.size() < 2) throw InvalidModel("size grid needs at least 2 nodes");
        for (std::size_t i = 1; i < g.nodes.size(); ++i)
            if (!(g.nodes[i] > g.nodes[i - 1])) throw InvalidModel("size grid nodes must increase");
        if (!(g.nodes.front() > 0.0)) throw InvalidModel("size grid nodes must be positive");
        g.R = g.nodes.back();
        g.build_weights();
        return g;
    }

    std::size_t size() const { return nodes.size(); }

    /// Uniform grids for several radii sharing the spacing max(R) / n, so each
    /// grid is a prefix of the next; n is the node count of the largest.
    static std::vector<SizeGrid> nested(std::vector<double> radii, int n) {
        if (radii.empty()) return {};
        const double h = *std::max_element(radii.begin(), radii.end()) / n;
        std::vector<SizeGrid> out;
        for (double R : radii) out.push_back(uniform(R, std::max(2, static_cast<int>(std::lround(R / h)))));
        return out;
    }

    /// Index of the node equal to y (within 1e-12), or size() when absent.
    std::size_t index_of(double y) const {
        auto it = std::lower_bound(nodes.begin(), nodes.end(), y - 1e-12);
        if (it != nodes.end() && std::abs(*it - y) <= 1e-12) return static_cast<std::size_t>(it - nodes.begin());
        return nodes.size();
    }

    /// Linear interpolation of grid values f, with f(0) = 0 below the first node
    /// scaled proportionally and constant beyond R.
    double interpolate(std::span<const double> f, double y) const {
        if (y <= nodes.front()) return f[0] * std::max(0.0, y) / nodes.front();
        if (y >= nodes.back()) return f.back();
        auto it = std::upper_bound(nodes.begin(), nodes.end(), y);
        const std::size_t j = static_cast<std::size_t>(it - nodes.begin());
        const double w = (y - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
        return (1.0 - w) * f[j - 1] + w * f[j];
    }

private:
    void build_weights() {
        const std::size_t n = nodes.size();
        weights.assign(n, 0.0);
        const double w0 = 0.5 * nodes[0];
        weights[0] += 0.5 * nodes[0];
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double h = nodes[i + 1] - nodes[i];
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        const double r = nodes[0] / (nodes[1] - nodes[0]);
        if (weights[1] - w0 * r > 0.0) {
            weights[0] += w0 * (1.0 + r);
            weights[1] -= w0 * r;
        } else {
            weights[0] += w0;
        }
    }
};

/// Quadrature node along an orbit: age, size, elapsed time and the weight
/// B(age) exp(-(H(age) - H(a0))) d age, so that sum w G = int G psi dt.
struct OrbitNode {
    double age;
    double size;
    double time;
    double w;
};

/// First-jump structure of the division dynamics started at x: survival,
/// jump-time density, joint law of (T, Z), offspring constant and the
/// lambda-weighted renewal kernels. Death is not part of these objects; a
/// constant death rate shifts the spectrum and is handled by the caller.
class FirstJumpLaw {
public:
    explicit FirstJumpLaw(const ModelSpec& model, FlowSettings flow = {}, RenewalSettings settings = {})
        : flow_(model, flow), s_(settings) {
        if (!model.hazard) throw InvalidModel("renewal quantities require an age hazard B(a)");
        frag_sup_ = 0.0;
        if (const auto* F = model.fragmentation())
            for (int i = 0; i <= 1024; ++i) frag_sup_ = std::max(frag_sup_, (*F)(i / 1024.0));
    }

    const ModelSpec& model() const { return flow_.model(); }
    const FlowEngine& flow() const { return flow_; }
    const RenewalSettings& settings() const { return s_; }
    const Hazard& hazard() const { return *model().hazard; }
    bool closed_form() const { return flow_.closed_form(); }

    /// Age beyond which the survival from age a0 is below survival_eps.
    double age_cutoff(double a0) const {
        return hazard().inverse_cumulative(hazard().cumulative(a0) - std::log(s_.survival_eps));
    }

    /// P_x(T > t) = exp(-int_0^t beta(phi^s x) ds), through the age variable.
    double survival(PhasePoint x, double t) const {
        if (t <= 0.0) return 1.0;
        const double at = flow_.advance(x, t).a;
        return std::exp(-(hazard().cumulative(at) - hazard().cumulative(x.a)));
    }

    /// psi(t | x) = beta(phi^t x) P_x(T > t).
    double jump_time_density(PhasePoint x, double t) const {
        if (t < 0.0) return 0.0;
        const PhasePoint p = flow_.advance(x, t);
        return model().beta(p) * std::exp(-(hazard().cumulative(p.a) - hazard().cumulative(x.a)));
    }

    /// Quadrature nodes along the orbit of x on [x.a, cutoff], panels split at
    /// the hazard knots, a_star and the ages where the size crosses `size_breaks`.
    std::vector<OrbitNode> orbit(PhasePoint x, std::span<const double> size_breaks = {}) const {
        const double lo = x.a;
        const double hi = age_cutoff(x.a);
        std::vector<double> br{lo, hi};
        const double ast = hazard().a_star();
        if (ast > lo && ast < hi) br.push_back(ast);
        for (double k : hazard().table_a())
            if (k > lo && k < hi) br.push_back(k);
        for (double z : size_breaks) {
            if (!(z > x.y)) continue;
            double a;
            try {
                a = flow_.age_at_size(x, z);
            } catch (const Error&) {
                continue;
            }
            if (a > lo && a < hi) br.push_back(a);
        }
        std::sort(br.begin(), br.end());
        br.erase(std::unique(br.begin(), br.end()), br.end());

        const auto& rule = quad::gauss_legendre(s_.order);
        std::vector<OrbitNode> out;
        const double H0 = hazard().cumulative(x.a);
        for (std::size_t k = 0; k + 1 < br.size(); ++k) {
            const double len = br[k + 1] - br[k];
            const int panels = std::max(1, static_cast<int>(std::ceil(len / s_.panel_width - 1e-9)));
            const double ph = len / panels;
            for (int p = 0; p < panels; ++p) {
                const double mid = br[k] + (p + 0.5) * ph;
                for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
                    const double a = mid + 0.5 * ph * rule.nodes[i];
                    const double w = 0.5 * ph * rule.weights[i] * hazard()(a) * std::exp(-(hazard().cumulative(a) - H0));
                    out.push_back({a, 0.0, 0.0, w});
                }
            }
        }
        fill_orbit(x, out);
        return out;
    }

    /// C_x = int ||k(phi^t x, .)||_1 psi(t | x) dt.
    double offspring_constant(PhasePoint x) const {
        double s = 0.0;
        for (const auto& n : orbit(x)) s += n.w * model().kernel.mass({n.age, n.size});
        return s;
    }

    /// p_x(t, z) = k(phi^t x, z) psi(t | x) / C_x.
    double first_jump_density(PhasePoint x, double t, double z) const {
        if (t < 0.0 || z < 0.0) return 0.0;
        const PhasePoint p = flow_.advance(x, t);
        const double kz = model().kernel(p, z);
        if (kz == 0.0) return 0.0;
        return kz * jump_time_density(x, t) / offspring_constant(x);
    }

    /// K_lambda(x, z) = int k(phi^t x, z) psi(t | x) e^{-lambda t} dt.
    double kernel_K(PhasePoint x, double z, double lambda) const {
        const double zs[1] = {z};
        const auto nodes = orbit(x, zs);
        check_tail(x, nodes);
        double s = 0.0;
        for (const auto& n : nodes) s += n.w * std::exp(-lambda * n.time) * model().kernel({n.age, n.size}, z);
        return s;
    }

    /// Truncated kernel K^R_lambda(x, z) for z in [0, R], including the uniform
    /// redistribution (1 / R) int_R^inf k of the mass above R.
    double kernel_K_truncated(PhasePoint x, double z, double lambda, double R) const {
        const double zs[2] = {z, R};
        const auto nodes = orbit(x, zs);
        check_tail(x, nodes);
        double s = 0.0;
        for (const auto& n : nodes) {
            const PhasePoint p{n.age, n.size};
            s += n.w * std::exp(-lambda * n.time) * (model().kernel(p, z) + model().kernel.mass_above(p, R) / R);
        }
        return s;
    }

    /// Time to flow from size y to size z along the boundary-started orbit
    /// weighting of Eq. (34): int_y^z dz' / g2(0, z').
    double boundary_time(double y, double z) const {
        if (closed_form()) return std::log(z / y) / model().lambda_growth;
        const ModelSpec& m = model();
        return quad::integrate([&](double v) { return 1.0 / m.g2({0.0, v}); }, y, z, 32, 8);
    }

private:
    void fill_orbit(PhasePoint x, std::vector<OrbitNode>& nodes) const {
        if (closed_form()) {
            const double lam = model().lambda_growth;
            for (auto& n : nodes) {
                n.size = x.y + (n.age - x.a);
                n.time = std::log(n.size / x.y) / lam;
            }
            return;
        }
        // integrate dy/da = g2/g1, dt/da = 1/g1 along sorted ages
        const ModelSpec& m = model();
        const auto rhs = [&m](double a, const std::array<double, 2>& s) {
            const PhasePoint p{a, s[0]};
            const double v1 = m.g1(p);
            return std::array<double, 2>{m.g2(p) / v1, 1.0 / v1};
        };
        std::array<double, 2> st{x.y, 0.0};
        double a = x.a;
        for (auto& n : nodes) {
            st = ode::integrate<2>(rhs, st, a, n.age, flow_.settings().tol);
            a = n.age;
            n.size = st[0];
            n.time = st[1];
        }
    }

    void check_tail(PhasePoint x, const std::vector<OrbitNode>& nodes) const {
        if (nodes.empty() || !model().fragmentation()) return;
        const double y_end = nodes.back().size;
        const double tail = s_.survival_eps * model().kernel.multiplicity() * frag_sup_ / std::max(y_end, 1e-300);
        if (tail > s_.tail_tol)
            throw TailBoundExceeded("kernel tail bound " + std::to_string(tail) + " exceeds tolerance from (" +
                                    std::to_string(x.a) + ", " + std::to_string(x.y) + ")");
    }

    FlowEngine flow_;
    RenewalSettings s_;
    double frag_sup_ = 0.0;
};

/// K^R_lambda(0, y_i, z_j) on a size grid, with the correction vector
/// c_i = (1 / R) int int_R^inf k(phi^t(0, y_i), .) psi e^{-lambda t} dt already
/// added to every entry of row i.
struct KernelMatrix {
    double lambda = 0.0;
    SizeGrid grid;
    Eigen::MatrixXd M;
    std::vector<double> correction;

    std::size_t size() const { return grid.size(); }
    double operator()(std::size_t i, std::size_t j) const {
        return M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    /// G f (y_i) = sum_j w_j M_ij f_j.
    std::vector<double> apply(std::span<const double> f) const {
        const auto n = static_cast<Eigen::Index>(size());
        Eigen::VectorXd wf(n);
        for (Eigen::Index j = 0; j < n; ++j) wf[j] = grid.weights[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
        const Eigen::VectorXd r = M * wf;
        return {r.data(), r.data() + n};
    }

    /// Adjoint on grid measures: (J nu)_j = w_j sum_i nu_i M_ij, so <nu, G f> = <J nu, f>.
    std::vector<double> apply_adjoint(std::span<const double> nu) const {
        const auto n = static_cast<Eigen::Index>(size());
        const Eigen::Map<const Eigen::VectorXd> v(nu.data(), n);
        const Eigen::VectorXd r = M.transpose() * v;
        std::vector<double> out(static_cast<std::size_t>(n));
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = grid.weights[j] * r[static_cast<Eigen::Index>(j)];
        return out;
    }

    double max_correction() const {
        return correction.empty() ? 0.0 : *std::max_element(correction.begin(), correction.end());
    }

    /// CSV with columns row, col, value.
    void write_csv(const std::string& path) const {
        io::write_atomic(path, [&](std::ostream& os) {
            os << "row,col,value\n";
            for (std::size_t i = 0; i < size(); ++i)
                for (std::size_t j = 0; j < size(); ++j) os << i << ',' << j << ',' << io::fmt((*this)(i, j)) << '\n';
        });
    }
};

/// Truncated operator G^R_lambda on a size grid. Assembled matrices are cached
/// per lambda; assembly runs in parallel over rows.
class RenewalOperator {
public:
    RenewalOperator(const ModelSpec& model, SizeGrid grid, FlowSettings flow = {}, RenewalSettings settings = {})
        : law_(model_without_death(model), flow, settings), grid_(std::move(grid)), d0_(model.d0) {
        if (law_.closed_form() && law_.model().fragmentation()) build_adder_quadrature();
    }

    const FirstJumpLaw& law() const { return law_; }
    const SizeGrid& grid() const { return grid_; }
    double R() const { return grid_.R; }
    /// Death rate of the model the operator was built from (the kernel itself is death-free).
    double death_rate() const { return d0_; }

    /// Row K^R_lambda(x, z_j), j = 0..N-1, correction included. Uses the same
    /// quadrature as the assembled matrix, so rows at grid nodes agree exactly.
    std::vector<double> kernel_row(PhasePoint x, double lambda, double* correction = nullptr) const {
        const std::size_t n = grid_.size();
        std::vector<double> row(n, 0.0), k(n, 0.0);
        double corr = 0.0;
        const ModelSpec& m = law_.model();
        const double R = grid_.R;
        if (fast_) {
            const double lam_g = m.lambda_growth;
            const double H0 = law_.hazard().cumulative(x.a);
            const auto nodes = size_nodes_from(x.y, x.y + law_.age_cutoff(x.a) - x.a);
            for (const auto& [u, gw] : nodes) {
                const double a = x.a + (u - x.y);
                const double w = gw * law_.hazard()(a) * std::exp(-(law_.hazard().cumulative(a) - H0)) *
                                 std::pow(x.y / u, lambda / lam_g);
                if (w == 0.0) continue;
                const PhasePoint p{a, u};
                const std::size_t cnt = offspring_row(p, k);
                for (std::size_t j = 0; j < cnt; ++j) row[j] += w * k[j];
                corr += w * m.kernel.mass_above(p, R) / R;
            }
        } else {
            // size breaks are only cheap to locate on closed-form orbits
            const auto nodes = law_.closed_form() ? law_.orbit(x, grid_.nodes) : law_.orbit(x);
            for (const auto& nd : nodes) {
                const double w = nd.w * std::exp(-lambda * nd.time);
                if (w == 0.0) continue;
                const PhasePoint p{nd.age, nd.size};
                const std::size_t cnt = offspring_row(p, k);
                for (std::size_t j = 0; j < cnt; ++j) row[j] += w * k[j];
                corr += w * m.kernel.mass_above(p, R) / R;
            }
        }
        for (double& v : row) v += corr;
        if (correction) *correction = corr;
        return row;
    }

    std::shared_ptr<const KernelMatrix> matrix(double lambda) const {
        {
            std::lock_guard lock(mtx_);
            if (auto it = cache_.find(lambda); it != cache_.end()) return it->second;
        }
        auto km = std::make_shared<KernelMatrix>(assemble(lambda));
        std::lock_guard lock(mtx_);
        if (cache_.size() > 16) cache_.clear();
        cache_.emplace(lambda, km);
        return km;
    }

    /// G^R_lambda f on the grid.
    std::vector<double> truncated_apply(std::span<const double> f, double lambda) const {
        return matrix(lambda)->apply(f);
    }

    void clear_cache() const {
        std::lock_guard lock(mtx_);
        cache_.clear();
    }

private:
    static ModelSpec model_without_death(ModelSpec m) {
        m.d0 = 0.0;
        return m;
    }

    // Size-variable panels for the adder: breaks at every grid node and, beyond
    // R, every grid_tail_width up to R plus the survival cutoff from age 0.
    void build_adder_quadrature() {
        fast_ = true;
        const auto& s = law_.settings();
        breaks_ = grid_.nodes;
        const double u_end = grid_.R + law_.age_cutoff(0.0);
        for (double u = grid_.R + s.grid_tail_width; u < u_end + s.grid_tail_width; u += s.grid_tail_width)
            breaks_.push_back(u);
        const auto& rule = quad::gauss_legendre(s.grid_order);
        panel_start_.clear();
        for (std::size_t k = 0; k + 1 < breaks_.size(); ++k) {
            panel_start_.push_back(u_.size());
            const double mid = 0.5 * (breaks_[k] + breaks_[k + 1]);
            const double half = 0.5 * (breaks_[k + 1] - breaks_[k]);
            for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
                u_.push_back(mid + half * rule.nodes[i]);
                gw_.push_back(half * rule.weights[i]);
            }
        }
        panel_start_.push_back(u_.size());

        const ModelSpec& m = law_.model();
        const auto Q = static_cast<Eigen::Index>(u_.size());
        const auto N = static_cast<Eigen::Index>(grid_.size());
        phi_ = Eigen::MatrixXd::Zero(Q, N + 1);
        std::vector<double> k(grid_.size());
        for (Eigen::Index q = 0; q < Q; ++q) {
            const double u = u_[static_cast<std::size_t>(q)];
            const PhasePoint p{0.0, u};
            const std::size_t cnt = offspring_row(p, k);
            for (std::size_t j = 0; j < cnt; ++j) phi_(q, static_cast<Eigen::Index>(j)) = k[j];
            phi_(q, N) = m.kernel.mass_above(p, grid_.R) / grid_.R;
        }
    }

    // k(p, z_j) at the nodes z_j <= y, reweighted so that the trapezoid rule
    // reproduces the exact offspring mass on [0, R] and, for fragmentation
    // kernels with y <= R, the first moment m * m1 * y. The factor is linear in z;
    // when it would turn a positive entry negative the mass is matched alone. Returns the number of nodes filled.
    std::size_t offspring_row(PhasePoint p, std::vector<double>& out) const {
        const ModelSpec& m = law_.model();
        std::size_t cnt = 0;
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (; cnt < grid_.size() && grid_.nodes[cnt] <= p.y; ++cnt) {
            const double z = grid_.nodes[cnt];
            out[cnt] = m.kernel(p, z);
            const double wk = grid_.weights[cnt] * out[cnt];
            s0 += wk;
            s1 += wk * z;
            s2 += wk * z * z;
        }
        if (!(s0 > 0.0)) return cnt;
        const double e0 = m.kernel.mass(p) - m.kernel.mass_above(p, grid_.R);
        if (m.fragmentation() && p.y <= grid_.R && cnt >= 3) {
            const double e1 = m.kernel.multiplicity() * m.fragmentation()->moments().m1 * p.y;
            const double det = s0 * s2 - s1 * s1;
            const double al = (e0 * s2 - e1 * s1) / det, be = (s0 * e1 - s1 * e0) / det;
            bool ok = det > 0.0;
            for (std::size_t j = 0; ok && j < cnt; ++j) ok = out[j] == 0.0 || al + be * grid_.nodes[j] >= 0.0;
            if (ok) {
                for (std::size_t j = 0; j < cnt; ++j) out[j] *= al + be * grid_.nodes[j];
                return cnt;
            }
        }
        for (std::size_t j = 0; j < cnt; ++j) out[j] *= e0 / s0;
        return cnt;
    }

    // (u, weight) pairs covering [y0, u_stop]; global panels are reused when y0 is a break.
    std::vector<std::pair<double, double>> size_nodes_from(double y0, double u_stop) const {
        std::vector<std::pair<double, double>> out;
        const auto& rule = quad::gauss_legendre(law_.settings().grid_order);
        auto emit = [&](double lo, double hi) {
            const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
            for (std::size_t i = 0; i < rule.nodes.size(); ++i)
                out.emplace_back(mid + half * rule.nodes[i], half * rule.weights[i]);
        };
        auto emit_range = [&](double lo, double hi) {
            const double w = law_.settings().grid_tail_width;
            const int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / w - 1e-9)));
            for (int p = 0; p < panels; ++p) emit(lo + p * (hi - lo) / panels, lo + (p + 1) * (hi - lo) / panels);
        };
        std::size_t k;
        if (y0 < breaks_.front()) {
            emit_range(y0, breaks_.front());
            k = 0;
        } else {
            auto it = std::upper_bound(breaks_.begin(), breaks_.end(), y0);
            k = static_cast<std::size_t>(it - breaks_.begin());
            if (k > 0 && breaks_[k - 1] == y0) {
                k -= 1;
            } else if (k < breaks_.size()) {
                emit(y0, breaks_[k]);
            }
        }
        for (std::size_t b = k; b + 1 < breaks_.size(); ++b)
            for (std::size_t q = panel_start_[b]; q < panel_start_[b + 1]; ++q) out.emplace_back(u_[q], gw_[q]);
        const double last = std::max(breaks_.back(), y0);
        if (u_stop > last) emit_range(last, u_stop);
        return out;
    }

    KernelMatrix assemble(double lambda) const {
        KernelMatrix km;
        km.lambda = lambda;
        km.grid = grid_;
        const std::size_t n = grid_.size();
        km.M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        km.correction.assign(n, 0.0);
        if (fast_) {
            const auto Q = static_cast<Eigen::Index>(u_.size());
            const auto N = static_cast<Eigen::Index>(n);
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, Q);
            const double s = lambda / law_.model().lambda_growth;
            const Hazard& B = law_.hazard();
            parallel_for(n, [&](std::size_t i) {
                const double y = grid_.nodes[i];
                const std::size_t k = static_cast<std::size_t>(
                    std::lower_bound(breaks_.begin(), breaks_.end(), y) - breaks_.begin());
                for (std::size_t q = panel_start_[k]; q < u_.size(); ++q) {
                    const double u = u_[q];
                    const double a = u - y;
                    A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) =
                        gw_[q] * B(a) * std::exp(-B.cumulative(a)) * std::pow(y / u, s);
                }
            });
            (void)Q;
            const Eigen::MatrixXd P = A * phi_;
            for (Eigen::Index i = 0; i < N; ++i) {
                const double c = P(i, N);
                km.correction[static_cast<std::size_t>(i)] = c;
                for (Eigen::Index j = 0; j < N; ++j) km.M(i, j) = P(i, j) + c;
            }
        } else {
            parallel_for(n, [&](std::size_t i) {
                double c = 0.0;
                const auto row = kernel_row({0.0, grid_.nodes[i]}, lambda, &c);
                for (std::size_t j = 0; j < n; ++j)
                    km.M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
                km.correction[i] = c;
            });
        }
        return km;
    }

    FirstJumpLaw law_;
    SizeGrid grid_;
    double d0_ = 0.0;
    bool fast_ = false;
    std::vector<double> breaks_, u_, gw_;
    std::vector<std::size_t> panel_start_;
    Eigen::MatrixXd phi_;
    mutable std::mutex mtx_;
    mutable std::map<double, std::shared_ptr<const KernelMatrix>> cache_;
};

} // namespace malthus
