#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "renewal.hpp"
#include "simulate.hpp"
#include "stationary.hpp"

namespace malthus::config {

using json = nlohmann::json;

namespace detail {

template <class T>
T get(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline const json& section(const json& root, const char* name) {
    static const json empty = json::object();
    if (!root.contains(name)) return empty;
    const json& s = root.at(name);
    if (!s.is_object()) throw ConfigError(std::string("section '") + name + "' must be an object");
    return s;
}

inline PhasePoint point(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("phase points are written as [a, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

} // namespace detail

inline json parse_text(const std::string& text) {
    try {
        json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("config root must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
}

inline json load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

/// Constant hazards take their rate from "b" (or "value").
inline Hazard hazard_from(const json& j, double a_star_default = 0.0) {
    const std::string type = detail::get<std::string>(j, "type", "constant");
    const double a_star = detail::get(j, "a_star", a_star_default);
    if (type == "constant") return Hazard::constant(detail::get(j, "b", detail::get(j, "value", 1.0)), a_star);
    if (type == "table")
        return Hazard::table(detail::get<std::vector<double>>(j, "a", {}), detail::get<std::vector<double>>(j, "B", {}), a_star);
    throw ConfigError("unknown hazard type '" + type + "'");
}

inline FragmentationDensity fragmentation_from(const json& j) {
    const std::string type = detail::get<std::string>(j, "type", "uniform");
    if (type == "uniform") return FragmentationDensity::uniform();
    if (type == "beta") return FragmentationDensity::beta(detail::get(j, "alpha", 5.0), detail::get(j, "beta", 5.0));
    if (type == "table")
        return FragmentationDensity::table(detail::get<std::vector<double>>(j, "rho", {}), detail::get<std::vector<double>>(j, "F", {}));
    throw ConfigError("unknown fragmentation type '" + type + "'");
}

inline std::string fragmentation_label(const json& j) {
    const std::string type = detail::get<std::string>(j, "type", "uniform");
    if (type == "beta") {
        std::ostringstream os;
        os << "beta_" << detail::get(j, "alpha", 5.0) << "_" << detail::get(j, "beta", 5.0);
        return os.str();
    }
    return type;
}

/// Model from the "model" section, or from the root when that section is absent.
/// Defaults: adder, lambda_growth 1, d0 0.2, B = 1, F = Beta(5, 5).
inline ModelSpec model_from(const json& root) {
    const json& j = root.contains("model") ? detail::section(root, "model") : root;
    const std::string type = detail::get<std::string>(j, "model_type", "adder");
    const double lam = detail::get(j, "lambda_growth", 1.0);
    const double d0 = detail::get(j, "d0", 0.2);
    const double a_star = j.contains("bounds") ? detail::get(j.at("bounds"), "a_star", 0.0) : 0.0;
    const Hazard B = j.contains("hazard") ? hazard_from(j.at("hazard"), a_star) : Hazard::constant(1.0, a_star);
    const FragmentationDensity F =
        j.contains("fragmentation") ? fragmentation_from(j.at("fragmentation")) : FragmentationDensity::beta(5.0, 5.0);
    ModelSpec m;
    if (type == "adder") {
        m = make_adder(lam, B, F, d0);
    } else if (type == "general") {
        m = make_general(detail::get<std::string>(j, "growth", "exponential"), lam, B, F, d0);
    } else {
        throw ConfigError("unknown model_type '" + type + "'");
    }
    if (j.contains("bounds")) {
        const json& b = j.at("bounds");
        auto& bd = m.bounds;
        bd.c0 = detail::get(b, "c0", bd.c0);
        bd.c1 = detail::get(b, "c1", bd.c1);
        bd.c2 = detail::get(b, "c2", bd.c2);
        bd.beta_minus = detail::get(b, "beta_minus", bd.beta_minus);
        bd.beta_plus = detail::get(b, "beta_plus", bd.beta_plus);
        bd.K_bar = detail::get(b, "K_bar", bd.K_bar);
    }
    return m;
}

struct GridConfig {
    std::vector<double> R{4.0, 8.0, 16.0};
    std::size_t n = 512;
};

inline GridConfig grid_from(const json& root) {
    const json& j = detail::section(root, "grid");
    GridConfig g;
    if (j.contains("R")) {
        if (j.at("R").is_array())
            g.R = detail::get<std::vector<double>>(j, "R", g.R);
        else
            g.R = {detail::get(j, "R", 16.0)};
    }
    g.n = detail::get<std::size_t>(j, "n", g.n);
    return g;
}

struct SimSection {
    SimConfig sim;
    PhasePoint x0{0.0, 1.0};
};

inline SimSection sim_from(const json& root) {
    const json& j = detail::section(root, "sim");
    SimSection s;
    s.sim.seed = detail::get<std::uint64_t>(j, "seed", 1);
    s.sim.t_end = detail::get(j, "t_end", 4.0);
    s.sim.cap = detail::get<std::size_t>(j, "cap", s.sim.cap);
    s.sim.replicates = detail::get<std::size_t>(j, "replicates", 1);
    s.sim.record_times = detail::get<std::vector<double>>(j, "record_times", {});
    s.sim.keep_individuals = detail::get(j, "keep_individuals", false);
    if (j.contains("x0")) s.x0 = detail::point(j.at("x0"));
    return s;
}

inline GridBox gridbox_from(const json& j, GridBox g) {
    g.a_lo = detail::get(j, "a_lo", g.a_lo);
    g.a_hi = detail::get(j, "a_hi", g.a_hi);
    g.y_lo = detail::get(j, "y_lo", g.y_lo);
    g.y_hi = detail::get(j, "y_hi", g.y_hi);
    g.na = detail::get<std::size_t>(j, "na", g.na);
    g.ny = detail::get<std::size_t>(j, "ny", g.ny);
    return g;
}

struct StationarySection {
    EtaStarSettings eta;
    ErgodicitySettings ergodicity;
    std::size_t replicates = 20000;
    std::vector<double> record_times{1.0, 2.0, 3.0};
    std::vector<PhasePoint> x0{{0.0, 1.0}, {0.0, 2.0}};
    std::uint64_t seed = 1;
};

inline StationarySection stationary_from(const json& root) {
    const json& j = detail::section(root, "stationary");
    StationarySection s;
    s.eta.n = detail::get<std::size_t>(j, "n", s.eta.n);
    s.eta.y_max = detail::get(j, "y_max", s.eta.y_max);
    s.eta.tol = detail::get(j, "tol", s.eta.tol);
    s.replicates = detail::get<std::size_t>(j, "replicates", s.replicates);
    s.record_times = detail::get<std::vector<double>>(j, "record_times", s.record_times);
    s.seed = detail::get<std::uint64_t>(j, "seed", detail::get<std::uint64_t>(detail::section(root, "sim"), "seed", 1));
    s.ergodicity.bootstrap = detail::get<std::size_t>(j, "bootstrap", s.ergodicity.bootstrap);
    if (j.contains("grid")) s.ergodicity.grid = gridbox_from(j.at("grid"), s.ergodicity.grid);
    if (j.contains("x0")) {
        s.x0.clear();
        for (const auto& p : j.at("x0")) s.x0.push_back(detail::point(p));
    }
    return s;
}

struct DoeblinSection {
    DoeblinSettings settings;
    std::vector<json> fragmentations;  // empty: the model's own F
};

inline DoeblinSection doeblin_from(const json& root) {
    const json& j = detail::section(root, "doeblin");
    DoeblinSection d;
    auto& s = d.settings;
    if (j.contains("compact")) {
        const json& c = j.at("compact");
        s.a_lo = detail::get(c, "a_lo", s.a_lo);
        s.a_hi = detail::get(c, "a_hi", s.a_hi);
        s.y_lo = detail::get(c, "y_lo", s.y_lo);
        s.y_hi = detail::get(c, "y_hi", s.y_hi);
    }
    if (j.contains("delta")) s.delta = detail::get(j, "delta", 0.0);
    if (j.contains("Delta")) s.Delta = detail::get(j, "Delta", 0.0);
    s.q = detail::get(j, "q", s.q);
    s.j_cap = detail::get<std::size_t>(j, "j_cap", s.j_cap);
    if (j.contains("grid")) s.grid = gridbox_from(j.at("grid"), s.grid);
    if (j.contains("fragmentations"))
        for (const auto& f : j.at("fragmentations")) d.fragmentations.push_back(f);
    return d;
}

inline DriftSettings drift_from(const json& root) {
    const json& j = detail::section(root, "drift");
    DriftSettings s;
    s.a_lo = detail::get(j, "a_lo", s.a_lo);
    s.a_hi = detail::get(j, "a_hi", s.a_hi);
    s.y_lo = detail::get(j, "y_lo", s.y_lo);
    s.y_hi = detail::get(j, "y_hi", s.y_hi);
    s.n = detail::get<std::size_t>(j, "n", s.n);
    if (j.contains("c")) s.c = detail::get(j, "c", 0.0);
    if (j.contains("d")) s.d = detail::get(j, "d", 0.0);
    return s;
}

} // namespace malthus::config
