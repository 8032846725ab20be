#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "eigen.hpp"
#include "model.hpp"
#include "simulate.hpp"
#include "stationary.hpp"

namespace malthus::serialize {

using json = nlohmann::json;

// JSON has no infinities; they are written as null.
inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const ValidationReport& r) {
    json checks = json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name}, {"passed", c.passed}, {"structural", c.structural}, {"detail", c.detail}});
    return {{"all_passed", r.all_passed()}, {"checks", checks}, {"warnings", r.warnings}};
}

inline json to_json(const EigenResult& r) {
    return {{"R", r.R},
            {"lambda_R", r.lambda_R},
            {"lambda_malthus", r.lambda_malthus},
            {"d0", r.d0},
            {"mu", r.mu},
            {"residual", r.residual},
            {"dual_residual", r.dual_residual},
            {"nu_eta", r.nu_eta},
            {"max_correction", r.max_correction},
            {"iterations", r.iterations},
            {"evaluations", r.evaluations},
            {"grid", r.grid},
            {"eta", r.eta},
            {"nu", r.nu}};
}

inline json to_json(const DriftReport& r) {
    return {{"c", r.c},
            {"d", r.d},
            {"pass", r.pass},
            {"worst_margin", r.worst_margin},
            {"worst_point", {r.worst_point.a, r.worst_point.y}},
            {"violations", r.violations},
            {"points", r.points}};
}

inline json to_json(const GridBox& g) {
    return {{"a_lo", g.a_lo}, {"a_hi", g.a_hi}, {"y_lo", g.y_lo}, {"y_hi", g.y_hi}, {"na", g.na}, {"ny", g.ny}};
}

inline json to_json(const DoeblinConstants& k) {
    json e0 = json::array();
    for (double v : k.E0) e0.push_back(number(v));
    return {{"A0", k.A0},         {"B0", k.B0},           {"C0", k.C0},
            {"H0", k.H0},         {"c1", k.c1},           {"E0", e0},
            {"Delta", k.Delta},   {"delta", k.delta},     {"j_star", k.j_star},
            {"mu_weights", k.mu_weights}, {"beta_tilde", k.beta_tilde},
            {"log_skeleton", k.log_skeleton}, {"z_lo", k.z_lo}, {"z_hi", k.z_hi},
            {"lambda_malthus", k.lambda_malthus}};
}

inline json to_json(const DoeblinResult& r) {
    return {{"constants", to_json(r.constants)},
            {"grid", to_json(r.nu.grid())},
            {"log_mass", number(r.log_mass)},
            {"empty", r.empty},
            {"warnings", r.warnings}};
}

inline json to_json(const ConsistencyReport& r) {
    return {{"simulated", r.simulated}, {"stderr", r.stderr_}, {"generator", r.generator},
            {"z", number(r.z)},         {"replicates", r.replicates}, {"dt", r.dt}};
}

} // namespace malthus::serialize
