// malthus: command-line driver for the branching-process toolkit.
//
// Precedence: command-line flags > config file > built-in defaults.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <malthus/config.hpp>
#include <malthus/malthus.hpp>
#include <malthus/serialize.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace malthus;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int { Ok = 0, Config = 1, Model = 2, EigenFail = 3, Sim = 4, Stationary = 5, Doeblin = 6 };

struct Global {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<unsigned> threads;
};

struct Context {
    Global g;
    json cfg;
    fs::path out;
    std::uint64_t seed = 1;
};

void write_json(const fs::path& p, const json& j) {
    io::write_atomic(p, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Context prepare(const Global& g, const std::string& command) {
    Context c;
    c.g = g;
    c.cfg = g.config_path.empty() ? json::object() : config::load(g.config_path);
    const auto& sim = c.cfg.contains("sim") ? c.cfg.at("sim") : json::object();
    c.seed = g.seed.value_or(sim.value("seed", std::uint64_t{1}));
    if (g.threads) set_threads(*g.threads);
    c.out = g.out;
    fs::create_directories(c.out);
    write_json(c.out / "manifest.json", {{"config", g.config_path},
                                          {"seed", c.seed},
                                          {"command", command},
                                          {"output_dir", c.out.string()},
                                          {"version", kVersion},
                                          {"wall_clock", utc_now()}});
    return c;
}

ModelSpec checked_model(const Context& c) {
    ModelSpec m = config::model_from(c.cfg);
    validate(m);
    return m;
}

int cmd_validate(const Context& c) {
    const ModelSpec m = config::model_from(c.cfg);
    const ValidationReport rep = assess(m);
    write_json(c.out / "validation.json", serialize::to_json(rep));
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
    if (const Check* f = rep.first_failure()) {
        std::cerr << "invalid model: " << f->name << " violated: " << f->detail << '\n';
        return Model;
    }
    std::cout << "all checks passed\n";
    return Ok;
}

int cmd_eigen(const Context& c, const std::vector<double>& R_flag, std::optional<std::size_t> n_flag) {
    const ModelSpec m = checked_model(c);
    config::GridConfig grid = config::grid_from(c.cfg);
    if (!R_flag.empty()) grid.R = R_flag;
    if (n_flag) grid.n = *n_flag;
    std::ostringstream summary;
    summary << "R,lambda_R,mu_residual\n";
    const auto grids = SizeGrid::nested(grid.R, static_cast<int>(grid.n));
    for (const SizeGrid& sg : grids) {
        const double R = sg.R;
        const RenewalOperator op(m, sg);
        const EigenResult r = solve_malthus(op);
        std::ostringstream tag;
        tag << R;
        write_json(c.out / ("eigen_R" + tag.str() + ".json"), serialize::to_json(r));
        io::write_atomic(c.out / ("eta_R" + tag.str() + ".csv"), [&](std::ostream& os) {
            os << "y,eta,nu\n";
            for (std::size_t i = 0; i < r.grid.size(); ++i)
                os << io::fmt(r.grid[i]) << ',' << io::fmt(r.eta[i]) << ',' << io::fmt(r.nu[i]) << '\n';
        });
        summary << io::fmt(R) << ',' << io::fmt(r.lambda_R) << ',' << io::fmt(r.residual) << '\n';
        std::cout << "R = " << R << ": lambda_R = " << r.lambda_R << '\n';
    }
    io::write_atomic(c.out / "lambda_R.csv", [&](std::ostream& os) { os << summary.str(); });
    return Ok;
}

int cmd_simulate(const Context& c) {
    const ModelSpec m = checked_model(c);
    config::SimSection s = config::sim_from(c.cfg);
    s.sim.seed = c.seed;
    const auto trajs = simulate_replicates(m, s.x0, s.sim);
    bool capped = false;
    io::write_atomic(c.out / "trajectories.csv", [&](std::ostream& os) {
        os << "replicate,t,count,sum_h,mean_a,mean_y\n";
        for (const auto& tr : trajs) {
            capped = capped || tr.cap_exceeded;
            for (const auto& rec : tr.records) {
                const double n = static_cast<double>(rec.count);
                os << tr.replicate << ',' << io::fmt(rec.t) << ',' << rec.count << ',' << io::fmt(rec.sum_h) << ','
                   << io::fmt(rec.count ? rec.sum_a / n : 0.0) << ',' << io::fmt(rec.count ? rec.sum_h / n : 0.0)
                   << '\n';
            }
        }
    });
    if (s.sim.keep_individuals) {
        io::write_atomic(c.out / "individuals.csv", [&](std::ostream& os) {
            os << "replicate,t,a,y\n";
            for (const auto& tr : trajs)
                for (const auto& rec : tr.records)
                    for (const auto& p : rec.individuals)
                        os << tr.replicate << ',' << io::fmt(rec.t) << ',' << io::fmt(p.a) << ',' << io::fmt(p.y) << '\n';
        });
    }
    if (trajs.size() > 0 && trajs.front().records.size() >= 2 && !capped) {
        try {
            const auto est = estimate_malthus(trajs);
            write_json(c.out / "malthus_estimate.json",
                       {{"lambda_hat", est.lambda_hat}, {"stderr", est.stderr_}, {"replicates", trajs.size()}});
        } catch (const DegenerateData& e) {
            std::cerr << "note: no Malthus estimate: " << e.what() << '\n';
        }
    }
    if (capped) {
        std::cerr << "population cap exceeded; trajectories are partial\n";
        return Sim;
    }
    return Ok;
}

int cmd_stationary(const Context& c) {
    const ModelSpec m = checked_model(c);
    const config::StationarySection s = config::stationary_from(c.cfg);
    const EtaStar eta = solve_eta_star(m, s.eta);
    io::write_atomic(c.out / "eta_star.csv", [&](std::ostream& os) {
        os << "y,eta\n";
        for (std::size_t i = 0; i < eta.nodes.size(); ++i) os << io::fmt(eta.nodes[i]) << ',' << io::fmt(eta.values[i]) << '\n';
    });
    const Density2D pi = cell_average(s.ergodicity.grid, [&](PhasePoint x) { return eta.pi(x); });
    io::write_atomic(c.out / "pi_star.csv", [&](std::ostream& os) { pi.write_csv(os); });
    write_json(c.out / "pi_star.json", {{"grid", serialize::to_json(pi.grid())}, {"mass", pi.mass()}});

    const double Lambda = m.lambda_growth - m.d0;
    json summary = {{"eta_residual", eta.residual}, {"eta_sweeps", eta.sweeps}, {"pi_mass", eta.pi_mass()},
                    {"grid", serialize::to_json(pi.grid())}, {"Lambda", Lambda}};
    json runs = json::array();
    std::vector<Density2D> finals;
    for (std::size_t k = 0; k < s.x0.size(); ++k) {
        SimConfig sc;
        sc.seed = mix_keys(c.g.seed.value_or(s.seed), k);
        sc.t_end = s.record_times.empty() ? 0.0 : s.record_times.back();
        sc.record_times = s.record_times;
        sc.replicates = s.replicates;
        sc.keep_individuals = true;
        const PhasePoint x0 = s.x0[k];
        const auto rep = ergodicity_report(simulate_replicates(m, x0, sc), eta, x0.y, Lambda, s.ergodicity);
        io::write_atomic(c.out / ("decay_" + std::to_string(k) + ".csv"), [&](std::ostream& os) {
            os << "t,distance,stderr\n";
            for (const auto& r : rep.rows) os << io::fmt(r.t) << ',' << io::fmt(r.distance) << ',' << io::fmt(r.stderr_) << '\n';
        });
        runs.push_back({{"x0", {x0.a, x0.y}}, {"omega_hat", rep.omega_hat}});
        finals.push_back(rep.profiles.back());
    }
    summary["runs"] = runs;
    if (finals.size() >= 2) summary["final_profile_distance"] = weighted_tv(finals[0], finals[1]);
    write_json(c.out / "stationary.json", summary);
    return Ok;
}

int cmd_doeblin(const Context& c) {
    const ModelSpec base = checked_model(c);
    if (!base.is_adder() || !base.hazard) throw InvalidModel("the Doeblin minorant is implemented for the adder model");
    const config::DoeblinSection d = config::doeblin_from(c.cfg);
    std::vector<std::pair<std::string, ModelSpec>> models;
    if (d.fragmentations.empty()) {
        models.emplace_back("model", base);
    } else {
        for (const auto& f : d.fragmentations) {
            ModelSpec m = make_adder(base.lambda_growth, *base.hazard, config::fragmentation_from(f), base.d0);
            m.bounds = base.bounds;
            validate(m);
            models.emplace_back(config::fragmentation_label(f), m);
        }
    }
    json summary = json::array();
    for (const auto& [label, m] : models) {
        const DoeblinResult r = doeblin_minorant(m, d.settings);
        for (const auto& w : r.warnings) std::cerr << "warning (" << label << "): " << w << '\n';
        io::write_atomic(c.out / ("nu_" + label + ".csv"), [&](std::ostream& os) {
            os << "a,y,value,log_value\n";
            for (std::size_t i = 0; i < r.nu.na(); ++i)
                for (std::size_t j = 0; j < r.nu.ny(); ++j)
                    os << io::fmt(r.nu.a_center(i)) << ',' << io::fmt(r.nu.y_center(j)) << ',' << io::fmt(r.nu(i, j))
                       << ',' << io::fmt(r.log_nu[i * r.nu.ny() + j]) << '\n';
        });
        json j = serialize::to_json(r);
        j["label"] = label;
        write_json(c.out / ("nu_" + label + ".json"), j);
        summary.push_back({{"label", label}, {"log_mass", serialize::number(r.log_mass)}});
    }
    write_json(c.out / "doeblin.json", summary);
    return Ok;
}

int cmd_drift(const Context& c) {
    const ModelSpec m = checked_model(c);
    const DriftReport r = check_drift(m, config::drift_from(c.cfg));
    write_json(c.out / "drift.json", serialize::to_json(r));
    std::cout << "drift " << (r.pass ? "holds" : "violated") << ": c = " << r.c << ", d = " << r.d
              << ", worst margin = " << r.worst_margin << '\n';
    return Ok;
}

template <class Fn>
int guarded(Fn&& fn, int domain_code) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return Config;
    } catch (const InvalidModel& e) {
        std::cerr << "invalid model: " << e.what() << '\n';
        return Model;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return Config;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return domain_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return domain_code;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Age-and-size structured branching process toolkit"};
    app.require_subcommand(1);
    Global g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--seed", g.seed, "random seed (overrides sim.seed)");
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads (default: MALTHUS_THREADS or hardware)");
    app.set_version_flag("--version", kVersion);

    auto* validate_cmd = app.add_subcommand("validate", "check the model assumptions");
    auto* eigen_cmd = app.add_subcommand("eigen", "solve the truncated eigenproblem for each R");
    std::vector<double> R_flag;
    std::optional<std::size_t> n_flag;
    eigen_cmd->add_option("--R", R_flag, "truncation sizes (overrides grid.R)");
    eigen_cmd->add_option("--grid-n", n_flag, "grid nodes (overrides grid.n)");
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo simulation of the population");
    auto* stat_cmd = app.add_subcommand("stationary", "stationary profile and convergence table");
    auto* doeb_cmd = app.add_subcommand("doeblin", "Doeblin minorant over a compact");
    auto* drift_cmd = app.add_subcommand("drift", "Foster-Lyapunov drift check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Ok : Config;
    }

    auto run = [&](const char* name, int code, auto&& body) {
        return guarded([&] { return body(prepare(g, name)); }, code);
    };
    if (*validate_cmd) return run("validate", Model, [](const Context& c) { return cmd_validate(c); });
    if (*eigen_cmd) return run("eigen", EigenFail, [&](const Context& c) { return cmd_eigen(c, R_flag, n_flag); });
    if (*sim_cmd) return run("simulate", Sim, [](const Context& c) { return cmd_simulate(c); });
    if (*stat_cmd) return run("stationary", Stationary, [](const Context& c) { return cmd_stationary(c); });
    if (*doeb_cmd) return run("doeblin", Doeblin, [](const Context& c) { return cmd_doeblin(c); });
    if (*drift_cmd) return run("drift", Stationary, [](const Context& c) { return cmd_drift(c); });
    return Config;
}
