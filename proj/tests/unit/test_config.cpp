#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <malthus/config.hpp>
#include <malthus/malthus.hpp>

using namespace malthus;
namespace fs = std::filesystem;
using json = config::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("malthus_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + MALTHUS_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string config_file(const std::string& name) { return std::string(MALTHUS_CONFIG_DIR) + "/" + name; }

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

bool has_partial_files(const fs::path& dir) {
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().string().find(".partial") != std::string::npos) return true;
    return false;
}

} // namespace

TEST(Config, ConstantHazardAcceptsEitherKey) {
    const auto a = config::hazard_from(json{{"type", "constant"}, {"b", 2.5}});
    const auto b = config::hazard_from(json{{"type", "constant"}, {"value", 2.5}});
    EXPECT_DOUBLE_EQ(a(1.0), 2.5);
    EXPECT_DOUBLE_EQ(b(1.0), 2.5);
}

TEST(Config, ModelSectionDefaultsToAdder) {
    const auto m = config::model_from(json::object());
    EXPECT_TRUE(m.is_adder());
    EXPECT_DOUBLE_EQ(m.d0, 0.2);
    EXPECT_NEAR(m.fragmentation()->moments().m2, 3.0 / 11.0, 1e-12);
}

TEST(Config, ReadsEveryField) {
    const auto root = config::load(config_file("adder_default.json"));
    const auto m = config::model_from(root);
    EXPECT_DOUBLE_EQ(m.lambda_growth, 1.0);
    const auto g = config::grid_from(root);
    EXPECT_EQ(g.R, (std::vector<double>{4, 8, 16}));
    EXPECT_EQ(g.n, 512u);
    const auto s = config::sim_from(root);
    EXPECT_EQ(s.sim.replicates, 500u);
    EXPECT_EQ(s.sim.record_times.size(), 4u);
    const auto st = config::stationary_from(root);
    EXPECT_EQ(st.x0.size(), 2u);
    EXPECT_DOUBLE_EQ(st.x0[1].y, 2.0);
    const auto d = config::doeblin_from(config::load(config_file("doeblin_three_f.json")));
    EXPECT_EQ(d.fragmentations.size(), 3u);
}

TEST(Config, MinimalAgeReachesTheHazard) {
    const json root = {{"model", {{"bounds", {{"a_star", 0.4}}}}}};
    const auto m = config::model_from(root);
    EXPECT_EQ(m.beta({0.3, 1.0}), 0.0);
    EXPECT_GT(m.beta({0.5, 1.0}), 0.0);
}

TEST(Config, MalformedInputIsAConfigError) {
    EXPECT_THROW(config::parse_text("{\"model\": "), ConfigError);
    EXPECT_THROW(config::parse_text("[1, 2]"), ConfigError);
    EXPECT_THROW(config::model_from(json{{"model", {{"model_type", "sizer"}}}}), ConfigError);
    EXPECT_THROW(config::model_from(json{{"model", {{"d0", "high"}}}}), ConfigError);
    EXPECT_THROW(config::sim_from(json{{"sim", {{"x0", {1.0}}}}}), ConfigError);
    EXPECT_THROW(config::load("/nonexistent/config.json"), ConfigError);
}

TEST(Cli, ValidateExitCodes) {
    const auto out = scratch("validate");
    EXPECT_EQ(run_cli("--config " + config_file("adder_default.json") + " --out " + out.string() + " validate"), 0);
    EXPECT_TRUE(fs::exists(out / "validation.json"));
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    EXPECT_EQ(run_cli("--config " + config_file("invalid_a3.json") + " --out " + out.string() + " validate"), 2);
    const fs::path bad = out / "bad.json";
    std::ofstream(bad) << "{ not json";
    EXPECT_EQ(run_cli("--config " + bad.string() + " --out " + out.string() + " validate"), 1);
    EXPECT_EQ(run_cli("--no-such-flag validate"), 1);
    EXPECT_EQ(run_cli(""), 1);
}

TEST(Cli, DriftReport) {
    const auto out = scratch("drift");
    ASSERT_EQ(run_cli("--config " + config_file("adder_default.json") + " --out " + out.string() + " drift"), 0);
    const auto j = json::parse(slurp(out / "drift.json"));
    EXPECT_DOUBLE_EQ(j.at("c").get<double>(), 1.0);
    EXPECT_NEAR(j.at("d").get<double>(), 3.2, 1e-12);
    EXPECT_TRUE(j.at("pass").get<bool>());
}

TEST(Cli, SimulateAtTimeZeroWritesOneRow) {
    const auto out = scratch("sim0");
    ASSERT_EQ(run_cli("--config " + config_file("simulate_single.json") + " --out " + out.string() + " simulate"), 0);
    std::ifstream in(out / "trajectories.csv");
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "replicate,t,count,sum_h,mean_a,mean_y");
    EXPECT_FALSE(row.empty());
    EXPECT_FALSE(std::getline(in, extra) && !extra.empty());
    EXPECT_FALSE(has_partial_files(out));
}

TEST(Cli, SimulateIsReproducibleForAFixedSeed) {
    const auto dir = scratch("simrep");
    const json cfg = {{"sim", {{"t_end", 2.0}, {"replicates", 20}, {"record_times", {1.0, 2.0}}}}};
    const auto path = write_config(dir, cfg);
    ASSERT_EQ(run_cli("--config " + path.string() + " --seed 42 --out " + (dir / "a").string() + " simulate"), 0);
    ASSERT_EQ(run_cli("--config " + path.string() + " --seed 42 --out " + (dir / "b").string() + " simulate"), 0);
    ASSERT_EQ(run_cli("--config " + path.string() + " --seed 43 --out " + (dir / "c").string() + " simulate"), 0);
    const auto a = slurp(dir / "a" / "trajectories.csv");
    EXPECT_EQ(a, slurp(dir / "b" / "trajectories.csv"));
    EXPECT_NE(a, slurp(dir / "c" / "trajectories.csv"));
    const auto manifest = json::parse(slurp(dir / "a" / "manifest.json"));
    EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 42u);
    EXPECT_EQ(manifest.at("command").get<std::string>(), "simulate");
}

TEST(Cli, PopulationCapIsReported) {
    const auto dir = scratch("cap");
    const json cfg = {{"sim", {{"t_end", 20.0}, {"cap", 100}}}};
    EXPECT_EQ(run_cli("--config " + write_config(dir, cfg).string() + " --out " + dir.string() + " simulate"), 4);
}
