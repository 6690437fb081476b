#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "ekisub/cli_harness.hpp"
#include "ekisub/errors.hpp"

using namespace ekisub;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ekisub_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(EKISUB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small and fast: coarse rod, short flow.
RunConfig quick_config(const fs::path& out) {
    RunConfig c = RunConfig::defaults();
    c.rod.n_elements = 6;
    c.rod.t_end = 0.3;
    c.camera.width = 96;
    c.camera.height = 72;
    c.camera.scale = 150.0;
    c.camera.origin_x = 8.0;
    c.camera.origin_y = 36.0;
    c.camera.stroke_radius = 3.0;
    c.flow.t_end = 0.2;
    c.flow.first_sample = 1e-2;
    c.schedule.t_cutoff = 0.1;
    c.schedule.n_post_switches = 5;
    c.schedule.horizon = 0.2;
    c.out = out.string();
    return c;
}

void write_config(const fs::path& p, const RunConfig& c) { std::ofstream(p) << config_to_json_text(c); }

}  // namespace

TEST_CASE("default configuration") {
    const RunConfig c = RunConfig::defaults();
    CHECK(c.ensemble.size == 3);
    CHECK(c.n_sub == 5);
    CHECK(c.partition == PartitionScheme::horizontal_bands);
    CHECK(c.schedule.a == 10.0);
    CHECK(c.schedule.b == 10.0);
    CHECK(c.camera.width == 256);
    CHECK(c.camera.height == 192);
    CHECK(c.sigma == 128);
    CHECK(c.metric == Metric::euclidean);
    CHECK_NOTHROW(c.validate(true));
}

TEST_CASE("config round trip and strict keys") {
    RunConfig c = RunConfig::defaults();
    c.seed = 77;
    c.sigma = 90;
    c.metric = Metric::manhattan;
    c.flow.rho_vi = 0.25;
    c.ensemble.seed = 5;
    c.schedule.t_cutoff = std::numeric_limits<double>::infinity();
    c.diagnose.runs = {"a", "b"};
    const std::string text = config_to_json_text(c);
    const RunConfig back = config_from_json_text(text);
    CHECK(config_to_json_text(back) == text);
    CHECK(back.seed == 77);
    CHECK(back.metric == Metric::manhattan);
    CHECK(std::isinf(back.schedule.t_cutoff));
    CHECK(back.ensemble.seed.value() == 5);

    CHECK(config_from_json_text("{}").seed == RunConfig::defaults().seed);
    CHECK(config_from_json_text(R"({"rod": {"density": 900}})").rod.density == 900.0);
    CHECK_THROWS_AS(config_from_json_text(R"({"rod": {"densty": 900}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"sigma": "high"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"metric": "chebyshev"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text("{not json"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);

    RunConfig bad = RunConfig::defaults();
    bad.sigma = 300;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = RunConfig::defaults();
    bad.ensemble.size = 2;
    CHECK_NOTHROW(bad.validate(false));
    CHECK_THROWS_AS(bad.validate(true), ConfigError);
}

TEST_CASE("parameter scaling") {
    const ParameterScaling s;
    const Eigen::Vector2d phys(1234.0, 6.5e6);
    CHECK((s.to_physical(s.to_rescaled(phys)) - phys).norm() < 1e-6);
}

TEST_CASE("forward command writes consistent artefacts") {
    const fs::path dir = fresh_dir("forward");
    const RunConfig c = quick_config(dir);
    const ForwardResult r = cmd_forward(c);
    for (const char* f : {"render.ppm", "binary.pgm", "distance.pgm", "distance.csv", "rod.csv", "manifest.json"})
        CHECK(fs::exists(dir / f));
    const RgbImage img = read_ppm(dir / "render.ppm");
    CHECK(img.width == c.camera.width);
    CHECK(img.height == c.camera.height);
    CHECK(ingest(dir / "render.ppm", c.sigma, c.metric, c.camera.width, c.camera.height) == r.distance.flatten());

    const RodImageForward g(c);
    CHECK(g(c.scaling.to_rescaled(c.truth)) == r.distance.flatten());

    const RunConfig from_manifest = load_config(dir / "manifest.json");
    CHECK(config_to_json_text(from_manifest) == config_to_json_text(c));
}

TEST_CASE("distance csv of a 705x555 camera has 391275 rows") {
    const fs::path dir = fresh_dir("big");
    RunConfig c = quick_config(dir);
    c.camera.width = 705;
    c.camera.height = 555;
    cmd_forward(c);
    std::ifstream in(dir / "distance.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 391275);
}

TEST_CASE("inversions are deterministic and reproducible from the manifest") {
    const fs::path dir = fresh_dir("invert");
    RunConfig c = quick_config(dir / "a");
    const InversionResult a = cmd_invert(c);
    c.out = (dir / "b").string();
    cmd_invert(c);
    for (const char* f : {"trajectory.csv", "final_ensemble.csv", "estimate.csv", "summary.txt"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(a.estimate_physical.size() == 2);
    CHECK(a.trajectory.samples.front().particles.cols() == 3);

    RunConfig again = load_config(dir / "a" / "manifest.json");
    again.out = (dir / "c").string();
    cmd_invert(again);
    CHECK(slurp(dir / "a" / "trajectory.csv") == slurp(dir / "c" / "trajectory.csv"));

    c.flow.workers = 3;
    c.out = (dir / "d").string();
    cmd_invert(c);
    CHECK(slurp(dir / "a" / "trajectory.csv") == slurp(dir / "d" / "trajectory.csv"));

    const Trajectory back = read_trajectory_csv(dir / "a" / "trajectory.csv");
    REQUIRE(back.samples.size() == a.trajectory.samples.size());
    CHECK(back.samples.back().particles.isApprox(a.trajectory.samples.back().particles, 1e-15));
}

TEST_CASE("subsampled inversion writes the switch log") {
    const fs::path dir = fresh_dir("invert_sub");
    const RunConfig c = quick_config(dir);
    const InversionResult r = cmd_invert_subsampled(c);
    const auto switches = read_switch_csv(dir / "switches.csv");
    REQUIRE(switches.size() == r.trajectory.switches.size());
    CHECK(switches.front().time == 0.0);
    for (const auto& s : switches) {
        CHECK(s.index >= 0);
        CHECK(s.index < c.n_sub);
    }
    CHECK(switches.back().time == doctest::Approx(c.schedule.horizon));
    CHECK(std::isfinite(r.terminal_residual));

    // 72 rows over 5 bands: row boundaries at floor(72 k / 5).
    const InverseProblem p = build_problem(c, load_or_synthesise_data(c));
    const DataPartition part = partition(p, c.n_sub, c.partition, ImageLayout{c.camera.width, c.camera.height});
    const std::vector<int> rows = {14, 14, 15, 14, 15};
    REQUIRE(part.ranges().size() == rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k)
        CHECK(part.ranges()[k].length == static_cast<Eigen::Index>(rows[k]) * c.camera.width);
}

TEST_CASE("csv parse errors carry line numbers") {
    const fs::path dir = fresh_dir("csv");
    std::ofstream(dir / "t1.csv") << "t,mean_residual,spread,lambda_min,p0_u0,p1_u0\n0,1,1,1,0,1\n0.5,1,1,oops,0,1\n";
    try {
        read_trajectory_csv(dir / "t1.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::ofstream(dir / "t2.csv") << "t,mean_residual,spread,lambda_min,p0_u0\n0,1,1,1,0\n1,1,1,1\n";
    try {
        read_trajectory_csv(dir / "t2.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::ofstream(dir / "t3.csv") << "time,residual\n";
    CHECK_THROWS_AS(read_trajectory_csv(dir / "t3.csv"), ParseError);
    std::ofstream(dir / "t4.csv") << "t,mean_residual,spread,lambda_min,p0_u0\n1,1,1,1,0\n0.5,1,1,1,0\n";
    CHECK_THROWS_AS(read_trajectory_csv(dir / "t4.csv"), ParseError);
    std::ofstream(dir / "s.csv") << "switch_time,new_index\n0,1\n0.5,1.5\n";
    try {
        read_switch_csv(dir / "s.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
}

TEST_CASE("diagnose") {
    const fs::path dir = fresh_dir("diagnose");
    RunConfig c = quick_config(dir / "run");
    cmd_invert(c);
    c.out = (dir / "report").string();
    c.diagnose.runs = {(dir / "run").string(), (dir / "run" / "trajectory.csv").string()};
    const std::string text = cmd_diagnose(c);
    CHECK(text.find("spread") != std::string::npos);
    CHECK(text.find("ratio a/b 1") != std::string::npos);
    for (const char* f : {"fits.csv", "comparisons.csv", "report.txt", "run0_spread.csv", "comparison_run0_run1.csv"})
        CHECK(fs::exists(dir / "report" / f));

    c.diagnose.runs = {(dir / "missing").string()};
    try {
        cmd_diagnose(c);
        FAIL("expected an I/O error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
}

TEST_CASE("exit codes") {
    CHECK(exit_code_for(ParseError("x", 2)) == 5);
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(IoError("x")) == 3);
    CHECK(exit_code_for(StiffnessError("x", 1.0)) == 4);
    CHECK(exit_code_for(SolverDivergence("x", 3)) == 4);
    CHECK(exit_code_for(InvalidInput("x")) == 1);
}

TEST_CASE("command line") {
    const fs::path dir = fresh_dir("process");
    const fs::path log = dir / "log.txt";
    const RunConfig c = quick_config(dir / "fwd");
    write_config(dir / "cfg.json", c);

    CHECK(run_cli("forward --config " + (dir / "cfg.json").string() + " --sigma 100 --metric manhattan", log) == 0);
    const RunConfig echoed = load_config(dir / "fwd" / "manifest.json");
    CHECK(echoed.sigma == 100);
    CHECK(echoed.metric == Metric::manhattan);

    CHECK(run_cli("invert --config " + (dir / "cfg.json").string() + " --seed 4 --workers 2 --out " +
                      (dir / "inv").string(),
                  log) == 0);
    CHECK(slurp(log).find("density") != std::string::npos);
    CHECK(load_config(dir / "inv" / "manifest.json").seed == 4);

    CHECK(run_cli("diagnose --out " + (dir / "diag").string() + " " + (dir / "nowhere").string(), log) == 3);
    CHECK(slurp(log).find("nowhere") != std::string::npos);

    std::ofstream(dir / "bad.json") << R"({"unknown_key": 1})";
    CHECK(run_cli("forward --config " + (dir / "bad.json").string(), log) == 2);

    std::ofstream(dir / "broken" / "trajectory.csv").close();
    fs::create_directories(dir / "broken");
    std::ofstream(dir / "broken" / "trajectory.csv") << "t,mean_residual,spread,lambda_min,p0_u0\n0,1,1,x,0\n";
    CHECK(run_cli("diagnose --out " + (dir / "diag").string() + " " + (dir / "broken").string(), log) == 5);
    CHECK(slurp(log).find("line 2") != std::string::npos);

    CHECK(run_cli("forward --sigma 0", log) == 2);
    CHECK(run_cli("nonsense", log) == 2);
    CHECK(run_cli("invert --data " + (dir / "missing.pgm").string() + " --out " + (dir / "x").string(), log) == 3);
}
