#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "../tools/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "seqread");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = seqread::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("seqread_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> rows(const std::string& csv, const std::string& method) {
    std::vector<std::string> out;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(method + ",", 0) == 0) out.push_back(line);
    }
    return out;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

}  // namespace

TEST_CASE("grid syntax") {
    CHECK(seqread::cli::parse_grid("2.5") == std::vector<double>{2.5});
    CHECK(seqread::cli::parse_grid("0:1:0.25").size() == 5);
    CHECK(seqread::cli::parse_grid("0:14:0.5").size() == 29);
    CHECK(seqread::cli::parse_grid("0.1:20:0.1").back() == doctest::Approx(20.0));
    CHECK(seqread::cli::parse_grid("0:0.95:0.5").size() == 3);
    CHECK_THROWS_AS(seqread::cli::parse_grid("1:0:0.1"), std::invalid_argument);
    CHECK_THROWS_AS(seqread::cli::parse_grid("0:1:0"), std::invalid_argument);
    CHECK_THROWS_AS(seqread::cli::parse_grid("a:b"), std::invalid_argument);
}

TEST_CASE("config digest is stable and order independent") {
    const json a = {{"x", 1}, {"y", {1, 2}}};
    const json b = json::parse(R"({"y":[1,2],"x":1})");
    CHECK(seqread::cli::config_digest(a) == seqread::cli::config_digest(b));
    CHECK(seqread::cli::config_digest(a).size() == 16);
    CHECK(seqread::cli::config_digest(a) != seqread::cli::config_digest(json{{"x", 2}}));
}

TEST_CASE("usage errors exit with 2") {
    auto r = cli({"gaussian", "--lambda-bar", "1"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--r") != std::string::npos);
    CHECK(cli({"decay", "--tau", "0", "--tf", "1"}).code == 2);
    CHECK(cli({"decay", "--tau", "1"}).code == 2);
    CHECK(cli({"decay", "--tau", "1", "--tf", "1", "--mode", "triple"}).code == 2);
    CHECK(cli({"gaussian", "--r", "1", "--lambda-bar", "1", "--mc-runs", "10"}).code == 2);
    CHECK(cli({"gaussian", "--r", "1", "--lambda-bar", "1", "--lambda-grid", "1:2:1"}).code == 2);
    CHECK(cli({"gaussian", "--r", "1", "--lambda-bar", "1", "--mc-runs", "1.5", "--t-max", "1"}).code == 2);
    CHECK(cli({"nonsense"}).code == 2);
    CHECK(cli({}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("gaussian table") {
    const auto r = cli({"gaussian", "--r", "1", "--lambda-grid", "0:14:0.5"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("# tool=seqread 0.1.0") == 0);
    CHECK(r.out.find("# config_digest=") != std::string::npos);
    const auto analytic = rows(r.out, "analytic");
    REQUIRE(analytic.size() == 29);
    const auto f = split(analytic[10]);  // lambda_bar = 5
    CHECK(std::stod(f[2]) == 5.0);
    CHECK(std::stod(f[4]) == doctest::Approx(1.0 / (1.0 + std::exp(5.0))).epsilon(1e-10));
}

TEST_CASE("gaussian analytic and simulated rows agree") {
    const auto r = cli({"gaussian", "--r", "1", "--lambda-bar", "4.595", "--t-max", "1e3", "--mc-runs", "20000",
                        "--seed", "7"});
    REQUIRE(r.code == 0);
    const auto a = split(rows(r.out, "analytic").at(0));
    const auto m = split(rows(r.out, "mc").at(0));
    CHECK(std::abs(std::stod(a[4]) - std::stod(m[4])) < 4.0 * std::stod(m[6]));
    CHECK(std::abs(std::stod(a[5]) - std::stod(m[5])) < 4.0 * std::stod(m[7]));
    CHECK(m[10] == "20000");
}

TEST_CASE("decay table") {
    const auto r = cli({"decay", "--tau", "1", "--tf-grid", "0.1:20:0.1", "--mode", "single"});
    REQUIRE(r.code == 0);
    const auto a = rows(r.out, "analytic");
    REQUIRE(a.size() == 200);
    double prev = 0.0;
    for (const auto& row : a) {
        const double s = std::stod(split(row)[8]);
        CHECK(s > prev);
        prev = s;
    }
    CHECK(prev > 1.9);
    CHECK(prev < 2.0);
    const auto two = cli({"decay", "--mode", "two-channel", "--tau", "1", "--tf", "6.908"});
    const auto f = split(rows(two.out, "analytic").at(0));
    CHECK(std::stod(f[4]) == doctest::Approx(5e-4).epsilon(1e-3));
    CHECK(std::stod(f[8]) == doctest::Approx(std::log(1e3)).epsilon(1e-3));
}

TEST_CASE("frontier: dry run, schema errors, outputs and thread independence") {
    TempDir dir("frontier");
    const auto cfg = dir.path / "cfg.json";
    std::ofstream(cfg) << R"({"model": {"dn_max": 5}, "sweep": {"n_traj": 2000, "t_max": 0.005,
        "p_grid_points": 10}, "output": {"dir": ")" << (dir.path / "a").string() << R"(", "prefix": "t"}, "seed": 3})";
    const auto dry = cli({"frontier", cfg.string(), "--dry-run"});
    REQUIRE(dry.code == 0);
    const json plan = json::parse(dry.out);
    CHECK(plan["outputs"].size() == 5);
    CHECK_FALSE(fs::exists(dir.path / "a"));

    REQUIRE(cli({"frontier", cfg.string(), "--threads", "1"}).code == 0);
    REQUIRE(cli({"--threads", "3", "frontier", cfg.string(), "--out-dir", (dir.path / "b").string()}).code == 0);
    for (const char* f : {"t_counting.csv", "t_nonadaptive.csv", "t_adaptive.csv", "t_adaptive_pareto.csv",
                          "t_summary.json"}) {
        const auto a = slurp(dir.path / "a" / f);
        CHECK(!a.empty());
        CHECK(a == slurp(dir.path / "b" / f));
    }
    const json summary = json::parse(slurp(dir.path / "a" / "t_summary.json"));
    CHECK(summary["seed"] == 3);
    CHECK(summary["dn_max"] == 5);
    CHECK(summary.contains("counting"));
    CHECK(slurp(dir.path / "a" / "t_adaptive.csv").find("# seed=3\n") != std::string::npos);

    std::ofstream(dir.path / "bad.json") << R"({"sweep": {"n_trajs": 5}})";
    CHECK(cli({"frontier", (dir.path / "bad.json").string()}).code == 2);
    std::ofstream(dir.path / "bad2.json") << R"({"sweep": {"mode": "bayes"}})";
    CHECK(cli({"frontier", (dir.path / "bad2.json").string()}).code == 2);
    std::ofstream(dir.path / "bad3.json") << "{not json";
    CHECK(cli({"frontier", (dir.path / "bad3.json").string()}).code == 2);
    CHECK(cli({"frontier", (dir.path / "missing.json").string()}).code == 2);
}

TEST_CASE("matrices dump and load") {
    TempDir dir("matrices");
    const auto file = (dir.path / "m.json").string();
    REQUIRE(cli({"matrices", "dump", "--out", file}).code == 0);
    const auto r = cli({"matrices", "load", file, "--verify"});
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["dn_max"] == 5);
    CHECK(j["matches_rebuild"] == true);
    std::ofstream(dir.path / "bad.json") << "{}";
    CHECK(cli({"matrices", "load", (dir.path / "bad.json").string()}).code == 1);
    CHECK(cli({"matrices", "dump", "--gamma-plus", "-1"}).code == 2);
}

TEST_CASE("calibrate: empty input and simulated round trip") {
    TempDir dir("calibrate");
    fs::create_directories(dir.path / "empty");
    const auto empty = cli({"calibrate", (dir.path / "empty").string()});
    CHECK(empty.code == 1);
    CHECK(empty.err.find("no trajectories found") != std::string::npos);

    REQUIRE(cli({"simulate", "--out-dir", (dir.path / "sim").string(), "--n-traj", "30", "--seed", "2"}).code == 0);
    const auto r = cli({"calibrate", (dir.path / "sim").string()});
    REQUIRE(r.code == 0);
    const json rep = json::parse(r.out);
    CHECK(rep["threshold"]["plus_if_count_above"] == 2);
    CHECK(rep["split"]["calibration"].size() == 15);
    CHECK(rep["rates"]["gamma_plus"].get<double>() == doctest::Approx(720.0).epsilon(0.05));
    CHECK(rep["relaxation"]["residual_plus"].size() == 99);
    CHECK(cli({"calibrate", (dir.path / "sim").string(), "--rebin-ms", "0.15"}).code == 2);
    CHECK(cli({"calibrate", (dir.path / "sim").string(), "--split", "zero"}).code == 2);
}
