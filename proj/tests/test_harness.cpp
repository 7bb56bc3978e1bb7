#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fedl2t/config.hpp"
#include "fedl2t/error.hpp"
#include "fedl2t/harness.hpp"

using namespace fedl2t;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("fedl2t_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.data.clients = 2;
    c.data.samples_per_client = 24;
    c.data.dim = 4;
    c.model.input_dim = 4;
    c.model.base_hidden = {6, 5};
    c.model.feature_dim = 5;
    c.hyper.rounds = 3;
    c.hyper.batch_size = 8;
    c.algorithms = {Algorithm::FedAvg, Algorithm::FedL2T};
    c.seeds = {3, 4};
    return c;
}

std::string config_error_key(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<accepted>";
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
    const auto c = parse_config("");
    CHECK(c == ExperimentConfig{});
    CHECK(c.hyper.eta == 0.01);
    CHECK(c.hyper.mu == 0.2);
    CHECK(c.hyper.lambda_c == 0.5);
    CHECK(c.hyper.rounds == 100);
    CHECK(c.hyper.local_epochs == 1);
    CHECK(c.seeds.size() == 5);
    CHECK(c.algorithms.size() == 7);
}

TEST_CASE("config parsing and validation") {
    CHECK(parse_config("[hyper]\nlambda_c = 1.5\n").hyper.lambda_c == 1.5);
    CHECK(config_error_key("[hyper]\neta = -1\n") == "eta");
    CHECK(config_error_key("[hyper]\neta = fast\n") == "eta");
    CHECK(config_error_key("[hyper]\ngamma = 1\n") == "hyper.gamma");
    CHECK(config_error_key("[extra]\nx = 1\n") == "extra");
    CHECK(config_error_key("[run]\nalgorithms = FedAvg, FedProx\n") == "algorithms");
    CHECK(config_error_key("[run]\nseeds =\n") == "seeds");
    CHECK(config_error_key("[run]\nseeds = 1, 1\n") == "seeds");
    CHECK(config_error_key("[data]\nclients = -3\n") == "clients");
    CHECK(config_error_key("[data]\nheterogeneity = 2\n") == "heterogeneity");

    const auto c = parse_config("[data]\ndim = 8\n[model]\nbase_hidden = 16, 4\n[run]\nalgorithms = L2T-C, FedL2T\n");
    CHECK(c.model.input_dim == 8);
    CHECK(c.model.feature_dim == 4);
    CHECK(c.algorithms == std::vector<Algorithm>{Algorithm::L2T_C, Algorithm::FedL2T});
    CHECK_THROWS_AS(load_config("/nonexistent/fedl2t.ini"), IoError);
}

TEST_CASE("format_config round-trips") {
    auto c = tiny_config();
    c.hyper.eta = 0.1 + 0.2;
    c.data.heterogeneity = 1.0 / 3.0;
    CHECK(parse_config(format_config(c)) == c);
}

TEST_CASE("curve, summary and manifest files") {
    const auto c = tiny_config();
    const auto result = run_comparison(c);
    REQUIRE(result.runs.size() == 4);
    const auto dir = scratch("export");
    export_results(result, c, dir);

    std::ifstream curve(dir / "curve.csv");
    std::string line;
    std::getline(curve, line);
    CHECK(line == kCurveHeader);
    std::map<std::string, std::vector<double>> final_acc;
    std::size_t rows = 0;
    std::string prev_key;
    while (std::getline(curve, line)) {
        ++rows;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        REQUIRE(f.size() == 9);
        const double acc = std::stod(f[4]);
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
        if (std::stoul(f[2]) == c.hyper.rounds) final_acc[f[0]].push_back(acc);
    }
    CHECK(rows == 24);

    std::ifstream summary(dir / "summary.csv");
    std::getline(summary, line);
    CHECK(line == kSummaryHeader);
    std::size_t algs = 0;
    while (std::getline(summary, line)) {
        ++algs;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        const auto& xs = final_acc.at(f[0]);
        double mean = 0, ss2 = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        for (double x : xs) ss2 += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss2 / static_cast<double>(xs.size() - 1));
        CHECK(std::stoul(f[1]) == xs.size());
        CHECK(std::abs(std::stod(f[2]) - mean) <= 1e-12);
        CHECK(std::abs(std::stod(f[3]) - sd) <= 1e-12);
    }
    CHECK(algs == 2);

    auto expect = c;
    expect.output_dir = dir;
    CHECK(load_config(dir / "manifest.ini") == expect);

    const auto again = scratch("export2");
    export_results(run_comparison(c), c, again);
    CHECK(slurp(dir / "curve.csv") == slurp(again / "curve.csv"));
    CHECK(slurp(dir / "summary.csv") == slurp(again / "summary.csv"));
    fs::remove_all(dir);
    fs::remove_all(again);
}

TEST_CASE("concurrent cells give the same bytes") {
    auto c = tiny_config();
    const auto serial = format_curve(run_comparison(c));
    c.workers = 3;
    CHECK(format_curve(run_comparison(c)) == serial);
}

TEST_CASE("sweeps: validation and isolation") {
    auto c = tiny_config();
    c.seeds = {1};
    c.hyper.rounds = 2;
    const auto fwd = run_sweep(c, SweepParameter::LambdaC, {0.0, 1.5});
    const auto rev = run_sweep(c, SweepParameter::LambdaC, {1.5, 0.0});
    CHECK(format_curve(fwd[0].result) == format_curve(rev[1].result));
    CHECK(format_curve(fwd[1].result) == format_curve(rev[0].result));
    CHECK(fwd[1].config.hyper.lambda_c == 1.5);

    const auto lr = run_sweep(c, SweepParameter::LabelRatio, {0.25});
    CHECK(lr[0].config.data.label_ratio == 0.25);

    c.algorithms = {Algorithm::FedAvg};
    CHECK_THROWS_AS(run_sweep(c, SweepParameter::LambdaC, {0.5}), ConfigError);
    CHECK_THROWS_AS(run_sweep(c, SweepParameter::Mu, {0.5}), ConfigError);
    CHECK_THROWS_AS(with_parameter(c, SweepParameter::LabelRatio, 0.0), ConfigError);
    CHECK(parse_sweep_parameter("mu") == SweepParameter::Mu);
    CHECK_THROWS_AS(parse_sweep_parameter("eta"), ConfigError);

    const auto dir = scratch("sweep");
    export_sweep(fwd, SweepParameter::LambdaC, dir);
    CHECK(fs::exists(dir / "lambda_c=0" / "curve.csv"));
    CHECK(fs::exists(dir / "lambda_c=1.5" / "manifest.ini"));
    CHECK(slurp(dir / "sweep.csv").starts_with("parameter,value,algorithm,n,mean_acc,std_acc\n"));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip and resume") {
    auto c = tiny_config();
    c.hyper.rounds = 6;
    const auto dir = scratch("ckpt");
    fs::create_directories(dir);
    const auto path = dir / "run.ckpt";

    for (Algorithm a : {Algorithm::FedL2T, Algorithm::L2T_C, Algorithm::FedAvg}) {
        const auto full = run_single(c, a, 3);

        Federation fresh = make_federation(c, a, 3);
        save_checkpoint(path, c, fresh);
        const auto back = load_checkpoint(path);
        CHECK(back.config == c);
        CHECK(back.federation.global().t_global == fresh.global().t_global);
        CHECK(back.federation.server_rng() == fresh.server_rng());

        Federation half = make_federation(c, a, 3);
        for (int r = 0; r < 3; ++r) half.run_round();
        save_checkpoint(path, c, half);
        auto resumed = load_checkpoint(path, c.model);
        resumed.federation.run();
        INFO(to_string(a));
        CHECK(format_curve({{resumed.federation.result()}}) == format_curve({{full}}));
    }

    auto other = c.model;
    other.base_hidden = {7, 5};
    CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);

    std::string bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);

    bytes = slurp(path);
    bytes[8] = 9;
    std::ofstream(dir / "version.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), IoError);

    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, 30);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    fs::remove_all(dir);
}
