#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <vector>

#include "fedl2t/config.hpp"
#include "fedl2t/data.hpp"
#include "fedl2t/error.hpp"
#include "fedl2t/harness.hpp"

using namespace fedl2t;

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> algorithms;
    std::string out;
    bool quiet = false;
    std::size_t workers = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "INI config file (defaults when omitted)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seeds, "Seeds, overriding the config")->delimiter(',');
    cmd->add_option("--algo", o.algorithms, "Algorithms, overriding the config")->delimiter(',');
    cmd->add_option("--out", o.out, "Output directory, overriding the config");
    cmd->add_option("--workers", o.workers, "Concurrent runs, overriding the config");
    cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
}

ExperimentConfig resolve(const CommonOptions& o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (!o.algorithms.empty()) {
        c.algorithms.clear();
        for (const auto& a : o.algorithms) c.algorithms.push_back(parse_algorithm(a));
    }
    if (!o.out.empty()) c.output_dir = o.out;
    if (o.workers > 0) c.workers = o.workers;
    c.validate();
    return c;
}

void print_summary(const ExperimentResult& result) {
    for (const auto& s : summarize(result)) {
        std::printf("  %-8s acc %.4f +- %.4f  (n=%zu)\n", std::string(to_string(s.algorithm)).c_str(), s.mean_acc,
                    s.std_acc, s.n);
    }
}

RoundHook progress_hook(bool quiet, std::size_t checkpoint_at, const ExperimentConfig& config) {
    if (quiet && checkpoint_at == 0) return {};
    auto mutex = std::make_shared<std::mutex>();
    return [=](const Federation& fed) {
        const auto round = fed.global().round;
        const std::string tag = std::string(to_string(fed.algorithm())) + "_seed" + std::to_string(fed.hyper().seed);
        if (checkpoint_at > 0 && round == checkpoint_at) {
            const auto dir = config.output_dir / "checkpoints";
            std::filesystem::create_directories(dir);
            save_checkpoint(dir / (tag + ".ckpt"), config, fed);
        }
        if (!quiet && (round % 10 == 0 || fed.finished())) {
            std::lock_guard lock(*mutex);
            std::fprintf(stderr, "%s round %zu/%zu\n", tag.c_str(), round, fed.hyper().rounds);
        }
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated two-teacher distillation simulator"};
    app.require_subcommand(1);

    CommonOptions run_opts;
    std::size_t checkpoint_at = 0;
    auto* run = app.add_subcommand("run", "Run every configured (algorithm, seed) pair and export metrics");
    add_common(run, run_opts);
    run->add_option("--checkpoint-at", checkpoint_at, "Write a checkpoint per run after this round");

    CommonOptions sweep_opts;
    std::string param;
    std::vector<double> values;
    auto* sweep = app.add_subcommand("sweep", "Repeat the comparison for each value of one parameter");
    add_common(sweep, sweep_opts);
    sweep->add_option("--param", param, "lambda_c, label_ratio or mu")->required();
    sweep->add_option("--values", values, "Comma-separated values")->delimiter(',')->required();

    CommonOptions export_opts;
    std::string export_path;
    auto* export_data = app.add_subcommand("export-data", "Write the synthetic client data of one seed as CSV");
    export_data->add_option("--config", export_opts.config_path, "INI config file")->check(CLI::ExistingFile);
    export_data->add_option("--seed", export_opts.seeds, "Seed (first value used)")->delimiter(',');
    export_data->add_option("--out", export_path, "Output file")->required();

    std::string checkpoint_path;
    std::string resume_out;
    bool resume_quiet = false;
    auto* resume = app.add_subcommand("resume", "Finish a checkpointed run and export its metrics");
    resume->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
    resume->add_option("--out", resume_out, "Output directory")->required();
    resume->add_flag("--quiet", resume_quiet, "Suppress progress output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto config = resolve(run_opts);
            if (checkpoint_at > config.hyper.rounds) throw ConfigError("beyond the configured rounds", "checkpoint-at");
            const auto result = run_comparison(config, progress_hook(run_opts.quiet, checkpoint_at, config));
            export_results(result, config, config.output_dir);
            if (!run_opts.quiet) {
                print_summary(result);
                std::printf("wrote %s\n", config.output_dir.string().c_str());
            }
        } else if (*sweep) {
            const auto config = resolve(sweep_opts);
            const auto p = parse_sweep_parameter(param);
            const auto cells = run_sweep(config, p, values);
            export_sweep(cells, p, config.output_dir);
            if (!sweep_opts.quiet) {
                for (const auto& cell : cells) {
                    std::printf("%s = %g\n", std::string(to_string(p)).c_str(), cell.value);
                    print_summary(cell.result);
                }
                std::printf("wrote %s\n", config.output_dir.string().c_str());
            }
        } else if (*export_data) {
            const auto config = resolve(export_opts);
            export_dataset(export_path, make_client_data(config, config.seeds.front()));
        } else if (*resume) {
            auto ck = load_checkpoint(checkpoint_path);
            auto hook = progress_hook(resume_quiet, 0, ck.config);
            while (!ck.federation.finished()) {
                ck.federation.run_round();
                if (hook) hook(ck.federation);
            }
            ExperimentResult result{{ck.federation.result()}};
            ExperimentConfig manifest = ck.config;
            manifest.algorithms = {ck.federation.algorithm()};
            manifest.seeds = {ck.federation.hyper().seed};
            export_results(result, manifest, resume_out);
            if (!resume_quiet) {
                print_summary(result);
                std::printf("wrote %s\n", resume_out.c_str());
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
