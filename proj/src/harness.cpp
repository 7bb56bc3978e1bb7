#include "fedl2t/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fedl2t/error.hpp"

namespace fedl2t {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

bool uses_prox(Algorithm a) {
    return a == Algorithm::Ditto || a == Algorithm::FedL2T;
}

bool uses_lambda(Algorithm a) {
    return a == Algorithm::L2T_C || a == Algorithm::L2T_CG || a == Algorithm::FedL2T;
}

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
    workers = std::min(std::max<std::size_t>(workers, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

const RoundMetrics& final_round(const RunResult& run) {
    if (run.rounds.empty()) throw ContractViolation("run has no rounds");
    return run.rounds.back();
}

}  // namespace

std::vector<ClientData> make_client_data(const ExperimentConfig& config, std::uint64_t seed) {
    DataConfig dc = config.data;
    dc.seed = seed;
    auto clients = generate(dc);
    apply_label_ratio(clients, dc.label_ratio, seed);
    return clients;
}

Federation make_federation(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed) {
    HyperParams hp = config.hyper;
    hp.seed = seed;
    hp.algorithm = algorithm;
    return Federation(algorithm, hp, config.model, make_client_data(config, seed));
}

RunResult run_single(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed, const RoundHook& hook) {
    Federation fed = make_federation(config, algorithm, seed);
    while (!fed.finished()) {
        fed.run_round();
        if (hook) hook(fed);
    }
    return fed.result();
}

ExperimentResult run_comparison(const ExperimentConfig& config, const RoundHook& hook) {
    config.validate();
    struct Cell {
        Algorithm algorithm;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (Algorithm a : config.algorithms) {
        for (std::uint64_t s : config.seeds) cells.push_back({a, s});
    }
    ExperimentResult result;
    result.runs.resize(cells.size());
    parallel_for(cells.size(), config.workers,
                 [&](std::size_t i) { result.runs[i] = run_single(config, cells[i].algorithm, cells[i].seed, hook); });
    return result;
}

std::string_view to_string(SweepParameter p) {
    switch (p) {
        case SweepParameter::LambdaC: return "lambda_c";
        case SweepParameter::LabelRatio: return "label_ratio";
        case SweepParameter::Mu: return "mu";
    }
    return "?";
}

SweepParameter parse_sweep_parameter(std::string_view name) {
    for (auto p : {SweepParameter::LambdaC, SweepParameter::LabelRatio, SweepParameter::Mu}) {
        if (name == to_string(p)) return p;
    }
    throw ConfigError("unknown sweep parameter '" + std::string(name) + "'", "param");
}

ExperimentConfig with_parameter(const ExperimentConfig& config, SweepParameter parameter, double value) {
    ExperimentConfig c = config;
    switch (parameter) {
        case SweepParameter::LambdaC: c.hyper.lambda_c = value; break;
        case SweepParameter::LabelRatio: c.data.label_ratio = value; break;
        case SweepParameter::Mu: c.hyper.mu = value; break;
    }
    c.validate();
    return c;
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& config, SweepParameter parameter,
                                 const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("at least one value is required", "values");
    const auto& algs = config.algorithms;
    if (parameter == SweepParameter::LambdaC && std::none_of(algs.begin(), algs.end(), uses_lambda))
        throw ConfigError("no selected algorithm uses lambda_c", "param");
    if (parameter == SweepParameter::Mu && std::none_of(algs.begin(), algs.end(), uses_prox))
        throw ConfigError("no selected algorithm uses mu", "param");

    std::vector<SweepCell> cells;
    for (double v : values) cells.push_back({v, with_parameter(config, parameter, v), {}});
    for (auto& cell : cells) cell.result = run_comparison(cell.config);
    return cells;
}

std::vector<AlgorithmSummary> summarize(const ExperimentResult& result) {
    std::vector<Algorithm> order;
    for (const auto& run : result.runs) {
        if (std::find(order.begin(), order.end(), run.algorithm) == order.end()) order.push_back(run.algorithm);
    }
    std::vector<AlgorithmSummary> out;
    for (Algorithm a : order) {
        std::vector<double> accs;
        for (const auto& run : result.runs) {
            if (run.algorithm != a) continue;
            for (const auto& c : final_round(run).clients) accs.push_back(c.acc);
        }
        AlgorithmSummary s;
        s.algorithm = a;
        s.n = accs.size();
        s.mean_acc = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(s.n);
        if (s.n > 1) {
            double ss = 0.0;
            for (double x : accs) ss += (x - s.mean_acc) * (x - s.mean_acc);
            s.std_acc = std::sqrt(ss / static_cast<double>(s.n - 1));
        }
        out.push_back(s);
    }
    return out;
}

double mean_final_accuracy(const ExperimentResult& result, Algorithm algorithm) {
    double total = 0.0;
    std::size_t runs = 0;
    for (const auto& run : result.runs) {
        if (run.algorithm != algorithm) continue;
        const auto& clients = final_round(run).clients;
        double avg = 0.0;
        for (const auto& c : clients) avg += c.acc;
        total += avg / static_cast<double>(clients.size());
        ++runs;
    }
    if (runs == 0) throw ContractViolation("algorithm not present in result");
    return total / static_cast<double>(runs);
}

double mean_final_gap(const ExperimentResult& result, Algorithm algorithm) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& run : result.runs) {
        if (run.algorithm != algorithm) continue;
        for (const auto& c : final_round(run).clients) {
            total += c.global_gap;
            ++n;
        }
    }
    if (n == 0) throw ContractViolation("algorithm not present in result");
    return total / static_cast<double>(n);
}

std::string format_curve(const ExperimentResult& result) {
    std::string out(kCurveHeader);
    out += '\n';
    for (const auto& run : result.runs) {
        const std::string prefix = std::string(to_string(run.algorithm)) + ',' + std::to_string(run.seed) + ',';
        for (const auto& round : run.rounds) {
            for (const auto& c : round.clients) {
                out += prefix;
                out += std::to_string(round.round) + ',' + std::to_string(c.client) + ',';
                out += fmt(c.acc) + ',' + fmt(c.losses.task) + ',' + fmt(c.losses.kl) + ',' + fmt(c.losses.feat) +
                       ',' + fmt(c.losses.prox) + '\n';
            }
        }
    }
    return out;
}

std::string format_summary(const ExperimentResult& result) {
    std::string out(kSummaryHeader);
    out += '\n';
    for (const auto& s : summarize(result)) {
        out += std::string(to_string(s.algorithm)) + ',' + std::to_string(s.n) + ',' + fmt(s.mean_acc) + ',' +
               fmt(s.std_acc) + '\n';
    }
    return out;
}

void export_results(const ExperimentResult& result, const ExperimentConfig& config, const std::filesystem::path& dir) {
    make_dir(dir);
    ExperimentConfig manifest = config;
    manifest.output_dir = dir;
    write_file(dir / "curve.csv", format_curve(result));
    write_file(dir / "summary.csv", format_summary(result));
    write_file(dir / "manifest.ini", format_config(manifest));
}

void export_sweep(const std::vector<SweepCell>& cells, SweepParameter parameter, const std::filesystem::path& dir) {
    make_dir(dir);
    const std::string name(to_string(parameter));
    std::string table = "parameter,value,algorithm,n,mean_acc,std_acc\n";
    for (const auto& cell : cells) {
        export_results(cell.result, cell.config, dir / (name + "=" + fmt(cell.value)));
        for (const auto& s : summarize(cell.result)) {
            table += name + ',' + fmt(cell.value) + ',' + std::string(to_string(s.algorithm)) + ',' +
                     std::to_string(s.n) + ',' + fmt(s.mean_acc) + ',' + fmt(s.std_acc) + '\n';
        }
    }
    write_file(dir / "sweep.csv", table);
}

}  // namespace fedl2t
