#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "fedl2t/config.hpp"
#include "fedl2t/federation.hpp"

namespace fedl2t {

/// Runs in (algorithm, seed) order as listed by the config.
struct ExperimentResult {
    std::vector<RunResult> runs;
};

struct AlgorithmSummary {
    Algorithm algorithm = Algorithm::FedL2T;
    std::size_t n = 0;  // seeds x clients
    double mean_acc = 0.0;
    double std_acc = 0.0;  // sample standard deviation, 0 when n == 1
};

/// Called after every completed round; used for checkpointing.
using RoundHook = std::function<void(const Federation&)>;

/// Client data for one seed: generated, then label-subsampled.
std::vector<ClientData> make_client_data(const ExperimentConfig& config, std::uint64_t seed);

/// A fresh federation for one (algorithm, seed) cell.
Federation make_federation(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed);

RunResult run_single(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed,
                     const RoundHook& hook = {});

/// Every (algorithm, seed) cell; cells run on up to config.workers threads
/// and share nothing.
ExperimentResult run_comparison(const ExperimentConfig& config, const RoundHook& hook = {});

enum class SweepParameter { LambdaC, LabelRatio, Mu };

std::string_view to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view name);

/// `config` with `parameter` set to `value`, validated.
ExperimentConfig with_parameter(const ExperimentConfig& config, SweepParameter parameter, double value);

struct SweepCell {
    double value = 0.0;
    ExperimentConfig config;
    ExperimentResult result;
};

/// One comparison per value, in the given order. Throws ConfigError when no
/// selected algorithm depends on `parameter`.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config, SweepParameter parameter,
                                 const std::vector<double>& values);

/// Final-round accuracy over all seeds and clients, per algorithm, in the
/// order algorithms first appear in `result`.
std::vector<AlgorithmSummary> summarize(const ExperimentResult& result);

/// Mean over seeds of the final cross-client average accuracy.
double mean_final_accuracy(const ExperimentResult& result, Algorithm algorithm);
/// Mean over seeds and clients of the final ||P_k - T_G||^2.
double mean_final_gap(const ExperimentResult& result, Algorithm algorithm);

inline constexpr std::string_view kCurveHeader =
    "algorithm,seed,round,client,acc,task_loss,kl_loss,feat_loss,prox_loss";
inline constexpr std::string_view kSummaryHeader = "algorithm,n,mean_acc,std_acc";

std::string format_curve(const ExperimentResult& result);
std::string format_summary(const ExperimentResult& result);

/// Writes curve.csv, summary.csv and manifest.ini (the config with the
/// output directory set to `dir`) into `dir`, creating it if needed.
void export_results(const ExperimentResult& result, const ExperimentConfig& config, const std::filesystem::path& dir);

/// One subdirectory per value, named "<parameter>=<value>", plus
/// sweep.csv with columns parameter,value,algorithm,n,mean_acc,std_acc.
void export_sweep(const std::vector<SweepCell>& cells, SweepParameter parameter, const std::filesystem::path& dir);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ExperimentConfig config;
    Federation federation;
};

/// Binary snapshot of the config and the full federation state: models,
/// client data, RNG streams and metric history.
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const Federation& federation);

/// Throws IoError on a missing, truncated, corrupt or version-mismatched file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, and throws ConfigError when the stored model spec differs
/// from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace fedl2t
