#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedl2t/data.hpp"
#include "fedl2t/federation.hpp"
#include "fedl2t/nn.hpp"

namespace fedl2t {

/// Everything one experiment needs. Each seed in `seeds` drives both the
/// data generator and the training streams; `data.seed` and `hyper.seed`
/// are overwritten per run.
struct ExperimentConfig {
    DataConfig data;
    ModelSpec model;
    HyperParams hyper;
    std::vector<Algorithm> algorithms{std::begin(kAllAlgorithms), std::end(kAllAlgorithms)};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::filesystem::path output_dir = "results";
    std::size_t workers = 1;

    /// Throws ConfigError naming the offending key.
    void validate() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// INI file with sections [data], [model], [hyper] and [run]:
///
///   [data]  clients samples_per_client dim heterogeneity class_sep
///           test_fraction label_ratio
///   [model] base_hidden (comma list; the last width is the feature width)
///   [hyper] eta mu lambda_c rounds local_epochs batch_size fml_weight
///   [run]   algorithms seeds (comma lists) output_dir workers
///
/// Omitted keys keep their defaults. Unknown sections or keys, unparsable
/// values and invalid settings throw ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// Inverse of parse_config; doubles are written with round-trip precision.
std::string format_config(const ExperimentConfig& config);

}  // namespace fedl2t
