#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedl2t/batch.hpp"
#include "fedl2t/nn.hpp"
#include "fedl2t/rng.hpp"

namespace fedl2t {

/// Synthetic non-IID benchmark. Each client sees the same two Gaussian
/// classes seen through its own rotation and mean shift; `heterogeneity`
/// scales both, 0 meaning every client shares one distribution.
struct DataConfig {
    std::size_t clients = 8;
    std::size_t samples_per_client = 400;
    std::size_t dim = 16;
    double heterogeneity = 0.7;
    double class_sep = 2.0;
    double test_fraction = 0.25;
    double label_ratio = 1.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ClientData {
    SampleBatch train;
    SampleBatch test;
};

/// Balanced classes, stratified train/test split, z-scored with statistics
/// of the training split. A pure function of the config. `label_ratio` is
/// not applied here; see apply_label_ratio.
std::vector<ClientData> generate(const DataConfig& config);

/// Keeps ceil(ratio * n) training samples, stratified by class with at
/// least one sample of each class present. Order of kept rows is preserved.
SampleBatch subsample_labels(const SampleBatch& train, double ratio, RngStream& rng);

/// Subsamples every client's training split with its own stream derived
/// from `seed`. No-op when ratio == 1.
void apply_label_ratio(std::vector<ClientData>& clients, double ratio, std::uint64_t seed);

/// Fraction of rows whose argmax matches the label; ties go to class 0.
double accuracy(const ModelParams& model, const SampleBatch& test);

/// Text export: first line "<d>,<K>", then one row per sample
/// "client_id,split,y,x_1,...,x_d" with 1-based client ids and split in
/// {train, test}. Values use round-trip precision.
void export_dataset(const std::filesystem::path& path, const std::vector<ClientData>& clients);
std::vector<ClientData> import_dataset(const std::filesystem::path& path);

}  // namespace fedl2t
