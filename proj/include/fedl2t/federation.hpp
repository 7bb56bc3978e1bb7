#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedl2t/data.hpp"
#include "fedl2t/nn.hpp"
#include "fedl2t/rng.hpp"

namespace fedl2t {

enum class Algorithm { Local, FedAvg, Ditto, FML, L2T_C, L2T_CG, FedL2T };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::Local, Algorithm::FedAvg, Algorithm::Ditto, Algorithm::FML,
                                               Algorithm::L2T_C, Algorithm::L2T_CG, Algorithm::FedL2T};

std::string_view to_string(Algorithm a);
/// Accepts the canonical names ("FedL2T", "L2T_C", ...) and "L2T-C" style
/// dashes. Throws ConfigError for anything else.
Algorithm parse_algorithm(std::string_view name);

struct HyperParams {
    double eta = 0.01;
    double mu = 0.2;
    double lambda_c = 0.5;
    std::size_t rounds = 100;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    /// Fixed mutual-distillation weight of the FML baseline.
    double fml_weight = 0.25;
    Algorithm algorithm = Algorithm::FedL2T;
    std::uint64_t seed = 0;

    void validate() const;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct ClientState {
    std::size_t id = 1;  // 1-based
    ModelParams personalized;
    ModelParams transfer;
    SampleBatch train;
    SampleBatch test;
    RngStream rng;
};

/// Entry k (0-based position) holds the 1-based peer-teacher id of client
/// k + 1. Never self; repeats allowed.
struct CrossClientQueue {
    std::vector<std::size_t> assignments;

    std::size_t peer_index(std::size_t k) const { return assignments[k] - 1; }
    friend bool operator==(const CrossClientQueue&, const CrossClientQueue&) = default;
};

struct GlobalState {
    ModelParams t_global;
    std::size_t round = 0;
};

/// Mean per-batch components of the evaluated model's objective.
struct ClientLosses {
    double task = 0.0;
    double kl = 0.0;
    double feat = 0.0;
    double prox = 0.0;

    friend bool operator==(const ClientLosses&, const ClientLosses&) = default;
};

struct ClientRoundMetrics {
    std::size_t client = 1;
    double acc = 0.0;
    ClientLosses losses;
    /// ||P_k - T_G||^2 after aggregation; NaN for server-free variants.
    double global_gap = std::numeric_limits<double>::quiet_NaN();
};

struct RoundMetrics {
    std::size_t round = 0;  // 1-based
    std::vector<ClientRoundMetrics> clients;
};

struct RunResult {
    Algorithm algorithm = Algorithm::FedL2T;
    std::uint64_t seed = 0;
    std::vector<RoundMetrics> rounds;
};

/// Each entry drawn uniformly from the K - 1 ids other than the client's
/// own. Throws ConfigError when K < 2.
CrossClientQueue generate_queue(std::size_t clients, RngStream& rng);

/// Shuffled mini-batches of the client's training data, last short batch kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, RngStream& rng);

/// One FedL2T local update: E epochs over D_k; per batch both objectives are
/// built from pre-update forwards of P_k, T_k and the frozen peer, then both
/// SGD steps apply. `peer` may be null only when lambda_c == 0.
ClientLosses client_update_fedl2t(ClientState& state, const ModelParams* peer, const ModelParams& global,
                                  const HyperParams& hp);

/// Local update for any variant. `peer` is required for the peer-teacher
/// variants, `global` for the server-backed ones.
ClientLosses client_update(Algorithm algorithm, ClientState& state, const ModelParams* peer, const ModelParams* global,
                           const HyperParams& hp);

/// sum_k (n_k / n) models[k]. Throws ContractViolation on empty input,
/// layout mismatch, or a zero count.
ModelParams aggregate(std::span<const ModelParams> models, std::span<const std::size_t> counts);

/// Round-based simulation of one algorithm under one seed.
class Federation {
public:
    Federation(Algorithm algorithm, const HyperParams& hp, const ModelSpec& spec, std::vector<ClientData> data);
    /// Rebuild from checkpointed parts.
    Federation(Algorithm algorithm, const HyperParams& hp, std::vector<ClientState> clients, GlobalState global,
               RngStream server_rng, std::vector<RoundMetrics> history);

    /// One broadcast / queue / local-update / aggregate cycle. `order` is
    /// the client execution order (default 0..K-1); results do not depend
    /// on it. `workers` > 1 runs client updates on that many threads.
    const RoundMetrics& run_round(std::span<const std::size_t> order = {}, std::size_t workers = 1);
    /// Runs rounds until hp.rounds is reached.
    void run(std::size_t workers = 1);

    bool finished() const { return global_.round >= hp_.rounds; }
    Algorithm algorithm() const { return algorithm_; }
    const HyperParams& hyper() const { return hp_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    std::vector<ClientState>& clients() { return clients_; }
    const GlobalState& global() const { return global_; }
    const RngStream& server_rng() const { return server_rng_; }
    const std::vector<RoundMetrics>& history() const { return history_; }
    const std::optional<CrossClientQueue>& last_queue() const { return last_queue_; }

    RunResult result() const { return {algorithm_, hp_.seed, history_}; }

private:
    bool uses_server() const;
    bool uses_peers() const;

    Algorithm algorithm_;
    HyperParams hp_;
    std::vector<ClientState> clients_;
    GlobalState global_;
    RngStream server_rng_;
    std::vector<RoundMetrics> history_;
    std::optional<CrossClientQueue> last_queue_;
};

/// Runs `variant` for hp.rounds rounds on freshly initialized clients.
RunResult run_algorithm(Algorithm variant, const HyperParams& hp, const ModelSpec& spec,
                        const std::vector<ClientData>& data, std::size_t workers = 1);

}  // namespace fedl2t
