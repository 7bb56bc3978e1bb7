#include "fedl2t/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedl2t/error.hpp"
#include "fedl2t/losses.hpp"

namespace fedl2t {

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Local: return "Local";
        case Algorithm::FedAvg: return "FedAvg";
        case Algorithm::Ditto: return "Ditto";
        case Algorithm::FML: return "FML";
        case Algorithm::L2T_C: return "L2T_C";
        case Algorithm::L2T_CG: return "L2T_CG";
        case Algorithm::FedL2T: return "FedL2T";
    }
    return "?";
}

Algorithm parse_algorithm(std::string_view name) {
    std::string canon(name);
    std::replace(canon.begin(), canon.end(), '-', '_');
    for (Algorithm a : kAllAlgorithms) {
        if (canon == to_string(a)) return a;
    }
    throw ConfigError("unknown algorithm '" + std::string(name) + "'", "algorithms");
}

void HyperParams::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("must be > 0", "eta");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("must be >= 0", "mu");
    if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c)) throw ConfigError("must be >= 0", "lambda_c");
    if (!(fml_weight >= 0.0) || !std::isfinite(fml_weight)) throw ConfigError("must be >= 0", "fml_weight");
    if (rounds < 1) throw ConfigError("must be >= 1", "rounds");
    if (local_epochs < 1) throw ConfigError("must be >= 1", "local_epochs");
    if (batch_size < 1) throw ConfigError("must be >= 1", "batch_size");
}

CrossClientQueue generate_queue(std::size_t clients, RngStream& rng) {
    if (clients < 2) throw ConfigError("cross-client queue needs at least 2 clients", "clients");
    CrossClientQueue q;
    q.assignments.resize(clients);
    for (std::size_t k = 0; k < clients; ++k) {
        // Draw from the K - 1 other ids by skipping over self.
        std::size_t c = rng.below(clients - 1);
        if (c >= k) ++c;
        q.assignments[k] = c + 1;
    }
    return q;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

namespace {

/// Which objectives a variant trains, per batch.
struct UpdatePlan {
    bool train_transfer = false;
    bool train_personal = false;
    bool adaptive_mutual = false;  // adaptive KL + feature MSE between P_k and T_k
    bool fixed_mutual = false;     // FML: unscaled KL both ways
    bool peer = false;             // adaptive distillation from the frozen peer
    bool prox = false;             // P_k pulled towards the round's global model
};

UpdatePlan plan_for(Algorithm a) {
    UpdatePlan p;
    switch (a) {
        case Algorithm::Local:
            p.train_personal = true;
            break;
        case Algorithm::FedAvg:
            p.train_transfer = true;
            break;
        case Algorithm::Ditto:
            p.train_transfer = p.train_personal = p.prox = true;
            break;
        case Algorithm::FML:
            p.train_transfer = p.train_personal = p.fixed_mutual = true;
            break;
        case Algorithm::L2T_C:
            p.train_personal = p.peer = true;
            break;
        case Algorithm::L2T_CG:
        case Algorithm::FedL2T:
            p.train_transfer = p.train_personal = p.adaptive_mutual = p.peer = p.prox = true;
            break;
    }
    return p;
}

ClientLosses run_update(const UpdatePlan& plan, ClientState& s, const ModelParams* peer, const ModelParams* global,
                        const HyperParams& hp) {
    const bool use_peer = plan.peer && hp.lambda_c > 0.0;
    const bool use_prox = plan.prox && hp.mu > 0.0;
    ModelParams& P = s.personalized;
    ModelParams& T = s.transfer;
    if (use_peer && (peer == nullptr || !peer->congruent(P))) {
        throw ContractViolation("client update: peer teacher missing or incongruent");
    }
    if ((use_prox || plan.train_transfer) && global != nullptr && !global->congruent(P)) {
        throw ContractViolation("client update: global model incongruent");
    }
    if (use_prox && global == nullptr) throw ContractViolation("client update: proximal term needs the global model");
    if (!T.congruent(P)) throw ContractViolation("client update: personalized/transfer layout mismatch");

    GradBuffer gP(P);
    GradBuffer gT(T);
    ClientLosses sum;
    std::size_t batches_seen = 0;

    for (std::size_t e = 0; e < hp.local_epochs; ++e) {
        for (const auto& idx : epoch_batches(s.train.size(), hp.batch_size, s.rng)) {
            const SampleBatch b = s.train.subset(idx);
            std::optional<ForwardTrace> fP;
            std::optional<ForwardTrace> fT;
            std::optional<LossTerm> ceP;
            std::optional<LossTerm> ceT;
            const bool need_P = plan.train_personal || plan.adaptive_mutual || plan.fixed_mutual;
            const bool need_T = plan.train_transfer;
            if (need_P) {
                fP = forward(P, b.x);
                ceP = task_ce(*fP, b.y);
            }
            if (need_T) {
                fT = forward(T, b.x);
                ceT = task_ce(*fT, b.y);
            }

            // Transfer-model objective.
            LossTerm lossT;
            if (plan.train_transfer) {
                if (plan.adaptive_mutual) {
                    TransferLossTerms tt{
                        *ceT,
                        adaptive_scale(kl_output(fP->probs, *fT), ceP->value, ceT->value),
                        adaptive_scale(mse_features(fP->features(), *fT), ceP->value, ceT->value),
                    };
                    lossT = compose_T_loss(tt);
                } else if (plan.fixed_mutual) {
                    const LossTerm kl = weighted(kl_output(fP->probs, *fT), hp.fml_weight);
                    const LossTerm* parts[] = {&*ceT, &kl};
                    lossT = sum_terms(parts);
                } else {
                    lossT = *ceT;
                }
            }

            // Personalized-model objective.
            LossTerm lossP;
            ClientLosses parts;
            if (plan.train_personal) {
                PersonalLossTerms pt{*ceP, {}, {}, std::nullopt, std::nullopt, std::nullopt};
                if (plan.adaptive_mutual) {
                    pt.kl = adaptive_scale(kl_output(fT->probs, *fP), ceP->value, ceT->value);
                    pt.feat = adaptive_scale(mse_features(fT->features(), *fP), ceP->value, ceT->value);
                } else if (plan.fixed_mutual) {
                    pt.kl = weighted(kl_output(fT->probs, *fP), hp.fml_weight);
                }
                if (use_peer) {
                    const ForwardTrace fC = forward(*peer, b.x);
                    const double ceC = task_ce(fC, b.y).value;
                    pt.peer_kl = adaptive_scale(kl_output(fC.probs, *fP), ceC, ceP->value);
                    pt.peer_feat = adaptive_scale(mse_features(fC.features(), *fP), ceC, ceP->value);
                }
                if (use_prox) pt.prox = proximal(P, *global, hp.mu);
                lossP = compose_P_loss(pt, use_peer ? hp.lambda_c : 0.0);

                parts.task = pt.task.value;
                parts.kl = pt.kl.value + (use_peer ? hp.lambda_c * pt.peer_kl->value : 0.0);
                parts.feat = pt.feat.value + (use_peer ? hp.lambda_c * pt.peer_feat->value : 0.0);
                parts.prox = pt.prox ? pt.prox->value : 0.0;
            } else {
                parts.task = ceT->value;
                parts.kl = lossT.value - ceT->value;
            }

            // Both steps use gradients from the pre-update forwards.
            if (plan.train_transfer) {
                gT.zero();
                backward(T, *fT, lossT.d_logits, lossT.d_features, gT);
            }
            if (plan.train_personal) {
                gP.zero();
                backward(P, *fP, lossP.d_logits, lossP.d_features, gP);
                if (!lossP.d_params.empty()) gP.add_scaled(lossP.d_params);
            }
            if (plan.train_transfer) sgd_step(T, gT, hp.eta);
            if (plan.train_personal) sgd_step(P, gP, hp.eta);

            sum.task += parts.task;
            sum.kl += parts.kl;
            sum.feat += parts.feat;
            sum.prox += parts.prox;
            ++batches_seen;
        }
    }
    if (batches_seen > 0) {
        const double inv = 1.0 / static_cast<double>(batches_seen);
        sum.task *= inv;
        sum.kl *= inv;
        sum.feat *= inv;
        sum.prox *= inv;
    }
    return sum;
}

}  // namespace

ClientLosses client_update_fedl2t(ClientState& state, const ModelParams* peer, const ModelParams& global,
                                  const HyperParams& hp) {
    return run_update(plan_for(Algorithm::FedL2T), state, peer, &global, hp);
}

ClientLosses client_update(Algorithm algorithm, ClientState& state, const ModelParams* peer, const ModelParams* global,
                           const HyperParams& hp) {
    if (algorithm == Algorithm::L2T_CG) {
        HyperParams no_prox = hp;
        no_prox.mu = 0.0;
        return run_update(plan_for(algorithm), state, peer, global, no_prox);
    }
    return run_update(plan_for(algorithm), state, peer, global, hp);
}

ModelParams aggregate(std::span<const ModelParams> models, std::span<const std::size_t> counts) {
    if (models.empty()) throw ContractViolation("aggregate: no models");
    if (models.size() != counts.size()) throw ContractViolation("aggregate: one count per model required");
    std::size_t n = 0;
    for (std::size_t k = 0; k < models.size(); ++k) {
        if (!models[k].congruent(models[0])) throw ContractViolation("aggregate: layout mismatch");
        if (counts[k] == 0) throw ContractViolation("aggregate: sample counts must be >= 1");
        n += counts[k];
    }
    ModelParams out = models[0];
    auto acc = out.values();
    const double w0 = static_cast<double>(counts[0]) / static_cast<double>(n);
    for (auto& v : acc) v *= w0;
    for (std::size_t k = 1; k < models.size(); ++k) {
        const double w = static_cast<double>(counts[k]) / static_cast<double>(n);
        const auto src = models[k].values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * src[i];
    }
    return out;
}

namespace {

void for_each_client(std::span<const std::size_t> order, std::size_t workers,
                     const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || order.size() <= 1) {
        for (std::size_t k : order) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, order.size()); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < order.size(); i = next++) {
                try {
                    fn(order[i]);
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

}  // namespace

Federation::Federation(Algorithm algorithm, const HyperParams& hp, const ModelSpec& spec, std::vector<ClientData> data)
    : algorithm_(algorithm),
      hp_(hp),
      global_{ModelParams(spec), 0},
      server_rng_(hp.seed, "server") {
    hp_.algorithm = algorithm;
    hp_.validate();
    if (data.empty()) throw ConfigError("need at least one client", "clients");
    if (uses_peers() && data.size() < 2) throw ConfigError("peer-teacher variants need at least 2 clients", "clients");
    RngStream init_rng(hp.seed, "init");
    global_.t_global = init_model(spec, init_rng);
    clients_.reserve(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
        if (data[k].train.empty()) throw ConfigError("client has no training data", "samples_per_client");
        if (data[k].train.dim() != spec.input_dim) throw ConfigError("data dimension does not match model", "dim");
        clients_.push_back(ClientState{k + 1, global_.t_global, global_.t_global, std::move(data[k].train),
                                       std::move(data[k].test), RngStream(hp.seed, "client", k)});
    }
}

Federation::Federation(Algorithm algorithm, const HyperParams& hp, std::vector<ClientState> clients,
                       GlobalState global, RngStream server_rng, std::vector<RoundMetrics> history)
    : algorithm_(algorithm),
      hp_(hp),
      clients_(std::move(clients)),
      global_(std::move(global)),
      server_rng_(std::move(server_rng)),
      history_(std::move(history)) {
    hp_.algorithm = algorithm;
    hp_.validate();
}

bool Federation::uses_server() const {
    return algorithm_ != Algorithm::Local && algorithm_ != Algorithm::L2T_C;
}

bool Federation::uses_peers() const {
    return algorithm_ == Algorithm::L2T_C || algorithm_ == Algorithm::L2T_CG || algorithm_ == Algorithm::FedL2T;
}

const RoundMetrics& Federation::run_round(std::span<const std::size_t> order, std::size_t workers) {
    const std::size_t K = clients_.size();
    std::vector<std::size_t> default_order;
    if (order.empty()) {
        default_order.resize(K);
        std::iota(default_order.begin(), default_order.end(), 0);
        order = default_order;
    }
    {
        std::vector<bool> seen(K, false);
        if (order.size() != K) throw ContractViolation("run_round: order must list every client once");
        for (std::size_t k : order) {
            if (k >= K || seen[k]) throw ContractViolation("run_round: order must list every client once");
            seen[k] = true;
        }
    }

    const ModelParams round_global = global_.t_global;
    if (uses_server()) {
        for (auto& c : clients_) c.transfer = round_global;
    }

    std::vector<ModelParams> peers;
    if (uses_peers()) {
        last_queue_ = generate_queue(K, server_rng_);
        peers.reserve(K);
        for (const auto& c : clients_) peers.push_back(c.personalized);
    }

    std::vector<ClientLosses> losses(K);
    for_each_client(order, workers, [&](std::size_t k) {
        const ModelParams* peer = uses_peers() ? &peers[last_queue_->peer_index(k)] : nullptr;
        losses[k] = client_update(algorithm_, clients_[k], peer, uses_server() ? &round_global : nullptr, hp_);
    });

    if (uses_server()) {
        std::vector<ModelParams> transfers;
        std::vector<std::size_t> counts;
        transfers.reserve(K);
        for (const auto& c : clients_) {
            transfers.push_back(c.transfer);
            counts.push_back(c.train.size());
        }
        global_.t_global = aggregate(transfers, counts);
    }
    ++global_.round;

    RoundMetrics m;
    m.round = global_.round;
    m.clients.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = clients_[k];
        const ModelParams& evaluated = algorithm_ == Algorithm::FedAvg ? global_.t_global : c.personalized;
        auto& cm = m.clients[k];
        cm.client = c.id;
        cm.acc = accuracy(evaluated, c.test);
        cm.losses = losses[k];
        if (uses_server()) cm.global_gap = param_sq_distance(evaluated, global_.t_global);
    }
    history_.push_back(std::move(m));
    return history_.back();
}

void Federation::run(std::size_t workers) {
    while (!finished()) run_round({}, workers);
}

RunResult run_algorithm(Algorithm variant, const HyperParams& hp, const ModelSpec& spec,
                        const std::vector<ClientData>& data, std::size_t workers) {
    Federation fed(variant, hp, spec, data);
    fed.run(workers);
    return fed.result();
}

}  // namespace fedl2t
