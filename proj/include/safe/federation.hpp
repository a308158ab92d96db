#pragma once

// Server side: round loop, client selection, sample-weighted aggregation.
// Every tensor crossing the client/server boundary goes through the payload
// serializer so observers see the exact bytes.

#include <safe/client.hpp>
#include <safe/data.hpp>
#include <safe/io.hpp>
#include <safe/model.hpp>

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace safe {

enum class FailurePolicy { abort, drop };

struct FederationConfig {
    int rounds = 100;
    /// Clients per round; 0 selects half of the clients (at least one).
    int clients_per_round = 0;
    std::uint64_t seed = 0;
    FailurePolicy failure = FailurePolicy::abort;

    int resolved_clients_per_round(int clients) const;
    void validate(int clients) const;
};

void to_json(nlohmann::json& j, const FederationConfig& c);
void from_json(const nlohmann::json& j, FederationConfig& c);

/// m distinct client ids drawn uniformly for round r, in increasing order.
std::vector<int> select_clients(int round, int clients, int m, std::uint64_t seed);

template <typename Scalar>
struct WeightedPayload {
    int client = 0;
    double samples = 0;
    ParameterSet<Scalar> params;
};

/// Σ (n_k / N) θ′_k tensor by tensor. Payloads are combined in client-id
/// order with double accumulation, so the result does not depend on the
/// order they are passed in. Normalization tensors are rejected unless
/// `allow_bn` (conventional-BN ablations).
template <typename Scalar>
ParameterSet<Scalar> aggregate(std::vector<WeightedPayload<Scalar>> payloads, bool allow_bn = false);

struct RoundReport {
    int round = 0;
    std::vector<int> selected;
    std::vector<Index> samples;
    double total_samples = 0;
    std::vector<std::size_t> bytes_down;
    std::vector<std::size_t> bytes_up;
    std::vector<int> failed;
    double seconds = 0;
};

void to_json(nlohmann::json& j, const RoundReport& r);

enum class Direction { to_client, to_server };

struct PayloadEvent {
    int round;
    int client;
    Direction direction;
    std::span<const std::uint8_t> bytes;
};

struct FederationHooks {
    /// Sees every serialized payload.
    std::function<void(const PayloadEvent&)> observer;
    /// Called before each client update; throwing simulates a client failure.
    std::function<void(int round, int client)> before_client;
};

template <typename Scalar>
struct FederationResult {
    /// Complete test model (aggregated tensors + finalized normalization).
    ParameterSet<Scalar> model;
    std::vector<RoundReport> rounds;
    std::vector<ClientState<Scalar>> clients;
    long gradient_steps = 0;
};

template <typename Scalar>
FederationResult<Scalar> run_federation(const FederationConfig& fed, const ModelConfig& config, const std::vector<ClientDataset>& data,
                                        const ClientConfig& cc, const FederationHooks& hooks = {});

}  // namespace safe
