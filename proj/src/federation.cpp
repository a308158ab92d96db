#include <safe/error.hpp>
#include <safe/federation.hpp>
#include <safe/lbsn.hpp>
#include <safe/rng.hpp>

#include <algorithm>
#include <chrono>
#include <numeric>

namespace safe {

int FederationConfig::resolved_clients_per_round(int clients) const {
    return clients_per_round > 0 ? clients_per_round : std::max(1, clients / 2);
}

void FederationConfig::validate(int clients) const {
    if (clients < 1) throw ConfigError("federation: need at least one client");
    if (rounds < 1) throw ConfigError("federation: rounds must be >= 1");
    const int m = resolved_clients_per_round(clients);
    if (m < 1 || m > clients)
        throw ConfigError("federation: clients_per_round " + std::to_string(m) + " outside [1, " + std::to_string(clients) + "]");
}

void to_json(nlohmann::json& j, const FederationConfig& c) {
    j = nlohmann::json{{"rounds", c.rounds},
                       {"clients_per_round", c.clients_per_round},
                       {"seed", c.seed},
                       {"failure", c.failure == FailurePolicy::abort ? "abort" : "drop"}};
}

void from_json(const nlohmann::json& j, FederationConfig& c) {
    c.rounds = j.value("rounds", c.rounds);
    c.clients_per_round = j.value("clients_per_round", c.clients_per_round);
    c.seed = j.value("seed", c.seed);
    const std::string f = j.value("failure", std::string(c.failure == FailurePolicy::abort ? "abort" : "drop"));
    if (f == "abort")
        c.failure = FailurePolicy::abort;
    else if (f == "drop")
        c.failure = FailurePolicy::drop;
    else
        throw ConfigError("unknown failure policy '" + f + "'");
}

void to_json(nlohmann::json& j, const RoundReport& r) {
    j = nlohmann::json{{"round", r.round},          {"selected", r.selected},    {"samples", r.samples},
                       {"total_samples", r.total_samples}, {"bytes_down", r.bytes_down}, {"bytes_up", r.bytes_up},
                       {"failed", r.failed},        {"seconds", r.seconds}};
}

std::vector<int> select_clients(int round, int clients, int m, std::uint64_t seed) {
    if (m < 1 || m > clients)
        throw ConfigError("select_clients: cannot pick " + std::to_string(m) + " of " + std::to_string(clients) + " clients");
    std::vector<int> ids(static_cast<std::size_t>(clients));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng = make_rng(seed, {0x5e1, std::uint64_t(round)});
    for (int i = 0; i < m; ++i) {
        const auto j = std::size_t(i) + uniform_index(rng, std::uint64_t(clients - i));
        std::swap(ids[std::size_t(i)], ids[j]);
    }
    ids.resize(std::size_t(m));
    std::sort(ids.begin(), ids.end());
    return ids;
}

template <typename Scalar>
ParameterSet<Scalar> aggregate(std::vector<WeightedPayload<Scalar>> payloads, bool allow_bn) {
    if (payloads.empty()) throw Error("aggregate: no payloads");
    std::sort(payloads.begin(), payloads.end(), [](const auto& a, const auto& b) { return a.client < b.client; });
    double total = 0;
    for (std::size_t k = 0; k < payloads.size(); ++k) {
        if (k > 0 && payloads[k].client == payloads[k - 1].client)
            throw PayloadError("aggregate: duplicate payload from client " + std::to_string(payloads[k].client));
        if (!(payloads[k].samples > 0)) throw PayloadError("aggregate: sample counts must be positive");
        total += payloads[k].samples;
        if (!allow_bn)
            for (const auto& e : payloads[k].params.entries())
                if (is_bn(e.tag))
                    throw PayloadError("aggregate: normalization tensor '" + e.name + "' (" + std::string(tag_name(e.tag)) +
                                       ") in a payload from client " + std::to_string(payloads[k].client));
    }
    const auto& ref = payloads.front().params;
    ParameterSet<Scalar> out = ref.zeros_like();
    for (std::size_t t = 0; t < ref.size(); ++t) {
        const auto& r = ref.entries()[t];
        Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(r.value.size());
        for (const auto& p : payloads) {
            if (p.params.size() != ref.size()) throw PayloadError("aggregate: payloads carry different tensor counts");
            const auto& e = p.params.entries()[t];
            if (e.name != r.name || e.tag != r.tag) throw PayloadError("aggregate: tensor '" + e.name + "' does not match '" + r.name + "'");
            require_same_shape("aggregate", r.value, e.value);
            acc += (p.samples / total) * e.value.array().template cast<double>();
        }
        out.entries()[t].value.array() = acc.cast<Scalar>();
    }
    return out;
}

template <typename Scalar>
FederationResult<Scalar> run_federation(const FederationConfig& fed, const ModelConfig& config, const std::vector<ClientDataset>& data,
                                        const ClientConfig& cc, const FederationHooks& hooks) {
    const int k_clients = int(data.size());
    fed.validate(k_clients);
    config.validate();
    cc.validate();
    const int m = fed.resolved_clients_per_round(k_clients);
    const bool lbsn = config.norm == NormMode::lbsn;

    const auto initial = build_model<Scalar>(config, derive_seed(fed.seed, {0x1a}));
    FederationResult<Scalar> result;
    for (int k = 0; k < k_clients; ++k) {
        ClientState<Scalar> s;
        s.id = k;
        s.seed = derive_seed(fed.seed, {0xc1, std::uint64_t(k)});
        if (lbsn) s.local = local_bn(initial);
        result.clients.push_back(std::move(s));
    }
    ParameterSet<Scalar> global = lbsn ? strip_bn(initial) : initial;

    for (int r = 0; r < fed.rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        RoundReport report;
        report.round = r;
        report.selected = select_clients(r, k_clients, m, fed.seed);
        const io::Bytes down = serialize_payload(global);
        std::vector<WeightedPayload<Scalar>> received;
        for (int k : report.selected) {
            const auto& d = data[std::size_t(k)];
            report.samples.push_back(d.size());
            report.bytes_down.push_back(down.size());
            if (hooks.observer) hooks.observer({r, k, Direction::to_client, down});
            const ClientState<Scalar> snapshot = result.clients[std::size_t(k)];
            try {
                if (hooks.before_client) hooks.before_client(r, k);
                const auto incoming = deserialize_payload<Scalar>(down);
                const auto update = client_update(result.clients[std::size_t(k)], incoming, d, config, cc, r);
                const io::Bytes up = serialize_payload(update);
                report.bytes_up.push_back(up.size());
                if (hooks.observer) hooks.observer({r, k, Direction::to_server, up});
                received.push_back({k, double(d.size()), deserialize_payload<Scalar>(up)});
            } catch (const std::exception& e) {
                if (fed.failure == FailurePolicy::abort)
                    throw Error("round " + std::to_string(r) + ", client " + std::to_string(k) + ": " + e.what());
                result.clients[std::size_t(k)] = snapshot;
                report.bytes_up.push_back(0);
                report.failed.push_back(k);
            }
        }
        if (received.empty()) throw Error("round " + std::to_string(r) + ": every selected client failed");
        for (const auto& p : received) report.total_samples += p.samples;
        global = aggregate(std::move(received), !lbsn);
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.rounds.push_back(std::move(report));
    }

    if (lbsn) {
        std::vector<ClientBn<Scalar>> bns;
        for (int k = 0; k < k_clients; ++k) bns.push_back({result.clients[std::size_t(k)].local, double(data[std::size_t(k)].size())});
        result.model = merge_bn(config, global, finalize_global_bn(bns));
    } else {
        result.model = global;
    }
    for (const auto& c : result.clients) result.gradient_steps += c.steps;
    return result;
}

#define SAFE_INSTANTIATE_FEDERATION(S)                                                                                           \
    template ParameterSet<S> aggregate<S>(std::vector<WeightedPayload<S>>, bool);                                               \
    template FederationResult<S> run_federation<S>(const FederationConfig&, const ModelConfig&, const std::vector<ClientDataset>&, \
                                                   const ClientConfig&, const FederationHooks&);

SAFE_INSTANTIATE_FEDERATION(float)
SAFE_INSTANTIATE_FEDERATION(double)

}  // namespace safe
