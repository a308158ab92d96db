#include <safe/client.hpp>
#include <safe/error.hpp>
#include <safe/lbsn.hpp>
#include <safe/perturb.hpp>
#include <safe/rng.hpp>

#include <cmath>
#include <numeric>

namespace safe {

void ClientConfig::validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("invalid client config: " + why); };
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 2) fail("batch_size must be >= 2 (batch statistics)");
    if (!(lr >= 0)) fail("lr must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) fail("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
    if (!(fat_alpha >= 0)) fail("fat_alpha must be >= 0");
    if (!(awp_xi >= 0)) fail("awp_xi must be >= 0");
}

void to_json(nlohmann::json& j, const ClientConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.lr},
                       {"momentum", c.momentum},   {"weight_decay", c.weight_decay}, {"fat", c.fat},
                       {"fat_alpha", c.fat_alpha}, {"awp", c.awp},               {"awp_xi", c.awp_xi},
                       {"reset_optimizer", c.reset_optimizer}};
}

void from_json(const nlohmann::json& j, ClientConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.fat = j.value("fat", c.fat);
    c.fat_alpha = j.value("fat_alpha", c.fat_alpha);
    c.awp = j.value("awp", c.awp);
    c.awp_xi = j.value("awp_xi", c.awp_xi);
    c.reset_optimizer = j.value("reset_optimizer", c.reset_optimizer);
}

template <typename Scalar>
NdArray<Scalar> fat_perturb(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                            std::span<const int> labels, double alpha, const ForwardOptions& options) {
    if (!(alpha >= 0)) throw Error("fat_perturb: alpha must be nonnegative");
    if (alpha == 0) return batch;
    const auto radii = linf_radii(batch, alpha);
    const auto eval = evaluate(config, params, batch, labels, options, {false, true});
    return sign_step(batch, batch, eval.input_grad, radii, radii);
}

template <typename Scalar>
std::vector<std::string> awp_layers(const ParameterSet<Scalar>& params) {
    std::vector<std::string> layers;
    for (const auto& e : params.entries())
        if (awp_perturbed(e) && (layers.empty() || layers.back() != e.layer)) layers.push_back(e.layer);
    return layers;
}

template <typename Scalar>
double awp_layer_norm(const ParameterSet<Scalar>& params, const std::string& layer) {
    double ss = 0;
    bool any = false;
    for (const auto& e : params.entries())
        if (awp_perturbed(e) && e.layer == layer) {
            ss += e.value.array().template cast<double>().square().sum();
            any = true;
        }
    if (!any) throw ConfigError("awp: unknown layer '" + layer + "'");
    return std::sqrt(ss);
}

template <typename Scalar>
ParameterSet<Scalar> awp_nu(const ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, double xi) {
    if (!(xi >= 0)) throw Error("awp_nu: xi must be nonnegative");
    if (grads.size() != params.size()) throw PayloadError("awp_nu: gradient layout does not match parameters");
    ParameterSet<Scalar> nu = params.zeros_like();
    if (xi == 0) return nu;
    for (const auto& layer : awp_layers(params)) {
        const double theta_norm = awp_layer_norm(params, layer);
        double gg = 0;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (awp_perturbed(params.entries()[i]) && params.entries()[i].layer == layer)
                gg += grads.entries()[i].value.array().template cast<double>().square().sum();
        const double g_norm = std::sqrt(gg);
        if (!(g_norm > 0)) continue;
        const double k = xi * theta_norm / g_norm;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (awp_perturbed(params.entries()[i]) && params.entries()[i].layer == layer)
                nu.entries()[i].value.array() = (k * grads.entries()[i].value.array().template cast<double>()).template cast<Scalar>();
    }
    return nu;
}

template <typename Scalar>
Scalar awp_step(const ModelConfig& config, ParameterSet<Scalar>& params, ParameterSet<Scalar>& velocity, const ParameterSet<Scalar>& nu,
                const NdArray<Scalar>& batch, std::span<const int> labels, const ClientConfig& cc, const ForwardOptions& options) {
    auto& entries = params.entries();
    if (nu.size() != entries.size() || velocity.size() != entries.size()) throw PayloadError("awp_step: layouts do not match");
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (awp_perturbed(entries[i])) entries[i].value.array() += nu.entries()[i].value.array();

    const auto eval = evaluate(config, params, batch, labels, options, {true, false});
    if (!std::isfinite(double(eval.loss)))
        throw NonFiniteError("awp_step: non-finite loss " + std::to_string(double(eval.loss)));

    const Scalar lr = Scalar(cc.lr), mu = Scalar(cc.momentum), wd = Scalar(cc.weight_decay);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& e = entries[i];
        if (!is_learnable(e.tag)) continue;
        const auto& g = eval.param_grads.entries()[i].value;
        if (!g.all_finite()) throw NonFiniteError("awp_step: non-finite gradient for '" + e.name + "'");
        auto& v = velocity.entries()[i].value.array();
        if (e.tag == ParamTag::aggregable)
            v = mu * v + (g.array() + wd * e.value.array());
        else
            v = mu * v + g.array();
        e.value.array() -= lr * v;
    }
    update_running_stats(config, params, eval.bn_stats);
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (awp_perturbed(entries[i])) entries[i].value.array() -= nu.entries()[i].value.array();
    return eval.loss;
}

template <typename Scalar>
ParameterSet<Scalar> client_update(ClientState<Scalar>& state, const ParameterSet<Scalar>& payload, const ClientDataset& data,
                                   const ModelConfig& config, const ClientConfig& cc, int round) {
    cc.validate();
    if (data.size() == 0) throw ConfigError("client " + std::to_string(state.id) + ": empty dataset");
    const bool lbsn = config.norm == NormMode::lbsn;
    ParameterSet<Scalar> params = lbsn ? merge_bn(config, payload, state.local) : merge_bn(config, payload, ParameterSet<Scalar>{});
    if (state.velocity.size() != params.size() || cc.reset_optimizer) state.velocity = params.zeros_like();

    const Index n = data.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (int epoch = 0; epoch < cc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Index(0));
        Rng rng = make_rng(state.seed, {0x5f, std::uint64_t(round), std::uint64_t(epoch)});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (Index start = 0, b = 0; start < n; start += cc.batch_size, ++b) {
            const Index len = std::min(cc.batch_size, n - start);
            if (len < 2) break;
            const std::span<const Index> rows(order.data() + start, std::size_t(len));
            NdArray<Scalar> x = data.gather(rows).template cast<Scalar>();
            const auto y = data.gather_labels(rows);
            // One mask per step, shared by the FGSM, ν and update passes.
            const ForwardOptions opts{Mode::train, derive_seed(state.seed, {0xd0, std::uint64_t(round), std::uint64_t(epoch), std::uint64_t(b)})};
            if (cc.fat && cc.fat_alpha > 0) x = fat_perturb(config, params, x, y, cc.fat_alpha, opts);
            ParameterSet<Scalar> nu;
            if (cc.awp && cc.awp_xi > 0) {
                const auto g = evaluate(config, params, x, y, opts, {true, false});
                nu = awp_nu(params, g.param_grads, cc.awp_xi);
            } else {
                nu = params.zeros_like();
            }
            awp_step(config, params, state.velocity, nu, x, y, cc, opts);
            ++state.steps;
        }
    }
    if (lbsn) {
        state.local = local_bn(params);
        return strip_bn(params);
    }
    return params;
}

#define SAFE_INSTANTIATE_CLIENT(S)                                                                                                  \
    template NdArray<S> fat_perturb<S>(const ModelConfig&, const ParameterSet<S>&, const NdArray<S>&, std::span<const int>, double, \
                                       const ForwardOptions&);                                                                       \
    template std::vector<std::string> awp_layers<S>(const ParameterSet<S>&);                                                        \
    template double awp_layer_norm<S>(const ParameterSet<S>&, const std::string&);                                                  \
    template ParameterSet<S> awp_nu<S>(const ParameterSet<S>&, const ParameterSet<S>&, double);                                     \
    template S awp_step<S>(const ModelConfig&, ParameterSet<S>&, ParameterSet<S>&, const ParameterSet<S>&, const NdArray<S>&,       \
                           std::span<const int>, const ClientConfig&, const ForwardOptions&);                                        \
    template ParameterSet<S> client_update<S>(ClientState<S>&, const ParameterSet<S>&, const ClientDataset&, const ModelConfig&,    \
                                              const ClientConfig&, int);

SAFE_INSTANTIATE_CLIENT(float)
SAFE_INSTANTIATE_CLIENT(double)

}  // namespace safe
