#pragma once

// Client-side local optimization: FGSM adversarial batches in input space and
// one-step adversarial weight perturbation in parameter space.

#include <safe/data.hpp>
#include <safe/model.hpp>

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace safe {

struct ClientConfig {
    int epochs = 2;
    Index batch_size = 32;
    double lr = 0.005;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool fat = true;
    /// FGSM magnitude in units of per-trial std.
    double fat_alpha = 0.03;
    bool awp = true;
    double awp_xi = 0.01;
    /// Zero the momentum buffers at the start of every local update.
    bool reset_optimizer = false;

    void validate() const;
};

void to_json(nlohmann::json& j, const ClientConfig& c);
void from_json(const nlohmann::json& j, ClientConfig& c);

/// X + α·s_i·sign(∇_X L) using the model's batch-statistics forward on X.
template <typename Scalar>
NdArray<Scalar> fat_perturb(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                            std::span<const int> labels, double alpha, const ForwardOptions& options);

/// Tensors that adversarial weight perturbation acts on: aggregable weights
/// except the classifier bias.
template <typename Scalar>
bool awp_perturbed(const Parameter<Scalar>& p) {
    return p.tag == ParamTag::aggregable && p.name != "classifier.bias";
}

/// Layer ids of the perturbed tensors, in model order.
template <typename Scalar>
std::vector<std::string> awp_layers(const ParameterSet<Scalar>& params);

/// Euclidean norm over the perturbed tensors of one layer.
template <typename Scalar>
double awp_layer_norm(const ParameterSet<Scalar>& params, const std::string& layer);

/// ν_l = ξ · g_l / ‖g_l‖ · ‖θ_l‖ per layer; zero for untouched tensors and
/// for layers whose gradient vanishes. `grads` has the layout of `params`.
template <typename Scalar>
ParameterSet<Scalar> awp_nu(const ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, double xi);

/// θ ← (θ + ν) − η·update(∇L(θ + ν)) − ν with SGD, momentum and weight decay
/// on aggregable tensors. `velocity` holds one buffer per learnable tensor
/// and is updated in place. Returns the loss at θ + ν.
template <typename Scalar>
Scalar awp_step(const ModelConfig& config, ParameterSet<Scalar>& params, ParameterSet<Scalar>& velocity, const ParameterSet<Scalar>& nu,
                const NdArray<Scalar>& batch, std::span<const int> labels, const ClientConfig& cc, const ForwardOptions& options);

/// State a client keeps between rounds.
template <typename Scalar>
struct ClientState {
    int id = 0;
    std::uint64_t seed = 0;
    /// Normalization tensors under LBSN; empty otherwise.
    ParameterSet<Scalar> local;
    ParameterSet<Scalar> velocity;
    long steps = 0;
};

/// One local update: merge local normalization, E epochs of shuffled
/// batches (a final batch smaller than 2 is dropped), FGSM batch, ν, update.
/// Returns the payload to send back (aggregable tensors under LBSN, the whole
/// model otherwise).
template <typename Scalar>
ParameterSet<Scalar> client_update(ClientState<Scalar>& state, const ParameterSet<Scalar>& payload, const ClientDataset& data,
                                   const ModelConfig& config, const ClientConfig& cc, int round);

}  // namespace safe
