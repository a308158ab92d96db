#pragma once

// Compact EEGNet-style classifier:
//
//   temporal conv -> BN -> depthwise spatial conv -> BN -> ELU -> avg-pool ->
//   dropout -> separable conv (depthwise temporal + pointwise) -> BN -> ELU ->
//   avg-pool -> dropout -> flatten -> dense(L)
//
// Every tensor carries a tag. Aggregable tensors are the federated part of the
// model; BN affine tensors stay on the client under local batch-specific
// normalization. Running statistics only exist for the conventional-BN mode
// used by ablations and centralized baselines.

#include <safe/autodiff.hpp>
#include <safe/batch_stats.hpp>
#include <safe/ndarray.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace safe {

enum class ParamTag : std::uint8_t {
    aggregable = 0,
    bn_scale = 1,
    bn_shift = 2,
    bn_running_mean = 3,
    bn_running_var = 4,
};

std::string_view tag_name(ParamTag tag) noexcept;
ParamTag tag_from_name(std::string_view name);
inline bool is_bn(ParamTag tag) noexcept { return tag != ParamTag::aggregable; }
inline bool is_bn_affine(ParamTag tag) noexcept { return tag == ParamTag::bn_scale || tag == ParamTag::bn_shift; }
inline bool is_learnable(ParamTag tag) noexcept { return tag == ParamTag::aggregable || is_bn_affine(tag); }

/// Batch statistics per batch at train and test time (local batch-specific
/// normalization), or conventional BN with running statistics at test time.
enum class NormMode { lbsn, conventional };

struct ModelConfig {
    Index channels = 8;
    Index samples = 128;
    Index classes = 2;
    Index f1 = 8;
    Index depth = 2;
    Index f2 = 16;
    Index temporal_kernel = 0;   // 0: samples / 4, rounded up to odd
    Index separable_kernel = 0;  // 0: samples / 8, rounded up to odd
    Index pool1 = 4;
    Index pool2 = 8;
    double dropout = 0.25;
    bool use_dropout = true;
    NormMode norm = NormMode::lbsn;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    Index resolved_temporal_kernel() const;
    Index resolved_separable_kernel() const;
    Index feature_width() const { return samples / pool1 / pool2; }
    /// Throws ConfigError on invariant violations.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename Scalar>
struct Parameter {
    std::string name;
    std::string layer;
    ParamTag tag = ParamTag::aggregable;
    NdArray<Scalar> value;

    bool operator==(const Parameter&) const = default;
};

/// Ordered collection of named, tagged tensors. Used for full models,
/// federation payloads (aggregable subset), client-local BN state and
/// gradients alike.
template <typename Scalar>
class ParameterSet {
public:
    using Entry = Parameter<Scalar>;

    ParameterSet() = default;
    explicit ParameterSet(std::vector<Entry> entries) : entries_(std::move(entries)) {}

    void add(Entry entry);
    std::vector<Entry>& entries() noexcept { return entries_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    const Entry* find(std::string_view name) const;
    Entry* find(std::string_view name);
    const Entry& at(std::string_view name) const;
    Entry& at(std::string_view name);

    /// Total number of scalars across entries.
    Index scalar_count() const;
    bool has_layer(std::string_view layer) const;

    template <typename Pred>
    ParameterSet filter(Pred&& keep) const {
        ParameterSet out;
        for (const auto& e : entries_)
            if (keep(e)) out.entries_.push_back(e);
        return out;
    }

    /// Same names, tags and shapes, all values zero.
    ParameterSet zeros_like() const;

    template <typename Other>
    ParameterSet<Other> cast() const {
        ParameterSet<Other> out;
        for (const auto& e : entries_) out.add({e.name, e.layer, e.tag, e.value.template cast<Other>()});
        return out;
    }

    bool operator==(const ParameterSet&) const = default;

private:
    std::vector<Entry> entries_;
};

/// Names, layers, tags and shapes a config produces, in canonical order.
struct TensorSpec {
    std::string name;
    std::string layer;
    ParamTag tag;
    Shape shape;
};
std::vector<TensorSpec> model_layout(const ModelConfig& config);

/// Deterministic initialization: Glorot-uniform convs and dense weight, zero
/// dense bias, gamma = 1, beta = 0, running mean 0 / variance 1.
template <typename Scalar>
ParameterSet<Scalar> build_model(const ModelConfig& config, std::uint64_t seed);

/// Euclidean norm of the aggregable tensors belonging to `layer`.
template <typename Scalar>
Scalar flat_norm(const ParameterSet<Scalar>& params, std::string_view layer);

enum class Mode { train, eval };

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Dropout masks are a pure function of this seed, so every pass inside
    /// one optimizer step can share the same mask.
    std::uint64_t dropout_seed = 0;
};

/// Builds the forward graph on `tape`. `vars[i]` is the tape handle for
/// params.entries()[i] (running statistics may be invalid handles).
/// Observed per-layer batch statistics are appended to `observed` if given.
template <typename Scalar>
ad::Var forward(ad::Tape<Scalar>& tape, const ModelConfig& config, const ParameterSet<Scalar>& params,
                std::span<const ad::Var> vars, ad::Var input, const ForwardOptions& options,
                std::vector<BatchStats<Scalar>>* observed = nullptr);

struct GradRequest {
    bool params = false;
    bool input = false;
};

template <typename Scalar>
struct Evaluation {
    Scalar loss = 0;
    NdArray<Scalar> logits;
    /// Same layout as the evaluated ParameterSet; empty unless requested.
    ParameterSet<Scalar> param_grads;
    NdArray<Scalar> input_grad;
    std::vector<BatchStats<Scalar>> bn_stats;
};

/// Forward (and optionally backward) of mean cross-entropy on one batch
/// [B, 1, c, t]. Throws BatchSizeError for B < 2 whenever batch statistics are
/// needed.
template <typename Scalar>
Evaluation<Scalar> evaluate(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                            std::span<const int> labels, const ForwardOptions& options, GradRequest request);

/// Logits [B, L] without building a backward graph.
template <typename Scalar>
NdArray<Scalar> predict_logits(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                               const ForwardOptions& options = {});

/// Updates running statistics from the observed batch statistics of a
/// training pass (conventional mode only; no-op under LBSN).
template <typename Scalar>
void update_running_stats(const ModelConfig& config, ParameterSet<Scalar>& params, const std::vector<BatchStats<Scalar>>& observed);

// Checkpoint: <dir>/manifest.json + <dir>/tensors.bin (raw little-endian).

template <typename Scalar>
struct Checkpoint {
    ModelConfig config;
    std::uint64_t seed = 0;
    ParameterSet<Scalar> params;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<Scalar>& checkpoint);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& dir);

template <typename Scalar>
constexpr std::string_view dtype_name() {
    return sizeof(Scalar) == 4 ? "float32" : "float64";
}

}  // namespace safe
