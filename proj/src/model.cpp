#include <safe/io.hpp>
#include <safe/model.hpp>
#include <safe/rng.hpp>

#include <cmath>

namespace safe {

std::string_view tag_name(ParamTag tag) noexcept {
    switch (tag) {
        case ParamTag::aggregable: return "aggregable";
        case ParamTag::bn_scale: return "bn-scale";
        case ParamTag::bn_shift: return "bn-shift";
        case ParamTag::bn_running_mean: return "bn-running-mean";
        case ParamTag::bn_running_var: return "bn-running-var";
    }
    return "unknown";
}

ParamTag tag_from_name(std::string_view name) {
    for (auto t : {ParamTag::aggregable, ParamTag::bn_scale, ParamTag::bn_shift, ParamTag::bn_running_mean, ParamTag::bn_running_var})
        if (tag_name(t) == name) return t;
    throw PayloadError("unknown tensor tag '" + std::string(name) + "'");
}

namespace {

Index round_up_odd(Index n) { return n % 2 == 0 ? n + 1 : n; }

}  // namespace

Index ModelConfig::resolved_temporal_kernel() const {
    return temporal_kernel > 0 ? temporal_kernel : round_up_odd(std::max<Index>(1, samples / 4));
}

Index ModelConfig::resolved_separable_kernel() const {
    return separable_kernel > 0 ? separable_kernel : round_up_odd(std::max<Index>(1, samples / 8));
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("invalid model config: " + why); };
    if (channels < 1) fail("channels must be >= 1");
    if (samples < 8) fail("samples must be >= 8");
    if (classes < 2) fail("classes must be >= 2");
    if (f1 < 1 || depth < 1 || f2 < 1) fail("filter counts must be >= 1");
    if (pool1 < 1 || pool2 < 1) fail("pool sizes must be >= 1");
    if (resolved_temporal_kernel() > samples) fail("temporal kernel longer than the trial");
    if (resolved_separable_kernel() > samples) fail("separable kernel longer than the trial");
    if (feature_width() < 1) fail("pooling leaves no time steps (samples / pool1 / pool2 < 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(bn_eps > 0.0)) fail("bn_eps must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"channels", c.channels},
                       {"samples", c.samples},
                       {"classes", c.classes},
                       {"f1", c.f1},
                       {"depth", c.depth},
                       {"f2", c.f2},
                       {"temporal_kernel", c.temporal_kernel},
                       {"separable_kernel", c.separable_kernel},
                       {"pool1", c.pool1},
                       {"pool2", c.pool2},
                       {"dropout", c.dropout},
                       {"use_dropout", c.use_dropout},
                       {"norm", c.norm == NormMode::lbsn ? "lbsn" : "conventional"},
                       {"bn_eps", c.bn_eps},
                       {"bn_momentum", c.bn_momentum}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.channels = j.value("channels", c.channels);
    c.samples = j.value("samples", c.samples);
    c.classes = j.value("classes", c.classes);
    c.f1 = j.value("f1", c.f1);
    c.depth = j.value("depth", c.depth);
    c.f2 = j.value("f2", c.f2);
    c.temporal_kernel = j.value("temporal_kernel", c.temporal_kernel);
    c.separable_kernel = j.value("separable_kernel", c.separable_kernel);
    c.pool1 = j.value("pool1", c.pool1);
    c.pool2 = j.value("pool2", c.pool2);
    c.dropout = j.value("dropout", c.dropout);
    c.use_dropout = j.value("use_dropout", c.use_dropout);
    const std::string norm = j.value("norm", std::string(c.norm == NormMode::lbsn ? "lbsn" : "conventional"));
    if (norm == "lbsn")
        c.norm = NormMode::lbsn;
    else if (norm == "conventional")
        c.norm = NormMode::conventional;
    else
        throw ConfigError("unknown norm mode '" + norm + "'");
    c.bn_eps = j.value("bn_eps", c.bn_eps);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename Scalar>
void ParameterSet<Scalar>::add(Entry entry) {
    if (find(entry.name)) throw PayloadError("duplicate tensor '" + entry.name + "'");
    entries_.push_back(std::move(entry));
}

template <typename Scalar>
const Parameter<Scalar>* ParameterSet<Scalar>::find(std::string_view name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

template <typename Scalar>
Parameter<Scalar>* ParameterSet<Scalar>::find(std::string_view name) {
    for (auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

template <typename Scalar>
const Parameter<Scalar>& ParameterSet<Scalar>::at(std::string_view name) const {
    if (const auto* e = find(name)) return *e;
    throw PayloadError("no tensor named '" + std::string(name) + "'");
}

template <typename Scalar>
Parameter<Scalar>& ParameterSet<Scalar>::at(std::string_view name) {
    if (auto* e = find(name)) return *e;
    throw PayloadError("no tensor named '" + std::string(name) + "'");
}

template <typename Scalar>
Index ParameterSet<Scalar>::scalar_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

template <typename Scalar>
bool ParameterSet<Scalar>::has_layer(std::string_view layer) const {
    for (const auto& e : entries_)
        if (e.layer == layer) return true;
    return false;
}

template <typename Scalar>
ParameterSet<Scalar> ParameterSet<Scalar>::zeros_like() const {
    ParameterSet out;
    for (const auto& e : entries_) out.entries_.push_back({e.name, e.layer, e.tag, NdArray<Scalar>::zeros_like(e.value)});
    return out;
}

// ---------------------------------------------------------------------------
// Layout and initialization

std::vector<TensorSpec> model_layout(const ModelConfig& config) {
    config.validate();
    const Index f1d = config.f1 * config.depth;
    std::vector<TensorSpec> out;
    auto bn = [&](const std::string& layer, Index n) {
        out.push_back({layer + ".gamma", layer, ParamTag::bn_scale, {n}});
        out.push_back({layer + ".beta", layer, ParamTag::bn_shift, {n}});
        if (config.norm == NormMode::conventional) {
            out.push_back({layer + ".running_mean", layer, ParamTag::bn_running_mean, {n}});
            out.push_back({layer + ".running_var", layer, ParamTag::bn_running_var, {n}});
        }
    };
    out.push_back({"temporal.weight", "temporal", ParamTag::aggregable, {config.f1, 1, 1, config.resolved_temporal_kernel()}});
    bn("bn1", config.f1);
    out.push_back({"spatial.weight", "spatial", ParamTag::aggregable, {f1d, 1, config.channels, 1}});
    bn("bn2", f1d);
    out.push_back({"separable_depthwise.weight", "separable_depthwise", ParamTag::aggregable, {f1d, 1, 1, config.resolved_separable_kernel()}});
    out.push_back({"separable_pointwise.weight", "separable_pointwise", ParamTag::aggregable, {config.f2, f1d, 1, 1}});
    bn("bn3", config.f2);
    out.push_back({"classifier.weight", "classifier", ParamTag::aggregable, {config.classes, config.f2 * config.feature_width()}});
    out.push_back({"classifier.bias", "classifier", ParamTag::aggregable, {config.classes}});
    return out;
}

template <typename Scalar>
ParameterSet<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
    ParameterSet<Scalar> params;
    Rng rng = make_rng(seed, {0x1417});
    for (const auto& spec : model_layout(config)) {
        NdArray<Scalar> value(spec.shape);
        switch (spec.tag) {
            case ParamTag::aggregable: {
                if (spec.name == "classifier.bias") break;
                double fan_in = 0, fan_out = 0;
                if (spec.shape.size() == 4) {
                    const double receptive = double(spec.shape[2] * spec.shape[3]);
                    fan_in = double(spec.shape[1]) * receptive;
                    fan_out = double(spec.shape[0]) * receptive;
                } else {
                    fan_in = double(spec.shape[1]);
                    fan_out = double(spec.shape[0]);
                }
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (Index i = 0; i < value.size(); ++i) value[i] = Scalar((2.0 * uniform01(rng) - 1.0) * limit);
                break;
            }
            case ParamTag::bn_scale:
            case ParamTag::bn_running_var: value.array().setConstant(Scalar(1)); break;
            case ParamTag::bn_shift:
            case ParamTag::bn_running_mean: break;
        }
        params.add({spec.name, spec.layer, spec.tag, std::move(value)});
    }
    return params;
}

template <typename Scalar>
Scalar flat_norm(const ParameterSet<Scalar>& params, std::string_view layer) {
    if (!params.has_layer(layer)) throw ConfigError("unknown layer '" + std::string(layer) + "'");
    double sum = 0;
    for (const auto& e : params.entries())
        if (e.layer == layer && e.tag == ParamTag::aggregable) sum += e.value.array().template cast<double>().square().sum();
    return Scalar(std::sqrt(sum));
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Scalar>
struct Bound {
    const ParameterSet<Scalar>& params;
    std::span<const ad::Var> vars;

    ad::Var var(std::string_view name) const {
        const auto& entries = params.entries();
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) return vars[i];
        throw PayloadError("model is missing tensor '" + std::string(name) + "'");
    }
};

template <typename Scalar>
ad::Var dropout(ad::Tape<Scalar>& tape, ad::Var x, const ModelConfig& config, const ForwardOptions& options, std::uint64_t site) {
    if (options.mode != Mode::train || !config.use_dropout || config.dropout <= 0.0) return x;
    const auto& shape = tape.value(x).shape();
    NdArray<Scalar> mask(shape);
    Rng rng = make_rng(options.dropout_seed, {site});
    const Scalar keep_scale = Scalar(1.0 / (1.0 - config.dropout));
    for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < config.dropout ? Scalar(0) : keep_scale;
    return ad::mul(tape, x, tape.constant(std::move(mask)));
}

template <typename Scalar>
ad::Var normalize(ad::Tape<Scalar>& tape, ad::Var x, const Bound<Scalar>& bound, const std::string& layer, const ModelConfig& config,
                  const ForwardOptions& options, std::vector<BatchStats<Scalar>>* observed) {
    const auto eps = Scalar(config.bn_eps);
    const auto gamma = bound.var(layer + ".gamma");
    const auto beta = bound.var(layer + ".beta");
    if (config.norm == NormMode::conventional && options.mode == Mode::eval) {
        BatchStats<Scalar> running{bound.params.at(layer + ".running_mean").value.array().matrix(),
                                   bound.params.at(layer + ".running_var").value.array().matrix()};
        return ad::batch_standardize(tape, x, gamma, beta, eps, &running);
    }
    BatchStats<Scalar> stats;
    auto y = ad::batch_standardize<Scalar>(tape, x, gamma, beta, eps, nullptr, observed ? &stats : nullptr);
    if (observed) observed->push_back(std::move(stats));
    return y;
}

}  // namespace

template <typename Scalar>
ad::Var forward(ad::Tape<Scalar>& tape, const ModelConfig& config, const ParameterSet<Scalar>& params, std::span<const ad::Var> vars,
                ad::Var input, const ForwardOptions& options, std::vector<BatchStats<Scalar>>* observed) {
    const auto& xv = tape.value(input);
    if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != config.channels || xv.dim(3) != config.samples)
        throw ShapeError("model.forward", {xv.shape()},
                         "model.forward: expected input [B x 1 x " + std::to_string(config.channels) + " x " +
                             std::to_string(config.samples) + "], got " + shape_string(xv.shape()));
    if (vars.size() != params.size()) throw PayloadError("model.forward: one tape handle per tensor required");
    const Index batch = xv.dim(0);
    const bool batch_stats = config.norm == NormMode::lbsn || options.mode == Mode::train;
    if (batch_stats && batch < 2)
        throw BatchSizeError("model.forward: local batch-specific normalization computes statistics from the batch and needs "
                             "B >= 2, got B = " + std::to_string(batch));

    const Bound<Scalar> bound{params, vars};
    const Index k1 = config.resolved_temporal_kernel();
    const Index k2 = config.resolved_separable_kernel();
    const Index f1d = config.f1 * config.depth;

    auto h = ad::conv2d(tape, input, bound.var("temporal.weight"), {1, 0, k1 / 2});
    h = normalize(tape, h, bound, "bn1", config, options, observed);
    h = ad::conv2d(tape, h, bound.var("spatial.weight"), {config.f1, 0, 0});
    h = normalize(tape, h, bound, "bn2", config, options, observed);
    h = ad::elu(tape, h);
    h = ad::avg_pool(tape, h, 1, config.pool1);
    h = dropout(tape, h, config, options, 1);
    h = ad::conv2d(tape, h, bound.var("separable_depthwise.weight"), {f1d, 0, k2 / 2});
    h = ad::conv2d(tape, h, bound.var("separable_pointwise.weight"), {1, 0, 0});
    h = normalize(tape, h, bound, "bn3", config, options, observed);
    h = ad::elu(tape, h);
    h = ad::avg_pool(tape, h, 1, config.pool2);
    h = dropout(tape, h, config, options, 2);
    h = ad::reshape(tape, h, {batch, config.f2 * config.feature_width()});
    return ad::matmul_bias(tape, h, bound.var("classifier.weight"), bound.var("classifier.bias"));
}

template <typename Scalar>
Evaluation<Scalar> evaluate(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                            std::span<const int> labels, const ForwardOptions& options, GradRequest request) {
    ad::Tape<Scalar> tape;
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const auto& e : params.entries()) {
        if (!is_learnable(e.tag))
            vars.push_back({});
        else
            vars.push_back(request.params ? tape.variable(e.value) : tape.constant(e.value));
    }
    const auto input = request.input ? tape.variable(batch) : tape.constant(batch);
    Evaluation<Scalar> out;
    const auto logits = forward(tape, config, params, vars, input, options, &out.bn_stats);
    const auto loss = ad::softmax_cross_entropy(tape, logits, labels);
    out.loss = tape.value(loss)[0];
    out.logits = tape.value(logits);
    if (request.params || request.input) tape.backward(loss);
    if (request.params) {
        out.param_grads = params.zeros_like();
        for (std::size_t i = 0; i < vars.size(); ++i)
            if (vars[i].valid()) out.param_grads.entries()[i].value = tape.grad(vars[i]);
    }
    if (request.input) out.input_grad = tape.grad(input);
    return out;
}

template <typename Scalar>
NdArray<Scalar> predict_logits(const ModelConfig& config, const ParameterSet<Scalar>& params, const NdArray<Scalar>& batch,
                               const ForwardOptions& options) {
    ad::Tape<Scalar> tape;
    std::vector<ad::Var> vars;
    for (const auto& e : params.entries()) vars.push_back(is_learnable(e.tag) ? tape.constant(e.value) : ad::Var{});
    const auto logits = forward(tape, config, params, vars, tape.constant(batch), options);
    return tape.value(logits);
}

template <typename Scalar>
void update_running_stats(const ModelConfig& config, ParameterSet<Scalar>& params, const std::vector<BatchStats<Scalar>>& observed) {
    if (config.norm != NormMode::conventional) return;
    static const char* layers[] = {"bn1", "bn2", "bn3"};
    if (observed.size() != 3) throw Error("update_running_stats: expected statistics for 3 normalization layers");
    const Scalar m = Scalar(config.bn_momentum);
    for (std::size_t l = 0; l < 3; ++l) {
        auto& rm = params.at(std::string(layers[l]) + ".running_mean").value;
        auto& rv = params.at(std::string(layers[l]) + ".running_var").value;
        const auto& s = observed[l];
        rm.array() = (Scalar(1) - m) * rm.array() + m * s.mean.array();
        rv.array() = (Scalar(1) - m) * rv.array() + m * s.variance.array();
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<Scalar>& checkpoint) {
    std::filesystem::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::array();
    io::Bytes blob;
    for (const auto& e : checkpoint.params.entries()) {
        tensors.push_back({{"name", e.name},
                           {"layer", e.layer},
                           {"tag", tag_name(e.tag)},
                           {"shape", e.value.shape()},
                           {"offset", blob.size()},
                           {"count", e.value.size()}});
        for (Index i = 0; i < e.value.size(); ++i) io::append_le(blob, e.value[i]);
    }
    nlohmann::json manifest{{"format", "safe-checkpoint"},
                            {"version", 1},
                            {"dtype", dtype_name<Scalar>()},
                            {"endianness", "little"},
                            {"seed", checkpoint.seed},
                            {"config", checkpoint.config},
                            {"tensors", tensors}};
    io::write_text(dir / "manifest.json", manifest.dump(2));
    io::write_file(dir / "tensors.bin", blob);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (manifest.value("format", "") != "safe-checkpoint") throw PayloadError("not a checkpoint: " + dir.string());
    const auto dtype = manifest.at("dtype").get<std::string>();
    const auto blob = io::read_file(dir / "tensors.bin");
    Checkpoint<Scalar> out;
    out.config = manifest.at("config").get<ModelConfig>();
    out.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& t : manifest.at("tensors")) {
        NdArray<Scalar> value(t.at("shape").get<Shape>());
        std::size_t offset = t.at("offset").get<std::size_t>();
        for (Index i = 0; i < value.size(); ++i) {
            if (dtype == "float32")
                value[i] = Scalar(io::read_le<float>(blob, offset));
            else if (dtype == "float64")
                value[i] = Scalar(io::read_le<double>(blob, offset));
            else
                throw PayloadError("unsupported checkpoint dtype " + dtype);
        }
        out.params.add({t.at("name").get<std::string>(), t.at("layer").get<std::string>(), tag_from_name(t.at("tag").get<std::string>()),
                        std::move(value)});
    }
    return out;
}

#define SAFE_INSTANTIATE_MODEL(S)                                                                                                   \
    template class ParameterSet<S>;                                                                                                 \
    template ParameterSet<S> build_model<S>(const ModelConfig&, std::uint64_t);                                                     \
    template S flat_norm<S>(const ParameterSet<S>&, std::string_view);                                                              \
    template ad::Var forward<S>(ad::Tape<S>&, const ModelConfig&, const ParameterSet<S>&, std::span<const ad::Var>, ad::Var,        \
                                const ForwardOptions&, std::vector<BatchStats<S>>*);                                                \
    template Evaluation<S> evaluate<S>(const ModelConfig&, const ParameterSet<S>&, const NdArray<S>&, std::span<const int>,         \
                                       const ForwardOptions&, GradRequest);                                                         \
    template NdArray<S> predict_logits<S>(const ModelConfig&, const ParameterSet<S>&, const NdArray<S>&, const ForwardOptions&);    \
    template void update_running_stats<S>(const ModelConfig&, ParameterSet<S>&, const std::vector<BatchStats<S>>&);          \
    template void save_checkpoint<S>(const std::filesystem::path&, const Checkpoint<S>&);                                           \
    template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path&);

SAFE_INSTANTIATE_MODEL(float)
SAFE_INSTANTIATE_MODEL(double)

}  // namespace safe
