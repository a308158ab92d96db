#include <safe/lbsn.hpp>

#include <algorithm>
#include <cstring>

namespace safe {

template <typename Scalar>
ParameterSet<Scalar> strip_bn(const ParameterSet<Scalar>& params) {
    return params.filter([](const auto& e) { return !is_bn(e.tag); });
}

template <typename Scalar>
ParameterSet<Scalar> local_bn(const ParameterSet<Scalar>& params) {
    return params.filter([](const auto& e) { return is_bn(e.tag); });
}

template <typename Scalar>
ParameterSet<Scalar> merge_bn(const ModelConfig& config, const ParameterSet<Scalar>& payload, const ParameterSet<Scalar>& local) {
    ParameterSet<Scalar> out;
    const auto layout = model_layout(config);
    for (const auto& spec : layout) {
        const auto* a = payload.find(spec.name);
        const auto* b = local.find(spec.name);
        if (a && b) throw PayloadError("merge_bn: tensor '" + spec.name + "' present in both payload and local state");
        const auto* e = a ? a : b;
        if (!e) throw PayloadError("merge_bn: tensor '" + spec.name + "' missing");
        if (e->tag != spec.tag)
            throw PayloadError("merge_bn: tensor '" + spec.name + "' tagged " + std::string(tag_name(e->tag)) + ", model defines " +
                               std::string(tag_name(spec.tag)));
        if (e->value.shape() != spec.shape)
            throw PayloadError("merge_bn: tensor '" + spec.name + "' has shape " + shape_string(e->value.shape()) + ", model defines " +
                               shape_string(spec.shape));
        out.add(*e);
    }
    if (payload.size() + local.size() != layout.size()) throw PayloadError("merge_bn: unexpected extra tensors");
    return out;
}

template <typename Scalar>
ParameterSet<Scalar> finalize_global_bn(const std::vector<ClientBn<Scalar>>& clients) {
    if (clients.empty()) throw Error("finalize_global_bn: no clients");
    double total = 0;
    for (const auto& c : clients) total += c.samples;
    if (!(total > 0)) throw Error("finalize_global_bn: total sample count must be positive");
    const auto& first = clients.front().bn;
    ParameterSet<Scalar> out = first.zeros_like();
    for (std::size_t t = 0; t < first.size(); ++t) {
        Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(first.entries()[t].value.size());
        for (const auto& c : clients) {
            if (c.bn.size() != first.size()) throw ShapeError("finalize_global_bn", {}, "finalize_global_bn: tensor count mismatch");
            const auto& e = c.bn.entries()[t];
            if (e.name != first.entries()[t].name) throw PayloadError("finalize_global_bn: tensor order mismatch at '" + e.name + "'");
            require_same_shape("finalize_global_bn", e.value, first.entries()[t].value);
            acc += (c.samples / total) * e.value.array().template cast<double>();
        }
        out.entries()[t].value.array() = acc.cast<Scalar>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wire format

namespace {

constexpr char kMagic[8] = {'S', 'A', 'F', 'E', 'P', 'A', 'Y', '1'};

struct TensorHeader {
    std::string name, layer;
    ParamTag tag;
    Shape shape;
    std::size_t data_offset;
};

// Parses headers, skipping values; returns the dtype size.
std::uint8_t parse_headers(std::span<const std::uint8_t> in, std::vector<TensorHeader>& out) {
    if (in.size() < 8 || std::memcmp(in.data(), kMagic, 8) != 0) throw PayloadError("payload: bad magic");
    std::size_t off = 8;
    const auto width = io::read_le<std::uint8_t>(in, off);
    if (width != 4 && width != 8) throw PayloadError("payload: unsupported scalar width " + std::to_string(width));
    const auto count = io::read_le<std::uint32_t>(in, off);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorHeader h;
        h.name = io::read_string(in, off);
        h.layer = io::read_string(in, off);
        const auto tag = io::read_le<std::uint8_t>(in, off);
        if (tag > std::uint8_t(ParamTag::bn_running_var)) throw PayloadError("payload: unknown tag byte " + std::to_string(tag));
        h.tag = ParamTag(tag);
        const auto rank = io::read_le<std::uint32_t>(in, off);
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto extent = io::read_le<std::int64_t>(in, off);
            if (extent < 0) throw PayloadError("payload: negative extent");
            h.shape.push_back(Index(extent));
        }
        h.data_offset = off;
        const std::size_t n = std::size_t(shape_size(h.shape)) * width;
        if (off + n > in.size()) throw PayloadError("payload: truncated tensor '" + h.name + "'");
        off += n;
        out.push_back(std::move(h));
    }
    if (off != in.size()) throw PayloadError("payload: trailing bytes");
    return width;
}

}  // namespace

template <typename Scalar>
io::Bytes serialize_payload(const ParameterSet<Scalar>& params) {
    io::Bytes out(kMagic, kMagic + 8);
    io::append_le<std::uint8_t>(out, sizeof(Scalar));
    io::append_le<std::uint32_t>(out, std::uint32_t(params.size()));
    for (const auto& e : params.entries()) {
        io::append_string(out, e.name);
        io::append_string(out, e.layer);
        io::append_le<std::uint8_t>(out, std::uint8_t(e.tag));
        io::append_le<std::uint32_t>(out, std::uint32_t(e.value.rank()));
        for (Index d : e.value.shape()) io::append_le<std::int64_t>(out, d);
        for (Index i = 0; i < e.value.size(); ++i) io::append_le(out, e.value[i]);
    }
    return out;
}

template <typename Scalar>
ParameterSet<Scalar> deserialize_payload(std::span<const std::uint8_t> bytes) {
    std::vector<TensorHeader> headers;
    const auto width = parse_headers(bytes, headers);
    if (width != sizeof(Scalar)) throw PayloadError("payload: scalar width " + std::to_string(width) + " does not match reader");
    ParameterSet<Scalar> out;
    for (auto& h : headers) {
        NdArray<Scalar> value(h.shape);
        std::size_t off = h.data_offset;
        for (Index i = 0; i < value.size(); ++i) value[i] = io::read_le<Scalar>(bytes, off);
        out.add({std::move(h.name), std::move(h.layer), h.tag, std::move(value)});
    }
    return out;
}

PayloadScan scan_payload(std::span<const std::uint8_t> bytes, std::span<const io::Bytes> forbidden) {
    std::vector<TensorHeader> headers;
    parse_headers(bytes, headers);
    PayloadScan scan;
    scan.tensors = headers.size();
    for (const auto& h : headers)
        if (is_bn(h.tag)) scan.bn_tensors.push_back(h.name);
    for (const auto& pattern : forbidden) {
        if (pattern.empty()) continue;
        if (std::search(bytes.begin(), bytes.end(), pattern.begin(), pattern.end()) != bytes.end()) ++scan.forbidden_hits;
    }
    return scan;
}

#define SAFE_INSTANTIATE_LBSN(S)                                                                                       \
    template ParameterSet<S> strip_bn<S>(const ParameterSet<S>&);                                                      \
    template ParameterSet<S> local_bn<S>(const ParameterSet<S>&);                                                      \
    template ParameterSet<S> merge_bn<S>(const ModelConfig&, const ParameterSet<S>&, const ParameterSet<S>&);          \
    template ParameterSet<S> finalize_global_bn<S>(const std::vector<ClientBn<S>>&);                                   \
    template io::Bytes serialize_payload<S>(const ParameterSet<S>&);                                                   \
    template ParameterSet<S> deserialize_payload<S>(std::span<const std::uint8_t>);

SAFE_INSTANTIATE_LBSN(float)
SAFE_INSTANTIATE_LBSN(double)

}  // namespace safe
