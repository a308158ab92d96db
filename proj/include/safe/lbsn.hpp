#pragma once

// Local batch-specific normalization: the split of a model into the
// federated part and the client-local normalization part, the final
// assembly of a test model, and the payload wire format whose bytes are
// what crosses the client/server boundary.

#include <safe/io.hpp>
#include <safe/model.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace safe {

/// Aggregable tensors only (θ′).
template <typename Scalar>
ParameterSet<Scalar> strip_bn(const ParameterSet<Scalar>& params);

/// Everything `strip_bn` removes.
template <typename Scalar>
ParameterSet<Scalar> local_bn(const ParameterSet<Scalar>& params);

/// Reassembles a full model in layout order. Every tensor of the layout must
/// appear exactly once across the two sets with the expected tag and shape.
template <typename Scalar>
ParameterSet<Scalar> merge_bn(const ModelConfig& config, const ParameterSet<Scalar>& payload, const ParameterSet<Scalar>& local);

template <typename Scalar>
struct ClientBn {
    ParameterSet<Scalar> bn;
    double samples = 0;
};

/// n_k-weighted mean of the clients' normalization tensors.
template <typename Scalar>
ParameterSet<Scalar> finalize_global_bn(const std::vector<ClientBn<Scalar>>& clients);

// Payload wire format (little endian):
//   "SAFEPAY1" | u8 dtype size | u32 tensor count |
//   per tensor: str name | str layer | u8 tag | u32 rank | i64 dims... | values
//   where str = u32 length + bytes.

template <typename Scalar>
io::Bytes serialize_payload(const ParameterSet<Scalar>& params);

template <typename Scalar>
ParameterSet<Scalar> deserialize_payload(std::span<const std::uint8_t> bytes);

struct PayloadScan {
    std::size_t tensors = 0;
    std::vector<std::string> bn_tensors;
    std::size_t forbidden_hits = 0;

    bool clean() const { return bn_tensors.empty() && forbidden_hits == 0; }
};

/// Structural scan of one serialized payload: parses every tensor header and
/// records bn-tagged entries, then searches the raw bytes for each forbidden
/// byte pattern (e.g. fingerprints of trial data or label vectors).
PayloadScan scan_payload(std::span<const std::uint8_t> bytes, std::span<const io::Bytes> forbidden = {});

}  // namespace safe
