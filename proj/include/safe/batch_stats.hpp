#pragma once

#include <safe/ndarray.hpp>

namespace safe {

/// Per-feature mean and biased (divide-by-count) variance of one batch.
/// Never persisted: local batch-specific normalization recomputes these from
/// every batch, at training and at test time.
template <typename Scalar>
struct BatchStats {
    VectorX<Scalar> mean;
    VectorX<Scalar> variance;
};

/// Statistics per index of `feature_axis`, reduced over every other axis
/// (batch and spatial). For a [B, C, H, W] conv activation and feature_axis 1
/// this is the per-channel statistic over (B, H, W). Requires B >= 2 along
/// axis 0. Two-pass: mean first, then centered squares.
template <typename Scalar>
BatchStats<Scalar> batch_statistics(const NdArray<Scalar>& batch, Index feature_axis = 1);

}  // namespace safe
