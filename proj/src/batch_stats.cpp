#include <safe/batch_stats.hpp>

#include <string>

namespace safe {

template <typename Scalar>
BatchStats<Scalar> batch_statistics(const NdArray<Scalar>& batch, Index feature_axis) {
    if (batch.rank() < 2 || feature_axis < 1 || feature_axis >= batch.rank())
        throw ShapeError("batch_statistics", {batch.shape()},
                         "batch_statistics: feature axis " + std::to_string(feature_axis) + " invalid for shape " + shape_string(batch.shape()));
    const Index b = batch.dim(0);
    if (b < 2)
        throw BatchSizeError("batch_statistics: local batch-specific normalization needs a batch of at least 2 samples, got " +
                             std::to_string(b));
    Index outer = 1, inner = 1;
    for (Index a = 0; a < feature_axis; ++a) outer *= batch.dim(a);
    for (Index a = feature_axis + 1; a < batch.rank(); ++a) inner *= batch.dim(a);
    const Index features = batch.dim(feature_axis);
    const Scalar count = Scalar(outer * inner);

    BatchStats<Scalar> s{VectorX<Scalar>::Zero(features), VectorX<Scalar>::Zero(features)};
    for (Index o = 0; o < outer; ++o)
        for (Index f = 0; f < features; ++f) s.mean[f] += batch.array().segment((o * features + f) * inner, inner).sum();
    s.mean /= count;
    for (Index o = 0; o < outer; ++o)
        for (Index f = 0; f < features; ++f)
            s.variance[f] += (batch.array().segment((o * features + f) * inner, inner) - s.mean[f]).square().sum();
    s.variance /= count;
    return s;
}

template BatchStats<float> batch_statistics(const NdArray<float>&, Index);
template BatchStats<double> batch_statistics(const NdArray<double>&, Index);

}  // namespace safe
