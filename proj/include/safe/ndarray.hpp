#pragma once

#include <safe/error.hpp>

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace safe {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major multi-dimensional array. Storage is an Eigen column array
/// so elementwise work can be written as Eigen expressions; 2-D views over
/// any contiguous slab are available through `matrix()`.
template <typename Scalar>
class NdArray {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    NdArray() = default;
    explicit NdArray(Shape shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)), data_(Storage::Constant(shape_size(shape_), fill)) {}
    NdArray(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size())
            throw ShapeError("ndarray", {shape_}, "data length " + std::to_string(data_.size()) +
                                                      " does not match shape " + shape_string(shape_));
    }
    NdArray(Shape shape, std::initializer_list<Scalar> values)
        : NdArray(std::move(shape), Storage(Eigen::Map<const Storage>(values.begin(), Index(values.size())))) {}

    static NdArray zeros(Shape shape) { return NdArray(std::move(shape)); }
    static NdArray zeros_like(const NdArray& other) { return NdArray(other.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    Index rank() const noexcept { return Index(shape_.size()); }
    Index dim(Index axis) const { return shape_.at(std::size_t(axis)); }
    Index size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.size() == 0; }

    Storage& array() noexcept { return data_; }
    const Storage& array() const noexcept { return data_; }
    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }
    std::span<Scalar> span() noexcept { return {data_.data(), std::size_t(data_.size())}; }
    std::span<const Scalar> span() const noexcept { return {data_.data(), std::size_t(data_.size())}; }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    /// Row-major 2-D view of `rows * cols` elements starting at `offset`.
    MatrixMap matrix(Index rows, Index cols, Index offset = 0) { return MatrixMap(data_.data() + offset, rows, cols); }
    ConstMatrixMap matrix(Index rows, Index cols, Index offset = 0) const {
        return ConstMatrixMap(data_.data() + offset, rows, cols);
    }

    /// Same data, new shape with an equal element count.
    NdArray reshaped(Shape shape) const {
        if (shape_size(shape) != size())
            throw ShapeError("reshape", {shape_, shape}, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return NdArray(std::move(shape), data_);
    }

    template <typename Other>
    NdArray<Other> cast() const {
        return NdArray<Other>(shape_, data_.template cast<Other>().eval());
    }

    bool all_finite() const { return data_.isFinite().all(); }

    bool operator==(const NdArray& other) const {
        return shape_ == other.shape_ && (data_.size() == 0 || (data_ == other.data_).all());
    }

private:
    Shape shape_;
    Storage data_;
};

/// Throws ShapeError when `a` and `b` differ in shape.
template <typename Scalar>
void require_same_shape(const char* op, const NdArray<Scalar>& a, const NdArray<Scalar>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(op, {a.shape(), b.shape()},
                         std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace safe
