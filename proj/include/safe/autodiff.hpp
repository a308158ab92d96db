#pragma once

// Minimal define-by-run reverse-mode autodiff over NdArray.
//
// A Tape owns every node created during one forward pass. Ops are free
// functions that take the tape and Var handles, compute the forward value
// eagerly and register a backward closure. Gradients are only propagated into
// nodes whose `requires_grad` flag is set, so asking for input gradients only
// (attacks) skips weight-gradient GEMMs and vice versa.

#include <safe/batch_stats.hpp>
#include <safe/ndarray.hpp>

#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace safe::ad {

enum class OpKind {
    leaf,
    matmul_bias,
    conv2d,
    avg_pool,
    elu,
    reshape,
    add,
    mul,
    scale,
    batch_standardize,
    softmax_cross_entropy,
};

std::string_view op_name(OpKind kind) noexcept;

/// Handle to a node on a tape.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

template <typename Scalar>
class Tape {
public:
    using Array = NdArray<Scalar>;
    using BackwardFn = std::function<void(Tape&, const Array& out_grad)>;

    /// Leaf that never receives a gradient.
    Var constant(Array value);
    /// Leaf that accumulates a gradient on backward().
    Var variable(Array value);

    const Array& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
    /// Gradient accumulated so far; zeros if backward has not reached the node.
    const Array& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(std::size_t(v.id)).requires_grad; }
    OpKind kind(Var v) const { return nodes_.at(std::size_t(v.id)).kind; }
    const std::vector<int>& inputs(Var v) const { return nodes_.at(std::size_t(v.id)).inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls; interior gradients are recomputed each call.
    void backward(Var loss);
    /// Clears every accumulated gradient.
    void zero_grad();

    /// Registers an op result. Used by the op functions below.
    Var record(OpKind kind, std::vector<int> inputs, Array value, BackwardFn fn);
    /// Adds `g` into the gradient buffer of `v` (no-op unless v requires grad).
    void accumulate(Var v, const Array& g);
    /// Direct access to the gradient buffer, allocated on first use.
    Array& grad_buffer(Var v);

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<int> inputs;
        Array value;
        Array grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    Array empty_;
};

struct Conv2dOptions {
    Index groups = 1;
    Index pad_h = 0;
    Index pad_w = 0;
};

/// y = x * W^T + b with x [B, in], W [out, in], b [out] (b may be invalid).
template <typename Scalar>
Var matmul_bias(Tape<Scalar>& tape, Var x, Var weight, Var bias = {});

/// Stride-1 grouped 2-D convolution (cross-correlation), zero padding.
/// x [B, Cin, H, W], weight [Cout, Cin/groups, KH, KW] -> [B, Cout, H', W'].
template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var x, Var weight, const Conv2dOptions& options = {});

/// Non-overlapping average pooling (stride = kernel); trailing remainder dropped.
template <typename Scalar>
Var avg_pool(Tape<Scalar>& tape, Var x, Index kernel_h, Index kernel_w);

template <typename Scalar>
Var elu(Tape<Scalar>& tape, Var x, Scalar alpha = Scalar(1));

template <typename Scalar>
Var reshape(Tape<Scalar>& tape, Var x, Shape shape);

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b);

template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b);

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var a, Scalar factor);

/// Normalizes per channel (axis 1) with statistics over all other axes, then
/// applies gamma * xhat + beta. With `fixed` set, those statistics are used as
/// constants instead of the batch's own (conventional inference-time BN).
/// The batch statistics actually computed are written to `observed` if given.
template <typename Scalar>
Var batch_standardize(Tape<Scalar>& tape, Var x, Var gamma, Var beta, Scalar eps,
                      const BatchStats<Scalar>* fixed = nullptr, BatchStats<Scalar>* observed = nullptr);

/// Mean softmax cross-entropy of logits [B, L] against integer labels.
template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& tape, Var logits, std::span<const int> labels);

}  // namespace safe::ad
