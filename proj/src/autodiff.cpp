#include <safe/autodiff.hpp>

#include <cmath>
#include <string>

namespace safe::ad {

std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul_bias: return "matmul_bias";
        case OpKind::conv2d: return "conv2d";
        case OpKind::avg_pool: return "avg_pool";
        case OpKind::elu: return "elu";
        case OpKind::reshape: return "reshape";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::batch_standardize: return "batch_standardize";
        case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Tape

template <typename Scalar>
Var Tape<Scalar>::constant(Array value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

template <typename Scalar>
Var Tape<Scalar>::variable(Array value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

template <typename Scalar>
const NdArray<Scalar>& Tape<Scalar>::grad(Var v) const {
    const Node& n = nodes_.at(std::size_t(v.id));
    if (!n.has_grad) {
        // Lazily materialized zeros keep unreached nodes cheap.
        auto& self = const_cast<Tape&>(*this);
        self.nodes_[std::size_t(v.id)].grad = Array::zeros_like(n.value);
        self.nodes_[std::size_t(v.id)].has_grad = true;
    }
    return nodes_[std::size_t(v.id)].grad;
}

template <typename Scalar>
NdArray<Scalar>& Tape<Scalar>::grad_buffer(Var v) {
    Node& n = nodes_.at(std::size_t(v.id));
    if (!n.has_grad) {
        n.grad = Array::zeros_like(n.value);
        n.has_grad = true;
    }
    return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::accumulate(Var v, const Array& g) {
    if (!v.valid() || !requires_grad(v)) return;
    Array& buf = grad_buffer(v);
    require_same_shape("accumulate", buf, g);
    buf.array() += g.array();
}

template <typename Scalar>
Var Tape<Scalar>::record(OpKind kind, std::vector<int> inputs, Array value, BackwardFn fn) {
    Node n;
    n.kind = kind;
    for (int i : inputs)
        if (i >= 0 && nodes_.at(std::size_t(i)).requires_grad) n.requires_grad = true;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

template <typename Scalar>
void Tape<Scalar>::backward(Var loss) {
    const Node& root = nodes_.at(std::size_t(loss.id));
    if (root.value.size() != 1)
        throw ShapeError("backward", {root.value.shape()},
                         "backward: loss must be scalar, got shape " + shape_string(root.value.shape()));
    for (auto& n : nodes_)
        if (n.kind != OpKind::leaf) {
            n.has_grad = false;
            n.grad = Array();
        }
    if (!root.requires_grad) return;
    grad_buffer(loss).array() += Scalar(1);
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[std::size_t(i)];
        if (n.kind == OpKind::leaf || !n.has_grad || !n.requires_grad) continue;
        // No node is appended during the sweep, so the reference stays valid.
        n.backward(*this, n.grad);
    }
}

template <typename Scalar>
void Tape<Scalar>::zero_grad() {
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Array();
    }
}

// ---------------------------------------------------------------------------
// matmul + bias

template <typename Scalar>
Var matmul_bias(Tape<Scalar>& tape, Var x, Var weight, Var bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
        throw ShapeError("matmul_bias", {xv.shape(), wv.shape()},
                         "matmul_bias: input " + shape_string(xv.shape()) + " incompatible with weight " + shape_string(wv.shape()));
    const Index batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    if (bias.valid()) {
        const auto& bv = tape.value(bias);
        if (bv.rank() != 1 || bv.dim(0) != out)
            throw ShapeError("matmul_bias", {wv.shape(), bv.shape()},
                             "matmul_bias: bias " + shape_string(bv.shape()) + " does not match " + std::to_string(out) + " outputs");
    }
    NdArray<Scalar> y({batch, out});
    y.matrix(batch, out).noalias() = xv.matrix(batch, in) * wv.matrix(out, in).transpose();
    if (bias.valid()) y.matrix(batch, out).rowwise() += tape.value(bias).matrix(1, out).row(0);

    std::vector<int> inputs{x.id, weight.id, bias.id};
    return tape.record(OpKind::matmul_bias, inputs, std::move(y), [x, weight, bias, batch, in, out](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        const auto dym = dy.matrix(batch, out);
        if (t.requires_grad(x)) t.grad_buffer(x).matrix(batch, in).noalias() += dym * t.value(weight).matrix(out, in);
        if (t.requires_grad(weight))
            t.grad_buffer(weight).matrix(out, in).noalias() += dym.transpose() * t.value(x).matrix(batch, in);
        if (bias.valid() && t.requires_grad(bias))
            t.grad_buffer(bias).matrix(1, out).row(0) += dym.colwise().sum();
    });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeometry {
    Index batch, in_channels, height, width;
    Index out_channels, group_in, kernel_h, kernel_w;
    Index groups, pad_h, pad_w;
    Index out_h, out_w;

    Index group_out() const { return out_channels / groups; }
    Index patch() const { return group_in * kernel_h * kernel_w; }
    Index out_plane() const { return out_h * out_w; }
    // When the patch matrix is a plain view of the input block, no im2col is needed.
    bool direct() const {
        return pad_h == 0 && pad_w == 0 && kernel_w == 1 && (kernel_h == 1 || kernel_h == height);
    }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
    cols.resize(g.patch(), g.out_plane());
    for (Index ci = 0; ci < g.group_in; ++ci)
        for (Index kh = 0; kh < g.kernel_h; ++kh)
            for (Index kw = 0; kw < g.kernel_w; ++kw) {
                Scalar* row = cols.data() + ((ci * g.kernel_h + kh) * g.kernel_w + kw) * g.out_plane();
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    Scalar* dst = row + oh * g.out_w;
                    const Index ih = oh + kh - g.pad_h;
                    if (ih < 0 || ih >= g.height) {
                        std::fill(dst, dst + g.out_w, Scalar(0));
                        continue;
                    }
                    const Scalar* src = x + (ci * g.height + ih) * g.width;
                    const Index lo = std::max<Index>(0, g.pad_w - kw);
                    const Index hi = std::min<Index>(g.out_w, g.width + g.pad_w - kw);
                    std::fill(dst, dst + std::min(lo, g.out_w), Scalar(0));
                    if (hi > lo) std::copy(src + lo + kw - g.pad_w, src + hi + kw - g.pad_w, dst + lo);
                    if (hi < g.out_w) std::fill(dst + std::max(hi, Index(0)), dst + g.out_w, Scalar(0));
                }
            }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
    for (Index ci = 0; ci < g.group_in; ++ci)
        for (Index kh = 0; kh < g.kernel_h; ++kh)
            for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Scalar* row = cols.data() + ((ci * g.kernel_h + kh) * g.kernel_w + kw) * g.out_plane();
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    const Index ih = oh + kh - g.pad_h;
                    if (ih < 0 || ih >= g.height) continue;
                    const Scalar* src = row + oh * g.out_w;
                    Scalar* dst = dx + (ci * g.height + ih) * g.width;
                    const Index lo = std::max<Index>(0, g.pad_w - kw);
                    const Index hi = std::min<Index>(g.out_w, g.width + g.pad_w - kw);
                    for (Index ow = lo; ow < hi; ++ow) dst[ow + kw - g.pad_w] += src[ow];
                }
            }
}

}  // namespace

template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var x, Var weight, const Conv2dOptions& options) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    auto fail = [&](const std::string& why) {
        throw ShapeError("conv2d", {xv.shape(), wv.shape()},
                         "conv2d: " + why + " (input " + shape_string(xv.shape()) + ", weight " + shape_string(wv.shape()) + ")");
    };
    if (xv.rank() != 4 || wv.rank() != 4) fail("expected rank-4 input and weight");
    if (options.groups < 1 || options.pad_h < 0 || options.pad_w < 0) fail("invalid groups or padding");
    ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(1), wv.dim(2), wv.dim(3),
                   options.groups, options.pad_h, options.pad_w, 0, 0};
    if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0) fail("channels not divisible by groups");
    if (g.in_channels / g.groups != g.group_in) fail("weight input-channel extent does not match groups");
    g.out_h = g.height + 2 * g.pad_h - g.kernel_h + 1;
    g.out_w = g.width + 2 * g.pad_w - g.kernel_w + 1;
    if (g.out_h < 1 || g.out_w < 1) fail("kernel larger than padded input");

    NdArray<Scalar> y({g.batch, g.out_channels, g.out_h, g.out_w});
    const Index in_plane = g.height * g.width;
    RowMatrix<Scalar> cols;
    for (Index b = 0; b < g.batch; ++b)
        for (Index grp = 0; grp < g.groups; ++grp) {
            const Scalar* xb = xv.data() + (b * g.in_channels + grp * g.group_in) * in_plane;
            auto wg = wv.matrix(g.group_out(), g.patch(), grp * g.group_out() * g.patch());
            auto yb = y.matrix(g.group_out(), g.out_plane(), (b * g.out_channels + grp * g.group_out()) * g.out_plane());
            if (g.direct()) {
                yb.noalias() = wg * Eigen::Map<const RowMatrix<Scalar>>(xb, g.patch(), g.out_plane());
            } else {
                im2col(xb, g, cols);
                yb.noalias() = wg * cols;
            }
        }

    return tape.record(OpKind::conv2d, {x.id, weight.id}, std::move(y), [x, weight, g, in_plane](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(weight);
        const auto& xv = t.value(x);
        const auto& wv = t.value(weight);
        Scalar* dx = need_x ? t.grad_buffer(x).data() : nullptr;
        Scalar* dw = need_w ? t.grad_buffer(weight).data() : nullptr;
        RowMatrix<Scalar> cols, dcols;
        for (Index b = 0; b < g.batch; ++b)
            for (Index grp = 0; grp < g.groups; ++grp) {
                const Index x_off = (b * g.in_channels + grp * g.group_in) * in_plane;
                const Index w_off = grp * g.group_out() * g.patch();
                auto dyb = dy.matrix(g.group_out(), g.out_plane(), (b * g.out_channels + grp * g.group_out()) * g.out_plane());
                if (need_w) {
                    Eigen::Map<RowMatrix<Scalar>> dwg(dw + w_off, g.group_out(), g.patch());
                    if (g.direct()) {
                        dwg.noalias() += dyb * Eigen::Map<const RowMatrix<Scalar>>(xv.data() + x_off, g.patch(), g.out_plane()).transpose();
                    } else {
                        im2col(xv.data() + x_off, g, cols);
                        dwg.noalias() += dyb * cols.transpose();
                    }
                }
                if (need_x) {
                    auto wg = wv.matrix(g.group_out(), g.patch(), w_off);
                    if (g.direct()) {
                        Eigen::Map<RowMatrix<Scalar>>(dx + x_off, g.patch(), g.out_plane()).noalias() += wg.transpose() * dyb;
                    } else {
                        dcols.noalias() = wg.transpose() * dyb;
                        col2im_add(dcols, g, dx + x_off);
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// pooling, activations, reshape, elementwise

template <typename Scalar>
Var avg_pool(Tape<Scalar>& tape, Var x, Index kernel_h, Index kernel_w) {
    const auto& xv = tape.value(x);
    if (xv.rank() != 4 || kernel_h < 1 || kernel_w < 1 || xv.dim(2) < kernel_h || xv.dim(3) < kernel_w)
        throw ShapeError("avg_pool", {xv.shape(), {kernel_h, kernel_w}},
                         "avg_pool: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                             " does not fit input " + shape_string(xv.shape()));
    const Index planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const Index oh = h / kernel_h, ow = w / kernel_w;
    const Scalar inv = Scalar(1) / Scalar(kernel_h * kernel_w);
    NdArray<Scalar> y({xv.dim(0), xv.dim(1), oh, ow});
    for (Index p = 0; p < planes; ++p)
        for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j) {
                Scalar s = 0;
                for (Index a = 0; a < kernel_h; ++a)
                    for (Index b = 0; b < kernel_w; ++b) s += xv[(p * h + i * kernel_h + a) * w + j * kernel_w + b];
                y[(p * oh + i) * ow + j] = s * inv;
            }
    return tape.record(OpKind::avg_pool, {x.id}, std::move(y), [=](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        auto& dx = t.grad_buffer(x);
        for (Index p = 0; p < planes; ++p)
            for (Index i = 0; i < oh; ++i)
                for (Index j = 0; j < ow; ++j) {
                    const Scalar g = dy[(p * oh + i) * ow + j] * inv;
                    for (Index a = 0; a < kernel_h; ++a)
                        for (Index b = 0; b < kernel_w; ++b) dx[(p * h + i * kernel_h + a) * w + j * kernel_w + b] += g;
                }
    });
}

template <typename Scalar>
Var elu(Tape<Scalar>& tape, Var x, Scalar alpha) {
    const auto& xv = tape.value(x);
    NdArray<Scalar> y(xv.shape());
    // select() with exp() does not vectorize; the min/max form does.
    y.array() = xv.array().max(Scalar(0)) + alpha * (xv.array().min(Scalar(0)).exp() - Scalar(1));
    const Var out{int(tape.size())};
    return tape.record(OpKind::elu, {x.id}, std::move(y), [x, out, alpha](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        const auto& xa = t.value(x).array();
        const auto& ya = t.value(out).array();
        // slope is 1 above zero and y + alpha at or below it
        const auto pos = (xa > Scalar(0)).template cast<Scalar>();
        t.grad_buffer(x).array() += dy.array() * (pos + (Scalar(1) - pos) * (ya.min(Scalar(0)) + alpha));
    });
}

template <typename Scalar>
Var reshape(Tape<Scalar>& tape, Var x, Shape shape) {
    const auto& xv = tape.value(x);
    return tape.record(OpKind::reshape, {x.id}, xv.reshaped(std::move(shape)), [x](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        t.grad_buffer(x).array() += dy.array();
    });
}

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b) {
    require_same_shape("add", tape.value(a), tape.value(b));
    NdArray<Scalar> y(tape.value(a).shape(), tape.value(a).array() + tape.value(b).array());
    return tape.record(OpKind::add, {a.id, b.id}, std::move(y), [a, b](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        t.accumulate(a, dy);
        t.accumulate(b, dy);
    });
}

template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b) {
    require_same_shape("mul", tape.value(a), tape.value(b));
    NdArray<Scalar> y(tape.value(a).shape(), tape.value(a).array() * tape.value(b).array());
    return tape.record(OpKind::mul, {a.id, b.id}, std::move(y), [a, b](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        if (t.requires_grad(a)) t.grad_buffer(a).array() += dy.array() * t.value(b).array();
        if (t.requires_grad(b)) t.grad_buffer(b).array() += dy.array() * t.value(a).array();
    });
}

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var a, Scalar factor) {
    NdArray<Scalar> y(tape.value(a).shape(), tape.value(a).array() * factor);
    return tape.record(OpKind::scale, {a.id}, std::move(y), [a, factor](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
        t.grad_buffer(a).array() += dy.array() * factor;
    });
}

// ---------------------------------------------------------------------------
// batch standardize

template <typename Scalar>
Var batch_standardize(Tape<Scalar>& tape, Var x, Var gamma, Var beta, Scalar eps, const BatchStats<Scalar>* fixed,
                      BatchStats<Scalar>* observed) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    if (xv.rank() < 2)
        throw ShapeError("batch_standardize", {xv.shape()}, "batch_standardize: input must have a batch and a channel axis");
    const Index batch = xv.dim(0), channels = xv.dim(1);
    const Index inner = xv.size() / std::max<Index>(1, batch * channels);
    if (gv.shape() != Shape{channels} || bv.shape() != Shape{channels})
        throw ShapeError("batch_standardize", {xv.shape(), gv.shape(), bv.shape()},
                         "batch_standardize: affine parameters must have shape [" + std::to_string(channels) + "]");
    if (!(eps > Scalar(0))) throw Error("batch_standardize: eps must be positive");

    BatchStats<Scalar> stats;
    if (!fixed || observed) {
        if (batch < 2)
            throw BatchSizeError("batch_standardize: local batch-specific normalization needs a batch of at least 2 samples, got " +
                                 std::to_string(batch));
        stats = batch_statistics(xv, 1);
        if (observed) *observed = stats;
    }
    const BatchStats<Scalar>& used = fixed ? *fixed : stats;
    if (used.mean.size() != channels || used.variance.size() != channels)
        throw ShapeError("batch_standardize", {xv.shape(), {used.mean.size()}}, "batch_standardize: statistics do not match channels");

    VectorX<Scalar> inv_std = (used.variance.array() + eps).rsqrt().matrix();
    NdArray<Scalar> xhat(xv.shape());
    NdArray<Scalar> y(xv.shape());
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < channels; ++c) {
            const Index off = (b * channels + c) * inner;
            auto xs = xv.array().segment(off, inner);
            auto hs = xhat.array().segment(off, inner);
            hs = (xs - used.mean[c]) * inv_std[c];
            y.array().segment(off, inner) = hs * gv[c] + bv[c];
        }

    const bool batch_mode = fixed == nullptr;
    return tape.record(OpKind::batch_standardize, {x.id, gamma.id, beta.id}, std::move(y),
                       [x, gamma, beta, batch, channels, inner, batch_mode, inv_std = std::move(inv_std),
                        xhat = std::move(xhat)](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
                           const auto& gv = t.value(gamma);
                           VectorX<Scalar> sum_dy = VectorX<Scalar>::Zero(channels);
                           VectorX<Scalar> sum_dy_xhat = VectorX<Scalar>::Zero(channels);
                           for (Index b = 0; b < batch; ++b)
                               for (Index c = 0; c < channels; ++c) {
                                   const Index off = (b * channels + c) * inner;
                                   sum_dy[c] += dy.array().segment(off, inner).sum();
                                   sum_dy_xhat[c] += (dy.array().segment(off, inner) * xhat.array().segment(off, inner)).sum();
                               }
                           if (t.requires_grad(gamma)) t.grad_buffer(gamma).array() += sum_dy_xhat.array();
                           if (t.requires_grad(beta)) t.grad_buffer(beta).array() += sum_dy.array();
                           if (!t.requires_grad(x)) return;
                           auto& dx = t.grad_buffer(x);
                           const Scalar count = Scalar(batch * inner);
                           for (Index b = 0; b < batch; ++b)
                               for (Index c = 0; c < channels; ++c) {
                                   const Index off = (b * channels + c) * inner;
                                   const Scalar k = gv[c] * inv_std[c];
                                   if (batch_mode) {
                                       dx.array().segment(off, inner) +=
                                           (k / count) * (count * dy.array().segment(off, inner) - sum_dy[c] -
                                                          xhat.array().segment(off, inner) * sum_dy_xhat[c]);
                                   } else {
                                       dx.array().segment(off, inner) += k * dy.array().segment(off, inner);
                                   }
                               }
                       });
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& tape, Var logits, std::span<const int> labels) {
    const auto& lv = tape.value(logits);
    if (lv.rank() != 2 || lv.dim(0) != Index(labels.size()) || lv.dim(0) == 0)
        throw ShapeError("softmax_cross_entropy", {lv.shape(), {Index(labels.size())}},
                         "softmax_cross_entropy: logits " + shape_string(lv.shape()) + " vs " + std::to_string(labels.size()) + " labels");
    const Index batch = lv.dim(0), classes = lv.dim(1);
    RowMatrix<Scalar> probs(batch, classes);
    std::vector<int> y(labels.begin(), labels.end());
    double total = 0;
    for (Index i = 0; i < batch; ++i) {
        if (y[std::size_t(i)] < 0 || y[std::size_t(i)] >= classes)
            throw ShapeError("softmax_cross_entropy", {lv.shape()}, "softmax_cross_entropy: label out of range");
        auto row = lv.matrix(batch, classes).row(i);
        const Scalar mx = row.maxCoeff();
        probs.row(i) = (row.array() - mx).exp().matrix();
        const Scalar z = probs.row(i).sum();
        probs.row(i) /= z;
        total += double(mx + std::log(z) - row(y[std::size_t(i)]));
    }
    NdArray<Scalar> loss({}, {Scalar(total / double(batch))});
    return tape.record(OpKind::softmax_cross_entropy, {logits.id}, std::move(loss),
                       [logits, batch, classes, probs = std::move(probs), y = std::move(y)](Tape<Scalar>& t, const NdArray<Scalar>& dy) {
                           auto dl = t.grad_buffer(logits).matrix(batch, classes);
                           const Scalar k = dy[0] / Scalar(batch);
                           dl += k * probs;
                           for (Index i = 0; i < batch; ++i) dl(i, y[std::size_t(i)]) -= k;
                       });
}

#define SAFE_INSTANTIATE_AD(S)                                                                                          \
    template class Tape<S>;                                                                                             \
    template Var matmul_bias<S>(Tape<S>&, Var, Var, Var);                                                               \
    template Var conv2d<S>(Tape<S>&, Var, Var, const Conv2dOptions&);                                                   \
    template Var avg_pool<S>(Tape<S>&, Var, Index, Index);                                                              \
    template Var elu<S>(Tape<S>&, Var, S);                                                                              \
    template Var reshape<S>(Tape<S>&, Var, Shape);                                                                      \
    template Var add<S>(Tape<S>&, Var, Var);                                                                            \
    template Var mul<S>(Tape<S>&, Var, Var);                                                                            \
    template Var scale<S>(Tape<S>&, Var, S);                                                                            \
    template Var batch_standardize<S>(Tape<S>&, Var, Var, Var, S, const BatchStats<S>*, BatchStats<S>*);                \
    template Var softmax_cross_entropy<S>(Tape<S>&, Var, std::span<const int>);

SAFE_INSTANTIATE_AD(float)
SAFE_INSTANTIATE_AD(double)

}  // namespace safe::ad
