#include <safe/error.hpp>
#include <safe/perturb.hpp>

#include <cmath>
#include <limits>

namespace safe {

namespace {

template <typename Scalar>
void require_batch(const char* op, const NdArray<Scalar>& x) {
    if (x.rank() < 2 || x.dim(0) < 1) throw ShapeError(op, {x.shape()}, std::string(op) + ": expected a batch of trials");
}

template <typename Scalar>
Scalar sign_of(Scalar g) {
    return g > Scalar(0) ? Scalar(1) : (g < Scalar(0) ? Scalar(-1) : Scalar(0));
}

}  // namespace

template <typename Scalar>
double trial_std(std::span<const Scalar> x) {
    if (x.size() < 2) throw Error("trial_std: need at least 2 entries");
    double mean = 0;
    for (auto v : x) mean += double(v);
    mean /= double(x.size());
    double ss = 0;
    for (auto v : x) ss += (double(v) - mean) * (double(v) - mean);
    return std::sqrt(ss / double(x.size()));
}

template <typename Scalar>
std::vector<double> linf_radii(const NdArray<Scalar>& batch, double epsilon, StdMode mode, double global_std) {
    require_batch("linf_radii", batch);
    if (!(epsilon >= 0)) throw Error("linf_radii: epsilon must be nonnegative");
    const Index n = batch.dim(0), stride = batch.size() / n;
    std::vector<double> radii(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const double s = mode == StdMode::global ? global_std : trial_std<Scalar>(batch.span().subspan(std::size_t(i * stride), std::size_t(stride)));
        radii[std::size_t(i)] = epsilon * s;
    }
    return radii;
}

template <typename Scalar>
void project_linf(const NdArray<Scalar>& x, NdArray<Scalar>& adv, std::span<const double> radii) {
    require_same_shape("project_linf", x, adv);
    const Index n = x.dim(0), stride = x.size() / n;
    if (Index(radii.size()) != n) throw ShapeError("project_linf", {x.shape(), {Index(radii.size())}}, "project_linf: one radius per trial");
    constexpr Scalar inf = std::numeric_limits<Scalar>::infinity();
    for (Index i = 0; i < n; ++i) {
        const double r = radii[std::size_t(i)];
        for (Index k = i * stride; k < (i + 1) * stride; ++k) {
            const double base = double(x[k]);
            Scalar v = adv[k];
            if (double(v) - base > r) {
                v = Scalar(base + r);
                while (double(v) - base > r) v = std::nextafter(v, -inf);
            } else if (base - double(v) > r) {
                v = Scalar(base - r);
                while (base - double(v) > r) v = std::nextafter(v, inf);
            }
            adv[k] = v;
        }
    }
}

template <typename Scalar>
NdArray<Scalar> sign_step(const NdArray<Scalar>& x, const NdArray<Scalar>& start, const NdArray<Scalar>& grad,
                          std::span<const double> steps, std::span<const double> radii) {
    require_same_shape("sign_step", x, grad);
    require_same_shape("sign_step", x, start);
    const Index n = x.dim(0), stride = x.size() / n;
    if (Index(steps.size()) != n) throw ShapeError("sign_step", {x.shape(), {Index(steps.size())}}, "sign_step: one step per trial");
    NdArray<Scalar> out = start;
    for (Index i = 0; i < n; ++i) {
        const Scalar a = Scalar(steps[std::size_t(i)]);
        for (Index k = i * stride; k < (i + 1) * stride; ++k) out[k] = start[k] + a * sign_of(grad[k]);
    }
    project_linf(x, out, radii);
    return out;
}

template <typename Scalar>
std::vector<double> linf_distance(const NdArray<Scalar>& x, const NdArray<Scalar>& adv) {
    require_same_shape("linf_distance", x, adv);
    const Index n = x.dim(0), stride = x.size() / n;
    std::vector<double> out(std::size_t(n), 0.0);
    for (Index i = 0; i < n; ++i)
        for (Index k = i * stride; k < (i + 1) * stride; ++k)
            out[std::size_t(i)] = std::max(out[std::size_t(i)], std::abs(double(adv[k]) - double(x[k])));
    return out;
}

#define SAFE_INSTANTIATE_PERTURB(S)                                                                                        \
    template double trial_std<S>(std::span<const S>);                                                                      \
    template std::vector<double> linf_radii<S>(const NdArray<S>&, double, StdMode, double);                                \
    template void project_linf<S>(const NdArray<S>&, NdArray<S>&, std::span<const double>);                                \
    template NdArray<S> sign_step<S>(const NdArray<S>&, const NdArray<S>&, const NdArray<S>&, std::span<const double>,     \
                                     std::span<const double>);                                                             \
    template std::vector<double> linf_distance<S>(const NdArray<S>&, const NdArray<S>&);

SAFE_INSTANTIATE_PERTURB(float)
SAFE_INSTANTIATE_PERTURB(double)

}  // namespace safe
