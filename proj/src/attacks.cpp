#include <safe/attacks.hpp>
#include <safe/error.hpp>
#include <safe/rng.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace safe {

std::string_view family_name(AttackFamily f) noexcept {
    switch (f) {
        case AttackFamily::fgsm: return "fgsm";
        case AttackFamily::pgd: return "pgd";
        case AttackFamily::pgd_strong: return "pgd-strong";
        case AttackFamily::square: return "square";
        case AttackFamily::rays: return "rays";
    }
    return "unknown";
}

AttackFamily family_from_name(std::string_view name) {
    for (auto f : {AttackFamily::fgsm, AttackFamily::pgd, AttackFamily::pgd_strong, AttackFamily::square, AttackFamily::rays})
        if (family_name(f) == name) return f;
    throw ConfigError("unknown attack family '" + std::string(name) + "'");
}

AttackSpec AttackSpec::resolved() const {
    AttackSpec s = *this;
    if (family == AttackFamily::pgd_strong) {
        s.restarts = 5;
        s.steps = 50;
    }
    return s;
}

void AttackSpec::validate() const {
    auto fail = [](const std::string& why) { throw ConfigError("invalid attack spec: " + why); };
    if (!(epsilon >= 0)) fail("epsilon must be >= 0");
    if (steps < 0 || queries < 0 || restarts < 0) fail("budgets must be >= 0");
    if ((family == AttackFamily::pgd || family == AttackFamily::pgd_strong) && (steps < 1 || restarts < 1))
        fail("pgd needs at least one step and one restart");
    if (!(step_fraction > 0)) fail("step_fraction must be positive");
    if (std_mode == StdMode::global && !(global_std >= 0)) fail("global_std must be >= 0");
}

void to_json(nlohmann::json& j, const AttackSpec& s) {
    j = nlohmann::json{{"family", family_name(s.family)},
                       {"epsilon", s.epsilon},
                       {"steps", s.steps},
                       {"step_fraction", s.step_fraction},
                       {"restarts", s.restarts},
                       {"random_start", s.random_start},
                       {"queries", s.queries},
                       {"seed", s.seed},
                       {"std_mode", s.std_mode == StdMode::per_trial ? "per_trial" : "global"},
                       {"global_std", s.global_std}};
}

void from_json(const nlohmann::json& j, AttackSpec& s) {
    if (j.contains("family")) s.family = family_from_name(j.at("family").get<std::string>());
    s.epsilon = j.value("epsilon", s.epsilon);
    s.steps = j.value("steps", s.steps);
    s.step_fraction = j.value("step_fraction", s.step_fraction);
    s.restarts = j.value("restarts", s.restarts);
    s.random_start = j.value("random_start", s.random_start);
    s.queries = j.value("queries", s.queries);
    s.seed = j.value("seed", s.seed);
    const std::string mode = j.value("std_mode", std::string("per_trial"));
    if (mode == "per_trial")
        s.std_mode = StdMode::per_trial;
    else if (mode == "global")
        s.std_mode = StdMode::global;
    else
        throw ConfigError("unknown std_mode '" + mode + "'");
    s.global_std = j.value("global_std", s.global_std);
}

// ---------------------------------------------------------------------------
// Model adapter

template <typename Scalar>
NdArray<Scalar> ModelAdapter<Scalar>::logits(const NdArray<Scalar>& batch) {
    return predict_logits(config_, params_, batch, {Mode::eval, 0});
}

template <typename Scalar>
NdArray<Scalar> ModelAdapter<Scalar>::input_gradient(const NdArray<Scalar>& batch, std::span<const int> labels) {
    return evaluate(config_, params_, batch, labels, {Mode::eval, 0}, {false, true}).input_grad;
}

template <typename Scalar>
std::vector<int> ModelAdapter<Scalar>::labels(const NdArray<Scalar>& batch) {
    return argmax_rows(logits(batch));
}

template <typename Scalar>
std::vector<int> argmax_rows(const NdArray<Scalar>& scores) {
    if (scores.rank() != 2) throw ShapeError("argmax_rows", {scores.shape()}, "argmax_rows: expected [B, L] scores");
    const auto m = scores.matrix(scores.dim(0), scores.dim(1));
    std::vector<int> out;
    for (Index i = 0; i < m.rows(); ++i) {
        Index best = 0;
        for (Index l = 1; l < m.cols(); ++l)
            if (m(i, l) > m(i, best)) best = l;
        out.push_back(int(best));
    }
    return out;
}

namespace {

template <typename Scalar>
void check_inputs(const char* op, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec) {
    spec.validate();
    if (x.rank() != 4 || x.dim(0) < 1) throw ShapeError(op, {x.shape()}, std::string(op) + ": expected a [B, 1, c, t] batch");
    if (x.dim(0) != Index(y.size())) throw ShapeError(op, {x.shape(), {Index(y.size())}}, std::string(op) + ": one label per trial");
}

template <typename Scalar>
std::vector<double> budget(const NdArray<Scalar>& x, const AttackSpec& spec) {
    return linf_radii(x, spec.epsilon, spec.std_mode, spec.global_std);
}

template <typename Scalar>
AttackResult<Scalar> finish(NdArray<Scalar> adv, std::vector<int> predicted, std::span<const int> y, std::vector<int> queries,
                            std::vector<double> radius) {
    AttackResult<Scalar> r;
    r.adversarial = std::move(adv);
    for (std::size_t i = 0; i < y.size(); ++i) r.success.push_back(predicted[i] != y[i]);
    r.queries = std::move(queries);
    r.radius = std::move(radius);
    return r;
}

// Cross-entropy per row of a [B, L] logit matrix.
template <typename Scalar>
std::vector<double> row_losses(const NdArray<Scalar>& logits, std::span<const int> y) {
    const auto m = logits.matrix(logits.dim(0), logits.dim(1));
    std::vector<double> out;
    for (Index i = 0; i < m.rows(); ++i) {
        const double mx = double(m.row(i).maxCoeff());
        double z = 0;
        for (Index l = 0; l < m.cols(); ++l) z += std::exp(double(m(i, l)) - mx);
        out.push_back(mx + std::log(z) - double(m(i, y[std::size_t(i)])));
    }
    return out;
}

// score(y) - max other score; negative means misclassified.
template <typename Scalar>
std::vector<double> margins(const NdArray<Scalar>& scores, std::span<const int> y) {
    const auto m = scores.matrix(scores.dim(0), scores.dim(1));
    std::vector<double> out;
    for (Index i = 0; i < m.rows(); ++i) {
        double other = -std::numeric_limits<double>::infinity();
        for (Index l = 0; l < m.cols(); ++l)
            if (l != y[std::size_t(i)]) other = std::max(other, double(m(i, l)));
        out.push_back(double(m(i, y[std::size_t(i)])) - other);
    }
    return out;
}

template <typename Scalar>
void copy_trial(NdArray<Scalar>& dst, const NdArray<Scalar>& src, Index i) {
    const Index stride = dst.size() / dst.dim(0);
    dst.array().segment(i * stride, stride) = src.array().segment(i * stride, stride);
}

}  // namespace

// ---------------------------------------------------------------------------
// White-box

template <typename Scalar>
AttackResult<Scalar> fgsm_attack(WhiteBoxModel<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec) {
    check_inputs("fgsm", x, y, spec);
    const auto radii = budget(x, spec);
    auto adv = spec.epsilon == 0 ? x : sign_step(x, x, model.input_gradient(x, y), radii, radii);
    const auto predicted = argmax_rows(model.logits(adv));
    return finish(std::move(adv), predicted, y, std::vector<int>(y.size(), 1), radii);
}

template <typename Scalar>
AttackResult<Scalar> pgd_attack(WhiteBoxModel<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& raw) {
    check_inputs("pgd", x, y, raw);
    const AttackSpec spec = raw.resolved();
    const auto radii = budget(x, spec);
    std::vector<double> steps(radii.size());
    for (std::size_t i = 0; i < radii.size(); ++i) steps[i] = spec.step_fraction * radii[i];
    const Index n = x.dim(0), stride = x.size() / n;

    NdArray<Scalar> best = x;
    std::vector<double> best_loss(std::size_t(n), -std::numeric_limits<double>::infinity());
    std::vector<std::uint8_t> fooled(std::size_t(n), 0);
    for (int rs = 0; rs < spec.restarts; ++rs) {
        NdArray<Scalar> cur = x;
        if (spec.random_start) {
            Rng rng = make_rng(spec.seed, {0x9d, std::uint64_t(rs)});
            for (Index i = 0; i < n; ++i)
                for (Index k = i * stride; k < (i + 1) * stride; ++k)
                    cur[k] = Scalar(double(x[k]) + (2.0 * uniform01(rng) - 1.0) * radii[std::size_t(i)]);
            project_linf(x, cur, radii);
        }
        for (int s = 0; s < spec.steps; ++s) cur = sign_step(x, cur, model.input_gradient(cur, y), steps, radii);
        const auto logits = model.logits(cur);
        const auto loss = row_losses(logits, y);
        const auto predicted = argmax_rows(logits);
        for (Index i = 0; i < n; ++i) {
            const auto u = std::size_t(i);
            if (fooled[u]) continue;
            const bool wrong = predicted[u] != y[u];
            if (wrong || loss[u] > best_loss[u]) {
                copy_trial(best, cur, i);
                best_loss[u] = loss[u];
                fooled[u] = wrong;
            }
        }
    }
    const auto predicted = argmax_rows(model.logits(best));
    return finish(std::move(best), predicted, y, std::vector<int>(y.size(), spec.steps * spec.restarts), radii);
}

// ---------------------------------------------------------------------------
// Square: random search over rectangular time-channel patches

template <typename Scalar>
AttackResult<Scalar> square_attack(ScoreOracle<Scalar>& oracle, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec) {
    check_inputs("square", x, y, spec);
    const auto radii = budget(x, spec);
    const Index n = x.dim(0), c = x.dim(2), t = x.dim(3), stride = c * t;
    std::vector<int> queries(std::size_t(n), 0);
    if (spec.queries == 0 || spec.epsilon == 0) return finish(x, std::vector<int>(y.begin(), y.end()), y, queries, radii);

    Rng rng = make_rng(spec.seed, {0x5a});
    // Vertical stripes: one random sign per time sample.
    NdArray<Scalar> adv = x;
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < t; ++k) {
            const double s = uniform01(rng) < 0.5 ? -1.0 : 1.0;
            for (Index ch = 0; ch < c; ++ch) {
                const Index at = i * stride + ch * t + k;
                adv[at] = Scalar(double(x[at]) + s * radii[std::size_t(i)]);
            }
        }
    project_linf(x, adv, radii);
    auto m = margins(oracle.scores(adv), y);
    std::vector<std::uint8_t> active(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        queries[std::size_t(i)] = 1;
        active[std::size_t(i)] = radii[std::size_t(i)] > 0 && m[std::size_t(i)] >= 0;
        if (radii[std::size_t(i)] == 0) copy_trial(adv, x, i);
    }

    const Index shortest = std::min(c, t);
    const Index side0 = std::max<Index>(1, Index(std::ceil(0.3 * double(shortest))));
    for (int it = 1; it < spec.queries; ++it) {
        if (std::none_of(active.begin(), active.end(), [](auto a) { return a != 0; })) break;
        const int phase = std::min(4, int(5.0 * double(it) / double(spec.queries)));
        const Index side = std::max<Index>(1, side0 >> phase);
        const Index h = std::clamp<Index>(Index(std::lround(double(side * c) / double(shortest))), 1, c);
        const Index w = std::clamp<Index>(Index(std::lround(double(side * t) / double(shortest))), 1, t);
        NdArray<Scalar> cand = adv;
        for (Index i = 0; i < n; ++i) {
            if (!active[std::size_t(i)]) continue;
            const Index c0 = Index(uniform_index(rng, std::uint64_t(c - h + 1)));
            const Index t0 = Index(uniform_index(rng, std::uint64_t(t - w + 1)));
            for (Index ch = c0; ch < c0 + h; ++ch) {
                const double s = uniform01(rng) < 0.5 ? -1.0 : 1.0;
                for (Index k = t0; k < t0 + w; ++k) {
                    const Index at = i * stride + ch * t + k;
                    cand[at] = Scalar(double(x[at]) + s * radii[std::size_t(i)]);
                }
            }
        }
        project_linf(x, cand, radii);
        const auto mc = margins(oracle.scores(cand), y);
        for (Index i = 0; i < n; ++i) {
            const auto u = std::size_t(i);
            if (!active[u]) continue;
            ++queries[u];
            if (mc[u] < m[u]) {
                copy_trial(adv, cand, i);
                m[u] = mc[u];
                if (m[u] < 0) active[u] = 0;
            }
        }
    }
    std::vector<int> predicted;
    for (Index i = 0; i < n; ++i) predicted.push_back(m[std::size_t(i)] < 0 ? -1 : y[std::size_t(i)]);
    return finish(std::move(adv), predicted, y, queries, radii);
}

// ---------------------------------------------------------------------------
// RayS: hard-label search over sign vertices with hierarchical blocks

// The first boundary search tries radii cap, 2 cap, ..., 2^kRaysReach cap.
constexpr int kRaysReach = 10;

template <typename Scalar>
AttackResult<Scalar> rays_attack(LabelOracle<Scalar>& oracle, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec) {
    check_inputs("rays", x, y, spec);
    const auto radii = budget(x, spec);
    const Index n = x.dim(0), d = x.size() / n;
    constexpr double inf = std::numeric_limits<double>::infinity();
    NdArray<Scalar> adv = x;
    std::vector<int> queries(std::size_t(n), 0);
    std::vector<double> found(std::size_t(n), inf);
    std::vector<int> predicted(y.begin(), y.end());
    if (spec.queries == 0) return finish(x, predicted, y, queries, found);

    std::vector<double> box(std::size_t(n), 0.0);
    for (Index i = 0; i < n; ++i) {
        const auto u = std::size_t(i);
        int& q = queries[u];
        // Label of trial i at x_i + radius * dir, the rest of the batch clean.
        auto probe = [&](const std::vector<Scalar>& dir, double radius) {
            NdArray<Scalar> b = x;
            for (Index k = 0; k < d; ++k) b[i * d + k] = Scalar(double(x[i * d + k]) + radius * double(dir[std::size_t(k)]));
            box[u] = radius;
            project_linf(x, b, box);
            box[u] = 0;
            ++q;
            return std::pair{oracle.labels(b)[u] != y[u], std::move(b)};
        };

        std::vector<Scalar> dir(std::size_t(d), Scalar(1));
        const std::vector<Scalar> zero(std::size_t(d), Scalar(0));
        if (probe(zero, 0.0).first) {
            found[u] = 0;
            predicted[u] = -1;
            continue;
        }
        const double cap = radii[u];
        if (!(cap > 0)) continue;

        // [lo, hi]: the current direction is clean at lo and misclassified at hi.
        // The search is not limited to the budget; success means hi <= cap.
        double lo = 0, hi = inf;
        // a is clean, b misclassifies; 10 halvings leave a gap of (b - a) / 1024.
        auto bisect = [&](double a, double b) {
            for (int s = 0; s < 10 && q < spec.queries; ++s) {
                const double mid = 0.5 * (a + b);
                if (probe(dir, mid).first)
                    b = mid;
                else
                    a = mid;
            }
            lo = a;
            hi = b;
        };
        // Beyond the budget, first halve down to the smallest misclassifying
        // power-of-two multiple of cap so the bisection stays fine.
        auto locate = [&](double top) {
            double b = top;
            while (b > cap && q < spec.queries && probe(dir, b / 2).first) b /= 2;
            bisect(b > cap ? b / 2 : 0.0, b);
        };
        // Initial boundary along the all-ones vertex, doubling out from the budget.
        double reach = cap;
        for (int k = 0; k <= kRaysReach && q < spec.queries; ++k, reach *= 2)
            if (probe(dir, reach).first) {
                bisect(k == 0 ? 0.0 : reach / 2, reach);
                break;
            }
        if (!std::isfinite(hi)) reach /= 2;

        for (Index blocks = 1; blocks <= d && q < spec.queries; blocks *= 2) {
            for (Index j = 0; j < blocks && q < spec.queries; ++j) {
                const Index b0 = j * d / blocks, b1 = (j + 1) * d / blocks;
                for (Index k = b0; k < b1; ++k) dir[std::size_t(k)] = -dir[std::size_t(k)];
                // A flipped direction is kept only if it misclassifies where the
                // current one is still clean.
                const double test = std::isfinite(hi) ? lo : reach;
                if (test > 0 && probe(dir, test).first) {
                    locate(test);
                } else {
                    for (Index k = b0; k < b1; ++k) dir[std::size_t(k)] = -dir[std::size_t(k)];
                }
            }
        }
        found[u] = hi;
        if (hi <= cap) {
            predicted[u] = -1;
            auto [wrong, b] = probe(dir, hi);
            --q;
            copy_trial(adv, b, i);
            (void)wrong;
        }
    }
    return finish(std::move(adv), predicted, y, queries, found);
}

template <typename Scalar>
AttackResult<Scalar> run_attack(ModelAdapter<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec) {
    switch (spec.family) {
        case AttackFamily::fgsm: return fgsm_attack<Scalar>(model, x, y, spec);
        case AttackFamily::pgd:
        case AttackFamily::pgd_strong: return pgd_attack<Scalar>(model, x, y, spec);
        case AttackFamily::square: return square_attack<Scalar>(model, x, y, spec);
        case AttackFamily::rays: return rays_attack<Scalar>(model, x, y, spec);
    }
    throw ConfigError("unknown attack family");
}

#define SAFE_INSTANTIATE_ATTACKS(S)                                                                                            \
    template class ModelAdapter<S>;                                                                                            \
    template std::vector<int> argmax_rows<S>(const NdArray<S>&);                                                               \
    template AttackResult<S> fgsm_attack<S>(WhiteBoxModel<S>&, const NdArray<S>&, std::span<const int>, const AttackSpec&);    \
    template AttackResult<S> pgd_attack<S>(WhiteBoxModel<S>&, const NdArray<S>&, std::span<const int>, const AttackSpec&);     \
    template AttackResult<S> square_attack<S>(ScoreOracle<S>&, const NdArray<S>&, std::span<const int>, const AttackSpec&);    \
    template AttackResult<S> rays_attack<S>(LabelOracle<S>&, const NdArray<S>&, std::span<const int>, const AttackSpec&);      \
    template AttackResult<S> run_attack<S>(ModelAdapter<S>&, const NdArray<S>&, std::span<const int>, const AttackSpec&);

SAFE_INSTANTIATE_ATTACKS(float)
SAFE_INSTANTIATE_ATTACKS(double)

}  // namespace safe
