#include <safe/attacks.hpp>
#include <safe/client.hpp>
#include <safe/data.hpp>
#include <safe/error.hpp>
#include <safe/perturb.hpp>
#include <safe/rng.hpp>

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace safe;

namespace {

// Two-class linear model: logit_0 = 0, logit_1 = w·x + b. Closed-form minimal
// ℓ∞ flipping distance of a trial is |w·x + b| / ‖w‖₁.
class Linear final : public WhiteBoxModel<double>, public ScoreOracle<double>, public LabelOracle<double> {
public:
    Linear(Eigen::VectorXd w, double b) : w_(std::move(w)), b_(b) {}

    double score(const NdArray<double>& x, Index i) const {
        const Index d = w_.size();
        return x.array().segment(i * d, d).matrix().dot(w_) + b_;
    }
    double distance(const NdArray<double>& x, Index i) const { return std::abs(score(x, i)) / w_.lpNorm<1>(); }

    NdArray<double> logits(const NdArray<double>& x) override {
        ++calls;
        NdArray<double> out({x.dim(0), 2});
        for (Index i = 0; i < x.dim(0); ++i) out[2 * i + 1] = score(x, i);
        return out;
    }
    NdArray<double> input_gradient(const NdArray<double>& x, std::span<const int> y) override {
        NdArray<double> g(x.shape());
        const Index d = w_.size(), n = x.dim(0);
        for (Index i = 0; i < n; ++i) {
            const double p1 = 1.0 / (1.0 + std::exp(-score(x, i)));
            g.array().segment(i * d, d) = w_.array() * ((p1 - (y[std::size_t(i)] == 1)) / double(n));
        }
        return g;
    }
    NdArray<double> scores(const NdArray<double>& x) override { return logits(x); }
    std::vector<int> labels(const NdArray<double>& x) override { return argmax_rows(logits(x)); }

    long calls = 0;

private:
    Eigen::VectorXd w_;
    double b_;
};

class Constant final : public ScoreOracle<double>, public LabelOracle<double> {
public:
    NdArray<double> scores(const NdArray<double>& x) override {
        NdArray<double> out({x.dim(0), 2});
        for (Index i = 0; i < x.dim(0); ++i) out[2 * i] = 1.0;
        return out;
    }
    std::vector<int> labels(const NdArray<double>& x) override { return std::vector<int>(std::size_t(x.dim(0)), 0); }
};

class ZeroGradient final : public WhiteBoxModel<double> {
public:
    NdArray<double> logits(const NdArray<double>& x) override { return NdArray<double>({x.dim(0), 2}); }
    NdArray<double> input_gradient(const NdArray<double>& x, std::span<const int>) override { return NdArray<double>(x.shape()); }
};

NdArray<double> random_batch(Index n, Index c, Index t, Rng& rng) {
    NdArray<double> x({n, 1, c, t});
    for (Index k = 0; k < x.size(); ++k) x[k] = standard_normal(rng);
    return x;
}

// Labels are the linear model's own predictions, so every trial starts clean.
std::vector<int> own_labels(Linear& m, const NdArray<double>& x) { return m.labels(x); }

Eigen::VectorXd random_weights(Index d, Rng& rng) {
    Eigen::VectorXd w(d);
    for (Index k = 0; k < d; ++k) w[k] = standard_normal(rng);
    return w;
}

AttackSpec spec_at(AttackFamily f, double eps) {
    AttackSpec s;
    s.family = f;
    s.epsilon = eps;
    s.seed = 7;
    return s;
}

std::vector<double> stds(const NdArray<double>& x) {
    std::vector<double> out;
    const Index d = x.size() / x.dim(0);
    for (Index i = 0; i < x.dim(0); ++i) out.push_back(trial_std<double>(x.span().subspan(std::size_t(i * d), std::size_t(d))));
    return out;
}

ModelConfig small_model() {
    ModelConfig c;
    c.channels = 4;
    c.samples = 32;
    c.f1 = 2;
    c.depth = 2;
    c.f2 = 4;
    c.pool1 = 2;
    c.pool2 = 4;
    return c;
}

}  // namespace

template <typename T>
concept HasInputGradient = requires(T& o, const NdArray<double>& x, std::span<const int> y) { o.input_gradient(x, y); };
template <typename T>
concept HasScores = requires(T& o, const NdArray<double>& x) { o.scores(x); };

static_assert(HasInputGradient<WhiteBoxModel<double>>);
static_assert(!HasInputGradient<ScoreOracle<double>>);
static_assert(!HasInputGradient<LabelOracle<double>>);
static_assert(!HasScores<LabelOracle<double>>);

TEST_CASE("trial std") {
    const std::vector<double> zeros(16, 0.0);
    CHECK(trial_std<double>(zeros) == 0.0);
    const std::vector<double> pm{-1, 1, -1, 1, 1, -1};
    CHECK(trial_std<double>(pm) == 1.0);

    Rng rng = make_rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> v(50 + std::size_t(rep));
        for (auto& e : v) e = 3.0 + 2.0 * standard_normal(rng);
        double mean = 0;
        for (double e : v) mean += e;
        mean /= double(v.size());
        double ss = 0;
        for (double e : v) ss += (e - mean) * (e - mean);
        CHECK(trial_std<double>(v) == doctest::Approx(std::sqrt(ss / double(v.size()))).epsilon(1e-10));
    }
}

TEST_CASE("attacks leave constant trials unchanged") {
    Rng rng = make_rng(3);
    NdArray<double> x({3, 1, 2, 4});
    x.array().segment(8, 8).setConstant(2.5);  // trial 0 is zeros, trial 1 is constant, trial 2 random
    for (Index k = 16; k < 24; ++k) x[k] = standard_normal(rng);
    Linear m(random_weights(8, rng), 0.1);
    const std::vector<int> y{0, 0, 0};
    for (auto f : {AttackFamily::fgsm, AttackFamily::pgd, AttackFamily::square, AttackFamily::rays}) {
        auto s = spec_at(f, 0.5);
        s.queries = 50;
        AttackResult<double> r;
        if (f == AttackFamily::fgsm) r = fgsm_attack<double>(m, x, y, s);
        if (f == AttackFamily::pgd) r = pgd_attack<double>(m, x, y, s);
        if (f == AttackFamily::square) r = square_attack<double>(m, x, y, s);
        if (f == AttackFamily::rays) r = rays_attack<double>(m, x, y, s);
        const auto dist = linf_distance(x, r.adversarial);
        CHECK(dist[0] == 0.0);
        CHECK(dist[1] == 0.0);
    }
}

TEST_CASE("epsilon 0 and zero gradients are no-ops") {
    Rng rng = make_rng(4);
    const auto x = random_batch(5, 2, 8, rng);
    Linear m(random_weights(16, rng), 0.0);
    const auto y = own_labels(m, x);
    CHECK(fgsm_attack<double>(m, x, y, spec_at(AttackFamily::fgsm, 0.0)).adversarial == x);
    auto p = spec_at(AttackFamily::pgd, 0.0);
    CHECK(pgd_attack<double>(m, x, y, p).adversarial == x);
    CHECK(square_attack<double>(m, x, y, spec_at(AttackFamily::square, 0.0)).adversarial == x);

    ZeroGradient z;
    CHECK(fgsm_attack<double>(z, x, y, spec_at(AttackFamily::fgsm, 0.1)).adversarial == x);
}

TEST_CASE("zero query budgets return the input") {
    Rng rng = make_rng(5);
    const auto x = random_batch(4, 2, 8, rng);
    Linear m(random_weights(16, rng), 0.0);
    const auto y = own_labels(m, x);
    for (auto f : {AttackFamily::square, AttackFamily::rays}) {
        auto s = spec_at(f, 0.5);
        s.queries = 0;
        const auto r = f == AttackFamily::square ? square_attack<double>(m, x, y, s) : rays_attack<double>(m, x, y, s);
        CHECK(r.adversarial == x);
        CHECK(std::accumulate(r.queries.begin(), r.queries.end(), 0) == 0);
        for (auto ok : r.success) CHECK_FALSE(ok);
    }
}

TEST_CASE("every family stays inside the per-trial box") {
    Rng rng = make_rng(6);
    const auto c = small_model();
    const auto params = build_model<double>(c, 3);
    ModelAdapter<double> model(c, params);
    for (int rep = 0; rep < 3; ++rep) {
        const auto x = random_batch(6, 4, 32, rng);
        std::vector<int> y(6);
        for (auto& e : y) e = int(uniform_index(rng, 2));
        const auto s = stds(x);
        for (auto f : {AttackFamily::fgsm, AttackFamily::pgd, AttackFamily::square, AttackFamily::rays})
            for (double eps : {0.01, 0.1, 1.0}) {
                auto spec = spec_at(f, eps);
                spec.steps = 5;
                spec.queries = 40;
                spec.seed = std::uint64_t(rep);
                const auto r = run_attack<double>(model, x, y, spec);
                const auto dist = linf_distance(x, r.adversarial);
                for (std::size_t i = 0; i < dist.size(); ++i) CHECK(dist[i] <= eps * s[i] + 1e-9);
            }
    }
}

TEST_CASE("FGSM flips a linear model whenever the budget exceeds the closed-form distance") {
    Rng rng = make_rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const auto x = random_batch(8, 2, 6, rng);
        Linear m(random_weights(12, rng), standard_normal(rng));
        const auto y = own_labels(m, x);
        const auto s = stds(x);
        for (Index i = 0; i < 8; ++i) {
            const auto one = NdArray<double>({1, 1, 2, 6}, Eigen::ArrayXd(x.array().segment(i * 12, 12)));
            const double need = m.distance(x, i) / s[std::size_t(i)];
            const std::vector<int> yi{y[std::size_t(i)]};
            CHECK(fgsm_attack<double>(m, one, yi, spec_at(AttackFamily::fgsm, need * 1.01)).success[0]);
            CHECK_FALSE(fgsm_attack<double>(m, one, yi, spec_at(AttackFamily::fgsm, need * 0.99)).success[0]);
        }
    }
}

TEST_CASE("one PGD step from the clean point is FGSM") {
    Rng rng = make_rng(9);
    const auto c = small_model();
    const auto params = build_model<double>(c, 5);
    ModelAdapter<double> model(c, params);
    const auto x = random_batch(6, 4, 32, rng);
    const std::vector<int> y{0, 1, 0, 1, 1, 0};
    auto pgd = spec_at(AttackFamily::pgd, 0.05);
    pgd.steps = 1;
    pgd.step_fraction = 1.0;
    pgd.random_start = false;
    const auto a = pgd_attack<double>(model, x, y, pgd);
    const auto b = fgsm_attack<double>(model, x, y, spec_at(AttackFamily::fgsm, 0.05));
    CHECK(a.adversarial == b.adversarial);
    CHECK(a.success == b.success);
}

TEST_CASE("PGD succeeds at least as often as FGSM on an undefended model") {
    auto c = small_model();
    c.norm = NormMode::conventional;
    BenchmarkSpec b;
    b.channels = 4;
    b.samples = 32;
    const auto train = euclidean_align(generate_subject(subject_spec(b, 0), 2, 4, 32, 96, 1));
    const auto test = euclidean_align(generate_subject(subject_spec(b, 0), 2, 4, 32, 64, 2));
    ClientConfig cc;
    cc.fat = false;
    cc.awp = false;
    cc.epochs = 10;
    cc.batch_size = 16;
    cc.lr = 0.02;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ClientState<double> state;
        state.seed = seed;
        const auto params = client_update(state, build_model<double>(c, seed), train, c, cc, 0);
        ModelAdapter<double> model(c, params);
        std::vector<Index> rows(64);
        std::iota(rows.begin(), rows.end(), Index(0));
        const auto x = test.gather(rows).cast<double>();
        auto pgd = spec_at(AttackFamily::pgd, 0.1);
        pgd.seed = seed;
        const auto rp = pgd_attack<double>(model, x, test.labels, pgd);
        const auto rf = fgsm_attack<double>(model, x, test.labels, spec_at(AttackFamily::fgsm, 0.1));
        const auto wins = [](const auto& r) { return std::count(r.success.begin(), r.success.end(), std::uint8_t(1)); };
        CHECK(wins(rp) >= wins(rf));
    }
}

TEST_CASE("Square against a constant model never succeeds") {
    Rng rng = make_rng(10);
    const auto x = random_batch(4, 3, 10, rng);
    Constant m;
    const std::vector<int> y(4, 0);
    auto s = spec_at(AttackFamily::square, 0.2);
    s.queries = 30;
    const auto r = square_attack<double>(m, x, y, s);
    const auto dist = linf_distance(x, r.adversarial);
    const auto sd = stds(x);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK_FALSE(r.success[i]);
        CHECK(dist[i] <= 0.2 * sd[i] + 1e-9);
        CHECK(r.queries[i] == 30);
    }
}

TEST_CASE("Square breaks a linear model when the budget exceeds the margin") {
    Rng rng = make_rng(11);
    int wins = 0, total = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const auto x = random_batch(10, 4, 32, rng);
        Linear m(random_weights(128, rng), standard_normal(rng));
        const auto y = own_labels(m, x);
        const auto s = stds(x);
        for (Index i = 0; i < 10; ++i) {
            const auto one = NdArray<double>({1, 1, 4, 32}, Eigen::ArrayXd(x.array().segment(i * 128, 128)));
            auto spec = spec_at(AttackFamily::square, 3.0 * m.distance(x, i) / s[std::size_t(i)]);
            spec.queries = 500;
            spec.seed = std::uint64_t(rep * 10 + i);
            const std::vector<int> yi{y[std::size_t(i)]};
            const auto r = square_attack<double>(m, one, yi, spec);
            wins += r.success[0];
            ++total;
            if (r.success[0]) CHECK(m.labels(r.adversarial)[0] != yi[0]);
        }
    }
    CHECK(wins >= 0.9 * total);
}

TEST_CASE("RayS matches an exhaustive vertex search on a tiny input") {
    Rng rng = make_rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        const auto x = random_batch(1, 2, 2, rng);
        // weights bounded away from zero so every coordinate flip is visible
        // above the bisection resolution
        Eigen::VectorXd w = random_weights(4, rng);
        for (Index k = 0; k < 4; ++k) w[k] = (w[k] < 0 ? -1 : 1) * (0.5 + std::abs(w[k]));
        Linear m(w, standard_normal(rng));
        const auto y = own_labels(m, x);
        const double sd = stds(x)[0];

        // smallest radius over all 16 sign vertices, closed form along each ray
        const double sc = m.score(x, 0);
        double best = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_dir;
        for (int mask = 0; mask < 16; ++mask) {
            Eigen::VectorXd dir(4);
            for (int k = 0; k < 4; ++k) dir[k] = (mask >> k) & 1 ? 1.0 : -1.0;
            NdArray<double> unit({1, 1, 2, 2}, Eigen::ArrayXd(dir.array()));
            const double slope = m.score(unit, 0) - m.score(NdArray<double>({1, 1, 2, 2}), 0);
            if (sc * slope < 0 && -sc / slope < best) {
                best = -sc / slope;
                best_dir = dir;
            }
        }
        const double eps = 1.5 * best / sd, cap = eps * sd;
        auto spec = spec_at(AttackFamily::rays, eps);
        spec.queries = 500;
        const auto r = rays_attack<double>(m, x, y, spec);
        REQUIRE(r.success[0]);
        CHECK(r.radius[0] >= best * (1 - 1e-12));
        CHECK(r.radius[0] <= cap);
        for (int k = 0; k < 4; ++k) CHECK((r.adversarial[k] - x[k]) * best_dir[k] > 0);
    }
}

TEST_CASE("RayS reports failure and the radius it found below the closed-form distance") {
    Rng rng = make_rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        const auto x = random_batch(1, 2, 8, rng);
        Linear m(random_weights(16, rng), standard_normal(rng));
        const auto y = own_labels(m, x);
        auto spec = spec_at(AttackFamily::rays, 0.9 * m.distance(x, 0) / stds(x)[0]);
        spec.queries = 300;
        const auto r = rays_attack<double>(m, x, y, spec);
        CHECK_FALSE(r.success[0]);
        CHECK(r.radius[0] >= m.distance(x, 0) * (1 - 1e-12));
        CHECK(r.adversarial == x);
    }
}

TEST_CASE("RayS on an already misclassified input returns it at radius 0") {
    Rng rng = make_rng(14);
    const auto x = random_batch(2, 2, 4, rng);
    Linear m(random_weights(8, rng), 0.3);
    auto y = own_labels(m, x);
    y[0] = 1 - y[0];
    const auto r = rays_attack<double>(m, x, y, spec_at(AttackFamily::rays, 0.5));
    CHECK(r.success[0]);
    CHECK(r.radius[0] == 0.0);
    CHECK(linf_distance(x, r.adversarial)[0] == 0.0);
}

TEST_CASE("all families are deterministic under a fixed seed") {
    Rng rng = make_rng(15);
    const auto c = small_model();
    const auto params = build_model<double>(c, 8);
    ModelAdapter<double> model(c, params);
    const auto x = random_batch(4, 4, 32, rng);
    const std::vector<int> y{1, 0, 1, 0};
    for (auto f : {AttackFamily::fgsm, AttackFamily::pgd, AttackFamily::pgd_strong, AttackFamily::square, AttackFamily::rays}) {
        auto s = spec_at(f, 0.2);
        s.queries = 60;
        const auto a = run_attack<double>(model, x, y, s), b = run_attack<double>(model, x, y, s);
        CHECK(a.adversarial == b.adversarial);
        CHECK(a.success == b.success);
        CHECK(a.queries == b.queries);
    }
}

TEST_CASE("attack spec validation and names") {
    for (auto f : {AttackFamily::fgsm, AttackFamily::pgd, AttackFamily::pgd_strong, AttackFamily::square, AttackFamily::rays})
        CHECK(family_from_name(family_name(f)) == f);
    CHECK_THROWS_AS(family_from_name("apgd"), ConfigError);
    AttackSpec s;
    s.epsilon = -0.1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.steps = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.queries = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.family = AttackFamily::pgd_strong;
    CHECK(s.resolved().restarts == 5);
    CHECK(s.resolved().steps == 50);

    nlohmann::json j = spec_at(AttackFamily::square, 0.05);
    CHECK(j.get<AttackSpec>().family == AttackFamily::square);
    CHECK(j.get<AttackSpec>().epsilon == 0.05);
}

TEST_CASE("global std mode uses one radius for every trial") {
    Rng rng = make_rng(16);
    auto x = random_batch(3, 2, 8, rng);
    x.array().segment(16, 16) *= 10.0;
    const auto r = linf_radii(x, 0.1, StdMode::global, 2.0);
    for (double e : r) CHECK(e == doctest::Approx(0.2));
    const auto p = linf_radii(x, 0.1);
    CHECK(p[1] > 5 * p[0]);
}
