// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run criteria 1-12
//   acceptance 4 6 11     run a subset
//
// Thresholds and the benchmark configuration are fixed here. Progress goes to
// stderr, verdicts to stdout. Exit status is nonzero if any criterion fails.

#include "support/gradcheck.hpp"

#include <safe/eval.hpp>
#include <safe/io.hpp>
#include <safe/lbsn.hpp>
#include <safe/perturb.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace safe;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Pinned thresholds

constexpr double kGradRelTol = 1e-3;
constexpr double kGradSeconds = 60;
constexpr double kAggRelTol = 1e-12;
constexpr double kBallSlack = 1e-9;
constexpr double kAwpRelTol = 1e-12;
constexpr double kGridMinutes = 30;
constexpr double kFatGap = 0.10;
constexpr double kChanceBand = 0.10;
constexpr double kSafeAboveChance = 0.25;
constexpr double kLbsnGap = 0.05;
constexpr double kSweepRange = 0.05;
constexpr int kBallTrials = 1000;
constexpr int kBcaPatterns = 50;
constexpr int kRounds = 20;
// Sweeps compare converged models; E=1 needs more rounds to get there.
constexpr int kSweepRounds = 30;

// Synthetic benchmark at the acceptance size (K=8, c=8, t=128, L=2, 160
// trials, 5 seeds) with a reduced model, round count and attack budget so
// the whole suite fits on one CPU core.
ExperimentConfig acceptance_config() {
    ExperimentConfig cfg;
    cfg.benchmark = BenchmarkSpec{};
    cfg.model.f1 = 4;
    cfg.model.f2 = 8;
    cfg.federation.rounds = kRounds;
    cfg.seeds = {0, 1, 2, 3, 4};
    AttackSpec pgd3, pgd5, square;
    pgd3.family = pgd5.family = AttackFamily::pgd;
    pgd3.epsilon = 0.03;
    pgd5.epsilon = 0.05;
    pgd3.steps = pgd5.steps = 20;
    square.family = AttackFamily::square;
    square.epsilon = 0.05;
    square.queries = 200;
    cfg.attacks = {pgd3, pgd5, square};
    return cfg;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& what) { std::cerr << "  .. " << what << std::endl; }

LosoHooks progress_hooks(const std::string& label) {
    LosoHooks h;
    h.progress = [label](std::uint64_t seed, int subject, double s) {
        if (subject == 7) progress(label + " seed " + std::to_string(seed) + " done (" + fmt("%.1f", s) + " s last fold)");
    };
    return h;
}

// ---------------------------------------------------------------------------
// Shared state for the expensive runs

struct PrivacyScan {
    std::size_t payloads = 0;
    std::size_t tensors = 0;
    std::size_t bn_tensors = 0;
    std::size_t forbidden_hits = 0;
};

struct Context {
    ExperimentConfig cfg = acceptance_config();
    std::map<std::string, LosoResult> grid;
    std::map<std::string, double> grid_seconds;
    PrivacyScan scan;
    bool scanned = false;

    ExperimentConfig row_config(const Toggles& t) const {
        ExperimentConfig c = cfg;
        c.method = Method::safe;
        c.toggles = t;
        return c;
    }

    // Byte fingerprints of every training subject: aligned and raw trial
    // windows, and label vectors as int32 and float32.
    std::vector<io::Bytes> forbidden_patterns() const {
        std::vector<io::Bytes> out;
        const auto raw = load_subjects(cfg);
        for (const auto& subject : raw) {
            for (const auto* d : {&subject}) {
                const auto aligned = prepare_subject(cfg, *d, false, 0);
                for (const auto* src : {d, &aligned}) {
                    const Index stride = src->channels() * src->samples();
                    for (Index trial : {Index(0), src->size() / 2, src->size() - 1})
                        for (Index off : {Index(0), stride / 2}) {
                            io::Bytes b;
                            for (Index k = 0; k < 16; ++k) io::append_le(b, src->trials[trial * stride + off + k]);
                            out.push_back(std::move(b));
                        }
                }
                io::Bytes li, lf;
                for (std::size_t k = 0; k < 32; ++k) {
                    io::append_le(li, std::int32_t(d->labels[k]));
                    io::append_le(lf, float(d->labels[k]));
                }
                out.push_back(std::move(li));
                out.push_back(std::move(lf));
            }
        }
        return out;
    }

    // Full SAFE row of the grid, every payload scanned on the way.
    const LosoResult& full_safe() {
        const std::string label = toggles_label({true, true, true});
        if (grid.count(label)) return grid.at(label);
        const auto patterns = forbidden_patterns();
        auto hooks = progress_hooks("grid " + label);
        hooks.observer = [&](std::uint64_t, int, const PayloadEvent& e) {
            const auto s = scan_payload(e.bytes, patterns);
            ++scan.payloads;
            scan.tensors += s.tensors;
            scan.bn_tensors += s.bn_tensors.size();
            scan.forbidden_hits += s.forbidden_hits;
        };
        const auto t0 = Clock::now();
        grid[label] = loso_run(row_config({true, true, true}), hooks);
        grid_seconds[label] = seconds_since(t0);
        scanned = true;
        return grid.at(label);
    }

    const LosoResult& row(const Toggles& t) {
        if (t == Toggles{true, true, true}) return full_safe();
        const std::string label = toggles_label(t);
        if (!grid.count(label)) {
            const auto t0 = Clock::now();
            grid[label] = loso_run(row_config(t), progress_hooks("grid " + label));
            grid_seconds[label] = seconds_since(t0);
        }
        return grid.at(label);
    }
};

// Trained model and test data for the attack checks.
struct AttackFixture {
    ModelConfig config;
    ParameterSet<float> params;
    ClientDataset test;
};

AttackFixture attack_fixture(const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    cfg.method = Method::fedavg;
    cfg.federation.rounds = 3;
    const auto raw = load_subjects(cfg);
    std::vector<ClientDataset> train;
    for (std::size_t k = 1; k < raw.size(); ++k) train.push_back(prepare_subject(cfg, raw[k], true, 0));
    const auto model = train_model(cfg, train, 7);
    return {model.config, model.params, prepare_subject(cfg, raw[0], false, 0)};
}

// ---------------------------------------------------------------------------
// Criteria

Verdict c1_gradients(Context&) {
    const auto t0 = Clock::now();
    double worst = 0;
    std::string worst_op;
    int cases = 0;
    for (const auto& op : testing::op_cases()) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng = make_rng(seed, {0xacc1});
            auto [fn, inputs] = op.make(rng, seed);
            const double e = testing::gradcheck(fn, inputs).max_rel_error;
            ++cases;
            if (e > worst) {
                worst = e;
                worst_op = op.name;
            }
        }
    }
    const double s = seconds_since(t0);
    return {worst < kGradRelTol && s < kGradSeconds,
            std::to_string(testing::op_cases().size()) + " ops x 100 cases, max rel err " + fmt("%.2e", worst) + " (" + worst_op + "), " +
                fmt("%.1f s", s)};
}

Verdict c2_aggregation(Context& ctx) {
    Rng rng = make_rng(0xacc2);
    double worst = 0;
    bool permutation_ok = true;
    int trials = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const int k = 2 + int(uniform_index(rng, 7));
        std::vector<WeightedPayload<double>> payloads;
        for (int c = 0; c < k; ++c) {
            auto p = strip_bn(build_model<double>(ctx.cfg.model, derive_seed(rep, {std::uint64_t(c)})));
            for (auto& e : p.entries())
                for (Index i = 0; i < e.value.size(); ++i) e.value[i] = standard_normal(rng) * std::exp(2 * standard_normal(rng));
            payloads.push_back({int(uniform_index(rng, 1000)) * 8 + c, 1.0 + double(uniform_index(rng, 400)), std::move(p)});
        }
        const auto got = aggregate(payloads);

        // Naive oracle: weighted sum over payloads in input order, long double.
        long double total = 0;
        for (const auto& p : payloads) total += p.samples;
        for (std::size_t t = 0; t < got.size(); ++t) {
            const auto& g = got.entries()[t].value;
            double err = 0, scale = 0;
            for (Index i = 0; i < g.size(); ++i) {
                long double acc = 0;
                for (const auto& p : payloads) acc += (long double)p.samples * p.params.entries()[t].value[i];
                const double want = double(acc / total);
                err = std::max(err, std::abs(g[i] - want));
                scale = std::max(scale, std::abs(want));
            }
            worst = std::max(worst, err / scale);
        }
        for (int perm = 0; perm < 5; ++perm) {
            auto shuffled = payloads;
            for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[uniform_index(rng, i)]);
            permutation_ok = permutation_ok && aggregate(shuffled) == got;
        }
        ++trials;
    }
    return {worst <= kAggRelTol && permutation_ok, std::to_string(trials) + " random payload sets, max tensor rel err " + fmt("%.2e", worst) +
                                                       ", permutations " + (permutation_ok ? "bit-identical" : "DIFFER")};
}

Verdict c3_privacy(Context& ctx) {
    ctx.full_safe();
    const auto& s = ctx.scan;
    return {ctx.scanned && s.payloads > 0 && s.bn_tensors == 0 && s.forbidden_hits == 0,
            std::to_string(s.payloads) + " payloads / " + std::to_string(s.tensors) + " tensors scanned over a 5-seed loso run, " +
                std::to_string(s.bn_tensors) + " bn-tagged, " + std::to_string(s.forbidden_hits) + " trial/label byte hits"};
}

Verdict c4_ball(Context& ctx) {
    const auto fx = attack_fixture(ctx.cfg);
    ModelAdapter<float> adapter(fx.config, fx.params);
    std::vector<Index> rows;
    for (Index i = 0; i < fx.test.size(); ++i) rows.push_back(i);

    bool ok = true;
    std::ostringstream detail;
    const std::vector<std::pair<AttackFamily, double>> families{{AttackFamily::fgsm, 0.05},   {AttackFamily::pgd, 0.03},
                                                                {AttackFamily::pgd_strong, 0.05}, {AttackFamily::square, 0.1},
                                                                {AttackFamily::rays, 0.1}};
    for (const auto& [family, eps] : families) {
        AttackSpec spec;
        spec.family = family;
        spec.epsilon = eps;
        spec.queries = 100;
        int checked = 0, violations = 0;
        for (int b = 0; checked < kBallTrials; ++b) {
            std::vector<Index> batch;
            for (int j = 0; j < 8; ++j) batch.push_back(rows[std::size_t((b * 8 + j) % int(rows.size()))]);
            const auto x = fx.test.gather(batch);
            const auto y = fx.test.gather_labels(batch);
            spec.seed = std::uint64_t(b);
            const auto r = run_attack(adapter, x, y, spec);
            const Index d = x.size() / x.dim(0);
            for (Index i = 0; i < x.dim(0) && checked < kBallTrials; ++i, ++checked) {
                // independent per-trial std in long double
                long double m = 0, v = 0;
                for (Index k = 0; k < d; ++k) m += x[i * d + k];
                m /= d;
                for (Index k = 0; k < d; ++k) v += (x[i * d + k] - m) * (x[i * d + k] - m);
                const double bound = eps * double(std::sqrt(v / d)) + kBallSlack;
                for (Index k = 0; k < d; ++k)
                    if (std::abs(double(r.adversarial[i * d + k]) - double(x[i * d + k])) > bound) {
                        ++violations;
                        break;
                    }
            }
        }
        ok = ok && violations == 0;
        detail << family_name(family) << " " << checked << "/" << violations << " ";
    }

    // PGD with one full step from the clean point is FGSM.
    bool same = true;
    int compared = 0;
    for (int b = 0; compared < kBallTrials; ++b) {
        std::vector<Index> batch;
        for (int j = 0; j < 8; ++j) batch.push_back(rows[std::size_t((b * 8 + j) % int(rows.size()))]);
        const auto x = fx.test.gather(batch);
        const auto y = fx.test.gather_labels(batch);
        AttackSpec f;
        f.family = AttackFamily::fgsm;
        f.epsilon = 0.03;
        AttackSpec p = f;
        p.family = AttackFamily::pgd;
        p.steps = 1;
        p.step_fraction = 1.0;
        p.random_start = false;
        p.seed = std::uint64_t(b);
        same = same && run_attack(adapter, x, y, f).adversarial == run_attack(adapter, x, y, p).adversarial;
        compared += 8;
    }
    return {ok && same, "trials/violations: " + detail.str() + "; PGD-1 zero start vs FGSM on " + std::to_string(compared) +
                            " trials: " + (same ? "bit-identical" : "DIFFER")};
}

Verdict c5_awp(Context& ctx) {
    // Norm contract in double precision on random models and batches.
    ModelConfig mc = ctx.cfg.model;
    const auto raw = load_subjects(ctx.cfg);
    const auto data = prepare_subject(ctx.cfg, raw[0], true, 0);
    double worst = 0;
    int layers = 0;
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        const auto params = build_model<double>(mc, rep);
        std::vector<Index> rows;
        for (Index i = 0; i < 16; ++i) rows.push_back(Index((rep * 16 + std::uint64_t(i)) % std::uint64_t(data.size())));
        const auto x = data.gather(rows).cast<double>();
        const auto y = data.gather_labels(rows);
        const auto ev = evaluate(mc, params, x, y, {Mode::train, rep}, {true, false});
        const double xi = ClientConfig{}.awp_xi;
        const auto nu = awp_nu(params, ev.param_grads, xi);
        for (const auto& layer : awp_layers(params)) {
            if (awp_layer_norm(ev.param_grads, layer) == 0) continue;
            const double want = xi * awp_layer_norm(params, layer);
            worst = std::max(worst, std::abs(awp_layer_norm(nu, layer) - want) / want);
            ++layers;
        }
    }

    // ξ = 0 is exactly FAT-only training.
    ExperimentConfig a = ctx.cfg, b = ctx.cfg;
    a.method = b.method = Method::safe;
    a.toggles = {true, true, true};
    a.client.awp_xi = 0;
    b.toggles = {true, true, false};
    a.seeds = b.seeds = {0};
    a.folds = b.folds = {0, 1};
    const auto ra = loso_run(a), rb = loso_run(b);
    bool identical = ra.cells.size() == rb.cells.size();
    for (std::size_t i = 0; identical && i < ra.cells.size(); ++i)
        identical = ra.cells[i].bca == rb.cells[i].bca && ra.cells[i].counts.correct == rb.cells[i].counts.correct;
    std::vector<ClientDataset> train;
    for (std::size_t k = 1; k < raw.size(); ++k) train.push_back(prepare_subject(a, raw[k], true, 0));
    const bool same_model = train_model(a, train, 3).params == train_model(b, train, 3).params;
    return {worst <= kAwpRelTol && identical && same_model,
            std::to_string(layers) + " layer checks, max |‖ν‖/ξ‖θ‖ - 1| " + fmt("%.2e", worst) + "; ξ=0 vs FAT-only: model " +
                (same_model ? "bit-identical" : "DIFFERS") + ", loso cells " + (identical ? "identical" : "DIFFER")};
}

Verdict c6_reductions(Context& ctx) {
    const auto raw = load_subjects(ctx.cfg);
    std::vector<ClientDataset> train;
    for (std::size_t k = 1; k < raw.size(); ++k) train.push_back(prepare_subject(ctx.cfg, raw[k], true, 0));
    const auto test = prepare_subject(ctx.cfg, raw[0], false, 0);

    ExperimentConfig off = ctx.cfg, fedavg = ctx.cfg;
    off.method = Method::safe;
    off.toggles = {false, false, false};
    fedavg.method = Method::fedavg;
    const auto m_off = train_model(off, train, 11), m_fed = train_model(fedavg, train, 11);
    const bool fed_same = m_off.params == m_fed.params && m_off.config == m_fed.config;
    const auto cells_off = evaluate_subject(off, m_off, test, 5), cells_fed = evaluate_subject(fedavg, m_fed, test, 5);
    bool cells_same = cells_off.size() == cells_fed.size();
    for (std::size_t i = 0; cells_same && i < cells_off.size(); ++i) cells_same = cells_off[i].bca == cells_fed[i].bca;

    ExperimentConfig at = ctx.cfg, nt = ctx.cfg;
    at.method = Method::at;
    at.client.fat_alpha = 0;
    nt.method = Method::nt;
    const auto m_at = train_model(at, train, 13), m_nt = train_model(nt, train, 13);
    const bool central_same = m_at.params == m_nt.params;
    return {fed_same && cells_same && central_same, std::string("SAFE(all off) vs FedAvg: ") + (fed_same ? "bit-identical" : "DIFFER") +
                                                        (cells_same ? "" : " (eval differs)") + "; AT(α=0) vs NT: " +
                                                        (central_same ? "bit-identical" : "DIFFER")};
}

double mean3(const LosoResult& r) { return (r.mean_bca("benign") + r.mean_bca("pgd", 0.03) + r.mean_bca("square", 0.05)) / 3; }

Verdict c7_ablation(Context& ctx) {
    std::ostringstream rows;
    double best_other = -1, full = 0, fat_on = 0, fat_off = 0;
    int n_on = 0, n_off = 0;
    for (const auto& t : ablation_grid()) {
        const auto& r = ctx.row(t);
        const double m = mean3(r);
        rows << toggles_label(t) << "=" << fmt("%.3f", m) << " ";
        if (t == Toggles{true, true, true})
            full = m;
        else
            best_other = std::max(best_other, m);
        (t.fat ? fat_on : fat_off) += r.mean_bca("pgd", 0.03);
        ++(t.fat ? n_on : n_off);
    }
    fat_on /= n_on;
    fat_off /= n_off;
    double minutes = 0;
    for (const auto& [_, s] : ctx.grid_seconds) minutes += s / 60;
    const bool a = full >= best_other, b = fat_on - fat_off >= kFatGap, time_ok = minutes < kGridMinutes;
    return {a && b && time_ok, std::string("(a) ") + (a ? "ok" : "FAIL") + " mean{benign,PGD.03,Square.05}: " + rows.str() + "; (b) " +
                                   (b ? "ok" : "FAIL") + fmt(" FAT-on PGD.03 %.3f vs FAT-off %.3f (gap %+.1f pts)", fat_on, fat_off,
                                                             100 * (fat_on - fat_off)) +
                                   fmt("; grid %.1f min", minutes)};
}

Verdict c8_efficacy(Context& ctx) {
    ExperimentConfig f = ctx.cfg;
    f.method = Method::fedavg;
    const auto fed = loso_run(f, progress_hooks("fedavg"));
    const double chance = 1.0 / double(ctx.cfg.benchmark.classes);
    const double fed_pgd = fed.mean_bca("pgd", 0.05), safe_pgd = ctx.full_safe().mean_bca("pgd", 0.05);
    const bool a = std::abs(fed_pgd - chance) <= kChanceBand, b = safe_pgd - chance >= kSafeAboveChance;
    return {a && b, fmt("PGD(0.05) BCA: FedAvg %.3f (%+.1f pts from chance), SAFE %.3f (%+.1f pts)", fed_pgd, 100 * (fed_pgd - chance),
                        safe_pgd, 100 * (safe_pgd - chance))};
}

Verdict c9_lbsn(Context& ctx) {
    const double with = ctx.full_safe().mean_bca("benign"), without = ctx.row({false, true, true}).mean_bca("benign");
    return {with - without >= kLbsnGap, fmt("benign BCA: SAFE %.3f, SAFE without LBSN %.3f (gap %+.1f pts)", with, without, 100 * (with - without))};
}

Verdict c10_sweep(Context& ctx) {
    ExperimentConfig base = ctx.cfg;
    base.method = Method::safe;
    base.attacks.clear();
    base.federation.rounds = kSweepRounds;
    std::ostringstream detail;
    bool ok = true;
    for (const auto& [param, values] : std::vector<std::pair<std::string, std::vector<int>>>{{"m", {2, 4, 6}}, {"E", {1, 2, 4}}}) {
        const auto points = sweep(base, param, values, progress_hooks("sweep " + param));
        double lo = 1, hi = 0;
        detail << param << ":";
        for (const auto& p : points) {
            const double v = p.result.mean_bca("benign");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            detail << " " << p.value << "=" << fmt("%.3f", v);
        }
        detail << fmt(" (range %.1f pts) ", 100 * (hi - lo));
        ok = ok && hi - lo < kSweepRange;
    }
    return {ok, "benign BCA " + detail.str()};
}

Verdict c11_determinism(Context& ctx) {
    ExperimentConfig cfg = ctx.cfg;
    cfg.seeds = {3};
    cfg.folds = {2, 5};
    cfg.federation.rounds = 3;
    AttackSpec rays;
    rays.family = AttackFamily::rays;
    rays.epsilon = 0.1;
    rays.queries = 50;
    cfg.attacks.push_back(rays);
    const auto dir = std::filesystem::temp_directory_path() / "safe_acceptance_determinism";
    std::filesystem::remove_all(dir);
    write_run(dir / "a", "det", cfg, loso_run(cfg));
    write_run(dir / "b", "det", cfg, loso_run(cfg));
    const auto a = io::read_file(dir / "a" / "results.csv"), b = io::read_file(dir / "b" / "results.csv");
    const auto sa = io::read_file(dir / "a" / "summary.csv"), sb = io::read_file(dir / "b" / "summary.csv");
    std::filesystem::remove_all(dir);
    return {a == b && sa == sb && !a.empty(),
            std::to_string(a.size()) + "-byte results.csv " + (a == b ? "identical" : "DIFFERS") + ", summary.csv " + (sa == sb ? "identical" : "DIFFERS")};
}

Verdict c12_bca(Context&) {
    Rng rng = make_rng(0xacc12);
    int matches = 0;
    for (int rep = 0; rep < kBcaPatterns; ++rep) {
        const int classes = 2 + int(uniform_index(rng, 5));
        const int n = classes + int(uniform_index(rng, 200));
        std::vector<int> labels, predicted;
        for (int i = 0; i < n; ++i) {
            labels.push_back(i < classes ? i : int(uniform_index(rng, std::uint64_t(classes))));
            predicted.push_back(uniform01(rng) < 0.6 ? labels.back() : int(uniform_index(rng, std::uint64_t(classes))));
        }
        // reference: recall per class from scratch, then their mean
        std::vector<double> recall;
        for (int l = 0; l < classes; ++l) {
            int hit = 0, tot = 0;
            for (int i = 0; i < n; ++i)
                if (labels[std::size_t(i)] == l) {
                    ++tot;
                    hit += predicted[std::size_t(i)] == l;
                }
            recall.push_back(double(hit) / double(tot));
        }
        double sum = 0;
        for (double r : recall) sum += r;
        matches += bca(predicted, labels, classes) == sum / double(classes);
    }
    return {matches == kBcaPatterns, std::to_string(matches) + "/" + std::to_string(kBcaPatterns) + " patterns match exactly"};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    using Fn = Verdict (*)(Context&);
    const std::vector<std::pair<const char*, Fn>> criteria{
        {"gradient correctness", c1_gradients}, {"aggregation oracle", c2_aggregation}, {"privacy invariant", c3_privacy},
        {"epsilon-ball invariant", c4_ball},    {"AWP contract", c5_awp},               {"reduction identities", c6_reductions},
        {"ablation ordering", c7_ablation},     {"attack efficacy", c8_efficacy},       {"LBSN generalization", c9_lbsn},
        {"sweep flatness", c10_sweep},          {"determinism", c11_determinism},       {"BCA oracle", c12_bca},
    };

    Context ctx;
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("[%s] %2d %-24s %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
