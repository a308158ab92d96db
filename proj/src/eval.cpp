#include <safe/error.hpp>
#include <safe/eval.hpp>
#include <safe/io.hpp>
#include <safe/lbsn.hpp>
#include <safe/rng.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

namespace safe {

// ---------------------------------------------------------------------------
// BCA

ClassCounts confusion_counts(std::span<const int> predicted, std::span<const int> labels, Index classes) {
    if (predicted.size() != labels.size()) throw ShapeError("bca", {{Index(predicted.size())}, {Index(labels.size())}}, "bca: length mismatch");
    ClassCounts c{std::vector<Index>(std::size_t(classes), 0), std::vector<Index>(std::size_t(classes), 0)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw ConfigError("bca: label " + std::to_string(labels[i]) + " out of range");
        ++c.total[std::size_t(labels[i])];
        if (predicted[i] == labels[i]) ++c.correct[std::size_t(labels[i])];
    }
    return c;
}

double bca(const ClassCounts& counts) {
    if (counts.total.empty()) throw ConfigError("bca: no classes");
    double sum = 0;
    for (std::size_t l = 0; l < counts.total.size(); ++l) {
        if (counts.total[l] == 0) throw ConfigError("bca: class " + std::to_string(l) + " has no samples");
        sum += double(counts.correct[l]) / double(counts.total[l]);
    }
    return sum / double(counts.total.size());
}

double bca(std::span<const int> predicted, std::span<const int> labels, Index classes) {
    return bca(confusion_counts(predicted, labels, classes));
}

// ---------------------------------------------------------------------------
// Config

std::string_view method_name(Method m) noexcept {
    switch (m) {
        case Method::safe: return "safe";
        case Method::fedavg: return "fedavg";
        case Method::nt: return "nt";
        case Method::at: return "at";
    }
    return "unknown";
}

Method method_from_name(std::string_view name) {
    for (auto m : {Method::safe, Method::fedavg, Method::nt, Method::at})
        if (method_name(m) == name) return m;
    throw ConfigError("unknown method '" + std::string(name) + "'");
}

Toggles ExperimentConfig::effective_toggles() const {
    switch (method) {
        case Method::safe: return toggles;
        case Method::fedavg: return {false, false, false};
        case Method::nt: return {false, false, false};
        case Method::at: return {false, true, false};
    }
    return toggles;
}

ModelConfig ExperimentConfig::effective_model() const {
    ModelConfig m = model;
    m.norm = effective_toggles().lbsn ? NormMode::lbsn : NormMode::conventional;
    return m;
}

ClientConfig ExperimentConfig::effective_client() const {
    ClientConfig c = client;
    const auto t = effective_toggles();
    c.fat = t.fat;
    c.awp = t.awp;
    return c;
}

void ExperimentConfig::validate() const {
    model.validate();
    client.validate();
    for (const auto& a : attacks) a.validate();
    if (seeds.empty()) throw ConfigError("experiment: at least one seed required");
    if (test_batch < 2) throw ConfigError("experiment: test_batch must be >= 2 (batch statistics)");
    if (centralized.epochs < 0 || centralized.batch_size < 2) throw ConfigError("experiment: invalid centralized settings");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"method", method_name(c.method)},
                       {"toggles", {{"lbsn", c.toggles.lbsn}, {"fat", c.toggles.fat}, {"awp", c.toggles.awp}}},
                       {"benchmark", c.benchmark},
                       {"data_dir", c.data_dir},
                       {"align", c.align},
                       {"augment", c.augment},
                       {"augment_target", c.augment_target},
                       {"model", c.model},
                       {"client", c.client},
                       {"federation", c.federation},
                       {"centralized", {{"epochs", c.centralized.epochs}, {"batch_size", c.centralized.batch_size}}},
                       {"attacks", c.attacks},
                       {"seeds", c.seeds},
                       {"test_batch", c.test_batch},
                       {"folds", c.folds}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    static const char* known[] = {"method", "toggles", "benchmark", "data_dir", "align", "augment", "augment_target", "model",
                                  "client", "federation", "centralized", "attacks", "seeds", "test_batch", "folds"};
    for (const auto& [key, _] : j.items())
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) throw ConfigError("unknown config key '" + key + "'");
    if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
    if (j.contains("toggles")) {
        const auto& t = j.at("toggles");
        c.toggles.lbsn = t.value("lbsn", c.toggles.lbsn);
        c.toggles.fat = t.value("fat", c.toggles.fat);
        c.toggles.awp = t.value("awp", c.toggles.awp);
    }
    if (j.contains("benchmark")) from_json(j.at("benchmark"), c.benchmark);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.align = j.value("align", c.align);
    c.augment = j.value("augment", c.augment);
    c.augment_target = j.value("augment_target", c.augment_target);
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("client")) from_json(j.at("client"), c.client);
    if (j.contains("federation")) from_json(j.at("federation"), c.federation);
    if (j.contains("centralized")) {
        c.centralized.epochs = j.at("centralized").value("epochs", c.centralized.epochs);
        c.centralized.batch_size = j.at("centralized").value("batch_size", c.centralized.batch_size);
    }
    if (j.contains("attacks")) {
        c.attacks.clear();
        for (const auto& a : j.at("attacks")) {
            AttackSpec s;
            from_json(a, s);
            c.attacks.push_back(s);
        }
    }
    c.seeds = j.value("seeds", c.seeds);
    c.test_batch = j.value("test_batch", c.test_batch);
    c.folds = j.value("folds", c.folds);
}

std::string config_hash(const ExperimentConfig& c) {
    return io::hex64(io::fnv1a(nlohmann::json(c).dump()));
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &j;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) keys.push_back(key);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const bool last = i + 1 == keys.size();
        if (node->is_array()) {
            const auto idx = std::stoul(keys[i]);
            if (idx >= node->size()) throw ConfigError("override '" + path + "': index out of range");
            node = &(*node)[idx];
        } else {
            node = &(*node)[keys[i]];
        }
        if (last) *node = value;
    }
}

std::vector<AttackSpec> default_attacks() {
    std::vector<AttackSpec> out;
    for (double e : {0.01, 0.03, 0.05}) {
        AttackSpec f;
        f.family = AttackFamily::fgsm;
        f.epsilon = e;
        out.push_back(f);
        AttackSpec p;
        p.family = AttackFamily::pgd;
        p.epsilon = e;
        out.push_back(p);
    }
    for (double e : {0.01, 0.05, 0.1}) {
        AttackSpec s;
        s.family = AttackFamily::square;
        s.epsilon = e;
        out.push_back(s);
        AttackSpec r;
        r.family = AttackFamily::rays;
        r.epsilon = e;
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data

std::vector<ClientDataset> load_subjects(const ExperimentConfig& cfg) {
    if (cfg.data_dir.empty()) return generate_benchmark(cfg.benchmark);
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.data_dir))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.size() < 2) throw ConfigError("data_dir " + cfg.data_dir + " holds fewer than 2 subjects");
    std::vector<ClientDataset> out;
    for (const auto& d : dirs) out.push_back(load_subject(d));
    return out;
}

ClientDataset prepare_subject(const ExperimentConfig& cfg, const ClientDataset& raw, bool training, std::uint64_t seed) {
    ClientDataset d = cfg.align ? euclidean_align(raw) : raw;
    if (training && cfg.augment) {
        Rng rng = make_rng(seed, {0xa6});
        d = mix_augment(d, cfg.augment_target, rng);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Training

TrainedModel centralized_train(const ExperimentConfig& cfg, const ClientDataset& pooled, double alpha, std::uint64_t seed) {
    TrainedModel out;
    out.config = cfg.model;
    out.config.norm = NormMode::conventional;
    ClientConfig cc = cfg.client;
    cc.epochs = cfg.centralized.epochs;
    cc.batch_size = cfg.centralized.batch_size;
    cc.fat = true;
    cc.fat_alpha = alpha;
    cc.awp = false;
    ClientState<float> state;
    state.seed = derive_seed(seed, {0xce});
    const auto init = build_model<float>(out.config, derive_seed(seed, {0x1a}));
    out.params = client_update(state, init, pooled, out.config, cc, 0);
    out.gradient_steps = state.steps;
    return out;
}

TrainedModel train_model(const ExperimentConfig& cfg, const std::vector<ClientDataset>& train, std::uint64_t seed, const TrainHooks& hooks) {
    if (cfg.method == Method::nt || cfg.method == Method::at) {
        std::vector<const ClientDataset*> parts;
        for (const auto& d : train) parts.push_back(&d);
        return centralized_train(cfg, pool_datasets(parts), cfg.method == Method::at ? cfg.client.fat_alpha : 0.0, seed);
    }
    FederationConfig fed = cfg.federation;
    fed.seed = derive_seed(seed, {0xfed});
    FederationHooks fh;
    fh.observer = hooks.observer;
    auto result = run_federation<float>(fed, cfg.effective_model(), train, cfg.effective_client(), fh);
    return {cfg.effective_model(), std::move(result.model), std::move(result.rounds), result.gradient_steps};
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Consecutive test batches; a trailing single trial joins the previous batch.
std::vector<std::vector<Index>> test_batches(Index n, Index size) {
    std::vector<std::vector<Index>> out;
    for (Index s = 0; s < n; s += size) {
        std::vector<Index> rows;
        for (Index i = s; i < std::min(n, s + size); ++i) rows.push_back(i);
        if (rows.size() < 2 && !out.empty())
            out.back().insert(out.back().end(), rows.begin(), rows.end());
        else
            out.push_back(std::move(rows));
    }
    return out;
}

}  // namespace

std::vector<CellResult> evaluate_subject(const ExperimentConfig& cfg, const TrainedModel& model, const ClientDataset& test,
                                         std::uint64_t seed) {
    ModelAdapter<float> adapter(model.config, model.params);
    const auto batches = test_batches(test.size(), cfg.test_batch);
    std::vector<CellResult> cells;

    std::vector<int> predicted, labels;
    for (const auto& rows : batches) {
        const auto p = adapter.labels(test.gather(rows));
        predicted.insert(predicted.end(), p.begin(), p.end());
        const auto y = test.gather_labels(rows);
        labels.insert(labels.end(), y.begin(), y.end());
    }
    CellResult benign;
    benign.subject = test.subject;
    benign.attack = "benign";
    benign.counts = confusion_counts(predicted, labels, test.classes);
    benign.bca = bca(benign.counts);
    cells.push_back(benign);

    for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        CellResult cell;
        cell.subject = test.subject;
        cell.attack = std::string(family_name(cfg.attacks[a].family));
        cell.epsilon = cfg.attacks[a].epsilon;
        predicted.clear();
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto x = test.gather(batches[b]);
            const auto y = test.gather_labels(batches[b]);
            AttackSpec spec = cfg.attacks[a];
            spec.seed = derive_seed(seed, {0xa7, a, b});
            const auto result = run_attack(adapter, x, y, spec);
            const auto p = adapter.labels(result.adversarial);
            predicted.insert(predicted.end(), p.begin(), p.end());
            for (int q : result.queries) cell.queries += q;
        }
        cell.counts = confusion_counts(predicted, labels, test.classes);
        cell.bca = bca(cell.counts);
        cells.push_back(std::move(cell));
    }
    return cells;
}

double LosoResult::mean_bca(const std::string& attack, double epsilon) const {
    double sum = 0;
    int n = 0;
    for (const auto& c : cells)
        if (c.attack == attack && std::abs(c.epsilon - epsilon) < 1e-12) {
            sum += c.bca;
            ++n;
        }
    if (n == 0) throw ConfigError("no results for attack '" + attack + "' at epsilon " + std::to_string(epsilon));
    return sum / n;
}

LosoResult loso_run(const ExperimentConfig& cfg, const LosoHooks& hooks) {
    cfg.validate();
    const auto raw = load_subjects(cfg);
    const int k = int(raw.size());
    std::vector<int> folds = cfg.folds;
    if (folds.empty())
        for (int i = 0; i < k; ++i) folds.push_back(i);
    for (int f : folds)
        if (f < 0 || f >= k) throw ConfigError("fold " + std::to_string(f) + " outside [0, " + std::to_string(k) + ")");

    // Alignment does not depend on the seed.
    std::vector<ClientDataset> aligned;
    for (const auto& d : raw) aligned.push_back(prepare_subject(cfg, d, false, 0));

    LosoResult out;
    out.manifest = nlohmann::json{{"config", cfg}, {"config_hash", config_hash(cfg)}, {"folds", nlohmann::json::array()}};
    for (auto seed : cfg.seeds) {
        for (int fold : folds) {
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<ClientDataset> train;
            for (int j = 0; j < k; ++j) {
                if (j == fold) continue;
                train.push_back(cfg.augment ? prepare_subject(cfg, raw[std::size_t(j)], true, derive_seed(seed, {0xa0, std::uint64_t(fold), std::uint64_t(j)}))
                                            : aligned[std::size_t(j)]);
            }
            TrainHooks th;
            if (hooks.observer) th.observer = [&](const PayloadEvent& e) { hooks.observer(seed, fold, e); };
            try {
                const auto model = train_model(cfg, train, derive_seed(seed, {0xf0, std::uint64_t(fold)}), th);
                auto cells = evaluate_subject(cfg, model, aligned[std::size_t(fold)], derive_seed(seed, {0xe7, std::uint64_t(fold)}));
                for (auto& c : cells) {
                    c.seed = seed;
                    out.cells.push_back(std::move(c));
                }
                const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                out.manifest["folds"].push_back(
                    {{"seed", seed}, {"subject", fold}, {"gradient_steps", model.gradient_steps}, {"seconds", seconds}, {"rounds", model.rounds}});
                if (hooks.progress) hooks.progress(seed, fold, seconds);
            } catch (const std::exception& e) {
                throw Error("seed " + std::to_string(seed) + ", held-out subject " + std::to_string(fold) + ": " + e.what());
            }
        }
    }
    return out;
}

std::vector<Toggles> ablation_grid() {
    std::vector<Toggles> out;
    for (int mask = 7; mask >= 0; --mask) out.push_back({bool(mask & 4), bool(mask & 2), bool(mask & 1)});
    return out;
}

std::string toggles_label(const Toggles& t) {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += "+";
        s += name;
    };
    add(t.lbsn, "lbsn");
    add(t.fat, "fat");
    add(t.awp, "awp");
    return s.empty() ? "none" : s;
}

std::vector<SweepPoint> sweep(const ExperimentConfig& cfg, const std::string& parameter, const std::vector<int>& values,
                              const LosoHooks& hooks) {
    if (values.empty()) throw ConfigError("sweep: no values");
    if (parameter != "m" && parameter != "E") throw ConfigError("sweep: parameter must be m or E, got '" + parameter + "'");
    std::vector<SweepPoint> out;
    for (int v : values) {
        ExperimentConfig c = cfg;
        if (parameter == "m")
            c.federation.clients_per_round = v;
        else
            c.client.epochs = v;
        out.push_back({parameter, v, loso_run(c, hooks)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string join(const std::vector<Index>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

std::string results_csv(const std::string& run_id, const ExperimentConfig& cfg, const std::vector<CellResult>& cells) {
    const auto t = cfg.effective_toggles();
    const std::string hash = config_hash(cfg);
    std::ostringstream os;
    os << "run_id,config_hash,method,lbsn,fat,awp,seed,subject,attack,epsilon,correct,total,bca,queries\n";
    for (const auto& c : cells)
        os << run_id << ',' << hash << ',' << method_name(cfg.method) << ',' << t.lbsn << ',' << t.fat << ',' << t.awp << ',' << c.seed << ','
           << c.subject << ',' << c.attack << ',' << fmt("%g", c.epsilon) << ',' << join(c.counts.correct) << ',' << join(c.counts.total)
           << ',' << fmt("%.6f", c.bca) << ',' << c.queries << '\n';
    return os.str();
}

std::string summary_csv(const std::string& run_id, const ExperimentConfig& cfg, const std::vector<CellResult>& cells) {
    // (attack, epsilon) -> seed -> bca values over subjects
    std::map<std::pair<std::string, double>, std::map<std::uint64_t, std::vector<double>>> groups;
    for (const auto& c : cells) groups[{c.attack, c.epsilon}][c.seed].push_back(c.bca);
    std::ostringstream os;
    os << "run_id,config_hash,method,attack,epsilon,mean_bca,std_over_seeds,seeds\n";
    for (const auto& [key, by_seed] : groups) {
        std::vector<double> means;
        for (const auto& [_, v] : by_seed) {
            double s = 0;
            for (double x : v) s += x;
            means.push_back(s / double(v.size()));
        }
        double m = 0, var = 0;
        for (double x : means) m += x;
        m /= double(means.size());
        for (double x : means) var += (x - m) * (x - m);
        const double sd = means.size() > 1 ? std::sqrt(var / double(means.size() - 1)) : 0.0;
        os << run_id << ',' << config_hash(cfg) << ',' << method_name(cfg.method) << ',' << key.first << ',' << fmt("%g", key.second) << ','
           << fmt("%.6f", m) << ',' << fmt("%.6f", sd) << ',' << means.size() << '\n';
    }
    return os.str();
}

void write_run(const std::filesystem::path& dir, const std::string& run_id, const ExperimentConfig& cfg, const LosoResult& result) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = result.manifest;
    manifest["run_id"] = run_id;
    io::write_text(dir / "manifest.json", manifest.dump(2));
    io::write_text(dir / "results.csv", results_csv(run_id, cfg, result.cells));
    io::write_text(dir / "summary.csv", summary_csv(run_id, cfg, result.cells));
}

}  // namespace safe
