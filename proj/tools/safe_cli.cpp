// safe: command-line front end for the simulator.
//
//   safe gen     --out DIR                         write synthetic subjects
//   safe train   --out DIR [--holdout K]           train one model, save checkpoint
//   safe loso    --out DIR                         leave-one-subject-out run
//   safe attack  --checkpoint DIR --out DIR        attack one trained model
//   safe ablate  --out DIR                         8-row {lbsn, fat, awp} grid
//   safe sweep   --out DIR --param m|E --values .. sensitivity sweep
//
// Every verb takes --config FILE (JSON) and repeated --set key.path=value.

#include <safe/error.hpp>
#include <safe/eval.hpp>
#include <safe/io.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace safe;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string out;
    std::string run_id;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config_file, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("-s,--set", c.overrides, "Override, e.g. federation.rounds=20")->take_all();
    app->add_option("-o,--out", c.out, "Output directory")->required();
    app->add_option("--run-id", c.run_id, "Run identifier (default: verb-confighash)");
    app->add_flag("-q,--quiet", c.quiet, "No progress output");
}

ExperimentConfig load_config(const Common& c) {
    nlohmann::json j = nlohmann::json::object();
    if (!c.config_file.empty()) j = nlohmann::json::parse(io::read_text(c.config_file));
    if (!j.contains("attacks")) j["attacks"] = default_attacks();
    for (const auto& o : c.overrides) apply_override(j, o);
    ExperimentConfig cfg = j.get<ExperimentConfig>();
    cfg.validate();
    return cfg;
}

std::string run_id(const Common& c, const std::string& verb, const ExperimentConfig& cfg) {
    return c.run_id.empty() ? verb + "-" + config_hash(cfg) : c.run_id;
}

LosoHooks progress_hooks(const Common& c) {
    LosoHooks h;
    if (!c.quiet)
        h.progress = [](std::uint64_t seed, int subject, double seconds) {
            std::cerr << "seed " << seed << " subject " << subject << " done in " << seconds << " s\n";
        };
    return h;
}

void write_manifest(const fs::path& dir, nlohmann::json manifest) {
    fs::create_directories(dir);
    io::write_text(dir / "manifest.json", manifest.dump(2));
}

int cmd_gen(const Common& c) {
    const auto cfg = load_config(c);
    const auto subjects = generate_benchmark(cfg.benchmark);
    for (const auto& s : subjects) {
        std::ostringstream name;
        name << "subject_" << (s.subject < 10 ? "0" : "") << s.subject;
        save_subject(fs::path(c.out) / name.str(), s);
    }
    if (!c.quiet) std::cerr << "wrote " << subjects.size() << " subjects to " << c.out << "\n";
    return 0;
}

int cmd_train(const Common& c, int holdout) {
    const auto cfg = load_config(c);
    const auto raw = load_subjects(cfg);
    if (holdout >= int(raw.size())) throw ConfigError("holdout " + std::to_string(holdout) + " out of range");
    std::vector<ClientDataset> train;
    for (int j = 0; j < int(raw.size()); ++j)
        if (j != holdout) train.push_back(prepare_subject(cfg, raw[std::size_t(j)], true, derive_seed(cfg.seeds.front(), {0xa0, std::uint64_t(j)})));
    const std::uint64_t seed = derive_seed(cfg.seeds.front(), {0xf0, std::uint64_t(std::max(holdout, 0))});
    const auto model = train_model(cfg, train, seed);
    const fs::path dir = fs::path(c.out) / run_id(c, "train", cfg);
    save_checkpoint(dir / "checkpoint", Checkpoint<float>{model.config, seed, model.params});
    write_manifest(dir, {{"run_id", run_id(c, "train", cfg)},
                         {"config", cfg},
                         {"config_hash", config_hash(cfg)},
                         {"holdout", holdout},
                         {"gradient_steps", model.gradient_steps},
                         {"rounds", model.rounds}});
    if (!c.quiet) std::cerr << "checkpoint written to " << (dir / "checkpoint") << "\n";
    return 0;
}

int cmd_loso(const Common& c) {
    const auto cfg = load_config(c);
    const auto result = loso_run(cfg, progress_hooks(c));
    const auto id = run_id(c, "loso", cfg);
    write_run(fs::path(c.out) / id, id, cfg, result);
    std::cout << summary_csv(id, cfg, result.cells);
    return 0;
}

int cmd_attack(const Common& c, const std::string& checkpoint, int subject) {
    const auto cfg = load_config(c);
    const auto ck = load_checkpoint<float>(checkpoint);
    const auto raw = load_subjects(cfg);
    if (subject < 0 || subject >= int(raw.size())) throw ConfigError("subject " + std::to_string(subject) + " out of range");
    TrainedModel model{ck.config, ck.params, {}, 0};
    auto cells = evaluate_subject(cfg, model, prepare_subject(cfg, raw[std::size_t(subject)], false, 0), derive_seed(cfg.seeds.front(), {0xe7, std::uint64_t(subject)}));
    for (auto& cell : cells) cell.seed = cfg.seeds.front();
    const auto id = run_id(c, "attack", cfg);
    const fs::path dir = fs::path(c.out) / id;
    write_manifest(dir, {{"run_id", id}, {"config", cfg}, {"config_hash", config_hash(cfg)}, {"checkpoint", checkpoint}, {"subject", subject}});
    io::write_text(dir / "results.csv", results_csv(id, cfg, cells));
    std::cout << summary_csv(id, cfg, cells);
    return 0;
}

int cmd_ablate(const Common& c) {
    auto cfg = load_config(c);
    cfg.method = Method::safe;
    const auto base = run_id(c, "ablate", cfg);
    std::string table = "run_id,toggles,attack,epsilon,mean_bca\n";
    for (const auto& t : ablation_grid()) {
        ExperimentConfig row = cfg;
        row.toggles = t;
        if (!c.quiet) std::cerr << "ablation row " << toggles_label(t) << "\n";
        const auto result = loso_run(row, progress_hooks(c));
        const std::string id = base + "-" + toggles_label(t);
        write_run(fs::path(c.out) / base / toggles_label(t), id, row, result);
        std::vector<std::pair<std::string, double>> keys{{"benign", 0.0}};
        for (const auto& a : row.attacks) keys.emplace_back(std::string(family_name(a.family)), a.epsilon);
        for (const auto& [attack, eps] : keys) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%g,%.6f", eps, result.mean_bca(attack, eps));
            table += id + "," + toggles_label(t) + "," + attack + "," + buf + "\n";
        }
    }
    io::write_text(fs::path(c.out) / base / "ablation.csv", table);
    write_manifest(fs::path(c.out) / base, {{"run_id", base}, {"config", cfg}, {"config_hash", config_hash(cfg)}, {"rows", 8}});
    std::cout << table;
    return 0;
}

int cmd_sweep(const Common& c, const std::string& param, const std::vector<int>& values) {
    const auto cfg = load_config(c);
    const auto base = run_id(c, "sweep", cfg);
    const auto points = sweep(cfg, param, values, progress_hooks(c));
    std::string table = "run_id,parameter,value,attack,epsilon,mean_bca\n";
    for (const auto& p : points) {
        const std::string id = base + "-" + param + std::to_string(p.value);
        ExperimentConfig row = cfg;
        (param == "m" ? row.federation.clients_per_round : row.client.epochs) = p.value;
        write_run(fs::path(c.out) / base / (param + std::to_string(p.value)), id, row, p.result);
        std::vector<std::pair<std::string, double>> keys{{"benign", 0.0}};
        for (const auto& a : row.attacks) keys.emplace_back(std::string(family_name(a.family)), a.epsilon);
        for (const auto& [attack, eps] : keys) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%g,%.6f", eps, p.result.mean_bca(attack, eps));
            table += id + "," + param + "," + std::to_string(p.value) + "," + attack + "," + buf + "\n";
        }
    }
    io::write_text(fs::path(c.out) / base / "sweep.csv", table);
    write_manifest(fs::path(c.out) / base, {{"run_id", base}, {"config", cfg}, {"config_hash", config_hash(cfg)}, {"parameter", param}, {"values", values}});
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated adversarial training simulator"};
    app.require_subcommand(1);

    Common gen, train, loso, attack, ablate, sw;
    int holdout = -1, subject = 0;
    std::string checkpoint, param;
    std::vector<int> values;

    auto* g = app.add_subcommand("gen", "Write the synthetic benchmark as trial files");
    add_common(g, gen);
    auto* t = app.add_subcommand("train", "Train one model and save a checkpoint");
    add_common(t, train);
    t->add_option("--holdout", holdout, "Subject left out of training (-1: none)");
    auto* l = app.add_subcommand("loso", "Leave-one-subject-out training and evaluation");
    add_common(l, loso);
    auto* a = app.add_subcommand("attack", "Evaluate attacks against a checkpoint");
    add_common(a, attack);
    a->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    a->add_option("--subject", subject, "Test subject index");
    auto* ab = app.add_subcommand("ablate", "Run the 8-row LBSN/FAT/AWP ablation grid");
    add_common(ab, ablate);
    auto* s = app.add_subcommand("sweep", "Sweep clients per round (m) or local epochs (E)");
    add_common(s, sw);
    s->add_option("--param", param, "m or E")->required()->check(CLI::IsMember({"m", "E"}));
    s->add_option("--values", values, "Values to try")->required()->delimiter(',');

    CLI11_PARSE(app, argc, argv);
    try {
        if (*g) return cmd_gen(gen);
        if (*t) return cmd_train(train, holdout);
        if (*l) return cmd_loso(loso);
        if (*a) return cmd_attack(attack, checkpoint, subject);
        if (*ab) return cmd_ablate(ablate);
        if (*s) return cmd_sweep(sw, param, values);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
