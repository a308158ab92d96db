#pragma once

// Leave-one-subject-out experiments: federated (SAFE and its ablations,
// FedAvg) and centralized (NT, AT) training, benign and adversarial BCA,
// results files.

#include <safe/attacks.hpp>
#include <safe/client.hpp>
#include <safe/data.hpp>
#include <safe/federation.hpp>
#include <safe/model.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace safe {

struct ClassCounts {
    std::vector<Index> correct;
    std::vector<Index> total;
};

ClassCounts confusion_counts(std::span<const int> predicted, std::span<const int> labels, Index classes);
/// Mean of per-class recalls; every class must be present.
double bca(const ClassCounts& counts);
double bca(std::span<const int> predicted, std::span<const int> labels, Index classes);

enum class Method { safe, fedavg, nt, at };

std::string_view method_name(Method m) noexcept;
Method method_from_name(std::string_view name);

struct Toggles {
    bool lbsn = true;
    bool fat = true;
    bool awp = true;

    bool operator==(const Toggles&) const = default;
};

struct CentralizedConfig {
    int epochs = 100;
    Index batch_size = 64;
};

struct ExperimentConfig {
    Method method = Method::safe;
    Toggles toggles;
    /// Synthetic benchmark, used unless `data_dir` is set.
    BenchmarkSpec benchmark;
    /// Directory of per-subject trial directories (sorted by name).
    std::string data_dir;
    bool align = true;
    bool augment = false;
    int augment_target = 1;
    ModelConfig model;
    ClientConfig client;
    FederationConfig federation;
    CentralizedConfig centralized;
    std::vector<AttackSpec> attacks;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    Index test_batch = 8;
    /// Held-out subjects to evaluate; empty means every subject.
    std::vector<int> folds;

    /// Toggles actually in force (FedAvg turns everything off).
    Toggles effective_toggles() const;
    /// Model config with the normalization mode implied by method and toggles.
    ModelConfig effective_model() const;
    ClientConfig effective_client() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// FNV-1a of the canonical JSON dump.
std::string config_hash(const ExperimentConfig& c);

/// Applies "a.b.c=value" overrides (value parsed as JSON, else string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Default evaluation attacks: FGSM and PGD at the white-box ε values, Square and RayS at the black-box ones.
std::vector<AttackSpec> default_attacks();

/// Subjects as loaded or generated, before alignment.
std::vector<ClientDataset> load_subjects(const ExperimentConfig& cfg);

/// Per-subject alignment (and augmentation of training subjects).
ClientDataset prepare_subject(const ExperimentConfig& cfg, const ClientDataset& raw, bool training, std::uint64_t seed);

struct TrainedModel {
    ModelConfig config;
    ParameterSet<float> params;
    std::vector<RoundReport> rounds;
    long gradient_steps = 0;
};

struct TrainHooks {
    std::function<void(const PayloadEvent&)> observer;
};

/// Trains one model on prepared training subjects.
TrainedModel train_model(const ExperimentConfig& cfg, const std::vector<ClientDataset>& train, std::uint64_t seed,
                         const TrainHooks& hooks = {});

/// NT (alpha = 0) or AT: minibatch SGD on the pooled data, conventional BN.
TrainedModel centralized_train(const ExperimentConfig& cfg, const ClientDataset& pooled, double alpha, std::uint64_t seed);

struct CellResult {
    std::uint64_t seed = 0;
    int subject = 0;
    std::string attack;  // "benign" or family name
    double epsilon = 0;
    ClassCounts counts;
    double bca = 0;
    long queries = 0;
};

/// Benign predictions plus one row per attack on a prepared test subject,
/// in test batches of `cfg.test_batch`.
std::vector<CellResult> evaluate_subject(const ExperimentConfig& cfg, const TrainedModel& model, const ClientDataset& test,
                                         std::uint64_t seed);

struct LosoHooks {
    std::function<void(std::uint64_t seed, int subject, const PayloadEvent&)> observer;
    /// Progress callback after each fold.
    std::function<void(std::uint64_t seed, int subject, double seconds)> progress;
};

struct LosoResult {
    std::vector<CellResult> cells;
    nlohmann::json manifest;

    /// Mean BCA over seeds and subjects for one attack cell.
    double mean_bca(const std::string& attack, double epsilon = 0) const;
};

LosoResult loso_run(const ExperimentConfig& cfg, const LosoHooks& hooks = {});

/// The 8 combinations of {lbsn, fat, awp}, full SAFE first.
std::vector<Toggles> ablation_grid();
std::string toggles_label(const Toggles& t);

struct SweepPoint {
    std::string parameter;
    int value = 0;
    LosoResult result;
};

/// One loso run per value of "m" (clients per round) or "E" (local epochs).
std::vector<SweepPoint> sweep(const ExperimentConfig& cfg, const std::string& parameter, const std::vector<int>& values,
                              const LosoHooks& hooks = {});

// Results files

std::string results_csv(const std::string& run_id, const ExperimentConfig& cfg, const std::vector<CellResult>& cells);
/// Plot-ready means over subjects and seeds: one row per attack and ε.
std::string summary_csv(const std::string& run_id, const ExperimentConfig& cfg, const std::vector<CellResult>& cells);
void write_run(const std::filesystem::path& dir, const std::string& run_id, const ExperimentConfig& cfg, const LosoResult& result);

}  // namespace safe
