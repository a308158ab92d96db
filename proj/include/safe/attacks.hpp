#pragma once

// Untargeted ℓ∞ attacks with per-trial budgets ε·s_i.
//
// White-box attacks (FGSM, PGD) differentiate through the deployed model,
// including batch-statistics normalization over the attacked batch.
// Black-box attacks only see a ScoreOracle (Square) or a LabelOracle (RayS);
// neither interface has a gradient entry point.

#include <safe/model.hpp>
#include <safe/perturb.hpp>

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace safe {

enum class AttackFamily { fgsm, pgd, pgd_strong, square, rays };

std::string_view family_name(AttackFamily f) noexcept;
AttackFamily family_from_name(std::string_view name);
inline bool is_white_box(AttackFamily f) noexcept {
    return f == AttackFamily::fgsm || f == AttackFamily::pgd || f == AttackFamily::pgd_strong;
}

struct AttackSpec {
    AttackFamily family = AttackFamily::pgd;
    double epsilon = 0.03;
    int steps = 20;
    /// PGD step size as a fraction of ε.
    double step_fraction = 0.25;
    int restarts = 1;
    bool random_start = true;
    /// Query budget per trial for the black-box families.
    int queries = 1000;
    std::uint64_t seed = 0;
    StdMode std_mode = StdMode::per_trial;
    double global_std = 0;

    /// PGD-strong: 5 restarts of 50 steps.
    AttackSpec resolved() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const AttackSpec& s);
void from_json(const nlohmann::json& j, AttackSpec& s);

template <typename Scalar>
struct AttackResult {
    NdArray<Scalar> adversarial;
    /// Per trial: the attack found a misclassifying point inside the box.
    std::vector<std::uint8_t> success;
    std::vector<int> queries;
    /// RayS: smallest misclassifying radius found, which may exceed ε·s_i
    /// (infinity if none); others: ε·s_i.
    std::vector<double> radius;
};

template <typename Scalar>
class ScoreOracle {
public:
    virtual ~ScoreOracle() = default;
    /// Per-class scores [B, L] for a [B, 1, c, t] batch.
    virtual NdArray<Scalar> scores(const NdArray<Scalar>& batch) = 0;
};

template <typename Scalar>
class LabelOracle {
public:
    virtual ~LabelOracle() = default;
    virtual std::vector<int> labels(const NdArray<Scalar>& batch) = 0;
};

template <typename Scalar>
class WhiteBoxModel {
public:
    virtual ~WhiteBoxModel() = default;
    virtual NdArray<Scalar> logits(const NdArray<Scalar>& batch) = 0;
    /// ∇_X of mean cross-entropy over the batch.
    virtual NdArray<Scalar> input_gradient(const NdArray<Scalar>& batch, std::span<const int> labels) = 0;
};

/// The deployed network in eval mode behind all three interfaces.
template <typename Scalar>
class ModelAdapter final : public WhiteBoxModel<Scalar>, public ScoreOracle<Scalar>, public LabelOracle<Scalar> {
public:
    ModelAdapter(const ModelConfig& config, const ParameterSet<Scalar>& params) : config_(config), params_(params) {}
    NdArray<Scalar> logits(const NdArray<Scalar>& batch) override;
    NdArray<Scalar> input_gradient(const NdArray<Scalar>& batch, std::span<const int> labels) override;
    NdArray<Scalar> scores(const NdArray<Scalar>& batch) override { return logits(batch); }
    std::vector<int> labels(const NdArray<Scalar>& batch) override;

private:
    const ModelConfig& config_;
    const ParameterSet<Scalar>& params_;
};

template <typename Scalar>
std::vector<int> argmax_rows(const NdArray<Scalar>& scores);

template <typename Scalar>
AttackResult<Scalar> fgsm_attack(WhiteBoxModel<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec);

template <typename Scalar>
AttackResult<Scalar> pgd_attack(WhiteBoxModel<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec);

template <typename Scalar>
AttackResult<Scalar> square_attack(ScoreOracle<Scalar>& oracle, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec);

template <typename Scalar>
AttackResult<Scalar> rays_attack(LabelOracle<Scalar>& oracle, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec);

/// Dispatches on the family.
template <typename Scalar>
AttackResult<Scalar> run_attack(ModelAdapter<Scalar>& model, const NdArray<Scalar>& x, std::span<const int> y, const AttackSpec& spec);

}  // namespace safe
