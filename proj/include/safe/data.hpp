#pragma once

// Synthetic multi-subject trials, the on-disk trial format, Euclidean
// alignment and mix augmentation.
//
// A trial of class y is a sum of L narrow-band rhythms (one per class, the
// own-class rhythm stronger than the others) on fixed spatial patterns, a
// small phase-locked waveform whose sign encodes the class, and white noise.
// Subjects differ by channel mixing, overall amplitude, per-rhythm gains and
// noise level.

#include <safe/ndarray.hpp>
#include <safe/rng.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace safe {

using MatrixXd = Eigen::MatrixXd;

struct ClientDataset {
    int subject = 0;
    Index classes = 2;
    /// [n, 1, c, t]
    NdArray<float> trials;
    std::vector<int> labels;
    /// 1 for trials produced by mix augmentation.
    std::vector<std::uint8_t> synthetic;

    Index size() const { return Index(labels.size()); }
    Index channels() const { return trials.rank() == 4 ? trials.dim(2) : 0; }
    Index samples() const { return trials.rank() == 4 ? trials.dim(3) : 0; }
    std::vector<Index> class_counts() const;
    /// Trials `rows` gathered into a new [rows.size(), 1, c, t] batch.
    NdArray<float> gather(std::span<const Index> rows) const;
    std::vector<int> gather_labels(std::span<const Index> rows) const;
    /// Throws ConfigError unless shapes, labels and flags agree.
    void validate() const;
};

/// Concatenation of several subjects (subject id of the first is kept).
ClientDataset pool_datasets(const std::vector<const ClientDataset*>& parts);

struct BenchmarkSpec {
    Index subjects = 8;
    Index classes = 2;
    Index channels = 8;
    Index samples = 128;
    Index trials = 160;
    double sampling_rate = 128.0;
    /// Rhythm frequency of class 0; class l uses base + l * step.
    double base_frequency = 8.0;
    double frequency_step = 6.0;
    /// Amplitude of the other classes' rhythms relative to the own-class one.
    double contrast = 0.5;
    /// Peak amplitude of the class-coded phase-locked waveform.
    double locked_amplitude = 0.035;
    double locked_frequency = 1.0;
    double noise = 0.2;
    double phase_jitter = 3.141592653589793;
    double amplitude_jitter = 0.2;
    // inter-subject shift
    double gain_sigma = 2.0;
    double mixing_sigma = 0.2;
    double scale_sigma = 0.3;
    double noise_sigma = 0.6;
    /// Per-class trial proportions; empty means balanced.
    std::vector<double> class_ratio;
    std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const BenchmarkSpec& s);
void from_json(const nlohmann::json& j, BenchmarkSpec& s);

struct SubjectSpec {
    /// Seed of the spatial patterns and class waveforms shared by subjects.
    std::uint64_t template_seed = 1;
    double sampling_rate = 128.0;
    std::vector<double> frequencies;
    double contrast = 0.5;
    double locked_amplitude = 0.0;
    double locked_frequency = 30.0;
    MatrixXd mixing;
    double amplitude = 1.0;
    std::vector<double> rhythm_gains;
    double noise = 1.0;
    double phase_jitter = 0.0;
    double amplitude_jitter = 0.0;
    std::vector<double> class_ratio;

    void validate(Index classes, Index channels) const;
};

/// Subject k of a benchmark (deterministic in the benchmark seed).
SubjectSpec subject_spec(const BenchmarkSpec& bench, int subject);

/// Noise-free, unmixed, unshifted class-y waveform [c, t] with zero phase.
MatrixXd class_template(const SubjectSpec& spec, int y, Index classes, Index channels, Index samples);

ClientDataset generate_subject(const SubjectSpec& spec, Index classes, Index channels, Index samples, Index n, std::uint64_t seed,
                               int subject = 0);

std::vector<ClientDataset> generate_benchmark(const BenchmarkSpec& bench);

/// S^{-1/2} of a symmetric positive-definite matrix by eigendecomposition.
MatrixXd matrix_inverse_sqrt(const MatrixXd& s);

struct AlignmentInfo {
    MatrixXd reference;
    bool ridged = false;
};

/// X'_i = R^{-1/2} X_i with R the mean trial covariance; a ridge is added
/// when R is singular.
ClientDataset euclidean_align(const ClientDataset& data, AlignmentInfo* info = nullptr);

/// Appends mixed trials X' = (X1 + X2) / 2 until class counts are balanced.
/// A mix containing a target-class trial is labeled as the target class.
ClientDataset mix_augment(const ClientDataset& data, int target, Rng& rng);

// Trial files: <dir>/manifest.json, <dir>/trials.f32 (n*c*t), <dir>/labels.i32

void save_subject(const std::filesystem::path& dir, const ClientDataset& data);
ClientDataset load_subject(const std::filesystem::path& dir);

}  // namespace safe
