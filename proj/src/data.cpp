#include <safe/data.hpp>
#include <safe/error.hpp>
#include <safe/io.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace safe {

namespace {

constexpr double kTwoPi = 6.283185307179586;

MatrixXd trial_matrix(const ClientDataset& d, Index i) {
    const Index c = d.channels(), t = d.samples();
    return d.trials.matrix(c, t, i * c * t).cast<double>();
}

void store_trial(ClientDataset& d, Index i, const MatrixXd& x) {
    const Index c = d.channels(), t = d.samples();
    d.trials.matrix(c, t, i * c * t) = x.cast<float>();
}

Eigen::VectorXd unit_pattern(Rng& rng, Index channels) {
    Eigen::VectorXd v(channels);
    for (Index i = 0; i < channels; ++i) v[i] = standard_normal(rng);
    return v * (std::sqrt(double(channels)) / v.norm());
}

// Spatial patterns of the class rhythms. The locked waveform shares column 0,
// so it sits in the high-variance subspace and stays small after alignment.
MatrixXd spatial_patterns(const SubjectSpec& spec, Index classes, Index channels) {
    Rng rng = make_rng(spec.template_seed, {0x9a77});
    MatrixXd p(channels, classes);
    for (Index l = 0; l < classes; ++l) p.col(l) = unit_pattern(rng, channels);
    return p;
}

std::vector<Index> class_sizes(const std::vector<double>& ratio, Index classes, Index n) {
    std::vector<double> w = ratio.empty() ? std::vector<double>(std::size_t(classes), 1.0) : ratio;
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<Index> sizes(static_cast<std::size_t>(classes));
    Index assigned = 0;
    for (Index l = 0; l < classes; ++l) {
        sizes[std::size_t(l)] = Index(std::floor(double(n) * w[std::size_t(l)] / total));
        assigned += sizes[std::size_t(l)];
    }
    for (Index l = 0; assigned < n; l = (l + 1) % classes, ++assigned) ++sizes[std::size_t(l)];
    return sizes;
}

// Sum of class rhythms and locked waveform for one trial, before mixing.
MatrixXd sources(const SubjectSpec& spec, const MatrixXd& patterns, int y, Index classes, Index samples,
                 const std::vector<double>& phases, const std::vector<double>& amp) {
    const Index channels = patterns.rows();
    MatrixXd s = MatrixXd::Zero(channels, samples);
    Eigen::RowVectorXd wave(samples);
    for (Index l = 0; l < classes; ++l) {
        const double a = (l == y ? 1.0 : spec.contrast) * spec.rhythm_gains[std::size_t(l)] * amp[std::size_t(l)];
        for (Index k = 0; k < samples; ++k)
            wave[k] = a * std::sin(kTwoPi * spec.frequencies[std::size_t(l)] * double(k) / spec.sampling_rate + phases[std::size_t(l)]);
        s.noalias() += patterns.col(l) * wave;
    }
    if (spec.locked_amplitude != 0.0) {
        const double offset = kTwoPi * double(y) / double(classes);
        for (Index k = 0; k < samples; ++k)
            wave[k] = spec.locked_amplitude * std::sin(kTwoPi * spec.locked_frequency * double(k) / spec.sampling_rate + offset);
        s.noalias() += patterns.col(0) * wave;
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ClientDataset

std::vector<Index> ClientDataset::class_counts() const {
    std::vector<Index> counts(std::size_t(classes), 0);
    for (int y : labels) ++counts.at(std::size_t(y));
    return counts;
}

NdArray<float> ClientDataset::gather(std::span<const Index> rows) const {
    const Index c = channels(), t = samples(), stride = c * t;
    NdArray<float> out({Index(rows.size()), 1, c, t});
    for (std::size_t r = 0; r < rows.size(); ++r)
        out.array().segment(Index(r) * stride, stride) = trials.array().segment(rows[r] * stride, stride);
    return out;
}

std::vector<int> ClientDataset::gather_labels(std::span<const Index> rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(labels.at(std::size_t(r)));
    return out;
}

void ClientDataset::validate() const {
    if (trials.rank() != 4 || trials.dim(1) != 1) throw ConfigError("dataset: trials must be [n, 1, c, t]");
    if (trials.dim(0) != size()) throw ConfigError("dataset: trial count does not match label count");
    if (synthetic.size() != labels.size()) throw ConfigError("dataset: provenance flags do not match label count");
    if (classes < 2) throw ConfigError("dataset: need at least 2 classes");
    for (int y : labels)
        if (y < 0 || y >= classes) throw ConfigError("dataset: label " + std::to_string(y) + " out of range");
    if (!trials.all_finite()) throw ConfigError("dataset: non-finite trial values");
}

ClientDataset pool_datasets(const std::vector<const ClientDataset*>& parts) {
    if (parts.empty()) throw ConfigError("pool_datasets: nothing to pool");
    ClientDataset out;
    out.subject = parts.front()->subject;
    out.classes = parts.front()->classes;
    const Index c = parts.front()->channels(), t = parts.front()->samples();
    Index n = 0;
    for (const auto* p : parts) {
        if (p->channels() != c || p->samples() != t || p->classes != out.classes)
            throw ShapeError("pool_datasets", {p->trials.shape(), parts.front()->trials.shape()}, "pool_datasets: incompatible subjects");
        n += p->size();
    }
    out.trials = NdArray<float>({n, 1, c, t});
    Index offset = 0;
    for (const auto* p : parts) {
        out.trials.array().segment(offset, p->trials.size()) = p->trials.array();
        offset += p->trials.size();
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
        out.synthetic.insert(out.synthetic.end(), p->synthetic.begin(), p->synthetic.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generator

void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
    j = nlohmann::json{{"subjects", s.subjects},
                       {"classes", s.classes},
                       {"channels", s.channels},
                       {"samples", s.samples},
                       {"trials", s.trials},
                       {"sampling_rate", s.sampling_rate},
                       {"base_frequency", s.base_frequency},
                       {"frequency_step", s.frequency_step},
                       {"contrast", s.contrast},
                       {"locked_amplitude", s.locked_amplitude},
                       {"locked_frequency", s.locked_frequency},
                       {"noise", s.noise},
                       {"phase_jitter", s.phase_jitter},
                       {"amplitude_jitter", s.amplitude_jitter},
                       {"gain_sigma", s.gain_sigma},
                       {"mixing_sigma", s.mixing_sigma},
                       {"scale_sigma", s.scale_sigma},
                       {"noise_sigma", s.noise_sigma},
                       {"class_ratio", s.class_ratio},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
    s.subjects = j.value("subjects", s.subjects);
    s.classes = j.value("classes", s.classes);
    s.channels = j.value("channels", s.channels);
    s.samples = j.value("samples", s.samples);
    s.trials = j.value("trials", s.trials);
    s.sampling_rate = j.value("sampling_rate", s.sampling_rate);
    s.base_frequency = j.value("base_frequency", s.base_frequency);
    s.frequency_step = j.value("frequency_step", s.frequency_step);
    s.contrast = j.value("contrast", s.contrast);
    s.locked_amplitude = j.value("locked_amplitude", s.locked_amplitude);
    s.locked_frequency = j.value("locked_frequency", s.locked_frequency);
    s.noise = j.value("noise", s.noise);
    s.phase_jitter = j.value("phase_jitter", s.phase_jitter);
    s.amplitude_jitter = j.value("amplitude_jitter", s.amplitude_jitter);
    s.gain_sigma = j.value("gain_sigma", s.gain_sigma);
    s.mixing_sigma = j.value("mixing_sigma", s.mixing_sigma);
    s.scale_sigma = j.value("scale_sigma", s.scale_sigma);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.class_ratio = j.value("class_ratio", s.class_ratio);
    s.seed = j.value("seed", s.seed);
}

void SubjectSpec::validate(Index classes, Index channels) const {
    auto fail = [](const std::string& why) { throw ConfigError("invalid subject spec: " + why); };
    if (classes < 2) fail("need at least 2 classes");
    if (Index(frequencies.size()) != classes || Index(rhythm_gains.size()) != classes) fail("one frequency and gain per class required");
    if (mixing.rows() != channels || mixing.cols() != channels) fail("mixing matrix must be c x c");
    if (std::abs(mixing.determinant()) < 1e-12) fail("mixing matrix is singular");
    if (!(amplitude > 0)) fail("amplitude must be positive");
    if (!(noise >= 0)) fail("noise must be nonnegative");
    if (!(sampling_rate > 0)) fail("sampling rate must be positive");
    if (!class_ratio.empty()) {
        if (Index(class_ratio.size()) != classes) fail("class_ratio needs one entry per class");
        for (double r : class_ratio)
            if (!(r > 0)) fail("class ratios must be positive");
    }
}

SubjectSpec subject_spec(const BenchmarkSpec& bench, int subject) {
    SubjectSpec s;
    s.template_seed = derive_seed(bench.seed, {0x7e});
    s.sampling_rate = bench.sampling_rate;
    for (Index l = 0; l < bench.classes; ++l) s.frequencies.push_back(bench.base_frequency + double(l) * bench.frequency_step);
    s.contrast = bench.contrast;
    s.locked_amplitude = bench.locked_amplitude;
    s.locked_frequency = bench.locked_frequency;
    s.phase_jitter = bench.phase_jitter;
    s.amplitude_jitter = bench.amplitude_jitter;
    s.class_ratio = bench.class_ratio;

    Rng rng = make_rng(bench.seed, {0x5b, std::uint64_t(subject)});
    const Index c = bench.channels;
    s.mixing = MatrixXd::Identity(c, c);
    for (Index i = 0; i < c; ++i)
        for (Index j = 0; j < c; ++j) s.mixing(i, j) += bench.mixing_sigma * standard_normal(rng) / std::sqrt(double(c));
    s.amplitude = std::exp(bench.scale_sigma * standard_normal(rng));
    for (Index l = 0; l < bench.classes; ++l) s.rhythm_gains.push_back(std::exp(bench.gain_sigma * standard_normal(rng)));
    s.noise = bench.noise * std::exp(bench.noise_sigma * standard_normal(rng));
    return s;
}

MatrixXd class_template(const SubjectSpec& spec, int y, Index classes, Index channels, Index samples) {
    SubjectSpec plain = spec;
    plain.rhythm_gains.assign(std::size_t(classes), 1.0);
    const std::vector<double> zeros(std::size_t(classes), 0.0), ones(std::size_t(classes), 1.0);
    return sources(plain, spatial_patterns(spec, classes, channels), y, classes, samples, zeros, ones);
}

ClientDataset generate_subject(const SubjectSpec& spec, Index classes, Index channels, Index samples, Index n, std::uint64_t seed,
                               int subject) {
    spec.validate(classes, channels);
    if (n < 2 * classes) throw ConfigError("generate_subject: need at least 2 trials per class");
    if (samples < 2) throw ConfigError("generate_subject: need at least 2 samples");

    Rng rng = make_rng(seed, {0x6e});
    std::vector<int> labels;
    const auto sizes = class_sizes(spec.class_ratio, classes, n);
    for (Index l = 0; l < classes; ++l) labels.insert(labels.end(), std::size_t(sizes[std::size_t(l)]), int(l));
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(rng, i)]);

    ClientDataset d;
    d.subject = subject;
    d.classes = classes;
    d.trials = NdArray<float>({n, 1, channels, samples});
    d.labels = labels;
    d.synthetic.assign(std::size_t(n), 0);

    const MatrixXd patterns = spatial_patterns(spec, classes, channels);
    std::vector<double> phases(static_cast<std::size_t>(classes)), amp(static_cast<std::size_t>(classes));
    for (Index i = 0; i < n; ++i) {
        for (Index l = 0; l < classes; ++l) {
            phases[std::size_t(l)] = spec.phase_jitter * (2.0 * uniform01(rng) - 1.0);
            amp[std::size_t(l)] = std::exp(spec.amplitude_jitter * standard_normal(rng));
        }
        MatrixXd x = spec.amplitude * (spec.mixing * sources(spec, patterns, labels[std::size_t(i)], classes, samples, phases, amp));
        if (spec.noise > 0)
            for (Index k = 0; k < x.size(); ++k) x.data()[k] += spec.noise * standard_normal(rng);
        store_trial(d, i, x);
    }
    return d;
}

std::vector<ClientDataset> generate_benchmark(const BenchmarkSpec& bench) {
    if (bench.subjects < 2) throw ConfigError("benchmark: need at least 2 subjects");
    std::vector<ClientDataset> out;
    for (Index k = 0; k < bench.subjects; ++k)
        out.push_back(generate_subject(subject_spec(bench, int(k)), bench.classes, bench.channels, bench.samples, bench.trials,
                                       derive_seed(bench.seed, {0x7a, std::uint64_t(k)}), int(k)));
    return out;
}

// ---------------------------------------------------------------------------
// Euclidean alignment

MatrixXd matrix_inverse_sqrt(const MatrixXd& s) {
    if (s.rows() != s.cols() || s.rows() == 0) throw ShapeError("matrix_inverse_sqrt", {{s.rows(), s.cols()}}, "matrix_inverse_sqrt: not square");
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw Error("matrix_inverse_sqrt: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s);
    if (eig.info() != Eigen::Success) throw Error("matrix_inverse_sqrt: eigendecomposition failed");
    if (!(eig.eigenvalues().minCoeff() > 0)) throw Error("matrix_inverse_sqrt: matrix is not positive definite");
    return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

ClientDataset euclidean_align(const ClientDataset& data, AlignmentInfo* info) {
    data.validate();
    if (data.size() < 1) throw ConfigError("euclidean_align: no trials");
    const Index c = data.channels();
    MatrixXd r = MatrixXd::Zero(c, c);
    for (Index i = 0; i < data.size(); ++i) {
        const MatrixXd x = trial_matrix(data, i);
        r.noalias() += x * x.transpose();
    }
    r /= double(data.size());
    r = 0.5 * (r + r.transpose());

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(r, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    bool ridged = false;
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) {
        const double lambda = 1e-8 * r.trace() / double(c);
        r += MatrixXd::Identity(c, c) * (lambda > 0 ? lambda : 1e-8);
        ridged = true;
        std::cerr << "warning: subject " << data.subject << " has a singular mean covariance; alignment uses a ridge\n";
    }
    const MatrixXd w = matrix_inverse_sqrt(r);
    ClientDataset out = data;
    for (Index i = 0; i < data.size(); ++i) store_trial(out, i, w * trial_matrix(data, i));
    if (info) *info = {r, ridged};
    return out;
}

// ---------------------------------------------------------------------------
// Mix augmentation

ClientDataset mix_augment(const ClientDataset& data, int target, Rng& rng) {
    data.validate();
    if (data.size() < 2) throw ConfigError("mix_augment: need at least 2 trials");
    if (target < 0 || target >= data.classes) throw ConfigError("mix_augment: target class out of range");
    auto counts = data.class_counts();
    Index present = 0;
    for (Index n : counts) present += n > 0;
    if (present < 2) throw ConfigError("mix_augment: only one class present");

    std::vector<std::vector<Index>> by_class(std::size_t(data.classes));
    for (Index i = 0; i < data.size(); ++i) by_class[std::size_t(data.labels[std::size_t(i)])].push_back(i);

    std::vector<MatrixXd> extra;
    std::vector<int> extra_labels;
    for (;;) {
        Index lo = -1, hi = 0;
        for (Index l = 0; l < data.classes; ++l) {
            if (counts[std::size_t(l)] == 0) continue;
            if (lo < 0 || counts[std::size_t(l)] < counts[std::size_t(lo)]) lo = l;
            hi = std::max(hi, counts[std::size_t(l)]);
        }
        if (hi - counts[std::size_t(lo)] <= 1) break;
        const auto& pool = by_class[std::size_t(lo)];
        const Index a = pool[uniform_index(rng, pool.size())];
        // The target class may borrow any partner; other classes mix within themselves.
        const Index b = lo == target ? Index(uniform_index(rng, std::uint64_t(data.size()))) : pool[uniform_index(rng, pool.size())];
        extra.push_back(0.5 * (trial_matrix(data, a) + trial_matrix(data, b)));
        const int la = data.labels[std::size_t(a)], lb = data.labels[std::size_t(b)];
        extra_labels.push_back(la == target || lb == target ? target : la);
        ++counts[std::size_t(extra_labels.back())];
    }

    ClientDataset out;
    out.subject = data.subject;
    out.classes = data.classes;
    const Index c = data.channels(), t = data.samples(), n = data.size() + Index(extra.size());
    out.trials = NdArray<float>({n, 1, c, t});
    out.trials.array().head(data.trials.size()) = data.trials.array();
    out.labels = data.labels;
    out.synthetic = data.synthetic;
    for (std::size_t k = 0; k < extra.size(); ++k) {
        out.labels.push_back(extra_labels[k]);
        out.synthetic.push_back(1);
        store_trial(out, data.size() + Index(k), extra[k]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trial files

void save_subject(const std::filesystem::path& dir, const ClientDataset& data) {
    data.validate();
    std::filesystem::create_directories(dir);
    io::Bytes trials, labels;
    trials.reserve(std::size_t(data.trials.size()) * 4);
    for (Index i = 0; i < data.trials.size(); ++i) io::append_le(trials, data.trials[i]);
    for (int y : data.labels) io::append_le<std::int32_t>(labels, y);
    nlohmann::json manifest{{"format", "safe-trials"},
                            {"version", 1},
                            {"subject", data.subject},
                            {"channels", data.channels()},
                            {"samples", data.samples()},
                            {"classes", data.classes},
                            {"trials", data.size()},
                            {"dtype", "float32"},
                            {"endianness", "little"},
                            {"class_counts", data.class_counts()},
                            {"synthetic", data.synthetic}};
    io::write_text(dir / "manifest.json", manifest.dump(2));
    io::write_file(dir / "trials.f32", trials);
    io::write_file(dir / "labels.i32", labels);
}

ClientDataset load_subject(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (manifest.value("format", "") != "safe-trials") throw ConfigError("not a trial directory: " + dir.string());
    if (manifest.value("dtype", "") != "float32" || manifest.value("endianness", "") != "little")
        throw ConfigError("trial files must be little-endian float32");
    ClientDataset d;
    d.subject = manifest.at("subject").get<int>();
    d.classes = manifest.at("classes").get<Index>();
    const Index n = manifest.at("trials").get<Index>(), c = manifest.at("channels").get<Index>(), t = manifest.at("samples").get<Index>();
    const auto trials = io::read_file(dir / "trials.f32");
    const auto labels = io::read_file(dir / "labels.i32");
    if (trials.size() != std::size_t(n * c * t) * 4 || labels.size() != std::size_t(n) * 4)
        throw ConfigError("trial files in " + dir.string() + " do not match the manifest");
    d.trials = NdArray<float>({n, 1, c, t});
    std::size_t off = 0;
    for (Index i = 0; i < d.trials.size(); ++i) d.trials[i] = io::read_le<float>(trials, off);
    off = 0;
    for (Index i = 0; i < n; ++i) d.labels.push_back(io::read_le<std::int32_t>(labels, off));
    d.synthetic = manifest.value("synthetic", std::vector<std::uint8_t>(std::size_t(n), 0));
    d.validate();
    return d;
}

}  // namespace safe
