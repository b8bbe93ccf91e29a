#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vibefm {

inline constexpr double kDefaultSegmentSeconds = 2.0;
inline constexpr int kDefaultNumClasses = 4;
inline constexpr double kDefaultOverlap = 0.2;

struct ModalitySpec {
    std::string name;
    int sample_rate_hz = 0;
    int channels = 1;
    int num_intervals = 10;
    double segment_seconds = kDefaultSegmentSeconds;

    std::size_t samples_per_segment() const;
    std::size_t interval_length() const;
    /// Real-input FFT bin count of one interval.
    std::size_t bins() const;

    /// Throws InvalidArgument / Indivisible when the spec is unusable.
    void validate() const;
};

/// 8 kHz acoustic + 100 Hz seismic, one channel each.
std::vector<ModalitySpec> default_modalities(double segment_seconds = kDefaultSegmentSeconds);

const ModalitySpec& find_spec(std::span<const ModalitySpec> specs, std::string_view name);

enum class DomainTag { ModUnlabeled, Control, Noisy, SynthA, SynthB };

std::string_view to_string(DomainTag tag);
DomainTag parse_domain_tag(std::string_view text);

/// Multichannel real time series, row-major [channels, samples].
struct Signal {
    std::size_t channels = 0;
    std::size_t samples = 0;
    std::vector<double> data;

    Signal() = default;
    Signal(std::size_t channels_, std::size_t samples_, double fill = 0.0)
        : channels(channels_), samples(samples_), data(channels_ * samples_, fill)
    {
    }

    std::span<double> channel(std::size_t c) { return {data.data() + c * samples, samples}; }
    std::span<const double> channel(std::size_t c) const { return {data.data() + c * samples, samples}; }

    bool operator==(const Signal&) const = default;
};

struct Segment {
    std::map<std::string, Signal> modalities;
    std::optional<int> label;
    DomainTag domain = DomainTag::SynthA;
    std::string run_id;
    double start_time_s = 0.0;

    const Signal& at(const std::string& modality) const;
    bool operator==(const Segment&) const = default;
};

/// Returns `segment` unchanged when shapes and values agree with `specs`.
const Segment& validate_segment(const Segment& segment, std::span<const ModalitySpec> specs);

/// Complex [channels, intervals, bins] tensor stored as two real planes.
struct Spectrogram {
    std::string modality;
    std::size_t channels = 0;
    std::size_t intervals = 0;
    std::size_t bins = 0;
    std::vector<double> re;
    std::vector<double> im;
    bool normalized = false;

    Spectrogram() = default;
    Spectrogram(std::string modality_, std::size_t channels_, std::size_t intervals_, std::size_t bins_);

    std::size_t size() const { return channels * intervals * bins; }
    std::size_t index(std::size_t c, std::size_t i, std::size_t k) const { return (c * intervals + i) * bins + k; }

    void validate(const ModalitySpec& spec) const;
    bool operator==(const Spectrogram&) const = default;
};

/// One embedding per modality; coordinates [0, shared_dim) form the shared
/// subspace, the remainder the private subspace.
struct EmbeddingBundle {
    std::size_t dim = 0;
    std::size_t shared_dim = 0;
    std::vector<std::string> modalities;
    std::vector<std::vector<double>> embeddings;

    void validate() const;
    std::span<const double> shared(std::size_t m) const;
    std::span<const double> private_part(std::size_t m) const;
};

enum class Stage { Supervised, Pretrain, Finetune, SupervisedFinetune };
enum class OptimizerKind { AdamW, Adam };
enum class SchedulerKind { Cosine };
/// How "LR decay" is read: floor of the cosine schedule, or a step factor.
enum class DecayMode { CosineFloor, Step };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct LossWeights {
    double shared = 1.0;
    double private_ = 1.0;
    double orth = 1.0;
};

struct AugmentParams {
    void validate() const;

    int permutation_min_k = 2;
    int permutation_max_k = 8;
    int warp_knots = 4;
    double warp_sigma = 0.2;
    int magnitude_knots = 4;
    double magnitude_sigma = 0.2;
    double scaling_min = 0.5;
    double scaling_max = 2.0;
    double mixup_alpha = 0.2;
    /// Each op of the stage row is included in a plan independently with this probability.
    double op_probability = 0.5;
};

struct TrainConfig {
    Stage stage = Stage::Pretrain;
    int batch_size = 256;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    double initial_lr = 1e-4;
    SchedulerKind scheduler = SchedulerKind::Cosine;
    double lr_decay = 0.05;
    DecayMode decay_mode = DecayMode::CosineFloor;
    int lr_step_epochs = 0; // Step mode only; 0 means epochs / 3
    int epochs = 6000;
    std::vector<std::string> augmentations;
    std::uint64_t seed = 0;
    double temperature = 0.07;
    LossWeights loss_weights;
    double weight_decay = 0.01; // AdamW only
    int patience = 20;          // early stopping on validation accuracy; 0 disables
    AugmentParams augment;

    /// Default hyperparameters for `stage`, epochs multiplied by `epoch_scale` (at least 1).
    static TrainConfig defaults(Stage stage, double epoch_scale = 1.0);
    void validate() const;
};

enum class EncoderKind { DeepSense, Swin };
enum class Framework { Supervised, SupervisedFinetune, Focal };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view text);
std::string_view to_string(Framework framework);
Framework parse_framework(std::string_view text);

struct EvalRow {
    EncoderKind encoder = EncoderKind::DeepSense;
    Framework framework = Framework::Focal;
    double label_ratio = 1.0;
    DomainTag train_domain = DomainTag::SynthA;
    DomainTag test_domain = DomainTag::SynthA;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::uint64_t seed = 0;
    bool best = false; // best accuracy among frameworks for (encoder, ratio, domains, seed)

    bool operator==(const EvalRow&) const = default;
};

struct ConvergencePoint {
    int epoch = 0;
    double train_accuracy = 0.0;
    double eval_accuracy = 0.0;

    bool operator==(const ConvergencePoint&) const = default;
};

struct ConvergenceCurve {
    std::string cell;
    std::vector<ConvergencePoint> points;

    bool operator==(const ConvergenceCurve&) const = default;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<ConvergenceCurve> curves;

    void validate() const;
    bool operator==(const EvalReport&) const = default;
};

inline const std::vector<double>& default_label_ratios()
{
    static const std::vector<double> ratios{1.0, 0.5, 0.1, 0.01};
    return ratios;
}

// On-disk layout: <root>/<run_id>/<index>.<modality>.f32 (little-endian
// float32, channel-major) plus <root>/<run_id>/index.json.

void write_dataset(const std::filesystem::path& root, std::span<const Segment> segments,
                   std::span<const ModalitySpec> specs);
std::vector<Segment> read_dataset(const std::filesystem::path& root, std::span<const ModalitySpec> specs);

} // namespace vibefm
