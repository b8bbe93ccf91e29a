#pragma once

#include "vibefm/datamodel.hpp"
#include "vibefm/rng.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vibefm {

enum class AugmentOp {
    Permutation,
    Negation,
    TimeWarp,
    HorizontalFlip,
    MagnitudeWarp,
    Scaling,
    Mixup,
    PhaseShift,
};

std::string_view to_string(AugmentOp op);
AugmentOp parse_augment_op(std::string_view text);
bool is_frequency_domain(AugmentOp op);

/// The augmentations a training stage may use, in canonical order.
std::span<const AugmentOp> allowed_ops(Stage stage);

struct AugmentationPlan {
    Stage stage = Stage::Pretrain;
    std::vector<AugmentOp> time_domain_ops;
    std::vector<AugmentOp> freq_domain_ops;
    AugmentParams params;
    std::uint64_t rng_seed = 0;

    bool contains(AugmentOp op) const;
    bool operator==(const AugmentationPlan& o) const
    {
        return stage == o.stage && time_domain_ops == o.time_domain_ops && freq_domain_ops == o.freq_domain_ops &&
               rng_seed == o.rng_seed;
    }
};

/// Draw a random subset of the stage's ops. `enabled`, when non-empty,
/// restricts the candidates further (ops outside the stage row are rejected).
AugmentationPlan sample_plan(Stage stage, std::uint64_t rng_seed, const AugmentParams& params = {},
                             std::span<const AugmentOp> enabled = {});

std::vector<AugmentOp> parse_augment_list(std::span<const std::string> names);

// Time-domain primitives on one channel.

std::vector<double> negate(std::span<const double> x);
std::vector<double> scaling(std::span<const double> x, double factor);
std::vector<double> horizontal_flip(std::span<const double> x);
/// Split into k equal chunks and reorder them by `order` (a permutation of 0..k-1).
std::vector<double> permute_chunks(std::span<const double> x, std::span<const std::size_t> order);
std::vector<double> permutation(std::span<const double> x, std::size_t k, Rng& rng);
std::vector<double> time_warp(std::span<const double> x, int n_knots, double sigma, Rng& rng);
std::vector<double> magnitude_warp(std::span<const double> x, int n_knots, double sigma, Rng& rng);

/// Smooth curve through `n_knots + 2` evenly spaced knot values, evaluated at
/// every sample index of a length-`length` array (cubic Hermite).
std::vector<double> smooth_curve(std::span<const double> knot_values, std::size_t length);

/// Multiply every complex bin by e^{i theta}.
Spectrogram phase_shift(const Spectrogram& spec, double theta);

struct LabeledExample {
    std::map<std::string, Signal> modalities;
    std::vector<double> soft_label;
};

LabeledExample mixup(const LabeledExample& a, const LabeledExample& b, double lambda);
double sample_mixup_lambda(Rng& rng, double alpha);

/// Apply the plan's time-domain ops (Mixup excluded; it needs a partner) to
/// every channel of one modality. Ops are recorded into `audit` when given.
Signal apply_time_ops(const Signal& signal, const AugmentationPlan& plan, Rng& rng,
                      std::vector<AugmentOp>* audit = nullptr);

/// Apply the plan's frequency-domain ops to one spectrogram.
Spectrogram apply_freq_ops(const Spectrogram& spec, const AugmentationPlan& plan, Rng& rng,
                           std::vector<AugmentOp>* audit = nullptr);

} // namespace vibefm
