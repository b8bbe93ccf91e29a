#pragma once

#include "vibefm/datamodel.hpp"
#include "vibefm/encoders.hpp"
#include "vibefm/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vibefm {

struct SplitSpec {
    double train = 8.0;
    double val = 1.0;
    double test = 1.0;
    std::uint64_t seed = 0;
    bool stratified = true;

    void validate() const;
};

struct DatasetSplit {
    std::vector<Segment> train, val, test;
};

/// Partition over runs (segments sharing a run_id never straddle splits).
/// Segments with an empty run_id count as runs of their own.
DatasetSplit split_dataset(std::span<const Segment> dataset, const SplitSpec& spec);

/// Per-class proportional subset of round(ratio * |train|) segments with at
/// least one per class. For a fixed seed, smaller ratios give subsets of larger ones.
std::vector<Segment> subsample_labels(std::span<const Segment> train, double ratio, std::uint64_t seed);

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

Metrics metrics(std::span<const int> predictions, std::span<const int> truth, int num_classes);
std::vector<int> labels_of(std::span<const Segment> segments);

/// (epoch, train_acc, val_acc) for epochs < first_n_epochs.
ConvergenceCurve record_convergence(std::string cell, std::span<const EpochMetrics> history, int first_n_epochs);
/// First epoch whose training accuracy reaches `fraction` of the last point's.
int epochs_to_fraction(const ConvergenceCurve& curve, double fraction);

struct GridSpec {
    std::vector<Framework> frameworks{Framework::Supervised, Framework::SupervisedFinetune, Framework::Focal};
    std::vector<EncoderKind> encoders{EncoderKind::DeepSense, EncoderKind::Swin};
    std::vector<double> ratios = default_label_ratios();
    DomainTag train_domain = DomainTag::SynthA;
    std::vector<DomainTag> test_domains{DomainTag::SynthA, DomainTag::SynthB};
    /// Source of unlabeled pre-training data and of the supervised-fine-tune
    /// baseline's source labels. Unset: the train domain's train split.
    std::optional<DomainTag> pretrain_domain;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int convergence_epochs = 100;

    void validate() const;
};

struct GridSettings {
    EncoderConfig encoder; // kind is set per cell
    std::vector<ModalitySpec> specs = default_modalities();
    int num_classes = kDefaultNumClasses;
    TrainConfig pretrain = TrainConfig::defaults(Stage::Pretrain);
    TrainConfig supervised = TrainConfig::defaults(Stage::Supervised);
    TrainConfig finetune = TrainConfig::defaults(Stage::Finetune);
    TrainConfig supervised_finetune = TrainConfig::defaults(Stage::SupervisedFinetune);
    SplitSpec split;
};

using DomainData = std::map<DomainTag, std::vector<Segment>>;

struct GridProgress {
    std::function<void(const std::string&)> log;
    /// Pre-training histories, keyed by "<encoder>_s<seed>".
    std::function<void(const std::string&, const TrainResult&)> on_pretrained;
};

/// Name of one grid cell, e.g. "DeepSense_FOCAL_r10_s0".
std::string cell_id(EncoderKind encoder, Framework framework, double ratio, std::uint64_t seed);

/// Train every (encoder, framework, ratio, seed) cell on the train domain and
/// test it on each test domain. Independent (encoder, seed) units may run on
/// `jobs` threads; the result does not depend on `jobs`.
EvalReport run_grid(const GridSpec& grid, const GridSettings& settings, const DomainData& data, int jobs = 1,
                    const GridProgress& progress = {});

/// Marks, per (encoder, ratio, domains, seed), the frameworks with the highest accuracy.
void mark_best(std::vector<EvalRow>& rows);

inline constexpr std::string_view kGridHeader =
    "encoder,framework,label_ratio,train_domain,test_domain,accuracy,macro_f1,seed,best";

/// grid.csv, grid.md, convergence/<cell>.csv and convergence/<cell>.png under `dir`.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir);
std::string report_csv(std::span<const EvalRow> rows);
std::vector<EvalRow> parse_report_csv(const std::string& text);
std::string report_markdown(const EvalReport& report);
/// Reads back what emit_report wrote (curves sorted by cell).
EvalReport read_report(const std::filesystem::path& dir);

/// RGB line plot of train and eval accuracy against epoch.
void write_convergence_png(const std::filesystem::path& path, const ConvergenceCurve& curve);

} // namespace vibefm
