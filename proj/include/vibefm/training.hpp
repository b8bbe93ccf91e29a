#pragma once

#include "vibefm/augment.hpp"
#include "vibefm/checkpoint.hpp"
#include "vibefm/datamodel.hpp"
#include "vibefm/encoders.hpp"
#include "vibefm/focal.hpp"
#include "vibefm/preprocess.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vibefm {

nlohmann::json augment_params_to_json(const AugmentParams& params);
/// Keys absent from `j` keep the values of `base`.
AugmentParams augment_params_from_json(const nlohmann::json& j, AugmentParams base);

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Keys absent from `j` keep the values of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base);

nlohmann::json norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

/// Learning rate used throughout `epoch` (constant within an epoch).
double cosine_lr(int epoch, const TrainConfig& config);

/// Adam, or AdamW with decoupled weight decay, over a fixed parameter list.
class Optimizer {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Optimizer(OptimizerKind kind, std::vector<NamedParam> params, double weight_decay);

    void step(double lr);
    void zero_grad();
    const std::vector<NamedParam>& params() const { return params_; }

private:
    OptimizerKind kind_;
    std::vector<NamedParam> params_;
    double weight_decay_;
    long steps_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
    int epoch = 0;
    Stage stage = Stage::Pretrain;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> train_acc;
    std::optional<double> val_acc;
    std::optional<double> shared;
    std::optional<double> private_;
    std::optional<double> orth;
};

struct TrainResult {
    MultimodalModel model;
    NormStats norm;
    Stage stage = Stage::Pretrain;
    TrainConfig config;
    std::vector<EpochMetrics> history;
    int best_epoch = -1;              // epoch whose weights were kept
    std::optional<double> best_val;
    std::string config_hash;
};

struct TrainOptions {
    std::function<void(const EpochMetrics&)> on_epoch;
    /// Early stopping on validation accuracy (config.patience epochs).
    bool early_stopping = true;
    /// Fresh-head seed offset for stages that create a head.
    std::uint64_t head_seed = 0;
};

/// Hex FNV-1a of the canonical JSON of both configs.
std::string config_hash(const TrainConfig& train, const EncoderConfig& encoder);

/// Unnormalized per-interval spectrograms of a clean segment, in spec order.
std::vector<Spectrogram> clean_spectrograms(const Segment& segment, std::span<const ModalitySpec> specs);
NormStats compute_norm_stats(std::span<const Segment> segments, std::span<const ModalitySpec> specs);

/// Self-supervised pre-training with the focal objective on two augmented views.
TrainResult pretrain(std::span<const Segment> data, const TrainConfig& config, const EncoderConfig& encoder,
                     std::span<const ModalitySpec> specs, const TrainOptions& options = {});

/// End-to-end supervised training of encoders plus a fusion head.
TrainResult train_supervised(std::span<const Segment> train, std::span<const Segment> val, const TrainConfig& config,
                             const EncoderConfig& encoder, std::span<const ModalitySpec> specs, int num_classes,
                             const TrainOptions& options = {});

/// Frozen pretrained encoders plus a trained linear probe over `num_classes`.
TrainResult finetune_linear(const TrainResult& pretrained, std::span<const Segment> train,
                            std::span<const Segment> val, const TrainConfig& config,
                            int num_classes = kDefaultNumClasses, const TrainOptions& options = {});

/// A supervised model with everything frozen except a re-initialized final layer.
TrainResult finetune_supervised_baseline(const TrainResult& supervised, std::span<const Segment> train,
                                         std::span<const Segment> val, const TrainConfig& config,
                                         const TrainOptions& options = {});

/// Per-modality clean, normalized embeddings [N, D].
std::vector<nn::Tensor> embed(const MultimodalModel& model, const NormStats& norm, std::span<const Segment> segments,
                              std::size_t batch_size = 128);
std::vector<int> predict(const MultimodalModel& model, const NormStats& norm, std::span<const Segment> segments,
                         std::size_t batch_size = 128);
std::vector<int> predict_from_embeddings(const MultimodalModel& model, std::span<const nn::Tensor> embeddings);

void save_run(const std::filesystem::path& path, const TrainResult& result);
TrainResult load_run(const std::filesystem::path& path);

inline constexpr std::string_view kMetricsHeader = "epoch,stage,lr,train_loss,train_acc,val_acc,shared,private,orth";
void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> history);

} // namespace vibefm
