#pragma once

#include "vibefm/datamodel.hpp"
#include "vibefm/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vibefm {

struct DeepSenseParams {
    std::vector<int> conv_channels{16, 16};
    // Used when a modality has at least `wide_bins` frequency bins.
    std::vector<int> wide_kernels{16, 8};
    std::vector<int> wide_strides{8, 8};
    std::vector<int> narrow_kernels{3, 3};
    std::vector<int> narrow_strides{1, 2};
    int wide_bins = 64;
    int gru_hidden = 128;
    int gru_layers = 2;
};

struct SwinParams {
    int freq_patches = 10; // patch grid is intervals x freq_patches
    int embed_dim = 32;
    int heads = 2;
    int window = 5;
    std::vector<int> depths{2, 2};
    int mlp_ratio = 2;
};

struct EncoderConfig {
    EncoderKind kind = EncoderKind::DeepSense;
    int embedding_dim = 128;
    int shared_dim = 64;
    DeepSenseParams deepsense;
    SwinParams swin;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

struct NamedParam {
    std::string name;
    nn::Var var;
};

/// Maps one modality's packed batch [B, intervals, bins, 2*channels] to [B, D].
class ModalityEncoder {
public:
    virtual ~ModalityEncoder() = default;
    virtual nn::Var forward(const nn::Var& x) const = 0;
    virtual std::vector<NamedParam> parameters() const = 0;
};

/// Token indices (row-major over a grid_h x grid_w grid) gathered into each
/// attention window, for a plain or half-window-shifted block.
std::vector<std::vector<std::size_t>> swin_windows(std::size_t grid_h, std::size_t grid_w, std::size_t window,
                                                   bool shifted);

std::unique_ptr<ModalityEncoder> make_encoder(const EncoderConfig& config, const ModalitySpec& spec);

enum class HeadKind { LinearProbe, SupervisedFusion };
std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

class ClassifierHead {
public:
    static constexpr int kDefaultFusionHidden = 128;

    ClassifierHead(HeadKind kind, int input_dim, int num_classes, std::uint64_t seed,
                   int fusion_hidden = kDefaultFusionHidden);

    HeadKind kind() const { return kind_; }
    int input_dim() const { return input_dim_; }
    int num_classes() const { return num_classes_; }

    /// x[B, input_dim] -> logits[B, num_classes]
    nn::Var forward(const nn::Var& x) const;

    std::vector<NamedParam> parameters() const;
    /// The affine map producing the logits (the whole head for a linear probe).
    std::vector<NamedParam> output_parameters() const;
    /// Fresh seeded initialization of the output layer only.
    void reset_output(std::uint64_t seed);

private:
    HeadKind kind_;
    int input_dim_;
    int num_classes_;
    int hidden_;
    nn::Var w1_, b1_, w2_, b2_; // w1_/b1_ only for fusion
};

class MultimodalModel {
public:
    MultimodalModel(EncoderConfig config, std::vector<ModalitySpec> specs, HeadKind head, int num_classes);

    const EncoderConfig& config() const { return config_; }
    const std::vector<ModalitySpec>& specs() const { return specs_; }
    std::size_t num_modalities() const { return specs_.size(); }
    int num_classes() const { return head_.num_classes(); }

    ClassifierHead& head() { return head_; }
    const ClassifierHead& head() const { return head_; }
    /// Replace the head with a freshly initialized one.
    void reset_head(HeadKind kind, std::uint64_t seed);
    void reset_head(HeadKind kind, std::uint64_t seed, int num_classes);

    /// Per-modality packed inputs (see pack_batch) -> per-modality [B, D].
    std::vector<nn::Var> encode(std::span<const nn::Tensor> inputs) const;
    /// Concatenate per-modality embeddings and apply the head.
    nn::Var logits(std::span<const nn::Var> embeddings) const;

    std::vector<NamedParam> encoder_parameters() const;
    std::vector<NamedParam> parameters() const; // encoders, then head

    /// Deep copy with independent weights.
    MultimodalModel clone() const;
    /// Copy values from `other`; names and shapes must agree.
    void copy_weights_from(const MultimodalModel& other);

private:
    EncoderConfig config_;
    std::vector<ModalitySpec> specs_;
    std::vector<std::unique_ptr<ModalityEncoder>> encoders_;
    ClassifierHead head_;
};

/// The parameters updated in `stage`: encoders for PRETRAIN, encoders plus head
/// for SUPERVISED, the head for FINETUNE, the head's output layer for
/// SUPERVISED_FINETUNE.
std::vector<NamedParam> trainable_parameters(const MultimodalModel& model, Stage stage);
/// Marks exactly trainable_parameters(model, stage) as requiring gradients.
void set_trainable(MultimodalModel& model, Stage stage);
std::size_t count_trainable_params(const MultimodalModel& model, Stage stage);
std::size_t count_params(std::span<const NamedParam> params);

/// Stack one modality of many samples into [B, intervals, bins, 2*channels]
/// with the plane index 2c for the real part and 2c+1 for the imaginary part.
/// `samples[b]` holds one spectrogram per modality in spec order.
nn::Tensor pack_batch(std::span<const std::vector<Spectrogram>* const> samples, std::size_t modality,
                      const ModalitySpec& spec);
std::vector<nn::Tensor> pack_batch(std::span<const std::vector<Spectrogram>* const> samples,
                                   std::span<const ModalitySpec> specs);

/// Single-sample convenience wrappers.
EmbeddingBundle encode(const std::vector<Spectrogram>& spectrograms, const MultimodalModel& model);
std::vector<double> classify(const EmbeddingBundle& bundle, const ClassifierHead& head);

struct SplitEmbedding {
    std::vector<double> shared;
    std::vector<double> private_;
};
std::vector<SplitEmbedding> split_embedding(const EmbeddingBundle& bundle);

} // namespace vibefm
