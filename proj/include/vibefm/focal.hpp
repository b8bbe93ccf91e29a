#pragma once

#include "vibefm/datamodel.hpp"
#include "vibefm/nn.hpp"

#include <span>
#include <vector>

namespace vibefm {

struct LossBreakdown {
    double total = 0.0;
    double shared_term = 0.0;
    double private_term = 0.0;
    double orth_term = 0.0;
    LossWeights weights;
};

/// A column block [offset, offset + width) of a row-major [B, D] matrix.
struct Block {
    const nn::Tensor* values = nullptr;
    nn::Tensor* grad = nullptr; // same shape as *values; accumulated into when set
    std::size_t offset = 0;
    std::size_t width = 0;
};

/// Mean over anchors of -log softmax_j(cos(a_i, p_j) / tau)[i]. When the
/// blocks carry grad pointers, `scale` * dLoss is accumulated into them.
double info_nce(const Block& anchors, const Block& positives, double temperature, double scale = 1.0);

/// Mean cos^2 over the row-aligned pairs (a_i, b_i) of every listed block pair.
double mean_squared_cosine(std::span<const std::pair<Block, Block>> pairs, double scale = 1.0);

/// Two augmented views of one batch: per view, one [B, D] matrix per modality.
struct FocalViews {
    std::vector<nn::Tensor> view1;
    std::vector<nn::Tensor> view2;
    std::size_t shared_dim = 0;
};

struct FocalGradients {
    std::vector<nn::Tensor> view1;
    std::vector<nn::Tensor> view2;
};

double shared_space_loss(const FocalViews& views, double temperature, FocalGradients* grads = nullptr,
                         double scale = 1.0);
double private_space_loss(const FocalViews& views, double temperature, FocalGradients* grads = nullptr,
                          double scale = 1.0);
/// Over both views: (private_m, private_m') for m < m' and (private_m, shared_m).
double orthogonality_penalty(const FocalViews& views, FocalGradients* grads = nullptr, double scale = 1.0);

/// Weighted sum of the three terms; gradients of the total when `grads` is set.
LossBreakdown focal_loss(const FocalViews& views, const TrainConfig& config, FocalGradients* grads = nullptr);

// Bundle-level conveniences over per-sample EmbeddingBundles.

double info_nce(std::span<const std::vector<double>> anchors, std::span<const std::vector<double>> positives,
                double temperature);
FocalViews make_views(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2);
double shared_space_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                         double temperature);
double private_space_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                          double temperature);
double orthogonality_penalty(std::span<const EmbeddingBundle> bundles);
LossBreakdown focal_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                         const TrainConfig& config);

} // namespace vibefm
