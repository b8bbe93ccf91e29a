#include "vibefm/focal.hpp"

#include "vibefm/error.hpp"

#include <algorithm>
#include <cmath>

namespace vibefm {

namespace {

constexpr double kMinNorm = 1e-12;

// Row-normalized copy of a column block plus the row norms.
struct Unit {
    std::size_t rows = 0, width = 0;
    std::vector<double> u;
    std::vector<double> norm;
};

Unit unit_rows(const Block& b)
{
    const auto& shape = b.values->shape;
    if (shape.size() != 2 || b.offset + b.width > shape[1] || b.width == 0)
        fail(ErrorCode::DimMismatch, "embedding block out of range");
    Unit out;
    out.rows = shape[0];
    out.width = b.width;
    out.u.resize(out.rows * b.width);
    out.norm.resize(out.rows);
    for (std::size_t r = 0; r < out.rows; ++r) {
        const double* row = b.values->data.data() + r * shape[1] + b.offset;
        double sq = 0.0;
        for (std::size_t j = 0; j < b.width; ++j) sq += row[j] * row[j];
        const double n = std::sqrt(sq);
        if (!(n >= kMinNorm)) fail(ErrorCode::ZeroVector, "embedding row " + std::to_string(r) + " has norm below 1e-12");
        out.norm[r] = n;
        for (std::size_t j = 0; j < b.width; ++j) out.u[r * b.width + j] = row[j] / n;
    }
    return out;
}

// Given dL/du for unit rows, accumulate dL/dx = (du - u (u.du)) / |x| into the block gradient.
void push_back_unit(const Block& b, const Unit& unit, const std::vector<double>& du)
{
    if (!b.grad) return;
    const std::size_t cols = b.values->shape[1];
    for (std::size_t r = 0; r < unit.rows; ++r) {
        const double* u = unit.u.data() + r * unit.width;
        const double* d = du.data() + r * unit.width;
        double dot = 0.0;
        for (std::size_t j = 0; j < unit.width; ++j) dot += u[j] * d[j];
        double* g = b.grad->data.data() + r * cols + b.offset;
        for (std::size_t j = 0; j < unit.width; ++j) g[j] += (d[j] - u[j] * dot) / unit.norm[r];
    }
}

double dot(const double* a, const double* b, std::size_t n)
{
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
    return s;
}

void ensure_grads(const FocalViews& views, FocalGradients* grads)
{
    if (!grads) return;
    auto fill = [](const std::vector<nn::Tensor>& src, std::vector<nn::Tensor>& dst) {
        if (dst.size() != src.size()) {
            dst.clear();
            for (const auto& t : src) dst.emplace_back(t.shape);
        }
    };
    fill(views.view1, grads->view1);
    fill(views.view2, grads->view2);
}

void check_views(const FocalViews& views)
{
    if (views.view1.empty() || views.view1.size() != views.view2.size())
        fail(ErrorCode::ShapeMismatch, "both views need the same non-empty modality list");
    const nn::Shape& shape = views.view1.front().shape;
    if (shape.size() != 2 || shape[0] == 0) fail(ErrorCode::ShapeMismatch, "views must be non-empty [B, D] matrices");
    for (const auto* side : {&views.view1, &views.view2})
        for (const auto& t : *side)
            if (t.shape != shape) fail(ErrorCode::ShapeMismatch, "all view matrices must share one shape");
    if (views.shared_dim == 0 || views.shared_dim >= shape[1])
        fail(ErrorCode::DimMismatch, "shared_dim must lie strictly inside the embedding");
}

Block shared_block(const std::vector<nn::Tensor>& v, std::vector<nn::Tensor>* g, std::size_t m, std::size_t ds)
{
    return {&v[m], g ? &(*g)[m] : nullptr, 0, ds};
}

Block private_block(const std::vector<nn::Tensor>& v, std::vector<nn::Tensor>* g, std::size_t m, std::size_t ds)
{
    return {&v[m], g ? &(*g)[m] : nullptr, ds, v[m].shape[1] - ds};
}

} // namespace

double info_nce(const Block& anchors, const Block& positives, double temperature, double scale)
{
    if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
    if (anchors.width != positives.width) fail(ErrorCode::DimMismatch, "anchor and positive widths differ");
    const Unit a = unit_rows(anchors);
    const Unit p = unit_rows(positives);
    if (a.rows != p.rows) fail(ErrorCode::ShapeMismatch, "anchor and positive counts differ");
    const std::size_t n = a.rows, w = a.width;
    const bool want_grad = anchors.grad || positives.grad;

    std::vector<double> da, dp;
    if (want_grad) {
        da.assign(n * w, 0.0);
        dp.assign(n * w, 0.0);
    }
    std::vector<double> logits(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) logits[j] = dot(&a.u[i * w], &p.u[j * w], w) / temperature;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double v : logits) sum += std::exp(v - mx);
        loss += mx + std::log(sum) - logits[i];
        if (!want_grad) continue;
        for (std::size_t j = 0; j < n; ++j) {
            const double g = (std::exp(logits[j] - mx) / sum - (i == j ? 1.0 : 0.0)) * scale /
                             (static_cast<double>(n) * temperature);
            for (std::size_t k = 0; k < w; ++k) {
                da[i * w + k] += g * p.u[j * w + k];
                dp[j * w + k] += g * a.u[i * w + k];
            }
        }
    }
    if (want_grad) {
        push_back_unit(anchors, a, da);
        push_back_unit(positives, p, dp);
    }
    return loss / static_cast<double>(n);
}

double mean_squared_cosine(std::span<const std::pair<Block, Block>> pairs, double scale)
{
    if (pairs.empty()) return 0.0;
    std::size_t count = 0;
    for (const auto& [x, y] : pairs) count += x.values->shape[0];
    double total = 0.0;
    for (const auto& [x, y] : pairs) {
        if (x.width != y.width) fail(ErrorCode::DimMismatch, "orthogonality needs equal shared and private widths");
        const Unit a = unit_rows(x);
        const Unit b = unit_rows(y);
        if (a.rows != b.rows) fail(ErrorCode::ShapeMismatch, "orthogonality pair row counts differ");
        const std::size_t w = a.width;
        std::vector<double> da(a.u.size()), db(b.u.size());
        for (std::size_t r = 0; r < a.rows; ++r) {
            const double c = dot(&a.u[r * w], &b.u[r * w], w);
            total += c * c;
            const double g = 2.0 * c * scale / static_cast<double>(count);
            for (std::size_t k = 0; k < w; ++k) {
                da[r * w + k] = g * b.u[r * w + k];
                db[r * w + k] = g * a.u[r * w + k];
            }
        }
        push_back_unit(x, a, da);
        push_back_unit(y, b, db);
    }
    return total / static_cast<double>(count);
}

double shared_space_loss(const FocalViews& views, double temperature, FocalGradients* grads, double scale)
{
    check_views(views);
    ensure_grads(views, grads);
    const std::size_t mods = views.view1.size();
    if (mods < 2) return 0.0;
    const std::size_t terms = 2 * mods * (mods - 1);
    double total = 0.0;
    for (int v = 0; v < 2; ++v) {
        const auto& vals = v == 0 ? views.view1 : views.view2;
        auto* g = grads ? (v == 0 ? &grads->view1 : &grads->view2) : nullptr;
        for (std::size_t m = 0; m < mods; ++m)
            for (std::size_t o = 0; o < mods; ++o)
                if (m != o)
                    total += info_nce(shared_block(vals, g, m, views.shared_dim),
                                      shared_block(vals, g, o, views.shared_dim), temperature,
                                      scale / static_cast<double>(terms));
    }
    return total / static_cast<double>(terms);
}

double private_space_loss(const FocalViews& views, double temperature, FocalGradients* grads, double scale)
{
    check_views(views);
    ensure_grads(views, grads);
    const std::size_t mods = views.view1.size();
    const std::size_t terms = 2 * mods;
    auto* g1 = grads ? &grads->view1 : nullptr;
    auto* g2 = grads ? &grads->view2 : nullptr;
    double total = 0.0;
    for (std::size_t m = 0; m < mods; ++m) {
        const Block a = private_block(views.view1, g1, m, views.shared_dim);
        const Block b = private_block(views.view2, g2, m, views.shared_dim);
        total += info_nce(a, b, temperature, scale / static_cast<double>(terms));
        total += info_nce(b, a, temperature, scale / static_cast<double>(terms));
    }
    return total / static_cast<double>(terms);
}

double orthogonality_penalty(const FocalViews& views, FocalGradients* grads, double scale)
{
    check_views(views);
    ensure_grads(views, grads);
    const std::size_t mods = views.view1.size();
    const std::size_t ds = views.shared_dim;
    if (2 * ds != views.view1.front().shape[1])
        fail(ErrorCode::DimMismatch, "orthogonality needs shared_dim == embedding_dim - shared_dim");
    std::vector<std::pair<Block, Block>> pairs;
    for (int v = 0; v < 2; ++v) {
        const auto& vals = v == 0 ? views.view1 : views.view2;
        auto* g = grads ? (v == 0 ? &grads->view1 : &grads->view2) : nullptr;
        for (std::size_t m = 0; m < mods; ++m) {
            for (std::size_t o = m + 1; o < mods; ++o)
                pairs.emplace_back(private_block(vals, g, m, ds), private_block(vals, g, o, ds));
            pairs.emplace_back(private_block(vals, g, m, ds), shared_block(vals, g, m, ds));
        }
    }
    return mean_squared_cosine(pairs, scale);
}

LossBreakdown focal_loss(const FocalViews& views, const TrainConfig& config, FocalGradients* grads)
{
    LossBreakdown out;
    out.weights = config.loss_weights;
    const auto& w = config.loss_weights;
    out.shared_term = shared_space_loss(views, config.temperature, grads, w.shared);
    out.private_term = private_space_loss(views, config.temperature, grads, w.private_);
    out.orth_term = orthogonality_penalty(views, grads, w.orth);
    out.total = w.shared * out.shared_term + w.private_ * out.private_term + w.orth * out.orth_term;
    if (!std::isfinite(out.total)) fail(ErrorCode::NonFinite, "focal loss is not finite");
    return out;
}

// ---------------------------------------------------------------------------

namespace {

nn::Tensor stack_rows(std::span<const std::vector<double>> rows)
{
    if (rows.empty()) fail(ErrorCode::EmptyCollection, "no vectors");
    const std::size_t w = rows.front().size();
    nn::Tensor t({rows.size(), w});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != w) fail(ErrorCode::DimMismatch, "vectors of different lengths");
        std::copy(rows[r].begin(), rows[r].end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * w));
    }
    return t;
}

std::vector<nn::Tensor> stack_bundles(std::span<const EmbeddingBundle> bundles)
{
    if (bundles.empty()) fail(ErrorCode::EmptyCollection, "no embedding bundles");
    const EmbeddingBundle& first = bundles.front();
    std::vector<nn::Tensor> out;
    for (std::size_t m = 0; m < first.embeddings.size(); ++m) {
        nn::Tensor t({bundles.size(), first.dim});
        for (std::size_t b = 0; b < bundles.size(); ++b) {
            bundles[b].validate();
            if (bundles[b].dim != first.dim || bundles[b].shared_dim != first.shared_dim ||
                bundles[b].modalities != first.modalities)
                fail(ErrorCode::ShapeMismatch, "bundles disagree in layout");
            std::copy(bundles[b].embeddings[m].begin(), bundles[b].embeddings[m].end(),
                      t.data.begin() + static_cast<std::ptrdiff_t>(b * first.dim));
        }
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace

double info_nce(std::span<const std::vector<double>> anchors, std::span<const std::vector<double>> positives,
                double temperature)
{
    const nn::Tensor a = stack_rows(anchors);
    const nn::Tensor p = stack_rows(positives);
    return info_nce(Block{&a, nullptr, 0, a.shape[1]}, Block{&p, nullptr, 0, p.shape[1]}, temperature);
}

FocalViews make_views(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2)
{
    if (view1.size() != view2.size()) fail(ErrorCode::ShapeMismatch, "views hold different batch sizes");
    FocalViews v;
    v.view1 = stack_bundles(view1);
    v.view2 = stack_bundles(view2);
    v.shared_dim = view1.front().shared_dim;
    return v;
}

double shared_space_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                         double temperature)
{
    return shared_space_loss(make_views(view1, view2), temperature);
}

double private_space_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                          double temperature)
{
    return private_space_loss(make_views(view1, view2), temperature);
}

double orthogonality_penalty(std::span<const EmbeddingBundle> bundles)
{
    // One batch: the same matrices serve as both views, which leaves the mean unchanged.
    return orthogonality_penalty(make_views(bundles, bundles));
}

LossBreakdown focal_loss(std::span<const EmbeddingBundle> view1, std::span<const EmbeddingBundle> view2,
                         const TrainConfig& config)
{
    return focal_loss(make_views(view1, view2), config);
}

} // namespace vibefm
