#include "vibefm/encoders.hpp"

#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace vibefm {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

Var uniform_param(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& name)
{
    Rng rng(derive_seed(seed, name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return Var::parameter(std::move(t));
}

Var filled_param(Shape shape, double value) { return Var::parameter(Tensor(std::move(shape), value)); }

const Var& checked(const Var& v, const std::string& where)
{
    if (!nn::all_finite(v.data())) fail(ErrorCode::NonFiniteActivation, "non-finite activation after " + where);
    return v;
}

nn::Index make_index(std::vector<std::int64_t> values)
{
    return std::make_shared<const std::vector<std::int64_t>>(std::move(values));
}

// ---------------------------------------------------------------------------
// DeepSense-style: per-interval convolutions over (frequency x plane), then a
// stacked GRU over the interval axis; the last hidden state is projected to D.

class DeepSenseEncoder final : public ModalityEncoder {
public:
    DeepSenseEncoder(const EncoderConfig& config, const ModalitySpec& spec)
        : name_(spec.name), intervals_(static_cast<std::size_t>(spec.num_intervals)), bins_(spec.bins()),
          planes_(2 * static_cast<std::size_t>(spec.channels))
    {
        const auto& p = config.deepsense;
        const bool wide = static_cast<int>(bins_) >= p.wide_bins;
        const auto& kernels = wide ? p.wide_kernels : p.narrow_kernels;
        const auto& strides = wide ? p.wide_strides : p.narrow_strides;
        if (kernels.size() != p.conv_channels.size() || strides.size() != p.conv_channels.size())
            fail(ErrorCode::InvalidArgument, "deepsense conv channel, kernel and stride lists differ in length");

        std::size_t length = bins_;
        std::size_t cin = planes_;
        for (std::size_t l = 0; l < p.conv_channels.size(); ++l) {
            Conv conv;
            conv.kernel = static_cast<std::size_t>(kernels[l]);
            conv.stride = static_cast<std::size_t>(strides[l]);
            const auto cout = static_cast<std::size_t>(p.conv_channels[l]);
            if (length < conv.kernel)
                fail(ErrorCode::InvalidArgument, "modality '" + spec.name + "': conv " + std::to_string(l) +
                                                     " kernel longer than its input (" + std::to_string(length) + ")");
            const std::string base = spec.name + ".conv" + std::to_string(l);
            conv.w = uniform_param({conv.kernel * cin, cout}, conv.kernel * cin, config.seed, base + ".w");
            conv.b = uniform_param({cout}, conv.kernel * cin, config.seed, base + ".b");
            convs_.push_back(std::move(conv));
            length = (length - convs_.back().kernel) / convs_.back().stride + 1;
            cin = cout;
        }
        features_ = length * cin;

        hidden_ = static_cast<std::size_t>(p.gru_hidden);
        std::size_t in = features_;
        for (int l = 0; l < p.gru_layers; ++l) {
            const std::string base = spec.name + ".gru" + std::to_string(l);
            Gru g;
            g.w_ih = uniform_param({in, 3 * hidden_}, hidden_, config.seed, base + ".w_ih");
            g.w_hh = uniform_param({hidden_, 3 * hidden_}, hidden_, config.seed, base + ".w_hh");
            g.b_ih = uniform_param({3 * hidden_}, hidden_, config.seed, base + ".b_ih");
            g.b_hh = uniform_param({3 * hidden_}, hidden_, config.seed, base + ".b_hh");
            grus_.push_back(std::move(g));
            in = hidden_;
        }
        const auto d = static_cast<std::size_t>(config.embedding_dim);
        out_w_ = uniform_param({in, d}, in, config.seed, spec.name + ".out.w");
        out_b_ = uniform_param({d}, in, config.seed, spec.name + ".out.b");
    }

    Var forward(const Var& x) const override
    {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] != intervals_ || s[2] != bins_ || s[3] != planes_)
            fail(ErrorCode::ShapeMismatch, "deepsense '" + name_ + "' expects [B, " + std::to_string(intervals_) + ", " +
                                               std::to_string(bins_) + ", " + std::to_string(planes_) + "], got " +
                                               nn::shape_string(s));
        const std::size_t batch = s[0];
        Var h = nn::reshape(x, {batch * intervals_, bins_, planes_});
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            h = nn::relu(nn::conv1d(h, convs_[l].w, convs_[l].b, convs_[l].kernel, convs_[l].stride));
            checked(h, name_ + " conv" + std::to_string(l));
        }
        h = nn::reshape(h, {batch, intervals_, features_});
        std::size_t width = features_;
        for (std::size_t l = 0; l < grus_.size(); ++l) {
            h = nn::gru(h, grus_[l].w_ih, grus_[l].w_hh, grus_[l].b_ih, grus_[l].b_hh);
            checked(h, name_ + " gru" + std::to_string(l));
            width = hidden_;
        }
        Var last = nn::slice_last(nn::reshape(h, {batch, intervals_ * width}), (intervals_ - 1) * width,
                                  intervals_ * width);
        return checked(nn::linear(last, out_w_, out_b_), name_ + " projection");
    }

    std::vector<NamedParam> parameters() const override
    {
        std::vector<NamedParam> out;
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            const std::string base = name_ + ".conv" + std::to_string(l);
            out.push_back({base + ".w", convs_[l].w});
            out.push_back({base + ".b", convs_[l].b});
        }
        for (std::size_t l = 0; l < grus_.size(); ++l) {
            const std::string base = name_ + ".gru" + std::to_string(l);
            out.push_back({base + ".w_ih", grus_[l].w_ih});
            out.push_back({base + ".w_hh", grus_[l].w_hh});
            out.push_back({base + ".b_ih", grus_[l].b_ih});
            out.push_back({base + ".b_hh", grus_[l].b_hh});
        }
        out.push_back({name_ + ".out.w", out_w_});
        out.push_back({name_ + ".out.b", out_b_});
        return out;
    }

private:
    struct Conv {
        std::size_t kernel = 0, stride = 0;
        Var w, b;
    };
    struct Gru {
        Var w_ih, w_hh, b_ih, b_hh;
    };

    std::string name_;
    std::size_t intervals_, bins_, planes_;
    std::size_t features_ = 0;
    std::size_t hidden_ = 0;
    std::vector<Conv> convs_;
    std::vector<Gru> grus_;
    Var out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Swin-style: the spectrogram becomes an intervals x freq_patches token grid;
// blocks attend inside non-overlapping windows, odd blocks on a grid rolled
// by half a window, and 2x2 patch merging halves the grid between stages.
// Every token rearrangement is a precomputed gather.

struct SwinLayout {
    std::size_t grid_h = 0, grid_w = 0, dim = 0, window = 0, shift = 0, windows = 0;
    nn::Index partition; // [N, C] -> [nW, T, C]
    nn::Index q, k, v;   // [nW, T, 3C] -> [nW, heads, T, dh] each
    nn::Index restore;   // [nW, heads, T, dh] -> [N, C]
    Tensor mask;         // [nW, T, T]
};

} // namespace

std::vector<std::vector<std::size_t>> swin_windows(std::size_t gh, std::size_t gw, std::size_t window, bool shifted)
{
    const std::size_t ws = std::min({window, gh, gw});
    if (ws == 0 || gh % ws != 0 || gw % ws != 0)
        fail(ErrorCode::ShapeMismatch, "swin grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                                           " is not divisible by window " + std::to_string(ws));
    const std::size_t shift = (shifted && ws < std::min(gh, gw)) ? ws / 2 : 0;
    const std::size_t nww = gw / ws;
    std::vector<std::vector<std::size_t>> out((gh / ws) * nww, std::vector<std::size_t>(ws * ws));
    for (std::size_t w = 0; w < out.size(); ++w)
        for (std::size_t t = 0; t < ws * ws; ++t) {
            const std::size_t hs = (w / nww) * ws + t / ws;
            const std::size_t vs = (w % nww) * ws + t % ws;
            out[w][t] = ((hs + shift) % gh) * gw + (vs + shift) % gw;
        }
    return out;
}

namespace {

SwinLayout make_layout(std::size_t gh, std::size_t gw, std::size_t dim, std::size_t heads, std::size_t window,
                       bool shifted)
{
    SwinLayout L;
    L.grid_h = gh;
    L.grid_w = gw;
    L.dim = dim;
    L.window = std::min({window, gh, gw});
    if (gh % L.window != 0 || gw % L.window != 0)
        fail(ErrorCode::ShapeMismatch, "swin grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                                           " is not divisible by window " + std::to_string(L.window));
    L.shift = (shifted && L.window < std::min(gh, gw)) ? L.window / 2 : 0;
    const std::size_t ws = L.window, nwh = gh / ws, nww = gw / ws, tokens = ws * ws, dh = dim / heads;
    L.windows = nwh * nww;

    // Window w, position t covers rolled coordinate (hs, vs); the source token
    // sits at (hs + shift, vs + shift) modulo the grid.
    const auto windows = swin_windows(gh, gw, window, shifted);
    std::vector<std::int64_t> partition(L.windows * tokens * dim);
    std::vector<std::int64_t> restore(gh * gw * dim);
    for (std::size_t w = 0; w < L.windows; ++w)
        for (std::size_t t = 0; t < tokens; ++t) {
            const std::size_t src = windows[w][t];
            for (std::size_t c = 0; c < dim; ++c) {
                partition[(w * tokens + t) * dim + c] = static_cast<std::int64_t>(src * dim + c);
                const std::size_t h = c / dh, d = c % dh;
                restore[src * dim + c] = static_cast<std::int64_t>(((w * heads + h) * tokens + t) * dh + d);
            }
        }
    L.partition = make_index(std::move(partition));
    L.restore = make_index(std::move(restore));

    for (std::size_t part = 0; part < 3; ++part) {
        std::vector<std::int64_t> idx(heads * tokens * dh);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t d = 0; d < dh; ++d)
                    idx[(h * tokens + t) * dh + d] = static_cast<std::int64_t>(t * 3 * dim + part * dim + h * dh + d);
        (part == 0 ? L.q : part == 1 ? L.k : L.v) = make_index(std::move(idx));
    }

    L.mask = Tensor({L.windows, tokens, tokens});
    if (L.shift > 0) {
        auto region = [&](std::size_t pos, std::size_t extent) -> int {
            return pos < extent - ws ? 0 : (pos < extent - L.shift ? 1 : 2);
        };
        for (std::size_t w = 0; w < L.windows; ++w) {
            std::vector<int> label(tokens);
            for (std::size_t t = 0; t < tokens; ++t) {
                const std::size_t hs = (w / nww) * ws + t / ws;
                const std::size_t vs = (w % nww) * ws + t % ws;
                label[t] = region(hs, gh) * 3 + region(vs, gw);
            }
            for (std::size_t i = 0; i < tokens; ++i)
                for (std::size_t j = 0; j < tokens; ++j)
                    if (label[i] != label[j]) L.mask.data[(w * tokens + i) * tokens + j] = -100.0;
        }
    }
    return L;
}

class SwinEncoder final : public ModalityEncoder {
public:
    SwinEncoder(const EncoderConfig& config, const ModalitySpec& spec)
        : name_(spec.name), intervals_(static_cast<std::size_t>(spec.num_intervals)), bins_(spec.bins()),
          planes_(2 * static_cast<std::size_t>(spec.channels))
    {
        const auto& p = config.swin;
        heads_ = static_cast<std::size_t>(p.heads);
        const auto seed = config.seed;
        const auto fp = static_cast<std::size_t>(p.freq_patches);
        const std::size_t pf = (bins_ + fp - 1) / fp;
        patch_features_ = pf * planes_;

        std::vector<std::int64_t> embed(intervals_ * fp * patch_features_);
        for (std::size_t i = 0; i < intervals_; ++i)
            for (std::size_t j = 0; j < fp; ++j)
                for (std::size_t fl = 0; fl < pf; ++fl)
                    for (std::size_t q = 0; q < planes_; ++q) {
                        const std::size_t f = j * pf + fl;
                        embed[((i * fp + j) * pf + fl) * planes_ + q] =
                            f < bins_ ? static_cast<std::int64_t>((i * bins_ + f) * planes_ + q) : -1;
                    }
        patch_index_ = make_index(std::move(embed));

        std::size_t dim = static_cast<std::size_t>(p.embed_dim);
        embed_w_ = uniform_param({patch_features_, dim}, patch_features_, seed, name_ + ".embed.w");
        embed_b_ = uniform_param({dim}, patch_features_, seed, name_ + ".embed.b");
        embed_g_ = filled_param({dim}, 1.0);
        embed_beta_ = filled_param({dim}, 0.0);

        std::size_t gh = intervals_, gw = fp;
        for (std::size_t s = 0; s < p.depths.size(); ++s) {
            if (s > 0) {
                if (gh % 2 != 0 || gw % 2 != 0)
                    fail(ErrorCode::ShapeMismatch, "swin patch merging needs an even grid, got " + std::to_string(gh) +
                                                       "x" + std::to_string(gw));
                Merge m;
                m.grid_h = gh;
                m.grid_w = gw;
                m.dim = dim;
                std::vector<std::int64_t> idx(gh / 2 * gw / 2 * 4 * dim);
                for (std::size_t i = 0; i < gh / 2; ++i)
                    for (std::size_t j = 0; j < gw / 2; ++j)
                        for (std::size_t k = 0; k < 4; ++k)
                            for (std::size_t c = 0; c < dim; ++c) {
                                const std::size_t r = 2 * i + (k & 1), col = 2 * j + (k >> 1);
                                idx[((i * (gw / 2) + j) * 4 + k) * dim + c] =
                                    static_cast<std::int64_t>((r * gw + col) * dim + c);
                            }
                m.index = make_index(std::move(idx));
                const std::string base = name_ + ".merge" + std::to_string(s);
                m.ln_g = filled_param({4 * dim}, 1.0);
                m.ln_b = filled_param({4 * dim}, 0.0);
                m.w = uniform_param({4 * dim, 2 * dim}, 4 * dim, seed, base + ".w");
                merges_.push_back(std::move(m));
                gh /= 2;
                gw /= 2;
                dim *= 2;
            }
            if (dim % heads_ != 0) fail(ErrorCode::InvalidArgument, "swin width not divisible by heads");
            for (int b = 0; b < p.depths[s]; ++b) {
                Block blk;
                blk.stage = s;
                blk.layout = make_layout(gh, gw, dim, heads_, static_cast<std::size_t>(p.window), b % 2 == 1);
                const std::string base = name_ + ".s" + std::to_string(s) + ".b" + std::to_string(b);
                const std::size_t hidden = dim * static_cast<std::size_t>(p.mlp_ratio);
                blk.ln1_g = filled_param({dim}, 1.0);
                blk.ln1_b = filled_param({dim}, 0.0);
                blk.qkv_w = uniform_param({dim, 3 * dim}, dim, seed, base + ".qkv.w");
                blk.qkv_b = uniform_param({3 * dim}, dim, seed, base + ".qkv.b");
                blk.proj_w = uniform_param({dim, dim}, dim, seed, base + ".proj.w");
                blk.proj_b = uniform_param({dim}, dim, seed, base + ".proj.b");
                blk.ln2_g = filled_param({dim}, 1.0);
                blk.ln2_b = filled_param({dim}, 0.0);
                blk.fc1_w = uniform_param({dim, hidden}, dim, seed, base + ".fc1.w");
                blk.fc1_b = uniform_param({hidden}, dim, seed, base + ".fc1.b");
                blk.fc2_w = uniform_param({hidden, dim}, hidden, seed, base + ".fc2.w");
                blk.fc2_b = uniform_param({dim}, hidden, seed, base + ".fc2.b");
                blocks_.push_back(std::move(blk));
            }
        }
        final_dim_ = dim;
        final_g_ = filled_param({dim}, 1.0);
        final_b_ = filled_param({dim}, 0.0);
        const auto d = static_cast<std::size_t>(config.embedding_dim);
        out_w_ = uniform_param({dim, d}, dim, seed, name_ + ".out.w");
        out_b_ = uniform_param({d}, dim, seed, name_ + ".out.b");
    }

    Var forward(const Var& x) const override
    {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] != intervals_ || s[2] != bins_ || s[3] != planes_)
            fail(ErrorCode::ShapeMismatch, "swin '" + name_ + "' expects [B, " + std::to_string(intervals_) + ", " +
                                               std::to_string(bins_) + ", " + std::to_string(planes_) + "], got " +
                                               nn::shape_string(s));
        const std::size_t batch = s[0];
        const std::size_t tokens0 = patch_index_->size() / patch_features_;
        Var h = nn::gather(x, batch, patch_index_, {batch, tokens0, patch_features_});
        h = nn::layer_norm(nn::linear(h, embed_w_, embed_b_), embed_g_, embed_beta_);
        checked(h, name_ + " patch embedding");

        std::size_t stage = 0;
        for (const auto& blk : blocks_) {
            if (blk.stage != stage) {
                const Merge& m = merges_[blk.stage - 1];
                const std::size_t n = m.grid_h / 2 * m.grid_w / 2;
                h = nn::gather(h, batch, m.index, {batch, n, 4 * m.dim});
                h = nn::matmul(nn::layer_norm(h, m.ln_g, m.ln_b), m.w);
                checked(h, name_ + " patch merging");
                stage = blk.stage;
            }
            h = block_forward(h, blk, batch);
        }
        h = nn::layer_norm(h, final_g_, final_b_);
        return checked(nn::linear(nn::mean_middle(h), out_w_, out_b_), name_ + " projection");
    }

    std::vector<NamedParam> parameters() const override
    {
        std::vector<NamedParam> out{{name_ + ".embed.w", embed_w_},
                                    {name_ + ".embed.b", embed_b_},
                                    {name_ + ".embed.ln.g", embed_g_},
                                    {name_ + ".embed.ln.b", embed_beta_}};
        std::size_t merge = 0;
        std::size_t stage = 0, in_stage = 0;
        for (const auto& blk : blocks_) {
            if (blk.stage != stage) {
                const Merge& m = merges_[merge++];
                const std::string base = name_ + ".merge" + std::to_string(blk.stage);
                out.push_back({base + ".ln.g", m.ln_g});
                out.push_back({base + ".ln.b", m.ln_b});
                out.push_back({base + ".w", m.w});
                stage = blk.stage;
                in_stage = 0;
            }
            const std::string base = name_ + ".s" + std::to_string(blk.stage) + ".b" + std::to_string(in_stage++);
            out.push_back({base + ".ln1.g", blk.ln1_g});
            out.push_back({base + ".ln1.b", blk.ln1_b});
            out.push_back({base + ".qkv.w", blk.qkv_w});
            out.push_back({base + ".qkv.b", blk.qkv_b});
            out.push_back({base + ".proj.w", blk.proj_w});
            out.push_back({base + ".proj.b", blk.proj_b});
            out.push_back({base + ".ln2.g", blk.ln2_g});
            out.push_back({base + ".ln2.b", blk.ln2_b});
            out.push_back({base + ".fc1.w", blk.fc1_w});
            out.push_back({base + ".fc1.b", blk.fc1_b});
            out.push_back({base + ".fc2.w", blk.fc2_w});
            out.push_back({base + ".fc2.b", blk.fc2_b});
        }
        out.push_back({name_ + ".final.ln.g", final_g_});
        out.push_back({name_ + ".final.ln.b", final_b_});
        out.push_back({name_ + ".out.w", out_w_});
        out.push_back({name_ + ".out.b", out_b_});
        return out;
    }

private:
    struct Block {
        std::size_t stage = 0;
        SwinLayout layout;
        Var ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct Merge {
        std::size_t grid_h = 0, grid_w = 0, dim = 0;
        nn::Index index;
        Var ln_g, ln_b, w;
    };

    Var block_forward(const Var& x, const Block& blk, std::size_t batch) const
    {
        const SwinLayout& L = blk.layout;
        const std::size_t n = L.grid_h * L.grid_w, tokens = L.window * L.window, dim = L.dim, dh = dim / heads_;
        const std::size_t items = batch * L.windows, groups = items * heads_;

        Var h = nn::layer_norm(x, blk.ln1_g, blk.ln1_b);
        h = nn::gather(h, batch, L.partition, {items, tokens, dim});
        Var qkv = nn::linear(h, blk.qkv_w, blk.qkv_b);
        Var q = nn::gather(qkv, items, L.q, {groups, tokens, dh});
        Var k = nn::gather(qkv, items, L.k, {groups, tokens, dh});
        Var v = nn::gather(qkv, items, L.v, {groups, tokens, dh});
        Var scores = nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (L.shift > 0) scores = nn::add_window_mask(scores, L.mask, heads_);
        Var attn = nn::bmm(nn::softmax(scores), v);
        Var merged = nn::gather(attn, batch, L.restore, {batch, n, dim});
        Var y = nn::add(x, nn::linear(merged, blk.proj_w, blk.proj_b));
        checked(y, name_ + " window attention");

        Var m = nn::layer_norm(y, blk.ln2_g, blk.ln2_b);
        m = nn::linear(nn::relu(nn::linear(m, blk.fc1_w, blk.fc1_b)), blk.fc2_w, blk.fc2_b);
        return checked(nn::add(y, m), name_ + " mlp");
    }

    std::string name_;
    std::size_t intervals_, bins_, planes_;
    std::size_t heads_ = 1;
    std::size_t patch_features_ = 0;
    std::size_t final_dim_ = 0;
    nn::Index patch_index_;
    Var embed_w_, embed_b_, embed_g_, embed_beta_;
    std::vector<Block> blocks_;
    std::vector<Merge> merges_;
    Var final_g_, final_b_, out_w_, out_b_;
};

void require_positive(const std::vector<int>& values, const char* what)
{
    for (int v : values)
        if (v <= 0) fail(ErrorCode::InvalidArgument, std::string(what) + " must be positive");
}

} // namespace

// ---------------------------------------------------------------------------

void EncoderConfig::validate() const
{
    if (embedding_dim <= 0) fail(ErrorCode::InvalidArgument, "embedding_dim must be positive");
    if (shared_dim <= 0 || shared_dim >= embedding_dim)
        fail(ErrorCode::InvalidArgument, "shared_dim must satisfy 0 < shared_dim < embedding_dim");
    const auto& d = deepsense;
    require_positive(d.conv_channels, "deepsense conv_channels");
    require_positive(d.wide_kernels, "deepsense wide_kernels");
    require_positive(d.wide_strides, "deepsense wide_strides");
    require_positive(d.narrow_kernels, "deepsense narrow_kernels");
    require_positive(d.narrow_strides, "deepsense narrow_strides");
    if (d.gru_hidden <= 0 || d.gru_layers <= 0 || d.wide_bins <= 0)
        fail(ErrorCode::InvalidArgument, "deepsense gru_hidden, gru_layers and wide_bins must be positive");
    const auto& s = swin;
    if (s.freq_patches <= 0 || s.embed_dim <= 0 || s.heads <= 0 || s.window <= 0 || s.mlp_ratio <= 0 || s.depths.empty())
        fail(ErrorCode::InvalidArgument, "swin sizes must be positive");
    require_positive(s.depths, "swin depths");
    if (s.embed_dim % s.heads != 0) fail(ErrorCode::InvalidArgument, "swin embed_dim must be divisible by heads");
}

void to_json(nlohmann::json& j, const EncoderConfig& c)
{
    j = {{"kind", std::string(to_string(c.kind))},
         {"embedding_dim", c.embedding_dim},
         {"shared_dim", c.shared_dim},
         {"seed", c.seed},
         {"deepsense",
          {{"conv_channels", c.deepsense.conv_channels},
           {"wide_kernels", c.deepsense.wide_kernels},
           {"wide_strides", c.deepsense.wide_strides},
           {"narrow_kernels", c.deepsense.narrow_kernels},
           {"narrow_strides", c.deepsense.narrow_strides},
           {"wide_bins", c.deepsense.wide_bins},
           {"gru_hidden", c.deepsense.gru_hidden},
           {"gru_layers", c.deepsense.gru_layers}}},
         {"swin",
          {{"freq_patches", c.swin.freq_patches},
           {"embed_dim", c.swin.embed_dim},
           {"heads", c.swin.heads},
           {"window", c.swin.window},
           {"depths", c.swin.depths},
           {"mlp_ratio", c.swin.mlp_ratio}}}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c)
{
    c = EncoderConfig{};
    if (j.contains("kind")) c.kind = parse_encoder_kind(j.at("kind").get<std::string>());
    if (j.contains("embedding_dim")) j.at("embedding_dim").get_to(c.embedding_dim);
    if (j.contains("shared_dim")) j.at("shared_dim").get_to(c.shared_dim);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("deepsense")) {
        const auto& d = j.at("deepsense");
        auto& o = c.deepsense;
        if (d.contains("conv_channels")) d.at("conv_channels").get_to(o.conv_channels);
        if (d.contains("wide_kernels")) d.at("wide_kernels").get_to(o.wide_kernels);
        if (d.contains("wide_strides")) d.at("wide_strides").get_to(o.wide_strides);
        if (d.contains("narrow_kernels")) d.at("narrow_kernels").get_to(o.narrow_kernels);
        if (d.contains("narrow_strides")) d.at("narrow_strides").get_to(o.narrow_strides);
        if (d.contains("wide_bins")) d.at("wide_bins").get_to(o.wide_bins);
        if (d.contains("gru_hidden")) d.at("gru_hidden").get_to(o.gru_hidden);
        if (d.contains("gru_layers")) d.at("gru_layers").get_to(o.gru_layers);
    }
    if (j.contains("swin")) {
        const auto& s = j.at("swin");
        auto& o = c.swin;
        if (s.contains("freq_patches")) s.at("freq_patches").get_to(o.freq_patches);
        if (s.contains("embed_dim")) s.at("embed_dim").get_to(o.embed_dim);
        if (s.contains("heads")) s.at("heads").get_to(o.heads);
        if (s.contains("window")) s.at("window").get_to(o.window);
        if (s.contains("depths")) s.at("depths").get_to(o.depths);
        if (s.contains("mlp_ratio")) s.at("mlp_ratio").get_to(o.mlp_ratio);
    }
}

std::unique_ptr<ModalityEncoder> make_encoder(const EncoderConfig& config, const ModalitySpec& spec)
{
    config.validate();
    spec.validate();
    if (config.kind == EncoderKind::DeepSense) return std::make_unique<DeepSenseEncoder>(config, spec);
    return std::make_unique<SwinEncoder>(config, spec);
}

std::string_view to_string(HeadKind kind) { return kind == HeadKind::LinearProbe ? "LINEAR_PROBE" : "SUPERVISED_FUSION"; }

HeadKind parse_head_kind(std::string_view text)
{
    if (text == "LINEAR_PROBE" || text == "linear_probe") return HeadKind::LinearProbe;
    if (text == "SUPERVISED_FUSION" || text == "supervised_fusion") return HeadKind::SupervisedFusion;
    fail(ErrorCode::InvalidArgument, "unknown head kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(HeadKind kind, int input_dim, int num_classes, std::uint64_t seed, int fusion_hidden)
    : kind_(kind), input_dim_(input_dim), num_classes_(num_classes), hidden_(fusion_hidden)
{
    if (input_dim <= 0 || num_classes <= 0 || fusion_hidden <= 0)
        fail(ErrorCode::InvalidArgument, "classifier head sizes must be positive");
    const auto in = static_cast<std::size_t>(input_dim);
    if (kind_ == HeadKind::SupervisedFusion) {
        const auto hid = static_cast<std::size_t>(hidden_);
        w1_ = uniform_param({in, hid}, in, seed, "head.fusion.w");
        b1_ = uniform_param({hid}, in, seed, "head.fusion.b");
    }
    reset_output(seed);
}

void ClassifierHead::reset_output(std::uint64_t seed)
{
    const auto in = static_cast<std::size_t>(kind_ == HeadKind::SupervisedFusion ? hidden_ : input_dim_);
    const auto c = static_cast<std::size_t>(num_classes_);
    w2_ = uniform_param({in, c}, in, seed, "head.out.w");
    b2_ = uniform_param({c}, in, seed, "head.out.b");
}

Var ClassifierHead::forward(const Var& x) const
{
    if (x.shape().size() != 2 || x.shape()[1] != static_cast<std::size_t>(input_dim_))
        fail(ErrorCode::DimMismatch, "head expects [B, " + std::to_string(input_dim_) + "], got " +
                                         nn::shape_string(x.shape()));
    Var h = x;
    if (kind_ == HeadKind::SupervisedFusion) h = nn::relu(nn::linear(h, w1_, b1_));
    return nn::linear(h, w2_, b2_);
}

std::vector<NamedParam> ClassifierHead::output_parameters() const { return {{"head.out.w", w2_}, {"head.out.b", b2_}}; }

std::vector<NamedParam> ClassifierHead::parameters() const
{
    std::vector<NamedParam> out;
    if (kind_ == HeadKind::SupervisedFusion) {
        out.push_back({"head.fusion.w", w1_});
        out.push_back({"head.fusion.b", b1_});
    }
    for (auto& p : output_parameters()) out.push_back(std::move(p));
    return out;
}

// ---------------------------------------------------------------------------

MultimodalModel::MultimodalModel(EncoderConfig config, std::vector<ModalitySpec> specs, HeadKind head, int num_classes)
    : config_(std::move(config)), specs_(std::move(specs)),
      head_(head, static_cast<int>(specs_.size()) * config_.embedding_dim, num_classes, derive_seed(config_.seed, "head"))
{
    if (specs_.empty()) fail(ErrorCode::EmptyCollection, "model needs at least one modality");
    for (const auto& spec : specs_) encoders_.push_back(make_encoder(config_, spec));
}

void MultimodalModel::reset_head(HeadKind kind, std::uint64_t seed)
{
    reset_head(kind, seed, head_.num_classes());
}

void MultimodalModel::reset_head(HeadKind kind, std::uint64_t seed, int num_classes)
{
    head_ = ClassifierHead(kind, static_cast<int>(specs_.size()) * config_.embedding_dim, num_classes, seed);
}

std::vector<Var> MultimodalModel::encode(std::span<const Tensor> inputs) const
{
    if (inputs.size() != encoders_.size())
        fail(ErrorCode::ShapeMismatch, "expected " + std::to_string(encoders_.size()) + " modality inputs, got " +
                                           std::to_string(inputs.size()));
    std::vector<Var> out;
    out.reserve(inputs.size());
    for (std::size_t m = 0; m < inputs.size(); ++m) out.push_back(encoders_[m]->forward(Var::constant(inputs[m])));
    return out;
}

Var MultimodalModel::logits(std::span<const Var> embeddings) const
{
    if (embeddings.size() != encoders_.size())
        fail(ErrorCode::DimMismatch, "expected one embedding per modality");
    return head_.forward(nn::concat_last(embeddings));
}

std::vector<NamedParam> MultimodalModel::encoder_parameters() const
{
    std::vector<NamedParam> out;
    for (const auto& e : encoders_)
        for (auto& p : e->parameters()) out.push_back(std::move(p));
    return out;
}

std::vector<NamedParam> MultimodalModel::parameters() const
{
    auto out = encoder_parameters();
    for (auto& p : head_.parameters()) out.push_back(std::move(p));
    return out;
}

MultimodalModel MultimodalModel::clone() const
{
    MultimodalModel copy(config_, specs_, head_.kind(), head_.num_classes());
    copy.copy_weights_from(*this);
    return copy;
}

void MultimodalModel::copy_weights_from(const MultimodalModel& other)
{
    if (head_.kind() != other.head_.kind()) reset_head(other.head_.kind(), 0);
    auto mine = parameters();
    auto theirs = other.parameters();
    if (mine.size() != theirs.size()) fail(ErrorCode::ShapeMismatch, "models have different parameter lists");
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].name != theirs[i].name || mine[i].var.shape() != theirs[i].var.shape())
            fail(ErrorCode::ShapeMismatch, "parameter '" + mine[i].name + "' does not match '" + theirs[i].name + "'");
        mine[i].var.mutable_value() = theirs[i].var.value();
        mine[i].var.set_requires_grad(theirs[i].var.requires_grad());
    }
}

std::vector<NamedParam> trainable_parameters(const MultimodalModel& model, Stage stage)
{
    switch (stage) {
    case Stage::Pretrain: return model.encoder_parameters();
    case Stage::Supervised: return model.parameters();
    case Stage::Finetune: return model.head().parameters();
    case Stage::SupervisedFinetune: return model.head().output_parameters();
    }
    return {};
}

void set_trainable(MultimodalModel& model, Stage stage)
{
    for (auto& p : model.parameters()) {
        p.var.set_requires_grad(false);
        p.var.zero_grad();
    }
    for (auto& p : trainable_parameters(model, stage)) p.var.set_requires_grad(true);
}

std::size_t count_params(std::span<const NamedParam> params)
{
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.size();
    return n;
}

std::size_t count_trainable_params(const MultimodalModel& model, Stage stage)
{
    return count_params(trainable_parameters(model, stage));
}

// ---------------------------------------------------------------------------

Tensor pack_batch(std::span<const std::vector<Spectrogram>* const> samples, std::size_t modality,
                  const ModalitySpec& spec)
{
    const auto intervals = static_cast<std::size_t>(spec.num_intervals);
    const std::size_t bins = spec.bins();
    const auto channels = static_cast<std::size_t>(spec.channels);
    const std::size_t planes = 2 * channels;
    Tensor out({samples.size(), intervals, bins, planes});
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (modality >= samples[b]->size()) fail(ErrorCode::ShapeMismatch, "sample lacks modality " + spec.name);
        const Spectrogram& s = (*samples[b])[modality];
        if (s.modality != spec.name || s.channels != channels || s.intervals != intervals || s.bins != bins)
            fail(ErrorCode::ShapeMismatch, "spectrogram '" + s.modality + "' does not match spec '" + spec.name + "'");
        double* dst = out.data.data() + b * intervals * bins * planes;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < intervals; ++i)
                for (std::size_t k = 0; k < bins; ++k) {
                    const std::size_t at = (i * bins + k) * planes + 2 * c;
                    dst[at] = s.re[s.index(c, i, k)];
                    dst[at + 1] = s.im[s.index(c, i, k)];
                }
    }
    return out;
}

std::vector<Tensor> pack_batch(std::span<const std::vector<Spectrogram>* const> samples,
                               std::span<const ModalitySpec> specs)
{
    std::vector<Tensor> out;
    out.reserve(specs.size());
    for (std::size_t m = 0; m < specs.size(); ++m) out.push_back(pack_batch(samples, m, specs[m]));
    return out;
}

EmbeddingBundle encode(const std::vector<Spectrogram>& spectrograms, const MultimodalModel& model)
{
    for (std::size_t m = 0; m < spectrograms.size() && m < model.specs().size(); ++m)
        spectrograms[m].validate(model.specs()[m]);
    const std::vector<Spectrogram>* one[] = {&spectrograms};
    auto inputs = pack_batch(one, model.specs());
    auto embeddings = model.encode(inputs);

    EmbeddingBundle bundle;
    bundle.dim = static_cast<std::size_t>(model.config().embedding_dim);
    bundle.shared_dim = static_cast<std::size_t>(model.config().shared_dim);
    for (std::size_t m = 0; m < embeddings.size(); ++m) {
        bundle.modalities.push_back(model.specs()[m].name);
        bundle.embeddings.emplace_back(embeddings[m].data().begin(), embeddings[m].data().end());
    }
    bundle.validate();
    return bundle;
}

std::vector<double> classify(const EmbeddingBundle& bundle, const ClassifierHead& head)
{
    bundle.validate();
    Tensor x({1, bundle.dim * bundle.embeddings.size()});
    std::size_t at = 0;
    for (const auto& e : bundle.embeddings)
        for (double v : e) x.data[at++] = v;
    if (x.data.size() != static_cast<std::size_t>(head.input_dim()))
        fail(ErrorCode::DimMismatch, "bundle width " + std::to_string(x.data.size()) + " != head input " +
                                         std::to_string(head.input_dim()));
    auto y = head.forward(Var::constant(std::move(x)));
    return {y.data().begin(), y.data().end()};
}

std::vector<SplitEmbedding> split_embedding(const EmbeddingBundle& bundle)
{
    bundle.validate();
    std::vector<SplitEmbedding> out;
    for (std::size_t m = 0; m < bundle.embeddings.size(); ++m) {
        auto s = bundle.shared(m);
        auto p = bundle.private_part(m);
        out.push_back({{s.begin(), s.end()}, {p.begin(), p.end()}});
    }
    return out;
}

} // namespace vibefm
