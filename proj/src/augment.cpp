#include "vibefm/augment.hpp"

#include "vibefm/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace vibefm {

namespace {

constexpr std::array<std::pair<std::string_view, AugmentOp>, 8> kOpNames{{
    {"permutation", AugmentOp::Permutation},
    {"negation", AugmentOp::Negation},
    {"time_warp", AugmentOp::TimeWarp},
    {"horizontal_flip", AugmentOp::HorizontalFlip},
    {"magnitude_warp", AugmentOp::MagnitudeWarp},
    {"scaling", AugmentOp::Scaling},
    {"mixup", AugmentOp::Mixup},
    {"phase_shift", AugmentOp::PhaseShift},
}};

constexpr std::array<AugmentOp, 7> kPretrainOps{
    AugmentOp::Permutation, AugmentOp::Negation, AugmentOp::TimeWarp,   AugmentOp::HorizontalFlip,
    AugmentOp::MagnitudeWarp, AugmentOp::Scaling, AugmentOp::PhaseShift,
};

constexpr std::array<AugmentOp, 2> kLabeledOps{AugmentOp::Mixup, AugmentOp::PhaseShift};

constexpr double kMinWarpSpeed = 1e-3;

double interpolate(std::span<const double> x, double position)
{
    const double clamped = std::clamp(position, 0.0, static_cast<double>(x.size() - 1));
    const auto lo = static_cast<std::size_t>(std::floor(clamped));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    const double frac = clamped - static_cast<double>(lo);
    return x[lo] + frac * (x[hi] - x[lo]);
}

std::vector<std::size_t> divisors_in_range(std::size_t n, int lo, int hi)
{
    std::vector<std::size_t> out;
    for (int k = std::max(lo, 2); k <= hi; ++k)
        if (static_cast<std::size_t>(k) <= n && n % static_cast<std::size_t>(k) == 0) out.push_back(static_cast<std::size_t>(k));
    return out;
}

} // namespace

std::string_view to_string(AugmentOp op)
{
    for (const auto& [name, value] : kOpNames)
        if (value == op) return name;
    return "?";
}

AugmentOp parse_augment_op(std::string_view text)
{
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) {
        return c == ' ' ? '_' : static_cast<char>(std::tolower(c));
    });
    for (const auto& [name, value] : kOpNames)
        if (name == lowered) return value;
    fail(ErrorCode::InvalidArgument, "unknown augmentation '" + std::string(text) + "'");
}

bool is_frequency_domain(AugmentOp op) { return op == AugmentOp::PhaseShift; }

std::span<const AugmentOp> allowed_ops(Stage stage)
{
    if (stage == Stage::Pretrain) return kPretrainOps;
    return kLabeledOps;
}

bool AugmentationPlan::contains(AugmentOp op) const
{
    return std::find(time_domain_ops.begin(), time_domain_ops.end(), op) != time_domain_ops.end() ||
           std::find(freq_domain_ops.begin(), freq_domain_ops.end(), op) != freq_domain_ops.end();
}

std::vector<AugmentOp> parse_augment_list(std::span<const std::string> names)
{
    std::vector<AugmentOp> out;
    for (const auto& n : names) out.push_back(parse_augment_op(n));
    return out;
}

AugmentationPlan sample_plan(Stage stage, std::uint64_t rng_seed, const AugmentParams& params,
                             std::span<const AugmentOp> enabled)
{
    const auto row = allowed_ops(stage);
    for (AugmentOp op : enabled)
        if (std::find(row.begin(), row.end(), op) == row.end())
            fail(ErrorCode::InvalidArgument,
                 "augmentation '" + std::string(to_string(op)) + "' is not allowed in stage " + std::string(to_string(stage)));

    AugmentationPlan plan;
    plan.stage = stage;
    plan.params = params;
    plan.rng_seed = rng_seed;
    Rng rng(derive_seed(rng_seed, "plan"));
    for (AugmentOp op : row) {
        // Draw for every row entry so the stream does not depend on `enabled`.
        const bool take = rng.bernoulli(params.op_probability);
        const bool allowed = enabled.empty() || std::find(enabled.begin(), enabled.end(), op) != enabled.end();
        if (!take || !allowed) continue;
        (is_frequency_domain(op) ? plan.freq_domain_ops : plan.time_domain_ops).push_back(op);
    }
    return plan;
}

std::vector<double> negate(std::span<const double> x)
{
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [](double v) { return -v; });
    return out;
}

std::vector<double> scaling(std::span<const double> x, double factor)
{
    if (!(factor > 0.0)) fail(ErrorCode::NonPositiveFactor, "scaling factor must be positive");
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [factor](double v) { return v * factor; });
    return out;
}

std::vector<double> horizontal_flip(std::span<const double> x) { return {x.rbegin(), x.rend()}; }

std::vector<double> permute_chunks(std::span<const double> x, std::span<const std::size_t> order)
{
    const std::size_t k = order.size();
    if (k < 2 || k > x.size()) fail(ErrorCode::InvalidArgument, "permutation needs 2 <= k <= length");
    if (x.size() % k != 0)
        fail(ErrorCode::IndivisibleLength, std::to_string(x.size()) + " samples not divisible into " +
                                               std::to_string(k) + " chunks");
    std::vector<std::size_t> check(order.begin(), order.end());
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < k; ++i)
        if (check[i] != i) fail(ErrorCode::InvalidArgument, "chunk order is not a permutation");

    const std::size_t chunk = x.size() / k;
    std::vector<double> out;
    out.reserve(x.size());
    for (std::size_t c : order) out.insert(out.end(), x.begin() + c * chunk, x.begin() + (c + 1) * chunk);
    return out;
}

std::vector<double> permutation(std::span<const double> x, std::size_t k, Rng& rng)
{
    if (k < 2 || k > x.size()) fail(ErrorCode::InvalidArgument, "permutation needs 2 <= k <= length");
    if (x.size() % k != 0)
        fail(ErrorCode::IndivisibleLength, std::to_string(x.size()) + " samples not divisible into " +
                                               std::to_string(k) + " chunks");
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    return permute_chunks(x, order);
}

std::vector<double> smooth_curve(std::span<const double> knots, std::size_t length)
{
    std::vector<double> out(length);
    if (knots.empty()) return out;
    if (knots.size() == 1 || length == 1) {
        std::fill(out.begin(), out.end(), knots[0]);
        return out;
    }
    const std::size_t n = knots.size();
    std::vector<double> tangent(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double prev = knots[j == 0 ? 0 : j - 1];
        const double next = knots[j + 1 == n ? n - 1 : j + 1];
        tangent[j] = (next - prev) / ((j == 0 || j + 1 == n) ? 1.0 : 2.0);
    }
    const double span = static_cast<double>(length - 1) / static_cast<double>(n - 1);
    for (std::size_t t = 0; t < length; ++t) {
        const double pos = static_cast<double>(t) / span;
        const std::size_t j = std::min(static_cast<std::size_t>(pos), n - 2);
        const double u = pos - static_cast<double>(j);
        const double u2 = u * u;
        const double u3 = u2 * u;
        out[t] = (2 * u3 - 3 * u2 + 1) * knots[j] + (u3 - 2 * u2 + u) * tangent[j] + (-2 * u3 + 3 * u2) * knots[j + 1] +
                 (u3 - u2) * tangent[j + 1];
    }
    return out;
}

std::vector<double> time_warp(std::span<const double> x, int n_knots, double sigma, Rng& rng)
{
    if (n_knots < 2) fail(ErrorCode::InvalidArgument, "time_warp needs at least 2 knots");
    if (!(sigma > 0.0)) fail(ErrorCode::InvalidArgument, "time_warp sigma must be positive");
    const std::size_t len = x.size();
    if (len < 2) return {x.begin(), x.end()};

    std::vector<double> speed_knots(static_cast<std::size_t>(n_knots) + 2);
    for (double& v : speed_knots) v = 1.0 + rng.normal(0.0, sigma);
    std::vector<double> speed = smooth_curve(speed_knots, len);
    for (double& s : speed) s = std::max(s, kMinWarpSpeed);

    // Integrate speed into a monotone warp with both endpoints pinned.
    std::vector<double> warp(len, 0.0);
    for (std::size_t i = 1; i < len; ++i) warp[i] = warp[i - 1] + 0.5 * (speed[i - 1] + speed[i]);
    const double scale = static_cast<double>(len - 1) / warp[len - 1];
    for (double& w : warp) w *= scale;
    warp[len - 1] = static_cast<double>(len - 1);

    std::vector<double> out(len);
    for (std::size_t i = 0; i < len; ++i) out[i] = interpolate(x, warp[i]);
    return out;
}

std::vector<double> magnitude_warp(std::span<const double> x, int n_knots, double sigma, Rng& rng)
{
    if (n_knots < 2) fail(ErrorCode::InvalidArgument, "magnitude_warp needs at least 2 knots");
    if (!(sigma > 0.0)) fail(ErrorCode::InvalidArgument, "magnitude_warp sigma must be positive");
    std::vector<double> knots(static_cast<std::size_t>(n_knots) + 2);
    for (double& v : knots) v = rng.normal(1.0, sigma);
    const std::vector<double> envelope = smooth_curve(knots, x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * envelope[i];
    return out;
}

Spectrogram phase_shift(const Spectrogram& spec, double theta)
{
    Spectrogram out = spec;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (std::size_t j = 0; j < spec.size(); ++j) {
        out.re[j] = spec.re[j] * c - spec.im[j] * s;
        out.im[j] = spec.re[j] * s + spec.im[j] * c;
    }
    return out;
}

LabeledExample mixup(const LabeledExample& a, const LabeledExample& b, double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidArgument, "mixup lambda must be in [0, 1]");
    if (a.soft_label.size() != b.soft_label.size() || a.modalities.size() != b.modalities.size())
        fail(ErrorCode::ShapeMismatch, "mixup partners differ in label width or modality set");
    LabeledExample out;
    for (const auto& [name, sa] : a.modalities) {
        auto it = b.modalities.find(name);
        if (it == b.modalities.end() || it->second.channels != sa.channels || it->second.samples != sa.samples)
            fail(ErrorCode::ShapeMismatch, "mixup partners differ in modality '" + name + "'");
        Signal mixed(sa.channels, sa.samples);
        for (std::size_t i = 0; i < sa.data.size(); ++i)
            mixed.data[i] = lambda * sa.data[i] + (1.0 - lambda) * it->second.data[i];
        out.modalities.emplace(name, std::move(mixed));
    }
    out.soft_label.resize(a.soft_label.size());
    for (std::size_t i = 0; i < a.soft_label.size(); ++i)
        out.soft_label[i] = lambda * a.soft_label[i] + (1.0 - lambda) * b.soft_label[i];
    return out;
}

double sample_mixup_lambda(Rng& rng, double alpha) { return rng.beta(alpha, alpha); }

Signal apply_time_ops(const Signal& signal, const AugmentationPlan& plan, Rng& rng, std::vector<AugmentOp>* audit)
{
    const AugmentParams& p = plan.params;
    Signal out = signal;
    for (AugmentOp op : plan.time_domain_ops) {
        if (op == AugmentOp::Mixup) continue;
        // Draw op parameters once per modality so all channels move together.
        std::vector<std::size_t> order;
        double factor = 1.0;
        std::uint64_t channel_seed = 0;
        if (op == AugmentOp::Permutation) {
            const auto ks = divisors_in_range(out.samples, p.permutation_min_k, p.permutation_max_k);
            if (ks.empty()) continue;
            const std::size_t k = ks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(ks.size()) - 1))];
            order.resize(k);
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order.begin(), order.end());
        } else if (op == AugmentOp::Scaling) {
            factor = rng.uniform(p.scaling_min, p.scaling_max);
        } else if (op == AugmentOp::TimeWarp || op == AugmentOp::MagnitudeWarp) {
            channel_seed = rng.engine()();
        }
        for (std::size_t c = 0; c < out.channels; ++c) {
            auto x = out.channel(c);
            std::vector<double> y;
            switch (op) {
            case AugmentOp::Permutation: y = permute_chunks(x, order); break;
            case AugmentOp::Negation: y = negate(x); break;
            case AugmentOp::HorizontalFlip: y = horizontal_flip(x); break;
            case AugmentOp::Scaling: y = scaling(x, factor); break;
            case AugmentOp::TimeWarp: {
                Rng local(channel_seed);
                y = time_warp(x, p.warp_knots, p.warp_sigma, local);
                break;
            }
            case AugmentOp::MagnitudeWarp: {
                Rng local(channel_seed);
                y = magnitude_warp(x, p.magnitude_knots, p.magnitude_sigma, local);
                break;
            }
            default: fail(ErrorCode::InvalidArgument, "not a time-domain op: " + std::string(to_string(op)));
            }
            std::copy(y.begin(), y.end(), x.begin());
        }
        if (audit) audit->push_back(op);
    }
    return out;
}

Spectrogram apply_freq_ops(const Spectrogram& spec, const AugmentationPlan& plan, Rng& rng, std::vector<AugmentOp>* audit)
{
    Spectrogram out = spec;
    for (AugmentOp op : plan.freq_domain_ops) {
        if (op != AugmentOp::PhaseShift) fail(ErrorCode::InvalidArgument, "not a frequency-domain op");
        out = phase_shift(out, rng.uniform(-std::numbers::pi, std::numbers::pi));
        if (audit) audit->push_back(op);
    }
    return out;
}

} // namespace vibefm
