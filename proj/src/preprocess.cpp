#include "vibefm/preprocess.hpp"

#include "vibefm/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <unordered_map>

namespace vibefm {

namespace {

constexpr double kTimeEps = 1e-9;

// FFTW planning is not thread-safe; execution with the new-array interface is.
class RealFftPlans {
public:
    static RealFftPlans& instance()
    {
        static RealFftPlans plans;
        return plans;
    }

    fftw_plan get(int n)
    {
        std::lock_guard lock(mutex_);
        auto it = plans_.find(n);
        if (it != plans_.end()) return it->second;
        std::vector<double> in(static_cast<std::size_t>(n));
        std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
        fftw_plan plan = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(n, plan);
        return plan;
    }

    RealFftPlans(const RealFftPlans&) = delete;
    RealFftPlans& operator=(const RealFftPlans&) = delete;

private:
    RealFftPlans() = default;
    ~RealFftPlans()
    {
        for (auto& [n, plan] : plans_) fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::unordered_map<int, fftw_plan> plans_;
};

double sorted_sum(std::vector<double> parts)
{
    std::sort(parts.begin(), parts.end());
    return std::accumulate(parts.begin(), parts.end(), 0.0);
}

} // namespace

std::size_t segment_count(double duration_s, double segment_seconds, double overlap_ratio)
{
    if (duration_s + kTimeEps < segment_seconds) return 0;
    const double stride = segment_seconds * (1.0 - overlap_ratio);
    return static_cast<std::size_t>(std::floor((duration_s - segment_seconds) / stride + kTimeEps)) + 1;
}

std::vector<Segment> segment_stream(const std::map<std::string, Signal>& waveforms,
                                    std::span<const ModalitySpec> specs, double segment_seconds,
                                    double overlap_ratio, const StreamInfo& info)
{
    if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0))
        fail(ErrorCode::InvalidArgument, "overlap_ratio must be in [0, 1)");
    if (!(segment_seconds > 0.0)) fail(ErrorCode::InvalidArgument, "segment_seconds must be positive");
    if (waveforms.empty()) fail(ErrorCode::EmptyCollection, "no waveforms to segment");

    double min_duration = std::numeric_limits<double>::infinity();
    double max_duration = 0.0;
    double max_period = 0.0;
    for (const auto& [name, signal] : waveforms) {
        const ModalitySpec& spec = find_spec(specs, name);
        const double duration = static_cast<double>(signal.samples) / spec.sample_rate_hz;
        min_duration = std::min(min_duration, duration);
        max_duration = std::max(max_duration, duration);
        max_period = std::max(max_period, 1.0 / spec.sample_rate_hz);
    }
    if (max_duration - min_duration > max_period + kTimeEps)
        fail(ErrorCode::MisalignedStreams, "modality durations differ by " + std::to_string(max_duration - min_duration) +
                                               " s, more than one sample period");
    if (min_duration + kTimeEps < segment_seconds)
        fail(ErrorCode::StreamTooShort, "stream of " + std::to_string(min_duration) + " s is shorter than one segment");

    const double stride = segment_seconds * (1.0 - overlap_ratio);
    const std::size_t count = segment_count(min_duration, segment_seconds, overlap_ratio);

    std::vector<Segment> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double start = static_cast<double>(k) * stride;
        Segment seg;
        seg.label = info.label;
        seg.domain = info.domain;
        seg.run_id = info.run_id;
        seg.start_time_s = start;
        bool complete = true;
        for (const auto& [name, signal] : waveforms) {
            const ModalitySpec& spec = find_spec(specs, name);
            const auto begin = static_cast<std::size_t>(std::llround(start * spec.sample_rate_hz));
            const auto length = static_cast<std::size_t>(std::llround(segment_seconds * spec.sample_rate_hz));
            if (begin + length > signal.samples) {
                complete = false;
                break;
            }
            Signal piece(signal.channels, length);
            for (std::size_t c = 0; c < signal.channels; ++c) {
                auto src = signal.channel(c).subspan(begin, length);
                std::copy(src.begin(), src.end(), piece.channel(c).begin());
            }
            seg.modalities.emplace(name, std::move(piece));
        }
        if (complete) out.push_back(std::move(seg));
    }
    return out;
}

Spectrogram interval_stft(const Signal& signal, const ModalitySpec& spec)
{
    const auto intervals = static_cast<std::size_t>(spec.num_intervals);
    if (intervals == 0 || signal.samples % intervals != 0)
        fail(ErrorCode::Indivisible, "modality '" + spec.name + "': " + std::to_string(signal.samples) +
                                         " samples not divisible by " + std::to_string(intervals) + " intervals");
    const std::size_t length = signal.samples / intervals;
    const std::size_t bins = length / 2 + 1;

    Spectrogram out(spec.name, signal.channels, intervals, bins);
    fftw_plan plan = RealFftPlans::instance().get(static_cast<int>(length));
    std::vector<double> in(length);
    std::vector<fftw_complex> spectrum(bins);
    for (std::size_t c = 0; c < signal.channels; ++c) {
        auto channel = signal.channel(c);
        for (std::size_t i = 0; i < intervals; ++i) {
            std::copy_n(channel.begin() + static_cast<std::ptrdiff_t>(i * length), length, in.begin());
            fftw_execute_dft_r2c(plan, in.data(), spectrum.data());
            for (std::size_t k = 0; k < bins; ++k) {
                out.re[out.index(c, i, k)] = spectrum[k][0];
                out.im[out.index(c, i, k)] = spectrum[k][1];
            }
        }
    }
    return out;
}

std::vector<Spectrogram> interval_stft(const Segment& segment, std::span<const ModalitySpec> specs)
{
    std::vector<Spectrogram> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        auto it = segment.modalities.find(spec.name);
        if (it == segment.modalities.end()) continue;
        out.push_back(interval_stft(it->second, spec));
    }
    return out;
}

const ModalityNormStats& NormStats::at(const std::string& modality) const
{
    auto it = modalities.find(modality);
    if (it == modalities.end()) fail(ErrorCode::UnknownModality, "no normalization stats for '" + modality + "'");
    return it->second;
}

NormStats compute_norm_stats(std::span<const std::vector<Spectrogram>> collection)
{
    if (collection.empty()) fail(ErrorCode::EmptyCollection, "cannot compute normalization stats of nothing");

    // Gather per-(modality, channel, plane) slices across the collection.
    struct Key {
        std::string modality;
        std::size_t channel;
        bool imag;
        bool operator<(const Key& o) const
        {
            return std::tie(modality, channel, imag) < std::tie(o.modality, o.channel, o.imag);
        }
    };
    std::map<Key, std::vector<std::span<const double>>> slices;
    for (const auto& spectrograms : collection) {
        for (const auto& s : spectrograms) {
            const std::size_t per_channel = s.intervals * s.bins;
            for (std::size_t c = 0; c < s.channels; ++c) {
                slices[{s.modality, c, false}].emplace_back(s.re.data() + c * per_channel, per_channel);
                slices[{s.modality, c, true}].emplace_back(s.im.data() + c * per_channel, per_channel);
            }
        }
    }

    NormStats stats;
    for (const auto& [key, parts] : slices) {
        // Per-item partial sums are reduced in sorted order, so the result does
        // not depend on the order of `collection`.
        std::vector<double> sums;
        double count = 0.0;
        for (auto p : parts) {
            sums.push_back(std::accumulate(p.begin(), p.end(), 0.0));
            count += static_cast<double>(p.size());
        }
        const double mean = sorted_sum(std::move(sums)) / count;
        std::vector<double> sq;
        for (auto p : parts) {
            double acc = 0.0;
            for (double v : p) acc += (v - mean) * (v - mean);
            sq.push_back(acc);
        }
        const double std = std::max(std::sqrt(sorted_sum(std::move(sq)) / count), NormStats::kStdFloor);

        auto& m = stats.modalities[key.modality];
        auto& planes = key.imag ? m.im : m.re;
        if (planes.size() <= key.channel) planes.resize(key.channel + 1);
        planes[key.channel] = PlaneStats{mean, std};
    }
    return stats;
}

namespace {

template <typename F>
Spectrogram map_planes(const Spectrogram& s, const NormStats& stats, F&& f)
{
    const ModalityNormStats& m = stats.at(s.modality);
    if (m.re.size() < s.channels || m.im.size() < s.channels)
        fail(ErrorCode::ShapeMismatch, "normalization stats cover fewer channels than the spectrogram");
    Spectrogram out = s;
    const std::size_t per_channel = s.intervals * s.bins;
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t j = c * per_channel; j < (c + 1) * per_channel; ++j) {
            out.re[j] = f(s.re[j], m.re[c]);
            out.im[j] = f(s.im[j], m.im[c]);
        }
    }
    return out;
}

} // namespace

Spectrogram normalize(const Spectrogram& spectrogram, const NormStats& stats)
{
    if (spectrogram.normalized) fail(ErrorCode::AlreadyNormalized, "spectrogram '" + spectrogram.modality + "'");
    Spectrogram out = map_planes(spectrogram, stats, [](double x, const PlaneStats& p) { return (x - p.mean) / p.std; });
    out.normalized = true;
    return out;
}

Spectrogram denormalize(const Spectrogram& spectrogram, const NormStats& stats)
{
    if (!spectrogram.normalized)
        fail(ErrorCode::InvalidArgument, "spectrogram '" + spectrogram.modality + "' is not normalized");
    Spectrogram out = map_planes(spectrogram, stats, [](double x, const PlaneStats& p) { return x * p.std + p.mean; });
    out.normalized = false;
    return out;
}

} // namespace vibefm
