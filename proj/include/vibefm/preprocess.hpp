#pragma once

#include "vibefm/datamodel.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vibefm {

/// Metadata stamped on every segment cut from one continuous recording.
struct StreamInfo {
    std::optional<int> label;
    DomainTag domain = DomainTag::SynthA;
    std::string run_id;
};

/// Cut aligned, overlapping windows of `segment_seconds` from continuous
/// per-modality recordings. Window k starts at k * segment_seconds * (1 - overlap_ratio).
std::vector<Segment> segment_stream(const std::map<std::string, Signal>& waveforms,
                                    std::span<const ModalitySpec> specs, double segment_seconds,
                                    double overlap_ratio, const StreamInfo& info = {});

/// Number of windows `segment_stream` produces for a stream of `duration_s`.
std::size_t segment_count(double duration_s, double segment_seconds, double overlap_ratio);

/// Per-interval real FFT of one modality (rectangular window, no hop).
Spectrogram interval_stft(const Signal& signal, const ModalitySpec& spec);

/// Per-interval real FFT of every modality of `segment`, in `specs` order.
std::vector<Spectrogram> interval_stft(const Segment& segment, std::span<const ModalitySpec> specs);

struct PlaneStats {
    double mean = 0.0;
    double std = 1.0;
};

struct ModalityNormStats {
    std::vector<PlaneStats> re; // per channel
    std::vector<PlaneStats> im;
};

struct NormStats {
    static constexpr double kStdFloor = 1e-8;
    std::map<std::string, ModalityNormStats> modalities;

    const ModalityNormStats& at(const std::string& modality) const;
};

/// Each element of `collection` holds the spectrograms of one training segment.
NormStats compute_norm_stats(std::span<const std::vector<Spectrogram>> collection);

Spectrogram normalize(const Spectrogram& spectrogram, const NormStats& stats);
Spectrogram denormalize(const Spectrogram& spectrogram, const NormStats& stats);

} // namespace vibefm
