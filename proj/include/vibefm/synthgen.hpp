#pragma once

#include "vibefm/datamodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vibefm {

struct ClassSignature {
    std::map<std::string, double> fundamental_hz; // per modality
    std::vector<double> harmonics{1.0};           // weight of harmonic h+1
    double am_rate_hz = 0.5;                      // amplitude-modulation rate
};

struct NoiseSpec {
    double background_std = 1.5;
    double wind_band_power = 0.5;
    double transient_rate = 0.2; // bursts per second
};

/// Multipliers applied to NoiseSpec for the SYNTH_B domain.
struct DomainShift {
    double background = 2.0;
    double wind = 2.0;
    double transient = 2.0;
};

struct SynthSpec {
    int num_classes = 4;
    std::vector<ClassSignature> classes; // empty: built-in signatures
    double shared_strength = 1.0;
    std::map<std::string, double> private_strength; // per modality; missing entries use 1.0
    double frequency_jitter = 0.1; // per-run relative fundamental offset, shared by all modalities
    double am_depth = 0.5;
    NoiseSpec noise;
    DomainShift domain_shift;
    double duration_s = 60.0;
    int runs_per_class = 10;
    double overlap = kDefaultOverlap;
    std::vector<ModalitySpec> modalities = default_modalities();
    std::uint64_t seed = 0;

    /// Signatures actually used (the explicit list or the built-in one).
    std::vector<ClassSignature> signatures() const;
    double private_for(const std::string& modality) const;
    void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

/// Additive pieces of one modality of one continuous run.
struct RunComponents {
    Signal signature; // class-bearing, shared across modalities
    Signal texture;   // modality-private, class-independent
    Signal noise;     // domain-dependent
    Signal total() const;
};

/// All modalities of run `run_index` (0-based over the whole dataset). The
/// texture depends on (seed, modality, run_index) only, never on `label`.
std::map<std::string, RunComponents> synthesize_run(const SynthSpec& spec, DomainTag domain, int label,
                                                    std::size_t run_index);

std::string synth_run_id(int label, int run);

/// runs_per_class runs for every class, cut into overlapping segments.
/// Runs are synthesized on up to `jobs` threads; the output does not depend on it.
std::vector<Segment> generate_dataset(const SynthSpec& spec, DomainTag domain, int jobs = 1);

/// generate_dataset, except MOD_UNLABELED: an independent draw of the SYNTH_A
/// conditions (derived seed) with labels removed.
std::vector<Segment> generate_domain(const SynthSpec& spec, DomainTag domain, int jobs = 1);

/// Nearest-centroid accuracy on per-segment mean magnitude spectra, with
/// centroids fit on alternating runs and scored on the others (two folds).
double separability_probe(std::span<const Segment> dataset, std::span<const ModalitySpec> specs);

void write_synth_spec(const std::filesystem::path& path, const SynthSpec& spec); // TOML
SynthSpec read_synth_spec(const std::filesystem::path& path);

} // namespace vibefm
