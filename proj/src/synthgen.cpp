#include "vibefm/synthgen.hpp"

#include "vibefm/config_io.hpp"
#include "vibefm/error.hpp"
#include "vibefm/preprocess.hpp"
#include "vibefm/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

namespace vibefm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDefaultPrivate = 1.0;
constexpr int kTextureTones = 3;
constexpr double kTransientSeconds = 0.25;
constexpr double kTransientDecay = 0.05;
constexpr double kTransientGain = 3.0;
// Harmonics above this fraction of Nyquist are left out, like an anti-alias filter.
constexpr double kHarmonicCutoff = 0.95;

struct BuiltIn {
    double acoustic, seismic;
    std::vector<double> harmonics;
    double am_rate;
};

const std::vector<BuiltIn>& built_in()
{
    static const std::vector<BuiltIn> sigs{
        {90.0, 10.0, {1.0, 0.6, 0.4, 0.2}, 0.5},
        {125.0, 14.0, {1.0, 0.2, 0.5}, 1.0},
        {165.0, 19.0, {1.0, 0.7}, 2.0},
        {210.0, 24.0, {1.0, 0.3, 0.3, 0.3, 0.2}, 3.0},
        {260.0, 29.0, {1.0, 0.5, 0.1}, 1.5},
        {320.0, 34.0, {1.0, 0.1, 0.6}, 2.5},
    };
    return sigs;
}

} // namespace

std::vector<ClassSignature> SynthSpec::signatures() const
{
    if (!classes.empty()) return classes;
    if (num_classes > static_cast<int>(built_in().size()))
        fail(ErrorCode::ConfigInvalid, "only " + std::to_string(built_in().size()) +
                                           " built-in class signatures exist; list the classes explicitly");
    std::vector<ClassSignature> out;
    for (int c = 0; c < num_classes; ++c) {
        const auto& b = built_in()[static_cast<std::size_t>(c)];
        ClassSignature sig;
        sig.harmonics = b.harmonics;
        sig.am_rate_hz = b.am_rate;
        // Fundamentals scale with each modality's sample rate relative to the defaults.
        for (const auto& m : modalities)
            sig.fundamental_hz[m.name] = m.name == "seismic" ? b.seismic
                                         : m.name == "acoustic"
                                             ? b.acoustic
                                             : b.seismic * static_cast<double>(m.sample_rate_hz) / 100.0;
        out.push_back(std::move(sig));
    }
    return out;
}

double SynthSpec::private_for(const std::string& modality) const
{
    auto it = private_strength.find(modality);
    return it == private_strength.end() ? kDefaultPrivate : it->second;
}

void SynthSpec::validate() const
{
    if (num_classes < 2) fail(ErrorCode::ConfigInvalid, "num_classes must be at least 2");
    if (!classes.empty() && static_cast<int>(classes.size()) != num_classes)
        fail(ErrorCode::ConfigInvalid, "class signature count differs from num_classes");
    if (runs_per_class < 1) fail(ErrorCode::ConfigInvalid, "runs_per_class must be positive");
    if (modalities.empty()) fail(ErrorCode::ConfigInvalid, "no modalities");
    for (const auto& m : modalities) m.validate();
    if (!(duration_s >= modalities.front().segment_seconds))
        fail(ErrorCode::ConfigInvalid, "duration_s is shorter than one segment");
    if (!(overlap >= 0.0 && overlap < 1.0)) fail(ErrorCode::ConfigInvalid, "overlap must lie in [0, 1)");
    if (!(frequency_jitter >= 0.0 && frequency_jitter < 1.0))
        fail(ErrorCode::ConfigInvalid, "frequency_jitter must lie in [0, 1)");
    for (double v : {shared_strength, am_depth, noise.background_std, noise.wind_band_power, noise.transient_rate,
                     domain_shift.background, domain_shift.wind, domain_shift.transient})
        if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::ConfigInvalid, "strengths must be finite and >= 0");
    for (const auto& [name, v] : private_strength) {
        find_spec(modalities, name);
        if (!(v >= 0.0)) fail(ErrorCode::ConfigInvalid, "private strength of '" + name + "' is negative");
    }
    const auto sigs = signatures();
    for (std::size_t c = 0; c < sigs.size(); ++c) {
        if (sigs[c].harmonics.empty()) fail(ErrorCode::ConfigInvalid, "class " + std::to_string(c) + " has no harmonics");
        for (const auto& m : modalities) {
            auto it = sigs[c].fundamental_hz.find(m.name);
            if (it == sigs[c].fundamental_hz.end())
                fail(ErrorCode::ConfigInvalid, "class " + std::to_string(c) + " has no fundamental for " + m.name);
            const double nyquist = 0.5 * m.sample_rate_hz;
            const double highest = it->second * (1.0 + frequency_jitter);
            if (!(it->second > 0.0) || highest >= nyquist)
                fail(ErrorCode::NyquistViolation, "class " + std::to_string(c) + " fundamental " +
                                                      std::to_string(it->second) + " Hz (with jitter up to " +
                                                      std::to_string(highest) + " Hz) is not below the " +
                                                      std::to_string(nyquist) + " Hz Nyquist limit of " + m.name);
        }
    }
}

void to_json(nlohmann::json& j, const SynthSpec& s)
{
    auto classes = nlohmann::json::array();
    for (const auto& c : s.classes)
        classes.push_back({{"fundamental_hz", c.fundamental_hz}, {"harmonics", c.harmonics}, {"am_rate_hz", c.am_rate_hz}});
    auto modalities = nlohmann::json::array();
    for (const auto& m : s.modalities)
        modalities.push_back({{"name", m.name},
                              {"sample_rate_hz", m.sample_rate_hz},
                              {"channels", m.channels},
                              {"num_intervals", m.num_intervals},
                              {"segment_seconds", m.segment_seconds}});
    j = {{"num_classes", s.num_classes},
         {"classes", classes},
         {"shared_strength", s.shared_strength},
         {"private_strength", s.private_strength},
         {"frequency_jitter", s.frequency_jitter},
         {"am_depth", s.am_depth},
         {"noise",
          {{"background_std", s.noise.background_std},
           {"wind_band_power", s.noise.wind_band_power},
           {"transient_rate", s.noise.transient_rate}}},
         {"domain_shift",
          {{"background", s.domain_shift.background},
           {"wind", s.domain_shift.wind},
           {"transient", s.domain_shift.transient}}},
         {"duration_s", s.duration_s},
         {"runs_per_class", s.runs_per_class},
         {"overlap", s.overlap},
         {"modalities", modalities},
         {"seed", s.seed}};
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where)
{
    for (const auto& [key, value] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            fail(ErrorCode::ConfigInvalid, "unknown key '" + where + key + "'");
}

} // namespace

void from_json(const nlohmann::json& j, SynthSpec& s)
{
    reject_unknown(j,
                   {"num_classes", "classes", "shared_strength", "private_strength", "frequency_jitter", "am_depth",
                    "noise", "domain_shift", "duration_s", "runs_per_class", "overlap", "modalities", "seed"},
                   "synth.");
    if (j.contains("num_classes")) j.at("num_classes").get_to(s.num_classes);
    if (j.contains("classes")) {
        s.classes.clear();
        for (const auto& c : j.at("classes")) {
            reject_unknown(c, {"fundamental_hz", "harmonics", "am_rate_hz"}, "synth.classes.");
            ClassSignature sig;
            c.at("fundamental_hz").get_to(sig.fundamental_hz);
            if (c.contains("harmonics")) c.at("harmonics").get_to(sig.harmonics);
            if (c.contains("am_rate_hz")) c.at("am_rate_hz").get_to(sig.am_rate_hz);
            s.classes.push_back(std::move(sig));
        }
    }
    if (j.contains("shared_strength")) j.at("shared_strength").get_to(s.shared_strength);
    if (j.contains("private_strength")) j.at("private_strength").get_to(s.private_strength);
    if (j.contains("frequency_jitter")) j.at("frequency_jitter").get_to(s.frequency_jitter);
    if (j.contains("am_depth")) j.at("am_depth").get_to(s.am_depth);
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        reject_unknown(n, {"background_std", "wind_band_power", "transient_rate"}, "synth.noise.");
        if (n.contains("background_std")) n.at("background_std").get_to(s.noise.background_std);
        if (n.contains("wind_band_power")) n.at("wind_band_power").get_to(s.noise.wind_band_power);
        if (n.contains("transient_rate")) n.at("transient_rate").get_to(s.noise.transient_rate);
    }
    if (j.contains("domain_shift")) {
        const auto& d = j.at("domain_shift");
        reject_unknown(d, {"background", "wind", "transient"}, "synth.domain_shift.");
        if (d.contains("background")) d.at("background").get_to(s.domain_shift.background);
        if (d.contains("wind")) d.at("wind").get_to(s.domain_shift.wind);
        if (d.contains("transient")) d.at("transient").get_to(s.domain_shift.transient);
    }
    if (j.contains("duration_s")) j.at("duration_s").get_to(s.duration_s);
    if (j.contains("runs_per_class")) j.at("runs_per_class").get_to(s.runs_per_class);
    if (j.contains("overlap")) j.at("overlap").get_to(s.overlap);
    if (j.contains("modalities")) {
        s.modalities.clear();
        for (const auto& m : j.at("modalities")) {
            reject_unknown(m, {"name", "sample_rate_hz", "channels", "num_intervals", "segment_seconds"},
                           "synth.modalities.");
            ModalitySpec spec;
            m.at("name").get_to(spec.name);
            m.at("sample_rate_hz").get_to(spec.sample_rate_hz);
            if (m.contains("channels")) m.at("channels").get_to(spec.channels);
            if (m.contains("num_intervals")) m.at("num_intervals").get_to(spec.num_intervals);
            if (m.contains("segment_seconds")) m.at("segment_seconds").get_to(spec.segment_seconds);
            s.modalities.push_back(spec);
        }
    }
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

Signal RunComponents::total() const
{
    Signal out = signature;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += texture.data[i] + noise.data[i];
    return out;
}

std::string synth_run_id(int label, int run) { return "c" + std::to_string(label) + "r" + std::to_string(run); }

std::map<std::string, RunComponents> synthesize_run(const SynthSpec& spec, DomainTag domain, int label,
                                                    std::size_t run_index)
{
    if (label < 0 || label >= spec.num_classes)
        fail(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " outside the spec's classes");
    if (domain != DomainTag::SynthA && domain != DomainTag::SynthB && domain != DomainTag::ModUnlabeled)
        fail(ErrorCode::InvalidArgument, "the generator produces SYNTH_A, SYNTH_B or MOD_UNLABELED data only");
    const auto sigs = spec.signatures();
    const ClassSignature& sig = sigs[static_cast<std::size_t>(label)];
    const auto run = static_cast<std::uint64_t>(run_index);

    // Run-level draws shared by every modality: pitch offset, gain, envelope phase.
    Rng shared(derive_seed(spec.seed, "signature", run));
    const double pitch = 1.0 + spec.frequency_jitter * shared.uniform(-1.0, 1.0);
    const double gain = spec.shared_strength * std::exp(shared.normal(0.0, 0.25));
    const double am_phase = shared.uniform(0.0, kTwoPi);
    std::vector<double> harmonic_phase(sig.harmonics.size());
    for (double& p : harmonic_phase) p = shared.uniform(0.0, kTwoPi);

    const bool shifted = domain == DomainTag::SynthB;
    const double bg = spec.noise.background_std * (shifted ? spec.domain_shift.background : 1.0);
    const double wind = spec.noise.wind_band_power * (shifted ? spec.domain_shift.wind : 1.0);
    const double bursts = spec.noise.transient_rate * (shifted ? spec.domain_shift.transient : 1.0);

    std::map<std::string, RunComponents> out;
    for (const auto& m : spec.modalities) {
        const double fs = m.sample_rate_hz;
        const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * fs));
        const auto ch = static_cast<std::size_t>(m.channels);
        RunComponents rc{Signal(ch, n), Signal(ch, n), Signal(ch, n)};
        const double f0 = sig.fundamental_hz.at(m.name) * pitch;
        const double nyquist = 0.5 * fs;

        // class signature: harmonic stack under a slow amplitude envelope
        for (std::size_t t = 0; t < n; ++t) {
            const double time = static_cast<double>(t) / fs;
            const double env = 1.0 + spec.am_depth * std::sin(kTwoPi * sig.am_rate_hz * time + am_phase);
            double v = 0.0;
            for (std::size_t h = 0; h < sig.harmonics.size(); ++h) {
                const double f = f0 * static_cast<double>(h + 1);
                if (f >= kHarmonicCutoff * nyquist) break;
                v += sig.harmonics[h] * std::sin(kTwoPi * f * time + harmonic_phase[h]);
            }
            for (std::size_t c = 0; c < ch; ++c) rc.signature.data[c * n + t] = gain * env * v;
        }

        // private texture: a few tones at run-random frequencies, label never consulted
        Rng tex(derive_seed(spec.seed, "texture/" + m.name, run));
        const double strength = spec.private_for(m.name);
        for (std::size_t c = 0; c < ch; ++c)
            for (int k = 0; k < kTextureTones; ++k) {
                const double f = tex.uniform(0.02, 0.45) * fs;
                const double a = strength * tex.uniform(0.5, 1.0);
                const double phase = tex.uniform(0.0, kTwoPi);
                const double drift = tex.uniform(-0.01, 0.01) * f; // Hz over the run
                for (std::size_t t = 0; t < n; ++t) {
                    const double time = static_cast<double>(t) / fs;
                    const double inst = f + drift * time / spec.duration_s;
                    rc.texture.data[c * n + t] += a * std::sin(kTwoPi * inst * time + phase);
                }
            }

        // noise: white background, low-passed wind, decaying bursts. Streams do
        // not depend on the domain, so a 1.0 shift reproduces SYNTH_A exactly.
        Rng white(derive_seed(spec.seed, "background/" + m.name, run));
        Rng gust(derive_seed(spec.seed, "wind/" + m.name, run));
        Rng burst(derive_seed(spec.seed, "transient/" + m.name, run));
        const double a = std::exp(-kTwoPi * (fs / 40.0) / fs);
        const double wind_scale = std::sqrt(wind) * std::sqrt(1.0 - a * a);
        for (std::size_t c = 0; c < ch; ++c) {
            double state = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                state = a * state + wind_scale * gust.normal();
                rc.noise.data[c * n + t] = bg * white.normal() + state;
            }
            if (bursts > 0.0) {
                const double base = std::max(bg, 0.1);
                for (double at = burst.exponential(bursts); at < spec.duration_s; at += burst.exponential(bursts)) {
                    const double amp = kTransientGain * base * burst.uniform(0.5, 1.5);
                    const auto start = static_cast<std::size_t>(at * fs);
                    const auto len = static_cast<std::size_t>(kTransientSeconds * fs);
                    for (std::size_t k = 0; k < len && start + k < n; ++k) {
                        const double tau = static_cast<double>(k) / fs;
                        rc.noise.data[c * n + start + k] += amp * std::exp(-tau / kTransientDecay) * burst.normal();
                    }
                }
            }
        }
        out.emplace(m.name, std::move(rc));
    }
    return out;
}

std::vector<Segment> generate_dataset(const SynthSpec& spec, DomainTag domain, int jobs)
{
    spec.validate();
    const auto runs = static_cast<std::size_t>(spec.num_classes) * static_cast<std::size_t>(spec.runs_per_class);
    std::vector<std::vector<Segment>> per_run(runs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t run_index = next++; run_index < runs; run_index = next++) {
            const int label = static_cast<int>(run_index / static_cast<std::size_t>(spec.runs_per_class));
            const int r = static_cast<int>(run_index % static_cast<std::size_t>(spec.runs_per_class));
            const auto parts = synthesize_run(spec, domain, label, run_index);
            std::map<std::string, Signal> waves;
            for (const auto& [name, rc] : parts) waves.emplace(name, rc.total());
            StreamInfo info;
            info.label = label;
            info.domain = domain;
            info.run_id = synth_run_id(label, r);
            per_run[run_index] =
                segment_stream(waves, spec.modalities, spec.modalities.front().segment_seconds, spec.overlap, info);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < std::min<int>(jobs, static_cast<int>(runs)); ++t) pool.emplace_back(worker);
    try {
        worker();
    } catch (...) {
        next = runs;
        for (auto& th : pool) th.join();
        throw;
    }
    for (auto& th : pool) th.join();
    std::vector<Segment> out;
    for (auto& segs : per_run) std::move(segs.begin(), segs.end(), std::back_inserter(out));
    return out;
}

std::vector<Segment> generate_domain(const SynthSpec& spec, DomainTag domain, int jobs)
{
    if (domain != DomainTag::ModUnlabeled) return generate_dataset(spec, domain, jobs);
    SynthSpec mod = spec;
    mod.seed = derive_seed(spec.seed, "mod_unlabeled");
    auto out = generate_dataset(mod, domain, jobs);
    for (auto& s : out) s.label.reset();
    return out;
}

double separability_probe(std::span<const Segment> dataset, std::span<const ModalitySpec> specs)
{
    if (dataset.empty()) fail(ErrorCode::EmptyDataset, "no segments to probe");
    // Features: per modality, the magnitude spectrum averaged over intervals and
    // channels, scaled to unit norm so that every modality weighs the same.
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    std::vector<int> fold;
    std::map<std::string, int> run_fold;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Segment& s = dataset[i];
        if (!s.label) fail(ErrorCode::InvalidArgument, "the probe needs labeled segments");
        std::vector<double> f;
        for (const auto& spec : specs) {
            const Spectrogram sp = interval_stft(s.at(spec.name), spec);
            std::vector<double> mag(sp.bins, 0.0);
            for (std::size_t c = 0; c < sp.channels; ++c)
                for (std::size_t t = 0; t < sp.intervals; ++t)
                    for (std::size_t k = 0; k < sp.bins; ++k) {
                        const std::size_t idx = sp.index(c, t, k);
                        mag[k] += std::hypot(sp.re[idx], sp.im[idx]);
                    }
            double norm = 0.0;
            for (double v : mag) norm += v * v;
            norm = std::sqrt(norm);
            for (double v : mag) f.push_back(norm > 0.0 ? v / norm : 0.0);
        }
        features.push_back(std::move(f));
        labels.push_back(*s.label);
        const std::string key = s.run_id.empty() ? "#" + std::to_string(i) : s.run_id;
        auto [it, fresh] = run_fold.emplace(key, static_cast<int>(run_fold.size() % 2));
        fold.push_back(it->second);
    }
    const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    const std::size_t dim = features.front().size();

    std::size_t correct = 0, scored = 0;
    for (int held = 0; held < 2; ++held) {
        std::vector<std::vector<double>> centroid(static_cast<std::size_t>(classes), std::vector<double>(dim, 0.0));
        std::vector<std::size_t> count(static_cast<std::size_t>(classes), 0);
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (fold[i] == held) continue;
            const auto y = static_cast<std::size_t>(labels[i]);
            for (std::size_t d = 0; d < dim; ++d) centroid[y][d] += features[i][d];
            ++count[y];
        }
        for (std::size_t y = 0; y < centroid.size(); ++y)
            for (double& v : centroid[y]) v = count[y] ? v / static_cast<double>(count[y]) : 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (fold[i] != held) continue;
            int best = -1;
            double best_d = 0.0;
            for (int y = 0; y < classes; ++y) {
                if (!count[static_cast<std::size_t>(y)]) continue;
                double d2 = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = features[i][d] - centroid[static_cast<std::size_t>(y)][d];
                    d2 += diff * diff;
                }
                if (best < 0 || d2 < best_d) {
                    best = y;
                    best_d = d2;
                }
            }
            correct += best == labels[i] ? 1 : 0;
            ++scored;
        }
    }
    return scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
}

void write_synth_spec(const std::filesystem::path& path, const SynthSpec& spec)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << to_toml(nlohmann::json(spec));
    if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

SynthSpec read_synth_spec(const std::filesystem::path& path)
{
    SynthSpec spec;
    from_json(load_config_file(path), spec);
    spec.validate();
    return spec;
}

} // namespace vibefm
