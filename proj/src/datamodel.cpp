#include "vibefm/datamodel.hpp"

#include "vibefm/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vibefm {

namespace fs = std::filesystem;

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::UnknownModality: return "UNKNOWN_MODALITY";
    case ErrorCode::StreamTooShort: return "STREAM_TOO_SHORT";
    case ErrorCode::MisalignedStreams: return "MISALIGNED_STREAMS";
    case ErrorCode::Indivisible: return "INDIVISIBLE";
    case ErrorCode::EmptyCollection: return "EMPTY_COLLECTION";
    case ErrorCode::AlreadyNormalized: return "ALREADY_NORMALIZED";
    case ErrorCode::NonPositiveFactor: return "NON_POSITIVE_FACTOR";
    case ErrorCode::IndivisibleLength: return "INDIVISIBLE_LENGTH";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::NonFiniteActivation: return "NON_FINITE_ACTIVATION";
    case ErrorCode::DimMismatch: return "DIM_MISMATCH";
    case ErrorCode::ZeroVector: return "ZERO_VECTOR";
    case ErrorCode::EpochOutOfRange: return "EPOCH_OUT_OF_RANGE";
    case ErrorCode::EmptyDataset: return "EMPTY_DATASET";
    case ErrorCode::Divergence: return "DIVERGENCE";
    case ErrorCode::SingleClassDataset: return "SINGLE_CLASS_DATASET";
    case ErrorCode::StageMismatch: return "STAGE_MISMATCH";
    case ErrorCode::EmptySubset: return "EMPTY_SUBSET";
    case ErrorCode::TooSmall: return "TOO_SMALL";
    case ErrorCode::ClassUnsplittable: return "CLASS_UNSPLITTABLE";
    case ErrorCode::RatioOutOfRange: return "RATIO_OUT_OF_RANGE";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::Empty: return "EMPTY";
    case ErrorCode::MissingDomain: return "MISSING_DOMAIN";
    case ErrorCode::NyquistViolation: return "NYQUIST_VIOLATION";
    case ErrorCode::Io: return "IO";
    case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
    case ErrorCode::BadCheckpoint: return "BAD_CHECKPOINT";
    }
    return "UNKNOWN";
}

// ---------------------------------------------------------------------------
// ModalitySpec

std::size_t ModalitySpec::samples_per_segment() const
{
    return static_cast<std::size_t>(std::llround(sample_rate_hz * segment_seconds));
}

std::size_t ModalitySpec::interval_length() const
{
    return samples_per_segment() / static_cast<std::size_t>(num_intervals);
}

std::size_t ModalitySpec::bins() const { return interval_length() / 2 + 1; }

void ModalitySpec::validate() const
{
    if (name.empty()) fail(ErrorCode::InvalidArgument, "modality name is empty");
    if (sample_rate_hz <= 0 || channels <= 0 || num_intervals <= 0 || !(segment_seconds > 0.0))
        fail(ErrorCode::InvalidArgument, "modality '" + name + "' has a non-positive size parameter");
    const double exact = sample_rate_hz * segment_seconds;
    if (std::abs(exact - std::round(exact)) > 1e-9)
        fail(ErrorCode::InvalidArgument, "modality '" + name + "': rate x duration is not an integer sample count");
    if (samples_per_segment() % static_cast<std::size_t>(num_intervals) != 0)
        fail(ErrorCode::Indivisible, "modality '" + name + "': " + std::to_string(samples_per_segment()) +
                                         " samples not divisible by " + std::to_string(num_intervals) + " intervals");
}

std::vector<ModalitySpec> default_modalities(double segment_seconds)
{
    return {
        ModalitySpec{"acoustic", 8000, 1, 10, segment_seconds},
        ModalitySpec{"seismic", 100, 1, 10, segment_seconds},
    };
}

const ModalitySpec& find_spec(std::span<const ModalitySpec> specs, std::string_view name)
{
    for (const auto& s : specs)
        if (s.name == name) return s;
    fail(ErrorCode::UnknownModality, "no spec for modality '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// enums

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<std::pair<std::string_view, E>, N>& table, const char* what)
{
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const auto& [name, value] : table) {
        std::string n(name);
        std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
        if (n == lowered) return value;
    }
    fail(ErrorCode::InvalidArgument, std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<std::string_view, DomainTag>, 5> kDomainNames{{
    {"MOD_UNLABELED", DomainTag::ModUnlabeled},
    {"CONTROL", DomainTag::Control},
    {"NOISY", DomainTag::Noisy},
    {"SYNTH_A", DomainTag::SynthA},
    {"SYNTH_B", DomainTag::SynthB},
}};

constexpr std::array<std::pair<std::string_view, Stage>, 4> kStageNames{{
    {"SUPERVISED", Stage::Supervised},
    {"PRETRAIN", Stage::Pretrain},
    {"FINETUNE", Stage::Finetune},
    {"SUPERVISED_FINETUNE", Stage::SupervisedFinetune},
}};

constexpr std::array<std::pair<std::string_view, OptimizerKind>, 2> kOptimizerNames{{
    {"ADAMW", OptimizerKind::AdamW},
    {"ADAM", OptimizerKind::Adam},
}};

constexpr std::array<std::pair<std::string_view, EncoderKind>, 2> kEncoderNames{{
    {"DeepSense", EncoderKind::DeepSense},
    {"SW-T", EncoderKind::Swin},
}};

constexpr std::array<std::pair<std::string_view, Framework>, 3> kFrameworkNames{{
    {"Supervised", Framework::Supervised},
    {"Supervised-fine-tune", Framework::SupervisedFinetune},
    {"FOCAL", Framework::Focal},
}};

template <typename E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::pair<std::string_view, E>, N>& table)
{
    for (const auto& [name, v] : table)
        if (v == value) return name;
    return "?";
}

} // namespace

std::string_view to_string(DomainTag tag) { return enum_name(tag, kDomainNames); }
DomainTag parse_domain_tag(std::string_view text) { return parse_enum(text, kDomainNames, "domain tag"); }
std::string_view to_string(Stage stage) { return enum_name(stage, kStageNames); }
Stage parse_stage(std::string_view text) { return parse_enum(text, kStageNames, "stage"); }
std::string_view to_string(OptimizerKind kind) { return enum_name(kind, kOptimizerNames); }
OptimizerKind parse_optimizer(std::string_view text) { return parse_enum(text, kOptimizerNames, "optimizer"); }
std::string_view to_string(EncoderKind kind) { return enum_name(kind, kEncoderNames); }

EncoderKind parse_encoder_kind(std::string_view text)
{
    if (text == "deepsense" || text == "DEEPSENSE") return EncoderKind::DeepSense;
    if (text == "swin" || text == "SWIN") return EncoderKind::Swin;
    return parse_enum(text, kEncoderNames, "encoder");
}

std::string_view to_string(Framework framework) { return enum_name(framework, kFrameworkNames); }

Framework parse_framework(std::string_view text)
{
    if (text == "SUPERVISED_FINETUNE" || text == "supervised_finetune") return Framework::SupervisedFinetune;
    if (text == "SUPERVISED" || text == "supervised") return Framework::Supervised;
    if (text == "focal") return Framework::Focal;
    return parse_enum(text, kFrameworkNames, "framework");
}

// ---------------------------------------------------------------------------
// Segment

const Signal& Segment::at(const std::string& modality) const
{
    auto it = modalities.find(modality);
    if (it == modalities.end()) fail(ErrorCode::UnknownModality, "segment has no modality '" + modality + "'");
    return it->second;
}

const Segment& validate_segment(const Segment& segment, std::span<const ModalitySpec> specs)
{
    for (const auto& [name, signal] : segment.modalities) {
        auto it = std::find_if(specs.begin(), specs.end(), [&](const ModalitySpec& s) { return s.name == name; });
        if (it == specs.end()) fail(ErrorCode::UnknownModality, "segment modality '" + name + "' has no spec");
        if (signal.channels != static_cast<std::size_t>(it->channels) ||
            signal.samples != it->samples_per_segment() || signal.data.size() != signal.channels * signal.samples)
            fail(ErrorCode::ShapeMismatch, "modality '" + name + "' is [" + std::to_string(signal.channels) + "," +
                                               std::to_string(signal.samples) + "], expected [" +
                                               std::to_string(it->channels) + "," +
                                               std::to_string(it->samples_per_segment()) + "]");
        for (double v : signal.data)
            if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "modality '" + name + "' contains a non-finite sample");
    }
    if (!(segment.start_time_s >= 0.0)) fail(ErrorCode::InvalidArgument, "negative segment start time");
    return segment;
}

// ---------------------------------------------------------------------------
// Spectrogram / EmbeddingBundle

Spectrogram::Spectrogram(std::string modality_, std::size_t channels_, std::size_t intervals_, std::size_t bins_)
    : modality(std::move(modality_)), channels(channels_), intervals(intervals_), bins(bins_),
      re(channels_ * intervals_ * bins_, 0.0), im(channels_ * intervals_ * bins_, 0.0)
{
}

void Spectrogram::validate(const ModalitySpec& spec) const
{
    if (channels != static_cast<std::size_t>(spec.channels) ||
        intervals != static_cast<std::size_t>(spec.num_intervals) || bins != spec.bins() || re.size() != size() ||
        im.size() != size())
        fail(ErrorCode::ShapeMismatch, "spectrogram '" + modality + "' does not match its modality spec");
    for (std::size_t i = 0; i < size(); ++i)
        if (!std::isfinite(re[i]) || !std::isfinite(im[i]))
            fail(ErrorCode::NonFinite, "spectrogram '" + modality + "' has a non-finite entry");
}

void EmbeddingBundle::validate() const
{
    if (shared_dim == 0 || shared_dim >= dim)
        fail(ErrorCode::InvalidArgument, "shared_dim must satisfy 0 < shared_dim < dim");
    if (embeddings.size() != modalities.size())
        fail(ErrorCode::ShapeMismatch, "bundle has mismatched modality/embedding counts");
    for (const auto& e : embeddings) {
        if (e.size() != dim) fail(ErrorCode::ShapeMismatch, "embedding dimension differs from bundle dim");
        for (double v : e)
            if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "embedding contains a non-finite entry");
    }
}

std::span<const double> EmbeddingBundle::shared(std::size_t m) const
{
    return std::span<const double>(embeddings.at(m)).first(shared_dim);
}

std::span<const double> EmbeddingBundle::private_part(std::size_t m) const
{
    return std::span<const double>(embeddings.at(m)).subspan(shared_dim);
}

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::defaults(Stage stage, double epoch_scale)
{
    TrainConfig c;
    c.stage = stage;
    int base_epochs = 0;
    switch (stage) {
    case Stage::Supervised:
        c.batch_size = 128;
        c.optimizer = OptimizerKind::AdamW;
        c.initial_lr = 1e-4;
        c.lr_decay = 0.2;
        base_epochs = 500;
        c.augmentations = {"mixup", "phase_shift"};
        break;
    case Stage::Pretrain:
        c.batch_size = 256;
        c.optimizer = OptimizerKind::AdamW;
        c.initial_lr = 1e-4;
        c.lr_decay = 0.05;
        base_epochs = 6000;
        c.augmentations = {"permutation", "negation", "time_warp", "horizontal_flip",
                           "magnitude_warp", "scaling", "phase_shift"};
        break;
    case Stage::Finetune:
    case Stage::SupervisedFinetune:
        c.batch_size = 256;
        c.optimizer = OptimizerKind::Adam;
        c.initial_lr = 1e-3;
        c.lr_decay = 0.2;
        base_epochs = 200;
        c.augmentations = {"mixup", "phase_shift"};
        break;
    }
    c.scheduler = SchedulerKind::Cosine;
    c.epochs = std::max(1, static_cast<int>(std::lround(base_epochs * epoch_scale)));
    return c;
}

void TrainConfig::validate() const
{
    if (batch_size <= 0) fail(ErrorCode::InvalidArgument, "batch_size must be positive");
    if (!(initial_lr > 0.0)) fail(ErrorCode::InvalidArgument, "initial_lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail(ErrorCode::InvalidArgument, "lr_decay must be in (0, 1]");
    if (epochs <= 0) fail(ErrorCode::InvalidArgument, "epochs must be positive");
    if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
    if (loss_weights.shared < 0 || loss_weights.private_ < 0 || loss_weights.orth < 0)
        fail(ErrorCode::InvalidArgument, "loss weights must be non-negative");
    augment.validate();
}

void AugmentParams::validate() const
{
    if (permutation_min_k < 2 || permutation_max_k < permutation_min_k)
        fail(ErrorCode::InvalidArgument, "permutation k range must satisfy 2 <= min <= max");
    if (warp_knots < 2 || magnitude_knots < 2) fail(ErrorCode::InvalidArgument, "warps need at least 2 knots");
    if (!(warp_sigma > 0.0) || !(magnitude_sigma > 0.0)) fail(ErrorCode::InvalidArgument, "warp sigmas must be positive");
    if (!(scaling_min > 0.0 && scaling_max >= scaling_min))
        fail(ErrorCode::InvalidArgument, "scaling range must satisfy 0 < min <= max");
    if (!(op_probability >= 0.0 && op_probability <= 1.0))
        fail(ErrorCode::InvalidArgument, "op_probability must be in [0, 1]");
    if (!(mixup_alpha > 0.0)) fail(ErrorCode::InvalidArgument, "mixup_alpha must be positive");
}

void EvalReport::validate() const
{
    for (const auto& r : rows) {
        if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0) || !(r.macro_f1 >= 0.0 && r.macro_f1 <= 1.0))
            fail(ErrorCode::InvalidArgument, "accuracy / macro_f1 outside [0, 1]");
        if (!(r.label_ratio > 0.0 && r.label_ratio <= 1.0))
            fail(ErrorCode::RatioOutOfRange, "label ratio outside (0, 1]");
    }
}

// ---------------------------------------------------------------------------
// dataset IO

namespace {

static_assert(std::endian::native == std::endian::little, "on-disk f32 layout assumes a little-endian host");

void write_f32(const fs::path& path, const Signal& signal)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    std::vector<float> buf(signal.data.begin(), signal.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

Signal read_f32(const fs::path& path, std::size_t channels, std::size_t samples)
{
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != channels * samples * sizeof(float))
        fail(ErrorCode::ShapeMismatch, path.string() + " holds " + std::to_string(bytes / sizeof(float)) +
                                           " floats, index says " + std::to_string(channels * samples));
    in.seekg(0);
    std::vector<float> buf(channels * samples);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) fail(ErrorCode::Io, "read failed: " + path.string());
    Signal s(channels, samples);
    std::copy(buf.begin(), buf.end(), s.data.begin());
    return s;
}

} // namespace

void write_dataset(const fs::path& root, std::span<const Segment> segments, std::span<const ModalitySpec> specs)
{
    std::map<std::string, std::vector<const Segment*>> runs;
    for (const auto& seg : segments) {
        validate_segment(seg, specs);
        runs[seg.run_id].push_back(&seg);
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + root.string() + ": " + ec.message());

    for (const auto& [run_id, members] : runs) {
        const fs::path dir = root / run_id;
        fs::create_directories(dir, ec);
        if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
        nlohmann::json index;
        index["run_id"] = run_id;
        index["segments"] = nlohmann::json::array();
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Segment& seg = *members[i];
            nlohmann::json entry;
            entry["index"] = i;
            entry["label"] = seg.label ? nlohmann::json(*seg.label) : nlohmann::json(nullptr);
            entry["domain_tag"] = std::string(to_string(seg.domain));
            entry["start_time_s"] = seg.start_time_s;
            nlohmann::json shapes;
            for (const auto& [name, signal] : seg.modalities) {
                shapes[name] = {signal.channels, signal.samples};
                write_f32(dir / (std::to_string(i) + "." + name + ".f32"), signal);
            }
            entry["shapes"] = shapes;
            index["segments"].push_back(entry);
        }
        std::ofstream out(dir / "index.json");
        if (!out) fail(ErrorCode::Io, "cannot write " + (dir / "index.json").string());
        out << index.dump(2) << '\n';
    }
}

std::vector<Segment> read_dataset(const fs::path& root, std::span<const ModalitySpec> specs)
{
    if (!fs::is_directory(root)) fail(ErrorCode::Io, "dataset directory not found: " + root.string());
    std::vector<fs::path> run_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "index.json")) run_dirs.push_back(entry.path());
    std::sort(run_dirs.begin(), run_dirs.end());

    std::vector<Segment> out;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir / "index.json");
        nlohmann::json index;
        try {
            in >> index;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::Io, "malformed " + (dir / "index.json").string() + ": " + e.what());
        }
        const std::string run_id = index.at("run_id").get<std::string>();
        for (const auto& entry : index.at("segments")) {
            Segment seg;
            seg.run_id = run_id;
            if (!entry.at("label").is_null()) seg.label = entry.at("label").get<int>();
            seg.domain = parse_domain_tag(entry.at("domain_tag").get<std::string>());
            seg.start_time_s = entry.at("start_time_s").get<double>();
            const auto i = entry.at("index").get<std::size_t>();
            for (const auto& [name, shape] : entry.at("shapes").items()) {
                find_spec(specs, name);
                seg.modalities[name] = read_f32(dir / (std::to_string(i) + "." + name + ".f32"),
                                                shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>());
            }
            out.push_back(validate_segment(seg, specs));
        }
    }
    return out;
}

} // namespace vibefm
