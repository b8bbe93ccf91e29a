#include "vibefm/checkpoint.hpp"

#include "vibefm/error.hpp"
#include "vibefm/version.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace vibefm {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'I', 'B', 'E', 'F', 'M', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T value)
{
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
        fail(ErrorCode::BadCheckpoint, "truncated checkpoint " + path.string());
    return value;
}

std::string get_string(std::istream& in, std::size_t n, const std::filesystem::path& path)
{
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
        fail(ErrorCode::BadCheckpoint, "truncated checkpoint " + path.string());
    return s;
}

} // namespace

nlohmann::json modality_specs_to_json(std::span<const ModalitySpec> specs)
{
    auto arr = nlohmann::json::array();
    for (const auto& s : specs)
        arr.push_back({{"name", s.name},
                       {"sample_rate_hz", s.sample_rate_hz},
                       {"channels", s.channels},
                       {"num_intervals", s.num_intervals},
                       {"segment_seconds", s.segment_seconds}});
    return arr;
}

std::vector<ModalitySpec> modality_specs_from_json(const nlohmann::json& j)
{
    std::vector<ModalitySpec> out;
    for (const auto& e : j) {
        ModalitySpec s;
        s.name = e.at("name").get<std::string>();
        s.sample_rate_hz = e.at("sample_rate_hz").get<int>();
        s.channels = e.value("channels", 1);
        s.num_intervals = e.value("num_intervals", 10);
        s.segment_seconds = e.value("segment_seconds", kDefaultSegmentSeconds);
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const MultimodalModel& model, const CheckpointMeta& meta)
{
    nlohmann::json header{{"encoder", model.config()},
                          {"modalities", modality_specs_to_json(model.specs())},
                          {"head", std::string(to_string(model.head().kind()))},
                          {"num_classes", model.num_classes()},
                          {"stage", std::string(to_string(meta.stage))},
                          {"seed", meta.seed},
                          {"version", std::string(kVersion)},
                          {"extra", meta.extra}};
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointFormat);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    const auto params = model.parameters();
    put<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.var.shape().size()));
        for (auto d : p.var.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(p.var.data().data()),
                  static_cast<std::streamsize>(p.var.size() * sizeof(double)));
    }
    if (!out) fail(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        fail(ErrorCode::BadCheckpoint, path.string() + " is not a checkpoint");
    const auto format = get<std::uint32_t>(in, path);
    if (format != kCheckpointFormat)
        fail(ErrorCode::BadCheckpoint, "unsupported checkpoint format " + std::to_string(format));
    const auto header_len = get<std::uint64_t>(in, path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(get_string(in, header_len, path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadCheckpoint, std::string("bad checkpoint header: ") + e.what());
    }

    MultimodalModel model(header.at("encoder").get<EncoderConfig>(), modality_specs_from_json(header.at("modalities")),
                          parse_head_kind(header.at("head").get<std::string>()), header.at("num_classes").get<int>());
    CheckpointMeta meta;
    meta.stage = parse_stage(header.at("stage").get<std::string>());
    meta.seed = header.at("seed").get<std::uint64_t>();
    meta.version = header.at("version").get<std::string>();
    meta.extra = header.value("extra", nlohmann::json());

    std::map<std::string, nn::Var> by_name;
    for (auto& p : model.parameters()) by_name.emplace(p.name, p.var);

    const auto count = get<std::uint64_t>(in, path);
    if (count != by_name.size())
        fail(ErrorCode::BadCheckpoint, "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                                           std::to_string(by_name.size()));
    for (std::uint64_t t = 0; t < count; ++t) {
        const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
        nn::Shape shape(get<std::uint32_t>(in, path));
        for (auto& d : shape) d = get<std::uint64_t>(in, path);
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(ErrorCode::BadCheckpoint, "unexpected tensor '" + name + "'");
        nn::Var var = it->second;
        if (var.shape() != shape) fail(ErrorCode::BadCheckpoint, "tensor '" + name + "' has the wrong shape");
        auto& data = var.mutable_value().data;
        if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double))))
            fail(ErrorCode::BadCheckpoint, "truncated tensor '" + name + "'");
    }
    return {std::move(model), std::move(meta)};
}

} // namespace vibefm
