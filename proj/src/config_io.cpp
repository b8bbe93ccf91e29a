#include "vibefm/config_io.hpp"

#include "vibefm/error.hpp"

#include <tomlplusplus/toml.hpp>

#include <fstream>
#include <sstream>

namespace vibefm {

namespace {

nlohmann::json node_to_json(const toml::node& node)
{
    if (const auto* t = node.as_table()) {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [key, value] : *t) out[std::string(key.str())] = node_to_json(value);
        return out;
    }
    if (const auto* a = node.as_array()) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& value : *a) out.push_back(node_to_json(value));
        return out;
    }
    if (const auto* v = node.as_string()) return v->get();
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) return v->get();
    if (const auto* v = node.as_boolean()) return v->get();
    fail(ErrorCode::ConfigInvalid, "date and time values are not supported in configs");
}

void insert_value(toml::table& table, const std::string& key, const nlohmann::json& value);

toml::array to_array(const nlohmann::json& j)
{
    toml::array out;
    for (const auto& v : j) {
        if (v.is_object()) {
            toml::table t;
            for (const auto& [k, x] : v.items()) insert_value(t, k, x);
            out.push_back(std::move(t));
        } else if (v.is_array()) {
            out.push_back(to_array(v));
        } else if (v.is_string()) {
            out.push_back(v.get<std::string>());
        } else if (v.is_boolean()) {
            out.push_back(v.get<bool>());
        } else if (v.is_number_integer() || v.is_number_unsigned()) {
            out.push_back(v.get<std::int64_t>());
        } else if (v.is_number_float()) {
            out.push_back(v.get<double>());
        }
    }
    return out;
}

void insert_value(toml::table& table, const std::string& key, const nlohmann::json& value)
{
    if (value.is_null()) return;
    if (value.is_object()) {
        toml::table sub;
        for (const auto& [k, x] : value.items()) insert_value(sub, k, x);
        table.insert(key, std::move(sub));
    } else if (value.is_array()) {
        table.insert(key, to_array(value));
    } else if (value.is_string()) {
        table.insert(key, value.get<std::string>());
    } else if (value.is_boolean()) {
        table.insert(key, value.get<bool>());
    } else if (value.is_number_unsigned()) {
        const auto u = value.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            fail(ErrorCode::ConfigInvalid, "'" + key + "' does not fit a TOML integer");
        table.insert(key, static_cast<std::int64_t>(u));
    } else if (value.is_number_integer()) {
        table.insert(key, value.get<std::int64_t>());
    } else {
        table.insert(key, value.get<double>());
    }
}

} // namespace

nlohmann::json parse_toml(std::string_view text, const std::string& source)
{
    try {
        const toml::table table = toml::parse(text, source);
        return node_to_json(table);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        fail(ErrorCode::ConfigInvalid, msg.str());
    }
}

std::string to_toml(const nlohmann::json& object)
{
    if (!object.is_object()) fail(ErrorCode::ConfigInvalid, "only objects map onto TOML documents");
    toml::table table;
    for (const auto& [k, v] : object.items()) insert_value(table, k, v);
    std::ostringstream out;
    out << table << '\n';
    return out.str();
}

nlohmann::json load_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (path.extension() == ".json") {
        try {
            return nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
        }
    }
    return parse_toml(ss.str(), path.string());
}

} // namespace vibefm
