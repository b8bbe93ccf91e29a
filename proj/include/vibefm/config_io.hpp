#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace vibefm {

/// TOML document as JSON (tables become objects). ConfigInvalid on parse errors.
nlohmann::json parse_toml(std::string_view text, const std::string& source = "<toml>");
/// JSON object as a TOML document; nulls are dropped.
std::string to_toml(const nlohmann::json& object);

/// Parses TOML, or JSON when the extension is .json.
nlohmann::json load_config_file(const std::filesystem::path& path);

} // namespace vibefm
