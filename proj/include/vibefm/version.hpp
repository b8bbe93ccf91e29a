#pragma once

#include <string_view>

namespace vibefm {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr unsigned kCheckpointFormat = 1;

} // namespace vibefm
