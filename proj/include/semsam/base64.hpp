#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semsam {

/// Standard alphabet with '=' padding.
std::string base64_encode(std::span<const std::uint8_t> data);

/// Strict decoder: rejects characters outside the alphabet and bad padding.
std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view text);

}  // namespace semsam
