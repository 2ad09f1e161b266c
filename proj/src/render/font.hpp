#pragma once

#include <array>
#include <cstdint>

namespace chartnet::detail {

// Column-major 5x8 glyph: five column bytes, least significant bit is the top row.
const std::array<std::uint8_t, 5>& glyph(char c);

}  // namespace chartnet::detail
