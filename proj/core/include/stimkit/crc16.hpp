#pragma once

#include <cstdint>
#include <span>

namespace stimkit {

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
std::uint16_t crc16_ccitt(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace stimkit
