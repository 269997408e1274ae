#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pvpl/tensor.hpp"

namespace pvpl {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// CRC-32 (zlib polynomial) of a byte range.
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Canonical byte image of a tensor list: for each entry its name, shape and
/// little-endian f32 payload. Used for freeze checksums.
std::vector<std::uint8_t> serialize_named(const NamedTensors& tensors);

/// sha256_hex(serialize_named(tensors))
std::string checksum(const NamedTensors& tensors);

}  // namespace pvpl
