#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace statepipe::util {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);
// Digest of a file's bytes; empty string when the file does not exist.
std::string sha256_file(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> data);

} // namespace statepipe::util
