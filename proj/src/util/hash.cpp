#include "statepipe/util/hash.hpp"

#include <filesystem>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "statepipe/util/binary.hpp"

namespace statepipe::util {

std::string sha256_hex(std::span<const std::uint8_t> data) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(data.data(), data.size(), digest);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char b : digest) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    return sha256_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

std::string sha256_file(const std::string& path) {
    if (!std::filesystem::is_regular_file(path)) return {};
    const auto bytes = read_file_bytes(path);
    return sha256_hex(std::span<const std::uint8_t>(bytes));
}

std::string base64_encode(std::span<const std::uint8_t> data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                  static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

} // namespace statepipe::util
