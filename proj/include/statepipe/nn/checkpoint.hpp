#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "statepipe/nn/layers.hpp"

namespace statepipe::nn {

struct NamedTensor {
    std::string name;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// "SPW1", u32 version, u32 section count, then per section:
// u32 name length, name bytes, u32 rows, u32 cols, rows*cols f32. Little-endian.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

template <typename T>
std::vector<NamedTensor> to_tensors(std::span<const ConstNamedParam<T>> params);

// Names, order and shapes must match exactly.
template <typename T>
void load_tensors(std::span<const NamedTensor> tensors, std::span<const NamedParam<T>> params);

} // namespace statepipe::nn
