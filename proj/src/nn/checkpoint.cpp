#include "statepipe/nn/checkpoint.hpp"

#include <cmath>

#include "statepipe/util/binary.hpp"

namespace statepipe::nn {

namespace {
constexpr std::string_view kMagic = "SPW1";
constexpr std::uint32_t kVersion = 1;
} // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
    util::ByteWriter w;
    w.raw(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.data.size() != static_cast<std::size_t>(t.rows) * t.cols)
            throw ShapeError("checkpoint tensor '" + t.name + "' holds " +
                             std::to_string(t.data.size()) + " values for " +
                             std::to_string(t.rows) + "x" + std::to_string(t.cols));
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.raw(t.name);
        w.u32(t.rows);
        w.u32(t.cols);
        for (float v : t.data) w.f32(v);
    }
    return std::move(w).take();
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    util::ByteReader r(bytes);
    if (r.raw(4, "magic") != kMagic) throw FormatError("not a checkpoint file (bad magic)", 0);
    const auto version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const auto count = r.u32("section count");
    std::vector<NamedTensor> out;
    for (std::uint32_t s = 0; s < count; ++s) {
        NamedTensor t;
        const auto name_len = r.u32("section name length");
        t.name = r.raw(name_len, "section name");
        t.rows = r.u32("section rows");
        t.cols = r.u32("section cols");
        const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.cols;
        if (n * 4 > r.remaining())
            throw FormatError("truncated payload for section '" + t.name + "'", r.offset());
        t.data.resize(n);
        for (auto& v : t.data) {
            const auto at = r.offset();
            v = r.f32("section payload");
            if (!std::isfinite(v))
                throw FormatError("non-finite value in section '" + t.name + "'", at);
        }
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last section", r.offset());
    return out;
}

void write_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
    const auto bytes = encode_checkpoint(tensors);
    util::write_file_bytes(path, bytes);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    const auto bytes = util::read_file_bytes(path);
    return decode_checkpoint(bytes);
}

template <typename T>
std::vector<NamedTensor> to_tensors(std::span<const ConstNamedParam<T>> params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        const auto& m = p.param->value;
        NamedTensor t{p.name, static_cast<std::uint32_t>(m.rows()),
                      static_cast<std::uint32_t>(m.cols()), {}};
        t.data.reserve(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) t.data.push_back(static_cast<float>(m[i]));
        out.push_back(std::move(t));
    }
    return out;
}

template <typename T>
void load_tensors(std::span<const NamedTensor> tensors, std::span<const NamedParam<T>> params) {
    if (tensors.size() != params.size())
        throw ShapeError("checkpoint has " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        auto& m = params[i].param->value;
        if (t.name != params[i].name)
            throw ShapeError("checkpoint tensor " + std::to_string(i) + " is '" + t.name +
                             "', model expects '" + params[i].name + "'");
        if (t.rows != m.rows() || t.cols != m.cols())
            throw ShapeError("checkpoint tensor '" + t.name + "' is " + std::to_string(t.rows) +
                             "x" + std::to_string(t.cols) + ", model expects " + shape_str(m));
        for (std::size_t j = 0; j < m.size(); ++j) m[j] = static_cast<T>(t.data[j]);
    }
}

template std::vector<NamedTensor> to_tensors(std::span<const ConstNamedParam<float>>);
template std::vector<NamedTensor> to_tensors(std::span<const ConstNamedParam<double>>);
template void load_tensors(std::span<const NamedTensor>, std::span<const NamedParam<float>>);
template void load_tensors(std::span<const NamedTensor>, std::span<const NamedParam<double>>);

} // namespace statepipe::nn
