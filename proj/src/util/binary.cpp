#include "statepipe/util/binary.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace statepipe::util {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string temp_sibling(const std::string& path) {
    static std::atomic<unsigned> counter{0};
    std::ostringstream ss;
    ss << path << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
       << counter.fetch_add(1);
    return ss.str();
}

void write_atomic(const std::string& path, const char* data, std::size_t size) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const auto tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(data, static_cast<std::streamsize>(size));
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename into '" + path + "': " + ec.message());
    }
}

} // namespace

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    write_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_file_text(const std::string& path, std::string_view text) {
    write_atomic(path, text.data(), text.size());
}

} // namespace statepipe::util
