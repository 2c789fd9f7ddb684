#include "ctwso/husl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>

#include "ctwso/error.hpp"

namespace ctwso {

namespace {

constexpr std::size_t kHeaderSize = 14;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t get_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint32_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return v;
}

}  // namespace

std::string encode_husl(const HuSlice& img) {
    if (img.pixels.size() != img.width * img.height) {
        throw ShapeError("encode_husl: pixel count does not match width*height");
    }
    std::string out;
    out.reserve(kHeaderSize + 2 * img.pixels.size());
    out.append("HUSL");
    put_u16(out, kHuslVersion);
    put_u32(out, static_cast<std::uint32_t>(img.width));
    put_u32(out, static_cast<std::uint32_t>(img.height));
    for (double p : img.pixels) {
        const long rounded = std::lround(p);
        const long bounded = std::clamp<long>(rounded, std::numeric_limits<std::int16_t>::min(),
                                              std::numeric_limits<std::int16_t>::max());
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(bounded)));
    }
    return out;
}

HuSlice decode_husl(const std::string& bytes, std::size_t* clamped) {
    if (bytes.size() < kHeaderSize || bytes.compare(0, 4, "HUSL") != 0) {
        throw Error("not a HUSL slice (bad magic)");
    }
    const auto version = static_cast<std::uint16_t>(get_le(bytes, 4, 2));
    if (version != kHuslVersion) {
        throw Error("unsupported HUSL version " + std::to_string(version));
    }
    const std::size_t width = get_le(bytes, 6, 4);
    const std::size_t height = get_le(bytes, 10, 4);
    if (bytes.size() != kHeaderSize + 2 * width * height) {
        throw Error("HUSL payload size does not match " + std::to_string(width) + "x" +
                    std::to_string(height));
    }
    HuSlice img(width, height);
    for (std::size_t i = 0; i < width * height; ++i) {
        const auto raw = static_cast<std::uint16_t>(get_le(bytes, kHeaderSize + 2 * i, 2));
        img.pixels[i] = static_cast<double>(static_cast<std::int16_t>(raw));
    }
    const std::size_t n = clamp_to_recorded_range(img);
    if (clamped != nullptr) {
        *clamped = n;
    }
    return img;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(path.string(), "cannot open for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError(path.parent_path().string(), ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path.string(), "cannot open for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError(path.string(), "write failed");
    }
}

void write_husl(const std::filesystem::path& path, const HuSlice& img) {
    write_file_bytes(path, encode_husl(img));
}

HuSlice read_husl(const std::filesystem::path& path, std::size_t* clamped) {
    try {
        return decode_husl(read_file_bytes(path), clamped);
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(path.string(), e.what());
    }
}

}  // namespace ctwso
