#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vars/dataset.hpp"
#include "vars/errors.hpp"
#include "vars/tensor.hpp"

namespace fs = std::filesystem;

namespace vars {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'V', 'F', 'C'};
constexpr std::size_t kHeaderBytes = 20;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct Header {
    std::uint32_t version, frames, height, width;
};

Tensor decode(const fs::path& file, const std::string& bytes, Header& header) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < kHeaderBytes)
        throw FormatError(file.string() + ": truncated MVFC header");
    if (std::memcmp(p, kMagic.data(), 4) != 0) throw FormatError(file.string() + ": bad magic, not an MVFC payload");
    header = {get_u32(p + 4), get_u32(p + 8), get_u32(p + 12), get_u32(p + 16)};
    if (header.version != kMvfcVersion)
        throw FormatError(file.string() + ": unsupported MVFC version " + std::to_string(header.version));
    if (header.frames == 0 || header.height == 0 || header.width == 0)
        throw FormatError(file.string() + ": MVFC header has a zero dimension");
    const std::uint64_t count = std::uint64_t{header.frames} * header.height * header.width;
    const std::uint64_t expected = kHeaderBytes + 4 * count;
    if (bytes.size() != expected) {
        throw FormatError(file.string() + ": payload holds " + std::to_string(bytes.size()) +
                          " bytes, header implies " + std::to_string(expected));
    }
    std::vector<double> values(count);
    const unsigned char* body = p + kHeaderBytes;
    for (std::uint64_t i = 0; i < count; ++i) {
        const float f = std::bit_cast<float>(get_u32(body + 4 * i));
        if (!(f >= 0.0f && f <= 1.0f))
            throw FormatError(file.string() + ": pixel value outside [0, 1] at index " + std::to_string(i));
        values[i] = f;
    }
    return Tensor({header.frames, header.height, header.width}, std::move(values));
}

std::string read_all(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open payload " + file.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void write_clip_frames(const fs::path& file, std::uint32_t frames, std::uint32_t height,
                       std::uint32_t width, std::span<const float> values) {
    if (values.size() != std::size_t{frames} * height * width)
        throw ShapeError("write_clip_frames: value count does not match header dimensions");
    std::string out;
    out.reserve(kHeaderBytes + 4 * values.size());
    out.append(kMagic.data(), kMagic.size());
    put_u32(out, kMvfcVersion);
    put_u32(out, frames);
    put_u32(out, height);
    put_u32(out, width);
    for (float v : values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("write_clip_frames: pixel value outside [0, 1]");
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    write_text_atomic(file, out);
}

Tensor read_clip_frames(const fs::path& file) {
    Header header{};
    return decode(file, read_all(file), header);
}

Tensor load_clip_frames(const Manifest& m, const ClipMeta& meta) {
    const fs::path file = m.resolve(meta);
    Header header{};
    Tensor t = decode(file, read_all(file), header);
    auto mismatch = [&](const char* what, std::uint32_t in_file, std::uint32_t in_manifest) {
        throw FormatError(file.string() + ": " + what + " mismatch, payload header says " +
                          std::to_string(in_file) + " but manifest says " + std::to_string(in_manifest));
    };
    if (header.frames != meta.frame_count) mismatch("frame_count", header.frames, meta.frame_count);
    if (header.height != meta.height) mismatch("height", header.height, meta.height);
    if (header.width != meta.width) mismatch("width", header.width, meta.width);
    return t;
}

}  // namespace vars
