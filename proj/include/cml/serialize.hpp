#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cml/errors.hpp"
#include "cml/tensor.hpp"

namespace cml {

// All container formats are little-endian and written byte-by-byte, so files
// are identical across platforms.

inline constexpr std::uint32_t kMaxRank = 32;
inline constexpr std::uint64_t kMaxElements = 1ULL << 34; // 16 Gi values

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw Error("cannot open for writing: " + path.string());
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }

    void u16(std::uint16_t v) { write_le(v); }
    void u32(std::uint32_t v) { write_le(v); }
    void u64(std::uint64_t v) { write_le(v); }
    void i32(std::int32_t v) { write_le(static_cast<std::uint32_t>(v)); }
    void i64(std::int64_t v) { write_le(static_cast<std::uint64_t>(v)); }
    void f32(float v) { write_le(std::bit_cast<std::uint32_t>(v)); }

    void magic(const char m[5]) { bytes(m, 4); }

    void finish() {
        out_.flush();
        if (!out_) throw Error("write failed");
    }

private:
    template <typename T>
    void write_le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
        bytes(buf, sizeof(T));
    }

    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open for reading: " + path.string());
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void bytes(void* p, std::size_t n) {
        if (pos_ + n > buf_.size()) throw ParseError("truncated file");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::uint16_t u16() { return read_le<std::uint16_t>(); }
    std::uint32_t u32() { return read_le<std::uint32_t>(); }
    std::uint64_t u64() { return read_le<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(read_le<std::uint32_t>()); }
    std::int64_t i64() { return static_cast<std::int64_t>(read_le<std::uint64_t>()); }
    float f32() { return std::bit_cast<float>(read_le<std::uint32_t>()); }

    void expect_magic(const char m[5]) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw ParseError(std::string("bad magic: expected \"") + m + "\"");
    }

    bool at_end() const { return pos_ == buf_.size(); }

private:
    template <typename T>
    T read_le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
        return v;
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

namespace detail {

inline void write_tensor_body(BinaryWriter& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) w.u64(t.dim(i));
    for (std::size_t i = 0; i < t.numel(); ++i) w.f32(static_cast<float>(t[i]));
}

inline Tensor read_tensor_body(BinaryReader& r) {
    const std::uint32_t rank = r.u32();
    if (rank > kMaxRank) throw ParseError("rank overflow: " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint64_t d = r.u64();
        if (d == 0) throw ParseError("zero dimension");
        if (d > kMaxElements || total > kMaxElements / d)
            throw ParseError("size overflow");
        total *= d;
        shape[i] = static_cast<std::size_t>(d);
    }
    Tensor t(shape);
    for (std::uint64_t i = 0; i < total; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(r.f32());
    return t;
}

} // namespace detail

/// Tensor container: magic "CMLT", u32 version=1, u32 rank, rank x u64 dims,
/// then row-major float32 payload. Round-trips are bit-exact at float32.
inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    BinaryWriter w(path);
    w.magic("CMLT");
    w.u32(1);
    detail::write_tensor_body(w, t);
    w.finish();
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("CMLT");
    const std::uint32_t version = r.u32();
    if (version != 1) throw ParseError("unsupported tensor file version " + std::to_string(version));
    Tensor t = detail::read_tensor_body(r);
    if (!r.at_end()) throw ParseError("trailing bytes after tensor payload");
    return t;
}

} // namespace cml
