#pragma once

// Binary netpbm ingestion (PPM P6 / PGM P5, 8-bit, maxval 255) and bilinear
// rescaling to the fixed 3x128x64 network input.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/errors.hpp"
#include "cml/tensor.hpp"

namespace cml {

struct LabeledImage {
    std::int64_t identity = 0;
    std::int32_t camera = 1;
    Tensor pixels; // 3 x H x W, values in [0, 1]
};

inline constexpr std::size_t kInputHeight = 128;
inline constexpr std::size_t kInputWidth = 64;

struct RawImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0; // 1 (P5) or 3 (P6)
    std::vector<std::uint8_t> data; // row-major, interleaved channels
};

/// Decode a binary PPM (P6) or PGM (P5). Header is magic, width, height,
/// maxval separated by whitespace runs, then exactly one whitespace byte
/// before the payload. Maxval must be 255.
inline RawImage decode_netpbm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    const auto at_end = [&] { return pos >= bytes.size(); };
    const auto is_space = [](std::uint8_t c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    const auto skip_space = [&] {
        while (!at_end() && is_space(bytes[pos])) ++pos;
    };
    const auto read_uint = [&]() -> std::size_t {
        skip_space();
        if (at_end() || bytes[pos] < '0' || bytes[pos] > '9')
            throw ParseError("netpbm: malformed header (expected number)");
        std::size_t v = 0;
        while (!at_end() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1u << 24)) throw ParseError("netpbm: header value out of range");
            ++pos;
        }
        return v;
    };

    if (bytes.size() < 2) throw ParseError("netpbm: truncated header");
    RawImage img;
    if (bytes[0] == 'P' && bytes[1] == '6') img.channels = 3;
    else if (bytes[0] == 'P' && bytes[1] == '5') img.channels = 1;
    else throw ParseError("netpbm: bad magic (want P6 or P5)");
    pos = 2;

    img.width = read_uint();
    img.height = read_uint();
    const std::size_t maxval = read_uint();
    if (maxval != 255)
        throw ParseError("netpbm: unsupported maxval " + std::to_string(maxval) + " (want 255)");
    if (img.width == 0 || img.height == 0) throw ParseError("netpbm: zero image dimension");
    if (at_end() || !is_space(bytes[pos])) throw ParseError("netpbm: malformed header (expected whitespace)");
    ++pos; // single whitespace byte before payload

    const std::size_t want = img.width * img.height * img.channels;
    if (bytes.size() - pos < want)
        throw ParseError("netpbm: truncated payload (" + std::to_string(bytes.size() - pos) +
                         " of " + std::to_string(want) + " bytes)");
    img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + want));
    return img;
}

inline RawImage decode_netpbm_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_netpbm(bytes);
}

/// Bilinear rescale with half-pixel-center alignment and edge replication:
/// source coordinate of output pixel i is (i + 0.5) * in/out - 0.5. Gray
/// inputs are replicated to three channels; output values are byte/255 in
/// [0, 1], channel-major (3 x out_h x out_w).
inline Tensor resize_bilinear(const RawImage& img, std::size_t out_h, std::size_t out_w) {
    Tensor out({3, out_h, out_w});
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    const std::size_t c_in = img.channels;

    std::vector<std::size_t> x0(out_w), x1(out_w);
    std::vector<double> fx(out_w);
    for (std::size_t j = 0; j < out_w; ++j) {
        const double s = (static_cast<double>(j) + 0.5) * sx - 0.5;
        const double fl = std::floor(s);
        const std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(fl);
        fx[j] = s - fl;
        x0[j] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i0, 0, static_cast<std::ptrdiff_t>(img.width) - 1));
        x1[j] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i0 + 1, 0, static_cast<std::ptrdiff_t>(img.width) - 1));
    }

    for (std::size_t i = 0; i < out_h; ++i) {
        const double s = (static_cast<double>(i) + 0.5) * sy - 0.5;
        const double fl = std::floor(s);
        const std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(fl);
        const double fy = s - fl;
        const std::size_t y0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i0, 0, static_cast<std::ptrdiff_t>(img.height) - 1));
        const std::size_t y1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i0 + 1, 0, static_cast<std::ptrdiff_t>(img.height) - 1));
        for (std::size_t j = 0; j < out_w; ++j) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const std::size_t src_ch = c_in == 1 ? 0 : ch;
                const auto px = [&](std::size_t y, std::size_t x) {
                    return static_cast<double>(img.data[(y * img.width + x) * c_in + src_ch]) / 255.0;
                };
                const double top = px(y0, x0[j]) * (1.0 - fx[j]) + px(y0, x1[j]) * fx[j];
                const double bot = px(y1, x0[j]) * (1.0 - fx[j]) + px(y1, x1[j]) * fx[j];
                out.at({ch, i, j}) = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    return out;
}

/// Decode + rescale one indexed file to the 3x128x64 [0,1] network input.
inline LabeledImage load_image(const DatasetEntry& entry) {
    LabeledImage img;
    img.identity = entry.identity;
    img.camera = entry.camera;
    img.pixels = resize_bilinear(decode_netpbm_file(entry.path), kInputHeight, kInputWidth);
    return img;
}

/// File-backed data source feeding the training/evaluation pipelines.
class DirectorySource final : public DataSource {
public:
    Tensor load(const DatasetEntry& entry) const override { return load_image(entry).pixels; }
};

} // namespace cml
