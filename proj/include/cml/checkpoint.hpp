#pragma once

// Checkpoint container: named float32 tensors plus the training iteration.
// Format (little-endian): magic "CMCK", u32 version=1, u64 iteration,
// u32 tensor count, then per tensor: u16 name length, UTF-8 name, u32 rank,
// rank x u64 dims, float32 payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cml/network.hpp"
#include "cml/serialize.hpp"

namespace cml {

struct Checkpoint {
    std::uint64_t iteration = 0;
    std::vector<std::pair<std::string, Tensor>> tensors; // insertion order preserved

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    BinaryWriter w(path);
    w.magic("CMCK");
    w.u32(1);
    w.u64(ckpt.iteration);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xFFFF) throw Error("checkpoint: tensor name too long");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        detail::write_tensor_body(w, t);
    }
    w.finish();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("CMCK");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw ParseError("checkpoint version mismatch: file has " + std::to_string(version) +
                         ", reader supports 1");
    Checkpoint ckpt;
    ckpt.iteration = r.u64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = r.u16();
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        ckpt.add(std::move(name), detail::read_tensor_body(r));
    }
    if (!r.at_end()) throw ParseError("trailing bytes after checkpoint payload");
    return ckpt;
}

/// Capture encoder parameters and running statistics (plus any extra named
/// tensors, e.g. classifier head parameters and meta entries).
inline Checkpoint snapshot_encoder(Encoder& encoder, std::uint64_t iteration) {
    Checkpoint ckpt;
    ckpt.iteration = iteration;
    for (const auto& p : encoder.parameters()) ckpt.add(p.name, p.node->value);
    for (const auto& s : encoder.running_stats()) ckpt.add(s.name, *s.tensor);
    return ckpt;
}

/// Write checkpoint tensors back into the encoder. Every parameter and
/// running statistic the encoder owns must be present with a matching shape.
inline void restore_encoder(Encoder& encoder, const Checkpoint& ckpt) {
    const auto apply = [&](const std::string& name, Tensor& dst) {
        const Tensor* src = ckpt.find(name);
        if (src == nullptr) throw Error("checkpoint: missing tensor \"" + name + "\"");
        if (src->shape() != dst.shape())
            throw DimensionError("checkpoint: tensor \"" + name + "\" has shape " +
                                 shape_str(src->shape()) + ", model wants " + shape_str(dst.shape()));
        dst = *src;
    };
    for (const auto& p : encoder.parameters()) apply(p.name, p.node->value);
    for (const auto& s : encoder.running_stats()) apply(s.name, *s.tensor);
}

} // namespace cml
