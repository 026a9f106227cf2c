#pragma once

// PK batch sampling (P identities x K images each) and horizontal-flip
// augmentation.

#include <cstdint>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/rng.hpp"
#include "cml/tensor.hpp"

namespace cml {

/// Sample P distinct identities uniformly without replacement, then K images
/// of each: without replacement when the identity has at least K images,
/// with replacement otherwise. Returns exactly P*K entry positions grouped by
/// identity.
inline std::vector<std::size_t> sample_pk_batch(const DatasetIndex& index, std::size_t p,
                                                std::size_t k, Rng& rng) {
    if (p == 0 || k == 0) throw ConfigError("sample_pk_batch: P and K must be positive");
    const auto by_id = index.by_identity();
    if (by_id.size() < 2)
        throw Error("sample_pk_batch: need at least 2 identities, index has " +
                    std::to_string(by_id.size()));
    if (by_id.size() < p)
        throw Error("sample_pk_batch: P=" + std::to_string(p) + " identities requested, index has " +
                    std::to_string(by_id.size()));

    std::vector<const std::vector<std::size_t>*> pools;
    pools.reserve(by_id.size());
    for (const auto& [identity, positions] : by_id) pools.push_back(&positions);

    // Partial Fisher-Yates over identity slots.
    std::vector<std::size_t> slots(pools.size());
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    for (std::size_t i = 0; i < p; ++i) {
        const std::size_t j = i + rng.uniform_index(slots.size() - i);
        std::swap(slots[i], slots[j]);
    }

    std::vector<std::size_t> batch;
    batch.reserve(p * k);
    for (std::size_t i = 0; i < p; ++i) {
        const std::vector<std::size_t>& pool = *pools[slots[i]];
        if (pool.size() >= k) {
            std::vector<std::size_t> order = pool;
            for (std::size_t t = 0; t < k; ++t) {
                const std::size_t j = t + rng.uniform_index(order.size() - t);
                std::swap(order[t], order[j]);
                batch.push_back(order[t]);
            }
        } else {
            for (std::size_t t = 0; t < k; ++t) batch.push_back(pool[rng.uniform_index(pool.size())]);
        }
    }
    return batch;
}

/// Reverse the width (last) axis of a C x H x W image.
inline Tensor flip_width(const Tensor& image) {
    if (image.rank() != 3)
        throw DimensionError("flip_width: image must be CxHxW, got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[(ch * h + i) * w + j] = image[(ch * h + i) * w + (w - 1 - j)];
    return out;
}

/// With probability 0.5, reverse the width axis. No resizing or cropping.
inline Tensor augment_flip(const Tensor& image, Rng& rng) {
    return rng.bernoulli(0.5) ? flip_width(image) : image;
}

} // namespace cml
