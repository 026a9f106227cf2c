#pragma once

// Synthetic re-identification data: per identity a unit mean direction, with
// samples drawn as normalize(mean + spread * noise) and pushed through one
// shared random linear map so raw inputs are not unit vectors and an encoder
// has to recover the structure. Scaled to run every loss and the full
// evaluation path in seconds.

#include <cstdint>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/rng.hpp"
#include "cml/tensor.hpp"

namespace cml {

struct SyntheticSpec {
    std::size_t num_identities = 20;
    std::size_t samples_per_identity = 30;
    std::size_t input_dim = 32;
    double cluster_spread = 0.15;
    std::size_t heldout_identities = 0;
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    SyntheticSpec spec;
    DatasetIndex train_index;   // identities [0, n - heldout)
    DatasetIndex heldout_index; // identities [n - heldout, n)
    std::vector<Tensor> samples;     // after the linear map; what encoders see
    std::vector<Tensor> raw_samples; // pre-map unit-ish vectors, for diagnostics

    MemorySource source() const { return MemorySource(&samples); }
};

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.cluster_spread <= 0.0)
        throw ConfigError("synthetic: cluster_spread must be > 0");
    if (spec.heldout_identities >= spec.num_identities)
        throw ConfigError("synthetic: heldout_identities must be < num_identities");
    const std::size_t d = spec.input_dim;

    Rng rng = Rng(spec.seed).substream(streams::synthetic);

    // Unit mean direction per identity.
    std::vector<Tensor> means;
    means.reserve(spec.num_identities);
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
        Tensor m({d});
        for (std::size_t j = 0; j < d; ++j) m[j] = rng.normal();
        const double nrm = l2_norm(m.data(), d);
        for (std::size_t j = 0; j < d; ++j) m[j] /= nrm;
        means.push_back(std::move(m));
    }

    // One fixed linear map shared across identities, entries N(0, 1/d).
    Tensor map({d, d});
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < map.numel(); ++i) map[i] = rng.normal() * map_scale;

    SyntheticDataset out;
    out.spec = spec;
    const std::size_t first_heldout = spec.num_identities - spec.heldout_identities;
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
        for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
            Tensor raw({d});
            for (std::size_t j = 0; j < d; ++j)
                raw[j] = means[id][j] + spec.cluster_spread * rng.normal();
            const double nrm = l2_norm(raw.data(), d);
            for (std::size_t j = 0; j < d; ++j) raw[j] /= nrm;

            Tensor mapped({d});
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += map[i * d + j] * raw[j];
                mapped[i] = acc;
            }

            DatasetEntry entry;
            entry.synthetic_id = static_cast<std::int64_t>(out.samples.size());
            entry.identity = static_cast<std::int64_t>(id);
            entry.camera = rng.bernoulli(0.5) ? 1 : 2;
            (id < first_heldout ? out.train_index : out.heldout_index).entries.push_back(entry);

            out.raw_samples.push_back(std::move(raw));
            out.samples.push_back(std::move(mapped));
        }
    }
    return out;
}

} // namespace cml
