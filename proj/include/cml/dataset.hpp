#pragma once

// Dataset indexing. Entries reference either a file on disk (Market-1501
// style naming: <identity>_c<camera>_*.ppm) or an in-memory synthetic sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cml/errors.hpp"
#include "cml/log.hpp"
#include "cml/rng.hpp"
#include "cml/tensor.hpp"

namespace cml {

struct DatasetEntry {
    std::string path;            // empty for synthetic entries
    std::int64_t synthetic_id = -1; // index into a sample store, -1 for files
    std::int64_t identity = 0;   // negative = distractor
    std::int32_t camera = 1;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    std::size_t ignored_files = 0;

    std::map<std::int64_t, std::vector<std::size_t>> by_identity() const {
        std::map<std::int64_t, std::vector<std::size_t>> m;
        for (std::size_t i = 0; i < entries.size(); ++i) m[entries[i].identity].push_back(i);
        return m;
    }

    std::size_t num_identities() const { return by_identity().size(); }
};

/// Parse "<identity>_c<camera>_*.ppm". Returns false for anything else.
inline bool parse_reid_filename(const std::string& filename, std::int64_t& identity,
                                std::int32_t& camera) {
    const auto fail = [] { return false; };
    if (filename.size() < 5 || filename.substr(filename.size() - 4) != ".ppm") return fail();
    std::size_t pos = 0;
    bool neg = false;
    if (pos < filename.size() && filename[pos] == '-') {
        neg = true;
        ++pos;
    }
    std::size_t digits_start = pos;
    while (pos < filename.size() && std::isdigit(static_cast<unsigned char>(filename[pos]))) ++pos;
    if (pos == digits_start) return fail();
    std::int64_t id = 0;
    for (std::size_t i = digits_start; i < pos; ++i) id = id * 10 + (filename[i] - '0');
    if (pos + 2 >= filename.size() || filename[pos] != '_' || filename[pos + 1] != 'c') return fail();
    pos += 2;
    digits_start = pos;
    while (pos < filename.size() && std::isdigit(static_cast<unsigned char>(filename[pos]))) ++pos;
    if (pos == digits_start) return fail();
    std::int64_t cam = 0;
    for (std::size_t i = digits_start; i < pos; ++i) cam = cam * 10 + (filename[i] - '0');
    if (cam < 1) return fail();
    if (pos >= filename.size() || filename[pos] != '_') return fail();
    identity = neg ? -id : id;
    camera = static_cast<std::int32_t>(cam);
    return true;
}

/// Recursively index *.ppm files following the naming convention; everything
/// else is ignored with a warning count. Entries are sorted by path, so the
/// same directory always yields the same index.
inline DatasetIndex scan_directory(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::exists(root)) throw Error("dataset root does not exist: " + root.string());
    DatasetIndex index;
    std::error_code ec;
    for (auto it = fs::recursive_directory_iterator(root, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) throw Error("cannot read dataset root " + root.string() + ": " + ec.message());
        if (!it->is_regular_file()) continue;
        const fs::path& p = it->path();
        DatasetEntry entry;
        if (parse_reid_filename(p.filename().string(), entry.identity, entry.camera)) {
            entry.path = p.string();
            index.entries.push_back(std::move(entry));
        } else {
            ++index.ignored_files;
            log_debug("ignoring non-matching file " + p.string());
        }
    }
    if (ec) throw Error("cannot read dataset root " + root.string() + ": " + ec.message());
    if (index.entries.empty())
        throw Error("empty dataset: no files matching <identity>_c<camera>_*.ppm under " +
                    root.string());
    std::sort(index.entries.begin(), index.entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
    if (index.ignored_files > 0)
        log_info(std::to_string(index.ignored_files) + " non-matching files ignored");
    return index;
}

/// Identity-stratified split: per identity, ceil(fraction * count) images move
/// to the validation index (none when the identity has a single image, and
/// always at least one training image remains). Deterministic under seed.
inline std::pair<DatasetIndex, DatasetIndex> split_train_val(const DatasetIndex& index,
                                                             double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split_train_val: fraction must be in (0,1), got " +
                          std::to_string(fraction));
    Rng rng = Rng(seed).substream(streams::split);
    DatasetIndex train, val;
    for (const auto& [identity, positions] : index.by_identity()) {
        std::vector<std::size_t> order = positions;
        rng.shuffle(order);
        std::size_t n_val = 0;
        if (order.size() >= 2) {
            n_val = static_cast<std::size_t>(
                std::ceil(fraction * static_cast<double>(order.size())));
            n_val = std::min(n_val, order.size() - 1);
        }
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < n_val ? val : train).entries.push_back(index.entries[order[i]]);
        }
    }
    return {std::move(train), std::move(val)};
}

/// Uniform access to sample tensors behind index entries.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual Tensor load(const DatasetEntry& entry) const = 0;
};

/// Serves in-memory tensors by synthetic id.
class MemorySource final : public DataSource {
public:
    explicit MemorySource(const std::vector<Tensor>* samples) : samples_(samples) {}

    Tensor load(const DatasetEntry& entry) const override {
        if (entry.synthetic_id < 0 ||
            static_cast<std::size_t>(entry.synthetic_id) >= samples_->size())
            throw Error("memory source: bad sample id " + std::to_string(entry.synthetic_id));
        return (*samples_)[static_cast<std::size_t>(entry.synthetic_id)];
    }

private:
    const std::vector<Tensor>* samples_;
};

} // namespace cml
