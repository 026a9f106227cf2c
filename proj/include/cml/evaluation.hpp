#pragma once

// Embedding extraction, distance computation, the single-shot cross-view
// re-identification protocol (CMC / mAP), and the embedding file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cml/checkpoint.hpp"
#include "cml/dataset.hpp"
#include "cml/log.hpp"
#include "cml/network.hpp"
#include "cml/serialize.hpp"
#include "cml/tensor.hpp"

namespace cml {

struct EmbeddingRecord {
    std::int64_t identity = 0; // negative = distractor, excluded from scoring
    std::int32_t camera = 1;
    std::vector<double> vector;
};

enum class Metric { cosine_distance, euclidean };

inline Metric parse_metric(const std::string& s) {
    if (s == "cosine") return Metric::cosine_distance;
    if (s == "euclidean") return Metric::euclidean;
    throw ConfigError("unknown metric \"" + s + "\" (want cosine or euclidean)");
}

namespace detail {

inline double cosine_distance(const double* a, const double* b, std::size_t d,
                              const char* who_a, std::size_t ia, const char* who_b, std::size_t ib) {
    const double na = l2_norm(a, d), nb = l2_norm(b, d);
    if (na == 0.0)
        throw Error(std::string("cosine distance: ") + who_a + " record " + std::to_string(ia) +
                    " has zero norm");
    if (nb == 0.0)
        throw Error(std::string("cosine distance: ") + who_b + " record " + std::to_string(ib) +
                    " has zero norm");
    return 1.0 - dot(a, b, d) / (na * nb);
}

inline double euclidean_distance(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return std::sqrt(s);
}

} // namespace detail

/// n x m distance matrix; smaller means more similar for both metrics.
/// Each row is computed independently, so the result is identical for any
/// thread count.
inline Tensor distance_matrix(const Tensor& queries, const Tensor& gallery, Metric metric,
                              std::size_t threads = 1) {
    check_matrix(queries, "distance_matrix");
    check_matrix(gallery, "distance_matrix");
    if (queries.dim(1) != gallery.dim(1))
        throw DimensionError("distance_matrix: dims disagree: " + shape_str(queries.shape()) +
                             " vs " + shape_str(gallery.shape()));
    const std::size_t n = queries.dim(0), m = gallery.dim(0), d = queries.dim(1);
    Tensor out({n, m});
    const auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double* q = queries.data() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double* g = gallery.data() + j * d;
                out[i * m + j] = metric == Metric::cosine_distance
                                     ? detail::cosine_distance(q, g, d, "query", i, "gallery", j)
                                     : detail::euclidean_distance(q, g, d);
            }
        }
    };
    if (threads <= 1 || n < 2) {
        worker(0, n);
    } else {
        const std::size_t t = std::min(threads, n);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < t; ++w) {
            const std::size_t begin = n * w / t, end = n * (w + 1) / t;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

struct QueryResult {
    std::size_t query_index = 0;
    double average_precision = 0.0;
    std::size_t first_hit_rank = 0;          // 1-based
    std::vector<std::size_t> ranked_gallery; // gallery indices, best first
};

struct EvalReport {
    std::vector<double> cmc; // ranks 1..max_rank
    double map = 0.0;
    std::size_t num_valid_queries = 0;
    std::size_t num_skipped_queries = 0;
    std::vector<QueryResult> per_query;
};

/// Single-shot cross-view protocol. Per query: gallery records sharing the
/// query's identity AND camera are excluded, as are distractors (identity<0);
/// remaining candidates are ranked by ascending distance with ties broken by
/// gallery input order. A match must carry the query identity (necessarily
/// from another camera). Queries without any possible match are skipped and
/// counted. CMC@k is the fraction of valid queries whose first match ranks
/// <= k; AP is un-interpolated average precision.
inline EvalReport evaluate_single_shot(const std::vector<EmbeddingRecord>& queries,
                                       const std::vector<EmbeddingRecord>& gallery, Metric metric,
                                       std::size_t max_rank = 50) {
    EvalReport report;
    report.cmc.assign(max_rank, 0.0);
    std::vector<double> first_hit_counts(max_rank, 0.0);
    double ap_sum = 0.0;

    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const EmbeddingRecord& q = queries[qi];
        if (q.identity < 0) {
            ++report.num_skipped_queries;
            log_debug("query " + std::to_string(qi) + " is a distractor, skipped");
            continue;
        }
        std::vector<std::size_t> candidates;
        std::size_t total_relevant = 0;
        for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
            const EmbeddingRecord& g = gallery[gi];
            if (g.identity < 0) continue;
            if (g.identity == q.identity && g.camera == q.camera) continue;
            candidates.push_back(gi);
            if (g.identity == q.identity) ++total_relevant;
        }
        if (total_relevant == 0 || candidates.empty()) {
            ++report.num_skipped_queries;
            log_info("query " + std::to_string(qi) + " has no cross-camera match, skipped");
            continue;
        }

        std::vector<double> dist(candidates.size());
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const EmbeddingRecord& g = gallery[candidates[c]];
            if (g.vector.size() != q.vector.size())
                throw DimensionError("evaluate: embedding dims disagree (" +
                                     std::to_string(q.vector.size()) + " vs " +
                                     std::to_string(g.vector.size()) + ")");
            dist[c] = metric == Metric::cosine_distance
                          ? detail::cosine_distance(q.vector.data(), g.vector.data(),
                                                    q.vector.size(), "query", qi, "gallery",
                                                    candidates[c])
                          : detail::euclidean_distance(q.vector.data(), g.vector.data(),
                                                       q.vector.size());
        }
        std::vector<std::size_t> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

        QueryResult qr;
        qr.query_index = qi;
        qr.ranked_gallery.reserve(order.size());
        std::size_t hits = 0;
        double ap = 0.0;
        std::size_t first_hit = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const std::size_t gi = candidates[order[pos]];
            qr.ranked_gallery.push_back(gi);
            if (gallery[gi].identity == q.identity) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
                if (first_hit == 0) first_hit = pos + 1;
            }
        }
        ap /= static_cast<double>(total_relevant);
        qr.average_precision = ap;
        qr.first_hit_rank = first_hit;
        ap_sum += ap;
        if (first_hit >= 1 && first_hit <= max_rank) first_hit_counts[first_hit - 1] += 1.0;
        ++report.num_valid_queries;
        report.per_query.push_back(std::move(qr));
    }

    if (report.num_valid_queries > 0) {
        double cum = 0.0;
        for (std::size_t k = 0; k < max_rank; ++k) {
            cum += first_hit_counts[k];
            report.cmc[k] = cum / static_cast<double>(report.num_valid_queries);
        }
        report.map = ap_sum / static_cast<double>(report.num_valid_queries);
    }
    return report;
}

struct TopkEntry {
    double distance = 0.0;
    std::size_t gallery_index = 0;
};

struct TopkResult {
    std::vector<TopkEntry> most_similar;    // ascending distance
    std::vector<TopkEntry> most_dissimilar; // descending distance
};

/// The k closest and k farthest gallery records for one probe vector.
inline TopkResult topk_query(const std::vector<double>& probe,
                             const std::vector<EmbeddingRecord>& gallery, Metric metric,
                             std::size_t k) {
    if (k > gallery.size())
        throw Error("topk_query: k=" + std::to_string(k) + " exceeds gallery size " +
                    std::to_string(gallery.size()));
    std::vector<double> dist(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        if (gallery[i].vector.size() != probe.size())
            throw DimensionError("topk_query: embedding dims disagree");
        dist[i] = metric == Metric::cosine_distance
                      ? detail::cosine_distance(probe.data(), gallery[i].vector.data(), probe.size(),
                                                "probe", 0, "gallery", i)
                      : detail::euclidean_distance(probe.data(), gallery[i].vector.data(),
                                                   probe.size());
    }
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    TopkResult result;
    for (std::size_t i = 0; i < k; ++i)
        result.most_similar.push_back({dist[order[i]], order[i]});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = order[order.size() - 1 - i];
        result.most_dissimilar.push_back({dist[idx], idx});
    }
    return result;
}

/// Stack equally shaped samples into one [N] + per_sample batch.
inline Tensor stack_batch(const std::vector<Tensor>& samples, const Shape& per_sample) {
    if (samples.empty()) throw Error("stack_batch: no samples");
    const std::size_t want = shape_numel(per_sample);
    Shape batched = per_sample;
    batched.insert(batched.begin(), samples.size());
    Tensor out(batched);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].numel() != want)
            throw DimensionError("stack_batch: sample " + std::to_string(i) + " has " +
                                 std::to_string(samples[i].numel()) + " values, expected " +
                                 std::to_string(want));
        std::copy(samples[i].values().begin(), samples[i].values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(i * want));
    }
    return out;
}

/// Inference-mode embeddings for every index entry, input order preserved.
/// Batches are fixed-size slices of the index, each processed independently,
/// so results are identical for any thread count.
inline std::vector<EmbeddingRecord> extract_embeddings(Encoder& encoder, const DatasetIndex& index,
                                                       const DataSource& source,
                                                       std::size_t batch_size = 32,
                                                       std::size_t threads = 1) {
    if (batch_size == 0) throw ConfigError("extract_embeddings: batch_size must be > 0");
    const std::size_t n = index.entries.size();
    std::vector<EmbeddingRecord> records(n);
    const std::size_t num_batches = (n + batch_size - 1) / batch_size;
    const Shape per_sample = encoder.input_shape();
    const std::size_t d = encoder.embedding_dim();

    const auto run_batch = [&](std::size_t b) {
        const std::size_t begin = b * batch_size, end = std::min(n, begin + batch_size);
        std::vector<Tensor> samples;
        samples.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) samples.push_back(source.load(index.entries[i]));
        Tensor batch = stack_batch(samples, per_sample);
        Tensor embedded = forward_embed(encoder, batch, Mode::inference);
        for (std::size_t i = begin; i < end; ++i) {
            EmbeddingRecord& r = records[i];
            r.identity = index.entries[i].identity;
            r.camera = index.entries[i].camera;
            r.vector.assign(embedded.data() + (i - begin) * d, embedded.data() + (i - begin + 1) * d);
        }
    };

    if (threads <= 1 || num_batches < 2) {
        for (std::size_t b = 0; b < num_batches; ++b) run_batch(b);
    } else {
        std::vector<std::thread> pool;
        const std::size_t t = std::min(threads, num_batches);
        for (std::size_t w = 0; w < t; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t b = w; b < num_batches; b += t) run_batch(b);
            });
        for (auto& th : pool) th.join();
    }
    return records;
}

// Embedding file: magic "CMLE", u32 version=1, u64 count, u32 dim, then per
// record i64 identity, i32 camera, dim x float32.

inline void save_embeddings(const std::filesystem::path& path,
                            const std::vector<EmbeddingRecord>& records) {
    const std::size_t dim = records.empty() ? 0 : records.front().vector.size();
    for (const auto& r : records)
        if (r.vector.size() != dim) throw DimensionError("save_embeddings: inconsistent dims");
    BinaryWriter w(path);
    w.magic("CMLE");
    w.u32(1);
    w.u64(records.size());
    w.u32(static_cast<std::uint32_t>(dim));
    for (const auto& r : records) {
        w.i64(r.identity);
        w.i32(r.camera);
        for (double v : r.vector) w.f32(static_cast<float>(v));
    }
    w.finish();
}

inline std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("CMLE");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw ParseError("embedding file version mismatch: " + std::to_string(version));
    const std::uint64_t count = r.u64();
    const std::uint32_t dim = r.u32();
    if (count > kMaxElements || (count > 0 && dim > kMaxElements / count))
        throw ParseError("size overflow");
    std::vector<EmbeddingRecord> records(static_cast<std::size_t>(count));
    for (auto& rec : records) {
        rec.identity = r.i64();
        rec.camera = r.i32();
        rec.vector.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) rec.vector[j] = static_cast<double>(r.f32());
    }
    if (!r.at_end()) throw ParseError("trailing bytes after embedding payload");
    return records;
}

/// JSON export with keys cmc (array over ranks 1..R), map, num_valid_queries.
inline std::string report_to_json(const EvalReport& report) {
    std::ostringstream os;
    os.precision(12);
    os << "{\"cmc\": [";
    for (std::size_t i = 0; i < report.cmc.size(); ++i) {
        if (i) os << ", ";
        os << report.cmc[i];
    }
    os << "], \"map\": " << report.map
       << ", \"num_valid_queries\": " << report.num_valid_queries << "}";
    return os.str();
}

} // namespace cml
