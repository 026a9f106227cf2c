#pragma once

// Training loop: PK sampling, flip augmentation, Adam with per-parameter
// weight decay, periodic validation with best-checkpoint retention, and
// structured CSV logging.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cml/adam.hpp"
#include "cml/checkpoint.hpp"
#include "cml/evaluation.hpp"
#include "cml/image.hpp"
#include "cml/losses.hpp"
#include "cml/network.hpp"
#include "cml/sampler.hpp"

namespace cml {

enum class LossKind { cosine_softmax, softmax, triplet_soft, triplet_hard, magnet };

inline LossKind parse_loss(const std::string& s) {
    if (s == "cosine-softmax") return LossKind::cosine_softmax;
    if (s == "softmax") return LossKind::softmax;
    if (s == "triplet-soft") return LossKind::triplet_soft;
    if (s == "triplet-hard") return LossKind::triplet_hard;
    if (s == "magnet") return LossKind::magnet;
    throw ConfigError("unknown loss \"" + s +
                      "\" (one of: cosine-softmax, softmax, triplet-soft, triplet-hard, magnet)");
}

inline const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::cosine_softmax: return "cosine-softmax";
        case LossKind::softmax: return "softmax";
        case LossKind::triplet_soft: return "triplet-soft";
        case LossKind::triplet_hard: return "triplet-hard";
        case LossKind::magnet: return "magnet";
    }
    return "?";
}

/// Gallery ranking metric that matches the loss: cosine distance for the
/// softmax classifiers, Euclidean for triplet and magnet.
inline Metric metric_for_loss(LossKind k) {
    return (k == LossKind::cosine_softmax || k == LossKind::softmax) ? Metric::cosine_distance
                                                                     : Metric::euclidean;
}

struct EncoderSpec {
    enum class Arch { paper, toy };
    Arch arch = Arch::toy;
    std::size_t embedding_dim = 0;        // 0 = default (paper 128, toy 32)
    std::vector<std::size_t> hidden = {64, 64}; // toy only
    std::size_t input_dim = 0;            // toy only; 0 = infer from data
    int final_l2 = -1;                    // -1 = follow the loss, 0 = off, 1 = on
};

struct TrainConfig {
    std::uint64_t iterations = 100000;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t images_per_identity = 4; // K
    double weight_decay_network = 1e-8;
    double weight_decay_kappa = 1e-1;
    double dropout_p = 0.4;
    bool flip_augment = true;
    LossKind loss = LossKind::cosine_softmax;
    std::uint64_t seed = 0;
    double val_fraction = 0.10;
    std::size_t log_interval = 50;
    std::size_t eval_interval = 200;
    std::size_t checkpoint_interval = 0; // 0 = eval_interval
    double triplet_margin = 1.0;
    double magnet_margin = 1.0;
    double kappa_init = 1.0;
    std::size_t eval_batch_size = 32;
};

struct TrainLogRecord {
    std::uint64_t iteration = 0;
    double loss = 0.0;
    std::optional<double> triplet_monitor;
    std::optional<double> val_rank1;
    std::optional<double> kappa;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRecord> records;

    std::string to_csv() const {
        std::ostringstream os;
        os << "iteration,loss,triplet_monitor,val_rank1,kappa,seconds\n";
        const auto num = [&os](double v) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << buf;
        };
        for (const auto& r : records) {
            os << r.iteration << ",";
            num(r.loss);
            os << ",";
            if (r.triplet_monitor) num(*r.triplet_monitor);
            os << ",";
            if (r.val_rank1) num(*r.val_rank1);
            os << ",";
            if (r.kappa) num(*r.kappa);
            os << ",";
            num(r.seconds);
            os << "\n";
        }
        return os.str();
    }
};

struct TrainResult {
    Checkpoint best;
    std::uint64_t best_iteration = 0;
    std::optional<double> best_val_rank1;
    TrainLog log;
    std::shared_ptr<Encoder> encoder; // final state (restore `best` to rewind)
    std::optional<CosineSoftmaxHead> cosine_head;
    std::optional<StandardSoftmaxHead> softmax_head;
    std::size_t num_classes = 0;
};

/// Resolve whether the encoder ends in l2 normalization. The cosine softmax
/// needs unit features; forcing it off with that loss is a config error.
inline bool resolve_final_l2(const EncoderSpec& spec, LossKind loss) {
    const bool wants = loss == LossKind::cosine_softmax;
    if (spec.final_l2 < 0) return wants;
    if (spec.final_l2 == 0 && wants)
        throw ConfigError("cosine-softmax requires the final l2 normalization layer");
    return spec.final_l2 != 0;
}

inline std::unique_ptr<Encoder> build_encoder(const EncoderSpec& spec, bool final_l2,
                                              double dropout_p, Rng& weights_rng) {
    if (spec.arch == EncoderSpec::Arch::paper) {
        const std::size_t dim = spec.embedding_dim ? spec.embedding_dim : 128;
        return build_paper_encoder(weights_rng, dim, final_l2, dropout_p);
    }
    const std::size_t dim = spec.embedding_dim ? spec.embedding_dim : 32;
    if (spec.input_dim == 0) throw ConfigError("toy encoder: input_dim not set");
    return std::make_unique<ToyMlpEncoder>(spec.input_dim, spec.hidden, dim, final_l2, weights_rng);
}

/// Adam-level weight decay for a named parameter: the network decay for every
/// weight and bias, zero for batchnorm gamma/beta, and the dedicated kappa
/// decay on the classifier scale (its trained log-parametrization). The
/// trainer routes the kappa decay through this table, so the cosine head is
/// built with its objective-level decay term disabled.
inline double decay_for_param(const std::string& name, const TrainConfig& cfg) {
    if (name.size() >= 6 && name.substr(name.size() - 6) == "/gamma") return 0.0;
    if (name.size() >= 5 && name.substr(name.size() - 5) == "/beta") return 0.0;
    if (name == "head/log_kappa") return cfg.weight_decay_kappa;
    return cfg.weight_decay_network;
}

namespace detail {

struct MetaInfo {
    EncoderSpec::Arch arch;
    std::size_t embedding_dim;
    bool final_l2;
    std::size_t input_dim;
    std::vector<std::size_t> hidden;
};

inline void add_meta(Checkpoint& ckpt, const MetaInfo& meta) {
    ckpt.add("meta/arch", Tensor::scalar(meta.arch == EncoderSpec::Arch::paper ? 0.0 : 1.0));
    ckpt.add("meta/embedding_dim", Tensor::scalar(static_cast<double>(meta.embedding_dim)));
    ckpt.add("meta/final_l2", Tensor::scalar(meta.final_l2 ? 1.0 : 0.0));
    ckpt.add("meta/input_dim", Tensor::scalar(static_cast<double>(meta.input_dim)));
    if (!meta.hidden.empty()) {
        Tensor h({meta.hidden.size()});
        for (std::size_t i = 0; i < meta.hidden.size(); ++i)
            h[i] = static_cast<double>(meta.hidden[i]);
        ckpt.add("meta/hidden", std::move(h));
    }
}

} // namespace detail

/// Full training snapshot: encoder parameters + running stats, classifier
/// head (when present), and meta tensors describing the architecture.
inline Checkpoint snapshot_training_state(Encoder& encoder, const CosineSoftmaxHead* cosine,
                                          const StandardSoftmaxHead* softmax,
                                          std::uint64_t iteration,
                                          const std::vector<std::size_t>& hidden = {}) {
    Checkpoint ckpt = snapshot_encoder(encoder, iteration);
    if (cosine) {
        ckpt.add("head/weights", cosine->weights->value);
        ckpt.add("head/log_kappa", cosine->log_kappa->value);
    }
    if (softmax) {
        ckpt.add("head/weights", softmax->weights->value);
        ckpt.add("head/biases", softmax->biases->value);
    }
    detail::MetaInfo meta;
    meta.arch = encoder.arch() == "paper" ? EncoderSpec::Arch::paper : EncoderSpec::Arch::toy;
    meta.embedding_dim = encoder.embedding_dim();
    meta.final_l2 = encoder.final_l2();
    meta.input_dim = shape_numel(encoder.input_shape());
    meta.hidden = hidden;
    detail::add_meta(ckpt, meta);
    return ckpt;
}

/// Rebuild an encoder from a checkpoint's meta tensors and load its weights.
inline std::unique_ptr<Encoder> encoder_from_checkpoint(const Checkpoint& ckpt) {
    const Tensor* arch = ckpt.find("meta/arch");
    const Tensor* dim = ckpt.find("meta/embedding_dim");
    const Tensor* l2 = ckpt.find("meta/final_l2");
    const Tensor* input_dim = ckpt.find("meta/input_dim");
    if (!arch || !dim || !l2 || !input_dim)
        throw Error("checkpoint: missing tensor \"meta/*\" (not a training checkpoint?)");
    EncoderSpec spec;
    spec.arch = (*arch)[0] == 0.0 ? EncoderSpec::Arch::paper : EncoderSpec::Arch::toy;
    spec.embedding_dim = static_cast<std::size_t>((*dim)[0]);
    spec.input_dim = static_cast<std::size_t>((*input_dim)[0]);
    spec.hidden.clear();
    if (const Tensor* hidden = ckpt.find("meta/hidden"))
        for (std::size_t i = 0; i < hidden->numel(); ++i)
            spec.hidden.push_back(static_cast<std::size_t>((*hidden)[i]));
    Rng init_rng(0); // placeholder values, restored below
    std::unique_ptr<Encoder> enc =
        build_encoder(spec, (*l2)[0] != 0.0, 0.0, init_rng);
    restore_encoder(*enc, ckpt);
    return enc;
}

namespace detail {

inline std::optional<double> validation_rank1(Encoder& encoder, const DatasetIndex& val,
                                              const DataSource& source, Metric metric,
                                              std::size_t batch_size) {
    if (val.entries.empty()) return std::nullopt;
    std::vector<EmbeddingRecord> records =
        extract_embeddings(encoder, val, source, batch_size, 1);
    EvalReport report = evaluate_single_shot(records, records, metric, 1);
    if (report.num_valid_queries == 0) return std::nullopt;
    return report.cmc[0];
}

} // namespace detail

/// Run the full protocol on an indexed dataset: identity-stratified
/// train/validation split, PK batches, Adam updates, a soft-triplet monitor,
/// validation rank-1 at every eval interval with best-checkpoint retention,
/// and a CSV-able log. When `out_dir` is set, writes best.cmck, periodic
/// ckpt_<iteration>.cmck files, and train_log.csv there.
inline TrainResult train(const TrainConfig& cfg, const EncoderSpec& arch_spec,
                         const DatasetIndex& data, const DataSource& source,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    if (cfg.iterations == 0) throw ConfigError("train: iterations must be > 0");
    if (cfg.batch_size == 0 || cfg.images_per_identity == 0)
        throw ConfigError("train: batch_size and images_per_identity must be > 0");
    if (cfg.batch_size % cfg.images_per_identity != 0)
        throw ConfigError("train: batch_size " + std::to_string(cfg.batch_size) +
                          " not divisible by images_per_identity " +
                          std::to_string(cfg.images_per_identity));
    const std::size_t num_ids_per_batch = cfg.batch_size / cfg.images_per_identity; // P
    const bool needs_negatives =
        cfg.loss == LossKind::triplet_soft || cfg.loss == LossKind::triplet_hard ||
        cfg.loss == LossKind::magnet;
    if (needs_negatives && num_ids_per_batch < 2)
        throw ConfigError("train: " + std::string(loss_name(cfg.loss)) +
                          " needs at least 2 identities per batch");
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
        throw ConfigError("train: val_fraction must be in (0,1)");

    auto [train_index, val_index] = split_train_val(data, cfg.val_fraction, cfg.seed);

    // Raw identities -> contiguous class labels, ascending.
    std::map<std::int64_t, std::int64_t> class_of;
    for (const auto& [identity, positions] : train_index.by_identity()) {
        if (identity < 0) continue;
        const std::int64_t next = static_cast<std::int64_t>(class_of.size());
        class_of[identity] = next;
    }
    const std::size_t num_classes = class_of.size();
    if (num_classes < 2) throw Error("train: need at least 2 identities, got " +
                                     std::to_string(num_classes));

    Rng base(cfg.seed);
    Rng rng_weights = base.substream(streams::weights);
    Rng rng_sampling = base.substream(streams::sampling);
    Rng rng_dropout = base.substream(streams::dropout);
    Rng rng_augment = base.substream(streams::augmentation);

    EncoderSpec spec = arch_spec;
    if (spec.arch == EncoderSpec::Arch::toy && spec.input_dim == 0)
        spec.input_dim = source.load(train_index.entries.front()).numel();
    const bool final_l2 = resolve_final_l2(spec, cfg.loss);

    TrainResult result;
    result.encoder = build_encoder(spec, final_l2, cfg.dropout_p, rng_weights);
    result.num_classes = num_classes;
    Encoder& encoder = *result.encoder;

    const std::size_t emb_dim = encoder.embedding_dim();
    if (cfg.loss == LossKind::cosine_softmax)
        result.cosine_head = CosineSoftmaxHead::init(num_classes, emb_dim, rng_weights,
                                                     cfg.kappa_init, /*kappa_decay=*/0.0);
    if (cfg.loss == LossKind::softmax)
        result.softmax_head = StandardSoftmaxHead::init(num_classes, emb_dim, rng_weights);

    std::vector<AdamOptimizer::Entry> entries;
    for (const auto& p : encoder.parameters())
        entries.push_back({p.node, decay_for_param(p.name, cfg)});
    if (result.cosine_head) {
        entries.push_back({result.cosine_head->weights, decay_for_param("head/weights", cfg)});
        entries.push_back({result.cosine_head->log_kappa, decay_for_param("head/log_kappa", cfg)});
    }
    if (result.softmax_head) {
        entries.push_back({result.softmax_head->weights, decay_for_param("head/weights", cfg)});
        entries.push_back({result.softmax_head->biases, decay_for_param("head/biases", cfg)});
    }
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    AdamOptimizer optimizer(std::move(entries), adam_cfg);

    const Metric val_metric = metric_for_loss(cfg.loss);
    const std::size_t ckpt_interval =
        cfg.checkpoint_interval ? cfg.checkpoint_interval : cfg.eval_interval;
    if (out_dir) std::filesystem::create_directories(*out_dir);

    const auto t_start = std::chrono::steady_clock::now();
    const auto elapsed = [&t_start] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };
    const auto kappa_value = [&]() -> std::optional<double> {
        if (result.cosine_head) return result.cosine_head->kappa();
        return std::nullopt;
    };

    const auto snapshot = [&](std::uint64_t iteration) {
        return snapshot_training_state(encoder,
                                       result.cosine_head ? &*result.cosine_head : nullptr,
                                       result.softmax_head ? &*result.softmax_head : nullptr,
                                       iteration, spec.hidden);
    };

    bool have_best = false;
    for (std::uint64_t iter = 1; iter <= cfg.iterations; ++iter) {
        NodePtr loss_node;
        Tensor embeddings;
        Labels labels;
        for (int attempt = 0;; ++attempt) {
            const std::vector<std::size_t> picks =
                sample_pk_batch(train_index, num_ids_per_batch, cfg.images_per_identity,
                                rng_sampling);
            std::vector<Tensor> samples;
            samples.reserve(picks.size());
            labels.clear();
            for (std::size_t pos : picks) {
                const DatasetEntry& entry = train_index.entries[pos];
                Tensor sample = source.load(entry);
                if (cfg.flip_augment && sample.rank() == 3)
                    sample = augment_flip(sample, rng_augment);
                samples.push_back(std::move(sample));
                labels.push_back(class_of.at(entry.identity));
            }
            NodePtr batch = make_leaf(stack_batch(samples, encoder.input_shape()), false);
            try {
                NodePtr emb = encoder.forward(batch, Mode::training, &rng_dropout);
                switch (cfg.loss) {
                    case LossKind::cosine_softmax:
                        loss_node = result.cosine_head->loss(emb, labels);
                        break;
                    case LossKind::softmax:
                        loss_node = result.softmax_head->loss(emb, labels);
                        break;
                    case LossKind::triplet_soft:
                        loss_node = triplet_loss(
                            emb, labels, {TripletConfig::Variant::soft_margin, cfg.triplet_margin});
                        break;
                    case LossKind::triplet_hard:
                        loss_node = triplet_loss(
                            emb, labels, {TripletConfig::Variant::hard_margin, cfg.triplet_margin});
                        break;
                    case LossKind::magnet:
                        loss_node = magnet_loss(emb, labels, {cfg.magnet_margin});
                        break;
                }
                embeddings = emb->value;
                break;
            } catch (const BatchError& e) {
                if (attempt >= 1) throw;
                log_info(std::string("resampling batch after: ") + e.what());
            }
        }

        const double loss_value = loss_node->value[0];
        if (!std::isfinite(loss_value))
            throw Error("training aborted: non-finite loss at iteration " + std::to_string(iter));

        const bool log_due = (iter % cfg.log_interval) == 0;
        const bool eval_due = (iter % cfg.eval_interval) == 0 || iter == cfg.iterations;

        if (iter == 1) {
            TrainLogRecord r0;
            r0.iteration = 0;
            r0.loss = loss_value;
            r0.triplet_monitor = monitor_triplet(embeddings, labels);
            r0.kappa = kappa_value();
            r0.seconds = elapsed();
            result.log.records.push_back(r0);
        }

        optimizer.zero_grad();
        backward(loss_node);
        optimizer.step();

        std::optional<double> val_rank1;
        if (eval_due) {
            val_rank1 = detail::validation_rank1(encoder, val_index, source, val_metric,
                                                 cfg.eval_batch_size);
            if (val_rank1 && (!have_best || *val_rank1 > result.best_val_rank1.value_or(-1.0))) {
                have_best = true;
                result.best_val_rank1 = val_rank1;
                result.best_iteration = iter;
                result.best = snapshot(iter);
                if (out_dir) save_checkpoint(*out_dir / "best.cmck", result.best);
            }
        }
        if (out_dir && ckpt_interval && (iter % ckpt_interval) == 0)
            save_checkpoint(*out_dir / ("ckpt_" + std::to_string(iter) + ".cmck"), snapshot(iter));

        if (log_due || eval_due) {
            TrainLogRecord rec;
            rec.iteration = iter;
            rec.loss = loss_value;
            rec.triplet_monitor = monitor_triplet(embeddings, labels);
            rec.val_rank1 = val_rank1;
            rec.kappa = kappa_value();
            rec.seconds = elapsed();
            result.log.records.push_back(rec);
        }
    }

    if (!have_best) {
        // No usable validation set; keep the final state as "best".
        result.best = snapshot(cfg.iterations);
        result.best_iteration = cfg.iterations;
        if (out_dir) save_checkpoint(*out_dir / "best.cmck", result.best);
    }
    if (out_dir) {
        std::ofstream csv(*out_dir / "train_log.csv");
        csv << result.log.to_csv();
    }
    return result;
}

} // namespace cml
