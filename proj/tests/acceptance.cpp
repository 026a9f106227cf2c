// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs the full desk-scale training comparison, so expect a
// few minutes of wall time on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cml/checkpoint.hpp"
#include "cml/evaluation.hpp"
#include "cml/grad_check.hpp"
#include "cml/losses.hpp"
#include "cml/network.hpp"
#include "cml/synthetic.hpp"
#include "cml/trainer.hpp"
#include "oracle_eval.hpp"

using namespace cml;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

NodePtr random_leaf(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal() * scale;
    return make_leaf(std::move(t), true);
}

// --------------------------------------------------------------------------
// Criterion 1: finite-difference checks over every primitive and loss.

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const double h = 1e-5, tol = 1e-5;
    Rng rng(101);
    double worst = 0.0;
    std::string worst_name;
    bool pass = true;

    const auto run = [&](const char* name, const std::function<GradCheckReport(Rng&)>& one) {
        for (int i = 0; i < 10; ++i) {
            const GradCheckReport r = one(rng);
            if (r.max_rel_error > worst || r.nan_found) {
                worst = r.max_rel_error;
                worst_name = name;
            }
            if (!r.pass) {
                pass = false;
                std::printf("  gradient failure: %s instance %d: %s\n", name, i,
                            r.describe().c_str());
            }
        }
    };

    run("add", [&](Rng& r) {
        NodePtr a = random_leaf({3, 4}, r), b = random_leaf({3, 4}, r);
        return grad_check([&] { return ops::sum(ops::square(ops::add(a, b))); }, {a, b}, h, tol);
    });
    run("sub", [&](Rng& r) {
        NodePtr a = random_leaf({3, 4}, r), b = random_leaf({3, 4}, r);
        return grad_check([&] { return ops::sum(ops::square(ops::sub(a, b))); }, {a, b}, h, tol);
    });
    run("mul", [&](Rng& r) {
        NodePtr a = random_leaf({8}, r), b = random_leaf({8}, r);
        return grad_check([&] { return ops::sum(ops::mul(a, b)); }, {a, b}, h, tol);
    });
    run("scale", [&](Rng& r) {
        NodePtr a = random_leaf({6}, r);
        return grad_check([&] { return ops::sum(ops::scale(a, 1.7)); }, {a}, h, tol);
    });
    run("sum", [&](Rng& r) {
        NodePtr a = random_leaf({2, 3}, r);
        return grad_check([&] { return ops::sum(a); }, {a}, h, tol);
    });
    run("mean", [&](Rng& r) {
        NodePtr a = random_leaf({2, 7}, r);
        return grad_check([&] { return ops::mean(ops::square(a)); }, {a}, h, tol);
    });
    run("matmul", [&](Rng& r) {
        NodePtr a = random_leaf({3, 4}, r), b = random_leaf({4, 2}, r);
        return grad_check([&] { return ops::sum(ops::square(ops::matmul(a, b))); }, {a, b}, h, tol);
    });
    run("dense", [&](Rng& r) {
        NodePtr x = random_leaf({4, 5}, r), w = random_leaf({3, 5}, r), b = random_leaf({3}, r);
        return grad_check([&] { return ops::sum(ops::square(ops::dense(x, w, b))); }, {x, w, b}, h,
                          tol);
    });
    run("elu", [&](Rng& r) {
        NodePtr a = random_leaf({9}, r);
        return grad_check([&] { return ops::sum(ops::elu(a)); }, {a}, h, tol);
    });
    run("l2_normalize", [&](Rng& r) {
        NodePtr a = random_leaf({4, 5}, r);
        for (std::size_t i = 0; i < 4; ++i) a->value[i * 5] += 2.0;
        NodePtr w = random_leaf({4, 5}, r);
        return grad_check([&] { return ops::sum(ops::mul(ops::l2_normalize(a), w)); }, {a}, h, tol);
    });
    run("squared_euclidean_pairwise", [&](Rng& r) {
        NodePtr a = random_leaf({5, 3}, r);
        NodePtr w = random_leaf({5, 5}, r);
        return grad_check([&] { return ops::sum(ops::mul(ops::squared_euclidean_pairwise(a), w)); },
                          {a}, h, tol);
    });
    run("softmax_cross_entropy", [&](Rng& r) {
        NodePtr logits = random_leaf({6, 4}, r, 2.0);
        Labels labels;
        for (int i = 0; i < 6; ++i) labels.push_back(static_cast<std::int64_t>(r.uniform_index(4)));
        return grad_check([&] { return ops::softmax_cross_entropy(logits, labels); }, {logits}, h,
                          tol);
    });
    run("conv2d", [&](Rng& r) {
        NodePtr x = random_leaf({2, 2, 5, 4}, r);
        NodePtr w = random_leaf({3, 2, 3, 3}, r, 0.5);
        NodePtr b = random_leaf({3}, r);
        const std::size_t stride = 1 + r.uniform_index(2);
        return grad_check([&] { return ops::sum(ops::square(ops::conv2d(x, w, b, stride))); },
                          {x, w, b}, h, tol);
    });
    run("maxpool2d", [&](Rng& r) {
        NodePtr x = random_leaf({2, 2, 6, 5}, r);
        return grad_check([&] { return ops::sum(ops::square(ops::maxpool2d(x, 3, 2))); }, {x}, h,
                          tol);
    });
    run("batchnorm", [&](Rng& r) {
        NodePtr x = random_leaf({6, 3}, r, 1.5);
        NodePtr gamma = random_leaf({3}, r);
        NodePtr beta = random_leaf({3}, r);
        ops::BatchNormState state(3);
        return grad_check(
            [&] {
                return ops::sum(ops::square(ops::batchnorm(x, gamma, beta, &state, Mode::training)));
            },
            {x, gamma, beta}, h, tol);
    });
    run("dropout", [&](Rng& r) {
        NodePtr x = random_leaf({40}, r);
        const std::uint64_t seed = r.next_u64();
        return grad_check(
            [&] {
                Rng mask_rng(seed);
                return ops::sum(ops::square(ops::dropout(x, 0.4, Mode::training, mask_rng)));
            },
            {x}, h, tol);
    });

    // losses
    run("loss standard softmax", [&](Rng& r) {
        NodePtr feats = random_leaf({8, 5}, r);
        StandardSoftmaxHead head = StandardSoftmaxHead::init(3, 5, r);
        Labels labels;
        for (int i = 0; i < 8; ++i) labels.push_back(static_cast<std::int64_t>(i % 3));
        return grad_check([&] { return head.loss(feats, labels); },
                          {feats, head.weights, head.biases}, h, tol);
    });
    run("loss cosine softmax", [&](Rng& r) {
        NodePtr raw = random_leaf({8, 5}, r);
        CosineSoftmaxHead head = CosineSoftmaxHead::init(3, 5, r, 1.5, 0.1);
        Labels labels;
        for (int i = 0; i < 8; ++i) labels.push_back(static_cast<std::int64_t>(i % 3));
        return grad_check([&] { return head.loss(ops::l2_normalize(raw), labels); },
                          {raw, head.weights, head.log_kappa}, h, tol);
    });
    run("loss triplet hard", [&](Rng& r) {
        NodePtr feats = random_leaf({8, 5}, r);
        Labels labels;
        for (int i = 0; i < 8; ++i) labels.push_back(static_cast<std::int64_t>(i % 3));
        return grad_check(
            [&] {
                return triplet_loss(feats, labels, {TripletConfig::Variant::hard_margin, 0.7});
            },
            {feats}, h, tol);
    });
    run("loss triplet soft", [&](Rng& r) {
        NodePtr feats = random_leaf({8, 5}, r);
        Labels labels;
        for (int i = 0; i < 8; ++i) labels.push_back(static_cast<std::int64_t>(i % 3));
        return grad_check(
            [&] {
                return triplet_loss(feats, labels, {TripletConfig::Variant::soft_margin, 0.0});
            },
            {feats}, h, tol);
    });
    run("loss magnet", [&](Rng& r) {
        NodePtr feats = random_leaf({12, 5}, r);
        Labels labels;
        for (int i = 0; i < 12; ++i) labels.push_back(static_cast<std::int64_t>(i % 3));
        return grad_check([&] { return magnet_loss(feats, labels, {1.0}); }, {feats}, h, tol);
    });

    const double elapsed = seconds_since(t0);
    if (elapsed >= 60.0) pass = false;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "gradient suite: all primitives and losses, 10 instances each "
                  "(worst rel err %.2e in %s, %.1f s)",
                  worst, worst_name.c_str(), elapsed);
    report(1, pass, buf);
}

// --------------------------------------------------------------------------
// Criterion 2: cosine softmax equals standard softmax on kappa-scaled weights.

void criterion_equivalence() {
    Rng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(8), d = 2 + rng.uniform_index(10), n = 5;
        Tensor w({k, d});
        for (auto& v : w.values()) v = rng.normal();
        const double kappa = 0.25 + 4.0 * rng.uniform();
        CosineSoftmaxHead head;
        head.weights = make_leaf(w, false);
        head.log_kappa = make_leaf(Tensor::scalar(std::log(kappa)), false);

        Tensor f({n, d});
        for (auto& v : f.values()) v = rng.normal();
        for (std::size_t i = 0; i < n; ++i) {
            const double nrm = l2_norm(f.data() + i * d, d);
            for (std::size_t j = 0; j < d; ++j) f[i * d + j] /= nrm;
        }
        Tensor p_cos = cosine_softmax_probs(f, head);

        StandardSoftmaxHead std_head;
        Tensor scaled({k, d});
        for (std::size_t i = 0; i < k; ++i) {
            const double nrm = l2_norm(w.data() + i * d, d);
            for (std::size_t j = 0; j < d; ++j) scaled[i * d + j] = kappa * w[i * d + j] / nrm;
        }
        std_head.weights = make_leaf(std::move(scaled), false);
        std_head.biases = make_leaf(Tensor({k}), false);
        Tensor p_std = standard_softmax_probs(f, std_head);

        for (std::size_t i = 0; i < p_cos.numel(); ++i)
            worst = std::max(worst, std::abs(p_cos[i] - p_std[i]));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "re-parametrization equivalence over 100 instances (max abs diff %.2e)", worst);
    report(2, worst < 1e-12, buf);
}

// --------------------------------------------------------------------------
// Criterion 3: probabilities invariant to raw-weight scaling and to feature
// scaling ahead of the l2 normalization.

void criterion_invariance() {
    Rng rng(303);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 3 + rng.uniform_index(5), d = 3 + rng.uniform_index(6), n = 4;
        Tensor w({k, d});
        for (auto& v : w.values()) v = rng.normal();
        const double kappa = 0.5 + 3.0 * rng.uniform();
        CosineSoftmaxHead head;
        head.weights = make_leaf(w, false);
        head.log_kappa = make_leaf(Tensor::scalar(std::log(kappa)), false);

        Tensor raw({n, d});
        for (auto& v : raw.values()) v = rng.normal();
        NodePtr unit = ops::l2_normalize(make_leaf(raw, false));
        Tensor base = cosine_softmax_probs(unit->value, head);

        // scale each raw class weight by a positive factor
        Tensor w2 = w;
        for (std::size_t i = 0; i < k; ++i) {
            const double c = std::exp(4.0 * (rng.uniform() - 0.5));
            for (std::size_t j = 0; j < d; ++j) w2[i * d + j] *= c;
        }
        CosineSoftmaxHead head2;
        head2.weights = make_leaf(std::move(w2), false);
        head2.log_kappa = head.log_kappa;
        Tensor probs2 = cosine_softmax_probs(unit->value, head2);
        for (std::size_t i = 0; i < base.numel(); ++i)
            worst = std::max(worst, std::abs(base[i] - probs2[i]));

        // rescale features before normalization
        const double c = std::exp(4.0 * (rng.uniform() - 0.5));
        NodePtr unit2 = ops::l2_normalize(make_leaf(cml::scale(raw, c), false));
        Tensor probs3 = cosine_softmax_probs(unit2->value, head);
        for (std::size_t i = 0; i < base.numel(); ++i)
            worst = std::max(worst, std::abs(base[i] - probs3[i]));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "weight/feature scale invariance over 50 instances (max abs diff %.2e)", worst);
    report(3, worst < 1e-12, buf);
}

// --------------------------------------------------------------------------
// Criterion 4: the fast evaluation path matches the independent oracle.

void criterion_metric_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(404);
    double worst = 0.0;
    bool pass = true;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<EmbeddingRecord> queries, gallery;
        oracle::random_instance(rng, 50, 200, 20, 4, 8, queries, gallery);
        for (Metric metric : {Metric::cosine_distance, Metric::euclidean}) {
            const EvalReport fast = evaluate_single_shot(queries, gallery, metric, 50);
            const oracle::Report slow = oracle::evaluate(queries, gallery, metric, 50);
            if (fast.num_valid_queries != slow.num_valid_queries) pass = false;
            worst = std::max(worst, std::abs(fast.map - slow.map));
            for (std::size_t k = 0; k < 50; ++k)
                worst = std::max(worst, std::abs(fast.cmc[k] - slow.cmc[k]));
        }
    }
    if (worst > 1e-12) pass = false;

    // hand-worked AP example: relevant at ranks 1 and 3 of R = 2
    std::vector<EmbeddingRecord> q(1), g(3);
    q[0].identity = 1;
    q[0].camera = 1;
    q[0].vector = {0.0, 0.0};
    const std::int64_t ids[3] = {1, 2, 1};
    for (int i = 0; i < 3; ++i) {
        g[i].identity = ids[i];
        g[i].camera = 2;
        g[i].vector = {0.1 * (i + 1), 0.0};
    }
    const EvalReport hand = evaluate_single_shot(q, g, Metric::euclidean, 3);
    if (std::abs(hand.map - 0.833333) > 1e-6) pass = false;

    const double elapsed = seconds_since(t0);
    if (elapsed >= 30.0) pass = false;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "metric oracle agreement, 20 instances x 2 metrics, AP hand case "
                  "(max abs diff %.2e, %.1f s)",
                  worst, elapsed);
    report(4, pass, buf);
}

// --------------------------------------------------------------------------
// Criterion 5: architecture conformance and parameter accounting.

void criterion_architecture() {
    bool pass = true;
    std::string detail;
    try {
        Rng rng(505);
        auto enc = build_paper_encoder(rng); // stage shapes verified inside
        const ParamCountReport report_counts = count_parameters(*enc);
        const std::size_t dense10 = report_counts.prefix_total("dense10/");
        if (dense10 != 2097280) pass = false;

        const double reference = static_cast<double>(PaperEncoder::kReferenceParamCount);
        const double delta =
            (static_cast<double>(report_counts.total) - reference) / reference;
        if (std::abs(delta) >= 0.02) pass = false;

        std::printf("  per-layer reconciliation (documented layout vs reference total):\n");
        std::map<std::string, std::size_t> layers;
        std::vector<std::string> order;
        for (const auto& e : report_counts.entries) {
            const std::string layer = e.name.substr(0, e.name.find('/'));
            if (layers.find(layer) == layers.end()) order.push_back(layer);
            layers[layer] += e.count;
        }
        for (const auto& layer : order)
            std::printf("    %-10s %9zu\n", layer.c_str(), layers[layer]);
        std::printf("    %-10s %9zu (reference %zu, delta %+lld, %+0.3f%%)\n", "total",
                    report_counts.total, PaperEncoder::kReferenceParamCount,
                    static_cast<long long>(report_counts.total) -
                        static_cast<long long>(PaperEncoder::kReferenceParamCount),
                    100.0 * delta);

        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "architecture conformance: stage shapes ok, dense10 = %zu, total %zu "
                      "within %.3f%% of %zu",
                      dense10, report_counts.total, 100.0 * std::abs(delta),
                      PaperEncoder::kReferenceParamCount);
        detail = buf;
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("architecture conformance failed: ") + e.what();
    }
    report(5, pass, detail);
}

// --------------------------------------------------------------------------
// Criteria 6-8: desk-scale metric learning behavior, separation, determinism.

struct DeskScale {
    SyntheticDataset data;
    TrainConfig cfg;
    EncoderSpec arch;
    TrainResult cosine;
    TrainResult triplet;
    std::vector<EmbeddingRecord> heldout_cosine;
};

TrainConfig desk_config(LossKind loss) {
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.batch_size = 32;
    cfg.images_per_identity = 4; // P = 8, K = 4
    cfg.learning_rate = 1e-3;
    cfg.loss = loss;
    cfg.seed = 0;
    cfg.log_interval = 100;
    cfg.eval_interval = 200;
    cfg.flip_augment = true; // vector data: flips are skipped
    return cfg;
}

void criteria_desk_scale(DeskScale& ds) {
    const auto t0 = std::chrono::steady_clock::now();

    SyntheticSpec spec;
    spec.num_identities = 25;
    spec.samples_per_identity = 40;
    spec.input_dim = 32;
    spec.cluster_spread = 0.15;
    spec.heldout_identities = 5;
    spec.seed = 0;
    ds.data = generate_synthetic(spec);
    MemorySource source(&ds.data.samples);

    ds.arch.arch = EncoderSpec::Arch::toy;
    ds.arch.hidden = {64, 64};
    ds.arch.embedding_dim = 32;

    // (a) cosine softmax
    ds.cfg = desk_config(LossKind::cosine_softmax);
    ds.cosine = train(ds.cfg, ds.arch, ds.data.train_index, source);
    restore_encoder(*ds.cosine.encoder, ds.cosine.best);
    ds.heldout_cosine =
        extract_embeddings(*ds.cosine.encoder, ds.data.heldout_index, source, 32, 1);
    const EvalReport cos_report =
        evaluate_single_shot(ds.heldout_cosine, ds.heldout_cosine, Metric::cosine_distance, 50);

    // (b) soft triplet
    TrainConfig tri_cfg = desk_config(LossKind::triplet_soft);
    ds.triplet = train(tri_cfg, ds.arch, ds.data.train_index, source);
    restore_encoder(*ds.triplet.encoder, ds.triplet.best);
    const auto heldout_triplet =
        extract_embeddings(*ds.triplet.encoder, ds.data.heldout_index, source, 32, 1);
    const EvalReport tri_report =
        evaluate_single_shot(heldout_triplet, heldout_triplet, Metric::euclidean, 50);

    // (c) monitored soft triplet decay within the cosine run
    const double monitor0 = ds.cosine.log.records.front().triplet_monitor.value_or(-1.0);
    double monitor_final = -1.0;
    for (const auto& rec : ds.cosine.log.records)
        if (rec.iteration == 2000 && rec.triplet_monitor) monitor_final = *rec.triplet_monitor;
    const double ratio = monitor_final / monitor0;

    const double elapsed = seconds_since(t0);
    const bool pass_a = cos_report.cmc[0] >= 0.90 && cos_report.map >= 0.80;
    const bool pass_b = tri_report.cmc[0] >= 0.85;
    const bool pass_c = monitor0 > 0.0 && monitor_final >= 0.0 && ratio <= 0.50;
    const bool pass_time = elapsed < 300.0;

    char buf[280];
    std::snprintf(buf, sizeof(buf),
                  "desk-scale runs: (a)%s cosine rank-1 %.3f mAP %.3f (>= 0.90/0.80), "
                  "(b)%s triplet rank-1 %.3f (>= 0.85), (c)%s monitor %.3f -> %.3f, "
                  "ratio %.3f (<= 0.50), %.0f s",
                  pass_a ? "ok" : "FAIL", cos_report.cmc[0], cos_report.map,
                  pass_b ? "ok" : "FAIL", tri_report.cmc[0], pass_c ? "ok" : "FAIL", monitor0,
                  monitor_final, ratio, elapsed);
    report(6, pass_a && pass_b && pass_c && pass_time, buf);

    // Criterion 7: embedding-space separation on held-out identities.
    double within = 0.0, between = 0.0;
    std::size_t n_within = 0, n_between = 0;
    for (std::size_t i = 0; i < ds.heldout_cosine.size(); ++i)
        for (std::size_t j = i + 1; j < ds.heldout_cosine.size(); ++j) {
            const auto& a = ds.heldout_cosine[i];
            const auto& b = ds.heldout_cosine[j];
            const double sim = dot(a.vector.data(), b.vector.data(), a.vector.size()) /
                               (l2_norm(a.vector.data(), a.vector.size()) *
                                l2_norm(b.vector.data(), b.vector.size()));
            if (a.identity == b.identity) {
                within += sim;
                ++n_within;
            } else {
                between += sim;
                ++n_between;
            }
        }
    const double separation = within / n_within - between / n_between;
    char buf7[160];
    std::snprintf(buf7, sizeof(buf7),
                  "held-out separation: mean within-identity minus between-identity cosine "
                  "similarity = %.3f (>= 0.2)",
                  separation);
    report(7, separation >= 0.2, buf7);
}

void criterion_determinism(DeskScale& ds) {
    MemorySource source(&ds.data.samples);

    // Re-run the criterion-6 cosine configuration: the loss trace must be
    // bitwise identical.
    TrainResult again = train(ds.cfg, ds.arch, ds.data.train_index, source);
    bool trace_equal = again.log.records.size() == ds.cosine.log.records.size();
    if (trace_equal)
        for (std::size_t i = 0; i < again.log.records.size(); ++i) {
            const auto& a = again.log.records[i];
            const auto& b = ds.cosine.log.records[i];
            if (a.iteration != b.iteration || a.loss != b.loss ||
                a.triplet_monitor != b.triplet_monitor || a.kappa != b.kappa)
                trace_equal = false;
        }

    // Embedding extraction across thread counts: bitwise identical vectors.
    restore_encoder(*again.encoder, again.best);
    const auto emb1 = extract_embeddings(*again.encoder, ds.data.heldout_index, source, 16, 1);
    const auto emb4 = extract_embeddings(*again.encoder, ds.data.heldout_index, source, 16, 4);
    bool emb_equal = emb1.size() == emb4.size();
    if (emb_equal)
        for (std::size_t i = 0; i < emb1.size(); ++i)
            if (emb1[i].vector != emb4[i].vector) emb_equal = false;

    report(8, trace_equal && emb_equal,
           std::string("determinism: repeated run trace ") +
               (trace_equal ? "bitwise identical" : "DIFFERS") + ", extraction threads 1 vs 4 " +
               (emb_equal ? "bitwise identical" : "DIFFERS"));
}

// --------------------------------------------------------------------------
// Criterion 9: container formats round-trip bitwise; corrupted magic fails.

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion_formats() {
    bool pass = true;
    std::string note = "tensor/checkpoint/embedding round-trips bitwise; corrupted magic rejected";
    const fs::path dir = fs::temp_directory_path() / "cml_acceptance_formats";
    fs::create_directories(dir);
    try {
        Rng rng(909);

        // tensor container
        Tensor t({3, 4, 5});
        for (auto& v : t.values()) v = rng.normal();
        save_tensor(dir / "a.cmlt", t);
        save_tensor(dir / "b.cmlt", load_tensor(dir / "a.cmlt"));
        if (file_bytes(dir / "a.cmlt") != file_bytes(dir / "b.cmlt")) pass = false;

        // checkpoint container
        ToyMlpEncoder enc(6, {9}, 4, true, rng);
        CosineSoftmaxHead head = CosineSoftmaxHead::init(3, 4, rng, 1.2, 0.1);
        Checkpoint ckpt = snapshot_training_state(enc, &head, nullptr, 77, {9});
        save_checkpoint(dir / "a.cmck", ckpt);
        save_checkpoint(dir / "b.cmck", load_checkpoint(dir / "a.cmck"));
        if (file_bytes(dir / "a.cmck") != file_bytes(dir / "b.cmck")) pass = false;

        // embedding container
        std::vector<EmbeddingRecord> records(5);
        for (std::size_t i = 0; i < records.size(); ++i) {
            records[i].identity = static_cast<std::int64_t>(i);
            records[i].camera = 1 + static_cast<std::int32_t>(i % 2);
            records[i].vector = {rng.normal(), rng.normal(), rng.normal()};
        }
        save_embeddings(dir / "a.cmle", records);
        save_embeddings(dir / "b.cmle", load_embeddings(dir / "a.cmle"));
        if (file_bytes(dir / "a.cmle") != file_bytes(dir / "b.cmle")) pass = false;

        // corrupted magic fixtures
        const auto corrupt = [&](const fs::path& p) {
            auto bytes = file_bytes(p);
            bytes[0] = 'X';
            std::ofstream out(p, std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        };
        corrupt(dir / "a.cmlt");
        corrupt(dir / "a.cmck");
        corrupt(dir / "a.cmle");
        const auto expect_bad_magic = [&](const std::function<void()>& load) {
            try {
                load();
                pass = false;
            } catch (const ParseError& e) {
                if (std::string(e.what()).find("bad magic") == std::string::npos) pass = false;
            }
        };
        expect_bad_magic([&] { load_tensor(dir / "a.cmlt"); });
        expect_bad_magic([&] { load_checkpoint(dir / "a.cmck"); });
        expect_bad_magic([&] { load_embeddings(dir / "a.cmle"); });
    } catch (const std::exception& e) {
        pass = false;
        note = std::string("format criterion failed: ") + e.what();
    }
    fs::remove_all(dir);
    report(9, pass, note);
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_gradients();
    criterion_equivalence();
    criterion_invariance();
    criterion_metric_oracle();
    criterion_architecture();
    DeskScale ds;
    criteria_desk_scale(ds);
    criterion_determinism(ds);
    criterion_formats();
    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
