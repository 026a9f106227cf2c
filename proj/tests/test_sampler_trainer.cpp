#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "cml/sampler.hpp"
#include "cml/synthetic.hpp"
#include "cml/trainer.hpp"

using namespace cml;

namespace {

DatasetIndex toy_index(std::size_t ids, std::size_t per_id) {
    DatasetIndex index;
    for (std::size_t id = 0; id < ids; ++id)
        for (std::size_t s = 0; s < per_id; ++s) {
            DatasetEntry e;
            e.synthetic_id = static_cast<std::int64_t>(id * per_id + s);
            e.identity = static_cast<std::int64_t>(id);
            e.camera = (s % 2 == 0) ? 1 : 2;
            index.entries.push_back(e);
        }
    return index;
}

} // namespace

TEST_CASE("pk batch: P identities times K images", "[trainer]") {
    DatasetIndex index = toy_index(40, 10);
    Rng rng(0);
    const auto batch = sample_pk_batch(index, 32, 4, rng);
    REQUIRE(batch.size() == 128);
    std::map<std::int64_t, int> counts;
    for (std::size_t pos : batch) counts[index.entries[pos].identity]++;
    CHECK(counts.size() == 32);
    for (const auto& [id, n] : counts) CHECK(n == 4);

    // within an identity with >= K images, no duplicates
    std::set<std::size_t> unique(batch.begin(), batch.end());
    CHECK(unique.size() == batch.size());
}

TEST_CASE("pk batch: identity with one image repeats it", "[trainer]") {
    DatasetIndex index;
    for (int id = 0; id < 2; ++id) {
        DatasetEntry e;
        e.synthetic_id = id;
        e.identity = id;
        index.entries.push_back(e);
    }
    Rng rng(1);
    const auto batch = sample_pk_batch(index, 2, 4, rng);
    REQUIRE(batch.size() == 8);
    std::map<std::int64_t, int> counts;
    for (std::size_t pos : batch) counts[index.entries[pos].identity]++;
    CHECK(counts[0] == 4);
    CHECK(counts[1] == 4);
}

TEST_CASE("pk batch: determinism and error cases", "[trainer]") {
    DatasetIndex index = toy_index(10, 5);
    Rng a(7), b(7);
    CHECK(sample_pk_batch(index, 4, 2, a) == sample_pk_batch(index, 4, 2, b));

    DatasetIndex one = toy_index(1, 5);
    Rng rng(0);
    CHECK_THROWS_AS(sample_pk_batch(one, 1, 2, rng), Error);
    CHECK_THROWS_AS(sample_pk_batch(index, 11, 2, rng), Error);
}

TEST_CASE("flip augmentation", "[trainer]") {
    Tensor img({2, 3, 4});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i);

    Tensor flipped = flip_width(img);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(flipped.at({c, i, j}) == img.at({c, i, 3 - j}));

    Tensor twice = flip_width(flipped);
    CHECK(twice.values() == img.values());

    Rng rng(3);
    int flips = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Tensor out = augment_flip(img, rng);
        if (out.values() != img.values()) ++flips;
    }
    const double rate = static_cast<double>(flips) / n;
    CHECK(rate >= 0.48);
    CHECK(rate <= 0.52);
}

TEST_CASE("adam: zero gradient keeps parameters, first step ~ -lr*sign", "[trainer]") {
    NodePtr p = make_leaf(Tensor::vector({1.0, -2.0, 3.0}), true);
    AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    AdamOptimizer opt({{p, 0.0}}, cfg);
    opt.step();
    CHECK(p->value.values() == std::vector<double>{1.0, -2.0, 3.0});

    NodePtr q = make_leaf(Tensor::vector({0.5, -0.5}), true);
    AdamOptimizer opt2({{q, 0.0}}, cfg);
    q->grad[0] = 10.0;
    q->grad[1] = -0.3;
    opt2.step();
    CHECK(q->value[0] == Catch::Approx(0.5 - 1e-3).epsilon(1e-6));
    CHECK(q->value[1] == Catch::Approx(-0.5 + 1e-3).epsilon(1e-6));
}

TEST_CASE("adam single step matches hand-computed reference", "[trainer]") {
    NodePtr p = make_leaf(Tensor::vector({1.0, -2.0, 0.5}), true);
    p->grad[0] = 0.1;
    p->grad[1] = -0.4;
    p->grad[2] = 2.0;
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, decay = 0.02;
    AdamConfig cfg;
    cfg.learning_rate = lr;
    AdamOptimizer opt({{p, decay}}, cfg);
    opt.step();
    const double theta0[3] = {1.0, -2.0, 0.5};
    const double grads[3] = {0.1, -0.4, 2.0};
    for (int i = 0; i < 3; ++i) {
        const double g = grads[i] + decay * theta0[i];
        const double m = (1 - b1) * g;
        const double v = (1 - b2) * g * g;
        const double m_hat = m / (1 - b1);
        const double v_hat = v / (1 - b2);
        const double expect = theta0[i] - lr * m_hat / (std::sqrt(v_hat) + eps);
        CHECK(p->value[i] == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("train/val split is identity-stratified", "[trainer]") {
    DatasetIndex index = toy_index(5, 10);
    {
        DatasetEntry lone;
        lone.synthetic_id = 999;
        lone.identity = 99;
        index.entries.push_back(lone);
    }
    auto [train, val] = split_train_val(index, 0.1, 0);
    CHECK(train.entries.size() + val.entries.size() == index.entries.size());

    const auto train_ids = train.by_identity();
    const auto val_ids = val.by_identity();
    for (const auto& [id, members] : index.by_identity()) {
        REQUIRE(train_ids.count(id) == 1); // every identity keeps >= 1 training image
        if (members.size() == 10) {
            CHECK(train_ids.at(id).size() == 9);
            CHECK(val_ids.at(id).size() == 1);
        }
        if (members.size() == 1) CHECK(val_ids.count(id) == 0);
    }

    // partition: no entry in both sides
    std::set<std::int64_t> train_set, val_set;
    for (const auto& e : train.entries) train_set.insert(e.synthetic_id);
    for (const auto& e : val.entries) val_set.insert(e.synthetic_id);
    for (std::int64_t id : val_set) CHECK(train_set.count(id) == 0);

    auto [train2, val2] = split_train_val(index, 0.1, 0);
    CHECK(train2.entries.size() == train.entries.size());
    for (std::size_t i = 0; i < train.entries.size(); ++i)
        CHECK(train2.entries[i].synthetic_id == train.entries[i].synthetic_id);
}

TEST_CASE("per-parameter weight decay assignment", "[trainer]") {
    TrainConfig cfg;
    cfg.weight_decay_network = 1e-8;
    cfg.weight_decay_kappa = 1e-1;
    CHECK(decay_for_param("conv1/weight", cfg) == 1e-8);
    CHECK(decay_for_param("dense10/weight", cfg) == 1e-8);
    CHECK(decay_for_param("head/weights", cfg) == 1e-8);
    CHECK(decay_for_param("res4/bn_a/gamma", cfg) == 0.0);
    CHECK(decay_for_param("res4/bn_a/beta", cfg) == 0.0);
    CHECK(decay_for_param("bn1/gamma", cfg) == 0.0);
    // the kappa decay applies to the classifier scale only
    CHECK(decay_for_param("head/log_kappa", cfg) == 1e-1);
}

TEST_CASE("toy training run: loss decreases, log schema, determinism", "[trainer]") {
    SyntheticSpec spec;
    spec.num_identities = 8;
    spec.samples_per_identity = 12;
    spec.input_dim = 16;
    spec.cluster_spread = 0.2;
    spec.heldout_identities = 0;
    spec.seed = 0;
    SyntheticDataset data = generate_synthetic(spec);
    MemorySource source(&data.samples);

    TrainConfig cfg;
    cfg.iterations = 120;
    cfg.batch_size = 16;
    cfg.images_per_identity = 4;
    cfg.loss = LossKind::cosine_softmax;
    cfg.seed = 1;
    cfg.log_interval = 20;
    cfg.eval_interval = 60;
    cfg.flip_augment = true; // vector inputs: flip is skipped automatically

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;
    arch.hidden = {32};
    arch.embedding_dim = 8;

    TrainResult result = train(cfg, arch, data.train_index, source);
    REQUIRE(!result.log.records.empty());
    CHECK(result.log.records.front().iteration == 0);
    CHECK(result.log.records.back().iteration == 120);
    CHECK(result.log.records.back().loss < result.log.records.front().loss);
    CHECK(result.cosine_head.has_value());
    for (const auto& rec : result.log.records) {
        CHECK(rec.kappa.has_value());
        CHECK(rec.triplet_monitor.has_value());
    }

    // best checkpoint's recorded rank-1 is the max over evaluated iterations
    double best_seen = -1.0;
    for (const auto& rec : result.log.records)
        if (rec.val_rank1) best_seen = std::max(best_seen, *rec.val_rank1);
    REQUIRE(result.best_val_rank1.has_value());
    CHECK(*result.best_val_rank1 == best_seen);

    // CSV schema
    const std::string csv = result.log.to_csv();
    CHECK(csv.rfind("iteration,loss,triplet_monitor,val_rank1,kappa,seconds\n", 0) == 0);

    // bitwise-identical loss traces under the same seed
    TrainResult again = train(cfg, arch, data.train_index, source);
    REQUIRE(again.log.records.size() == result.log.records.size());
    for (std::size_t i = 0; i < result.log.records.size(); ++i) {
        CHECK(again.log.records[i].loss == result.log.records[i].loss);
        CHECK(again.log.records[i].triplet_monitor == result.log.records[i].triplet_monitor);
    }
}

TEST_CASE("triplet run logs no kappa and supports hard margin", "[trainer]") {
    SyntheticSpec spec;
    spec.num_identities = 6;
    spec.samples_per_identity = 8;
    spec.input_dim = 12;
    spec.cluster_spread = 0.2;
    spec.seed = 3;
    SyntheticDataset data = generate_synthetic(spec);
    MemorySource source(&data.samples);

    TrainConfig cfg;
    cfg.iterations = 40;
    cfg.batch_size = 8;
    cfg.images_per_identity = 2;
    cfg.loss = LossKind::triplet_soft;
    cfg.seed = 2;
    cfg.log_interval = 10;
    cfg.eval_interval = 20;

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;
    arch.hidden = {16};
    arch.embedding_dim = 6;

    TrainResult result = train(cfg, arch, data.train_index, source);
    for (const auto& rec : result.log.records) CHECK_FALSE(rec.kappa.has_value());
    // soft-triplet monitor equals the training loss on every record
    for (const auto& rec : result.log.records) {
        REQUIRE(rec.triplet_monitor.has_value());
        CHECK(*rec.triplet_monitor == rec.loss);
    }

    cfg.loss = LossKind::magnet;
    TrainResult magnet_run = train(cfg, arch, data.train_index, source);
    CHECK(magnet_run.log.records.back().loss >= 0.0);
}

TEST_CASE("paper architecture trains end to end on image-shaped batches", "[trainer]") {
    std::vector<Tensor> samples;
    DatasetIndex index;
    Rng rng(1);
    for (int id = 0; id < 4; ++id)
        for (int s = 0; s < 4; ++s) {
            Tensor img({3, 128, 64});
            for (auto& v : img.values()) v = rng.uniform();
            DatasetEntry e;
            e.synthetic_id = static_cast<std::int64_t>(samples.size());
            e.identity = id;
            e.camera = 1 + (s % 2);
            index.entries.push_back(e);
            samples.push_back(std::move(img));
        }
    MemorySource source(&samples);

    TrainConfig cfg;
    cfg.iterations = 2;
    cfg.batch_size = 4;
    cfg.images_per_identity = 2;
    cfg.loss = LossKind::cosine_softmax;
    cfg.seed = 0;
    cfg.log_interval = 1;
    cfg.eval_interval = 2;
    cfg.eval_batch_size = 4;

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::paper;

    // exercises conv backward, batchnorm training mode, residual dropout, and
    // flip augmentation in one loop
    TrainResult r = train(cfg, arch, index, source);
    REQUIRE(r.log.records.size() >= 2);
    CHECK(std::isfinite(r.log.records.back().loss));
    CHECK(r.log.records.back().loss < r.log.records.front().loss);
    CHECK(r.encoder->embedding_dim() == 128);
}

TEST_CASE("full-length toy cosine run drives the training loss below 10%", "[trainer]") {
    SyntheticSpec spec;
    spec.num_identities = 25;
    spec.samples_per_identity = 40;
    spec.input_dim = 32;
    spec.cluster_spread = 0.15;
    spec.heldout_identities = 5;
    spec.seed = 0;
    SyntheticDataset data = generate_synthetic(spec);
    MemorySource source(&data.samples);

    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.batch_size = 32;
    cfg.images_per_identity = 4;
    cfg.loss = LossKind::cosine_softmax;
    cfg.seed = 0;
    cfg.log_interval = 500;
    cfg.eval_interval = 1000;

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;
    arch.hidden = {64, 64};
    arch.embedding_dim = 32;

    TrainResult result = train(cfg, arch, data.train_index, source);
    const double initial = result.log.records.front().loss;
    const double final_loss = result.log.records.back().loss;
    INFO("loss " << initial << " -> " << final_loss);
    CHECK(final_loss < 0.10 * initial);
    // kappa grows as class overlap shrinks, restrained by its weight decay
    REQUIRE(result.log.records.back().kappa.has_value());
    CHECK(*result.log.records.back().kappa > 1.0);
}

TEST_CASE("config validation errors", "[trainer]") {
    SyntheticSpec spec;
    spec.num_identities = 4;
    spec.samples_per_identity = 4;
    spec.input_dim = 8;
    spec.seed = 0;
    SyntheticDataset data = generate_synthetic(spec);
    MemorySource source(&data.samples);
    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;

    TrainConfig bad;
    bad.batch_size = 10;
    bad.images_per_identity = 4; // not divisible
    CHECK_THROWS_AS(train(bad, arch, data.train_index, source), ConfigError);

    TrainConfig p1;
    p1.batch_size = 4;
    p1.images_per_identity = 4; // P = 1
    p1.loss = LossKind::triplet_soft;
    CHECK_THROWS_AS(train(p1, arch, data.train_index, source), ConfigError);

    // cosine softmax with final_l2 forced off
    TrainConfig cos_cfg;
    cos_cfg.loss = LossKind::cosine_softmax;
    EncoderSpec no_l2 = arch;
    no_l2.final_l2 = 0;
    CHECK_THROWS_AS(train(cos_cfg, no_l2, data.train_index, source), ConfigError);
}

TEST_CASE("validation always runs at the final iteration", "[trainer]") {
    SyntheticSpec spec;
    spec.num_identities = 5;
    spec.samples_per_identity = 20; // 2 val images per identity
    spec.input_dim = 8;
    spec.cluster_spread = 0.2;
    spec.seed = 9;
    SyntheticDataset data = generate_synthetic(spec);
    MemorySource source(&data.samples);

    TrainConfig cfg;
    cfg.iterations = 50;
    cfg.batch_size = 8;
    cfg.images_per_identity = 2;
    cfg.loss = LossKind::cosine_softmax;
    cfg.seed = 0;
    cfg.log_interval = 25;
    cfg.eval_interval = 40; // not a divisor of 50

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;
    arch.hidden = {8};
    arch.embedding_dim = 4;

    TrainResult result = train(cfg, arch, data.train_index, source);
    REQUIRE(result.log.records.back().iteration == 50);
    CHECK(result.log.records.back().val_rank1.has_value());
    CHECK(result.best_iteration > 0);
}

TEST_CASE("batch errors propagate after one resampling retry", "[trainer]") {
    // Two identities with one image each: K = 1 batches never contain a
    // positive pair, so the triplet loss fails on the retry as well.
    std::vector<Tensor> samples;
    DatasetIndex index;
    Rng rng(5);
    for (int id = 0; id < 2; ++id) {
        Tensor v({6});
        for (auto& x : v.values()) x = rng.normal();
        DatasetEntry e;
        e.synthetic_id = id;
        e.identity = id;
        e.camera = 1 + id;
        index.entries.push_back(e);
        samples.push_back(std::move(v));
    }
    MemorySource source(&samples);

    TrainConfig cfg;
    cfg.iterations = 5;
    cfg.batch_size = 2;
    cfg.images_per_identity = 1; // P = 2, K = 1
    cfg.loss = LossKind::triplet_soft;
    cfg.seed = 0;

    EncoderSpec arch;
    arch.arch = EncoderSpec::Arch::toy;
    arch.hidden = {8};
    arch.embedding_dim = 4;

    CHECK_THROWS_AS(train(cfg, arch, index, source), NoTripletError);
}
