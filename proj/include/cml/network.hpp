#pragma once

// Encoders: the Table-1 style pre-activation residual CNN for 3x128x64 RGB
// inputs, and a small dense/ELU MLP for desk-scale experiments. Both expose
// named parameters and running statistics for optimization and checkpoints.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cml/autodiff.hpp"
#include "cml/ops.hpp"
#include "cml/rng.hpp"

namespace cml {

struct NamedParam {
    std::string name;
    NodePtr node;
};

struct NamedStat {
    std::string name;
    Tensor* tensor;
};

namespace layers {

inline NodePtr uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = (rng.uniform() * 2.0 - 1.0) * bound;
    return make_leaf(std::move(t), true);
}

struct Conv {
    NodePtr weight; // [oc x ic x k x k]
    NodePtr bias;   // null when followed by batchnorm
    std::size_t stride = 1;

    static Conv init(std::size_t ic, std::size_t oc, std::size_t k, std::size_t stride,
                     bool with_bias, Rng& rng) {
        Conv conv;
        conv.weight = uniform_fan_in({oc, ic, k, k}, ic * k * k, rng);
        if (with_bias) conv.bias = make_leaf(Tensor({oc}), true);
        conv.stride = stride;
        return conv;
    }

    NodePtr forward(const NodePtr& x) const { return ops::conv2d(x, weight, bias, stride); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + "/weight", weight});
        if (bias) out.push_back({prefix + "/bias", bias});
    }
};

struct Dense {
    NodePtr weight; // [out x in]
    NodePtr bias;   // [out]

    static Dense init(std::size_t in, std::size_t out, Rng& rng) {
        Dense d;
        d.weight = uniform_fan_in({out, in}, in, rng);
        d.bias = make_leaf(Tensor({out}), true);
        return d;
    }

    NodePtr forward(const NodePtr& x) const { return ops::dense(x, weight, bias); }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + "/weight", weight});
        out.push_back({prefix + "/bias", bias});
    }
};

struct BatchNorm {
    NodePtr gamma;
    NodePtr beta;
    ops::BatchNormState state;

    static BatchNorm init(std::size_t channels) {
        BatchNorm bn;
        bn.gamma = make_leaf(Tensor::full({channels}, 1.0), true);
        bn.beta = make_leaf(Tensor({channels}), true);
        bn.state = ops::BatchNormState(channels);
        return bn;
    }

    NodePtr forward(const NodePtr& x, Mode mode) {
        return ops::batchnorm(x, gamma, beta, &state, mode);
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + "/gamma", gamma});
        out.push_back({prefix + "/beta", beta});
    }

    void collect_stats(const std::string& prefix, std::vector<NamedStat>& out) {
        out.push_back({prefix + "/running_mean", &state.running_mean});
        out.push_back({prefix + "/running_var", &state.running_var});
    }
};

/// Pre-activation residual block: BN - ELU - conv3x3(stride s) - BN - ELU -
/// dropout - conv3x3. Shape changes go through the strided first conv and a
/// 1x1 stride-s projection applied to the pre-activated input. Stride-1,
/// equal-channel blocks keep the identity skip.
struct Residual {
    BatchNorm bn_a;
    Conv conv_a;
    BatchNorm bn_b;
    Conv conv_b;
    Conv proj; // weight null when skip is identity
    double dropout_p = 0.0;

    static Residual init(std::size_t ic, std::size_t oc, std::size_t stride, double dropout_p,
                         Rng& rng) {
        Residual r;
        r.bn_a = BatchNorm::init(ic);
        r.conv_a = Conv::init(ic, oc, 3, stride, false, rng);
        r.bn_b = BatchNorm::init(oc);
        r.conv_b = Conv::init(oc, oc, 3, 1, false, rng);
        if (ic != oc || stride != 1) r.proj = Conv::init(ic, oc, 1, stride, false, rng);
        r.dropout_p = dropout_p;
        return r;
    }

    NodePtr forward(const NodePtr& x, Mode mode, Rng* dropout_rng) {
        NodePtr h = ops::elu(bn_a.forward(x, mode));
        NodePtr skip = proj.weight ? proj.forward(h) : x;
        NodePtr r = conv_a.forward(h);
        r = ops::elu(bn_b.forward(r, mode));
        if (dropout_p > 0.0 && mode == Mode::training) {
            if (dropout_rng == nullptr) throw Error("residual block: dropout needs an rng in training mode");
            r = ops::dropout(r, dropout_p, mode, *dropout_rng);
        }
        r = conv_b.forward(r);
        return ops::add(skip, r);
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        bn_a.collect(prefix + "/bn_a", out);
        conv_a.collect(prefix + "/conv_a", out);
        bn_b.collect(prefix + "/bn_b", out);
        conv_b.collect(prefix + "/conv_b", out);
        if (proj.weight) proj.collect(prefix + "/proj", out);
    }

    void collect_stats(const std::string& prefix, std::vector<NamedStat>& out) {
        bn_a.collect_stats(prefix + "/bn_a", out);
        bn_b.collect_stats(prefix + "/bn_b", out);
    }
};

} // namespace layers

class Encoder {
public:
    virtual ~Encoder() = default;

    /// Build the forward graph for a batch node. `dropout_rng` is consumed
    /// only in training mode by architectures that use dropout.
    virtual NodePtr forward(const NodePtr& batch, Mode mode, Rng* dropout_rng) = 0;

    virtual std::vector<NamedParam> parameters() const = 0;
    virtual std::vector<NamedStat> running_stats() = 0;
    virtual Shape input_shape() const = 0; // per sample
    virtual std::size_t embedding_dim() const = 0;
    virtual bool final_l2() const = 0;
    virtual std::string arch() const = 0;

    void check_batch(const Tensor& batch) const {
        const Shape want = input_shape();
        const Shape& got = batch.shape();
        bool ok = got.size() == want.size() + 1;
        for (std::size_t i = 0; ok && i < want.size(); ++i) ok = got[i + 1] == want[i];
        if (!ok) {
            Shape batched = want;
            batched.insert(batched.begin(), 0);
            throw DimensionError(arch() + " encoder: batch shape " + shape_str(got) +
                                 ", expected [N]+" + shape_str(want));
        }
    }
};

/// Per-sample embeddings of a batch; rows are unit norm when the encoder ends
/// in l2 normalization. Training mode with batch size 1 fails in batchnorm.
inline Tensor forward_embed(Encoder& encoder, const Tensor& batch, Mode mode,
                            Rng* dropout_rng = nullptr) {
    encoder.check_batch(batch);
    return encoder.forward(make_leaf(batch, false), mode, dropout_rng)->value;
}

struct ParamCountEntry {
    std::string name;
    Shape shape;
    std::size_t count;
};

struct ParamCountReport {
    std::vector<ParamCountEntry> entries;
    std::size_t total = 0;

    /// Sum of entries whose name starts with `prefix`.
    std::size_t prefix_total(const std::string& prefix) const {
        std::size_t s = 0;
        for (const auto& e : entries)
            if (e.name.rfind(prefix, 0) == 0) s += e.count;
        return s;
    }
};

inline ParamCountReport count_parameters(const Encoder& encoder) {
    ParamCountReport report;
    for (const auto& p : encoder.parameters()) {
        report.entries.push_back({p.name, p.node->value.shape(), p.node->value.numel()});
        report.total += p.node->value.numel();
    }
    return report;
}

/// Table-1 style encoder for 3x128x64 RGB inputs:
/// Conv1(3x3/1,32) Conv2(3x3/1,32) MaxPool3(3x3/2) Residual4,5(32,/1)
/// Residual6(64,/2) Residual7(64,/1) Residual8(128,/2) Residual9(128,/1)
/// Dense10(->embedding) [l2 normalize].
class PaperEncoder final : public Encoder {
public:
    static constexpr std::size_t kReferenceParamCount = 2800864;

    PaperEncoder(std::size_t embedding_dim, bool final_l2, double dropout_p, Rng& rng)
        : embedding_dim_(embedding_dim), final_l2_(final_l2) {
        conv1_ = layers::Conv::init(3, 32, 3, 1, true, rng);
        bn1_ = layers::BatchNorm::init(32);
        conv2_ = layers::Conv::init(32, 32, 3, 1, true, rng);
        bn2_ = layers::BatchNorm::init(32);
        res_.push_back(layers::Residual::init(32, 32, 1, dropout_p, rng));
        res_.push_back(layers::Residual::init(32, 32, 1, dropout_p, rng));
        res_.push_back(layers::Residual::init(32, 64, 2, dropout_p, rng));
        res_.push_back(layers::Residual::init(64, 64, 1, dropout_p, rng));
        res_.push_back(layers::Residual::init(64, 128, 2, dropout_p, rng));
        res_.push_back(layers::Residual::init(128, 128, 1, dropout_p, rng));
        dense10_ = layers::Dense::init(128 * 16 * 8, embedding_dim, rng);
    }

    NodePtr forward(const NodePtr& batch, Mode mode, Rng* dropout_rng) override {
        return forward_impl(batch, mode, dropout_rng, nullptr);
    }

    /// Stage names and per-sample output shapes for a probe input.
    std::vector<std::pair<std::string, Shape>> stage_shapes() {
        std::vector<std::pair<std::string, Shape>> stages;
        NodePtr probe = make_leaf(Tensor({1, 3, 128, 64}), false);
        forward_impl(probe, Mode::inference, nullptr, &stages);
        return stages;
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        conv1_.collect("conv1", out);
        bn1_.collect("bn1", out);
        conv2_.collect("conv2", out);
        bn2_.collect("bn2", out);
        for (std::size_t i = 0; i < res_.size(); ++i)
            res_[i].collect("res" + std::to_string(i + 4), out);
        dense10_.collect("dense10", out);
        return out;
    }

    std::vector<NamedStat> running_stats() override {
        std::vector<NamedStat> out;
        bn1_.collect_stats("bn1", out);
        bn2_.collect_stats("bn2", out);
        for (std::size_t i = 0; i < res_.size(); ++i)
            res_[i].collect_stats("res" + std::to_string(i + 4), out);
        return out;
    }

    Shape input_shape() const override { return {3, 128, 64}; }
    std::size_t embedding_dim() const override { return embedding_dim_; }
    bool final_l2() const override { return final_l2_; }
    std::string arch() const override { return "paper"; }

private:
    NodePtr forward_impl(const NodePtr& batch, Mode mode, Rng* dropout_rng,
                         std::vector<std::pair<std::string, Shape>>* stages) {
        const auto note = [&](const char* name, const NodePtr& node) {
            if (stages) {
                Shape per_sample(node->value.shape().begin() + 1, node->value.shape().end());
                stages->emplace_back(name, per_sample);
            }
        };
        NodePtr h = ops::elu(bn1_.forward(conv1_.forward(batch), mode));
        note("conv1", h);
        h = ops::elu(bn2_.forward(conv2_.forward(h), mode));
        note("conv2", h);
        h = ops::maxpool2d(h, 3, 2);
        note("maxpool3", h);
        static const char* res_names[] = {"res4", "res5", "res6", "res7", "res8", "res9"};
        for (std::size_t i = 0; i < res_.size(); ++i) {
            h = res_[i].forward(h, mode, dropout_rng);
            note(res_names[i], h);
        }
        h = ops::reshape(h, {h->value.dim(0), h->value.numel() / h->value.dim(0)});
        h = dense10_.forward(h);
        note("dense10", h);
        if (final_l2_) {
            h = ops::l2_normalize(h);
            note("l2_normalize", h);
        }
        return h;
    }

    std::size_t embedding_dim_;
    bool final_l2_;
    layers::Conv conv1_, conv2_;
    layers::BatchNorm bn1_, bn2_;
    std::vector<layers::Residual> res_;
    layers::Dense dense10_;
};

/// Builds the reference encoder and verifies every stage's output shape
/// against the documented layout on a probe batch.
inline std::unique_ptr<PaperEncoder> build_paper_encoder(Rng& rng, std::size_t embedding_dim = 128,
                                                         bool final_l2 = true,
                                                         double dropout_p = 0.4) {
    auto enc = std::make_unique<PaperEncoder>(embedding_dim, final_l2, dropout_p, rng);
    static const std::vector<std::pair<std::string, Shape>> expected = {
        {"conv1", {32, 128, 64}},    {"conv2", {32, 128, 64}}, {"maxpool3", {32, 64, 32}},
        {"res4", {32, 64, 32}},      {"res5", {32, 64, 32}},   {"res6", {64, 32, 16}},
        {"res7", {64, 32, 16}},      {"res8", {128, 16, 8}},   {"res9", {128, 16, 8}},
        {"dense10", {embedding_dim}},
    };
    const auto stages = enc->stage_shapes();
    for (const auto& [name, shape] : expected) {
        bool found = false;
        for (const auto& [got_name, got_shape] : stages)
            if (got_name == name) {
                found = true;
                if (got_shape != shape)
                    throw Error("paper encoder: stage " + name + " has shape " + shape_str(got_shape) +
                                ", expected " + shape_str(shape));
            }
        if (!found) throw Error("paper encoder: stage " + name + " missing");
    }
    return enc;
}

/// Dense/ELU stack for desk-scale runs: input -> hidden widths (dense + ELU
/// each) -> embedding dense -> optional l2 normalization. No batchnorm or
/// dropout, so it trains deterministically on any batch size.
class ToyMlpEncoder final : public Encoder {
public:
    ToyMlpEncoder(std::size_t input_dim, std::vector<std::size_t> hidden,
                  std::size_t embedding_dim, bool final_l2, Rng& rng)
        : input_dim_(input_dim), hidden_(std::move(hidden)), embedding_dim_(embedding_dim),
          final_l2_(final_l2) {
        std::size_t in = input_dim;
        for (std::size_t width : hidden_) {
            dense_.push_back(layers::Dense::init(in, width, rng));
            in = width;
        }
        embed_ = layers::Dense::init(in, embedding_dim, rng);
    }

    NodePtr forward(const NodePtr& batch, Mode mode, Rng*) override {
        (void)mode;
        NodePtr h = batch;
        if (h->value.rank() != 2)
            h = ops::reshape(h, {h->value.dim(0), h->value.numel() / h->value.dim(0)});
        for (const auto& layer : dense_) h = ops::elu(layer.forward(h));
        h = embed_.forward(h);
        if (final_l2_) h = ops::l2_normalize(h);
        return h;
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        for (std::size_t i = 0; i < dense_.size(); ++i)
            dense_[i].collect("mlp/dense" + std::to_string(i), out);
        embed_.collect("mlp/embed", out);
        return out;
    }

    std::vector<NamedStat> running_stats() override { return {}; }
    Shape input_shape() const override { return {input_dim_}; }
    std::size_t embedding_dim() const override { return embedding_dim_; }
    bool final_l2() const override { return final_l2_; }
    std::string arch() const override { return "toy"; }

    const std::vector<std::size_t>& hidden_widths() const { return hidden_; }

private:
    std::size_t input_dim_;
    std::vector<std::size_t> hidden_;
    std::size_t embedding_dim_;
    bool final_l2_;
    std::vector<layers::Dense> dense_;
    layers::Dense embed_;
};

} // namespace cml
