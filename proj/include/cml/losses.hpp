#pragma once

// Training objectives: standard softmax cross-entropy, cosine softmax
// cross-entropy with trainable scale, triplet loss (hard and soft margin,
// batch-all mining), unimodal magnet loss with batch-local statistics, and
// the soft-triplet monitor logged across all runs.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "cml/autodiff.hpp"
#include "cml/ops.hpp"
#include "cml/rng.hpp"

namespace cml {

using Labels = std::vector<std::int64_t>;

/// Classifier over cosine similarities: p(y=k|r) = softmax_k(kappa * w~_k . r)
/// with unit-norm effective weights w~_k = w_k/||w_k|| and unit-norm features.
/// No bias terms. The scale kappa is optimized in log parametrization so it
/// stays positive; its weight decay (kappa_weight_decay * kappa^2) is part of
/// the loss objective.
struct CosineSoftmaxHead {
    NodePtr weights;   // [K x d] raw, unnormalized
    NodePtr log_kappa; // [1]
    double kappa_weight_decay = 0.1;

    static CosineSoftmaxHead init(std::size_t num_classes, std::size_t dim, Rng& rng,
                                  double kappa_init = 1.0, double kappa_decay = 0.1) {
        Tensor w({num_classes, dim});
        const double bound = std::sqrt(6.0 / static_cast<double>(dim));
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = (rng.uniform() * 2.0 - 1.0) * bound;
        CosineSoftmaxHead head;
        head.weights = make_leaf(std::move(w), true);
        head.log_kappa = make_leaf(Tensor::scalar(std::log(kappa_init)), true);
        head.kappa_weight_decay = kappa_decay;
        return head;
    }

    double kappa() const { return std::exp(log_kappa->value[0]); }
    std::size_t num_classes() const { return weights->value.dim(0); }
    std::size_t dim() const { return weights->value.dim(1); }

    /// kappa * (features . w~^T). Features must be unit rows (within 1e-6).
    NodePtr logits(const NodePtr& unit_features) const {
        check_unit_rows(unit_features->value);
        NodePtr w_tilde = ops::l2_normalize(weights);
        NodePtr cos = ops::matmul_nt(unit_features, w_tilde);
        NodePtr kappa_node = ops::exp_(log_kappa);
        return ops::mul_by_scalar_node(cos, kappa_node);
    }

    /// Mean cross-entropy plus kappa_weight_decay * kappa^2.
    NodePtr loss(const NodePtr& unit_features, const Labels& labels) const {
        NodePtr ce = ops::softmax_cross_entropy(logits(unit_features), labels);
        if (kappa_weight_decay == 0.0) return ce;
        NodePtr kappa_node = ops::exp_(log_kappa);
        NodePtr penalty = ops::scale(ops::square(kappa_node), kappa_weight_decay);
        return ops::add(ce, penalty);
    }

    static void check_unit_rows(const Tensor& features, double tol = 1e-6) {
        check_matrix(features, "cosine softmax");
        const std::size_t n = features.dim(0), d = features.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
            const double nrm = l2_norm(features.data() + i * d, d);
            if (std::abs(nrm - 1.0) > tol)
                throw Error("cosine softmax: feature row " + std::to_string(i) +
                            " is not unit norm (|r| = " + std::to_string(nrm) + ")");
        }
    }
};

/// Row-stochastic class posteriors of the cosine softmax head; value level.
inline Tensor cosine_softmax_probs(const Tensor& unit_features, const CosineSoftmaxHead& head) {
    CosineSoftmaxHead::check_unit_rows(unit_features);
    const std::size_t k = head.num_classes(), d = head.dim();
    Tensor w_tilde = head.weights->value;
    for (std::size_t i = 0; i < k; ++i) {
        const double denom = std::max(l2_norm(w_tilde.data() + i * d, d), 1e-12);
        for (std::size_t j = 0; j < d; ++j) w_tilde[i * d + j] /= denom;
    }
    Tensor logits = matmul_nt(unit_features, w_tilde);
    const double kappa = head.kappa();
    for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] *= kappa;
    return ops::detail::softmax_rows(logits);
}

/// Conventional softmax classifier: logit_k = w_k . r + b_k.
struct StandardSoftmaxHead {
    NodePtr weights; // [K x d]
    NodePtr biases;  // [K]

    static StandardSoftmaxHead init(std::size_t num_classes, std::size_t dim, Rng& rng) {
        Tensor w({num_classes, dim});
        const double bound = std::sqrt(6.0 / static_cast<double>(dim));
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] = (rng.uniform() * 2.0 - 1.0) * bound;
        StandardSoftmaxHead head;
        head.weights = make_leaf(std::move(w), true);
        head.biases = make_leaf(Tensor({num_classes}), true);
        return head;
    }

    NodePtr logits(const NodePtr& features) const {
        return ops::dense(features, weights, biases);
    }

    NodePtr loss(const NodePtr& features, const Labels& labels) const {
        return ops::softmax_cross_entropy(logits(features), labels);
    }
};

inline Tensor standard_softmax_probs(const Tensor& features, const StandardSoftmaxHead& head) {
    Tensor logits = matmul_nt(features, head.weights->value);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) logits[i * k + j] += head.biases->value[j];
    return ops::detail::softmax_rows(logits);
}

struct TripletConfig {
    enum class Variant { hard_margin, soft_margin };
    Variant variant = Variant::soft_margin;
    double margin = 1.0; // ignored by the soft variant
};

namespace detail {

struct TripletIndex {
    std::vector<std::size_t> ap; // flat index of (a,p) into the n x n distance matrix
    std::vector<std::size_t> an; // flat index of (a,n)
};

/// Batch-all enumeration: every ordered (anchor, positive) pair of a class
/// combined with every negative, in index order.
inline TripletIndex enumerate_triplets(const Labels& labels) {
    const std::size_t n = labels.size();
    TripletIndex t;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::size_t neg = 0; neg < n; ++neg) {
                if (labels[neg] == labels[a]) continue;
                t.ap.push_back(a * n + p);
                t.an.push_back(a * n + neg);
            }
        }
    return t;
}

} // namespace detail

/// Triplet loss over all valid within-batch triplets (a, p, n):
///   hard: mean {d_ap - d_an + m}_+     soft: mean log(1 + exp(d_ap - d_an))
/// with d = sqrt(max(squared pairwise distance, 0)).
inline NodePtr triplet_loss(const NodePtr& features, const Labels& labels,
                            const TripletConfig& cfg) {
    check_matrix(features->value, "triplet_loss");
    if (labels.size() != features->value.dim(0))
        throw DimensionError("triplet_loss: label count mismatch");
    detail::TripletIndex idx = detail::enumerate_triplets(labels);
    if (idx.ap.empty())
        throw NoTripletError("triplet_loss: batch has no valid (anchor, positive, negative) triplet");

    NodePtr dist = ops::sqrt_clamped(ops::squared_euclidean_pairwise(features));
    NodePtr diff = ops::sub(ops::gather(dist, idx.ap), ops::gather(dist, idx.an));
    NodePtr per_triplet = cfg.variant == TripletConfig::Variant::soft_margin
                              ? ops::softplus(diff)
                              : ops::relu(ops::add_scalar(diff, cfg.margin));
    return ops::mean(per_triplet);
}

/// Soft-margin triplet value of the current batch, recorded regardless of the
/// active objective. Shares the triplet_loss code path so a soft-triplet run's
/// monitor equals its training loss exactly. Absent (not an error) when the
/// batch has no valid triplet.
inline std::optional<double> monitor_triplet(const Tensor& features, const Labels& labels) {
    NodePtr leaf = make_leaf(features, false);
    try {
        return triplet_loss(leaf, labels, {TripletConfig::Variant::soft_margin, 0.0})->value[0];
    } catch (const NoTripletError&) {
        return std::nullopt;
    }
}

struct MagnetConfig {
    double margin = 1.0;
};

struct MagnetLossParts {
    NodePtr loss;       // scalar: batch mean of per-sample hinged values
    NodePtr per_sample; // [n] hinged per-sample losses, for inspection
};

/// Unimodal magnet loss with batch-local statistics. Per sample:
///   L = { ||r - mu_y||^2/(2 s^2) + m + logsumexp_{k != y}(-||r - mu_k||^2/(2 s^2)) }_+
/// where mu_k are the batch class means and s^2 is the variance of all samples
/// away from their class mean with 1/(N-1) normalization.
inline MagnetLossParts magnet_loss_parts(const NodePtr& features, const Labels& labels,
                                         const MagnetConfig& cfg) {
    check_matrix(features->value, "magnet_loss");
    const std::size_t n = features->value.dim(0);
    if (labels.size() != n) throw DimensionError("magnet_loss: label count mismatch");
    if (n < 2) throw SingleClassBatchError("magnet_loss: batch too small");

    // Present classes, in ascending label order.
    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
    const std::size_t num_classes = by_class.size();
    if (num_classes < 2)
        throw SingleClassBatchError("magnet_loss: batch holds a single class");

    std::vector<std::size_t> class_of(n);
    {
        std::size_t k = 0;
        for (const auto& [label, members] : by_class) {
            for (std::size_t i : members) class_of[i] = k;
            ++k;
        }
    }

    // Class means via a constant averaging matrix: mu = M X, M[k][i] = 1/|k|.
    Tensor m_avg({num_classes, n});
    {
        std::size_t k = 0;
        for (const auto& [label, members] : by_class) {
            for (std::size_t i : members) m_avg[k * n + i] = 1.0 / static_cast<double>(members.size());
            ++k;
        }
    }
    NodePtr means = ops::matmul(make_leaf(std::move(m_avg), false), features);

    // Shared variance: sum of squared deviations from own class mean, / (N-1).
    Tensor g_sel({n, num_classes});
    for (std::size_t i = 0; i < n; ++i) g_sel[i * num_classes + class_of[i]] = 1.0;
    NodePtr own_mean = ops::matmul(make_leaf(std::move(g_sel), false), means);
    NodePtr deviations = ops::sub(features, own_mean);
    NodePtr variance = ops::scale(ops::sum(ops::square(deviations)),
                                  1.0 / static_cast<double>(n - 1));
    if (variance->value[0] < 1e-12)
        throw DegenerateVarianceError("magnet_loss: batch variance " +
                                      std::to_string(variance->value[0]) + " below 1e-12");

    // Exponents -||r_i - mu_k||^2 / (2 s^2) for all sample/class pairs.
    NodePtr sqdist = ops::pairwise_sqdist(features, means); // [n x C]
    NodePtr neg_half_inv_var = ops::scale(ops::reciprocal(ops::scale(variance, 2.0)), -1.0);
    NodePtr exponents = ops::mul_by_scalar_node(sqdist, neg_half_inv_var);

    // Numerator exponent (own class, margin-shifted) and log denominator.
    std::vector<std::size_t> own_idx(n);
    std::vector<std::uint8_t> other_mask(n * num_classes, 1);
    for (std::size_t i = 0; i < n; ++i) {
        own_idx[i] = i * num_classes + class_of[i];
        other_mask[own_idx[i]] = 0;
    }
    NodePtr own_exp = ops::add_scalar(ops::gather(exponents, own_idx), -cfg.margin);
    NodePtr log_denom = ops::row_logsumexp_masked(exponents, std::move(other_mask));

    MagnetLossParts parts;
    parts.per_sample = ops::relu(ops::sub(log_denom, own_exp));
    parts.loss = ops::mean(parts.per_sample);
    return parts;
}

inline NodePtr magnet_loss(const NodePtr& features, const Labels& labels, const MagnetConfig& cfg) {
    return magnet_loss_parts(features, labels, cfg).loss;
}

} // namespace cml
