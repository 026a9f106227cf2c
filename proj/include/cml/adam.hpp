#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cml/autodiff.hpp"
#include "cml/network.hpp"

namespace cml {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Weight decay enters as an additive L2 gradient
/// term (decay * theta) before the moment updates, with a per-parameter decay
/// coefficient.
class AdamOptimizer {
public:
    struct Entry {
        NodePtr param;
        double weight_decay = 0.0;
    };

    AdamOptimizer(std::vector<Entry> entries, AdamConfig cfg = {})
        : entries_(std::move(entries)), cfg_(cfg) {
        for (const auto& e : entries_) {
            moment1_.emplace_back(e.param->value.shape());
            moment2_.emplace_back(e.param->value.shape());
        }
    }

    std::uint64_t step_count() const { return step_; }
    const std::vector<Entry>& entries() const { return entries_; }

    void zero_grad() {
        for (const auto& e : entries_) cml::zero_grad(e.param);
    }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < entries_.size(); ++p) {
            Tensor& theta = entries_[p].param->value;
            const Tensor& grad = entries_[p].param->grad;
            const double decay = entries_[p].weight_decay;
            Tensor& m = moment1_[p];
            Tensor& v = moment2_[p];
            for (std::size_t i = 0; i < theta.numel(); ++i) {
                const double g = grad[i] + decay * theta[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                theta[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
            }
        }
    }

private:
    std::vector<Entry> entries_;
    AdamConfig cfg_;
    std::vector<Tensor> moment1_;
    std::vector<Tensor> moment2_;
    std::uint64_t step_ = 0;
};

} // namespace cml
