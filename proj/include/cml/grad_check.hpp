#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cml/autodiff.hpp"

namespace cml {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_coord = 0;
    bool nan_found = false;
    bool pass = false;

    std::string describe() const {
        if (nan_found)
            return "NaN gradient at input " + std::to_string(worst_input) + " coord " +
                   std::to_string(worst_coord);
        return "max rel error " + std::to_string(max_rel_error) + " at input " +
               std::to_string(worst_input) + " coord " + std::to_string(worst_coord);
    }
};

/// Compare analytic gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. `fn` rebuilds the scalar
/// loss from the inputs' current values; it must be deterministic (ops with
/// internal randomness should reseed per call).
inline GradCheckReport grad_check(const std::function<NodePtr()>& fn,
                                  const std::vector<NodePtr>& inputs, double h, double tol) {
    NodePtr loss = fn();
    if (loss->value.numel() != 1) throw Error("grad_check: closure must produce a scalar");
    for (const auto& in : inputs) zero_grad(in);
    backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) analytic.push_back(in->grad);

    GradCheckReport report;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        Tensor& v = inputs[which]->value;
        for (std::size_t i = 0; i < v.numel(); ++i) {
            const double saved = v[i];
            v[i] = saved + h;
            const double f_plus = fn()->value[0];
            v[i] = saved - h;
            const double f_minus = fn()->value[0];
            v[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double an = analytic[which][i];
            if (!std::isfinite(an) || !std::isfinite(numeric)) {
                report.nan_found = true;
                report.worst_input = which;
                report.worst_coord = i;
                report.pass = false;
                return report;
            }
            const double denom = std::max({1.0, std::abs(an), std::abs(numeric)});
            const double rel = std::abs(an - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_input = which;
                report.worst_coord = i;
            }
        }
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

} // namespace cml
