#pragma once

// Autodiff primitives. Every op computes its forward value eagerly and
// registers a backward rule that accumulates into the parents' grads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "cml/autodiff.hpp"
#include "cml/log.hpp"
#include "cml/rng.hpp"
#include "cml/tensor.hpp"

namespace cml::ops {

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = cml::add(a->value, b->value);
    return make_op_node(std::move(out), {a, b}, [a, b](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            a->grad[i] += n.grad[i];
            b->grad[i] += n.grad[i];
        }
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = cml::sub(a->value, b->value);
    return make_op_node(std::move(out), {a, b}, [a, b](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            a->grad[i] += n.grad[i];
            b->grad[i] -= n.grad[i];
        }
    });
}

/// Elementwise (Hadamard) product.
inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_op_node(std::move(out), {a, b}, [a, b](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            a->grad[i] += n.grad[i] * b->value[i];
            b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

inline NodePtr scale(const NodePtr& a, double c) {
    return make_op_node(cml::scale(a->value, c), {a}, [a, c](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += c * n.grad[i];
    });
}

inline NodePtr add_scalar(const NodePtr& a, double c) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
    return make_op_node(std::move(out), {a}, [a](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
    });
}

inline NodePtr sum(const NodePtr& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_op_node(Tensor::scalar(s), {a}, [a](GraphNode& n) {
        const double g = n.grad[0];
        for (std::size_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
    });
}

inline NodePtr mean(const NodePtr& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

inline NodePtr reshape(const NodePtr& a, Shape shape) {
    if (shape_numel(shape) != a->value.numel())
        throw DimensionError("reshape: " + shape_str(a->value.shape()) + " to " + shape_str(shape) +
                             " changes element count");
    Tensor out(std::move(shape), a->value.values());
    return make_op_node(std::move(out), {a}, [a](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
    });
}

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Tensor out = cml::matmul(a->value, b->value);
    return make_op_node(std::move(out), {a, b}, [a, b](GraphNode& n) {
        // dA += G B^T, dB += A^T G
        Tensor da = cml::matmul_nt(n.grad, b->value);
        Tensor db = cml::matmul_tn(a->value, n.grad);
        for (std::size_t i = 0; i < da.numel(); ++i) a->grad[i] += da[i];
        for (std::size_t i = 0; i < db.numel(); ++i) b->grad[i] += db[i];
    });
}

/// a * b^T for row-major matrices; the natural orientation for dense layers
/// and classifier heads whose weights are stored as [out x in] rows.
inline NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    Tensor out = cml::matmul_nt(a->value, b->value);
    return make_op_node(std::move(out), {a, b}, [a, b](GraphNode& n) {
        // C = A B^T: dA += G B, dB += G^T A
        Tensor da = cml::matmul(n.grad, b->value);
        Tensor db = cml::matmul_tn(n.grad, a->value);
        for (std::size_t i = 0; i < da.numel(); ++i) a->grad[i] += da[i];
        for (std::size_t i = 0; i < db.numel(); ++i) b->grad[i] += db[i];
    });
}

namespace detail {

template <typename FwdF, typename DerivF>
NodePtr unary(const NodePtr& a, FwdF&& f, DerivF&& dfdx) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
    Tensor saved = out;
    return make_op_node(std::move(out), {a},
                        [a, saved = std::move(saved), dfdx](GraphNode& n) {
                            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                a->grad[i] += n.grad[i] * dfdx(a->value[i], saved[i]);
                        });
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace detail

inline NodePtr exp_(const NodePtr& a) {
    return detail::unary(a, [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline NodePtr square(const NodePtr& a) {
    return detail::unary(a, [](double x) { return x * x; },
                         [](double x, double) { return 2.0 * x; });
}

inline NodePtr reciprocal(const NodePtr& a) {
    return detail::unary(a, [](double x) { return 1.0 / x; },
                         [](double, double y) { return -y * y; });
}

inline NodePtr relu(const NodePtr& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// sqrt(max(x, 0)); subgradient 0 at and below zero.
inline NodePtr sqrt_clamped(const NodePtr& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; },
                         [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; });
}

/// log(1 + exp(x)), overflow-safe.
inline NodePtr softplus(const NodePtr& a) {
    return detail::unary(
        a,
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return detail::sigmoid(x); });
}

/// Exponential linear unit, alpha = 1.
inline NodePtr elu(const NodePtr& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                         [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

/// t * s where s is a one-element node.
inline NodePtr mul_by_scalar_node(const NodePtr& t, const NodePtr& s) {
    if (s->value.numel() != 1)
        throw DimensionError("mul_by_scalar_node: scale must be one element, got " +
                             shape_str(s->value.shape()));
    const double sv = s->value[0];
    Tensor out = cml::scale(t->value, sv);
    return make_op_node(std::move(out), {t, s}, [t, s, sv](GraphNode& n) {
        double ds = 0.0;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            t->grad[i] += n.grad[i] * sv;
            ds += n.grad[i] * t->value[i];
        }
        s->grad[0] += ds;
    });
}

/// x[n x k] + bias[k] broadcast over rows.
inline NodePtr add_bias_rows(const NodePtr& x, const NodePtr& bias) {
    check_matrix(x->value, "add_bias_rows");
    if (bias->value.rank() != 1 || bias->value.dim(0) != x->value.dim(1))
        throw DimensionError("add_bias_rows: bias " + shape_str(bias->value.shape()) +
                             " does not match " + shape_str(x->value.shape()));
    const std::size_t n = x->value.dim(0), k = x->value.dim(1);
    Tensor out = x->value;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias->value[j];
    return make_op_node(std::move(out), {x, bias}, [x, bias, n, k](GraphNode& nd) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                x->grad[i * k + j] += nd.grad[i * k + j];
                bias->grad[j] += nd.grad[i * k + j];
            }
    });
}

/// Fully connected layer: x[n x in] * W[out x in]^T (+ bias[out]).
inline NodePtr dense(const NodePtr& x, const NodePtr& weight, const NodePtr& bias) {
    NodePtr y = matmul_nt(x, weight);
    return bias ? add_bias_rows(y, bias) : y;
}

/// out[t] = x.flat[indices[t]].
inline NodePtr gather(const NodePtr& x, std::vector<std::size_t> indices) {
    Tensor out({indices.size()});
    for (std::size_t t = 0; t < indices.size(); ++t) {
        if (indices[t] >= x->value.numel()) throw DimensionError("gather: index out of range");
        out[t] = x->value[indices[t]];
    }
    return make_op_node(std::move(out), {x}, [x, idx = std::move(indices)](GraphNode& n) {
        for (std::size_t t = 0; t < idx.size(); ++t) x->grad[idx[t]] += n.grad[t];
    });
}

/// Per-row log(sum(exp(x))) restricted to mask!=0 entries. Every row needs at
/// least one allowed entry.
inline NodePtr row_logsumexp_masked(const NodePtr& x, std::vector<std::uint8_t> mask) {
    check_matrix(x->value, "row_logsumexp_masked");
    const std::size_t n = x->value.dim(0), k = x->value.dim(1);
    if (mask.size() != n * k) throw DimensionError("row_logsumexp_masked: mask size mismatch");
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j)
            if (mask[i * k + j]) m = std::max(m, x->value[i * k + j]);
        if (!std::isfinite(m) && m < 0)
            throw Error("row_logsumexp_masked: row " + std::to_string(i) + " has no allowed entry");
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            if (mask[i * k + j]) s += std::exp(x->value[i * k + j] - m);
        out[i] = m + std::log(s);
    }
    Tensor saved = out;
    return make_op_node(std::move(out), {x},
                        [x, mask = std::move(mask), saved = std::move(saved), n, k](GraphNode& nd) {
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < k; ++j)
                                    if (mask[i * k + j])
                                        x->grad[i * k + j] +=
                                            nd.grad[i] * std::exp(x->value[i * k + j] - saved[i]);
                        });
}

/// Per-row x / max(||x||_2, eps). Rows with ||x|| < eps come out near zero
/// instead of NaN; such inputs are pathological and get logged.
inline NodePtr l2_normalize(const NodePtr& x, double eps = 1e-12) {
    check_matrix(x->value, "l2_normalize");
    const std::size_t n = x->value.dim(0), d = x->value.dim(1);
    Tensor out = x->value;
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double nrm = l2_norm(x->value.data() + i * d, d);
        norms[i] = nrm;
        if (nrm < eps) log_info("l2_normalize: row " + std::to_string(i) + " has near-zero norm");
        const double denom = std::max(nrm, eps);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= denom;
    }
    Tensor saved = out;
    return make_op_node(
        std::move(out), {x},
        [x, saved = std::move(saved), norms = std::move(norms), eps, n, d](GraphNode& nd) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* g = nd.grad.data() + i * d;
                const double* u = saved.data() + i * d;
                if (norms[i] > eps) {
                    const double ug = dot(u, g, d);
                    for (std::size_t j = 0; j < d; ++j)
                        x->grad[i * d + j] += (g[j] - u[j] * ug) / norms[i];
                } else {
                    for (std::size_t j = 0; j < d; ++j) x->grad[i * d + j] += g[j] / eps;
                }
            }
        });
}

/// Squared Euclidean distances between rows of a[n x d] and rows of b[m x d].
/// Computed by direct summation, so every entry is nonnegative by construction.
inline NodePtr pairwise_sqdist(const NodePtr& a, const NodePtr& b) {
    check_matrix(a->value, "pairwise_sqdist");
    check_matrix(b->value, "pairwise_sqdist");
    if (a->value.dim(1) != b->value.dim(1))
        throw DimensionError("pairwise_sqdist: feature dims disagree: " + shape_str(a->value.shape()) +
                             " vs " + shape_str(b->value.shape()));
    const std::size_t n = a->value.dim(0), m = b->value.dim(0), d = a->value.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a->value.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b->value.data() + j * d;
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = ai[t] - bj[t];
                s += diff * diff;
            }
            out[i * m + j] = s;
        }
    }
    return make_op_node(std::move(out), {a, b}, [a, b, n, m, d](GraphNode& nd) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* ai = a->value.data() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double g = nd.grad[i * m + j];
                if (g == 0.0) continue;
                const double* bj = b->value.data() + j * d;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = 2.0 * (ai[t] - bj[t]);
                    a->grad[i * d + t] += g * diff;
                    b->grad[j * d + t] -= g * diff;
                }
            }
        }
    });
}

/// D[i][j] = ||x_i - x_j||^2 over rows of one matrix; diagonal exactly zero.
inline NodePtr squared_euclidean_pairwise(const NodePtr& x) {
    return pairwise_sqdist(x, x);
}

namespace detail {

/// Row softmax with log-sum-exp stabilization, value level.
inline Tensor softmax_rows(const Tensor& logits) {
    check_matrix(logits, "softmax_rows");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor p = logits;
    for (std::size_t i = 0; i < n; ++i) {
        double m = p[i * k];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, p[i * k + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            p[i * k + j] = std::exp(p[i * k + j] - m);
            s += p[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= s;
    }
    return p;
}

} // namespace detail

/// Mean cross-entropy of row softmax against integer labels in [0, K).
/// loss = mean_i (logsumexp(logits_i) - logits_i[y_i]).
inline NodePtr softmax_cross_entropy(const NodePtr& logits, const std::vector<std::int64_t>& labels) {
    check_matrix(logits->value, "softmax_cross_entropy");
    const std::size_t n = logits->value.dim(0), k = logits->value.dim(1);
    if (labels.size() != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " rows");
    for (std::int64_t y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw Error("softmax_cross_entropy: label " + std::to_string(y) + " out of range [0," +
                        std::to_string(k) + ")");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits->value.data() + i * k;
        double m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        loss += (m + std::log(s)) - row[labels[i]];
    }
    loss /= static_cast<double>(n);
    Tensor probs = detail::softmax_rows(logits->value);
    return make_op_node(Tensor::scalar(loss), {logits},
                        [logits, probs = std::move(probs), labels, n, k](GraphNode& nd) {
                            const double g = nd.grad[0] / static_cast<double>(n);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < k; ++j) {
                                    const double ind = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                                    logits->grad[i * k + j] += g * (probs[i * k + j] - ind);
                                }
                        });
}

// ---------------------------------------------------------------------------
// Spatial ops. Layout is N x C x H x W. "Same" padding: output size is
// ceil(in/stride); total padding (out-1)*stride + k - in, split begin = total/2
// with the extra row/column at the end.

struct Pad2d {
    std::size_t out_h, out_w;
    std::ptrdiff_t top, left;
};

inline Pad2d same_padding(std::size_t h, std::size_t w, std::size_t k, std::size_t stride) {
    Pad2d p{};
    p.out_h = (h + stride - 1) / stride;
    p.out_w = (w + stride - 1) / stride;
    const std::ptrdiff_t t_h =
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((p.out_h - 1) * stride + k) -
                                        static_cast<std::ptrdiff_t>(h));
    const std::ptrdiff_t t_w =
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((p.out_w - 1) * stride + k) -
                                        static_cast<std::ptrdiff_t>(w));
    p.top = t_h / 2;
    p.left = t_w / 2;
    return p;
}

namespace detail {

// im2col for one sample: x[c x h x w] -> cols[(c*k*k) x (oh*ow)], zero padded.
inline void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                   std::size_t stride, const Pad2d& p, double* cols) {
    const std::size_t ohw = p.out_h * p.out_w;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                double* row = cols + ((ch * k + ki) * k + kj) * ohw;
                for (std::size_t oi = 0; oi < p.out_h; ++oi) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oi * stride + ki) - p.top;
                    for (std::size_t oj = 0; oj < p.out_w; ++oj) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(oj * stride + kj) - p.left;
                        row[oi * p.out_w + oj] =
                            (ih >= 0 && ih < static_cast<std::ptrdiff_t>(h) && iw >= 0 &&
                             iw < static_cast<std::ptrdiff_t>(w))
                                ? x[(ch * h + static_cast<std::size_t>(ih)) * w +
                                    static_cast<std::size_t>(iw)]
                                : 0.0;
                    }
                }
            }
}

// Transpose of im2col: scatter-add cols gradient back into dx.
inline void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t k, std::size_t stride, const Pad2d& p, double* dx) {
    const std::size_t ohw = p.out_h * p.out_w;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const double* row = cols + ((ch * k + ki) * k + kj) * ohw;
                for (std::size_t oi = 0; oi < p.out_h; ++oi) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oi * stride + ki) - p.top;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t oj = 0; oj < p.out_w; ++oj) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(oj * stride + kj) - p.left;
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                        dx[(ch * h + static_cast<std::size_t>(ih)) * w +
                           static_cast<std::size_t>(iw)] += row[oi * p.out_w + oj];
                    }
                }
            }
}

} // namespace detail

/// 2-D convolution, square kernel, "same" padding. x[N x C x H x W],
/// weight[OC x C x K x K], bias[OC] or null.
inline NodePtr conv2d(const NodePtr& x, const NodePtr& weight, const NodePtr& bias,
                      std::size_t stride) {
    if (x->value.rank() != 4)
        throw DimensionError("conv2d: input must be NxCxHxW, got " + shape_str(x->value.shape()));
    if (weight->value.rank() != 4 || weight->value.dim(2) != weight->value.dim(3))
        throw DimensionError("conv2d: weight must be OCxCxKxK, got " + shape_str(weight->value.shape()));
    if (x->value.dim(1) != weight->value.dim(1))
        throw DimensionError("conv2d: channel mismatch " + shape_str(x->value.shape()) + " vs " +
                             shape_str(weight->value.shape()));
    const std::size_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                      w = x->value.dim(3);
    const std::size_t oc = weight->value.dim(0), k = weight->value.dim(2);
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != oc))
        throw DimensionError("conv2d: bias must be [OC]");
    const Pad2d p = same_padding(h, w, k, stride);
    const std::size_t ckk = c * k * k, ohw = p.out_h * p.out_w;

    Tensor out({n, oc, p.out_h, p.out_w});
    std::vector<double> cols(ckk * ohw);
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(x->value.data() + s * c * h * w, c, h, w, k, stride, p, cols.data());
        double* o = out.data() + s * oc * ohw;
        const double* wm = weight->value.data();
        for (std::size_t f = 0; f < oc; ++f) {
            const double* wrow = wm + f * ckk;
            double* orow = o + f * ohw;
            const double b = bias ? bias->value[f] : 0.0;
            for (std::size_t q = 0; q < ohw; ++q) orow[q] = b;
            for (std::size_t t = 0; t < ckk; ++t) {
                const double wv = wrow[t];
                if (wv == 0.0) continue;
                const double* crow = cols.data() + t * ohw;
                for (std::size_t q = 0; q < ohw; ++q) orow[q] += wv * crow[q];
            }
        }
    }

    std::vector<NodePtr> parents = bias ? std::vector<NodePtr>{x, weight, bias}
                                        : std::vector<NodePtr>{x, weight};
    return make_op_node(
        std::move(out), std::move(parents),
        [x, weight, bias, n, c, h, w, oc, k, p, ckk, ohw, stride](GraphNode& nd) {
            std::vector<double> cols(ckk * ohw);
            std::vector<double> dcols(ckk * ohw);
            for (std::size_t s = 0; s < n; ++s) {
                const double* g = nd.grad.data() + s * oc * ohw;
                detail::im2col(x->value.data() + s * c * h * w, c, h, w, k, stride, p, cols.data());
                // dW += G * cols^T, db += row sums of G
                for (std::size_t f = 0; f < oc; ++f) {
                    const double* grow = g + f * ohw;
                    double* dwrow = weight->grad.data() + f * ckk;
                    for (std::size_t t = 0; t < ckk; ++t) {
                        const double* crow = cols.data() + t * ohw;
                        double acc = 0.0;
                        for (std::size_t q = 0; q < ohw; ++q) acc += grow[q] * crow[q];
                        dwrow[t] += acc;
                    }
                    if (bias) {
                        double acc = 0.0;
                        for (std::size_t q = 0; q < ohw; ++q) acc += grow[q];
                        bias->grad[f] += acc;
                    }
                }
                // dcols = W^T * G, then scatter back
                std::fill(dcols.begin(), dcols.end(), 0.0);
                for (std::size_t f = 0; f < oc; ++f) {
                    const double* wrow = weight->value.data() + f * ckk;
                    const double* grow = g + f * ohw;
                    for (std::size_t t = 0; t < ckk; ++t) {
                        const double wv = wrow[t];
                        if (wv == 0.0) continue;
                        double* drow = dcols.data() + t * ohw;
                        for (std::size_t q = 0; q < ohw; ++q) drow[q] += wv * grow[q];
                    }
                }
                detail::col2im_add(dcols.data(), c, h, w, k, stride, p,
                                   x->grad.data() + s * c * h * w);
            }
        });
}

/// Max pooling, square window, "same" (ceil) padding with -inf fill.
inline NodePtr maxpool2d(const NodePtr& x, std::size_t window, std::size_t stride) {
    if (x->value.rank() != 4)
        throw DimensionError("maxpool2d: input must be NxCxHxW, got " + shape_str(x->value.shape()));
    const std::size_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                      w = x->value.dim(3);
    const Pad2d p = same_padding(h, w, window, stride);
    Tensor out({n, c, p.out_h, p.out_w});
    std::vector<std::size_t> argmax(out.numel());
    std::size_t o = 0;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* plane = x->value.data() + (s * c + ch) * h * w;
            for (std::size_t oi = 0; oi < p.out_h; ++oi)
                for (std::size_t oj = 0; oj < p.out_w; ++oj, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t ki = 0; ki < window; ++ki) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oi * stride + ki) - p.top;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kj = 0; kj < window; ++kj) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(oj * stride + kj) - p.left;
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t idx =
                                static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = (s * c + ch) * h * w + best_idx;
                }
        }
    return make_op_node(std::move(out), {x}, [x, argmax = std::move(argmax)](GraphNode& nd) {
        for (std::size_t i = 0; i < nd.grad.numel(); ++i) x->grad[argmax[i]] += nd.grad[i];
    });
}

/// Running statistics owned by a batchnorm layer.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.9;

    explicit BatchNormState(std::size_t channels = 0, double mom = 0.9)
        : running_mean({std::max<std::size_t>(channels, 1)}),
          running_var(Tensor::full({std::max<std::size_t>(channels, 1)}, 1.0)),
          momentum(mom) {}
};

inline constexpr double kBatchNormEps = 1e-9;

/// Batch normalization over N (2-D input, per feature) or N*H*W (4-D input,
/// per channel). Training mode uses batch statistics (biased variance) and
/// updates the running stats with an EMA (momentum 0.9, unbiased variance);
/// inference mode uses the running stats.
inline NodePtr batchnorm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                         BatchNormState* state, Mode mode, double eps = kBatchNormEps) {
    const std::size_t rank = x->value.rank();
    if (rank != 2 && rank != 4)
        throw DimensionError("batchnorm: input must be rank 2 or 4, got " +
                             shape_str(x->value.shape()));
    const std::size_t n = x->value.dim(0);
    const std::size_t c = x->value.dim(1);
    const std::size_t spatial = rank == 4 ? x->value.dim(2) * x->value.dim(3) : 1;
    if (gamma->value.numel() != c || beta->value.numel() != c)
        throw DimensionError("batchnorm: gamma/beta must have " + std::to_string(c) + " elements");
    if (mode == Mode::training && n < 2)
        throw DegenerateBatchError("batchnorm: training mode needs batch size >= 2, got " +
                                   std::to_string(n));

    const std::size_t m = n * spatial;
    const auto index = [c, spatial](std::size_t s, std::size_t ch, std::size_t q) {
        return (s * c + ch) * spatial + q;
    };

    std::vector<double> mu(c), var(c);
    if (mode == Mode::training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t q = 0; q < spatial; ++q) acc += x->value[index(s, ch, q)];
            mu[ch] = acc / static_cast<double>(m);
            double v = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t q = 0; q < spatial; ++q) {
                    const double d = x->value[index(s, ch, q)] - mu[ch];
                    v += d * d;
                }
            var[ch] = v / static_cast<double>(m);
        }
        if (state) {
            const double mom = state->momentum;
            const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                state->running_mean[ch] = mom * state->running_mean[ch] + (1.0 - mom) * mu[ch];
                state->running_var[ch] = mom * state->running_var[ch] + (1.0 - mom) * var[ch] * unbias;
            }
        }
    } else {
        if (!state) throw Error("batchnorm: inference mode requires running statistics");
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = state->running_mean[ch];
            var[ch] = state->running_var[ch];
        }
    }

    Tensor xhat(x->value.shape());
    Tensor out(x->value.shape());
    std::vector<double> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t q = 0; q < spatial; ++q) {
                const std::size_t i = index(s, ch, q);
                xhat[i] = (x->value[i] - mu[ch]) * inv_std[ch];
                out[i] = gamma->value[ch] * xhat[i] + beta->value[ch];
            }

    if (mode == Mode::inference) {
        return make_op_node(
            std::move(out), {x, gamma, beta},
            [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, spatial,
             index](GraphNode& nd) {
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t q = 0; q < spatial; ++q) {
                            const std::size_t i = index(s, ch, q);
                            x->grad[i] += nd.grad[i] * gamma->value[ch] * inv_std[ch];
                            gamma->grad[ch] += nd.grad[i] * xhat[i];
                            beta->grad[ch] += nd.grad[i];
                        }
            });
    }

    return make_op_node(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), mu = std::move(mu),
         n, c, spatial, m, index](GraphNode& nd) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double dgamma = 0.0, dbeta = 0.0, dxhat_sum = 0.0, dxhat_xhat_sum = 0.0;
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t q = 0; q < spatial; ++q) {
                        const std::size_t i = index(s, ch, q);
                        const double g = nd.grad[i];
                        dgamma += g * xhat[i];
                        dbeta += g;
                        const double dxh = g * gamma->value[ch];
                        dxhat_sum += dxh;
                        dxhat_xhat_sum += dxh * xhat[i];
                    }
                gamma->grad[ch] += dgamma;
                beta->grad[ch] += dbeta;
                // dx = (1/m) * inv_std * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t q = 0; q < spatial; ++q) {
                        const std::size_t i = index(s, ch, q);
                        const double dxh = nd.grad[i] * gamma->value[ch];
                        x->grad[i] += inv_std[ch] * inv_m *
                                      (static_cast<double>(m) * dxh - dxhat_sum -
                                       xhat[i] * dxhat_xhat_sum);
                    }
            }
        });
}

/// Inverted dropout: training zeroes units with probability p and scales
/// survivors by 1/(1-p); inference is the identity.
inline NodePtr dropout(const NodePtr& x, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (mode == Mode::inference || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x->value.numel());
    Tensor out = x->value;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] *= mask[i];
    }
    return make_op_node(std::move(out), {x}, [x, mask = std::move(mask)](GraphNode& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] * mask[i];
    });
}

} // namespace cml::ops
