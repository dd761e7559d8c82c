#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttsn/autodiff.hpp"
#include "ttsn/parallel.hpp"

namespace ttsn {

namespace detail {

inline void require_same_shape(const char* op, const Node& a, const Node& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void require_rank(const char* op, const Node& x, std::size_t rank) {
    if (x.value().rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(x.shape()));
    }
}

inline void require_axis(const char* op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw IndexError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
    }
}

/// (outer, axis length, inner) factorisation of a row-major shape around one axis.
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

inline bool wants_grad(const NodeImpl& n, std::size_t i) { return n.inputs[i]->requires_grad; }

inline Tensor& in_grad(NodeImpl& n, std::size_t i) { return grad_buffer(*n.inputs[i]); }

inline const Tensor& in_value(const NodeImpl& n, std::size_t i) { return n.inputs[i]->value; }

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Node add(const Node& a, const Node& b) {
    detail::require_same_shape("add", a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
    return Node::make_op("add", std::move(out), {a, b}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!detail::wants_grad(n, k)) continue;
            auto gi = detail::in_grad(n, k).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

inline Node sub(const Node& a, const Node& b) {
    detail::require_same_shape("sub", a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
    return Node::make_op("sub", std::move(out), {a, b}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        if (detail::wants_grad(n, 0)) {
            auto gi = detail::in_grad(n, 0).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        if (detail::wants_grad(n, 1)) {
            auto gi = detail::in_grad(n, 1).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
        }
    });
}

inline Node mul(const Node& a, const Node& b) {
    detail::require_same_shape("mul", a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
    return Node::make_op("mul", std::move(out), {a, b}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto av = detail::in_value(n, 0).data();
        auto bv = detail::in_value(n, 1).data();
        if (detail::wants_grad(n, 0)) {
            auto gi = detail::in_grad(n, 0).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
        }
        if (detail::wants_grad(n, 1)) {
            auto gi = detail::in_grad(n, 1).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
        }
    });
}

/// s * x where s is a single-element node (the only broadcast the kernel supports).
inline Node scale(const Node& x, const Node& s) {
    if (s.numel() != 1) {
        throw DimensionError("scale: factor must be a scalar, got shape " + shape_str(s.shape()));
    }
    const double k = s.value()[0];
    Tensor out = x.value();
    for (auto& v : out.data()) v *= k;
    return Node::make_op("scale", std::move(out), {x, s}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto xv = detail::in_value(n, 0).data();
        const double k = detail::in_value(n, 1)[0];
        if (detail::wants_grad(n, 0)) {
            auto gi = detail::in_grad(n, 0).data();
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += k * g[i];
        }
        if (detail::wants_grad(n, 1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
            detail::in_grad(n, 1)[0] += acc;
        }
    });
}

/// Multiply by a compile-time-free constant (no gradient w.r.t. the constant).
inline Node scale(const Node& x, double k) {
    Tensor out = x.value();
    for (auto& v : out.data()) v *= k;
    return Node::make_op("scale_const", std::move(out), {x}, [k](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += k * g[i];
    });
}

/// max(x, 0); the gradient at exactly 0 is 0.
inline Node relu(const Node& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return Node::make_op("relu", std::move(out), {x}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto xv = detail::in_value(n, 0).data();
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0) gi[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Node sum(const Node& x) {
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return Node::make_op("sum", Tensor::scalar(acc), {x}, [](detail::NodeImpl& n) {
        const double g = n.grad[0];
        for (auto& v : detail::in_grad(n, 0).data()) v += g;
    });
}

/// Mean over one axis; the axis is kept with length 1.
inline Node mean_axis(const Node& x, std::size_t axis) {
    detail::require_axis("mean_axis", x.shape(), axis);
    const auto v = detail::axis_view(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    Tensor out = Tensor::zeros(out_shape);
    auto xd = x.value().data();
    auto od = out.data();
    const double inv = 1.0 / static_cast<double>(v.len);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t a = 0; a < v.len; ++a) {
            const double* src = &xd[(o * v.len + a) * v.inner];
            double* dst = &od[o * v.inner];
            for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
        }
    }
    for (auto& e : od) e *= inv;
    return Node::make_op("mean_axis", std::move(out), {x}, [v, inv](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t a = 0; a < v.len; ++a) {
                double* dst = &gi[(o * v.len + a) * v.inner];
                const double* src = &g[o * v.inner];
                for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i] * inv;
            }
        }
    });
}

/// Mean over the two trailing (spatial) axes, which are kept with length 1.
inline Node global_avg_pool(const Node& x) {
    const auto& s = x.shape();
    if (s.size() < 2) throw DimensionError("global_avg_pool: need rank >= 2, got " + shape_str(s));
    const std::size_t plane = s[s.size() - 1] * s[s.size() - 2];
    const std::size_t count = x.numel() / plane;
    Shape out_shape = s;
    out_shape[s.size() - 1] = 1;
    out_shape[s.size() - 2] = 1;
    Tensor out = Tensor::zeros(out_shape);
    auto xd = x.value().data();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < count; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xd[c * plane + i];
        out[c] = acc * inv;
    }
    return Node::make_op("global_avg_pool", std::move(out), {x}, [plane, count, inv](detail::NodeImpl& n) {
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t c = 0; c < count; ++c) {
            const double g = n.grad[c] * inv;
            for (std::size_t i = 0; i < plane; ++i) gi[c * plane + i] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

inline Node reshape(const Node& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return Node::make_op("reshape", std::move(out), {x}, [](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
}

inline Node transpose(const Node& x) {
    detail::require_rank("transpose", x, 2);
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    Tensor out = Tensor::zeros({c, r});
    const auto& xv = x.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
    return Node::make_op("transpose", std::move(out), {x}, [r, c](detail::NodeImpl& n) {
        auto& gi = detail::in_grad(n, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi.at(i, j) += n.grad.at(j, i);
    });
}

/// Gather slices along `axis`; indices may repeat or reorder.
inline Node index_select(const Node& x, std::size_t axis, std::vector<std::size_t> index) {
    detail::require_axis("index_select", x.shape(), axis);
    if (index.empty()) throw IndexError("index_select: empty index list");
    const auto v = detail::axis_view(x.shape(), axis);
    for (auto i : index) {
        if (i >= v.len) {
            throw IndexError("index_select: index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(axis) + " of shape " + shape_str(x.shape()));
        }
    }
    Shape out_shape = x.shape();
    out_shape[axis] = index.size();
    Tensor out = Tensor::zeros(out_shape);
    auto xd = x.value().data();
    auto od = out.data();
    const std::size_t m = index.size();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t a = 0; a < m; ++a)
            std::copy_n(&xd[(o * v.len + index[a]) * v.inner], v.inner, &od[(o * m + a) * v.inner]);
    return Node::make_op("index_select", std::move(out), {x}, [v, idx = std::move(index)](detail::NodeImpl& n) {
        auto g = n.grad.data();
        auto gi = detail::in_grad(n, 0).data();
        const std::size_t m = idx.size();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t a = 0; a < m; ++a) {
                double* dst = &gi[(o * v.len + idx[a]) * v.inner];
                const double* src = &g[(o * m + a) * v.inner];
                for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
            }
    });
}

/// Reverse the order of slices along `axis`. Involution.
inline Node reverse_axis(const Node& x, std::size_t axis) {
    detail::require_axis("reverse_axis", x.shape(), axis);
    const std::size_t len = x.shape()[axis];
    std::vector<std::size_t> idx(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = len - 1 - i;
    return index_select(x, axis, std::move(idx));
}

inline Node concat(const std::vector<Node>& xs, std::size_t axis) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    detail::require_axis("concat", xs[0].shape(), axis);
    Shape out_shape = xs[0].shape();
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        const auto& s = x.shape();
        bool ok = s.size() == out_shape.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == xs[0].shape()[d];
        if (!ok) {
            throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                                 shape_str(xs[0].shape()) + " on axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }
    const auto ov = detail::axis_view(out_shape, axis);
    Tensor out = Tensor::zeros(out_shape);
    auto od = out.data();
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& x : xs) {
        offsets.push_back(offset);
        const std::size_t len = x.shape()[axis];
        auto xd = x.value().data();
        for (std::size_t o = 0; o < ov.outer; ++o)
            std::copy_n(&xd[o * len * ov.inner], len * ov.inner, &od[(o * ov.len + offset) * ov.inner]);
        offset += len;
    }
    std::vector<std::size_t> lens;
    for (const auto& x : xs) lens.push_back(x.shape()[axis]);
    return Node::make_op("concat", std::move(out), xs, [ov, offsets, lens](detail::NodeImpl& n) {
        auto g = n.grad.data();
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            if (!detail::wants_grad(n, k)) continue;
            auto gi = detail::in_grad(n, k).data();
            const std::size_t len = lens[k];
            for (std::size_t o = 0; o < ov.outer; ++o) {
                const double* src = &g[(o * ov.len + offsets[k]) * ov.inner];
                double* dst = &gi[o * len * ov.inner];
                for (std::size_t i = 0; i < len * ov.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// Backward of out = a*b given g = dL/dout.
inline void gemm_backward(NodeImpl& n, std::size_t ia, std::size_t ib, std::size_t m, std::size_t k,
                          std::size_t nn) {
    const double* g = n.grad.data().data();
    const double* a = in_value(n, ia).data().data();
    const double* b = in_value(n, ib).data().data();
    if (wants_grad(n, ia)) {
        double* ga = in_grad(n, ia).data().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * b[p * nn + j];
                ga[i * k + p] += acc;
            }
    }
    if (wants_grad(n, ib)) {
        double* gb = in_grad(n, ib).data().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += av * g[i * nn + j];
            }
    }
}

} // namespace detail

inline Node matmul(const Node& a, const Node& b) {
    detail::require_rank("matmul", a, 2);
    detail::require_rank("matmul", b, 2);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_acc(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
    return Node::make_op("matmul", std::move(out), {a, b},
                         [m, k, n](detail::NodeImpl& node) { detail::gemm_backward(node, 0, 1, m, k, n); });
}

/// x[m x k] * w[k x n] + bias[n] (bias added to every row).
inline Node linear(const Node& x, const Node& w, const Node& bias) {
    detail::require_rank("linear", x, 2);
    detail::require_rank("linear", w, 2);
    const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
    if (w.shape()[0] != k) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    if (bias.numel() != n) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    auto bd = bias.value().data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.data().begin() + i * n);
    detail::gemm_acc(x.value().data().data(), w.value().data().data(), out.data().data(), m, k, n);
    return Node::make_op("linear", std::move(out), {x, w, bias}, [m, k, n](detail::NodeImpl& node) {
        detail::gemm_backward(node, 0, 1, m, k, n);
        if (detail::wants_grad(node, 2)) {
            auto gb = detail::in_grad(node, 2).data();
            auto g = node.grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

/// Row-wise softmax of a rank-2 node, stabilised by subtracting each row's max.
inline Node softmax_rows(const Node& z) {
    detail::require_rank("softmax_rows", z, 2);
    const std::size_t r = z.shape()[0], c = z.shape()[1];
    Tensor out = z.value();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = &out.data()[i * c];
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= total;
    }
    return Node::make_op("softmax_rows", std::move(out), {z}, [r, c](detail::NodeImpl& n) {
        auto y = n.value.data();
        auto g = n.grad.data();
        auto gi = detail::in_grad(n, 0).data();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
    });
}

/// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
inline Node cross_entropy(const Node& logits, std::span<const std::size_t> labels) {
    detail::require_rank("cross_entropy", logits, 2);
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    }
    for (auto l : labels) {
        if (l >= c) {
            throw IndexError("cross_entropy: label " + std::to_string(l) + " out of range for " +
                             std::to_string(c) + " classes");
        }
    }
    const auto& lv = logits.value();
    Tensor probs = Tensor::zeros({n, c});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &lv.data()[i * c];
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        loss += lse - row[labels[i]];
        for (std::size_t j = 0; j < c; ++j) probs.at(i, j) = std::exp(row[j] - lse);
    }
    loss /= static_cast<double>(n);
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return Node::make_op("cross_entropy", Tensor::scalar(loss), {logits},
                         [probs = std::move(probs), lab = std::move(lab), n, c](detail::NodeImpl& node) {
                             const double g = node.grad[0] / static_cast<double>(n);
                             auto& gi = detail::in_grad(node, 0);
                             for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                     gi.at(i, j) += g * (probs.at(i, j) - (j == lab[i] ? 1.0 : 0.0));
                         });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
    std::size_t batch, in_ch, in_h, in_w, out_ch, kernel, stride, padding, out_h, out_w;
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const std::size_t span = in + 2 * padding;
    if (span < kernel || (span - kernel) % stride != 0) {
        throw ConfigError("conv2d: (" + std::to_string(in) + " + 2*" + std::to_string(padding) + " - " +
                          std::to_string(kernel) + ") / " + std::to_string(stride) + " is not integral");
    }
    return (span - kernel) / stride + 1;
}

/// Cross-correlation. x is [C_in, H, W] or [M, C_in, H, W]; kernel is [C_out, C_in, k, k];
/// bias (optional) is [C_out]. Output keeps x's rank.
inline Node conv2d(const Node& x, const Node& kernel, const Node* bias, std::size_t stride, std::size_t padding) {
    const auto& xs = x.shape();
    const bool batched = xs.size() == 4;
    if (xs.size() != 3 && xs.size() != 4) {
        throw DimensionError("conv2d: input must be rank 3 or 4, got " + shape_str(xs));
    }
    detail::require_rank("conv2d", kernel, 4);
    const auto& ks = kernel.shape();
    Conv2dGeometry geo{};
    geo.batch = batched ? xs[0] : 1;
    geo.in_ch = xs[xs.size() - 3];
    geo.in_h = xs[xs.size() - 2];
    geo.in_w = xs[xs.size() - 1];
    geo.out_ch = ks[0];
    geo.kernel = ks[2];
    geo.stride = stride;
    geo.padding = padding;
    if (ks[1] != geo.in_ch || ks[2] != ks[3]) {
        throw DimensionError("conv2d: kernel " + shape_str(ks) + " does not fit input " + shape_str(xs));
    }
    if (bias && bias->numel() != geo.out_ch) {
        throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " for kernel " + shape_str(ks));
    }
    geo.out_h = conv_output_extent(geo.in_h, geo.kernel, stride, padding);
    geo.out_w = conv_output_extent(geo.in_w, geo.kernel, stride, padding);

    Shape out_shape = batched ? Shape{geo.batch, geo.out_ch, geo.out_h, geo.out_w}
                              : Shape{geo.out_ch, geo.out_h, geo.out_w};
    Tensor out = Tensor::zeros(out_shape);
    const double* xd = x.value().data().data();
    const double* wd = kernel.value().data().data();
    const double* bd = bias ? bias->value().data().data() : nullptr;
    double* od = out.data().data();
    const auto g = geo;
    const long pad = static_cast<long>(g.padding);

    // One task per (sample, output channel); each writes a disjoint output plane.
    parallel_for(g.batch * g.out_ch, [&](std::size_t task) {
        const std::size_t m = task / g.out_ch, co = task % g.out_ch;
        double* oplane = od + (m * g.out_ch + co) * g.out_h * g.out_w;
        const double b0 = bd ? bd[co] : 0.0;
        for (std::size_t i = 0; i < g.out_h * g.out_w; ++i) oplane[i] = b0;
        for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
            const double* iplane = xd + (m * g.in_ch + ci) * g.in_h * g.in_w;
            const double* wk = wd + (co * g.in_ch + ci) * g.kernel * g.kernel;
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
                for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                    const double wv = wk[ky * g.kernel + kx];
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                        const double* irow = iplane + static_cast<std::size_t>(iy) * g.in_w;
                        double* orow = oplane + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
                            orow[ox] += wv * irow[ix];
                        }
                    }
                }
        }
    });

    std::vector<Node> inputs{x, kernel};
    if (bias) inputs.push_back(*bias);
    return Node::make_op("conv2d", std::move(out), std::move(inputs), [g](detail::NodeImpl& n) {
        const double* gd = n.grad.data().data();
        const double* xd = detail::in_value(n, 0).data().data();
        const double* wd = detail::in_value(n, 1).data().data();
        const long pad = static_cast<long>(g.padding);
        const std::size_t oplane_sz = g.out_h * g.out_w;

        if (n.inputs.size() > 2 && detail::wants_grad(n, 2)) {
            auto gb = detail::in_grad(n, 2).data();
            for (std::size_t m = 0; m < g.batch; ++m)
                for (std::size_t co = 0; co < g.out_ch; ++co) {
                    const double* gp = gd + (m * g.out_ch + co) * oplane_sz;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < oplane_sz; ++i) acc += gp[i];
                    gb[co] += acc;
                }
        }
        if (detail::wants_grad(n, 1)) {
            double* gw = detail::in_grad(n, 1).data().data();
            parallel_for(g.out_ch, [&](std::size_t co) {
                for (std::size_t m = 0; m < g.batch; ++m) {
                    const double* gp = gd + (m * g.out_ch + co) * oplane_sz;
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                        const double* iplane = xd + (m * g.in_ch + ci) * g.in_h * g.in_w;
                        double* gk = gw + (co * g.in_ch + ci) * g.kernel * g.kernel;
                        for (std::size_t ky = 0; ky < g.kernel; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                                double acc = 0.0;
                                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                                    const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                                    const double* irow = iplane + static_cast<std::size_t>(iy) * g.in_w;
                                    const double* grow = gp + oy * g.out_w;
                                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                                        const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                                        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
                                        acc += grow[ox] * irow[ix];
                                    }
                                }
                                gk[ky * g.kernel + kx] += acc;
                            }
                    }
                }
            });
        }
        if (detail::wants_grad(n, 0)) {
            double* gx = detail::in_grad(n, 0).data().data();
            parallel_for(g.batch, [&](std::size_t m) {
                for (std::size_t co = 0; co < g.out_ch; ++co) {
                    const double* gp = gd + (m * g.out_ch + co) * oplane_sz;
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                        double* gplane = gx + (m * g.in_ch + ci) * g.in_h * g.in_w;
                        const double* wk = wd + (co * g.in_ch + ci) * g.kernel * g.kernel;
                        for (std::size_t ky = 0; ky < g.kernel; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                                const double wv = wk[ky * g.kernel + kx];
                                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                                    const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                                    double* grow_in = gplane + static_cast<std::size_t>(iy) * g.in_w;
                                    const double* grow = gp + oy * g.out_w;
                                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                                        const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                                        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
                                        grow_in[ix] += wv * grow[ox];
                                    }
                                }
                            }
                    }
                }
            });
        }
    });
}

inline Node conv2d(const Node& x, const Node& kernel, const Node& bias, std::size_t stride, std::size_t padding) {
    return conv2d(x, kernel, &bias, stride, padding);
}

inline Node conv2d(const Node& x, const Node& kernel, std::size_t stride = 1, std::size_t padding = 0) {
    return conv2d(x, kernel, nullptr, stride, padding);
}

} // namespace ttsn
