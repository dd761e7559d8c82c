#pragma once

// Central finite-difference oracle for the autodiff tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ttsn/ttsn.hpp"

namespace ttsn::testing {

struct GradCheck {
    double max_rel_error = 0.0; // worst input
    std::vector<double> rel_errors; // one per input
};

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// `f` rebuilds the graph from the given leaves and returns a scalar. Every leaf is
/// perturbed element by element with step h.
inline GradCheck check_gradients(const std::function<Node(const std::vector<Node>&)>& f,
                                 const std::vector<Tensor>& inputs, double h = 1e-4) {
    std::vector<Node> leaves;
    for (const auto& t : inputs) leaves.emplace_back(t, true);
    backward(f(leaves));

    GradCheck out;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        std::vector<double> numeric(inputs[which].numel());
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Node> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == which) t[i] += delta;
                    probe.emplace_back(std::move(t), false);
                }
                return f(probe).value().item();
            };
            numeric[i] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        const double e = rel_error(leaves[which].grad().data(), numeric);
        out.rel_errors.push_back(e);
        out.max_rel_error = std::max(out.max_rel_error, e);
    }
    return out;
}

/// Random tensor with entries in +-[lo, hi] (bounded away from 0 so relu kinks are not straddled).
inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = 0.1, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data()) v = (rng.coin() ? 1.0 : -1.0) * rng.uniform(lo, hi);
    return t;
}

/// Smallest |pre-activation| over both backbone relus. Central differences are only meaningful
/// when no relu input sits within the step of its kink.
inline double backbone_kink_margin(const Node& clips, const BackboneParams& p, const ModelConfig& cfg) {
    NoGradGuard no_grad;
    const auto& s = clips.shape();
    Node x = reshape(clips, {s[0] * s[1], cfg.in_channels, cfg.height, cfg.width});
    Node z1 = conv2d(x, p.conv1_w, p.conv1_b, 2, 1);
    Node z2 = conv2d(relu(z1), p.conv2_w, p.conv2_b, 2, 1);
    double m = 1e300;
    for (const Node* z : {&z1, &z2})
        for (double v : z->value().data()) m = std::min(m, std::abs(v));
    return m;
}

/// Weighted sum with fixed pseudo-random weights, so a gradient check sees a non-trivial upstream gradient.
inline Node weighted_sum(const Node& x, std::uint64_t seed = 99) {
    Rng rng(seed, Stream::Init);
    return sum(mul(x, Node(random_tensor(rng, x.shape(), 0.5, 1.5))));
}

} // namespace ttsn::testing
