#pragma once

// Efficient temporal transformer: one attention layer across the frames of a clip, with no
// feed-forward sublayer and no decoder. Frames are embedded to 1-D tokens, three independent
// positional encodings yield query/key/value streams, and the attended tokens are mapped back
// to feature-map shape as a residual attention map.

#include <cmath>
#include <string>
#include <vector>

#include "ttsn/autodiff.hpp"
#include "ttsn/ops.hpp"
#include "ttsn/rng.hpp"

namespace ttsn::ett {

struct EttConfig {
    std::size_t frames = 8;
    std::size_t channels = 8;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t hidden = 64;         // token length l
    std::size_t embed_channels = 4;  // C_e, intermediate channels of h and h^-1
    // Std of the three positional encodings at init. At 0.02 the alpha-beta time bias, the only
    // frame-order-sensitive path to the head, gets almost no gradient and never forms.
    double pe_std = 1.0;

    std::size_t frame_elems() const { return channels * height * width; }

    void validate() const {
        if (!frames || !channels || !height || !width || !hidden || !embed_channels) {
            throw ConfigError("ett: all dimensions must be positive");
        }
        if (hidden * 4 > frame_elems()) {
            throw ConfigError("ett: hidden dim " + std::to_string(hidden) + " exceeds C*H*W/4 = " +
                              std::to_string(frame_elems() / 4));
        }
        if (!(pe_std >= 0.0) || !std::isfinite(pe_std)) throw ConfigError("ett: pe_std must be finite and >= 0");
        if (hidden < frames) {
            throw ConfigError("ett: hidden dim " + std::to_string(hidden) + " is smaller than frame count " +
                              std::to_string(frames));
        }
    }
};

struct EttParams {
    // h: 1x1 conv C -> C_e, flatten, dense C_e*H*W -> l
    Parameter embed_conv_w, embed_conv_b, embed_dense_w, embed_dense_b;
    Parameter pe_alpha, pe_beta, pe_gamma;
    Parameter lambda;
    // h^-1: dense l -> C_e*H*W, reshape, 1x1 conv C_e -> C
    Parameter inv_dense_w, inv_dense_b, inv_conv_w, inv_conv_b;

    static EttParams init(const EttConfig& cfg, Rng& rng, const std::string& prefix = "ett.") {
        cfg.validate();
        const std::size_t ce = cfg.embed_channels, c = cfg.channels, l = cfg.hidden;
        const std::size_t flat = ce * cfg.height * cfg.width;
        EttParams p;
        p.embed_conv_w = {prefix + "embed.conv.weight", rng.normal_tensor({ce, c, 1, 1}, std::sqrt(2.0 / double(c)))};
        p.embed_conv_b = {prefix + "embed.conv.bias", Tensor::zeros({ce})};
        p.embed_dense_w = {prefix + "embed.dense.weight", rng.normal_tensor({flat, l}, std::sqrt(1.0 / double(flat)))};
        p.embed_dense_b = {prefix + "embed.dense.bias", Tensor::zeros({l})};
        p.pe_alpha = {prefix + "pe.alpha", rng.normal_tensor({cfg.frames, l}, cfg.pe_std)};
        p.pe_beta = {prefix + "pe.beta", rng.normal_tensor({cfg.frames, l}, cfg.pe_std)};
        p.pe_gamma = {prefix + "pe.gamma", rng.normal_tensor({cfg.frames, l}, cfg.pe_std)};
        p.lambda = {prefix + "lambda", Tensor::scalar(1.0 / std::sqrt(double(l)))};
        p.inv_dense_w = {prefix + "inverse.dense.weight", rng.normal_tensor({l, flat}, std::sqrt(1.0 / double(l)))};
        p.inv_dense_b = {prefix + "inverse.dense.bias", Tensor::zeros({flat})};
        p.inv_conv_w = {prefix + "inverse.conv.weight", rng.normal_tensor({c, ce, 1, 1}, std::sqrt(1.0 / double(ce)))};
        p.inv_conv_b = {prefix + "inverse.conv.bias", Tensor::zeros({c})};
        return p;
    }

    std::vector<Parameter*> all() {
        return {&embed_conv_w, &embed_conv_b, &embed_dense_w, &embed_dense_b, &pe_alpha, &pe_beta,
                &pe_gamma,     &lambda,       &inv_dense_w,   &inv_dense_b,   &inv_conv_w, &inv_conv_b};
    }
};

/// h: [N, C, H, W] frames -> [N, l] tokens, shared weights across frames.
inline Node embed_frames(const Node& frames, const EttParams& p, const EttConfig& cfg) {
    const Shape expect{cfg.frames, cfg.channels, cfg.height, cfg.width};
    if (frames.shape() != expect) {
        throw DimensionError("embed_frames: expected " + shape_str(expect) + ", got " + shape_str(frames.shape()));
    }
    Node e = conv2d(frames, p.embed_conv_w, p.embed_conv_b, 1, 0);
    e = reshape(e, {cfg.frames, cfg.embed_channels * cfg.height * cfg.width});
    return linear(e, p.embed_dense_w, p.embed_dense_b);
}

/// T^j = T_hat + PE^j.
inline Node add_positional(const Node& tokens, const Node& pe) { return add(tokens, pe); }

/// Z = lambda * T^alpha (T^beta)^T.
inline Node relation_matrix(const Node& t_alpha, const Node& t_beta, const Node& lambda) {
    if (t_alpha.shape() != t_beta.shape()) {
        throw DimensionError("relation_matrix: " + shape_str(t_alpha.shape()) + " vs " + shape_str(t_beta.shape()));
    }
    return scale(matmul(t_alpha, transpose(t_beta)), lambda);
}

/// h^-1: [N, l] tokens -> [N, C, H, W].
inline Node inverse_transform(const Node& tokens, const EttParams& p, const EttConfig& cfg) {
    Node d = linear(tokens, p.inv_dense_w, p.inv_dense_b);
    d = reshape(d, {tokens.shape()[0], cfg.embed_channels, cfg.height, cfg.width});
    return conv2d(d, p.inv_conv_w, p.inv_conv_b, 1, 0);
}

struct AttentionOutput {
    Node weights;  // s(Z), [N, N]; row i is output frame i's distribution over source frames
    Node attended; // s(Z) T^gamma, [N, l]
    Node map;      // h^-1 of attended, [N, C, H, W]
};

/// A* = h^-1(s(Z) T^gamma). Softmax runs along rows.
inline AttentionOutput attention_map(const Node& z, const Node& t_gamma, const EttParams& p, const EttConfig& cfg) {
    if (z.shape() != Shape{cfg.frames, cfg.frames} || t_gamma.shape() != Shape{cfg.frames, cfg.hidden}) {
        throw DimensionError("attention_map: Z " + shape_str(z.shape()) + ", T^gamma " + shape_str(t_gamma.shape()) +
                             " do not match config");
    }
    AttentionOutput out;
    out.weights = softmax_rows(z);
    out.attended = matmul(out.weights, t_gamma);
    out.map = inverse_transform(out.attended, p, cfg);
    return out;
}

/// Per-clip intermediates, exposed for inspection and visualisation.
struct ClipTrace {
    Node tokens;   // T_hat
    Node relation; // Z
    Node weights;  // s(Z)
};

struct EttOutput {
    Node augmented; // A* + X, [B, N, C, H, W]
    Node attention; // A*, [B, N, C, H, W]
    std::vector<ClipTrace> clips;
};

/// Runs the encoder on every clip of a [B, N, C, H, W] feature batch independently.
inline EttOutput ett_forward(const Node& x, const EttParams& p, const EttConfig& cfg) {
    const auto& s = x.shape();
    if (s.size() != 5) throw DimensionError("ett_forward: expected rank-5 [B,N,C,H,W], got " + shape_str(s));
    if (s[1] != cfg.frames || s[2] != cfg.channels || s[3] != cfg.height || s[4] != cfg.width) {
        throw DimensionError("ett_forward: input " + shape_str(s) + " does not match config");
    }
    const std::size_t batch = s[0], n = cfg.frames;
    Node flat = reshape(x, {batch * n, cfg.channels, cfg.height, cfg.width});

    EttOutput out;
    std::vector<Node> maps;
    maps.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = b * n + i;
        Node frames = batch == 1 ? flat : index_select(flat, 0, rows);

        Node tokens = embed_frames(frames, p, cfg);
        Node t_alpha = add_positional(tokens, p.pe_alpha);
        Node t_beta = add_positional(tokens, p.pe_beta);
        Node t_gamma = add_positional(tokens, p.pe_gamma);
        Node z = relation_matrix(t_alpha, t_beta, p.lambda);
        AttentionOutput att = attention_map(z, t_gamma, p, cfg);
        maps.push_back(att.map);
        out.clips.push_back({tokens, z, att.weights});
    }
    Node a_star = maps.size() == 1 ? maps[0] : concat(maps, 0);
    out.attention = reshape(a_star, s);
    out.augmented = add(out.attention, x);
    return out;
}

} // namespace ttsn::ett
