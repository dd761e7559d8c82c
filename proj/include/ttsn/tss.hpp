#pragma once

// Temporal sequence self-supervision. A training-only pretext task: selected clips of a
// feature batch are reversed along the frame axis and a small classifier learns to tell
// normal (NOR) from reversed (REV) order. Four algorithms come from composing reversal (G),
// random channel selection (H) and random batch selection (K):
//
//   AA = G          (rho=1, eta=1)   every clip reversed, all channels
//   RA = G o K      (rho=1, eta=0)   one random clip reversed, all channels
//   AR = G o H      (rho=0, eta=1)   every clip reversed, one random channel each
//   RR = G o H o K  (rho=0, eta=0)   each clip reversed with prob. 1/2, one random channel each

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttsn/autodiff.hpp"
#include "ttsn/ops.hpp"
#include "ttsn/rng.hpp"

namespace ttsn::tss {

enum class Variant { AA, RA, AR, RR };

inline std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::AA: return "aa";
    case Variant::RA: return "ra";
    case Variant::AR: return "ar";
    case Variant::RR: return "rr";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    if (s == "aa" || s == "AA") return Variant::AA;
    if (s == "ra" || s == "RA") return Variant::RA;
    if (s == "ar" || s == "AR") return Variant::AR;
    if (s == "rr" || s == "RR") return Variant::RR;
    return std::nullopt;
}

/// Which factors participate in the composition. Reversal always does (epsilon is fixed to 0).
struct Composition {
    bool reversal = true;
    bool channel_select = false; // H
    bool batch_select = false;   // K
};

/// Table lookup from the (rho, eta) switches; a switch set to 1 removes its factor.
inline Variant dispatch(int rho, int eta) {
    if ((rho != 0 && rho != 1) || (eta != 0 && eta != 1)) {
        throw ConfigError("tss dispatch: rho and eta must be 0 or 1");
    }
    if (rho == 1 && eta == 1) return Variant::AA;
    if (rho == 1 && eta == 0) return Variant::RA;
    if (rho == 0 && eta == 1) return Variant::AR;
    return Variant::RR;
}

inline Composition composition(Variant v) {
    switch (v) {
    case Variant::AA: return {true, false, false};
    case Variant::RA: return {true, false, true};
    case Variant::AR: return {true, true, false};
    case Variant::RR: return {true, true, true};
    }
    return {};
}

/// Channels per frame in the pretext input: 1 when H participates, otherwise all of them.
inline std::size_t output_channels(Variant v, std::size_t channels) {
    return composition(v).channel_select ? 1 : channels;
}

enum class SeqLabel : std::size_t { Nor = 0, Rev = 1 };

inline std::string_view to_string(SeqLabel l) { return l == SeqLabel::Nor ? "NOR" : "REV"; }

/// Selection draws. K and H use independent engines, both derived from one seed.
class TssRng {
public:
    explicit TssRng(std::uint64_t seed) : batch_(seed, Stream::TssBatch), channel_(seed, Stream::TssChannel) {}

    bool draw_selected() { return batch_.coin(); }
    std::size_t draw_channel(std::size_t channels) { return channel_.index(channels); }
    std::size_t draw_batch(std::size_t batch) { return batch_.index(batch); }

private:
    Rng batch_;
    Rng channel_;
};

struct Selection {
    std::size_t batch = 0;
    bool selected = false;              // S (reversed) vs NS
    std::optional<std::size_t> channel; // set when H participates
};

struct PseudoLabelBatch {
    Node y;                             // [B, N, C', H, W], in original batch order
    std::vector<SeqLabel> labels;       // one per clip, aligned with y
    std::vector<std::size_t> order;     // original batch index of each row of y
    std::vector<Selection> selections;  // raw draws, for logging

    std::vector<std::size_t> label_indices() const {
        std::vector<std::size_t> out;
        out.reserve(labels.size());
        for (auto l : labels) out.push_back(static_cast<std::size_t>(l));
        return out;
    }

    /// Row order that groups unselected clips before selected ones, i.e. [Y^NS, Y^S].
    std::vector<std::size_t> grouped_order() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == SeqLabel::Nor) out.push_back(i);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == SeqLabel::Rev) out.push_back(i);
        return out;
    }
};

/// Number of TSS applications in this process. Evaluation must leave it untouched.
inline std::atomic<std::uint64_t>& invocation_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

inline std::uint64_t invocation_count() { return invocation_counter().load(); }
inline void reset_invocation_count() { invocation_counter().store(0); }

namespace detail {

inline void check_input(const Node& x) {
    const auto& s = x.shape();
    if (s.size() != 5) throw DimensionError("tss: expected rank-5 [B,N,C,H,W], got " + shape_str(s));
    if (s[1] < 2) throw DegenerateInputError("tss: need at least 2 frames to reverse, got " + std::to_string(s[1]));
}

// Clip b of x, optionally restricted to one channel, optionally reversed in time.
inline Node transform_clip(const Node& x, std::size_t b, std::optional<std::size_t> channel, bool reverse) {
    Node clip = x.shape()[0] == 1 ? x : index_select(x, 0, {b});
    if (channel) clip = index_select(clip, 2, {*channel});
    if (reverse) clip = reverse_axis(clip, 1);
    return clip;
}

inline PseudoLabelBatch assemble(const Node& x, std::vector<Selection> selections) {
    PseudoLabelBatch out;
    std::vector<Node> rows;
    for (const auto& sel : selections) {
        rows.push_back(transform_clip(x, sel.batch, sel.channel, sel.selected));
        out.labels.push_back(sel.selected ? SeqLabel::Rev : SeqLabel::Nor);
        out.order.push_back(sel.batch);
    }
    out.y = rows.size() == 1 ? rows[0] : concat(rows, 0);
    out.selections = std::move(selections);
    return out;
}

inline PseudoLabelBatch rr(const Node& x, TssRng& rng) {
    const std::size_t batch = x.shape()[0], channels = x.shape()[2];
    std::vector<Selection> sel(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        sel[b].batch = b;
        sel[b].selected = rng.draw_selected();
        sel[b].channel = rng.draw_channel(channels);
    }
    return assemble(x, std::move(sel));
}

} // namespace detail

/// Random batch, random channel reversal: each clip is independently selected with
/// probability 1/2; one channel is drawn per clip and shared by all its frames.
inline PseudoLabelBatch apply_rr(const Node& x, TssRng& rng) {
    detail::check_input(x);
    ++invocation_counter();
    return detail::rr(x, rng);
}

inline PseudoLabelBatch apply_variant(const Node& x, Variant variant, TssRng& rng) {
    detail::check_input(x);
    ++invocation_counter();
    const std::size_t batch = x.shape()[0], channels = x.shape()[2];
    switch (variant) {
    case Variant::RR: return detail::rr(x, rng);
    case Variant::AA: {
        PseudoLabelBatch out;
        out.y = reverse_axis(x, 1);
        for (std::size_t b = 0; b < batch; ++b) {
            out.labels.push_back(SeqLabel::Rev);
            out.order.push_back(b);
            out.selections.push_back({b, true, std::nullopt});
        }
        return out;
    }
    case Variant::RA: {
        const std::size_t chosen = rng.draw_batch(batch);
        std::vector<Selection> sel(batch);
        for (std::size_t b = 0; b < batch; ++b) sel[b] = {b, b == chosen, std::nullopt};
        return detail::assemble(x, std::move(sel));
    }
    case Variant::AR: {
        std::vector<Selection> sel(batch);
        for (std::size_t b = 0; b < batch; ++b) sel[b] = {b, true, rng.draw_channel(channels)};
        return detail::assemble(x, std::move(sel));
    }
    }
    throw ConfigError("tss: unknown variant");
}

// ---------------------------------------------------------------------------
// Self-supervised NOR/REV classifier
// ---------------------------------------------------------------------------

struct SelfClassifierConfig {
    std::size_t frames = 8;
    std::size_t in_channels = 1; // C'
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t hidden_channels = 8;
};

/// Adjacent-frame differences -> 3x3 conv -> relu -> global average pool -> dense to 2 logits.
struct SelfClassifierParams {
    Parameter conv_w, conv_b, dense_w, dense_b;

    static SelfClassifierParams init(const SelfClassifierConfig& cfg, Rng& rng, const std::string& prefix = "self_head.") {
        if (cfg.frames < 2) throw ConfigError("self classifier: need at least 2 frames");
        const std::size_t k = cfg.hidden_channels, feat = k * (cfg.frames - 1);
        SelfClassifierParams p;
        p.conv_w = {prefix + "conv.weight",
                    rng.normal_tensor({k, cfg.in_channels, 3, 3}, std::sqrt(2.0 / double(cfg.in_channels * 9)))};
        p.conv_b = {prefix + "conv.bias", Tensor::zeros({k})};
        p.dense_w = {prefix + "dense.weight", rng.normal_tensor({feat, 2}, 0.01)};
        p.dense_b = {prefix + "dense.bias", Tensor::zeros({2})};
        return p;
    }

    std::vector<Parameter*> all() { return {&conv_w, &conv_b, &dense_w, &dense_b}; }
};

inline Node self_classifier_forward(const Node& y, const SelfClassifierParams& p, const SelfClassifierConfig& cfg) {
    const auto& s = y.shape();
    if (s.size() != 5 || s[1] != cfg.frames || s[2] != cfg.in_channels || s[3] != cfg.height || s[4] != cfg.width) {
        throw DimensionError("self_classifier_forward: input " + shape_str(s) + " does not match config [B," +
                             std::to_string(cfg.frames) + "," + std::to_string(cfg.in_channels) + "," +
                             std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
    }
    const std::size_t batch = s[0], n = cfg.frames;
    Node flat = reshape(y, {batch * n, cfg.in_channels, cfg.height, cfg.width});
    std::vector<std::size_t> next, prev;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i + 1 < n; ++i) {
            next.push_back(b * n + i + 1);
            prev.push_back(b * n + i);
        }
    Node diff = sub(index_select(flat, 0, next), index_select(flat, 0, prev));
    Node h = relu(conv2d(diff, p.conv_w, p.conv_b, 1, 1));
    h = global_avg_pool(h);
    h = reshape(h, {batch, (n - 1) * cfg.hidden_channels});
    return linear(h, p.dense_w, p.dense_b);
}

} // namespace ttsn::tss
