#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ttsn/binary_io.hpp"
#include "ttsn/ett.hpp"
#include "ttsn/ops.hpp"
#include "ttsn/rng.hpp"
#include "ttsn/tss.hpp"

namespace ttsn {

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t frames = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t backbone_channels = 8; // C_f
    std::size_t classes = 4;
    std::size_t hidden = 64;           // ETT token length l
    std::size_t embed_channels = 4;    // ETT C_e
    bool use_ett = true;
    std::optional<tss::Variant> tss;   // self-supervision head is built only when set

    std::size_t feature_height() const { return height / 4; }
    std::size_t feature_width() const { return width / 4; }

    // With ETT the head pools spatially. Without it GAP over a translation-equivariant backbone would
    // erase where the square moved, so the baseline keeps the flattened temporal-mean map instead.
    std::size_t head_inputs() const {
        return use_ett ? backbone_channels : backbone_channels * feature_height() * feature_width();
    }

    ett::EttConfig ett_config() const {
        return {frames, backbone_channels, feature_height(), feature_width(), hidden, embed_channels};
    }

    tss::SelfClassifierConfig self_config() const {
        const std::size_t c = tss ? tss::output_channels(*tss, backbone_channels) : 1;
        return {frames, c, feature_height(), feature_width(), 8};
    }

    void validate() const {
        if (height % 4 || width % 4 || height < 8 || width < 8) {
            throw ConfigError("model: frame size must be a multiple of 4 and at least 8, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        }
        if (classes < 2) throw ConfigError("model: need at least 2 classes");
        if (frames < 2) throw ConfigError("model: need at least 2 frames");
        if (use_ett) ett_config().validate();
    }
};

/// Per-frame 2-D CNN: two stride-2 conv + relu stages (kernel 4, padding 1), C_in -> C_f -> C_f.
struct BackboneParams {
    Parameter conv1_w, conv1_b, conv2_w, conv2_b;

    static BackboneParams init(const ModelConfig& cfg, Rng& rng) {
        const std::size_t c = cfg.backbone_channels, ci = cfg.in_channels;
        BackboneParams p;
        p.conv1_w = {"backbone.conv1.weight", rng.normal_tensor({c, ci, 4, 4}, std::sqrt(2.0 / double(ci * 16)))};
        p.conv1_b = {"backbone.conv1.bias", Tensor::zeros({c})};
        p.conv2_w = {"backbone.conv2.weight", rng.normal_tensor({c, c, 4, 4}, std::sqrt(2.0 / double(c * 16)))};
        p.conv2_b = {"backbone.conv2.bias", Tensor::zeros({c})};
        return p;
    }

    std::vector<Parameter*> all() { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b}; }
};

struct ActionHeadParams {
    Parameter dense_w, dense_b;

    static ActionHeadParams init(const ModelConfig& cfg, Rng& rng) {
        ActionHeadParams p;
        p.dense_w = {"action_head.dense.weight", rng.normal_tensor({cfg.head_inputs(), cfg.classes}, 1.0 / std::sqrt(double(cfg.head_inputs())))};
        p.dense_b = {"action_head.dense.bias", Tensor::zeros({cfg.classes})};
        return p;
    }

    std::vector<Parameter*> all() { return {&dense_w, &dense_b}; }
};

/// Raw clips [B, N, C_in, H, W] -> features [B, N, C_f, H/4, W/4].
inline Node backbone_forward(const Node& clips, const BackboneParams& p, const ModelConfig& cfg) {
    const auto& s = clips.shape();
    if (s.size() != 5 || s[1] != cfg.frames || s[2] != cfg.in_channels || s[3] != cfg.height || s[4] != cfg.width) {
        throw DimensionError("backbone_forward: input " + shape_str(s) + " does not match config [B," +
                             std::to_string(cfg.frames) + "," + std::to_string(cfg.in_channels) + "," +
                             std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
    }
    const std::size_t b = s[0], n = s[1];
    Node x = reshape(clips, {b * n, cfg.in_channels, cfg.height, cfg.width});
    x = relu(conv2d(x, p.conv1_w, p.conv1_b, 2, 1));
    x = relu(conv2d(x, p.conv2_w, p.conv2_b, 2, 1));
    return reshape(x, {b, n, cfg.backbone_channels, cfg.feature_height(), cfg.feature_width()});
}

/// [B, N, C, H, W] -> temporal mean -> global average pool (or flatten) -> dense -> [B, classes].
inline Node action_head_forward(const Node& features, const ActionHeadParams& p, bool pool = true) {
    const auto& s = features.shape();
    if (s.size() != 5) throw DimensionError("action_head_forward: expected rank 5, got " + shape_str(s));
    Node m = mean_axis(features, 1);
    if (!pool) return linear(reshape(m, {s[0], s[2] * s[3] * s[4]}), p.dense_w, p.dense_b);
    return linear(reshape(global_avg_pool(m), {s[0], s[2]}), p.dense_w, p.dense_b);
}

struct ActionOutput {
    Node logits;
    std::optional<ett::EttOutput> ett;
};

class Model {
public:
    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(seed, Stream::Init);
        Model m;
        m.cfg_ = cfg;
        // The self head is drawn last so that toggling it leaves every other initial value unchanged.
        m.backbone = BackboneParams::init(cfg, rng);
        if (cfg.use_ett) m.ett = ett::EttParams::init(cfg.ett_config(), rng);
        m.action_head = ActionHeadParams::init(cfg, rng);
        if (cfg.tss) m.self_head = tss::SelfClassifierParams::init(cfg.self_config(), rng);
        m.check_unique_names();
        return m;
    }

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Every learnable parameter: sigma, ETT, omega_1, then omega_2 when present.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = backbone.all();
        if (cfg_.use_ett) append(out, ett.all());
        append(out, action_head.all());
        if (self_head) append(out, self_head->all());
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto* p : parameters())
            if (p->name == name) return p;
        return nullptr;
    }

    Node features(const Node& clips) const { return backbone_forward(clips, backbone, cfg_); }

    /// ETT (when enabled) and the action head on backbone features.
    ActionOutput action(const Node& features) const {
        ActionOutput out;
        if (cfg_.use_ett) {
            out.ett = ett::ett_forward(features, ett, cfg_.ett_config());
            out.logits = action_head_forward(out.ett->augmented, action_head);
        } else {
            out.logits = action_head_forward(features, action_head, false);
        }
        return out;
    }

    Node self_logits(const tss::PseudoLabelBatch& pseudo) const {
        if (!self_head) throw ContractError("model has no self-supervision head");
        return tss::self_classifier_forward(pseudo.y, *self_head, cfg_.self_config());
    }

    BackboneParams backbone;
    ett::EttParams ett; // unused when use_ett is false
    ActionHeadParams action_head;
    std::optional<tss::SelfClassifierParams> self_head;

private:
    static void append(std::vector<Parameter*>& out, std::vector<Parameter*> more) {
        out.insert(out.end(), more.begin(), more.end());
    }

    void check_unique_names() {
        std::set<std::string> names;
        for (auto* p : parameters()) {
            if (!names.insert(p->name).second) throw ContractError("duplicate parameter name '" + p->name + "'");
        }
    }

    ModelConfig cfg_;
};

// ---------------------------------------------------------------------------
// Checkpoint: "TTSN", u32 version, then until EOF per parameter:
// u32 name length, name bytes, u32 rank, u32 dims..., little-endian f64 values.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "TTSN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

inline std::vector<char> encode_checkpoint(std::span<Parameter* const> params) {
    io::Writer w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    for (const auto* p : params) {
        w.u32(static_cast<std::uint32_t>(p->name.size()));
        w.bytes({p->name.data(), p->name.size()});
        const auto& shape = p->value().shape();
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        w.f64s(p->value().data());
    }
    return w.buffer();
}

inline void save_checkpoint(const std::string& path, std::span<Parameter* const> params) {
    io::Writer w;
    w.bytes(encode_checkpoint(params));
    w.save(path);
}

inline std::vector<NamedTensor> decode_checkpoint(io::Reader& r) {
    r.expect_magic(kCheckpointMagic);
    r.expect_version(kCheckpointVersion);
    std::vector<NamedTensor> out;
    while (!r.at_end()) {
        NamedTensor t;
        t.name = r.str(r.u32());
        Shape shape(r.u32());
        if (shape.empty()) throw FormatError("checkpoint record '" + t.name + "' has rank 0");
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) throw FormatError("checkpoint record '" + t.name + "' has a zero-length axis");
        }
        std::vector<double> values(shape_numel(shape));
        r.f64s(values);
        t.value = Tensor(std::move(shape), std::move(values));
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    auto r = io::Reader::load(path);
    return decode_checkpoint(r);
}

/// Assign every model parameter from the records; a missing name is a format error.
inline void load_parameters(Model& model, const std::vector<NamedTensor>& records) {
    for (auto* p : model.parameters()) {
        auto it = std::find_if(records.begin(), records.end(), [&](const NamedTensor& t) { return t.name == p->name; });
        if (it == records.end()) throw FormatError("checkpoint has no record for parameter '" + p->name + "'");
        p->assign(it->value);
    }
}

} // namespace ttsn
