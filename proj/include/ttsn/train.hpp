#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttsn/data.hpp"
#include "ttsn/model.hpp"
#include "ttsn/tss.hpp"

namespace ttsn {

inline constexpr std::string_view kVersion = "ttsn 0.1.0";

struct TrainConfig {
    std::size_t batch = 4;
    std::size_t frames = 8;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t classes = 4;
    double theta1 = 1.0;
    double theta2 = 0.1;
    double lr = 0.05;
    std::vector<std::size_t> lr_steps{25};
    std::size_t epochs = 30;
    std::size_t hidden = 64;
    std::size_t embed_channels = 4;
    std::size_t backbone_channels = 8;
    bool use_ett = true;
    std::optional<tss::Variant> tss = tss::Variant::RR; // nullopt: TSS off
    std::uint64_t seed = 7;
    bool allow_theta_override = false;

    ModelConfig model_config() const {
        ModelConfig m;
        m.in_channels = channels;
        m.frames = frames;
        m.height = height;
        m.width = width;
        m.backbone_channels = backbone_channels;
        m.classes = classes;
        m.hidden = hidden;
        m.embed_channels = embed_channels;
        m.use_ett = use_ett;
        m.tss = tss;
        return m;
    }

    /// Loss weights, schedule and counts; needs no knowledge of the data. Throws ConfigError.
    void validate_hyper() const {
        if (!batch || !frames || !channels || !height || !width || !epochs) {
            throw ConfigError("batch, frames, channels, size and epochs must be positive");
        }
        if (!(theta1 > 0.0) || !std::isfinite(theta1)) throw ConfigError("theta1 must be > 0");
        if (!(theta2 >= 0.0) || !std::isfinite(theta2)) throw ConfigError("theta2 must be >= 0");
        if (theta2 > 0.0 && !allow_theta_override) {
            const double ratio = theta1 / theta2;
            if (ratio < 10.0 || ratio > 100.0) {
                throw ConfigError("theta1/theta2 = " + std::to_string(ratio) +
                                  " is outside [10, 100] (pass the override flag to allow it)");
            }
        }
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
        for (std::size_t i = 0; i < lr_steps.size(); ++i) {
            if (i > 0 && lr_steps[i] <= lr_steps[i - 1]) throw ConfigError("lr_steps must be strictly increasing");
            if (lr_steps[i] >= epochs) {
                throw ConfigError("lr step " + std::to_string(lr_steps[i]) + " is not below epochs " +
                                  std::to_string(epochs));
            }
        }
    }

    /// Everything, including model geometry. Throws ConfigError on the first violated rule.
    void validate() const {
        validate_hyper();
        model_config().validate();
    }
};

/// Learning rate for a 1-based epoch: divided by 10 once for every step already passed.
inline double lr_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr;
    for (auto s : cfg.lr_steps)
        if (s < epoch) lr /= 10.0;
    return lr;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"batch", c.batch},
            {"frames", c.frames},
            {"channels", c.channels},
            {"height", c.height},
            {"width", c.width},
            {"classes", c.classes},
            {"theta1", c.theta1},
            {"theta2", c.theta2},
            {"lr", c.lr},
            {"lr_steps", c.lr_steps},
            {"epochs", c.epochs},
            {"hidden", c.hidden},
            {"embed_channels", c.embed_channels},
            {"backbone_channels", c.backbone_channels},
            {"use_ett", c.use_ett},
            {"tss", c.tss ? std::string(tss::to_string(*c.tss)) : std::string("off")},
            {"seed", c.seed},
            {"allow_theta_override", c.allow_theta_override}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch = j.at("batch");
    c.frames = j.at("frames");
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.classes = j.at("classes");
    c.theta1 = j.at("theta1");
    c.theta2 = j.at("theta2");
    c.lr = j.at("lr");
    c.lr_steps = j.at("lr_steps").get<std::vector<std::size_t>>();
    c.epochs = j.at("epochs");
    c.hidden = j.at("hidden");
    c.embed_channels = j.at("embed_channels");
    c.backbone_channels = j.at("backbone_channels");
    c.use_ett = j.at("use_ett");
    const std::string t = j.at("tss");
    if (t == "off") {
        c.tss.reset();
    } else if (auto v = tss::parse_variant(t)) {
        c.tss = *v;
    } else {
        throw ConfigError("unknown tss variant '" + t + "'");
    }
    c.seed = j.at("seed");
    c.allow_theta_override = j.at("allow_theta_override");
    return c;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return io::fnv1a_str(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRecord {
    enum class Kind { Step, Epoch };
    Kind kind = Kind::Step;
    std::size_t epoch = 0;
    std::size_t step = 0; // global step count at the time of the record
    double l_action = 0.0;
    double l_self = 0.0;
    double total = 0.0;
    double train_acc = 0.0;
    std::optional<double> test_acc;
    double lambda = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
    std::vector<tss::Selection> selections;
};

/// One JSON object per record. Wall-clock time is omitted unless requested so that runs
/// with the same seed produce identical streams.
inline nlohmann::json to_json(const MetricsRecord& r, bool with_wall_clock = false) {
    nlohmann::json j{{"type", r.kind == MetricsRecord::Kind::Step ? "step" : "epoch"},
                     {"epoch", r.epoch},
                     {"step", r.step},
                     {"l_action", r.l_action},
                     {"l_self", r.l_self},
                     {"total", r.total},
                     {"train_acc", r.train_acc},
                     {"lambda", r.lambda},
                     {"lr", r.lr}};
    if (r.test_acc) j["test_acc"] = *r.test_acc;
    if (with_wall_clock) j["wall_seconds"] = r.wall_seconds;
    if (!r.selections.empty()) {
        auto sel = nlohmann::json::array();
        for (const auto& s : r.selections) {
            nlohmann::json e{{"b", s.batch}, {"s", s.selected ? "S" : "NS"}};
            if (s.channel) e["d"] = *s.channel;
            sel.push_back(e);
        }
        j["tss"] = sel;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Stack clips[indices] into a [B, N, C, H, W] leaf.
inline Node make_batch(std::span<const data::ClipRecord> clips, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("make_batch: empty batch");
    const Shape& fs = clips[indices[0]].frames.shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), fs.begin(), fs.end());
    std::vector<double> values;
    values.reserve(shape_numel(shape));
    for (auto i : indices) {
        if (clips[i].frames.shape() != fs) throw DimensionError("make_batch: clips have different shapes");
        values.insert(values.end(), clips[i].frames.data().begin(), clips[i].frames.data().end());
    }
    return Node(Tensor(std::move(shape), std::move(values)));
}

inline std::vector<std::size_t> labels_of(std::span<const data::ClipRecord> clips, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(clips[i].label);
    return out;
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.shape()[1];
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    return best;
}

inline void check_dataset(const TrainConfig& cfg, std::span<const data::ClipRecord> clips, const char* which) {
    const Shape expect{cfg.frames, cfg.channels, cfg.height, cfg.width};
    for (const auto& c : clips) {
        if (c.frames.shape() != expect) {
            throw ConfigError(std::string(which) + " clip " + std::to_string(c.clip_id) + " has shape " +
                              shape_str(c.frames.shape()) + ", config expects " + shape_str(expect));
        }
        if (c.label >= cfg.classes) {
            throw ConfigError(std::string(which) + " clip " + std::to_string(c.clip_id) + " has label " +
                              std::to_string(c.label) + " >= classes " + std::to_string(cfg.classes));
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation (backbone + ETT + action head; TSS is never touched)
// ---------------------------------------------------------------------------

struct EvalReport {
    std::size_t classes = 0;
    std::size_t total = 0;
    std::size_t correct = 0;
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]

    double accuracy() const { return total ? double(correct) / double(total) : 0.0; }

    double class_accuracy(std::size_t k) const {
        std::size_t n = 0;
        for (auto v : confusion[k]) n += v;
        return n ? double(confusion[k][k]) / double(n) : 0.0;
    }

    /// Clips of class k or its partner predicted as the other member of the pair.
    std::size_t partner_confusions() const {
        std::size_t n = 0;
        for (std::size_t k = 0; k < classes; ++k) n += confusion[k][data::partner_of(std::uint32_t(k), classes)];
        return n;
    }

    /// Within-pair accuracy for the pair containing class k: correct / (correct + swapped with partner).
    /// NaN when no clip of the pair was predicted inside the pair.
    double pair_accuracy(std::size_t k) const {
        const std::size_t p = data::partner_of(std::uint32_t(k), classes);
        const std::size_t right = confusion[k][k] + confusion[p][p];
        const std::size_t swapped = confusion[k][p] + confusion[p][k];
        return right + swapped ? double(right) / double(right + swapped)
                              : std::numeric_limits<double>::quiet_NaN();
    }
};

inline EvalReport evaluate(const Model& model, std::span<const data::ClipRecord> clips, std::size_t batch = 16) {
    NoGradGuard no_grad;
    EvalReport r;
    r.classes = model.config().classes;
    r.confusion.assign(r.classes, std::vector<std::size_t>(r.classes, 0));
    for (std::size_t start = 0; start < clips.size(); start += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(clips.size(), start + batch); ++i) idx.push_back(i);
        Node logits = model.action(model.features(make_batch(clips, idx))).logits;
        for (std::size_t row = 0; row < idx.size(); ++row) {
            const std::size_t truth = clips[idx[row]].label, pred = argmax_row(logits.value(), row);
            ++r.confusion[truth][pred];
            r.correct += truth == pred;
            ++r.total;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepResult {
    double l_action = 0.0;
    double l_self = 0.0;
    double total = 0.0;
    std::size_t correct = 0;
    std::vector<tss::Selection> selections;
};

/// Forward both loss paths on one mini-batch, backward the weighted total, apply SGD.
inline StepResult train_step(Model& model, const TrainConfig& cfg, const Node& clips,
                             std::span<const std::size_t> labels, tss::TssRng& tss_rng, double lr) {
    StepResult out;
    Node features = model.features(clips);
    ActionOutput act = model.action(features);
    Node l_action = cross_entropy(act.logits, labels);
    Node total = scale(l_action, cfg.theta1);
    if (cfg.tss) {
        tss::PseudoLabelBatch pseudo = tss::apply_variant(features, *cfg.tss, tss_rng);
        const auto pseudo_labels = pseudo.label_indices();
        Node l_self = cross_entropy(model.self_logits(pseudo), pseudo_labels);
        total = add(total, scale(l_self, cfg.theta2));
        out.l_self = l_self.value().item();
        out.selections = std::move(pseudo.selections);
    }
    for (std::size_t row = 0; row < labels.size(); ++row)
        out.correct += argmax_row(act.logits.value(), row) == labels[row];
    out.l_action = l_action.value().item();
    out.total = total.value().item();

    backward(total);
    auto params = model.parameters();
    sgd_step(params, lr);
    return out;
}

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> records;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

inline TrainResult train(const TrainConfig& cfg, std::span<const data::ClipRecord> train_set,
                         std::span<const data::ClipRecord> test_set = {}, const MetricsSink& sink = {}) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    check_dataset(cfg, train_set, "train");
    check_dataset(cfg, test_set, "test");

    TrainResult result{Model::init(cfg.model_config(), cfg.seed), {}};
    Model& model = result.model;
    Rng shuffle(cfg.seed, Stream::Shuffle);
    tss::TssRng tss_rng(cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    auto lambda_value = [&] { return cfg.use_ett ? model.ett.lambda.value()[0] : 0.0; };
    auto emit = [&](MetricsRecord r) {
        if (sink) sink(r);
        result.records.push_back(std::move(r));
    };

    std::vector<std::size_t> order(train_set.size());
    std::size_t global_step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_for_epoch(cfg, epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle.engine());

        double sum_action = 0.0, sum_self = 0.0, sum_total = 0.0;
        std::size_t steps = 0, correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const auto labels = labels_of(train_set, idx);
            StepResult s = train_step(model, cfg, make_batch(train_set, idx), labels, tss_rng, lr);
            if (!std::isfinite(s.total)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(global_step + 1));
            }
            ++global_step;
            ++steps;
            correct += s.correct;
            sum_action += s.l_action;
            sum_self += s.l_self;
            sum_total += s.total;

            MetricsRecord r;
            r.kind = MetricsRecord::Kind::Step;
            r.epoch = epoch;
            r.step = global_step;
            r.l_action = s.l_action;
            r.l_self = s.l_self;
            r.total = s.total;
            r.train_acc = double(s.correct) / double(idx.size());
            r.lambda = lambda_value();
            r.lr = lr;
            r.wall_seconds = elapsed();
            r.selections = std::move(s.selections);
            emit(std::move(r));
        }

        MetricsRecord r;
        r.kind = MetricsRecord::Kind::Epoch;
        r.epoch = epoch;
        r.step = global_step;
        r.l_action = sum_action / double(steps);
        r.l_self = sum_self / double(steps);
        r.total = sum_total / double(steps);
        r.train_acc = double(correct) / double(train_set.size());
        if (!test_set.empty()) r.test_acc = evaluate(model, test_set).accuracy();
        r.lambda = lambda_value();
        r.lr = lr;
        r.wall_seconds = elapsed();
        emit(std::move(r));
    }
    return result;
}

} // namespace ttsn
