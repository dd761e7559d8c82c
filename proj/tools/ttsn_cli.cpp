// Command-line front end: generate | train | eval | attn.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttsn/ttsn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttsn;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 1;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    data::GenerateOptions opt;
    std::size_t size = 32;
    std::size_t test_per_class = 30;
    std::string out, test_out;
};

void print_summary(const std::string& path, std::span<const data::ClipRecord> clips, std::size_t classes) {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& c : clips) ++counts[c.label];
    const auto names = data::motion_classes(classes);
    std::printf("%s: %zu clips", path.c_str(), clips.size());
    if (!clips.empty()) std::printf(", frames %s", shape_str(clips[0].frames.shape()).c_str());
    std::printf("\n");
    for (std::size_t k = 0; k < classes; ++k)
        std::printf("  class %zu (%s): %zu\n", k, data::to_string(names[k].direction), counts[k]);
    std::printf("  hash %s\n", io::hex64(io::file_hash(path)).c_str());
}

void cmd_generate(GenerateArgs a) {
    a.opt.height = a.opt.width = a.size;
    data::motion_classes(a.opt.classes);
    if (a.test_out.empty()) {
        auto clips = data::generate(a.opt);
        data::write_clips(a.out, clips);
        print_summary(a.out, clips, a.opt.classes);
        return;
    }
    auto split = data::generate_split(a.opt, a.opt.per_class, a.test_per_class);
    data::write_clips(a.out, split.train);
    data::write_clips(a.test_out, split.test);
    print_summary(a.out, split.train, a.opt.classes);
    print_summary(a.test_out, split.test, a.opt.classes);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    TrainConfig cfg;
    std::string data, test_data, out_dir, from_manifest;
    std::string tss = "rr";
    bool no_ett = false;
    bool wall_clock = false;
    bool quiet = false;
};

void adopt_dims(TrainConfig& cfg, std::span<const data::ClipRecord> clips) {
    if (clips.empty()) throw ConfigError("training set is empty");
    const auto& s = clips[0].frames.shape();
    cfg.frames = s[0];
    cfg.channels = s[1];
    cfg.height = s[2];
    cfg.width = s[3];
}

json dataset_entry(const std::string& path) { return {{"path", path}, {"hash", io::hex64(io::file_hash(path))}}; }

void cmd_train(TrainArgs a, const CLI::App& app) {
    TrainConfig cfg = a.cfg;
    if (!a.from_manifest.empty()) {
        const json m = read_json(a.from_manifest);
        cfg = train_config_from_json(m.at("config"));
        a.data = m.at("dataset").at("path");
        if (io::hex64(io::file_hash(a.data)) != m.at("dataset").at("hash")) {
            throw ConfigError("dataset '" + a.data + "' does not match the hash recorded in the manifest");
        }
        if (m.contains("test_dataset")) a.test_data = m.at("test_dataset").at("path");
        if (app.count("--out-dir") == 0) a.out_dir = m.at("out_dir");
    } else {
        if (a.tss == "off") {
            cfg.tss.reset();
        } else if (auto v = tss::parse_variant(a.tss)) {
            cfg.tss = *v;
        } else {
            throw ConfigError("--tss must be one of aa, ra, ar, rr, off; got '" + a.tss + "'");
        }
        cfg.use_ett = !a.no_ett;
    }
    if (a.data.empty()) throw ConfigError("--data is required");
    if (a.out_dir.empty()) throw ConfigError("--out-dir is required");

    cfg.validate_hyper(); // before any data is read
    const auto train_set = data::read_clips(a.data);
    std::vector<data::ClipRecord> test_set;
    if (!a.test_data.empty()) test_set = data::read_clips(a.test_data);
    adopt_dims(cfg, train_set);
    cfg.validate();

    fs::create_directories(a.out_dir);
    const std::string hash = io::hex64(config_hash(cfg));
    json manifest{{"version", kVersion},
                  {"config", to_json(cfg)},
                  {"config_hash", hash},
                  {"dataset", dataset_entry(a.data)},
                  {"out_dir", a.out_dir}};
    if (!a.test_data.empty()) manifest["test_dataset"] = dataset_entry(a.test_data);
    write_json((fs::path(a.out_dir) / "manifest.json").string(), manifest);

    const auto metrics_path = (fs::path(a.out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open '" + metrics_path + "' for writing");
    const json header{{"type", "header"}, {"config_hash", hash}, {"version", kVersion}};
    metrics << header.dump() << "\n";
    if (!a.quiet) std::cout << header.dump() << "\n";

    auto result = train(cfg, train_set, test_set, [&](const MetricsRecord& r) {
        const std::string line = to_json(r, a.wall_clock).dump();
        metrics << line << "\n";
        if (!a.quiet || r.kind == MetricsRecord::Kind::Epoch) std::cout << line << "\n";
    });
    metrics.flush();
    const auto ckpt = (fs::path(a.out_dir) / "model.ttsn").string();
    auto params = result.model.parameters();
    save_checkpoint(ckpt, params);
    std::fprintf(stderr, "wrote %s, %s, %s\n", ckpt.c_str(), metrics_path.c_str(),
                 (fs::path(a.out_dir) / "manifest.json").string().c_str());
}

// ---------------------------------------------------------------- eval / attn

Model load_model(const std::string& checkpoint, std::string manifest_path) {
    if (manifest_path.empty()) manifest_path = (fs::path(checkpoint).parent_path() / "manifest.json").string();
    const TrainConfig cfg = train_config_from_json(read_json(manifest_path).at("config"));
    Model model = Model::init(cfg.model_config(), cfg.seed);
    load_parameters(model, read_checkpoint(checkpoint));
    return model;
}

void check_clips(const Model& model, std::span<const data::ClipRecord> clips) {
    const auto& m = model.config();
    const Shape expect{m.frames, m.in_channels, m.height, m.width};
    for (const auto& c : clips) {
        if (c.frames.shape() != expect) {
            throw ConfigError("clip " + std::to_string(c.clip_id) + " has shape " + shape_str(c.frames.shape()) +
                              ", model expects " + shape_str(expect));
        }
        if (c.label >= m.classes) throw ConfigError("clip " + std::to_string(c.clip_id) + " has an out-of-range label");
    }
}

void cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& data_path) {
    const Model model = load_model(checkpoint, manifest);
    const auto clips = data::read_clips(data_path);
    check_clips(model, clips);
    const EvalReport r = evaluate(model, clips);
    const std::size_t c = r.classes;
    const bool paired = c == 2 || c == 4;
    std::printf("clips %zu  top-1 %.4f\n", r.total, r.accuracy());
    for (std::size_t k = 0; k < c; ++k) {
        std::printf("class %zu", k);
        if (paired) std::printf(" (%s)", data::to_string(data::motion_classes(c)[k].direction));
        std::printf(": %.4f\n", r.class_accuracy(k));
    }
    std::printf("confusion (rows true, cols predicted)\n      ");
    for (std::size_t j = 0; j < c; ++j) std::printf("%6zu", j);
    std::printf("\n");
    for (std::size_t i = 0; i < c; ++i) {
        std::printf("%6zu", i);
        for (std::size_t j = 0; j < c; ++j) std::printf("%6zu", r.confusion[i][j]);
        std::printf("\n");
    }
    if (paired) {
        std::printf("partner confusions %zu\n", r.partner_confusions());
        for (std::size_t k = 0; k < c; k += 2) {
            std::printf("  pair %zu<->%zu: %zu + %zu, ", k, k + 1, r.confusion[k][k + 1], r.confusion[k + 1][k]);
            const double pa = r.pair_accuracy(k);
            if (std::isnan(pa)) std::printf("pair accuracy n/a (no clip predicted inside the pair)\n");
            else std::printf("pair accuracy %.4f\n", pa);
        }
    }
}

void cmd_attn(const std::string& checkpoint, const std::string& manifest, const std::string& data_path,
              std::vector<std::size_t> clip_idx, const std::string& out_dir, bool blend) {
    const Model model = load_model(checkpoint, manifest);
    if (!model.config().use_ett) throw ConfigError("checkpoint was trained without ETT; there is no attention map");
    const auto clips = data::read_clips(data_path);
    check_clips(model, clips);
    if (clip_idx.empty()) clip_idx.push_back(0);
    for (auto i : clip_idx)
        if (i >= clips.size()) {
            throw IndexError("--clip " + std::to_string(i) + " is out of range for " + std::to_string(clips.size()) +
                             " clips");
        }
    NoGradGuard no_grad;
    Node batch = make_batch(clips, clip_idx);
    const auto out = model.action(model.features(batch));
    const auto paths = pgm::export_attention(out.ett->attention.value(), out_dir, blend ? &batch.value() : nullptr);
    for (std::size_t b = 0; b < clip_idx.size(); ++b)
        std::printf("clip %zu (id %llu) -> attn_b%zu_f*.pgm\n", clip_idx[b],
                    static_cast<unsigned long long>(clips[clip_idx[b]].clip_id), b);
    std::printf("wrote %zu files to %s\n", paths.size(), out_dir.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal transformer with sequence self-supervision on synthetic motion clips"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "write a synthetic directed-motion dataset");
    g->add_option("--classes", gen.opt.classes, "2 (up/down) or 4 (up/down/left/right)")->capture_default_str();
    g->add_option("--per-class", gen.opt.per_class, "clips per class")->capture_default_str();
    g->add_option("--frames", gen.opt.frames, "frames per clip")->capture_default_str();
    g->add_option("--size", gen.size, "frame height and width")->capture_default_str();
    g->add_option("--noise", gen.opt.noise_std, "pixel noise std")->capture_default_str();
    g->add_option("--seed", gen.opt.seed)->capture_default_str();
    g->add_option("--out", gen.out, "output .ttsd file")->required();
    g->add_option("--test-out", gen.test_out, "also write a held-out test split here");
    g->add_option("--test-per-class", gen.test_per_class, "clips per class in the test split")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a model and write manifest, metrics and checkpoint");
    t->add_option("--data", tr.data, "training .ttsd file");
    t->add_option("--test-data", tr.test_data, "evaluated after every epoch");
    t->add_option("--out-dir", tr.out_dir, "run directory");
    t->add_option("--from-manifest", tr.from_manifest, "re-run the configuration recorded in a manifest.json");
    t->add_option("--theta1", tr.cfg.theta1, "action loss weight")->capture_default_str();
    t->add_option("--theta2", tr.cfg.theta2, "self-supervision loss weight")->capture_default_str();
    t->add_flag("--allow-theta-override", tr.cfg.allow_theta_override, "accept theta1/theta2 outside [10, 100]");
    t->add_option("--lr", tr.cfg.lr)->capture_default_str();
    t->add_option("--lr-steps", tr.cfg.lr_steps, "epochs after which lr is divided by 10")
        ->delimiter(',')
        ->capture_default_str();
    t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
    t->add_option("--batch-size", tr.cfg.batch)->capture_default_str();
    t->add_option("--hidden-dim", tr.cfg.hidden, "token length l")->capture_default_str();
    t->add_option("--classes", tr.cfg.classes)->capture_default_str();
    t->add_option("--tss", tr.tss, "aa | ra | ar | rr | off")->capture_default_str();
    t->add_flag("--no-ett", tr.no_ett, "frame-order-invariant baseline (temporal mean of backbone features)");
    t->add_option("--seed", tr.cfg.seed)->capture_default_str();
    t->add_flag("--wall-clock", tr.wall_clock, "add wall_seconds to metrics records");
    t->add_flag("--quiet", tr.quiet, "echo only epoch records to stdout");

    std::string ckpt, manifest, data_path, attn_out;
    std::vector<std::size_t> clip_idx;
    bool blend = false;
    auto* e = app.add_subcommand("eval", "top-1, per-class accuracy and confusion table");
    e->add_option("--checkpoint", ckpt)->required();
    e->add_option("--manifest", manifest, "defaults to manifest.json next to the checkpoint");
    e->add_option("--data", data_path)->required();

    auto* at = app.add_subcommand("attn", "export per-frame attention maps as PGM");
    at->add_option("--checkpoint", ckpt)->required();
    at->add_option("--manifest", manifest, "defaults to manifest.json next to the checkpoint");
    at->add_option("--data", data_path)->required();
    at->add_option("--clip", clip_idx, "clip index in the dataset (repeatable)");
    at->add_option("--out-dir", attn_out)->required();
    at->add_flag("--blend", blend, "overlay 50/50 on the input frame");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*g) cmd_generate(gen);
        if (*t) cmd_train(tr, *t);
        if (*e) cmd_eval(ckpt, manifest, data_path);
        if (*at) cmd_attn(ckpt, manifest, data_path, clip_idx, attn_out, blend);
    } catch (const ConfigError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitValidation;
    } catch (const DimensionError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitValidation;
    } catch (const IndexError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitValidation;
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitRuntime;
    }
    return 0;
}
