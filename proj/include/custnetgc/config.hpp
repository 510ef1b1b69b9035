#pragma once

// Run configuration: one JSON file drives every pipeline stage. Serialization
// is lossless and the canonical dump's hash stamps each artifact so stale or
// mismatched outputs are detected.

#include <fstream>
#include <string>

#include <json.hpp>

#include "custnetgc/common.hpp"
#include "custnetgc/fft.hpp"
#include "custnetgc/gbdt.hpp"
#include "custnetgc/net.hpp"
#include "custnetgc/preprocess.hpp"

namespace custnetgc {

constexpr const char* kConfigSchema = "custnetgc-config/1";

enum class FeatureKind { SlopePlot, LmHP };

inline const char* feature_kind_name(FeatureKind k) {
    return k == FeatureKind::SlopePlot ? "slope_plot" : "lmhp";
}

inline FeatureKind feature_kind_from_name(const std::string& s) {
    if (s == "slope_plot") return FeatureKind::SlopePlot;
    if (s == "lmhp") return FeatureKind::LmHP;
    throw DataError("unknown feature kind: " + s);
}

struct StftConfig {
    int n_fft = 512;
    int hop = 128;
    Window window = Window::Hann;
};

struct MelConfig {
    int n_mels = 64;
    double f_min_hz = 0.0;
    double f_max_hz = -1.0;  // -1: use sr/2
    double floor = 1e-10;
};

struct HpssConfig {
    int h_kernel = 31;
    int p_kernel = 31;
    double power = 2.0;
    double alpha = 1.0;
};

struct ImageConfig {
    FeatureKind kind = FeatureKind::SlopePlot;
    int height = 244;
    int width = 244;
};

struct NetConfig {
    int input_size = 244;
    int num_middle_blocks = 4;
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    int threads = 1;  // 0 = hardware concurrency; results identical either way
    AlphaMode alpha_mode = AlphaMode::AsPrinted;
};

struct SplitConfig {
    double train_fraction = 0.8;
    std::uint64_t seed = 42;
};

struct RunConfig {
    std::string schema = kConfigSchema;
    std::string manifest;  // input dataset manifest (CSV)
    std::string out_dir = "out";
    PreprocessConfig preprocess;
    StftConfig stft;
    MelConfig mel;
    HpssConfig hpss;
    ImageConfig image;
    NetConfig net;
    GbdtParams boost;
    SplitConfig split;

    TrainConfig train_config() const {
        TrainConfig tc;
        tc.epochs = net.epochs;
        tc.batch_size = net.batch_size;
        tc.learning_rate = net.learning_rate;
        tc.optimizer = net.optimizer;
        tc.seed = split.seed;
        tc.train_fraction = split.train_fraction;
        tc.threads = net.threads;
        tc.alpha_mode = net.alpha_mode;
        return tc;
    }
};

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["schema"] = c.schema;
    j["manifest"] = c.manifest;
    j["out_dir"] = c.out_dir;
    j["preprocess"] = {{"target_duration_s", c.preprocess.target_duration_s},
                       {"target_sample_rate_hz", c.preprocess.target_sample_rate_hz},
                       {"peak_level", c.preprocess.peak_level},
                       {"tempo_adjust", c.preprocess.tempo_adjust}};
    j["stft"] = {{"n_fft", c.stft.n_fft}, {"hop", c.stft.hop}, {"window", window_name(c.stft.window)}};
    j["mel"] = {{"n_mels", c.mel.n_mels},
                {"f_min_hz", c.mel.f_min_hz},
                {"f_max_hz", c.mel.f_max_hz},
                {"floor", c.mel.floor}};
    j["hpss"] = {{"h_kernel", c.hpss.h_kernel},
                 {"p_kernel", c.hpss.p_kernel},
                 {"power", c.hpss.power},
                 {"alpha", c.hpss.alpha}};
    j["image"] = {{"kind", feature_kind_name(c.image.kind)},
                  {"height", c.image.height},
                  {"width", c.image.width}};
    j["net"] = {{"input_size", c.net.input_size},
                {"num_middle_blocks", c.net.num_middle_blocks},
                {"epochs", c.net.epochs},
                {"batch_size", c.net.batch_size},
                {"learning_rate", c.net.learning_rate},
                {"optimizer", optimizer_name(c.net.optimizer)},
                {"threads", c.net.threads},
                {"alpha_mode", alpha_mode_name(c.net.alpha_mode)}};
    j["boost"] = {{"n_rounds", c.boost.n_rounds},
                  {"max_depth", c.boost.max_depth},
                  {"learning_rate", c.boost.learning_rate},
                  {"min_samples_leaf", c.boost.min_samples_leaf},
                  {"seed", c.boost.seed}};
    j["split"] = {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.schema = j.value("schema", std::string(kConfigSchema));
    if (c.schema != kConfigSchema) {
        throw DataError("config schema '" + c.schema + "' not supported (want " + kConfigSchema + ")");
    }
    c.manifest = j.value("manifest", std::string());
    c.out_dir = j.value("out_dir", std::string("out"));
    if (j.contains("preprocess")) {
        const auto& p = j["preprocess"];
        c.preprocess.target_duration_s = p.value("target_duration_s", c.preprocess.target_duration_s);
        c.preprocess.target_sample_rate_hz =
            p.value("target_sample_rate_hz", c.preprocess.target_sample_rate_hz);
        c.preprocess.peak_level = p.value("peak_level", c.preprocess.peak_level);
        c.preprocess.tempo_adjust = p.value("tempo_adjust", c.preprocess.tempo_adjust);
    }
    if (j.contains("stft")) {
        const auto& p = j["stft"];
        c.stft.n_fft = p.value("n_fft", c.stft.n_fft);
        c.stft.hop = p.value("hop", c.stft.hop);
        const std::string w = p.value("window", std::string("hann"));
        if (w == "hann") c.stft.window = Window::Hann;
        else if (w == "hamming") c.stft.window = Window::Hamming;
        else if (w == "rect") c.stft.window = Window::Rect;
        else throw DataError("unknown window: " + w);
    }
    if (j.contains("mel")) {
        const auto& p = j["mel"];
        c.mel.n_mels = p.value("n_mels", c.mel.n_mels);
        c.mel.f_min_hz = p.value("f_min_hz", c.mel.f_min_hz);
        c.mel.f_max_hz = p.value("f_max_hz", c.mel.f_max_hz);
        c.mel.floor = p.value("floor", c.mel.floor);
    }
    if (j.contains("hpss")) {
        const auto& p = j["hpss"];
        c.hpss.h_kernel = p.value("h_kernel", c.hpss.h_kernel);
        c.hpss.p_kernel = p.value("p_kernel", c.hpss.p_kernel);
        c.hpss.power = p.value("power", c.hpss.power);
        c.hpss.alpha = p.value("alpha", c.hpss.alpha);
    }
    if (j.contains("image")) {
        const auto& p = j["image"];
        c.image.kind = feature_kind_from_name(p.value("kind", std::string("slope_plot")));
        c.image.height = p.value("height", c.image.height);
        c.image.width = p.value("width", c.image.width);
    }
    if (j.contains("net")) {
        const auto& p = j["net"];
        c.net.input_size = p.value("input_size", c.net.input_size);
        c.net.num_middle_blocks = p.value("num_middle_blocks", c.net.num_middle_blocks);
        c.net.epochs = p.value("epochs", c.net.epochs);
        c.net.batch_size = p.value("batch_size", c.net.batch_size);
        c.net.learning_rate = p.value("learning_rate", c.net.learning_rate);
        c.net.optimizer = optimizer_from_name(p.value("optimizer", std::string("adam")));
        c.net.threads = p.value("threads", c.net.threads);
        c.net.alpha_mode = alpha_mode_from_name(p.value("alpha_mode", std::string("as_printed")));
    }
    if (j.contains("boost")) {
        const auto& p = j["boost"];
        c.boost.n_rounds = p.value("n_rounds", c.boost.n_rounds);
        c.boost.max_depth = p.value("max_depth", c.boost.max_depth);
        c.boost.learning_rate = p.value("learning_rate", c.boost.learning_rate);
        c.boost.min_samples_leaf = p.value("min_samples_leaf", c.boost.min_samples_leaf);
        c.boost.seed = p.value("seed", c.boost.seed);
    }
    if (j.contains("split")) {
        const auto& p = j["split"];
        c.split.train_fraction = p.value("train_fraction", c.split.train_fraction);
        c.split.seed = p.value("seed", c.split.seed);
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline void save_config(const std::string& path, const RunConfig& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write config: " + path);
    f << config_to_json(c).dump(2) << '\n';
}

// Hash of the canonical dump, minus the location fields: it identifies what
// is computed, not where inputs and outputs live, so runs into different
// directories still produce byte-identical artifacts.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json canonical = nlohmann::json(config_to_json(c));
    canonical.erase("manifest");
    canonical.erase("out_dir");
    return hash_hex(fnv1a64(canonical.dump()));
}

}  // namespace custnetgc
