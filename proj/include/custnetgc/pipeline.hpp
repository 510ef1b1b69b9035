#pragma once

// End-to-end orchestration: preprocess -> featurize -> train -> explain ->
// evaluate, with every artifact stamped by the run-config hash. The CLI is a
// thin wrapper over these functions; tests drive them directly.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "custnetgc/audio.hpp"
#include "custnetgc/config.hpp"
#include "custnetgc/gbdt.hpp"
#include "custnetgc/gradcam.hpp"
#include "custnetgc/image.hpp"
#include "custnetgc/metrics.hpp"
#include "custnetgc/net.hpp"
#include "custnetgc/pipeline_paths.hpp"
#include "custnetgc/preprocess.hpp"
#include "custnetgc/spectral.hpp"

namespace custnetgc {

struct PreprocessOutcome {
    std::string processed_manifest;
    int n_ok = 0;
    std::vector<std::string> failures;  // "path: reason"
};

// Decode -> normalize -> write 16-bit PCM per manifest entry. Per-file
// decode failures do not stop the batch; they are collected and reported.
inline PreprocessOutcome run_preprocess(const RunConfig& cfg, std::ostream& log) {
    cfg.preprocess.validate();
    const auto entries = read_manifest(cfg.manifest);  // validates before any write

    namespace fs = std::filesystem;
    const std::string out_dir = paths::processed_dir(cfg);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("cannot create " + out_dir);

    PreprocessOutcome outcome;
    std::vector<ManifestEntry> processed;
    for (const auto& e : entries) {
        try {
            AudioClip clip = load_wav(e.path);
            clip.id = e.sample_id;
            clip.label = e.label;
            bool all_zero = false;
            AudioClip done = preprocess(clip, cfg.preprocess, &all_zero);
            if (all_zero) log << "warning: all-zero clip " << e.sample_id << "\n";
            ManifestEntry pe = e;
            pe.path = out_dir + "/" + e.sample_id + ".wav";
            write_wav_pcm16(pe.path, done);
            processed.push_back(std::move(pe));
            ++outcome.n_ok;
            log << "processed: " << e.sample_id << "\n";
        } catch (const std::exception& ex) {
            outcome.failures.push_back(e.path + ": " + ex.what());
            log << "failed: " << e.path << " (" << ex.what() << ")\n";
        }
    }
    if (!processed.empty()) {
        outcome.processed_manifest = out_dir + "/manifest.csv";
        write_manifest(outcome.processed_manifest, processed);
        // the manifest format itself is fixed, so the stamp lives beside it
        nlohmann::ordered_json meta;
        meta["schema"] = "custnetgc-processed/1";
        meta["config_hash"] = config_hash(cfg);
        meta["clips"] = outcome.n_ok;
        std::ofstream mf(out_dir + "/processed_meta.json", std::ios::binary);
        if (!mf) throw DataError("cannot write processed metadata");
        mf << meta.dump(2) << '\n';
    }
    return outcome;
}

struct FeatureEntry {
    std::string id;
    Label label = Label::Unknown;
};

struct FeaturesMeta {
    std::string config_hash;
    SlopePlotRanges slope_ranges;
    std::vector<FeatureEntry> entries;
};

inline void save_features_meta(const std::string& path, const FeaturesMeta& meta) {
    nlohmann::ordered_json j;
    j["schema"] = "custnetgc-features/1";
    j["config_hash"] = meta.config_hash;
    j["slope_ranges"] = {{"e_min", meta.slope_ranges.e_min}, {"e_max", meta.slope_ranges.e_max}};
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : meta.entries) entries.push_back({{"id", e.id}, {"label", label_name(e.label)}});
    j["entries"] = std::move(entries);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << j.dump(2) << '\n';
}

inline FeaturesMeta load_features_meta(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open features metadata: " + path);
    nlohmann::json j;
    f >> j;
    if (j.value("schema", "") != "custnetgc-features/1") {
        throw DataError("unknown features metadata schema in " + path);
    }
    FeaturesMeta meta;
    meta.config_hash = j.at("config_hash").get<std::string>();
    meta.slope_ranges.e_min = j.at("slope_ranges").at("e_min").get<double>();
    meta.slope_ranges.e_max = j.at("slope_ranges").at("e_max").get<double>();
    for (const auto& e : j.at("entries")) {
        FeatureEntry fe;
        fe.id = e.at("id").get<std::string>();
        const std::string l = e.at("label").get<std::string>();
        fe.label = l == "PD" ? Label::PD : Label::HC;
        meta.entries.push_back(std::move(fe));
    }
    return meta;
}

namespace detail {

inline void write_sidecar(const std::string& png_path, const std::string& source_id,
                          const std::string& kind, const std::string& params_hash) {
    nlohmann::ordered_json j;
    j["source_id"] = source_id;
    j["kind"] = kind;
    j["params_hash"] = params_hash;
    const std::string path = png_path.substr(0, png_path.size() - 4) + ".json";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << j.dump(2) << '\n';
}

}  // namespace detail

// Per clip: log-mel, harmonic and percussive spectrogram PNGs, the energy
// slope plot (RGBA), and the stacked L-mHP image (RGB), each with a sidecar
// JSON carrying the run-config hash. `dump_csv` additionally writes the raw
// spectrogram matrices for inspection. Refuses to overwrite features
// produced by a different config unless `force`.
inline FeaturesMeta run_featurize(const RunConfig& cfg, bool force, std::ostream& log,
                                  bool dump_csv = false) {
    namespace fs = std::filesystem;
    const std::string hash = config_hash(cfg);
    const std::string feat_dir = paths::features_dir(cfg);
    const std::string meta_path = paths::features_meta(cfg);

    const auto entries = read_manifest(paths::processed_manifest(cfg));

    if (fs::exists(meta_path)) {
        const FeaturesMeta existing = load_features_meta(meta_path);
        if (existing.config_hash != hash && !force) {
            throw DataError("features in " + feat_dir + " were produced by config " +
                            existing.config_hash + ", current config is " + hash +
                            "; pass --force to overwrite");
        }
    }
    std::error_code ec;
    fs::create_directories(feat_dir, ec);
    if (!fs::is_directory(feat_dir)) throw DataError("cannot create " + feat_dir);

    const double f_max = cfg.mel.f_max_hz > 0 ? cfg.mel.f_max_hz
                                              : cfg.preprocess.target_sample_rate_hz / 2.0;
    const MelFilterbank fb = mel_filterbank(cfg.mel.n_mels, cfg.stft.n_fft,
                                            cfg.preprocess.target_sample_rate_hz,
                                            cfg.mel.f_min_hz, f_max);

    FeaturesMeta meta;
    meta.config_hash = hash;

    // pass 1: spectrogram artifacts + slope series; the energy range is a
    // dataset-level quantity so slope plots are rendered in pass 2
    std::vector<SlopeSeries> series;
    series.reserve(entries.size());
    bool first = true;
    for (const auto& e : entries) {
        const AudioClip clip = load_wav(e.path);
        const ComplexSpectrogram spec = stft(clip, cfg.stft.n_fft, cfg.stft.hop, cfg.stft.window);
        const Spectrogram lm = log_mel(spec, fb, cfg.mel.floor);
        const HpssResult hp = hpss(spec, cfg.hpss.h_kernel, cfg.hpss.p_kernel, cfg.hpss.power);
        const Spectrogram h_log = compress_component(hp.harmonic, cfg.hpss.alpha);
        const Spectrogram p_log = compress_component(hp.percussive, cfg.hpss.alpha);

        const std::string base = feat_dir + "/" + e.sample_id;
        save_feature_image(base + ".logmel.png", spectrogram_to_image(lm));
        detail::write_sidecar(base + ".logmel.png", e.sample_id, "logmel", hash);
        save_feature_image(base + ".harmonic.png", spectrogram_to_image(h_log));
        detail::write_sidecar(base + ".harmonic.png", e.sample_id, "harmonic", hash);
        save_feature_image(base + ".percussive.png", spectrogram_to_image(p_log));
        detail::write_sidecar(base + ".percussive.png", e.sample_id, "percussive", hash);
        if (dump_csv) {
            save_spectrogram_csv(base + ".logmel.csv", lm, hash);
            save_spectrogram_csv(base + ".harmonic.csv", h_log, hash);
            save_spectrogram_csv(base + ".percussive.csv", p_log, hash);
        }

        std::vector<std::string> warnings;
        const FeatureImage lmhp = stack_lmhp(lm, h_log, p_log, cfg.image.height, cfg.image.width,
                                             &warnings);
        for (const auto& w : warnings) log << "warning: " << e.sample_id << ": " << w << "\n";
        save_feature_image(base + ".lmhp.png", lmhp);
        detail::write_sidecar(base + ".lmhp.png", e.sample_id, "lmhp", hash);

        SlopeSeries s = spectral_slopes(spec);
        for (double en : s.energies) {
            if (first) {
                meta.slope_ranges.e_min = meta.slope_ranges.e_max = en;
                first = false;
            } else {
                meta.slope_ranges.e_min = std::min(meta.slope_ranges.e_min, en);
                meta.slope_ranges.e_max = std::max(meta.slope_ranges.e_max, en);
            }
        }
        series.push_back(std::move(s));
        meta.entries.push_back({e.sample_id, e.label});
        log << "featurized: " << e.sample_id << "\n";
    }

    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string base = feat_dir + "/" + entries[i].sample_id;
        const FeatureImage plot = render_slope_plot(series[i], cfg.image.width, cfg.image.height,
                                                    meta.slope_ranges);
        save_feature_image(base + ".slopes.png", plot);
        detail::write_sidecar(base + ".slopes.png", entries[i].sample_id, "slope_plot", hash);
    }

    save_features_meta(meta_path, meta);
    return meta;
}

inline std::vector<LabeledImage> load_feature_images(const RunConfig& cfg,
                                                     const FeaturesMeta& meta) {
    const std::string feat_dir = paths::features_dir(cfg);
    const bool slope = cfg.image.kind == FeatureKind::SlopePlot;
    std::vector<LabeledImage> images;
    images.reserve(meta.entries.size());
    for (const auto& e : meta.entries) {
        LabeledImage li;
        li.id = e.id;
        li.label = e.label;
        const std::string path = feat_dir + "/" + e.id + (slope ? ".slopes.png" : ".lmhp.png");
        li.image = load_feature_image(path, slope ? FeatureImage::Provenance::SlopePlot
                                                  : FeatureImage::Provenance::LmHP);
        images.push_back(std::move(li));
    }
    return images;
}

struct TrainOutcome {
    std::string checkpoint_path;
    std::string gbdt_path;
    std::string history_path;
    TrainHistory history;
};

inline void write_history_csv(const std::string& path, const TrainHistory& h,
                              const std::string& hash) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "# config_hash=" << hash << "\n";
    f << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (std::size_t i = 0; i < h.train_loss.size(); ++i) {
        f << (i + 1) << ',' << format_double(h.train_loss[i]) << ',' << format_double(h.train_acc[i])
          << ',' << format_double(h.val_loss[i]) << ',' << format_double(h.val_acc[i]) << '\n';
    }
}

inline TrainingCurves read_history_csv(const std::string& path) {
    TrainingCurves c;
    std::ifstream f(path);
    if (!f) return c;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 5) continue;
        c.train_loss.push_back(std::atof(fields[1].c_str()));
        c.train_acc.push_back(std::atof(fields[2].c_str()));
        c.val_loss.push_back(std::atof(fields[3].c_str()));
        c.val_acc.push_back(std::atof(fields[4].c_str()));
    }
    return c;
}

// Trains the network on the feature images, then the boosted stage on the
// training split's embeddings. Emits checkpoint + boost model + history.
inline TrainOutcome run_train(const RunConfig& cfg, std::ostream& log) {
    const std::string hash = config_hash(cfg);
    const FeaturesMeta meta = load_features_meta(paths::features_meta(cfg));
    if (meta.config_hash != hash) {
        throw DataError("features were produced by config " + meta.config_hash +
                        ", current config is " + hash + "; re-run featurize");
    }
    const std::vector<LabeledImage> images = load_feature_images(cfg, meta);

    namespace fs = std::filesystem;
    const std::string model_dir = paths::model_dir(cfg);
    std::error_code ec;
    fs::create_directories(model_dir, ec);
    if (!fs::is_directory(model_dir)) throw DataError("cannot create " + model_dir);

    Network net = build_custnet(cfg.net.input_size, 2, cfg.net.num_middle_blocks, cfg.split.seed);
    log << "network: " << net.layers.size() << " layers, " << net.parameter_count()
        << " parameters\n";

    std::vector<std::size_t> train_idx, val_idx;
    TrainOutcome out;
    out.history = train(net, images, cfg.train_config(), &train_idx, &val_idx);
    for (std::size_t e = 0; e < out.history.train_loss.size(); ++e) {
        log << "epoch " << (e + 1) << ": train loss " << format_double(out.history.train_loss[e])
            << " acc " << format_double(out.history.train_acc[e]) << ", val loss "
            << format_double(out.history.val_loss[e]) << " acc "
            << format_double(out.history.val_acc[e]) << "\n";
    }

    std::vector<LabeledImage> train_images;
    for (std::size_t i : train_idx) train_images.push_back(images[i]);
    const auto rows = extract_embeddings(net, train_images, cfg.net.alpha_mode, cfg.net.threads);
    GbdtModel model = gbdt_train(rows, cfg.boost);
    model.net_hash = network_hash(net);
    model.config_hash = hash;
    log << "boost: " << model.trees.size() << " trees, final train log-loss "
        << format_double(model.train_logloss.back()) << "\n";

    out.checkpoint_path = paths::checkpoint(cfg);
    out.gbdt_path = paths::gbdt_model(cfg);
    out.history_path = paths::history(cfg);
    save_checkpoint(net, out.checkpoint_path, hash);
    save_gbdt(out.gbdt_path, model);
    write_history_csv(out.history_path, out.history, hash);
    return out;
}

// Grad-CAM overlays for a batch of image files. Returns the overlay paths.
inline std::vector<std::string> run_explain(const RunConfig& cfg,
                                            const std::vector<std::string>& image_paths,
                                            int class_index, bool raw_csv, std::ostream& log) {
    if (image_paths.empty()) throw UsageError("explain: no images given");
    const LoadedCheckpoint lc = load_checkpoint(paths::checkpoint(cfg));
    const Network& net = lc.net;

    std::vector<std::string> outputs;
    for (const auto& path : image_paths) {
        const FeatureImage img = load_feature_image(path);
        if (img.height != net.input_h || img.width != net.input_w) {
            log << "note: resizing " << path << " to " << net.input_h << "x" << net.input_w << "\n";
        }
        int cls = class_index;
        if (cls < 0) {
            const Tensor x = image_to_input(net, img, cfg.net.alpha_mode);
            const ForwardPass fp = forward(net, x, NetMode::Infer, cfg.net.threads);
            cls = 0;
            for (int k = 1; k < net.n_classes; ++k) {
                if (fp.probs.at(0, 0, 0, k) > fp.probs.at(0, 0, 0, cls)) cls = k;
            }
        }
        const GradCamMap map = explain(net, img, cls, cfg.net.alpha_mode, cfg.net.threads);
        const FeatureImage blended = overlay(map, img, 0.5, cfg.net.alpha_mode);

        std::string base = path;
        if (base.size() > 4 && base.substr(base.size() - 4) == ".png") {
            base = base.substr(0, base.size() - 4);
        }
        const std::string out_path = base + ".gradcam.png";
        save_feature_image(out_path, blended);
        if (raw_csv) save_gradcam_csv(base + ".gradcam.csv", map);
        outputs.push_back(out_path);
        log << "explained: " << path << " -> " << out_path << " (class " << cls << ")\n";
    }
    return outputs;
}

enum class EvalSplit { Validation, Train, All };

struct EvaluateOutcome {
    EvalReport report;
    std::string report_dir;
    std::size_t n_evaluated = 0;
};

// Boosted predictions on the chosen split, full metric suite, report files.
inline EvaluateOutcome run_evaluate(const RunConfig& cfg, EvalSplit which, bool force,
                                    std::ostream& log) {
    const std::string hash = config_hash(cfg);
    const LoadedCheckpoint lc = load_checkpoint(paths::checkpoint(cfg));
    if (lc.config_hash != hash && !force) {
        throw DataError("checkpoint was trained with config " + lc.config_hash +
                        ", current config is " + hash + "; pass --force to evaluate anyway");
    }
    const GbdtModel model = load_gbdt(paths::gbdt_model(cfg));
    const FeaturesMeta meta = load_features_meta(paths::features_meta(cfg));
    if (meta.config_hash != hash && !force) {
        throw DataError("features hash mismatch; re-run featurize or pass --force");
    }
    const std::vector<LabeledImage> images = load_feature_images(cfg, meta);

    std::vector<Label> labels;
    for (const auto& li : images) labels.push_back(li.label);
    std::vector<std::size_t> train_idx, val_idx;
    stratified_split(images.size(), labels, cfg.split.train_fraction, cfg.split.seed, train_idx,
                     val_idx);
    std::vector<std::size_t> chosen;
    switch (which) {
        case EvalSplit::Validation: chosen = val_idx; break;
        case EvalSplit::Train: chosen = train_idx; break;
        case EvalSplit::All:
            chosen = train_idx;
            chosen.insert(chosen.end(), val_idx.begin(), val_idx.end());
            std::sort(chosen.begin(), chosen.end());
            break;
    }

    std::vector<Label> preds, truths;
    std::vector<double> pd_scores, hc_scores;
    for (std::size_t i : chosen) {
        const BoostedPrediction p =
            predict_boosted(lc.net, model, images[i].image, 0.5, cfg.net.alpha_mode, cfg.net.threads);
        preds.push_back(p.label);
        truths.push_back(images[i].label);
        pd_scores.push_back(p.probability);
        hc_scores.push_back(1.0 - p.probability);
    }

    std::map<std::string, RocCurve> roc;
    roc["PD"] = roc_curve(pd_scores, truths, Label::PD);
    roc["HC"] = roc_curve(hc_scores, truths, Label::HC);

    EvaluateOutcome out;
    out.report = make_report(confusion(preds, truths), roc, hash);
    out.n_evaluated = chosen.size();
    out.report_dir = paths::report_dir(cfg);
    const TrainingCurves curves = read_history_csv(paths::history(cfg));
    emit_report(out.report, out.report_dir, pd_scores, truths, curves);
    log << "evaluated " << out.n_evaluated << " samples: accuracy "
        << format_double(out.report.scalars.accuracy) << ", AUC(PD) "
        << format_double(out.report.auc_per_class.at("PD")) << ", AUC(HC) "
        << format_double(out.report.auc_per_class.at("HC")) << "\n";
    return out;
}

}  // namespace custnetgc
