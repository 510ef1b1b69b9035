#pragma once

// Binary-classification evaluation: confusion matrix, scalar metrics with an
// explicit zero-denominator rule, ROC curves with trapezoidal AUC, threshold
// sweeps, and deterministic report emission (JSON + CSV + SVG).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "custnetgc/audio.hpp"
#include "custnetgc/common.hpp"

namespace custnetgc {

struct ConfusionMatrix {
    long long tp = 0, tn = 0, fp = 0, fn = 0;

    long long total() const { return tp + tn + fp + fn; }
};

// PD is the positive class.
inline ConfusionMatrix confusion(const std::vector<Label>& preds,
                                 const std::vector<Label>& truths) {
    if (preds.size() != truths.size()) throw DataError("confusion: length mismatch");
    if (preds.empty()) throw DataError("confusion: empty input");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool pred_pd = preds[i] == Label::PD;
        const bool true_pd = truths[i] == Label::PD;
        if (pred_pd && true_pd) ++m.tp;
        else if (!pred_pd && !true_pd) ++m.tn;
        else if (pred_pd && !true_pd) ++m.fp;
        else ++m.fn;
    }
    return m;
}

struct ScalarMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    double fpr = 0.0;
    // set when the corresponding denominator was zero and the metric was
    // forced to 0 by convention
    bool precision_zero_denom = false;
    bool recall_zero_denom = false;
    bool specificity_zero_denom = false;
    bool f1_zero_denom = false;
};

// accuracy = (TP+TN)/total; precision = TP/(TP+FP); recall = TP/(TP+FN);
// specificity = TN/(TN+FP); f1 = 2PR/(P+R); fpr = 1 - specificity. Zero
// denominators yield 0 with the matching flag set.
inline ScalarMetrics scalar_metrics(const ConfusionMatrix& m) {
    if (m.total() < 1) throw DataError("scalar_metrics: empty confusion matrix");
    ScalarMetrics s;
    s.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
    if (m.tp + m.fp > 0) {
        s.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    } else {
        s.precision_zero_denom = true;
    }
    if (m.tp + m.fn > 0) {
        s.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    } else {
        s.recall_zero_denom = true;
    }
    if (m.tn + m.fp > 0) {
        s.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
    } else {
        s.specificity_zero_denom = true;
    }
    if (s.precision + s.recall > 0) {
        s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    } else {
        s.f1_zero_denom = true;
    }
    s.fpr = 1.0 - s.specificity;
    return s;
}

struct RocCurve {
    std::vector<double> fpr;         // non-decreasing, starts 0 ends 1
    std::vector<double> tpr;         // non-decreasing, starts 0 ends 1
    std::vector<double> thresholds;  // +inf sentinel first, then descending scores

    std::size_t size() const { return fpr.size(); }
};

// One point per threshold in {+inf} ∪ unique scores (descending); a sample
// is predicted positive when score >= threshold.
inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<Label>& truths,
                          Label positive) {
    if (scores.size() != truths.size()) throw DataError("roc_curve: length mismatch");
    if (scores.empty()) throw DataError("roc_curve: empty input");
    long long pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DataError("roc_curve: non-finite score");
        (truths[i] == positive ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw DataError("roc_curve: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.thresholds.push_back(std::numeric_limits<double>::infinity());
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            (truths[order[i]] == positive ? tp : fp) += 1;
            ++i;
        }
        curve.thresholds.push_back(threshold);
        curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    return curve;
}

// Trapezoidal area under the curve: sum of (b1 + b2) * h / 2 over
// consecutive points.
inline double auc(const RocCurve& curve) {
    if (curve.size() < 2) throw DataError("auc: need at least 2 points");
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve.tpr[i - 1] + curve.tpr[i]) * (curve.fpr[i] - curve.fpr[i - 1]) / 2.0;
    }
    return area;
}

struct ThresholdRow {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline std::vector<ThresholdRow> threshold_sweep(const std::vector<double>& scores,
                                                 const std::vector<Label>& truths,
                                                 Label positive = Label::PD) {
    const RocCurve curve = roc_curve(scores, truths, positive);  // validates input
    std::vector<Label> binarized(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
        binarized[i] = truths[i] == positive ? Label::PD : Label::HC;
    }
    std::vector<ThresholdRow> rows;
    rows.reserve(curve.thresholds.size());
    std::vector<Label> preds(scores.size());
    for (double threshold : curve.thresholds) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            preds[i] = scores[i] >= threshold ? Label::PD : Label::HC;
        }
        const ScalarMetrics s = scalar_metrics(confusion(preds, binarized));
        rows.push_back({threshold, s.precision, s.recall, s.f1});
    }
    return rows;
}

// Comparison numbers published alongside a reference confusion matrix; kept
// verbatim in the report next to the values recomputed from the matrix.
struct SourceReported {
    double precision = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    ConfusionMatrix matrix;
    ScalarMetrics scalars;
    std::map<std::string, RocCurve> roc_per_class;  // keys "PD", "HC"
    std::map<std::string, double> auc_per_class;
    std::string config_hash;
    bool has_source_reported = false;
    SourceReported source_reported;
};

inline EvalReport make_report(const ConfusionMatrix& m,
                              const std::map<std::string, RocCurve>& roc,
                              const std::string& config_hash = "") {
    EvalReport r;
    r.matrix = m;
    r.scalars = scalar_metrics(m);
    r.roc_per_class = roc;
    for (const auto& [cls, curve] : roc) r.auc_per_class[cls] = auc(curve);
    r.config_hash = config_hash;
    return r;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["schema"] = "custnetgc-metrics/1";
    j["config_hash"] = r.config_hash;
    j["tp"] = r.matrix.tp;
    j["tn"] = r.matrix.tn;
    j["fp"] = r.matrix.fp;
    j["fn"] = r.matrix.fn;
    j["accuracy"] = r.scalars.accuracy;
    j["precision"] = r.scalars.precision;
    j["recall"] = r.scalars.recall;
    j["specificity"] = r.scalars.specificity;
    j["f1"] = r.scalars.f1;
    j["fpr"] = r.scalars.fpr;
    nlohmann::ordered_json aucs;
    for (const auto& [cls, a] : r.auc_per_class) aucs[cls] = a;
    j["auc"] = std::move(aucs);
    nlohmann::ordered_json flags = nlohmann::ordered_json::array();
    if (r.scalars.precision_zero_denom) flags.push_back("precision_zero_denominator");
    if (r.scalars.recall_zero_denom) flags.push_back("recall_zero_denominator");
    if (r.scalars.specificity_zero_denom) flags.push_back("specificity_zero_denominator");
    if (r.scalars.f1_zero_denom) flags.push_back("f1_zero_denominator");
    j["zero_denominator_flags"] = std::move(flags);
    if (r.has_source_reported) {
        j["source_reported"] = {
            {"precision", r.source_reported.precision},
            {"f1", r.source_reported.f1},
            {"note", "reported by source, inconsistent with its matrix"},
        };
    }
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.matrix.tp = j.at("tp").get<long long>();
    r.matrix.tn = j.at("tn").get<long long>();
    r.matrix.fp = j.at("fp").get<long long>();
    r.matrix.fn = j.at("fn").get<long long>();
    r.scalars.accuracy = j.at("accuracy").get<double>();
    r.scalars.precision = j.at("precision").get<double>();
    r.scalars.recall = j.at("recall").get<double>();
    r.scalars.specificity = j.at("specificity").get<double>();
    r.scalars.f1 = j.at("f1").get<double>();
    r.scalars.fpr = j.at("fpr").get<double>();
    for (const auto& [cls, a] : j.at("auc").items()) r.auc_per_class[cls] = a.get<double>();
    if (j.contains("source_reported")) {
        r.has_source_reported = true;
        r.source_reported.precision = j["source_reported"].at("precision").get<double>();
        r.source_reported.f1 = j["source_reported"].at("f1").get<double>();
    }
    return r;
}

// ---------- deterministic SVG plots ----------

namespace detail {

inline std::string svg_header(int w, int h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
           "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
           std::to_string(h) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string svg_polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                                double x0, double x1, double y0, double y1, int w, int h,
                                int margin, const std::string& color) {
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fx = x1 > x0 ? (xs[i] - x0) / (x1 - x0) : 0.0;
        const double fy = y1 > y0 ? (ys[i] - y0) / (y1 - y0) : 0.0;
        const double px = margin + fx * (w - 2 * margin);
        const double py = h - margin - fy * (h - 2 * margin);
        pts += format_double(std::round(px * 100.0) / 100.0) + "," +
               format_double(std::round(py * 100.0) / 100.0) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
}

inline std::string svg_axes(int w, int h, int margin, const std::string& title) {
    std::string s;
    s += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(h - margin) +
         "\" x2=\"" + std::to_string(w - margin) + "\" y2=\"" + std::to_string(h - margin) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(margin) +
         "\" x2=\"" + std::to_string(margin) + "\" y2=\"" + std::to_string(h - margin) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"14\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"12\">" + title + "</text>\n";
    return s;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw DataError("short write to " + path);
}

}  // namespace detail

struct TrainingCurves {
    std::vector<double> train_loss, train_acc, val_loss, val_acc;
    bool empty() const { return train_loss.empty(); }
};

// Writes metrics.json, roc.csv, threshold_sweep.csv and SVG plots into dir.
// All output is byte-deterministic for identical inputs.
inline void emit_report(const EvalReport& report, const std::string& dir,
                        const std::vector<double>& scores = {},
                        const std::vector<Label>& truths = {},
                        const TrainingCurves& curves = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw DataError("emit_report: cannot create directory " + dir);

    detail::write_text_file(dir + "/metrics.json", report_to_json(report).dump(2) + "\n");

    // every text artifact carries the run-config stamp
    const std::string csv_stamp = "# config_hash=" + report.config_hash + "\n";
    const std::string svg_stamp = "<!-- config_hash=" + report.config_hash + " -->\n";

    // roc.csv: one block per class
    {
        std::string csv = csv_stamp + "class,threshold,fpr,tpr\n";
        for (const auto& [cls, curve] : report.roc_per_class) {
            for (std::size_t i = 0; i < curve.size(); ++i) {
                csv += cls + "," + format_double(curve.thresholds[i]) + "," +
                       format_double(curve.fpr[i]) + "," + format_double(curve.tpr[i]) + "\n";
            }
        }
        detail::write_text_file(dir + "/roc.csv", csv);
    }

    if (!scores.empty()) {
        std::string csv = csv_stamp + "threshold,precision,recall,f1\n";
        for (const auto& row : threshold_sweep(scores, truths, Label::PD)) {
            csv += format_double(row.threshold) + "," + format_double(row.precision) + "," +
                   format_double(row.recall) + "," + format_double(row.f1) + "\n";
        }
        detail::write_text_file(dir + "/threshold_sweep.csv", csv);
    }

    // plots
    const int W = 480, H = 360, M = 32;
    {
        std::string svg = detail::svg_header(W, H) + svg_stamp + detail::svg_axes(W, H, M, "ROC");
        const std::vector<std::string> colors = {"#1f3b7f", "#b03a2e", "#1e8449"};
        std::size_t ci = 0;
        for (const auto& [cls, curve] : report.roc_per_class) {
            svg += detail::svg_polyline(curve.fpr, curve.tpr, 0, 1, 0, 1, W, H, M,
                                        colors[ci % colors.size()]);
            ++ci;
        }
        svg += detail::svg_polyline({0, 1}, {0, 1}, 0, 1, 0, 1, W, H, M, "#999999");
        svg += "</svg>\n";
        detail::write_text_file(dir + "/roc.svg", svg);
    }
    if (!scores.empty()) {
        const auto rows = threshold_sweep(scores, truths, Label::PD);
        std::vector<double> xs, ys;
        for (const auto& r : rows) {
            if (!std::isfinite(r.threshold)) continue;
            xs.push_back(r.threshold);
            ys.push_back(r.precision);
        }
        std::string svg = detail::svg_header(W, H) + svg_stamp +
                          detail::svg_axes(W, H, M, "Precision vs. threshold");
        if (!xs.empty()) {
            const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
            svg += detail::svg_polyline(xs, ys, *mn, *mx, 0, 1, W, H, M, "#1f3b7f");
        }
        svg += "</svg>\n";
        detail::write_text_file(dir + "/precision_threshold.svg", svg);
    }
    if (!curves.empty()) {
        std::vector<double> epochs(curves.train_loss.size());
        for (std::size_t i = 0; i < epochs.size(); ++i) epochs[i] = static_cast<double>(i + 1);
        double loss_max = 0.0;
        for (double v : curves.train_loss) loss_max = std::max(loss_max, v);
        for (double v : curves.val_loss) loss_max = std::max(loss_max, v);
        std::string svg = detail::svg_header(W, H) + svg_stamp +
                          detail::svg_axes(W, H, M, "Training curves (loss solid, accuracy dotted)");
        svg += detail::svg_polyline(epochs, curves.train_loss, 1, static_cast<double>(epochs.size()),
                                    0, loss_max, W, H, M, "#1f3b7f");
        svg += detail::svg_polyline(epochs, curves.val_loss, 1, static_cast<double>(epochs.size()),
                                    0, loss_max, W, H, M, "#b03a2e");
        svg += detail::svg_polyline(epochs, curves.train_acc, 1, static_cast<double>(epochs.size()),
                                    0, 1, W, H, M, "#7f9fdf");
        svg += detail::svg_polyline(epochs, curves.val_acc, 1, static_cast<double>(epochs.size()),
                                    0, 1, W, H, M, "#df9f7f");
        svg += "</svg>\n";
        detail::write_text_file(dir + "/training_curves.svg", svg);
    }
}

}  // namespace custnetgc
