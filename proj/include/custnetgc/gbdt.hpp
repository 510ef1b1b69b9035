#pragma once

// Gradient-boosted regression trees with logistic loss: the refinement stage
// that turns network embeddings into the final prediction. Exact greedy
// splits over sorted feature values, Newton leaf values, and a damping
// safeguard that makes the training log-loss non-increasing by construction.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "custnetgc/common.hpp"
#include "custnetgc/gradcam.hpp"
#include "custnetgc/net.hpp"

namespace custnetgc {

struct EmbeddingRow {
    std::string source_id;
    std::vector<double> features;  // pooled features ++ class probabilities
    Label label = Label::Unknown;
};

// Per image: captured global-average-pool vector concatenated with the two
// softmax probabilities (HC, PD order).
inline std::vector<EmbeddingRow> extract_embeddings(const Network& net,
                                                    const std::vector<LabeledImage>& images,
                                                    AlphaMode alpha_mode = AlphaMode::AsPrinted,
                                                    int threads = 1) {
    if (net.feature_layer < 0) throw DataError("extract_embeddings: network lacks a feature layer");
    std::vector<EmbeddingRow> rows;
    rows.reserve(images.size());
    for (const auto& li : images) {
        const Tensor x = image_to_input(net, li.image, alpha_mode);
        ForwardPass fp = forward(net, x, NetMode::Infer, threads);
        const Tensor& feats = fp.outs[static_cast<std::size_t>(net.feature_layer)];
        EmbeddingRow row;
        row.source_id = li.id;
        row.label = li.label;
        row.features = feats.data;
        for (int k = 0; k < net.n_classes; ++k) row.features.push_back(fp.probs.at(0, 0, 0, k));
        check_finite(row.features, "embedding");
        rows.push_back(std::move(row));
    }
    return rows;
}

struct GbdtParams {
    int n_rounds = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    int min_samples_leaf = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_rounds < 1) throw DataError("gbdt: n_rounds must be >= 1");
        if (max_depth < 1) throw DataError("gbdt: max_depth must be >= 1");
        if (learning_rate < 0) throw DataError("gbdt: learning_rate must be >= 0");
        if (min_samples_leaf < 1) throw DataError("gbdt: min_samples_leaf must be >= 1");
    }
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root

    double predict(const std::vector<double>& x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& nd = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

struct GbdtModel {
    std::vector<Tree> trees;
    double learning_rate = 0.1;
    double base_score = 0.0;  // log-odds
    int n_rounds = 0;
    int feature_length = 0;
    std::string net_hash;                 // network the embeddings came from
    std::string config_hash;              // run configuration stamp
    std::vector<double> train_logloss;    // per round, including round 0 (base)

    double raw_score(const std::vector<double>& x) const {
        double f = base_score;
        for (const auto& t : trees) f += learning_rate * t.predict(x);
        return f;
    }

    double predict_probability(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != feature_length) {
            throw DataError("gbdt predict: feature length " + std::to_string(x.size()) +
                            " != model feature length " + std::to_string(feature_length));
        }
        return 1.0 / (1.0 + std::exp(-raw_score(x)));
    }
};

namespace detail {

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

inline double subset_logloss(const std::vector<double>& y, const std::vector<double>& f) {
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        // -[y log p + (1-y) log(1-p)] written on the raw score for stability
        const double margin = y[i] > 0.5 ? f[i] : -f[i];
        loss += margin > -700.0 ? std::log1p(std::exp(-margin)) : -margin;
    }
    return loss / static_cast<double>(y.size());
}

}  // namespace detail

// Fits n_rounds depth-limited regression trees to the negative gradient of
// the log-loss (residual y - p). Leaf values are per-leaf Newton steps
// (sum residual / sum p(1-p)); if a round would increase the training
// log-loss its contribution is halved up to a few times and dropped as a
// last resort, so the recorded loss never increases.
inline GbdtModel gbdt_train(const std::vector<EmbeddingRow>& rows, const GbdtParams& params) {
    params.validate();
    if (rows.size() < 2) throw DataError("gbdt_train: need at least 2 rows");
    const std::size_t n = rows.size();
    const std::size_t dim = rows[0].features.size();
    std::size_t n_pos = 0;
    for (const auto& r : rows) {
        if (r.features.size() != dim) throw DataError("gbdt_train: ragged feature rows");
        if (r.label == Label::PD) ++n_pos;
    }
    if (n_pos == 0 || n_pos == n) throw DataError("gbdt_train: both classes must be present");

    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = rows[i].label == Label::PD ? 1.0 : 0.0;

    GbdtModel model;
    model.learning_rate = params.learning_rate;
    model.n_rounds = params.n_rounds;
    model.feature_length = static_cast<int>(dim);
    const double prior = std::clamp(static_cast<double>(n_pos) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    model.base_score = std::log(prior / (1.0 - prior));

    std::vector<double> f(n, model.base_score);
    model.train_logloss.push_back(detail::subset_logloss(y, f));

    // presorted row order per feature; reused by every node
    std::vector<std::vector<std::size_t>> sorted(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        sorted[d].resize(n);
        for (std::size_t i = 0; i < n; ++i) sorted[d][i] = i;
        std::stable_sort(sorted[d].begin(), sorted[d].end(), [&](std::size_t a, std::size_t b) {
            return rows[a].features[d] < rows[b].features[d];
        });
    }

    std::vector<double> residual(n), hess(n);
    std::vector<char> in_node(n);

    for (int round = 0; round < params.n_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-f[i]));
            residual[i] = y[i] - p;
            hess[i] = std::max(p * (1.0 - p), 1e-12);
        }

        Tree tree;
        struct Pending {
            std::vector<std::size_t> members;
            int depth = 0;
            int node = 0;
        };
        std::vector<Pending> stack;
        {
            Pending root;
            root.members.resize(n);
            for (std::size_t i = 0; i < n; ++i) root.members[i] = i;
            tree.nodes.push_back(TreeNode{});
            stack.push_back(std::move(root));
        }

        while (!stack.empty()) {
            Pending cur = std::move(stack.back());
            stack.pop_back();

            double g_sum = 0.0, h_sum = 0.0;
            for (std::size_t i : cur.members) {
                g_sum += residual[i];
                h_sum += hess[i];
            }
            tree.nodes[static_cast<std::size_t>(cur.node)].value = g_sum / h_sum;

            if (cur.depth >= params.max_depth ||
                cur.members.size() < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
                continue;
            }

            std::fill(in_node.begin(), in_node.end(), 0);
            for (std::size_t i : cur.members) in_node[i] = 1;

            // exact greedy on squared-error reduction of the residual; ties
            // keep the lowest feature index, then the lowest threshold
            detail::SplitChoice best;
            const double parent_sum = g_sum;
            const auto n_node = static_cast<double>(cur.members.size());
            const auto msl = static_cast<std::size_t>(params.min_samples_leaf);
            for (std::size_t d = 0; d < dim; ++d) {
                double left_sum = 0.0;
                std::size_t left_cnt = 0;
                double prev_val = 0.0;
                bool has_prev = false;
                for (std::size_t i : sorted[d]) {
                    if (!in_node[i]) continue;
                    const double v = rows[i].features[d];
                    // candidate boundary between the previous in-node value and v
                    if (has_prev && prev_val < v && left_cnt >= msl &&
                        cur.members.size() - left_cnt >= msl) {
                        const auto lc = static_cast<double>(left_cnt);
                        const double rc = n_node - lc;
                        const double right_sum = parent_sum - left_sum;
                        const double gain = left_sum * left_sum / lc + right_sum * right_sum / rc -
                                            parent_sum * parent_sum / n_node;
                        if (gain > best.gain + 1e-15) {
                            best.gain = gain;
                            best.feature = static_cast<int>(d);
                            best.threshold = 0.5 * (prev_val + v);
                        }
                    }
                    left_sum += residual[i];
                    ++left_cnt;
                    prev_val = v;
                    has_prev = true;
                }
            }
            if (best.feature < 0) continue;  // no admissible split: stays a leaf

            Pending left, right;
            left.depth = right.depth = cur.depth + 1;
            for (std::size_t i : cur.members) {
                (rows[i].features[static_cast<std::size_t>(best.feature)] <= best.threshold
                     ? left.members
                     : right.members)
                    .push_back(i);
            }
            // children are pushed before touching the parent: push_back may
            // reallocate the node vector
            const int left_idx = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(TreeNode{});
            const int right_idx = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(TreeNode{});
            TreeNode& parent = tree.nodes[static_cast<std::size_t>(cur.node)];
            parent.feature = best.feature;
            parent.threshold = best.threshold;
            parent.left = left_idx;
            parent.right = right_idx;
            left.node = left_idx;
            right.node = right_idx;
            stack.push_back(std::move(right));
            stack.push_back(std::move(left));
        }

        // damping safeguard: never let the recorded training loss increase
        std::vector<double> contrib(n);
        for (std::size_t i = 0; i < n; ++i) contrib[i] = tree.predict(rows[i].features);
        const double prev_loss = model.train_logloss.back();
        double scale = 1.0;
        std::vector<double> f_next(n);
        double new_loss = prev_loss;
        bool accepted = false;
        for (int attempt = 0; attempt < 8; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) {
                f_next[i] = f[i] + params.learning_rate * scale * contrib[i];
            }
            new_loss = detail::subset_logloss(y, f_next);
            if (new_loss <= prev_loss) {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) {
            for (auto& nd : tree.nodes) {
                nd.value = 0.0;
                nd.feature = -1;
                nd.left = nd.right = -1;
            }
            tree.nodes.resize(1);
            f_next = f;
            new_loss = prev_loss;
        } else if (scale != 1.0) {
            for (auto& nd : tree.nodes) nd.value *= scale;
        }

        f = std::move(f_next);
        model.trees.push_back(std::move(tree));
        model.train_logloss.push_back(new_loss);
    }

    for (std::size_t r = 1; r < model.train_logloss.size(); ++r) {
        if (model.train_logloss[r] > model.train_logloss[r - 1]) {
            throw NumericError("gbdt_train: log-loss increased at round " + std::to_string(r));
        }
    }
    return model;
}

struct BoostedPrediction {
    Label label = Label::Unknown;
    double probability = 0.0;  // P(PD)
};

// Final pipeline prediction: network embedding -> boosted probability.
// Probability >= threshold maps to PD (ties included).
inline BoostedPrediction predict_boosted(const Network& net, const GbdtModel& model,
                                         const FeatureImage& img, double threshold = 0.5,
                                         AlphaMode alpha_mode = AlphaMode::AsPrinted,
                                         int threads = 1) {
    if (!model.net_hash.empty()) {
        const std::string h = network_hash(net);
        if (h != model.net_hash) {
            throw DataError("predict_boosted: model was trained against a different network (" +
                            model.net_hash + " != " + h + ")");
        }
    }
    const Tensor x = image_to_input(net, img, alpha_mode);
    ForwardPass fp = forward(net, x, NetMode::Infer, threads);
    std::vector<double> feats = fp.outs[static_cast<std::size_t>(net.feature_layer)].data;
    for (int k = 0; k < net.n_classes; ++k) feats.push_back(fp.probs.at(0, 0, 0, k));

    BoostedPrediction pred;
    pred.probability = model.predict_probability(feats);
    pred.label = pred.probability >= threshold ? Label::PD : Label::HC;
    return pred;
}

// ---------- JSON persistence ----------

namespace detail {

// Trees are persisted as nested split/leaf objects.
inline nlohmann::json node_to_json(const Tree& t, int idx) {
    const TreeNode& nd = t.nodes[static_cast<std::size_t>(idx)];
    if (nd.feature < 0) {
        return {{"value", nd.value}};
    }
    return {{"feature", nd.feature},
            {"threshold", nd.threshold},
            {"left", node_to_json(t, nd.left)},
            {"right", node_to_json(t, nd.right)}};
}

inline int node_from_json(const nlohmann::json& nj, Tree& t) {
    const int idx = static_cast<int>(t.nodes.size());
    t.nodes.push_back(TreeNode{});
    if (nj.contains("feature")) {
        t.nodes[static_cast<std::size_t>(idx)].feature = nj.at("feature").get<int>();
        t.nodes[static_cast<std::size_t>(idx)].threshold = nj.at("threshold").get<double>();
        const int left = node_from_json(nj.at("left"), t);
        const int right = node_from_json(nj.at("right"), t);
        t.nodes[static_cast<std::size_t>(idx)].left = left;
        t.nodes[static_cast<std::size_t>(idx)].right = right;
    } else {
        t.nodes[static_cast<std::size_t>(idx)].value = nj.at("value").get<double>();
    }
    return idx;
}

}  // namespace detail

inline nlohmann::json gbdt_to_json(const GbdtModel& model) {
    nlohmann::json j;
    j["schema"] = "custnetgc-gbdt/1";
    j["learning_rate"] = model.learning_rate;
    j["base_score"] = model.base_score;
    j["n_rounds"] = model.n_rounds;
    j["feature_length"] = model.feature_length;
    j["net_hash"] = model.net_hash;
    j["config_hash"] = model.config_hash;
    j["train_logloss"] = model.train_logloss;
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : model.trees) trees.push_back(detail::node_to_json(t, 0));
    j["trees"] = std::move(trees);
    return j;
}

inline GbdtModel gbdt_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != "custnetgc-gbdt/1") {
        throw DataError("gbdt model: unknown schema");
    }
    GbdtModel model;
    model.learning_rate = j.at("learning_rate").get<double>();
    model.base_score = j.at("base_score").get<double>();
    model.n_rounds = j.at("n_rounds").get<int>();
    model.feature_length = j.at("feature_length").get<int>();
    model.net_hash = j.at("net_hash").get<std::string>();
    model.config_hash = j.value("config_hash", std::string());
    model.train_logloss = j.at("train_logloss").get<std::vector<double>>();
    for (const auto& tj : j.at("trees")) {
        Tree t;
        detail::node_from_json(tj, t);
        model.trees.push_back(std::move(t));
    }
    return model;
}

inline void save_gbdt(const std::string& path, const GbdtModel& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << gbdt_to_json(model).dump(2) << '\n';
}

inline GbdtModel load_gbdt(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open gbdt model: " + path);
    nlohmann::json j;
    f >> j;
    return gbdt_from_json(j);
}

}  // namespace custnetgc
