#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tdflow/accel.hpp"
#include "tdflow/network.hpp"

namespace tdflow {

// ---- features ----------------------------------------------------------------

// Fixed-length design descriptor: six entries per weighted layer followed by
// four global aggregates.
struct feature_layout {
    std::vector<index_t> layer_ids;  // weighted layers in network order

    static constexpr index_t per_layer = 6;
    index_t size() const { return static_cast<index_t>(layer_ids.size()) * per_layer + 4; }
    index_t total_macs_index() const { return static_cast<index_t>(layer_ids.size()) * per_layer; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (index_t id : layer_ids) {
            const std::string p = "l" + std::to_string(id) + "_";
            for (const char* f : {"t", "g1", "g2", "r", "macs", "words"}) out.push_back(p + f);
        }
        out.insert(out.end(), {"total_macs", "total_words", "max_layer_macs", "cpd_layers"});
        return out;
    }
};

inline feature_layout make_feature_layout(const network_spec& net) {
    feature_layout fl;
    for (const auto& l : net.layers)
        if (is_decomposable(l.kind)) fl.layer_ids.push_back(l.id);
    return fl;
}

inline std::vector<double> extract_features(const network_spec& net, const td_map& td,
                                            const feature_layout& fl) {
    std::vector<double> x;
    x.reserve(static_cast<std::size_t>(fl.size()));
    double total_macs = 0, total_words = 0, max_macs = 0, cpd_layers = 0;
    for (index_t id : fl.layer_ids) {
        const layer_spec& l = net.layer_by_id(id);
        auto it = td.find(id);
        if (it == td.end()) throw config_error("extract_features: td config missing for layer " + std::to_string(id));
        const td_config& cfg = it->second;
        const double macs = static_cast<double>(decomposed_macs(l, net.geometry_of(id), cfg));
        const double words = static_cast<double>(param_count(cfg, l.weight_shape()));
        x.push_back(cfg.format == td_format::cpd ? 1.0 : 0.0);
        x.push_back(static_cast<double>(cfg.g1));
        x.push_back(static_cast<double>(cfg.g2));
        x.push_back(static_cast<double>(cfg.r));
        x.push_back(macs);
        x.push_back(words);
        total_macs += macs;
        total_words += words;
        max_macs = std::max(max_macs, macs);
        if (cfg.format == td_format::cpd) cpd_layers += 1.0;
    }
    x.push_back(total_macs);
    x.push_back(total_words);
    x.push_back(max_macs);
    x.push_back(cpd_layers);
    return x;
}

// ---- random forest -------------------------------------------------------------

struct rf_hyperparams {
    index_t trees = 100;
    index_t max_depth = 12;
    index_t min_samples_leaf = 2;
    double feature_fraction = 1.0 / 3.0;
    bool bootstrap = true;
    std::uint64_t seed = 1;
};

struct rf_node {
    index_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0;  // leaf mean (log-space target)
    index_t left = -1, right = -1;
};

struct rf_tree {
    std::vector<rf_node> nodes;

    double predict(std::span<const double> x) const {
        index_t n = 0;
        while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
            const rf_node& nd = nodes[static_cast<std::size_t>(n)];
            n = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(n)].value;
    }
};

// Random-forest regressor over log(fps); predictions are exponentiated back
// to linear fps so they always lie inside the training target range.
struct random_forest {
    rf_hyperparams hp;
    index_t feature_count = 0;
    std::vector<rf_tree> trees;

    double predict(std::span<const double> x) const {
        if (static_cast<index_t>(x.size()) != feature_count)
            throw shape_error("random_forest: feature length mismatch");
        double acc = 0.0;
        for (const auto& t : trees) acc += t.predict(x);
        return std::exp(acc / static_cast<double>(trees.size()));
    }
};

using rf_dataset = std::vector<std::pair<std::vector<double>, double>>;  // features -> fps

namespace detail {

struct tree_builder {
    const std::vector<std::vector<double>>& x;
    const std::vector<double>& y;  // log targets
    const rf_hyperparams& hp;
    rng& gen;
    index_t feature_count;
    std::vector<rf_node> nodes;

    index_t build(std::vector<index_t> rows, index_t depth) {
        const index_t me = static_cast<index_t>(nodes.size());
        nodes.push_back({});

        double sum = 0.0, sq = 0.0;
        for (index_t r : rows) {
            sum += y[static_cast<std::size_t>(r)];
            sq += y[static_cast<std::size_t>(r)] * y[static_cast<std::size_t>(r)];
        }
        const double n = static_cast<double>(rows.size());
        const double mean = sum / n;
        const double sse = sq - sum * sum / n;

        nodes[static_cast<std::size_t>(me)].value = mean;
        if (depth >= hp.max_depth || static_cast<index_t>(rows.size()) < 2 * hp.min_samples_leaf || sse <= 1e-12)
            return me;

        // random feature subset, deterministic partial Fisher-Yates
        index_t take = std::max<index_t>(1, static_cast<index_t>(std::ceil(hp.feature_fraction * static_cast<double>(feature_count))));
        std::vector<index_t> feats(static_cast<std::size_t>(feature_count));
        std::iota(feats.begin(), feats.end(), index_t{0});
        for (index_t i = 0; i < take; ++i) {
            const index_t j = i + gen.below(feature_count - i);
            std::swap(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(j)]);
        }
        feats.resize(static_cast<std::size_t>(take));
        std::sort(feats.begin(), feats.end());  // canonical evaluation order

        double best_gain = 0.0;
        index_t best_feat = -1;
        double best_thr = 0.0;
        std::vector<std::pair<double, double>> vals(rows.size());
        for (index_t f : feats) {
            for (std::size_t i = 0; i < rows.size(); ++i)
                vals[i] = {x[static_cast<std::size_t>(rows[i])][static_cast<std::size_t>(f)],
                           y[static_cast<std::size_t>(rows[i])]};
            std::sort(vals.begin(), vals.end());
            double lsum = 0.0, lsq = 0.0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                lsum += vals[i].second;
                lsq += vals[i].second * vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const index_t ln = static_cast<index_t>(i) + 1;
                const index_t rn = static_cast<index_t>(rows.size()) - ln;
                if (ln < hp.min_samples_leaf || rn < hp.min_samples_leaf) continue;
                const double rsum = sum - lsum, rsq = sq - lsq;
                const double lsse = lsq - lsum * lsum / static_cast<double>(ln);
                const double rsse = rsq - rsum * rsum / static_cast<double>(rn);
                const double gain = sse - lsse - rsse;
                if (gain > best_gain + 1e-15) {
                    best_gain = gain;
                    best_feat = f;
                    best_thr = 0.5 * (vals[i].first + vals[i + 1].first);
                }
            }
        }
        if (best_feat < 0) return me;

        std::vector<index_t> left, right;
        for (index_t r : rows)
            (x[static_cast<std::size_t>(r)][static_cast<std::size_t>(best_feat)] <= best_thr ? left : right).push_back(r);
        if (left.empty() || right.empty()) return me;

        nodes[static_cast<std::size_t>(me)].feature = best_feat;
        nodes[static_cast<std::size_t>(me)].threshold = best_thr;
        const index_t l = build(std::move(left), depth + 1);
        nodes[static_cast<std::size_t>(me)].left = l;
        const index_t r2 = build(std::move(right), depth + 1);
        nodes[static_cast<std::size_t>(me)].right = r2;
        return me;
    }
};

}  // namespace detail

inline random_forest fit_forest(const rf_dataset& dataset, const rf_hyperparams& hp) {
    if (dataset.empty()) throw config_error("fit_forest: empty dataset");
    if (static_cast<index_t>(dataset.size()) < 2 * hp.min_samples_leaf)
        throw config_error("fit_forest: dataset smaller than 2 x min_samples_leaf");
    const index_t n = static_cast<index_t>(dataset.size());
    const index_t fcount = static_cast<index_t>(dataset[0].first.size());

    std::vector<std::vector<double>> x(dataset.size());
    std::vector<double> y(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        x[i] = dataset[i].first;
        if (static_cast<index_t>(x[i].size()) != fcount) throw shape_error("fit_forest: ragged feature rows");
        if (!(dataset[i].second > 0.0)) throw config_error("fit_forest: fps targets must be positive");
        y[i] = std::log(dataset[i].second);
    }

    random_forest forest;
    forest.hp = hp;
    forest.feature_count = fcount;
    forest.trees.reserve(static_cast<std::size_t>(hp.trees));
    for (index_t t = 0; t < hp.trees; ++t) {
        rng gen(derive_seed(hp.seed, static_cast<std::uint64_t>(t), 0xf0));
        std::vector<index_t> rows(static_cast<std::size_t>(n));
        if (hp.bootstrap) {
            for (auto& r : rows) r = gen.below(n);
        } else {
            std::iota(rows.begin(), rows.end(), index_t{0});
        }
        detail::tree_builder tb{x, y, hp, gen, fcount, {}};
        tb.build(std::move(rows), 0);
        forest.trees.push_back(rf_tree{std::move(tb.nodes)});
    }
    return forest;
}

struct holdout_metrics {
    double mae = 0.0;              // linear fps
    double median_rel_err = 0.0;   // |pred-true| / true
    double r2 = 0.0;
    index_t train_rows = 0, test_rows = 0;
};

inline holdout_metrics holdout_report(const rf_dataset& dataset, const rf_hyperparams& hp,
                                      double test_fraction, std::uint64_t seed) {
    if (dataset.size() < 20) throw config_error("holdout_report: need at least 20 rows");
    std::vector<index_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), index_t{0});
    rng gen(derive_seed(seed, 0x5b17));
    for (std::size_t i = idx.size(); i-- > 1;) {
        const index_t j = gen.below(static_cast<index_t>(i) + 1);
        std::swap(idx[i], idx[static_cast<std::size_t>(j)]);
    }
    const std::size_t ntest = std::max<std::size_t>(1, static_cast<std::size_t>(test_fraction * static_cast<double>(dataset.size())));
    rf_dataset train, test;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < ntest ? test : train).push_back(dataset[static_cast<std::size_t>(idx[i])]);

    const random_forest forest = fit_forest(train, hp);

    holdout_metrics m;
    m.train_rows = static_cast<index_t>(train.size());
    m.test_rows = static_cast<index_t>(test.size());
    std::vector<double> rel;
    double se = 0.0, abs_sum = 0.0, mean_t = 0.0;
    for (const auto& [xv, t] : test) mean_t += t;
    mean_t /= static_cast<double>(test.size());
    double sst = 0.0;
    for (const auto& [xv, t] : test) {
        const double p = forest.predict(xv);
        abs_sum += std::abs(p - t);
        se += (p - t) * (p - t);
        sst += (t - mean_t) * (t - mean_t);
        rel.push_back(std::abs(p - t) / t);
    }
    std::sort(rel.begin(), rel.end());
    m.mae = abs_sum / static_cast<double>(test.size());
    m.median_rel_err = rel[rel.size() / 2];
    m.r2 = sst > 0.0 ? 1.0 - se / sst : (se == 0.0 ? 1.0 : 0.0);
    return m;
}

// Baseline predictor for the ablation: fps proportional to 1/MACs, scaled to
// the calibration set by the median of fps * macs.
struct mac_baseline {
    double scale = 0.0;
    index_t macs_feature = 0;

    static mac_baseline calibrate(const rf_dataset& dataset, index_t total_macs_index) {
        if (dataset.empty()) throw config_error("mac_baseline: empty dataset");
        std::vector<double> prods;
        prods.reserve(dataset.size());
        for (const auto& [x, fps] : dataset)
            prods.push_back(fps * x[static_cast<std::size_t>(total_macs_index)]);
        std::sort(prods.begin(), prods.end());
        return {prods[prods.size() / 2], total_macs_index};
    }

    double predict(std::span<const double> x) const {
        const double macs = x[static_cast<std::size_t>(macs_feature)];
        return macs > 0.0 ? scale / macs : 0.0;
    }
};

}  // namespace tdflow
