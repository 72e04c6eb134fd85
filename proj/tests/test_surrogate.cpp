#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tdflow/dse.hpp"
#include "tdflow/model_io.hpp"
#include "tdflow/surrogate.hpp"
#include "tdflow/zoo.hpp"

#include <filesystem>

using namespace tdflow;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Second, independent traversal used to cross-check rf_tree::predict.
double walk_tree(const rf_tree& t, std::span<const double> x) {
    std::size_t n = 0;
    while (true) {
        const rf_node& nd = t.nodes[n];
        if (nd.feature < 0) return nd.value;
        n = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right);
    }
}

rf_dataset synthetic_step_data(index_t rows, std::uint64_t seed) {
    // piecewise-constant target on feature 0: fps = 100 for x<0.5, 200 above
    rng gen(seed);
    rf_dataset ds;
    for (index_t i = 0; i < rows; ++i) {
        std::vector<double> x{gen.real(), gen.real(), gen.real()};
        const double fps = x[0] < 0.5 ? 100.0 : 200.0;
        ds.emplace_back(std::move(x), fps);
    }
    return ds;
}

}  // namespace

TEST_CASE("extract_features", "[surrogate]") {
    network_spec net = zoo::tiny_cnn();
    const feature_layout fl = make_feature_layout(net);
    td_map td{{0, {td_format::svd, 1, 1, 2}}, {1, {td_format::cpd, 2, 2, 3}}, {2, {td_format::svd, 1, 1, 1}}};

    SECTION("deterministic") {
        REQUIRE(extract_features(net, td, fl) == extract_features(net, td, fl));
    }
    SECTION("layout length and names") {
        REQUIRE(fl.size() == 3 * 6 + 4);
        REQUIRE(fl.names().size() == static_cast<std::size_t>(fl.size()));
        REQUIRE(fl.names()[static_cast<std::size_t>(fl.total_macs_index())] == "total_macs");
    }
    SECTION("raising a rank strictly raises that layer's MAC feature") {
        auto x1 = extract_features(net, td, fl);
        td[0].r = 4;
        auto x2 = extract_features(net, td, fl);
        REQUIRE(x2[4] > x1[4]);  // layer 0 macs feature
    }
    SECTION("feature MAC totals agree with the counting ops") {
        const auto x = extract_features(net, td, fl);
        const double total = x[static_cast<std::size_t>(fl.total_macs_index())];
        REQUIRE_THAT(total, WithinRel(static_cast<double>(count_bitops(net, &td, 8, 8)) / (2.0 * 8 * 8), 1e-12));
    }
}

TEST_CASE("forest fit basics", "[surrogate]") {
    rf_hyperparams hp;
    hp.trees = 20;
    hp.seed = 5;

    SECTION("constant targets predict the constant") {
        rf_dataset ds;
        rng gen(3);
        for (int i = 0; i < 40; ++i) ds.push_back({{gen.real(), gen.real()}, 42.0});
        random_forest f = fit_forest(ds, hp);
        REQUIRE_THAT(f.predict(ds[0].first), WithinRel(42.0, 1e-9));
    }
    SECTION("single unbounded tree memorizes the training set") {
        rf_hyperparams one;
        one.trees = 1;
        one.max_depth = 64;
        one.min_samples_leaf = 1;
        one.bootstrap = false;
        one.feature_fraction = 1.0;
        rf_dataset ds;
        rng gen(4);
        for (int i = 0; i < 30; ++i) ds.push_back({{gen.real(), gen.real()}, 10.0 + 90.0 * gen.real()});
        random_forest f = fit_forest(ds, one);
        for (const auto& [x, y] : ds) REQUIRE_THAT(f.predict(x), WithinRel(y, 1e-9));
    }
    SECTION("step function is learned below the step size") {
        rf_hyperparams hp2;
        hp2.trees = 30;
        hp2.seed = 6;
        hp2.feature_fraction = 1.0;
        const rf_dataset ds = synthetic_step_data(300, 9);
        const holdout_metrics m = holdout_report(ds, hp2, 0.2, 77);
        REQUIRE(m.mae < 100.0);  // step size
        REQUIRE(m.median_rel_err < 0.2);
    }
    SECTION("empty dataset is rejected") {
        REQUIRE_THROWS_AS(fit_forest({}, hp), config_error);
    }
    SECTION("deterministic given the seed") {
        const rf_dataset ds = synthetic_step_data(100, 10);
        random_forest a = fit_forest(ds, hp);
        random_forest b = fit_forest(ds, hp);
        rng gen(8);
        for (int i = 0; i < 20; ++i) {
            std::vector<double> x{gen.real(), gen.real(), gen.real()};
            REQUIRE(a.predict(x) == b.predict(x));
        }
    }
}

TEST_CASE("forest predict", "[surrogate]") {
    const rf_dataset ds = synthetic_step_data(200, 11);
    rf_hyperparams hp;
    hp.trees = 25;
    hp.seed = 13;
    const random_forest f = fit_forest(ds, hp);

    SECTION("prediction lies within the training target range") {
        rng gen(14);
        for (int i = 0; i < 200; ++i) {
            std::vector<double> x{gen.real() * 2 - 0.5, gen.real(), gen.real()};
            const double p = f.predict(x);
            REQUIRE(p >= 100.0 - 1e-9);
            REQUIRE(p <= 200.0 + 1e-9);
        }
    }
    SECTION("agrees with an independent tree-walk oracle") {
        rng gen(15);
        for (int i = 0; i < 100; ++i) {
            std::vector<double> x{gen.real(), gen.real(), gen.real()};
            double acc = 0.0;
            for (const auto& t : f.trees) acc += walk_tree(t, x);
            REQUIRE_THAT(f.predict(x), WithinRel(std::exp(acc / static_cast<double>(f.trees.size())), 1e-12));
        }
    }
    SECTION("forest of identical trees equals the single tree") {
        random_forest one = f;
        one.trees.assign(10, f.trees[0]);
        std::vector<double> x{0.3, 0.4, 0.5};
        REQUIRE_THAT(one.predict(x), WithinRel(std::exp(walk_tree(f.trees[0], x)), 1e-12));
    }
    SECTION("feature length mismatch throws") {
        REQUIRE_THROWS_AS(f.predict(std::vector<double>{1.0}), shape_error);
    }
    SECTION("constant features do not influence predictions") {
        // append a constant column; refit; predictions must match on the
        // shared columns
        rf_dataset wide;
        for (const auto& [x, y] : ds) {
            auto xx = x;
            xx.push_back(7.0);
            wide.push_back({xx, y});
        }
        const random_forest g = fit_forest(wide, hp);
        rng gen(16);
        for (int i = 0; i < 50; ++i) {
            std::vector<double> x{gen.real(), gen.real(), gen.real()};
            auto xx = x;
            xx.push_back(7.0);
            REQUIRE_THAT(g.predict(xx), WithinRel(f.predict(x), 0.25));
        }
    }
}

TEST_CASE("holdout_report metrics", "[surrogate]") {
    rf_hyperparams hp;
    hp.trees = 10;
    hp.seed = 21;

    SECTION("too-small dataset fails the gate") {
        rf_dataset ds = synthetic_step_data(10, 22);
        REQUIRE_THROWS_AS(holdout_report(ds, hp, 0.2, 1), config_error);
    }
    SECTION("metrics behave for a near-perfect predictor") {
        // a cleanly separable step on one feature, plenty of rows
        const rf_dataset ds = synthetic_step_data(400, 23);
        rf_hyperparams strong = hp;
        strong.trees = 40;
        strong.feature_fraction = 1.0;
        const holdout_metrics m = holdout_report(ds, strong, 0.25, 3);
        REQUIRE(m.r2 > 0.9);
        REQUIRE(m.median_rel_err < 0.05);
        REQUIRE(m.train_rows + m.test_rows == 400);
    }
}

TEST_CASE("mac baseline", "[surrogate]") {
    network_spec net = zoo::tiny_cnn();
    const feature_layout fl = make_feature_layout(net);
    // a dataset where fps really is k / macs: the baseline is exact
    rf_dataset ds;
    choice_options opts;
    const choice_map choices = build_choice_sets(net, opts);
    rng gen(31);
    for (int i = 0; i < 50; ++i) {
        const design_point d = random_design(choices, gen);
        auto x = extract_features(net, d.td, fl);
        const double macs = x[static_cast<std::size_t>(fl.total_macs_index())];
        ds.emplace_back(std::move(x), 5e8 / macs);
    }
    const mac_baseline base = mac_baseline::calibrate(ds, fl.total_macs_index());
    for (const auto& [x, fps] : ds) REQUIRE_THAT(base.predict(x), WithinRel(fps, 1e-9));
}

TEST_CASE("forest serialization round trip", "[surrogate][io]") {
    const rf_dataset ds = synthetic_step_data(120, 41);
    rf_hyperparams hp;
    hp.trees = 8;
    hp.seed = 42;
    const random_forest f = fit_forest(ds, hp);

    const auto dir = std::filesystem::temp_directory_path() / "tdflow_forest_io";
    std::filesystem::create_directories(dir);
    save_forest(f, dir / "forest.txt");
    const random_forest g = load_forest(dir / "forest.txt");
    REQUIRE(g.trees.size() == f.trees.size());
    REQUIRE(g.feature_count == f.feature_count);
    rng gen(43);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> x{gen.real(), gen.real(), gen.real()};
        REQUIRE(g.predict(x) == f.predict(x));
    }

    SECTION("dataset csv round trip") {
        network_spec net = zoo::tiny_cnn();
        const feature_layout fl = make_feature_layout(net);
        rf_dataset rows;
        rng g2(44);
        choice_options opts;
        const choice_map choices = build_choice_sets(net, opts);
        for (int i = 0; i < 5; ++i) {
            const design_point d = random_design(choices, g2);
            rows.emplace_back(extract_features(net, d.td, fl), 100.0 + i);
        }
        save_dataset(rows, fl, dir / "data.csv");
        const rf_dataset back = load_dataset(dir / "data.csv");
        REQUIRE(back.size() == rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            REQUIRE(back[i].second == rows[i].second);
            REQUIRE(back[i].first == rows[i].first);
        }
    }
}
