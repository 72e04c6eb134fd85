#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tdflow/accel.hpp"
#include "tdflow/network.hpp"
#include "tdflow/surrogate.hpp"

namespace tdflow {

// ---- choice sets -------------------------------------------------------------

enum class format_mode { mixed, svd_only, cpd_only };

inline const char* to_string(format_mode m) {
    switch (m) {
        case format_mode::mixed: return "mixed";
        case format_mode::svd_only: return "svd-only";
        case format_mode::cpd_only: return "cpd-only";
    }
    return "?";
}

inline format_mode format_mode_from(const std::string& s) {
    for (format_mode m : {format_mode::mixed, format_mode::svd_only, format_mode::cpd_only})
        if (s == to_string(m)) return m;
    throw config_error("unknown format mode '" + s + "'");
}

struct choice_options {
    format_mode formats = format_mode::mixed;
    index_t max_group = 4;  // g1, g2 drawn from divisors up to this bound
    std::vector<double> rank_fractions{1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0};
};

// All valid configs of one layer, enumerated in a canonical order.
struct layer_choices {
    index_t layer_id = 0;
    std::vector<td_config> valid;
};

namespace detail {

inline std::vector<index_t> divisors_up_to(index_t n, index_t cap) {
    std::vector<index_t> out;
    for (index_t d = 1; d <= std::min(n, cap); ++d)
        if (n % d == 0) out.push_back(d);
    return out;
}

}  // namespace detail

inline layer_choices enumerate_choices(const layer_spec& l, const choice_options& opt) {
    const conv_shape s = l.weight_shape();
    layer_choices out;
    out.layer_id = l.id;
    std::vector<td_format> formats;
    if (opt.formats != format_mode::cpd_only) formats.push_back(td_format::svd);
    if (opt.formats != format_mode::svd_only) formats.push_back(td_format::cpd);

    for (td_format f : formats)
        for (index_t g1 : detail::divisors_up_to(s.c_out, opt.max_group))
            for (index_t g2 : detail::divisors_up_to(s.c_in, opt.max_group)) {
                const index_t rmax = f == td_format::svd ? svd_max_rank(s, g1, g2) : cpd_rank_cap(s.c_out, g1);
                std::vector<index_t> ranks;
                for (double frac : opt.rank_fractions) {
                    index_t r = std::max<index_t>(1, static_cast<index_t>(std::llround(frac * static_cast<double>(rmax))));
                    r = std::min(r, rmax);
                    ranks.push_back(r);
                }
                std::sort(ranks.begin(), ranks.end());
                ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
                for (index_t r : ranks) out.valid.push_back({f, g1, g2, r});
            }
    if (out.valid.empty()) throw config_error("no valid td configs for layer " + std::to_string(l.id));
    return out;
}

using choice_map = std::map<index_t, layer_choices>;

inline choice_map build_choice_sets(const network_spec& net, const choice_options& opt) {
    choice_map out;
    for (const auto& l : net.layers)
        if (is_decomposable(l.kind)) out.emplace(l.id, enumerate_choices(l, opt));
    return out;
}

struct space_size {
    std::uint64_t count = 1;
    bool saturated = false;
    double log10_count = 0.0;
};

inline space_size design_space_size(const choice_map& choices) {
    space_size s;
    for (const auto& [id, lc] : choices) {
        const std::uint64_t n = lc.valid.size();
        s.log10_count += std::log10(static_cast<double>(n));
        if (!s.saturated) {
            if (s.count > UINT64_MAX / n)
                s.saturated = true;
            else
                s.count *= n;
        }
    }
    return s;
}

// ---- design points -------------------------------------------------------------

enum class eval_source { exact, surrogate, mac_baseline };

inline const char* to_string(eval_source s) {
    switch (s) {
        case eval_source::exact: return "exact";
        case eval_source::surrogate: return "surrogate";
        case eval_source::mac_baseline: return "mac-baseline";
    }
    return "?";
}

struct design_point {
    td_map td;
    struct evaluation {
        double fps = 0.0;
        resource_vector resources;
        bool resources_known = false;
        double proxy_accuracy = 0.0;
        eval_source source = eval_source::exact;
    };
    std::optional<evaluation> cached;  // invalidated by mutation/crossover

    index_t stored_params(const network_spec& net) const { return count_params(net, &td); }
};

// FNV-1a over the config tuple stream; stable across runs.
inline std::string td_hash(const td_map& td) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [id, cfg] : td) {
        mix(static_cast<std::uint64_t>(id));
        mix(static_cast<std::uint64_t>(cfg.format));
        mix(static_cast<std::uint64_t>(cfg.g1));
        mix(static_cast<std::uint64_t>(cfg.g2));
        mix(static_cast<std::uint64_t>(cfg.r));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline design_point random_design(const choice_map& choices, rng& gen) {
    design_point d;
    for (const auto& [id, lc] : choices)
        d.td[id] = lc.valid[static_cast<std::size_t>(gen.below(static_cast<index_t>(lc.valid.size())))];
    return d;
}

// Per-gene resample with probability `rate`; if nothing changed, one randomly
// chosen mutable gene is forced to a different value.
inline design_point mutate(const design_point& parent, const choice_map& choices, double rate, rng& gen) {
    if (rate <= 0.0 || rate > 1.0) throw config_error("mutate: rate must be in (0, 1]");
    design_point child;
    bool changed = false;
    for (const auto& [id, lc] : choices) {
        const td_config& cur = parent.td.at(id);
        if (gen.coin(rate)) {
            const td_config pick = lc.valid[static_cast<std::size_t>(gen.below(static_cast<index_t>(lc.valid.size())))];
            child.td[id] = pick;
            changed |= !(pick == cur);
        } else {
            child.td[id] = cur;
        }
    }
    if (!changed) {
        std::vector<index_t> mutable_layers;
        for (const auto& [id, lc] : choices)
            if (lc.valid.size() > 1) mutable_layers.push_back(id);
        if (!mutable_layers.empty()) {
            const index_t id = mutable_layers[static_cast<std::size_t>(gen.below(static_cast<index_t>(mutable_layers.size())))];
            const auto& vs = choices.at(id).valid;
            const td_config& cur = parent.td.at(id);
            index_t pick = gen.below(static_cast<index_t>(vs.size()) - 1);
            for (index_t i = 0, seen = 0; i < static_cast<index_t>(vs.size()); ++i) {
                if (vs[static_cast<std::size_t>(i)] == cur) continue;
                if (seen++ == pick) {
                    child.td[id] = vs[static_cast<std::size_t>(i)];
                    break;
                }
            }
        }
    }
    return child;
}

// Uniform crossover: each layer's config comes from either parent with equal
// probability.
inline design_point crossover(const design_point& a, const design_point& b, rng& gen) {
    design_point child;
    for (const auto& [id, cfg] : a.td) child.td[id] = gen.coin(0.5) ? cfg : b.td.at(id);
    return child;
}

// ---- evaluation -------------------------------------------------------------

struct proxy_settings {
    probe_set probe;            // reconstruction mode unless labeled
    als_settings als;
};

// Shared evaluation state: accuracy proxy with a per-(layer, config) error
// cache for reconstruction mode, plus the throughput paths.
class dse_evaluator {
public:
    dse_evaluator(const network_spec& net, platform plat, proxy_settings proxy)
        : net_(net), plat_(std::move(plat)), proxy_(std::move(proxy)), layout_(make_feature_layout(net)) {}

    const network_spec& net() const { return net_; }
    const platform& plat() const { return plat_; }
    const feature_layout& layout() const { return layout_; }

    double accuracy(const td_map& td) {
        if (proxy_.probe.labeled()) return accuracy_proxy(net_, td, proxy_.probe, proxy_.als);
        double weighted = 0.0, weight_sum = 0.0;
        for (const auto& [id, cfg] : td) {
            const layer_spec& l = net_.layer_by_id(id);
            const double w = static_cast<double>(direct_macs(l, net_.geometry_of(id)));
            weighted += w * layer_error(id, cfg);
            weight_sum += w;
        }
        if (weight_sum == 0.0) throw config_error("accuracy proxy: no decomposable layers covered");
        return 1.0 - weighted / weight_sum;
    }

    // exact throughput: run the allocator; returns false when even the
    // minimum-unroll design exceeds the budget
    bool exact_throughput(const td_map& td, double& fps, resource_vector& usage) {
        try {
            const pipeline_design d = allocate_unrolling(net_, td, plat_);
            fps = peak_fps(d);
            usage = resource_usage(d, plat_);
            return true;
        } catch (const budget_error&) {
            return false;
        }
    }

    std::vector<double> features(const td_map& td) const { return extract_features(net_, td, layout_); }

private:
    double layer_error(index_t id, const td_config& cfg) {
        const auto key = std::make_tuple(id, static_cast<int>(cfg.format), cfg.g1, cfg.g2, cfg.r);
        auto it = err_cache_.find(key);
        if (it != err_cache_.end()) return it->second;
        const tensor& w = net_.weights.at(id);
        double err = 0.0;
        if (w.frobenius_norm() > 0.0) err = layer_recon_error(net_, id, cfg, proxy_.als);
        err_cache_.emplace(key, err);
        return err;
    }

    const network_spec& net_;
    platform plat_;
    proxy_settings proxy_;
    feature_layout layout_;
    std::map<std::tuple<index_t, int, index_t, index_t, index_t>, double> err_cache_;
};

// ---- search -------------------------------------------------------------

enum class evaluator_kind { exact, surrogate, mac_baseline };

inline const char* to_string(evaluator_kind k) {
    switch (k) {
        case evaluator_kind::exact: return "exact";
        case evaluator_kind::surrogate: return "surrogate";
        case evaluator_kind::mac_baseline: return "mac-baseline";
    }
    return "?";
}

inline evaluator_kind evaluator_kind_from(const std::string& s) {
    for (evaluator_kind k : {evaluator_kind::exact, evaluator_kind::surrogate, evaluator_kind::mac_baseline})
        if (s == to_string(k)) return k;
    throw config_error("unknown evaluator '" + s + "'");
}

struct search_config {
    index_t population = 32;
    index_t children = 32;  // must be even; half mutants, half crossover
    index_t max_steps = 20;
    double mutation_rate = 0.1;
    double fps_target = 0.0;
    index_t attempt_cap = 1000;  // rejection attempts per needed sample
    std::uint64_t seed = 1;
    evaluator_kind evaluator = evaluator_kind::exact;
    index_t surrogate_start_step = 3;   // exact warmup steps before handoff
    index_t exact_eval_budget = 100000; // cap on recorded exact labels
    double surrogate_gate = 0.20;       // max holdout median relative error
    rf_hyperparams forest;
};

struct search_log_row {
    index_t step = 0;  // 0 = initialization, max_steps+1 = final re-validation
    index_t candidate = 0;
    std::string hash;
    double accuracy = 0.0;
    double fps = 0.0;
    eval_source source = eval_source::exact;
    bool valid = false;
};

struct step_summary {
    index_t step = 0;
    double best_accuracy = 0.0;
    double median_accuracy = 0.0;
    index_t evaluated = 0;
    double wall_seconds = 0.0;  // excluded from reproducibility comparisons
};

struct search_result {
    std::vector<design_point> population;  // ranked, best first
    std::vector<search_log_row> log;
    std::vector<step_summary> steps;
    rf_dataset dataset;  // exact labels gathered during warmup
    std::optional<random_forest> forest;
    std::optional<holdout_metrics> gate_metrics;
    bool surrogate_active = false;
    index_t total_evaluations = 0;
};

namespace detail {

struct ranked_less {
    const network_spec& net;
    // accuracy desc, fps desc, stored params asc, insertion order asc
    bool operator()(const std::tuple<design_point, index_t>& a, const std::tuple<design_point, index_t>& b) const {
        const auto& [da, ia] = a;
        const auto& [db, ib] = b;
        const auto& ea = *da.cached;
        const auto& eb = *db.cached;
        if (ea.proxy_accuracy != eb.proxy_accuracy) return ea.proxy_accuracy > eb.proxy_accuracy;
        if (ea.fps != eb.fps) return ea.fps > eb.fps;
        const index_t pa = da.stored_params(net), pb = db.stored_params(net);
        if (pa != pb) return pa < pb;
        return ia < ib;
    }
};

}  // namespace detail

class search_engine {
public:
    search_engine(dse_evaluator& eval, const choice_map& choices, const search_config& cfg)
        : eval_(eval), choices_(choices), cfg_(cfg), gen_(derive_seed(cfg.seed, 0xdee5)) {
        if (cfg_.children % 2 != 0) throw config_error("search: |C| must be even");
        if (cfg_.population < 1) throw config_error("search: |P| must be >= 1");
    }

    search_result run() {
        search_result res;
        const auto t0 = std::chrono::steady_clock::now();

        // initialization: rejection-sample |P| valid designs
        std::vector<std::tuple<design_point, index_t>> population;
        index_t fps_rejections = 0, budget_rejections = 0;
        index_t attempts = 0;
        const index_t max_attempts = cfg_.attempt_cap * cfg_.population;
        while (static_cast<index_t>(population.size()) < cfg_.population) {
            if (attempts++ >= max_attempts)
                throw budget_error("search: could not initialize " + std::to_string(cfg_.population) +
                                   " valid designs in " + std::to_string(max_attempts) + " attempts; " +
                                   std::to_string(fps_rejections) + " failed the fps target, " +
                                   std::to_string(budget_rejections) + " the resource budget (tightest constraint: " +
                                   (budget_rejections > fps_rejections ? "resource budget" : "fps target") + ")");
            design_point d = random_design(choices_, gen_);
            if (validate(d, res, 0)) {
                population.emplace_back(std::move(d), last_id_);
            } else if (d.cached->resources_known) {
                ++fps_rejections;  // allocator found a design, fps fell short
            } else {
                ++budget_rejections;
            }
        }
        std::sort(population.begin(), population.end(), detail::ranked_less{eval_.net()});
        push_step_summary(res, 0, population, t0);

        for (index_t step = 1; step <= cfg_.max_steps; ++step) {
            maybe_handoff(res, step);

            std::vector<std::tuple<design_point, index_t>> children;
            const index_t half = cfg_.children / 2;
            // mutants
            fill_children(children, half, res, step, [&](rng& g) {
                const auto& parent = std::get<0>(population[static_cast<std::size_t>(g.below(static_cast<index_t>(population.size())))]);
                return mutate(parent, choices_, cfg_.mutation_rate, g);
            });
            // crossover children
            fill_children(children, half, res, step, [&](rng& g) {
                const index_t n = static_cast<index_t>(population.size());
                const index_t ia = g.below(n);
                index_t ib = n > 1 ? g.below(n - 1) : 0;
                if (n > 1 && ib >= ia) ++ib;
                return crossover(std::get<0>(population[static_cast<std::size_t>(ia)]),
                                 std::get<0>(population[static_cast<std::size_t>(ib)]), g);
            });

            for (auto& c : children) population.push_back(std::move(c));
            std::sort(population.begin(), population.end(), detail::ranked_less{eval_.net()});
            population.resize(static_cast<std::size_t>(cfg_.population));
            push_step_summary(res, step, population, t0);
        }

        // final exact re-validation of the surviving population
        if (res.surrogate_active) {
            for (auto& [d, order] : population) {
                double fps = 0.0;
                resource_vector usage;
                const bool ok = eval_.exact_throughput(d.td, fps, usage);
                design_point::evaluation e = *d.cached;
                e.fps = ok ? fps : 0.0;
                e.resources = usage;
                e.resources_known = ok;
                e.source = eval_source::exact;
                d.cached = e;
                res.log.push_back({cfg_.max_steps + 1, insert_counter_++, td_hash(d.td), e.proxy_accuracy, e.fps,
                                   eval_source::exact, ok && e.fps >= cfg_.fps_target});
            }
            std::sort(population.begin(), population.end(), detail::ranked_less{eval_.net()});
        }

        res.population.reserve(population.size());
        for (auto& [d, order] : population) res.population.push_back(std::move(d));
        return res;
    }

private:
    template <typename MakeChild>
    void fill_children(std::vector<std::tuple<design_point, index_t>>& children, index_t quota,
                       search_result& res, index_t step, MakeChild make) {
        index_t produced = 0, attempts = 0;
        const index_t cap = cfg_.attempt_cap * quota;
        while (produced < quota && attempts < cap) {
            ++attempts;
            design_point child = make(gen_);
            if (validate(child, res, step)) {
                children.emplace_back(std::move(child), last_id_);
                ++produced;
            }
        }
    }

    // Fills d.cached; true iff the design passes the constraints under the
    // evaluator currently in force.
    bool validate(design_point& d, search_result& res, index_t step) {
        design_point::evaluation e;
        e.proxy_accuracy = eval_.accuracy(d.td);
        bool ok = false;
        if (!res.surrogate_active) {
            double fps = 0.0;
            resource_vector usage;
            const bool feasible = eval_.exact_throughput(d.td, fps, usage);
            e.fps = feasible ? fps : 0.0;
            e.resources = usage;
            e.resources_known = feasible;
            e.source = eval_source::exact;
            ok = feasible && fps >= cfg_.fps_target;
            if (feasible && static_cast<index_t>(res.dataset.size()) < cfg_.exact_eval_budget)
                res.dataset.emplace_back(eval_.features(d.td), fps);
        } else if (cfg_.evaluator == evaluator_kind::surrogate) {
            e.fps = res.forest->predict(eval_.features(d.td));
            e.source = eval_source::surrogate;
            ok = e.fps >= cfg_.fps_target;
        } else {
            e.fps = baseline_->predict(eval_.features(d.td));
            e.source = eval_source::mac_baseline;
            ok = e.fps >= cfg_.fps_target;
        }
        d.cached = e;
        last_id_ = insert_counter_++;
        ++res.total_evaluations;
        res.log.push_back({step, last_id_, td_hash(d.td), e.proxy_accuracy, e.fps, e.source, ok});
        return ok;
    }

    void maybe_handoff(search_result& res, index_t step) {
        if (cfg_.evaluator == evaluator_kind::exact || res.surrogate_active) return;
        if (step <= cfg_.surrogate_start_step) return;
        if (cfg_.evaluator == evaluator_kind::mac_baseline) {
            if (res.dataset.empty()) return;
            baseline_ = mac_baseline::calibrate(res.dataset, eval_.layout().total_macs_index());
            res.surrogate_active = true;
            return;
        }
        if (res.dataset.size() < 20) return;  // keep collecting exact labels
        rf_hyperparams hp = cfg_.forest;
        hp.seed = derive_seed(cfg_.seed, 0xf0e5);
        const holdout_metrics m = holdout_report(res.dataset, hp, 0.2, hp.seed);
        res.gate_metrics = m;
        if (m.median_rel_err > cfg_.surrogate_gate) return;  // gate failed; stay exact
        res.forest = fit_forest(res.dataset, hp);
        res.surrogate_active = true;
    }

    void push_step_summary(search_result& res, index_t step,
                           const std::vector<std::tuple<design_point, index_t>>& population,
                           std::chrono::steady_clock::time_point t0) {
        step_summary s;
        s.step = step;
        s.best_accuracy = std::get<0>(population.front()).cached->proxy_accuracy;
        s.median_accuracy = std::get<0>(population[population.size() / 2]).cached->proxy_accuracy;
        s.evaluated = res.total_evaluations - evaluated_before_;
        evaluated_before_ = res.total_evaluations;
        s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.steps.push_back(s);
    }

    dse_evaluator& eval_;
    const choice_map& choices_;
    search_config cfg_;
    rng gen_;
    index_t insert_counter_ = 0;
    index_t last_id_ = 0;
    index_t evaluated_before_ = 0;
    std::optional<mac_baseline> baseline_;
};

inline search_result search(dse_evaluator& eval, const choice_map& choices, const search_config& cfg) {
    return search_engine(eval, choices, cfg).run();
}

}  // namespace tdflow
