#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tdflow/network.hpp"

namespace tdflow {

struct resource_vector {
    index_t dsp = 0, bram = 0, lut = 0, uram = 0;

    resource_vector& operator+=(const resource_vector& o) {
        dsp += o.dsp;
        bram += o.bram;
        lut += o.lut;
        uram += o.uram;
        return *this;
    }
    friend resource_vector operator+(resource_vector a, const resource_vector& b) { return a += b; }

    bool fits(const resource_vector& budget) const {
        return dsp <= budget.dsp && bram <= budget.bram && lut <= budget.lut && uram <= budget.uram;
    }
};

struct platform {
    std::string name = "u250-like";
    double clock_mhz = 200.0;
    resource_vector budget{12288, 5376, 1728000, 1280};
    // resource model coefficients; data, not code, since they are unknowable
    // without synthesis
    double lut_per_lane = 25.0;
    double lut_overhead = 300.0;
    index_t word_bits = 8;          // stored weight/stream word width
    index_t bram_block_bits = 18432;
    index_t fifo_depth = 512;       // words per rearrangement FIFO

    double clock_hz() const { return clock_mhz * 1e6; }
};

struct stage_model {
    index_t spatial_positions = 1;  // output positions of this stage
    index_t reduce_size = 1;        // elements summed per output word
    index_t expand_size = 1;        // output words per position
    index_t p_in = 1;               // unroll of the reduction
    index_t p_out = 1;              // unroll of the expansion
    index_t weight_words = 0;
    index_t line_fill = 0;          // extra fill cycles (sliding-window buffers)
};

inline index_t stage_cycles(const stage_model& s) {
    const index_t in_steps = (s.reduce_size + s.p_in - 1) / s.p_in;
    const index_t out_steps = (s.expand_size + s.p_out - 1) / s.p_out;
    return s.spatial_positions * in_steps * out_steps;
}

enum class engine_kind { svd, cpd, passthrough };

struct engine_model {
    index_t layer_id = 0;
    engine_kind kind = engine_kind::passthrough;
    index_t group_index = 0;  // position in the g1 x g2 grid
    std::vector<stage_model> stages;

    index_t cycles() const {
        index_t worst = 0;
        for (const auto& s : stages) worst = std::max(worst, stage_cycles(s));
        return worst;
    }
    index_t fill_cycles() const {
        index_t total = 0;
        for (const auto& s : stages) total += stage_cycles(s) + s.line_fill;
        return total;
    }
};

struct pipeline_design {
    std::vector<engine_model> engines;
    std::vector<index_t> fifo_widths;  // per graph edge, build order
    platform plat;

    index_t initiation_interval() const {
        index_t worst = 0;
        for (const auto& e : engines) worst = std::max(worst, e.cycles());
        return worst;
    }

    // Pipeline fill: engines of one layer run in parallel, layers in series.
    index_t depth_cycles() const {
        index_t depth = 0;
        index_t current_layer = std::numeric_limits<index_t>::min();
        index_t layer_worst = 0;
        for (const auto& e : engines) {
            if (e.layer_id != current_layer) {
                depth += layer_worst;
                layer_worst = 0;
                current_layer = e.layer_id;
            }
            layer_worst = std::max(layer_worst, e.fill_cycles());
        }
        return depth + layer_worst;
    }
};

// Stage list of one engine (one chunk) of a decomposed layer.
inline std::vector<stage_model> build_stages(const layer_spec& l, const network_spec::geometry& g,
                                             const td_config& cfg) {
    const conv_shape s = l.weight_shape();
    validate_config(cfg, s);
    const index_t co = s.c_out / cfg.g1, ci = s.c_in / cfg.g2, k = s.k, r = cfg.r;
    std::vector<stage_model> stages;
    if (cfg.format == td_format::svd) {
        stages.push_back({g.m_out * g.n_out, ci * k * k, r, 1, 1, ci * k * k * r, k > 1 ? k * g.n_in : 0});
        stages.push_back({g.m_out * g.n_out, r, co, 1, 1, co * r, 0});
    } else {
        stages.push_back({g.m_in * g.n_in, ci, r, 1, 1, ci * r, 0});
        stages.push_back({g.m_out * g.n_in, k, r, 1, 1, k * r, k > 1 ? k * g.n_in : 0});
        stages.push_back({g.m_out * g.n_out, k, r, 1, 1, k * r, k > 1 ? k : 0});
        stages.push_back({g.m_out * g.n_out, r, co, 1, 1, co * r, 0});
    }
    return stages;
}

// One pass-through stage for unweighted layers; the expansion unroll is the
// stream width (words moved per cycle).
inline stage_model passthrough_stage(const layer_spec& l, const network_spec::geometry& g, index_t channels) {
    stage_model s;
    s.spatial_positions = g.m_out * g.n_out;
    s.reduce_size = 1;
    s.expand_size = channels;
    s.weight_words = 0;
    return s;
}

// Engines for every layer: g1*g2 per decomposed layer, one pass-through
// otherwise. td must cover all weighted layers.
inline std::vector<engine_model> build_engines(const network_spec& net, const td_map& td) {
    std::vector<engine_model> engines;
    for (const auto& l : net.layers) {
        const auto& g = net.geometry_of(l.id);
        if (is_decomposable(l.kind)) {
            auto it = td.find(l.id);
            if (it == td.end()) throw config_error("build_engines: td config missing for layer " + std::to_string(l.id));
            const td_config& cfg = it->second;
            for (index_t gi = 0; gi < cfg.g1 * cfg.g2; ++gi) {
                engine_model e;
                e.layer_id = l.id;
                e.kind = cfg.format == td_format::svd ? engine_kind::svd : engine_kind::cpd;
                e.group_index = gi;
                e.stages = build_stages(l, g, cfg);
                engines.push_back(std::move(e));
            }
        } else {
            engine_model e;
            e.layer_id = l.id;
            e.kind = engine_kind::passthrough;
            e.stages = {passthrough_stage(l, g, net.out_channels(l))};
            engines.push_back(std::move(e));
        }
    }
    return engines;
}

inline index_t lcm_fifo_width(index_t g1_prev, index_t g2_next) {
    if (g1_prev < 1 || g2_next < 1) throw config_error("lcm_fifo_width: groups must be positive");
    return std::lcm(g1_prev, g2_next);
}

// Channel-group interleaving of a stream carrying c channels as
// (c/g, g): wire slot t holds channel (t mod g) * (c/g) + t / g.
inline index_t interleaved_channel(index_t t, index_t c, index_t g) { return (t % g) * (c / g) + t / g; }

inline index_t interleaved_slot(index_t ch, index_t c, index_t g) {
    return (ch % (c / g)) * g + ch / (c / g);
}

// Permutation realized by the LCM FIFO array between a producer emitting in
// (c/g1, g1) order and a consumer reading in (c/g2, g2) order: slot t of the
// producer stream lands at slot sigma(t) of the consumer stream, preserving
// channel identity.
inline std::vector<index_t> rearrange_schedule(index_t c, index_t g1, index_t g2) {
    if (g1 < 1 || g2 < 1 || c % g1 != 0 || c % g2 != 0)
        throw config_error("rearrange_schedule: groups must divide channel count");
    std::vector<index_t> sigma(static_cast<std::size_t>(c));
    for (index_t t = 0; t < c; ++t)
        sigma[static_cast<std::size_t>(t)] = interleaved_slot(interleaved_channel(t, c, g1), c, g2);
    return sigma;
}

namespace detail {

inline index_t stage_bram(const stage_model& s, const platform& p) {
    if (s.weight_words == 0) return 0;
    const index_t blocks = (s.weight_words * p.word_bits + p.bram_block_bits - 1) / p.bram_block_bits;
    return std::max(blocks, s.p_in * s.p_out);
}

inline resource_vector stage_resources(const stage_model& s, const platform& p) {
    resource_vector r;
    const index_t lanes = s.p_in * s.p_out;
    r.dsp = s.weight_words > 0 ? lanes : 0;
    r.bram = stage_bram(s, p);
    r.lut = static_cast<index_t>(std::llround(p.lut_overhead + p.lut_per_lane * static_cast<double>(lanes)));
    return r;
}

}  // namespace detail

inline resource_vector resource_usage(const pipeline_design& d, const platform& p) {
    resource_vector total;
    for (const auto& e : d.engines)
        for (const auto& s : e.stages) total += detail::stage_resources(s, p);
    const index_t blocks_per_fifo = (p.fifo_depth * p.word_bits + p.bram_block_bits - 1) / p.bram_block_bits;
    for (index_t w : d.fifo_widths) total.bram += w * blocks_per_fifo;
    return total;
}

// FPS model: the pipeline accepts one frame per initiation interval once
// full; a batch costs fill depth plus batch x II cycles and the pipeline is
// drained between batches.
inline double pipeline_fps(const pipeline_design& d, index_t batch) {
    if (batch < 1) throw config_error("pipeline_fps: batch must be >= 1");
    const double total = static_cast<double>(d.depth_cycles()) + static_cast<double>(batch) * static_cast<double>(d.initiation_interval());
    return static_cast<double>(batch) * d.plat.clock_hz() / total;
}

inline double peak_fps(const pipeline_design& d) {
    return d.plat.clock_hz() / static_cast<double>(d.initiation_interval());
}

namespace detail {

// group factors of the stream entering / leaving a layer
inline index_t layer_g1(const network_spec& net, const td_map& td, index_t id) {
    const layer_spec& l = net.layer_by_id(id);
    if (!is_decomposable(l.kind)) return 1;
    return td.at(l.id).g1;
}
inline index_t layer_g2(const layer_spec& l, const td_map& td) {
    if (!is_decomposable(l.kind)) return 1;
    return td.at(l.id).g2;
}

inline std::vector<index_t> build_fifo_widths(const network_spec& net, const td_map& td) {
    std::vector<index_t> widths;
    for (const auto& l : net.layers)
        for (index_t pred : l.predecessors)
            widths.push_back(lcm_fifo_width(layer_g1(net, td, pred), layer_g2(l, td)));
    return widths;
}

}  // namespace detail

struct allocation_report {
    index_t moves = 0;  // unroll raises applied by the greedy loop
};

// Greedy resource allocator: raise the bottleneck stage's unroll to the next
// divisor with the best cycles-per-resource gain until the budget binds or the
// bottleneck is fully unrolled. Deterministic; ties resolve to the lowest
// layer id, then engine order, then stage index, then p_in over p_out.
inline pipeline_design allocate_unrolling(const network_spec& net, const td_map& td, const platform& p,
                                          allocation_report* report = nullptr) {
    pipeline_design d;
    d.plat = p;
    d.engines = build_engines(net, td);
    d.fifo_widths = detail::build_fifo_widths(net, td);

    resource_vector usage = resource_usage(d, p);
    if (!usage.fits(p.budget)) {
        std::string tightest = "dsp";
        double worst = static_cast<double>(usage.dsp) / std::max<index_t>(1, p.budget.dsp);
        const auto consider = [&](const char* nm, index_t u, index_t b) {
            const double ratio = static_cast<double>(u) / std::max<index_t>(1, b);
            if (ratio > worst) {
                worst = ratio;
                tightest = nm;
            }
        };
        consider("bram", usage.bram, p.budget.bram);
        consider("lut", usage.lut, p.budget.lut);
        consider("uram", usage.uram, p.budget.uram);
        throw budget_error("allocate_unrolling: infeasible at minimum unrolls; tightest resource: " + tightest);
    }

    const auto next_divisor = [](index_t dim, index_t cur) -> index_t {
        for (index_t v = cur + 1; v <= dim; ++v)
            if (dim % v == 0) return v;
        return 0;
    };

    index_t moves = 0;
    while (true) {
        // bottleneck stage across all engines
        engine_model* be = nullptr;
        stage_model* bs = nullptr;
        index_t worst = -1;
        for (auto& e : d.engines)
            for (auto& s : e.stages) {
                const index_t cyc = stage_cycles(s);
                if (cyc > worst) {
                    worst = cyc;
                    be = &e;
                    bs = &s;
                }
            }
        if (!bs) break;

        const resource_vector before = detail::stage_resources(*bs, p);
        const index_t cyc_before = stage_cycles(*bs);

        struct move_option {
            bool is_p_in;
            index_t value;
            double gain;
        };
        std::vector<move_option> options;
        for (bool is_p_in : {true, false}) {
            const index_t dim = is_p_in ? bs->reduce_size : bs->expand_size;
            const index_t cur = is_p_in ? bs->p_in : bs->p_out;
            const index_t nxt = next_divisor(dim, cur);
            if (nxt == 0) continue;
            stage_model trial = *bs;
            (is_p_in ? trial.p_in : trial.p_out) = nxt;
            const resource_vector after = detail::stage_resources(trial, p);
            resource_vector trial_usage = usage;
            trial_usage.dsp += after.dsp - before.dsp;
            trial_usage.bram += after.bram - before.bram;
            trial_usage.lut += after.lut - before.lut;
            if (!trial_usage.fits(p.budget)) continue;
            const double dcyc = static_cast<double>(cyc_before - stage_cycles(trial));
            const double dres = static_cast<double>(after.dsp - before.dsp) / std::max<index_t>(1, p.budget.dsp) +
                                static_cast<double>(after.bram - before.bram) / std::max<index_t>(1, p.budget.bram) +
                                static_cast<double>(after.lut - before.lut) / std::max<index_t>(1, p.budget.lut);
            options.push_back({is_p_in, nxt, dcyc / std::max(dres, 1e-12)});
        }
        if (options.empty()) break;  // fully unrolled or budget binds
        const move_option* best = &options[0];
        for (const auto& o : options)
            if (o.gain > best->gain) best = &o;

        const resource_vector old_res = detail::stage_resources(*bs, p);
        (best->is_p_in ? bs->p_in : bs->p_out) = best->value;
        const resource_vector new_res = detail::stage_resources(*bs, p);
        usage.dsp += new_res.dsp - old_res.dsp;
        usage.bram += new_res.bram - old_res.bram;
        usage.lut += new_res.lut - old_res.lut;
        ++moves;
    }

    if (!resource_usage(d, p).fits(p.budget)) throw budget_error("allocate_unrolling: internal budget violation");
    if (report) report->moves = moves;
    return d;
}

}  // namespace tdflow
