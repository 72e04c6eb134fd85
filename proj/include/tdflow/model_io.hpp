#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdflow/accel.hpp"
#include "tdflow/dse.hpp"
#include "tdflow/network.hpp"
#include "tdflow/surrogate.hpp"

namespace tdflow {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- raw float32 blobs -------------------------------------------------------

inline void write_blob_f32(const fs::path& path, std::span<const double> values) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write blob " + path.string());
    std::vector<float> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline std::vector<double> read_blob_f32(const fs::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw io_error("cannot read blob " + path.string());
    const auto bytes = static_cast<std::size_t>(f.tellg());
    if (bytes % sizeof(float) != 0) throw io_error("blob " + path.string() + " is not a float32 sequence");
    std::vector<float> buf(bytes / sizeof(float));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    return {buf.begin(), buf.end()};
}

// ---- model manifest ------------------------------------------------------------

inline json load_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw io_error("parse error in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void save_json(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

// Parses the manifest, reads the referenced float32 blobs and validates all
// shape invariants. A layer blob holds the weight tensor followed by the
// declared per-channel scale and bias vectors; layers without a blob get zero
// weights and an identity affine.
inline network_spec load_network(const fs::path& manifest_path) {
    const json j = load_json(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    network_spec net;
    try {
        net.input_m = j.at("input").at("height").get<index_t>();
        net.input_n = j.at("input").at("width").get<index_t>();
        net.input_c = j.at("input").at("channels").get<index_t>();
    } catch (const json::exception& e) {
        throw io_error(manifest_path.string() + ": bad input block: " + e.what());
    }

    for (const json& lj : j.at("layers")) {
        layer_spec l;
        try {
            l.id = lj.at("id").get<index_t>();
            l.kind = layer_kind_from(lj.at("kind").get<std::string>());
            l.c_in = lj.value("c_in", index_t{0});
            l.c_out = lj.value("c_out", l.c_in);
            l.k = lj.value("k", index_t{1});
            l.stride = lj.value("stride", index_t{1});
            l.padding = lj.value("padding", index_t{0});
            l.has_scale = lj.value("scale", false);
            l.has_bias = lj.value("bias", false);
            l.blob = lj.value("blob", std::string{});
            for (const json& p : lj.value("predecessors", json::array())) l.predecessors.push_back(p.get<index_t>());
        } catch (const json::exception& e) {
            throw io_error(manifest_path.string() + ": bad layer entry: " + e.what());
        }

        if (is_decomposable(l.kind) && !l.blob.empty()) {
            const std::vector<double> raw = read_blob_f32(dir / l.blob);
            const index_t want = l.weight_elems() + l.affine_elems();
            if (static_cast<index_t>(raw.size()) != want)
                throw io_error("layer " + std::to_string(l.id) + ": blob " + l.blob + " holds " +
                               std::to_string(raw.size()) + " values, expected " + std::to_string(want));
            const conv_shape s = l.weight_shape();
            net.weights.emplace(l.id, tensor({s.c_out, s.c_in, s.k, s.k},
                                             std::vector<double>(raw.begin(), raw.begin() + l.weight_elems())));
            auto it = raw.begin() + l.weight_elems();
            if (l.has_scale) {
                net.channel_scale[l.id] = std::vector<double>(it, it + l.c_out);
                it += l.c_out;
            }
            if (l.has_bias) net.channel_bias[l.id] = std::vector<double>(it, it + l.c_out);
        } else if (is_decomposable(l.kind)) {
            if (l.has_scale) net.channel_scale[l.id] = std::vector<double>(static_cast<std::size_t>(l.c_out), 1.0);
            if (l.has_bias) net.channel_bias[l.id] = std::vector<double>(static_cast<std::size_t>(l.c_out), 0.0);
        }
        net.layers.push_back(std::move(l));
    }
    net.finalize();
    return net;
}

// Writes manifest + blobs. Blob files are emitted only for layers with
// nonzero weights or declared affines.
inline void save_network(const network_spec& net, const fs::path& manifest_path) {
    const fs::path dir = manifest_path.parent_path();
    json j;
    j["input"] = {{"height", net.input_m}, {"width", net.input_n}, {"channels", net.input_c}};
    j["layers"] = json::array();
    for (const auto& l : net.layers) {
        json lj{{"id", l.id}, {"kind", to_string(l.kind)}};
        lj["c_in"] = l.c_in;
        if (is_decomposable(l.kind)) lj["c_out"] = l.c_out;
        if (l.kind == layer_kind::conv || l.kind == layer_kind::maxpool || l.kind == layer_kind::avgpool) {
            lj["k"] = l.k;
            lj["stride"] = l.stride;
            lj["padding"] = l.padding;
        }
        lj["predecessors"] = l.predecessors;
        if (l.has_scale) lj["scale"] = true;
        if (l.has_bias) lj["bias"] = true;
        if (is_decomposable(l.kind)) {
            const tensor& w = net.weights.at(l.id);
            const auto default_affine = [&](const std::unordered_map<index_t, std::vector<double>>& m, double val) {
                auto it = m.find(l.id);
                if (it == m.end()) return true;
                for (double v : it->second)
                    if (v != val) return false;
                return true;
            };
            const bool omit_blob = w.frobenius_norm() == 0.0 && default_affine(net.channel_scale, 1.0) &&
                                   default_affine(net.channel_bias, 0.0);
            if (!omit_blob) {
                std::vector<double> raw(w.values().begin(), w.values().end());
                if (l.has_scale) {
                    const auto& s = net.channel_scale.at(l.id);
                    raw.insert(raw.end(), s.begin(), s.end());
                }
                if (l.has_bias) {
                    const auto& b = net.channel_bias.at(l.id);
                    raw.insert(raw.end(), b.begin(), b.end());
                }
                const std::string blob = "layer" + std::to_string(l.id) + ".bin";
                write_blob_f32(dir / blob, raw);
                lj["blob"] = blob;
            }
        }
        j["layers"].push_back(std::move(lj));
    }
    save_json(manifest_path, j);
}

// ---- probe sets ------------------------------------------------------------------

inline probe_set load_probe(const fs::path& path) {
    const json j = load_json(path);
    probe_set p;
    const index_t b = j.at("batch").get<index_t>();
    const index_t m = j.at("height").get<index_t>();
    const index_t n = j.at("width").get<index_t>();
    const index_t c = j.at("channels").get<index_t>();
    const std::vector<double> raw = read_blob_f32(path.parent_path() / j.at("inputs").get<std::string>());
    if (static_cast<index_t>(raw.size()) != b * m * n * c)
        throw io_error("probe inputs blob size mismatch in " + path.string());
    p.inputs = tensor({b, m, n, c}, raw);
    for (const json& v : j.at("labels")) p.labels.push_back(v.get<index_t>());
    if (static_cast<index_t>(p.labels.size()) != b) throw io_error("probe label count mismatch in " + path.string());
    return p;
}

inline void save_probe(const probe_set& p, const fs::path& path) {
    const std::string blob = path.stem().string() + ".bin";
    write_blob_f32(path.parent_path() / blob, p.inputs.values());
    json j{{"batch", p.inputs.extent(0)},
           {"height", p.inputs.extent(1)},
           {"width", p.inputs.extent(2)},
           {"channels", p.inputs.extent(3)},
           {"inputs", blob},
           {"labels", p.labels}};
    save_json(path, j);
}

// ---- td-config files ------------------------------------------------------------

inline td_map load_td_config(const fs::path& path) {
    const json j = load_json(path);
    td_map td;
    for (const json& lj : j.at("layers")) {
        td_config cfg;
        const index_t id = lj.at("id").get<index_t>();
        const std::string f = lj.at("format").get<std::string>();
        if (f == "svd")
            cfg.format = td_format::svd;
        else if (f == "cpd")
            cfg.format = td_format::cpd;
        else
            throw io_error(path.string() + ": unknown format '" + f + "'");
        cfg.g1 = lj.at("g1").get<index_t>();
        cfg.g2 = lj.at("g2").get<index_t>();
        cfg.r = lj.at("r").get<index_t>();
        td[id] = cfg;
    }
    return td;
}

inline json td_to_json(const td_map& td) {
    json layers = json::array();
    for (const auto& [id, cfg] : td)
        layers.push_back({{"id", id}, {"format", to_string(cfg.format)}, {"g1", cfg.g1}, {"g2", cfg.g2}, {"r", cfg.r}});
    return json{{"layers", std::move(layers)}};
}

inline void save_td_config(const td_map& td, const fs::path& path) { save_json(path, td_to_json(td)); }

// ---- platform files ------------------------------------------------------------

inline platform load_platform(const fs::path& path) {
    const json j = load_json(path);
    platform p;
    p.name = j.value("name", p.name);
    p.clock_mhz = j.value("clock_mhz", p.clock_mhz);
    if (j.contains("budget")) {
        const json& b = j.at("budget");
        p.budget.dsp = b.value("dsp", p.budget.dsp);
        p.budget.bram = b.value("bram18k", p.budget.bram);
        p.budget.lut = b.value("lut", p.budget.lut);
        p.budget.uram = b.value("uram", p.budget.uram);
    }
    p.lut_per_lane = j.value("lut_per_lane", p.lut_per_lane);
    p.lut_overhead = j.value("lut_overhead", p.lut_overhead);
    p.word_bits = j.value("word_bits", p.word_bits);
    p.bram_block_bits = j.value("bram_block_bits", p.bram_block_bits);
    p.fifo_depth = j.value("fifo_depth", p.fifo_depth);
    if (p.clock_mhz <= 0) throw io_error(path.string() + ": clock must be positive");
    return p;
}

inline void save_platform(const platform& p, const fs::path& path) {
    json j{{"name", p.name},
           {"clock_mhz", p.clock_mhz},
           {"budget", {{"dsp", p.budget.dsp}, {"bram18k", p.budget.bram}, {"lut", p.budget.lut}, {"uram", p.budget.uram}}},
           {"lut_per_lane", p.lut_per_lane},
           {"lut_overhead", p.lut_overhead},
           {"word_bits", p.word_bits},
           {"bram_block_bits", p.bram_block_bits},
           {"fifo_depth", p.fifo_depth}};
    save_json(path, j);
}

// ---- decomposed model ------------------------------------------------------------

inline void save_decomposed_model(const std::map<index_t, decomposed_layer>& layers, const fs::path& manifest_path) {
    const fs::path dir = manifest_path.parent_path();
    json j;
    j["layers"] = json::array();
    for (const auto& [id, d] : layers) {
        json lj{{"id", id},
                {"format", to_string(d.config.format)},
                {"g1", d.config.g1},
                {"g2", d.config.g2},
                {"r", d.config.r},
                {"c_out", d.original.c_out},
                {"c_in", d.original.c_in},
                {"k", d.original.k}};
        json chunks = json::array();
        for (std::size_t ci = 0; ci < d.chunks.size(); ++ci) {
            const decomposed_chunk& c = d.chunks[ci];
            json cj{{"error", c.error}, {"converged", c.converged}};
            json factors = json::array();
            for (std::size_t fi = 0; fi < c.factors.size(); ++fi) {
                const std::string blob =
                    "layer" + std::to_string(id) + "_chunk" + std::to_string(ci) + "_f" + std::to_string(fi) + ".bin";
                write_blob_f32(dir / blob, c.factors[fi].values());
                factors.push_back({{"file", blob}, {"rows", c.factors[fi].extent(0)}, {"cols", c.factors[fi].extent(1)}});
            }
            cj["factors"] = std::move(factors);
            chunks.push_back(std::move(cj));
        }
        lj["chunks"] = std::move(chunks);
        j["layers"].push_back(std::move(lj));
    }
    save_json(manifest_path, j);
}

inline std::map<index_t, decomposed_layer> load_decomposed_model(const fs::path& manifest_path) {
    const json j = load_json(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    std::map<index_t, decomposed_layer> out;
    for (const json& lj : j.at("layers")) {
        decomposed_layer d;
        const index_t id = lj.at("id").get<index_t>();
        d.config.format = lj.at("format").get<std::string>() == "cpd" ? td_format::cpd : td_format::svd;
        d.config.g1 = lj.at("g1").get<index_t>();
        d.config.g2 = lj.at("g2").get<index_t>();
        d.config.r = lj.at("r").get<index_t>();
        d.original = {lj.at("c_out").get<index_t>(), lj.at("c_in").get<index_t>(), lj.at("k").get<index_t>()};
        for (const json& cj : lj.at("chunks")) {
            decomposed_chunk c;
            c.format = d.config.format;
            c.error = cj.value("error", 0.0);
            c.converged = cj.value("converged", true);
            for (const json& fj : cj.at("factors")) {
                const index_t rows = fj.at("rows").get<index_t>();
                const index_t cols = fj.at("cols").get<index_t>();
                std::vector<double> raw = read_blob_f32(dir / fj.at("file").get<std::string>());
                if (static_cast<index_t>(raw.size()) != rows * cols)
                    throw io_error("factor blob size mismatch in " + manifest_path.string());
                c.factors.emplace_back(shape_t{rows, cols}, std::move(raw));
            }
            d.chunks.push_back(std::move(c));
        }
        out.emplace(id, std::move(d));
    }
    return out;
}

// ---- forest + dataset ------------------------------------------------------------

inline void save_forest(const random_forest& f, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "tdflow-forest 1\n";
    out << "trees " << f.trees.size() << "\n";
    out << "max_depth " << f.hp.max_depth << "\n";
    out << "min_samples_leaf " << f.hp.min_samples_leaf << "\n";
    out << "feature_fraction " << fmt_double(f.hp.feature_fraction) << "\n";
    out << "bootstrap " << (f.hp.bootstrap ? 1 : 0) << "\n";
    out << "seed " << f.hp.seed << "\n";
    out << "features " << f.feature_count << "\n";
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
        out << "tree " << t << " " << f.trees[t].nodes.size() << "\n";
        for (std::size_t n = 0; n < f.trees[t].nodes.size(); ++n) {
            const rf_node& nd = f.trees[t].nodes[n];
            out << n << " " << nd.feature << " " << fmt_double(nd.feature >= 0 ? nd.threshold : nd.value) << " "
                << nd.left << " " << nd.right << "\n";
        }
    }
}

inline random_forest load_forest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read " + path.string());
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "tdflow-forest" || version != 1) throw io_error(path.string() + ": not a forest file");
    random_forest f;
    std::size_t ntrees = 0;
    std::string key;
    while (in >> key) {
        if (key == "trees")
            in >> ntrees;
        else if (key == "max_depth")
            in >> f.hp.max_depth;
        else if (key == "min_samples_leaf")
            in >> f.hp.min_samples_leaf;
        else if (key == "feature_fraction")
            in >> f.hp.feature_fraction;
        else if (key == "bootstrap") {
            int b;
            in >> b;
            f.hp.bootstrap = b != 0;
        } else if (key == "seed")
            in >> f.hp.seed;
        else if (key == "features")
            in >> f.feature_count;
        else if (key == "tree") {
            std::size_t idx = 0, nodes = 0;
            in >> idx >> nodes;
            rf_tree tree;
            tree.nodes.resize(nodes);
            for (std::size_t n = 0; n < nodes; ++n) {
                std::size_t ni;
                rf_node nd;
                double third;
                in >> ni >> nd.feature >> third >> nd.left >> nd.right;
                (nd.feature >= 0 ? nd.threshold : nd.value) = third;
                tree.nodes[ni] = nd;
            }
            f.trees.push_back(std::move(tree));
        } else {
            throw io_error(path.string() + ": unexpected token '" + key + "'");
        }
    }
    f.hp.trees = static_cast<index_t>(f.trees.size());
    if (f.trees.size() != ntrees) throw io_error(path.string() + ": tree count mismatch");
    return f;
}

inline void save_dataset(const rf_dataset& ds, const feature_layout& layout, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    const auto names = layout.names();
    for (const auto& n : names) out << n << ",";
    out << "fps\n";
    for (const auto& [x, fps] : ds) {
        for (double v : x) out << fmt_double(v) << ",";
        out << fmt_double(fps) << "\n";
    }
}

inline rf_dataset load_dataset(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw io_error(path.string() + ": empty dataset");
    rf_dataset ds;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw io_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() < 2) throw io_error(path.string() + ":" + std::to_string(lineno) + ": too few columns");
        const double fps = row.back();
        row.pop_back();
        ds.emplace_back(std::move(row), fps);
    }
    return ds;
}

// ---- search artifacts ------------------------------------------------------------

// Candidate log: deterministic given the seed (no wall-clock content).
inline void save_search_log(const std::vector<search_log_row>& rows, format_mode mode, evaluator_kind ev,
                            const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "# format-mode=" << to_string(mode) << " evaluator=" << to_string(ev) << "\n";
    out << "step,candidate,hash,accuracy,fps,source,valid\n";
    for (const auto& r : rows)
        out << r.step << "," << r.candidate << "," << r.hash << "," << fmt_double(r.accuracy) << ","
            << fmt_double(r.fps) << "," << to_string(r.source) << "," << (r.valid ? 1 : 0) << "\n";
}

// Step summaries carry wall time; kept separate so the candidate log stays
// byte-reproducible.
inline void save_step_summaries(const std::vector<step_summary>& steps, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "step,best_accuracy,median_accuracy,evaluated,wall_seconds\n";
    for (const auto& s : steps)
        out << s.step << "," << fmt_double(s.best_accuracy) << "," << fmt_double(s.median_accuracy) << ","
            << s.evaluated << "," << fmt_double(s.wall_seconds) << "\n";
}

inline void save_ranked_designs(const std::vector<design_point>& pop, const network_spec& net, const fs::path& path) {
    json j = json::array();
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto& d = pop[i];
        json dj{{"rank", i},
                {"hash", td_hash(d.td)},
                {"accuracy", d.cached ? d.cached->proxy_accuracy : 0.0},
                {"fps", d.cached ? d.cached->fps : 0.0},
                {"source", d.cached ? to_string(d.cached->source) : "?"},
                {"params", d.stored_params(net)}};
        dj["td"] = td_to_json(d.td);
        j.push_back(std::move(dj));
    }
    save_json(path, j);
}

}  // namespace tdflow
