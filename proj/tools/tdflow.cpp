// Command-line front end: decompose weights, evaluate/allocate accelerator
// designs, run the constrained evolutionary search, and summarize run logs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdflow/dse.hpp"
#include "tdflow/model_io.hpp"
#include "tdflow/zoo.hpp"

namespace {

constexpr int exit_config = 2;      // bad configuration or arguments
constexpr int exit_infeasible = 3;  // constraints cannot be met
constexpr int exit_io = 4;          // missing or malformed files

using namespace tdflow;
namespace fs = std::filesystem;

struct decompose_args {
    std::string model, td, out;
    std::uint64_t seed = 1;
    int workers = 1;
};

int cmd_decompose(const decompose_args& a) {
    const network_spec net = load_network(a.model);
    const td_map td = load_td_config(a.td);
    for (const auto& l : net.layers)
        if (is_decomposable(l.kind) && !td.count(l.id))
            throw config_error("td-config misses layer " + std::to_string(l.id));

    als_settings als;
    als.seed = a.seed;

    std::vector<index_t> ids;
    for (const auto& [id, cfg] : td) ids.push_back(id);
    std::vector<decomposed_layer> results(ids.size());
    const auto work = [&](std::size_t i) {
        const index_t id = ids[i];
        als_settings layer_als = als;
        layer_als.seed = derive_seed(als.seed, static_cast<std::uint64_t>(id));
        results[i] = decompose_layer(net.weights.at(id), td.at(id), layer_als);
    };
    if (a.workers > 1) {
        std::vector<std::future<void>> futs;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < a.workers; ++w)
            futs.push_back(std::async(std::launch::async, [&] {
                for (std::size_t i = next.fetch_add(1); i < ids.size(); i = next.fetch_add(1)) work(i);
            }));
        for (auto& f : futs) f.get();
    } else {
        for (std::size_t i = 0; i < ids.size(); ++i) work(i);
    }

    fs::create_directories(a.out);
    std::map<index_t, decomposed_layer> by_id;
    for (std::size_t i = 0; i < ids.size(); ++i) by_id.emplace(ids[i], std::move(results[i]));
    save_decomposed_model(by_id, fs::path(a.out) / "decomposed.json");

    std::printf("layer,format,g1,g2,r,params_orig,params_td,rel_error,converged\n");
    index_t orig_total = 0, td_total = 0;
    for (const auto& [id, d] : by_id) {
        const layer_spec& l = net.layer_by_id(id);
        const recon_error err = reconstruction_error(d, net.weights.at(id));
        bool converged = true;
        for (const auto& c : d.chunks) converged &= c.converged;
        orig_total += l.weight_elems();
        td_total += d.param_count();
        std::printf("%lld,%s,%lld,%lld,%lld,%lld,%lld,%.6g,%d\n", static_cast<long long>(id),
                    to_string(d.config.format), static_cast<long long>(d.config.g1),
                    static_cast<long long>(d.config.g2), static_cast<long long>(d.config.r),
                    static_cast<long long>(l.weight_elems()), static_cast<long long>(d.param_count()), err.value,
                    converged ? 1 : 0);
    }
    const double ratio = static_cast<double>(orig_total) / static_cast<double>(td_total);
    std::printf("total,,,,,%lld,%lld,,\n", static_cast<long long>(orig_total), static_cast<long long>(td_total));
    std::printf("# compression ratio: %.4gx%s\n", ratio, ratio < 1.0 ? " (expansion: td stores more than original)" : "");
    std::printf("# memory(8-bit): %.3f Mb -> %.3f Mb\n", static_cast<double>(count_memory_bits(net, nullptr, 8)) / 1e6,
                static_cast<double>(count_memory_bits(net, &td, 8)) / 1e6);
    return 0;
}

struct evaluate_args {
    std::string model, td, plat, probe, out;
    std::uint64_t seed = 1;
    index_t batch = 256;
    bool with_accuracy = true;
};

int cmd_evaluate(const evaluate_args& a) {
    const network_spec net = load_network(a.model);
    const td_map td = load_td_config(a.td);
    const platform plat = load_platform(a.plat);

    const pipeline_design design = allocate_unrolling(net, td, plat);
    const resource_vector usage = resource_usage(design, plat);

    std::ostringstream table;
    table << "layer,kind,group,stage,spatial,reduce,expand,p_in,p_out,cycles,weight_words\n";
    index_t total_cycles_check = 0;
    for (const auto& e : design.engines) {
        for (std::size_t si = 0; si < e.stages.size(); ++si) {
            const stage_model& s = e.stages[si];
            table << e.layer_id << ","
                  << (e.kind == engine_kind::svd ? "svd" : e.kind == engine_kind::cpd ? "cpd" : "passthrough") << ","
                  << e.group_index << "," << si << "," << s.spatial_positions << "," << s.reduce_size << ","
                  << s.expand_size << "," << s.p_in << "," << s.p_out << "," << stage_cycles(s) << ","
                  << s.weight_words << "\n";
            total_cycles_check = std::max(total_cycles_check, stage_cycles(s));
        }
    }
    std::cout << table.str();
    std::printf("# initiation interval: %lld cycles\n", static_cast<long long>(design.initiation_interval()));
    std::printf("# pipeline depth: %lld cycles\n", static_cast<long long>(design.depth_cycles()));
    std::printf("# fps batch-1: %.2f\n", pipeline_fps(design, 1));
    std::printf("# fps batch-%lld: %.2f\n", static_cast<long long>(a.batch), pipeline_fps(design, a.batch));
    std::printf("# fps peak: %.2f\n", peak_fps(design));
    std::printf("# resources: dsp %lld/%lld, bram %lld/%lld, lut %lld/%lld, uram %lld/%lld\n",
                static_cast<long long>(usage.dsp), static_cast<long long>(plat.budget.dsp),
                static_cast<long long>(usage.bram), static_cast<long long>(plat.budget.bram),
                static_cast<long long>(usage.lut), static_cast<long long>(plat.budget.lut),
                static_cast<long long>(usage.uram), static_cast<long long>(plat.budget.uram));

    if (a.with_accuracy) {
        proxy_settings proxy;
        if (!a.probe.empty()) proxy.probe = load_probe(a.probe);
        proxy.als.seed = a.seed;
        dse_evaluator eval(net, plat, proxy);
        std::printf("# proxy accuracy (%s): %.6f\n", a.probe.empty() ? "reconstruction" : "labeled",
                    eval.accuracy(td));
    }

    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw io_error("cannot write " + a.out);
        f << table.str();
    }
    return 0;
}

struct search_args {
    std::string model, plat, probe, out;
    std::uint64_t seed = 1;
    double fps_target = 0.0;
    std::string evaluator = "exact";
    std::string mode = "mixed";
    index_t population = 32, children = 32, steps = 20;
    index_t surrogate_start = 3;
    index_t max_group = 4;
    double mutation_rate = 0.1;
    int workers = 1;
};

int cmd_search(const search_args& a) {
    const network_spec net = load_network(a.model);
    const platform plat = load_platform(a.plat);

    choice_options copt;
    copt.formats = format_mode_from(a.mode);
    copt.max_group = a.max_group;
    const choice_map choices = build_choice_sets(net, copt);
    const space_size sz = design_space_size(choices);
    if (sz.saturated)
        std::fprintf(stderr, "design space: ~1e%.1f points\n", sz.log10_count);
    else
        std::fprintf(stderr, "design space: %llu points\n", static_cast<unsigned long long>(sz.count));

    proxy_settings proxy;
    if (!a.probe.empty()) proxy.probe = load_probe(a.probe);
    proxy.als.seed = a.seed;
    dse_evaluator eval(net, plat, proxy);

    search_config cfg;
    cfg.population = a.population;
    cfg.children = a.children;
    cfg.max_steps = a.steps;
    cfg.mutation_rate = a.mutation_rate;
    cfg.fps_target = a.fps_target;
    cfg.seed = a.seed;
    cfg.evaluator = evaluator_kind_from(a.evaluator);
    cfg.surrogate_start_step = a.surrogate_start;

    const search_result res = search(eval, choices, cfg);

    fs::create_directories(a.out);
    const fs::path out(a.out);
    save_search_log(res.log, copt.formats, cfg.evaluator, out / "search_log.csv");
    save_step_summaries(res.steps, out / "steps.csv");
    save_ranked_designs(res.population, net, out / "designs.json");
    save_dataset(res.dataset, eval.layout(), out / "dataset.csv");
    if (res.forest) save_forest(*res.forest, out / "forest.txt");
    if (!res.population.empty()) save_td_config(res.population.front().td, out / "best_td.json");

    const auto& best = res.population.front();
    std::printf("best: accuracy=%.6f fps=%.2f params=%lld hash=%s\n", best.cached->proxy_accuracy, best.cached->fps,
                static_cast<long long>(best.stored_params(net)), td_hash(best.td).c_str());
    if (res.gate_metrics)
        std::printf("surrogate gate: median_rel_err=%.4f r2=%.4f (%s)\n", res.gate_metrics->median_rel_err,
                    res.gate_metrics->r2, res.surrogate_active ? "active" : "stayed exact");
    std::printf("evaluations: %lld, exact labels: %zu\n", static_cast<long long>(res.total_evaluations),
                res.dataset.size());
    return 0;
}

struct report_args {
    std::vector<std::string> runs;
    std::string out;
};

struct run_summary {
    std::string name, mode = "?", evaluator = "?";
    index_t rows = 0;
    double wall_seconds = 0.0;
    std::vector<std::pair<double, double>> best_over_time;  // wall seconds -> best accuracy
};

run_summary read_run(const fs::path& dir) {
    run_summary rs;
    rs.name = dir.filename().string();

    const fs::path logp = dir / "search_log.csv";
    std::ifstream log(logp);
    if (!log) throw io_error("cannot read " + logp.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(log, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto mpos = line.find("format-mode=");
            const auto epos = line.find("evaluator=");
            if (mpos != std::string::npos) rs.mode = line.substr(mpos + 12, line.find(' ', mpos + 12) - mpos - 12);
            if (epos != std::string::npos) rs.evaluator = line.substr(epos + 10);
            continue;
        }
        if (line.rfind("step,", 0) == 0) continue;  // header
        const auto commas = std::count(line.begin(), line.end(), ',');
        if (commas != 6) throw io_error(logp.string() + ":" + std::to_string(lineno) + ": malformed row");
        ++rs.rows;
    }

    const fs::path stepsp = dir / "steps.csv";
    std::ifstream steps(stepsp);
    if (!steps) throw io_error("cannot read " + stepsp.string());
    lineno = 0;
    while (std::getline(steps, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw io_error(stepsp.string() + ":" + std::to_string(lineno) + ": malformed row");
        try {
            const double best = std::stod(cells[1]);
            const double wall = std::stod(cells[4]);
            rs.best_over_time.emplace_back(wall, best);
            rs.wall_seconds = std::max(rs.wall_seconds, wall);
        } catch (const std::exception&) {
            throw io_error(stepsp.string() + ":" + std::to_string(lineno) + ": bad number");
        }
    }
    return rs;
}

int cmd_report(const report_args& a) {
    std::vector<run_summary> runs;
    for (const auto& r : a.runs) runs.push_back(read_run(r));

    fs::create_directories(a.out);
    {
        std::ofstream f(fs::path(a.out) / "accuracy_vs_time.csv");
        f << "run,format_mode,evaluator,wall_seconds,best_accuracy\n";
        for (const auto& r : runs)
            for (const auto& [wall, best] : r.best_over_time)
                f << r.name << "," << r.mode << "," << r.evaluator << "," << fmt_double(wall) << ","
                  << fmt_double(best) << "\n";
    }
    {
        std::ofstream f(fs::path(a.out) / "rates.csv");
        f << "run,format_mode,evaluator,designs_evaluated,wall_seconds,designs_per_hour\n";
        for (const auto& r : runs) {
            const double per_hour = r.wall_seconds > 0.0 ? static_cast<double>(r.rows) / r.wall_seconds * 3600.0 : 0.0;
            f << r.name << "," << r.mode << "," << r.evaluator << "," << r.rows << "," << fmt_double(r.wall_seconds)
              << "," << fmt_double(per_hour) << "\n";
        }
    }
    {
        std::ofstream f(fs::path(a.out) / "compression.csv");
        f << "run,rank,accuracy,fps,params\n";
        for (const auto& r : runs) {
            const fs::path designs = fs::path(a.runs[&r - runs.data()]) / "designs.json";
            if (!fs::exists(designs)) continue;
            const json dj = load_json(designs);
            for (const auto& d : dj)
                f << r.name << "," << d.value("rank", -1) << "," << fmt_double(d.value("accuracy", 0.0)) << ","
                  << fmt_double(d.value("fps", 0.0)) << "," << d.value("params", 0) << "\n";
        }
    }
    std::printf("wrote %zu run summaries to %s\n", runs.size(), a.out.c_str());
    return 0;
}

struct fixtures_args {
    std::string out;
    std::uint64_t seed = 1;
};

int cmd_fixtures(const fixtures_args& a) {
    const fs::path out(a.out);
    fs::create_directories(out / "tiny-cnn");
    fs::create_directories(out / "tiny-classifier");
    fs::create_directories(out / "resnet18-shapes");

    save_network(zoo::tiny_cnn(a.seed), out / "tiny-cnn" / "model.json");

    const network_spec cls = zoo::tiny_classifier(a.seed);
    save_network(cls, out / "tiny-classifier" / "model.json");
    save_probe(zoo::random_probe(cls, 16, 4, a.seed), out / "tiny-classifier" / "probe.json");

    const network_spec rn = zoo::resnet18_shapes();
    save_network(rn, out / "resnet18-shapes" / "model.json");
    save_td_config(zoo::resnet18_reference_td(rn), out / "resnet18-shapes" / "reference-td.json");

    save_platform(platform{}, out / "u250.json");

    // toy td-config for the tiny nets
    td_map toy;
    for (const auto& l : zoo::tiny_cnn(a.seed).layers) toy[l.id] = {td_format::svd, 1, 1, 2};
    save_td_config(toy, out / "tiny-cnn" / "td.json");

    std::printf("fixtures written to %s\n", a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tensor-decomposition compression with a dataflow-accelerator model and design search"};
    app.require_subcommand(1);

    decompose_args da;
    auto* dec = app.add_subcommand("decompose", "decompose model weights per a td-config and write factor blobs");
    dec->add_option("--model", da.model, "model manifest")->required();
    dec->add_option("--td-config", da.td, "per-layer decomposition config")->required();
    dec->add_option("--out", da.out, "output directory")->required();
    dec->add_option("--seed", da.seed, "rng seed");
    dec->add_option("--workers", da.workers, "worker threads for layer decomposition");

    evaluate_args ea;
    auto* ev = app.add_subcommand("evaluate", "allocate unrolls and report fps, resources and proxy accuracy");
    ev->add_option("--model", ea.model, "model manifest")->required();
    ev->add_option("--td-config", ea.td, "per-layer decomposition config")->required();
    ev->add_option("--platform", ea.plat, "platform description")->required();
    ev->add_option("--probe", ea.probe, "probe set for labeled accuracy");
    ev->add_option("--out", ea.out, "write the per-stage table to this file");
    ev->add_option("--seed", ea.seed, "rng seed");
    ev->add_option("--batch", ea.batch, "batch size for the reported fps");

    evaluate_args aa;
    aa.with_accuracy = false;
    auto* al = app.add_subcommand("allocate", "allocate unrolls and print the design report only");
    al->add_option("--model", aa.model, "model manifest")->required();
    al->add_option("--td-config", aa.td, "per-layer decomposition config")->required();
    al->add_option("--platform", aa.plat, "platform description")->required();
    al->add_option("--out", aa.out, "write the per-stage table to this file");
    al->add_option("--batch", aa.batch, "batch size for the reported fps");

    search_args sa;
    auto* se = app.add_subcommand("search", "constrained evolutionary search over decomposition configs");
    se->add_option("--model", sa.model, "model manifest")->required();
    se->add_option("--platform", sa.plat, "platform description")->required();
    se->add_option("--probe", sa.probe, "probe set for labeled accuracy (reconstruction proxy otherwise)");
    se->add_option("--out", sa.out, "output directory for logs and designs")->required();
    se->add_option("--seed", sa.seed, "rng seed");
    se->add_option("--fps-target", sa.fps_target, "throughput constraint");
    se->add_option("--evaluator", sa.evaluator, "exact | surrogate | mac-baseline");
    se->add_option("--format-mode", sa.mode, "mixed | svd-only | cpd-only");
    se->add_option("--population", sa.population, "population size");
    se->add_option("--children", sa.children, "children per step (even)");
    se->add_option("--steps", sa.steps, "search steps");
    se->add_option("--mutation-rate", sa.mutation_rate, "per-gene mutation probability");
    se->add_option("--surrogate-start", sa.surrogate_start, "exact warmup steps before handoff");
    se->add_option("--max-group", sa.max_group, "largest channel group in the choice sets");
    se->add_option("--workers", sa.workers, "worker threads");

    report_args ra;
    auto* re = app.add_subcommand("report", "summarize one or more search runs into csv tables");
    re->add_option("--run", ra.runs, "search output directory (repeatable)")->required();
    re->add_option("--out", ra.out, "output directory")->required();

    fixtures_args fa;
    auto* fx = app.add_subcommand("fixtures", "write the built-in example models, probe, platform and td-configs");
    fx->add_option("--out", fa.out, "output directory")->required();
    fx->add_option("--seed", fa.seed, "rng seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*dec) return cmd_decompose(da);
        if (*ev) return cmd_evaluate(ea);
        if (*al) return cmd_evaluate(aa);
        if (*se) return cmd_search(sa);
        if (*re) return cmd_report(ra);
        if (*fx) return cmd_fixtures(fa);
    } catch (const budget_error& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return exit_infeasible;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return exit_io;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const rank_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const shape_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
