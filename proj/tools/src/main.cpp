#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cola/checkpoint.hpp"
#include "cola/model.hpp"
#include "cola/sim.hpp"
#include "cola/trainer.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using namespace cola;
using json = nlohmann::json;

namespace {

int worker_count() {
    if (const char* env = std::getenv("COLA_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      uint64_t seed, bool seed_given) {
    RunConfig cfg;
    if (!path.empty()) cfg.load(path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw config_error("--set expects key=value, got " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_given) cfg.seed = seed;
    cfg.validate();
    return cfg;
}

std::string clusters_path(const std::string& data_path) { return data_path + ".clusters.json"; }

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out, int n) {
    if (n == 0) {
        write_dataset({}, out);
        cfg.save(out + ".config");
        std::cout << "wrote empty dataset to " << out << "\n";
        return 0;
    }
    Dataset d = generate_dataset(cfg, n, cfg.seed);
    write_dataset(d.samples, out);
    write_clusters(d.clusters, clusters_path(out));
    cfg.save(out + ".config");
    std::cout << "wrote " << d.samples.size() << " samples to " << out << " ("
              << d.clusters.count() << " clusters)\n";
    return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, const std::string& data, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<SceneSample> samples = read_dataset(data);
    if (samples.empty()) throw parse_error("dataset is empty: " + data);
    ClusterModel clusters = read_clusters(clusters_path(data));

    ColaModel<float> model(cfg, cfg.seed);
    model.set_clusters(clusters);
    cfg.save(out_dir + "/config.txt");

    const std::string ckpt = out_dir + "/model.ckpt";
    save_checkpoint(ckpt, model.state());  // last-good fallback if training aborts

    std::vector<TrainStepLog> log;
    try {
        TrainResult res = train_model<float>(
            model, samples, cfg.seed, true, [&](const TrainStepLog& r) {
                log.push_back(r);
                save_checkpoint(ckpt, model.state());
                write_train_csv(log, out_dir + "/metrics.csv");
            });
        (void)res;
    } catch (const numeric_error& e) {
        write_train_csv(log, out_dir + "/metrics.csv");
        std::cerr << "training aborted (" << e.what() << "); last-good checkpoint kept at "
                  << ckpt << "\n";
        throw;
    }

    const size_t n_eval = std::min<size_t>(samples.size(), 200);
    std::vector<SceneSample> eval_set(samples.begin(), samples.begin() + n_eval);
    const double acc = eval_accuracy(model, eval_set);
    std::vector<Trajectory> preds = predict_trajectories(model, eval_set, cfg.candidates);
    OpenLoopMetrics m = eval_open_loop(eval_set, preds, cfg);
    std::cout << "final maneuver accuracy " << acc << "\n"
              << "open-loop L2 avg " << m.l2_avg << " m\n"
              << "checkpoint: " << ckpt << "\n";
    return 0;
}

// ---- eval -------------------------------------------------------------------

void load_model(ColaModel<float>& model, const std::string& ckpt) {
    load_checkpoint(ckpt, model.state());
}

int cmd_eval_open(const RunConfig& cfg, const std::string& ckpt, const std::string& data,
                  const std::string& out_prefix) {
    std::vector<SceneSample> samples = read_dataset(data);
    if (samples.empty()) throw parse_error("dataset is empty: " + data);
    ColaModel<float> model(cfg, cfg.seed);
    model.set_clusters(read_clusters(clusters_path(data)));
    load_model(model, ckpt);

    std::vector<Trajectory> preds;
    std::ofstream traj_out(out_prefix + ".trajectories.jsonl");
    for (const auto& s : samples) {
        PlanOutput<float> plan = model.plan(s, cfg.candidates);
        const auto& best = plan.candidates[plan.best];
        preds.push_back(best.finest());
        json scales = json::array();
        for (const auto& traj : best.per_scale) {
            json pts = json::array();
            for (const auto& w : traj) pts.push_back({w[0], w[1]});
            scales.push_back(pts);
        }
        json gt = json::array();
        for (const auto& w : s.gt) gt.push_back({w[0], w[1]});
        traj_out << json{{"id", s.id}, {"gt", gt}, {"scales", scales}}.dump() << "\n";
    }

    OpenLoopMetrics m = eval_open_loop(samples, preds, cfg);
    std::vector<Trajectory> cv;
    for (const auto& s : samples)
        cv.push_back(constant_velocity_prediction(s.ego, cfg.horizon, cfg.step_dt));
    OpenLoopMetrics base = eval_open_loop(samples, cv, cfg);

    std::ofstream csv(out_prefix + ".open.csv");
    csv << "method,l2_1s,l2_2s,l2_3s,l2_avg,col_1s,col_2s,col_3s,col_avg\n";
    auto row = [&](const char* name, const OpenLoopMetrics& x) {
        csv << name << "," << x.l2[0] << "," << x.l2[1] << "," << x.l2[2] << "," << x.l2_avg
            << "," << x.collision[0] << "," << x.collision[1] << "," << x.collision[2] << ","
            << x.collision_avg << "\n";
    };
    row("model", m);
    row("const_velocity", base);

    std::cout << "               L2 (m)                Col. Rate\n";
    std::cout << "method         1s     2s     3s     Avg    1s     2s     3s     Avg\n";
    auto line = [&](const char* name, const OpenLoopMetrics& x) {
        std::cout << name << "  " << x.l2[0] << " " << x.l2[1] << " " << x.l2[2] << " "
                  << x.l2_avg << "   " << x.collision[0] << " " << x.collision[1] << " "
                  << x.collision[2] << " " << x.collision_avg << "\n";
    };
    line("model        ", m);
    line("const-velocity", base);
    return 0;
}

std::vector<EpisodeResult> run_suite(const std::vector<Scenario>& suite, const PlannerFn& planner,
                                     const RunConfig& cfg, int threads) {
    std::vector<EpisodeResult> results(suite.size());
    std::mutex next_mu;
    size_t next = 0;
    auto work = [&] {
        for (;;) {
            size_t i;
            {
                std::lock_guard<std::mutex> lock(next_mu);
                if (next >= suite.size()) return;
                i = next++;
            }
            results[i] = run_episode(suite[i], planner, cfg);
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(threads, static_cast<int>(suite.size()));
    for (int i = 1; i < n; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    return results;
}

int cmd_eval_closed(const RunConfig& cfg, const std::string& ckpt,
                    const std::string& scenarios_path, const std::string& agent,
                    const std::string& out_prefix) {
    std::vector<Scenario> suite = scenarios_path.empty()
                                      ? make_scenario_suite(10, cfg.seed, cfg)
                                      : read_scenarios(scenarios_path);

    PlannerFn planner;
    ColaModel<float> model(cfg, cfg.seed);
    if (agent == "model") {
        load_model(model, ckpt);
        planner = [&](const SceneSample& s) {
            // top-1 driving strategy only
            PlanOutput<float> p = model.plan(s, 1);
            return p.candidates[0].finest();
        };
    } else if (agent == "const-velocity") {
        planner = [&](const SceneSample& s) { return const_velocity_plan(s, cfg); };
    } else if (agent == "noop") {
        planner = [&](const SceneSample& s) { return noop_plan(s, cfg); };
    } else {
        throw config_error("unknown agent: " + agent);
    }

    std::vector<EpisodeResult> results = run_suite(suite, planner, cfg, worker_count());
    write_episode_csv(results, out_prefix + ".closed.csv");
    ClosedLoopSummary sum = summarize_episodes(results);
    std::cout << "agent " << agent << "\n"
              << "        Avg    Stat.  Frontal Side\n"
              << "score   " << sum.avg_score << "  " << sum.score_by_kind[0] << "  "
              << sum.score_by_kind[1] << "  " << sum.score_by_kind[2] << "\n"
              << "collision rate " << sum.collision_rate << "\n";
    return 0;
}

// ---- bench ------------------------------------------------------------------

int cmd_bench(const RunConfig& cfg, const std::string& ckpt, const std::string& mode,
              int repeats) {
    ColaModel<float> model(cfg, cfg.seed);
    if (!ckpt.empty()) load_model(model, ckpt);
    SceneSample scene = generate_scene(cfg.seed + 1, Family::cruise, cfg);

    auto time_fn = [&](auto&& fn, const char* name, long expect_passes) {
        fn();  // warm-up
        std::vector<double> ms;
        for (int i = 0; i < repeats; ++i) {
            model.backbone().reset_pass_count();
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            const auto t1 = std::chrono::steady_clock::now();
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            if (model.backbone().pass_count() != expect_passes)
                throw contract_error("unexpected pass count in bench");
        }
        std::sort(ms.begin(), ms.end());
        const double median = ms[ms.size() / 2];
        const double p95 = ms[static_cast<size_t>(0.95 * (ms.size() - 1))];
        std::cout << name << ": median " << median << " ms, p95 " << p95 << " ms, "
                  << expect_passes << " backbone passes\n";
        return median;
    };

    double par = 0, ar = 0;
    if (mode == "parallel" || mode == "both")
        par = time_fn([&] { model.plan(scene, 1); }, "parallel", 3);
    if (mode == "autoregressive" || mode == "both")
        ar = time_fn([&] { model.plan_autoregressive(scene); }, "autoregressive",
                     2 + cfg.horizon);
    if (mode == "both" && par > 0)
        std::cout << "speedup " << ar / par << "x\n";
    return 0;
}

// ---- plot -------------------------------------------------------------------

struct SvgCanvas {
    std::ostringstream body;
    double x0, x1, y0, y1;  // data bounds
    int w = 640, h = 480;

    double px(double x) const { return 40 + (x - x0) / (x1 - x0) * (w - 60); }
    double py(double y) const { return h - 40 - (y - y0) / (y1 - y0) * (h - 60); }

    void polyline(const std::vector<std::array<double, 2>>& pts, const std::string& stroke,
                  const std::string& dash = "") {
        body << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\"";
        if (!dash.empty()) body << " stroke-dasharray=\"" << dash << "\"";
        body << " points=\"";
        for (const auto& p : pts) body << px(p[0]) << "," << py(p[1]) << " ";
        body << "\"/>\n";
    }

    void text(double x, double y, const std::string& s, const std::string& fill = "#333") {
        body << "<text x=\"" << x << "\" y=\"" << y << "\" fill=\"" << fill
             << "\" font-size=\"11\" font-family=\"monospace\">" << s << "</text>\n";
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw parse_error("cannot open for writing: " + path);
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body.str() << "</svg>\n";
    }
};

const char* kScaleColors[] = {"#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

int plot_trajectories(const std::string& path, const std::string& out_dir, int max_scenes) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open: " + path);
    std::string line;
    int made = 0, line_no = 0;
    while (std::getline(in, line) && made < max_scenes) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw parse_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        std::vector<std::array<double, 2>> gt;
        for (const auto& p : j.at("gt")) gt.push_back({p[0], p[1]});
        std::vector<std::vector<std::array<double, 2>>> scales;
        for (const auto& traj : j.at("scales")) {
            std::vector<std::array<double, 2>> pts;
            for (const auto& p : traj) pts.push_back({p[0], p[1]});
            scales.push_back(pts);
        }
        SvgCanvas svg;
        svg.x0 = svg.y0 = 1e300;
        svg.x1 = svg.y1 = -1e300;
        auto grow = [&](const std::vector<std::array<double, 2>>& pts) {
            for (const auto& p : pts) {
                svg.x0 = std::min(svg.x0, p[0]);
                svg.x1 = std::max(svg.x1, p[0]);
                svg.y0 = std::min(svg.y0, p[1]);
                svg.y1 = std::max(svg.y1, p[1]);
            }
        };
        grow(gt);
        for (const auto& s : scales) grow(s);
        svg.x0 -= 2;
        svg.x1 += 2;
        svg.y0 -= 2;
        svg.y1 += 2;
        svg.polyline(gt, "#000000");
        svg.text(48, 20, "gt (black) vs per-scale predictions");
        for (size_t s = 0; s < scales.size(); ++s) {
            svg.polyline(scales[s], kScaleColors[s % 5], s + 1 < scales.size() ? "4,3" : "");
            svg.text(48, 34 + 12 * s, "scale " + std::to_string(s + 1), kScaleColors[s % 5]);
        }
        const uint64_t id = j.at("id");
        svg.save(out_dir + "/scene_" + std::to_string(id) + ".svg");
        ++made;
    }
    std::cout << "wrote " << made << " scene plots to " << out_dir << "\n";
    return 0;
}

int plot_training(const std::string& path, const std::string& out_dir) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open: " + path);
    std::string header;
    std::getline(in, header);
    std::vector<std::array<double, 2>> loss, acc;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<double> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                cells.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw parse_error("malformed CSV cell: " + cell);
            }
        }
        if (cells.size() < 8) throw parse_error("malformed metrics row: " + line);
        loss.push_back({cells[0], cells[1]});
        acc.push_back({cells[0], cells[7]});
    }
    if (loss.empty()) {
        std::cerr << "warning: no data rows in " << path << "; nothing to plot\n";
        return 0;
    }
    auto curve = [&](const std::vector<std::array<double, 2>>& pts, const std::string& name,
                     const std::string& color) {
        SvgCanvas svg;
        svg.x0 = svg.y0 = 1e300;
        svg.x1 = svg.y1 = -1e300;
        for (const auto& p : pts) {
            svg.x0 = std::min(svg.x0, p[0]);
            svg.x1 = std::max(svg.x1, p[0]);
            svg.y0 = std::min(svg.y0, p[1]);
            svg.y1 = std::max(svg.y1, p[1]);
        }
        if (svg.x1 == svg.x0) svg.x1 += 1;
        if (svg.y1 == svg.y0) svg.y1 += 1;
        svg.polyline(pts, color);
        svg.text(48, 20, name + " vs step");
        svg.save(out_dir + "/" + name + ".svg");
    };
    curve(loss, "loss", "#1f77b4");
    curve(acc, "accuracy", "#2ca02c");
    std::cout << "wrote training curves to " << out_dir << "\n";
    return 0;
}

int cmd_plot(const std::string& results, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ifstream probe(results);
    if (!probe) throw parse_error("cannot open: " + results);
    if (probe.peek() == std::ifstream::traits_type::eof()) {
        std::cerr << "warning: empty results file, no plots written\n";
        return 0;
    }
    if (results.size() > 6 && results.substr(results.size() - 6) == ".jsonl")
        return plot_trajectories(results, out_dir, 12);
    return plot_training(results, out_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-reasoning trajectory planner toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, data, ckpt, scenarios, mode = "both", agent = "model";
    std::string results;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    bool seed_given = false;
    int n = 2000, repeats = 20;
    bool open_loop = false, closed_loop = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", overrides, "override config entries (key=value)");
        sub->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a toy dataset + cluster sidecar");
    add_common(gen);
    gen->add_option("--out", out, "dataset output path")->required();
    gen->add_option("--n", n, "number of samples");

    CLI::App* train = app.add_subcommand("train", "train from a dataset");
    add_common(train);
    train->add_option("--data", data, "dataset path")->required();
    train->add_option("--out", out, "run directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "open- or closed-loop evaluation");
    add_common(eval);
    eval->add_flag("--open", open_loop, "open-loop metrics");
    eval->add_flag("--closed", closed_loop, "closed-loop episodes");
    eval->add_option("--ckpt", ckpt, "checkpoint path");
    eval->add_option("--data", data, "dataset path (open-loop)");
    eval->add_option("--scenarios", scenarios, "scenario file (closed-loop)");
    eval->add_option("--agent", agent, "model|const-velocity|noop (closed-loop)");
    eval->add_option("--out", out, "output prefix")->required();

    CLI::App* bench = app.add_subcommand("bench", "latency: parallel vs autoregressive");
    add_common(bench);
    bench->add_option("--ckpt", ckpt, "checkpoint path (optional)");
    bench->add_option("--mode", mode, "parallel|autoregressive|both");
    bench->add_option("--repeats", repeats, "timing repeats");

    CLI::App* plot = app.add_subcommand("plot", "SVG plots from results files");
    plot->add_option("--results", results, "metrics CSV or trajectories JSONL")->required();
    plot->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(load_config(config_path, overrides, seed, seed_given), out, n);
        if (train->parsed()) return cmd_train(load_config(config_path, overrides, seed, seed_given), data, out);
        if (eval->parsed()) {
            if (open_loop == closed_loop)
                throw config_error("eval requires exactly one of --open / --closed");
            RunConfig cfg = load_config(config_path, overrides, seed, seed_given);
            if (open_loop) {
                if (ckpt.empty() || data.empty())
                    throw config_error("eval --open needs --ckpt and --data");
                return cmd_eval_open(cfg, ckpt, data, out);
            }
            if (agent == "model" && ckpt.empty())
                throw config_error("eval --closed --agent model needs --ckpt");
            return cmd_eval_closed(cfg, ckpt, scenarios, agent, out);
        }
        if (bench->parsed())
            return cmd_bench(load_config(config_path, overrides, seed, seed_given), ckpt, mode,
                             repeats);
        if (plot->parsed()) return cmd_plot(results, out);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
