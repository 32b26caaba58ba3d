// lanekeep command-line driver: gen-tracks, train, eval, sweep, report.
#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "lanekeep/checkpoint.hpp"
#include "lanekeep/errors.hpp"
#include "lanekeep/metrics.hpp"
#include "lanekeep/ppo.hpp"
#include "lanekeep/run_config.hpp"

namespace fs = std::filesystem;
using namespace lanekeep;

namespace {

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

int thread_count() {
    if (const char* v = std::getenv("LANEKEEP_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(v, &end, 10);
        if (end == v || *end != '\0' || n < 1) throw ConfigError("LANEKEEP_THREADS must be a positive integer");
        return static_cast<int>(n);
    }
    return 1;
}

std::vector<Route> training_routes(const RouteCatalog& catalog) {
    std::vector<Route> routes;
    for (RouteId id : kTrainingRouteIds) routes.push_back(catalog.get(id));
    return routes;
}

struct Overrides {
    std::optional<std::string> label;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> catalog;
    std::optional<std::string> out;
    bool log_steps = false;
};

RunConfig make_config(const std::string& config_path, const Overrides& o) {
    RunConfig cfg;
    if (!config_path.empty()) {
        cfg = load_run_config(config_path);
    } else if (!o.label) {
        throw ConfigError("missing required config key 'label' (pass --config or --label)");
    }
    if (o.label) cfg.label = parse_label(*o.label);
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.catalog) cfg.catalog = *o.catalog;
    if (o.out) cfg.run_dir = *o.out;
    if (o.log_steps) cfg.log_steps = true;
    if (cfg.run_dir.empty()) throw ConfigError("no run directory (set run_dir or pass --out)");
    return cfg;
}

// Trains one run; returns the final checkpoint path.
std::string run_training(const RunConfig& cfg, bool resume, bool force, std::ostream* progress) {
    const fs::path dir(cfg.run_dir);
    if (!resume && fs::exists(dir / "curve.csv")) {
        if (!force) throw IoError("run directory " + cfg.run_dir + " already holds a run (use --resume or --force)");
        fs::remove_all(dir / "checkpoints");
        for (const char* f : {"curve.csv", "events.jsonl", "steps.jsonl", "eval_report.json"}) fs::remove(dir / f);
    }
    fs::create_directories(dir);
    if (resume && fs::exists(dir / "config.json")) {
        const RunConfig saved = load_run_config((dir / "config.json").string());
        if (run_config_to_json(saved) != run_config_to_json(cfg))
            throw ConfigError("resume config differs from " + (dir / "config.json").string());
    }
    save_run_config(cfg, (dir / "config.json").string());

    const RouteCatalog catalog = resolve_catalog(cfg);
    ppo::TrainOptions opts;
    opts.run_dir = cfg.run_dir;
    opts.resume = resume;
    opts.log_steps = cfg.log_steps;
    opts.progress = progress;
    const auto result = ppo::train(cfg.label, training_routes(catalog), cfg.train, cfg.world, opts);
    return result.final_checkpoint;
}

EvalReport run_eval(const std::string& checkpoint, const RouteCatalog& catalog, const WorldConfig& world,
                    const std::string& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const EvalReport report = evaluate(ck.net, ck.label, catalog, 5, world);
    save_eval_report(report, out);
    return report;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lanekeep: action-space strategies for PPO lane following"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, catalog_path, out;
    std::uint64_t seed = 0;
    std::string label;
    bool resume = false, force = false, log_steps = false;
    std::vector<std::string> labels, run_dirs;
    std::vector<std::uint64_t> seeds;

    auto* gen = app.add_subcommand("gen-tracks", "write the procedural route catalog as JSON");
    gen->add_option("--seed", seed, "catalog seed");
    gen->add_option("--out", out, "output file")->required();
    gen->add_flag("--force", force, "overwrite an existing file");

    auto* train = app.add_subcommand("train", "train one configuration");
    train->add_option("--config", config_path, "run config JSON");
    auto* train_label = train->add_option("--label", label, "action-space label, e.g. Rel-0.5");
    auto* train_seed = train->add_option("--seed", seed, "training seed");
    auto* train_catalog = train->add_option("--catalog", catalog_path, "track catalog JSON");
    auto* train_out = train->add_option("--out", out, "run directory");
    train->add_flag("--resume", resume, "continue from the latest checkpoint");
    train->add_flag("--force", force, "replace an existing run");
    train->add_flag("--log-steps", log_steps, "write per-step JSONL for the first environment");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the 11 test routes");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--catalog", catalog_path, "track catalog JSON");
    eval->add_option("--config", config_path, "run config (world parameters and catalog)");
    eval->add_option("--out", out, "report path (default: eval_report.json in the run directory)");

    auto* sweep = app.add_subcommand("sweep", "train and evaluate every (label, seed) pair");
    sweep->add_option("--config", config_path, "base run config");
    sweep->add_option("--label", labels, "labels (repeatable or comma-separated; default all nine)")->delimiter(',');
    sweep->add_option("--seed", seeds, "seeds (repeatable or comma-separated; default 0)")->delimiter(',');
    auto* sweep_catalog = sweep->add_option("--catalog", catalog_path, "track catalog JSON");
    sweep->add_option("--out", out, "sweep directory")->required();
    sweep->add_flag("--resume", resume, "resume existing runs");
    sweep->add_flag("--force", force, "replace existing runs");

    auto* report = app.add_subcommand("report", "tables and curves over run directories");
    report->add_option("runs", run_dirs, "run directories")->required();
    report->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (*gen) {
            if (fs::exists(out) && !force) throw IoError(out + " exists (use --force to overwrite)");
            const RouteCatalog catalog = build_route_catalog(seed);
            save_catalog(catalog, out);
            std::cout << "wrote " << catalog.routes.size() << " routes to " << out << "\n";
        } else if (*train) {
            Overrides o;
            if (*train_label) o.label = label;
            if (*train_seed) o.seed = seed;
            if (*train_catalog) o.catalog = catalog_path;
            if (*train_out) o.out = out;
            o.log_steps = log_steps;
            const RunConfig cfg = make_config(config_path, o);
            const std::string ckpt = run_training(cfg, resume, force, &std::cerr);
            std::cout << "final checkpoint " << ckpt << "\n";
        } else if (*eval) {
            RunConfig cfg;
            if (!config_path.empty()) cfg = load_run_config(config_path);
            if (!catalog_path.empty()) cfg.catalog = catalog_path;
            const fs::path ck(checkpoint);
            if (out.empty()) {
                const fs::path parent = ck.parent_path();
                out = (parent.filename() == "checkpoints" ? parent.parent_path() / "eval_report.json"
                                                          : fs::path("eval_report.json"))
                          .string();
            }
            const EvalReport r = run_eval(checkpoint, resolve_catalog(cfg), cfg.world, out);
            std::cout << "wrote " << r.episodes.size() << " episodes to " << out << "\n";
        } else if (*sweep) {
            if (labels.empty())
                for (ActionLabel l : kAllLabels) labels.emplace_back(label_name(l));
            if (seeds.empty()) seeds.push_back(0);
            RunConfig base;
            if (!config_path.empty()) base = load_run_config(config_path);
            if (*sweep_catalog) base.catalog = catalog_path;

            std::vector<RunConfig> jobs;
            for (const auto& l : labels)
                for (auto s : seeds) {
                    RunConfig c = base;
                    c.label = parse_label(l);
                    c.train.seed = s;
                    c.run_dir = (fs::path(out) / (std::string(label_name(c.label)) + "_s" + std::to_string(s))).string();
                    jobs.push_back(c);
                }

            std::atomic<std::size_t> next{0};
            std::mutex mu;
            std::optional<std::string> failure;
            auto worker = [&]() {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    try {
                        const std::string ckpt = run_training(jobs[i], resume, force, nullptr);
                        run_eval(ckpt, resolve_catalog(jobs[i]), jobs[i].world,
                                 (fs::path(jobs[i].run_dir) / "eval_report.json").string());
                        std::lock_guard lock(mu);
                        std::cerr << "finished " << jobs[i].run_dir << "\n";
                    } catch (const Error& e) {
                        std::lock_guard lock(mu);
                        if (!failure) failure = std::string(e.kind()) + ": " + jobs[i].run_dir + ": " + e.what();
                    }
                }
            };
            const int n_threads = std::min<int>(thread_count(), static_cast<int>(jobs.size()));
            std::vector<std::thread> pool;
            for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();
            if (failure) {
                std::cerr << "error: " << one_line(*failure) << "\n";
                return 1;
            }
            std::vector<std::string> dirs;
            for (const auto& j : jobs) dirs.push_back(j.run_dir);
            write_report(dirs, out);
            std::cout << "wrote " << jobs.size() << " runs and report to " << out << "\n";
        } else if (*report) {
            write_report(run_dirs, out);
            std::cout << "wrote report.csv, report.txt, curves.svg to " << out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
