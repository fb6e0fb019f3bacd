// Command-line front end: meta-training, warm starts, single runs,
// benchmarks, the sine demo and checkpoint inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsbo/fsbo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help)
{
    app->add_option("--seed", c.seed, "Base random seed");
    app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
    app->add_option("--out", c.out, out_help);
}

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw fsbo::LoadError("cannot open " + path);
    try {
        return json::parse(in);
    }
    catch (const json::exception& e) {
        throw fsbo::LoadError(path + ": " + e.what());
    }
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void progress_line(std::size_t it, double loss)
{
    if ((it + 1) % 1000 == 0)
        std::fprintf(stderr, "iteration %zu  smoothed nll %.6f\n", it + 1, loss);
}

std::string require_out(const Common& c, const char* what)
{
    if (c.out.empty())
        throw fsbo::UsageError(std::string("--out is required for ") + what);
    return c.out;
}

// Source tasks of `ds`, optionally without the named target.
std::vector<const fsbo::Task*> sources_without(const fsbo::MetaDataset& ds, const std::string& target)
{
    std::vector<const fsbo::Task*> out;
    for (const auto& t : ds.tasks())
        if (t.id() != target)
            out.push_back(&t);
    if (!target.empty() && out.size() == ds.num_tasks())
        throw fsbo::ValidationError("unknown task '" + target + "'");
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Few-shot Bayesian optimization with deep kernel surrogates"};
    app.require_subcommand(1);

    // meta-train
    Common mt;
    std::string mt_dataset, mt_exclude;
    std::optional<std::size_t> mt_iters;
    auto* meta = app.add_subcommand("meta-train", "Meta-train a deep-kernel surrogate on a dataset");
    add_common(meta, mt, "Checkpoint file to write");
    meta->add_option("--dataset", mt_dataset, "Dataset directory or synthetic:<family>[:seed]")->required();
    meta->add_option("--iters", mt_iters, "Outer iterations");
    meta->add_option("--exclude", mt_exclude, "Task id to leave out of training");

    // warmstart
    Common ws;
    std::string ws_dataset, ws_ckpt, ws_target;
    std::optional<std::size_t> ws_size, ws_steps;
    auto* warm = app.add_subcommand("warmstart", "Choose an initial design on the source tasks");
    add_common(warm, ws, "Output directory (warmstart.json, response_matrix.csv)");
    warm->add_option("--dataset", ws_dataset, "Dataset directory or synthetic:<family>[:seed]")->required();
    warm->add_option("--checkpoint", ws_ckpt, "Meta-trained checkpoint")->required()->check(CLI::ExistingFile);
    warm->add_option("--target", ws_target, "Task id excluded from the sources");
    warm->add_option("--size", ws_size, "Number of configurations in the design");
    warm->add_option("--steps", ws_steps, "Evolution steps");

    // run
    Common rn;
    std::string rn_dataset, rn_task, rn_method = "fsbo", rn_ckpt, rn_init;
    std::optional<std::size_t> rn_budget;
    auto* run = app.add_subcommand("run", "Optimize one recorded task with one method");
    add_common(run, rn, "Output directory (history.csv)");
    run->add_option("--dataset", rn_dataset, "Dataset directory or synthetic:<family>[:seed]")->required();
    run->add_option("--task", rn_task, "Target task id")->required();
    run->add_option("--method", rn_method, "fsbo, gp-lhs, gp-ws or random");
    run->add_option("--checkpoint", rn_ckpt, "Meta-trained checkpoint (fsbo)")->check(CLI::ExistingFile);
    run->add_option("--init", rn_init, "JSON list of initial configurations")->check(CLI::ExistingFile);
    run->add_option("--budget", rn_budget, "Total evaluations");

    // benchmark
    Common bm;
    std::optional<std::size_t> bm_threads;
    bool bm_quiet = false;
    auto* bench = app.add_subcommand("benchmark", "Leave-one-task-out benchmark of several methods");
    add_common(bench, bm, "Output directory (report.csv, summary.csv, runs/)");
    bench->add_option("--threads", bm_threads, "Worker threads (0 = all cores)");
    bench->add_flag("--quiet", bm_quiet, "No progress lines");

    // sine-demo
    Common sd;
    std::optional<std::size_t> sd_tasks, sd_targets, sd_iters;
    auto* sine = app.add_subcommand("sine-demo", "Few-shot demo on the sine family with trace CSVs");
    add_common(sine, sd, "Output directory for the trace CSVs");
    sine->add_option("--tasks", sd_tasks, "Number of source tasks");
    sine->add_option("--targets", sd_targets, "Number of target tasks");
    sine->add_option("--iters", sd_iters, "Meta-training outer iterations");

    // inspect-ckpt
    Common ic;
    std::string ic_path;
    auto* inspect = app.add_subcommand("inspect-ckpt", "Print a checkpoint summary as JSON");
    add_common(inspect, ic, "Unused");
    inspect->add_option("checkpoint", ic_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }

    try {
        if (*meta) {
            const auto ds = fsbo::load_benchmark_dataset(mt_dataset);
            fsbo::TrainConfig cfg = mt.config.empty() ? fsbo::TrainConfig{} : fsbo::train_config_from_json(read_json(mt.config));
            if (mt.seed)
                cfg.seed = *mt.seed;
            if (mt_iters)
                cfg.outer_iterations = *mt_iters;
            const auto out = require_out(mt, "meta-train");
            const auto tasks = sources_without(ds, mt_exclude);
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (const auto* t : tasks) {
                lo = std::min(lo, t->f_min());
                hi = std::max(hi, t->f_max());
            }
            auto ck = fsbo::meta_train(ds.space(), tasks, lo, hi, cfg, progress_line);
            ck.dataset_fingerprint = ds.fingerprint();
            if (auto parent = fs::path(out).parent_path(); !parent.empty())
                fs::create_directories(parent);
            fsbo::save_checkpoint(ck, out);
            print_json({{"checkpoint", out},
                        {"tasks", tasks.size()},
                        {"final_smoothed_nll", ck.loss_trace.empty() ? json(nullptr) : json(ck.loss_trace.back())},
                        {"skipped_steps", ck.skipped_steps}});
        }
        else if (*warm) {
            const auto ds = fsbo::load_benchmark_dataset(ws_dataset);
            const auto ck = fsbo::load_checkpoint(ws_ckpt, ds.space());
            fsbo::EaConfig ea = ws.config.empty() ? fsbo::EaConfig{} : fsbo::ea_config_from_json(read_json(ws.config));
            if (ws.seed)
                ea.seed = *ws.seed;
            if (ws_size)
                ea.set_size = *ws_size;
            if (ws_steps)
                ea.steps = *ws_steps;
            const auto dir = fs::path(require_out(ws, "warmstart"));
            const auto src = sources_without(ds, ws_target);
            const auto m = fsbo::build_response_matrix(ck.surrogate, ds.space(), src,
                                                       fsbo::union_candidates(ds.space(), src));
            const auto r = fsbo::evolve(m, ea);
            fs::create_directories(dir);
            fsbo::write_text(dir / "warmstart.json", fsbo::configs_to_json(r.configs).dump(2) + "\n");
            std::ostringstream csv;
            csv << "candidate,config";
            for (const auto& id : m.task_ids)
                csv << ',' << fsbo::csv_quote(id);
            csv << '\n';
            for (std::size_t i = 0; i < m.num_candidates(); ++i) {
                csv << i << ',' << fsbo::csv_quote(fsbo::to_json(m.candidates[i]).dump());
                for (std::size_t t = 0; t < m.num_tasks(); ++t)
                    csv << ',' << fsbo::format_real(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
                csv << '\n';
            }
            fsbo::write_text(dir / "response_matrix.csv", csv.str());
            print_json({{"warmstart", (dir / "warmstart.json").string()},
                        {"set_loss", r.best_loss},
                        {"candidates", m.num_candidates()},
                        {"imputed_entries", m.imputed.count()},
                        {"imputation_fallbacks", m.imputation_fallbacks},
                        {"dropped_tasks", m.dropped_tasks}});
        }
        else if (*run) {
            const auto ds = fsbo::load_benchmark_dataset(rn_dataset);
            const auto idx = ds.find(rn_task);
            if (!idx)
                throw fsbo::ValidationError("unknown task '" + rn_task + "'");
            const fsbo::Task& target = ds.task(*idx);
            const auto method = fsbo::parse_method(rn_method);
            json cfg = rn.config.empty() ? json::object() : read_json(rn.config);
            for (auto it = cfg.begin(); it != cfg.end(); ++it)
                if (it.key() != "budget" && it.key() != "init_size" && it.key() != "fine_tune_steps" &&
                    it.key() != "fine_tune_lr")
                    throw fsbo::ValidationError("unknown run config key '" + it.key() + "'");
            fsbo::BoConfig bo;
            bo.budget = rn_budget ? *rn_budget : cfg.value("budget", std::size_t{100});
            bo.fine_tune_steps = cfg.value("fine_tune_steps", bo.fine_tune_steps);
            bo.fine_tune_lr = cfg.value("fine_tune_lr", bo.fine_tune_lr);
            bo.seed = rn.seed.value_or(0);
            const std::size_t init_size = cfg.value("init_size", std::size_t{5});
            const auto dir = fs::path(require_out(rn, "run"));
            fsbo::Rng rng(fsbo::derive_seed(bo.seed, "design", 0));
            if (!rn_init.empty())
                bo.init_configs = fsbo::configs_from_json(read_json(rn_init));
            else if (method != fsbo::Method::random)
                bo.init_configs = fsbo::lhs_table_design(ds.space(), target, std::min(init_size, target.size()), rng);
            const auto problem = fsbo::table_problem(ds.space(), target);
            fsbo::RunHistory h;
            if (method == fsbo::Method::random) {
                fsbo::Rng r(fsbo::derive_seed(bo.seed, "random", 0));
                h = fsbo::random_search(problem, bo.budget, r);
            }
            else if (method == fsbo::Method::fsbo) {
                if (rn_ckpt.empty())
                    throw fsbo::UsageError("--checkpoint is required for method fsbo");
                fsbo::FsboModel model;
                model.start = fsbo::load_checkpoint(rn_ckpt, ds.space()).surrogate;
                model.steps = bo.fine_tune_steps;
                model.lr = bo.fine_tune_lr;
                h = fsbo::run_bo(problem, bo, model);
            }
            else {
                if (method == fsbo::Method::gp_ws && rn_init.empty())
                    throw fsbo::UsageError("--init is required for method gp-ws");
                fsbo::MaternGpModel model;
                h = fsbo::run_bo(problem, bo, model);
            }
            fs::create_directories(dir);
            fsbo::write_text(dir / "history.csv", fsbo::history_to_csv(h));
            if (!h.error.empty())
                throw fsbo::OffGridError("run stopped after " + std::to_string(h.size()) + " trials: " + h.error);
            print_json({{"history", (dir / "history.csv").string()},
                        {"trials", h.size()},
                        {"best_loss", h.trials.empty() ? json(nullptr) : json(h.trials.back().incumbent)},
                        {"normalized_regret", h.trials.empty() ? json(nullptr) : json(h.trials.back().regret)},
                        {"exhausted", h.exhausted},
                        {"model_failures", h.model_failures}});
        }
        else if (*bench) {
            if (bm.config.empty())
                throw fsbo::UsageError("--config is required for benchmark");
            auto spec = fsbo::benchmark_spec_from_json(read_json(bm.config));
            if (bm.seed)
                spec.base_seed = *bm.seed;
            if (bm_threads)
                spec.threads = *bm_threads;
            const auto dir = fs::path(require_out(bm, "benchmark"));
            fsbo::BenchmarkLog log;
            if (!bm_quiet)
                log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
            const auto report = fsbo::run_benchmark(spec, log);
            fsbo::write_report(report, dir);
            std::size_t failures = 0;
            for (const auto& r : report.runs)
                failures += !r.failure.empty();
            print_json({{"report", (dir / "report.csv").string()},
                        {"summary", (dir / "summary.csv").string()},
                        {"runs", report.runs.size()},
                        {"failed_runs", failures},
                        {"invariant_violations", report.invariant_violations},
                        {"warnings", report.warnings}});
        }
        else if (*sine) {
            fsbo::SineDemoConfig cfg =
                sd.config.empty() ? fsbo::SineDemoConfig{} : fsbo::sine_demo_config_from_json(read_json(sd.config));
            if (sd.seed)
                cfg.seed = *sd.seed;
            if (sd_tasks)
                cfg.source_tasks = *sd_tasks;
            if (sd_targets)
                cfg.target_tasks = *sd_targets;
            if (sd_iters)
                cfg.train.outer_iterations = *sd_iters;
            const auto dir = fs::path(sd.out.empty() ? "sine-demo" : sd.out);
            const auto r = fsbo::sine_demo(cfg, progress_line);
            fsbo::write_sine_demo(r, dir);
            fsbo::save_checkpoint(r.checkpoint, dir / "checkpoint.json");
            print_json({{"out", dir.string()},
                        {"targets", r.runs.size()},
                        {"success_rate", r.success_rate(cfg.trials)},
                        {"median_regret_fsbo", r.median_regret(true, cfg.trials)},
                        {"median_regret_random", r.median_regret(false, cfg.trials)}});
        }
        else if (*inspect) {
            const auto ck = fsbo::load_checkpoint(ic_path);
            const auto& s = ck.surrogate;
            json widths = json::array();
            for (const auto& w : ck.config.architecture.widths)
                widths.push_back(w);
            print_json({{"format", ck.format},
                        {"space_fingerprint", fsbo::hex64(ck.space_fingerprint)},
                        {"dataset_fingerprint", fsbo::hex64(ck.dataset_fingerprint)},
                        {"input_dim", s.mlp.input_dim()},
                        {"feature_dim", s.mlp.output_dim()},
                        {"widths", widths},
                        {"parameters", s.num_params()},
                        {"signal_variance", s.kernel.signal_variance()},
                        {"noise_variance", s.kernel.noise_variance()},
                        {"outer_iterations", ck.config.outer_iterations},
                        {"skipped_steps", ck.skipped_steps},
                        {"final_smoothed_nll", ck.loss_trace.empty() ? json(nullptr) : json(ck.loss_trace.back())},
                        {"config", fsbo::to_json(ck.config)}});
        }
    }
    catch (const fsbo::UsageError& e) {
        std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
    catch (const fsbo::Error& e) {
        std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
