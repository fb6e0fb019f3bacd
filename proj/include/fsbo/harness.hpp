#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsbo/baselines.hpp"
#include "fsbo/bo.hpp"
#include "fsbo/error.hpp"
#include "fsbo/meta_train.hpp"
#include "fsbo/metadata.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/synthetic.hpp"
#include "fsbo/warmstart.hpp"

namespace fsbo {

enum class Method { random, gp_lhs, gp_ws, fsbo };

inline std::string method_name(Method m)
{
    switch (m) {
    case Method::random: return "random";
    case Method::gp_lhs: return "gp-lhs";
    case Method::gp_ws: return "gp-ws";
    case Method::fsbo: return "fsbo";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    for (Method m : {Method::random, Method::gp_lhs, Method::gp_ws, Method::fsbo})
        if (method_name(m) == s)
            return m;
    throw ValidationError("unknown method '" + s + "' (expected random, gp-lhs, gp-ws or fsbo)");
}

/// Regret of the incumbent after `trial` evaluations, in the task's [0, 1] scale.
inline double normalized_regret(const Task& task, const RunHistory& history, std::size_t trial)
{
    if (trial < 1 || trial > history.size())
        throw ValidationError("trial " + std::to_string(trial) + " outside the history of " +
                              std::to_string(history.size()) + " trials");
    return normalize_response(task, history.incumbent_at(trial));
}

struct BenchmarkSpec {
    std::string dataset; ///< directory, or "synthetic:quadratic[:seed]" / "synthetic:sine[:seed]"
    std::vector<Method> methods{Method::random, Method::gp_lhs, Method::gp_ws, Method::fsbo};
    std::size_t repeats = 10;
    std::optional<std::size_t> budget;                     ///< 100, or 50 for the adaboost space
    std::optional<std::vector<std::size_t>> report_trials; ///< {15, 33, 50, 67, 100} clipped to the budget
    std::uint64_t base_seed = 0;
    std::size_t init_size = 5;
    std::size_t ea_steps = 100000;
    std::size_t ea_population = 100;
    std::size_t fine_tune_steps = 100;
    double fine_tune_lr = 1e-3;
    VanillaGpOptions gp;
    ImputationOptions imputation;
    TrainConfig train;
    std::size_t threads = 0; ///< 0 picks the hardware concurrency
    std::string cache_dir;   ///< per-split checkpoints are cached here when set

    std::size_t resolved_budget(const SearchSpace& space) const
    {
        return budget ? *budget : (space.name() == "adaboost" ? 50 : 100);
    }

    std::vector<std::size_t> resolved_trials(const SearchSpace& space) const
    {
        if (report_trials)
            return *report_trials;
        std::vector<std::size_t> out;
        for (std::size_t t : {15, 33, 50, 67, 100})
            if (t <= resolved_budget(space))
                out.push_back(t);
        return out;
    }

    void validate(const SearchSpace& space) const
    {
        if (methods.empty())
            throw ValidationError("benchmark needs at least one method");
        if (repeats < 1)
            throw ValidationError("repeats must be >= 1");
        const auto b = resolved_budget(space);
        if (b < 1)
            throw ValidationError("budget must be >= 1");
        if (init_size < 1 || init_size > b)
            throw ValidationError("init_size must lie in [1, budget]");
        const auto trials = resolved_trials(space);
        if (trials.empty())
            throw ValidationError("report_trials is empty");
        for (auto t : trials)
            if (t < 1 || t > b)
                throw ValidationError("report trial " + std::to_string(t) + " outside [1, budget]");
        train.validate();
    }
};

inline nlohmann::json to_json(const BenchmarkSpec& s)
{
    nlohmann::json j;
    j["dataset"] = s.dataset;
    j["methods"] = nlohmann::json::array();
    for (auto m : s.methods)
        j["methods"].push_back(method_name(m));
    j["repeats"] = s.repeats;
    if (s.budget)
        j["budget"] = *s.budget;
    if (s.report_trials)
        j["report_trials"] = *s.report_trials;
    j["base_seed"] = s.base_seed;
    j["init_size"] = s.init_size;
    j["ea_steps"] = s.ea_steps;
    j["ea_population"] = s.ea_population;
    j["fine_tune_steps"] = s.fine_tune_steps;
    j["fine_tune_lr"] = s.fine_tune_lr;
    j["gp_restarts"] = s.gp.restarts;
    j["gp_steps"] = s.gp.steps;
    j["gp_lr"] = s.gp.lr;
    j["imputation_max_records"] = s.imputation.max_records;
    j["train"] = to_json(s.train);
    j["threads"] = s.threads;
    j["cache_dir"] = s.cache_dir;
    return j;
}

inline BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j)
{
    static const std::set<std::string> known{"dataset",      "methods",        "repeats",     "budget",
                                             "report_trials", "base_seed",      "init_size",   "ea_steps",
                                             "ea_population", "fine_tune_steps", "fine_tune_lr", "gp_restarts",
                                             "gp_steps",     "gp_lr",          "imputation_max_records",
                                             "train",        "threads",        "cache_dir"};
    if (!j.is_object())
        throw ValidationError("benchmark spec must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ValidationError("unknown benchmark spec key '" + it.key() + "'");
    BenchmarkSpec s;
    try {
        s.dataset = j.at("dataset").get<std::string>();
        if (j.contains("methods")) {
            s.methods.clear();
            for (const auto& m : j.at("methods"))
                s.methods.push_back(parse_method(m.get<std::string>()));
        }
        s.repeats = j.value("repeats", s.repeats);
        if (j.contains("budget"))
            s.budget = j.at("budget").get<std::size_t>();
        if (j.contains("report_trials"))
            s.report_trials = j.at("report_trials").get<std::vector<std::size_t>>();
        s.base_seed = j.value("base_seed", s.base_seed);
        s.init_size = j.value("init_size", s.init_size);
        s.ea_steps = j.value("ea_steps", s.ea_steps);
        s.ea_population = j.value("ea_population", s.ea_population);
        s.fine_tune_steps = j.value("fine_tune_steps", s.fine_tune_steps);
        s.fine_tune_lr = j.value("fine_tune_lr", s.fine_tune_lr);
        s.gp.restarts = j.value("gp_restarts", s.gp.restarts);
        s.gp.steps = j.value("gp_steps", s.gp.steps);
        s.gp.lr = j.value("gp_lr", s.gp.lr);
        s.imputation.max_records = j.value("imputation_max_records", s.imputation.max_records);
        if (j.contains("train"))
            s.train = train_config_from_json(j.at("train"));
        s.threads = j.value("threads", s.threads);
        s.cache_dir = j.value("cache_dir", s.cache_dir);
    }
    catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("benchmark spec: ") + e.what());
    }
    return s;
}

/// Directory dataset, or a generated one named "synthetic:<family>[:seed]".
inline MetaDataset load_benchmark_dataset(const std::string& name)
{
    const std::string prefix = "synthetic:";
    if (name.rfind(prefix, 0) != 0)
        return load_metadata(name);
    std::string rest = name.substr(prefix.size());
    std::uint64_t seed = 0;
    if (auto colon = rest.find(':'); colon != std::string::npos) {
        try {
            seed = std::stoull(rest.substr(colon + 1));
        }
        catch (const std::exception&) {
            throw ValidationError("bad seed in dataset name '" + name + "'");
        }
        rest = rest.substr(0, colon);
    }
    if (rest == "quadratic")
        return quadratic_dataset(QuadraticFamily{}, seed);
    if (rest == "sine")
        return sine_dataset(50, seed);
    throw ValidationError("unknown synthetic family '" + rest + "' (expected quadratic or sine)");
}

/// Runs fn(0..n-1) on a pool of worker threads. The first exception is
/// rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn)
{
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                }
                catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

/// Latin hypercube design mapped onto the table: each point takes the
/// nearest row (encoded Euclidean distance) not already taken.
inline std::vector<Config> lhs_table_design(const SearchSpace& space, const Task& table, std::size_t n, Rng& rng)
{
    if (n > table.size())
        throw ValidationError("design larger than the table");
    const auto points = space.lhs_sample(n, rng);
    std::vector<char> taken(table.size(), 0);
    std::vector<Config> out;
    for (const auto& p : points) {
        const Eigen::VectorXd x = space.encode(p);
        std::size_t best = table.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < table.size(); ++r) {
            if (taken[r])
                continue;
            const double d = (table.X().row(static_cast<Eigen::Index>(r)).transpose() - x).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = r;
            }
        }
        taken[best] = 1;
        out.push_back(table.records()[best].config);
    }
    return out;
}

struct RunRecord {
    Method method = Method::random;
    std::size_t split = 0;
    std::string task_id;
    std::size_t repeat = 0;
    RunHistory history;
    std::string failure; ///< nonempty when the run produced no usable history
};

struct RegretRow {
    Method method;
    std::string task_id;
    std::size_t repeat;
    std::size_t trial;
    double regret;
};

struct SummaryRow {
    Method method;
    std::size_t trial;
    double mean;
    double std; ///< sample standard deviation, 0 for a single run
    std::size_t n;
};

struct RegretReport {
    std::vector<RegretRow> rows;
    std::vector<SummaryRow> summary;
    std::vector<RunRecord> runs;
    std::vector<std::string> warnings;
    std::vector<std::string> invariant_violations; ///< regret sequences leaving [0, 1] or increasing
    nlohmann::json metadata;

    /// Mean regret of `m` at `trial`; NaN when absent.
    double mean_regret(Method m, std::size_t trial) const
    {
        for (const auto& s : summary)
            if (s.method == m && s.trial == trial)
                return s.mean;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

using BenchmarkLog = std::function<void(const std::string&)>;

namespace detail {

inline std::uint64_t split_cache_key(const MetaDataset& ds, const std::vector<std::size_t>& sources,
                                     const TrainConfig& cfg)
{
    std::uint64_t h = mix64(ds.fingerprint());
    for (auto i : sources)
        h = fnv1a(ds.task(i).id() + "\n", h);
    return mix64(fnv1a(to_json(cfg).dump(), h));
}

inline Checkpoint train_split(const MetaDataset& ds, const LotoSplit& split, TrainConfig cfg,
                              const std::string& cache_dir, std::size_t split_index)
{
    cfg.seed = derive_seed(cfg.seed, "meta-train-split", split_index);
    const auto key = split_cache_key(ds, split.sources, cfg);
    std::filesystem::path file;
    if (!cache_dir.empty()) {
        file = std::filesystem::path(cache_dir) / ("ckpt-" + hex64(key) + ".json");
        if (std::filesystem::exists(file))
            return load_checkpoint(file, ds.space());
    }
    std::vector<const Task*> tasks;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto i : split.sources) {
        tasks.push_back(&ds.task(i));
        lo = std::min(lo, ds.task(i).f_min());
        hi = std::max(hi, ds.task(i).f_max());
    }
    Checkpoint ck = meta_train(ds.space(), tasks, lo, hi, cfg);
    ck.dataset_fingerprint = key;
    if (!file.empty()) {
        std::filesystem::create_directories(file.parent_path());
        // write then rename so a concurrent reader never sees a partial file
        const auto tmp = file.string() + ".tmp" + std::to_string(split_index);
        save_checkpoint(ck, tmp);
        std::filesystem::rename(tmp, file);
    }
    return ck;
}

inline void check_run_invariants(const RunRecord& r, const Task& target, std::vector<std::string>& out)
{
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= r.history.size(); ++k) {
        const double g = normalized_regret(target, r.history, k);
        if (!(g >= 0.0 && g <= 1.0) || g > prev) {
            out.push_back(method_name(r.method) + " " + r.task_id + " repeat " + std::to_string(r.repeat) +
                          ": regret " + format_real(g) + " at trial " + std::to_string(k));
            return;
        }
        prev = g;
    }
}

} // namespace detail

/// Leave-one-task-out benchmark. Meta-training and the response matrix are
/// computed once per split; repeats vary the BO, EA and design seeds.
inline RegretReport run_benchmark(const MetaDataset& ds, const BenchmarkSpec& spec, const BenchmarkLog& log = {})
{
    spec.validate(ds.space());
    const SearchSpace& space = ds.space();
    const std::size_t budget = spec.resolved_budget(space);
    const auto trials = spec.resolved_trials(space);
    const auto say = [&](const std::string& s) {
        if (log)
            log(s);
    };

    RegretReport report;
    std::vector<LotoSplit> splits;
    for (auto& s : loto_splits(ds)) {
        const Task& t = ds.task(s.target);
        if (!(t.f_max() > t.f_min())) {
            report.warnings.push_back("task '" + t.id() + "' is constant and was excluded");
            continue;
        }
        if (t.size() < spec.init_size) {
            report.warnings.push_back("task '" + t.id() + "' has fewer rows than the initial design and was excluded");
            continue;
        }
        splits.push_back(std::move(s));
    }
    for (const auto& w : report.warnings)
        say("warning: " + w);

    const bool needs_model = std::any_of(spec.methods.begin(), spec.methods.end(),
                                         [](Method m) { return m == Method::fsbo || m == Method::gp_ws; });

    // per split: checkpoint and response matrix
    std::vector<std::optional<Checkpoint>> checkpoints(splits.size());
    std::vector<std::optional<ResponseMatrix>> matrices(splits.size());
    std::vector<std::string> split_errors(splits.size());
    if (needs_model) {
        std::mutex log_mu;
        parallel_for(splits.size(), spec.threads, [&](std::size_t i) {
            try {
                checkpoints[i] = detail::train_split(ds, splits[i], spec.train, spec.cache_dir, i);
                {
                    std::vector<const Task*> src;
                    for (auto s : splits[i].sources)
                        src.push_back(&ds.task(s));
                    matrices[i] = build_response_matrix(checkpoints[i]->surrogate, space, src,
                                                        union_candidates(space, src), spec.imputation);
                }
                std::lock_guard lock(log_mu);
                say("split " + ds.task(splits[i].target).id() + ": surrogate ready");
            }
            catch (const Error& e) {
                split_errors[i] = e.what();
            }
        });
    }

    // one EA run per (split, repeat), shared by gp-ws and fsbo
    const std::size_t R = spec.repeats;
    std::vector<std::vector<Config>> warm(splits.size() * R);
    if (needs_model)
        parallel_for(warm.size(), spec.threads, [&](std::size_t cell) {
            const auto& m = matrices[cell / R];
            if (!m)
                return;
            EaConfig ea;
            ea.set_size = std::min(spec.init_size, m->num_candidates());
            ea.population_size = spec.ea_population;
            ea.steps = spec.ea_steps;
            ea.seed = derive_seed(spec.base_seed, "evolve", cell);
            warm[cell] = evolve(*m, ea).configs;
        });

    const std::size_t M = spec.methods.size();
    std::vector<RunRecord> runs(splits.size() * R * M);
    std::atomic<std::size_t> done{0};
    std::mutex log_mu;
    parallel_for(runs.size(), spec.threads, [&](std::size_t job) {
        const std::size_t cell = job / M;
        const std::size_t split = cell / R;
        RunRecord& r = runs[job];
        r.method = spec.methods[job % M];
        r.split = split;
        r.repeat = cell % R;
        const Task& target = ds.task(splits[split].target);
        r.task_id = target.id();
        const std::string name = method_name(r.method);
        try {
            const BoProblem problem = table_problem(space, target);
            BoConfig bo;
            bo.budget = budget;
            bo.fine_tune_steps = spec.fine_tune_steps;
            bo.fine_tune_lr = spec.fine_tune_lr;
            bo.seed = derive_seed(spec.base_seed, name, cell);
            const bool ws = r.method == Method::gp_ws || r.method == Method::fsbo;
            if (ws && !split_errors[split].empty())
                throw NumericalError("split preparation failed: " + split_errors[split]);
            switch (r.method) {
            case Method::random: {
                Rng rng(bo.seed);
                r.history = random_search(problem, budget, rng);
                break;
            }
            case Method::gp_lhs: {
                Rng rng(derive_seed(spec.base_seed, "lhs", cell));
                bo.init_configs = lhs_table_design(space, target, spec.init_size, rng);
                MaternGpModel model{spec.gp, 0};
                r.history = run_bo(problem, bo, model);
                break;
            }
            case Method::gp_ws: {
                bo.init_configs = warm[cell];
                MaternGpModel model{spec.gp, 0};
                r.history = run_bo(problem, bo, model);
                break;
            }
            case Method::fsbo: {
                bo.init_configs = warm[cell];
                FsboModel model;
                model.start = checkpoints[split]->surrogate;
                model.steps = spec.fine_tune_steps;
                model.lr = spec.fine_tune_lr;
                r.history = run_bo(problem, bo, model);
                break;
            }
            }
            if (r.history.size() == 0)
                r.failure = r.history.error.empty() ? "empty history" : r.history.error;
        }
        catch (const Error& e) {
            r.failure = e.what();
        }
        const auto k = ++done;
        std::lock_guard lock(log_mu);
        say("run " + std::to_string(k) + "/" + std::to_string(runs.size()) + ": " + name + " " + r.task_id +
            " repeat " + std::to_string(r.repeat) + (r.failure.empty() ? "" : " FAILED: " + r.failure));
    });

    // sequential aggregation in job order
    for (const auto& r : runs) {
        if (!r.failure.empty())
            continue;
        const Task& target = ds.task(splits[r.split].target);
        detail::check_run_invariants(r, target, report.invariant_violations);
        for (auto t : trials)
            report.rows.push_back(
                {r.method, r.task_id, r.repeat, t, normalized_regret(target, r.history, std::min(t, r.history.size()))});
    }
    for (Method m : spec.methods)
        for (auto t : trials) {
            double sum = 0.0, sq = 0.0;
            std::size_t n = 0;
            for (const auto& row : report.rows)
                if (row.method == m && row.trial == t) {
                    sum += row.regret;
                    ++n;
                }
            const double mean = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
            for (const auto& row : report.rows)
                if (row.method == m && row.trial == t)
                    sq += (row.regret - mean) * (row.regret - mean);
            report.summary.push_back({m, t, mean, n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0, n});
        }
    report.runs = std::move(runs);

    report.metadata["spec"] = to_json(spec);
    report.metadata["budget"] = budget;
    report.metadata["report_trials"] = trials;
    report.metadata["dataset_fingerprint"] = hex64(ds.fingerprint());
    report.metadata["num_splits"] = splits.size();
    report.metadata["meta_training"] = "once per split, shared by that split's repeats";
    report.metadata["seed_rule"] = "derive_seed(base_seed, method, split * repeats + repeat)";
    report.metadata["warnings"] = report.warnings;
    return report;
}

inline RegretReport run_benchmark(const BenchmarkSpec& spec, const BenchmarkLog& log = {})
{
    return run_benchmark(load_benchmark_dataset(spec.dataset), spec, log);
}

inline std::string report_csv(const RegretReport& r)
{
    std::ostringstream out;
    out << "method,task_id,repeat,trial,regret\n";
    for (const auto& row : r.rows)
        out << method_name(row.method) << ',' << csv_quote(row.task_id) << ',' << row.repeat << ',' << row.trial
            << ',' << format_real(row.regret) << '\n';
    return out.str();
}

inline std::string summary_csv(const RegretReport& r)
{
    std::ostringstream out;
    out << "method,trial,mean_regret,std_regret,n\n";
    for (const auto& s : r.summary)
        out << method_name(s.method) << ',' << s.trial << ',' << format_real(s.mean) << ',' << format_real(s.std)
            << ',' << s.n << '\n';
    return out.str();
}

inline std::string failures_csv(const RegretReport& r)
{
    std::ostringstream out;
    out << "method,task_id,repeat,error\n";
    for (const auto& run : r.runs)
        if (!run.failure.empty())
            out << method_name(run.method) << ',' << csv_quote(run.task_id) << ',' << run.repeat << ','
                << csv_quote(run.failure) << '\n';
    return out.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw LoadError("cannot write " + p.string());
    out << s;
}

/// report.csv, summary.csv, failures.csv, metadata.json and runs/<method>/<task>_r<k>.csv.
inline void write_report(const RegretReport& r, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_text(dir / "report.csv", report_csv(r));
    write_text(dir / "summary.csv", summary_csv(r));
    write_text(dir / "failures.csv", failures_csv(r));
    write_text(dir / "metadata.json", r.metadata.dump(2) + "\n");
    for (const auto& run : r.runs) {
        if (!run.failure.empty())
            continue;
        const auto sub = dir / "runs" / method_name(run.method);
        fs::create_directories(sub);
        write_text(sub / (run.task_id + "_r" + std::to_string(run.repeat) + ".csv"), history_to_csv(run.history));
    }
}

} // namespace fsbo
