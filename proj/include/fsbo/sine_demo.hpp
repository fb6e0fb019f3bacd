#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fsbo/bo.hpp"
#include "fsbo/harness.hpp"
#include "fsbo/meta_train.hpp"
#include "fsbo/synthetic.hpp"

namespace fsbo {

struct SineDemoConfig {
    std::size_t source_tasks = 50;
    std::size_t target_tasks = 20;
    std::size_t points = 50;            ///< evenly spaced samples per source task
    std::size_t seed_observations = 2;  ///< uniform draws given to every method before the search
    std::size_t trials = 5;             ///< additional evaluations after the seed observations
    std::size_t grid_points = 200;      ///< trace resolution
    std::size_t fine_tune_steps = 100;
    double fine_tune_lr = 1e-3;
    std::uint64_t seed = 0;
    TrainConfig train = default_train();

    static TrainConfig default_train()
    {
        TrainConfig c;
        c.architecture.widths = {64, 64};
        return c;
    }

    void validate() const
    {
        if (source_tasks < 2)
            throw ValidationError("sine demo needs at least 2 source tasks");
        if (target_tasks < 1 || seed_observations < 1 || grid_points < 2)
            throw ValidationError("sine demo needs targets, seed observations and a grid");
        train.validate();
    }
};

/// Missing keys keep their defaults; "train" takes a meta-training config.
inline SineDemoConfig sine_demo_config_from_json(const nlohmann::json& j)
{
    static const std::set<std::string> known{"source_tasks", "target_tasks",    "points",       "seed_observations",
                                             "trials",       "grid_points",     "fine_tune_steps", "fine_tune_lr",
                                             "seed",         "train"};
    if (!j.is_object())
        throw ValidationError("sine demo config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ValidationError("unknown sine demo config key '" + it.key() + "'");
    SineDemoConfig c;
    try {
        c.source_tasks = j.value("source_tasks", c.source_tasks);
        c.target_tasks = j.value("target_tasks", c.target_tasks);
        c.points = j.value("points", c.points);
        c.seed_observations = j.value("seed_observations", c.seed_observations);
        c.trials = j.value("trials", c.trials);
        c.grid_points = j.value("grid_points", c.grid_points);
        c.fine_tune_steps = j.value("fine_tune_steps", c.fine_tune_steps);
        c.fine_tune_lr = j.value("fine_tune_lr", c.fine_tune_lr);
        c.seed = j.value("seed", c.seed);
        if (j.contains("train"))
            c.train = train_config_from_json(j.at("train"));
    }
    catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("sine demo config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Posterior state before one proposal, in the maximization scale.
struct SineStepTrace {
    Eigen::VectorXd x, mean, std, ei;
    double chosen_x = 0.0;
    double chosen_value = 0.0;
};

struct SineDemoRun {
    SineTask task;
    std::vector<double> fsbo_x, fsbo_values;     ///< seed observations first; values are a sin(x + b)
    std::vector<double> random_x, random_values;
    std::vector<SineStepTrace> traces;

    /// a - best value after the seeds plus `k` further trials.
    static double regret(const SineTask& t, const std::vector<double>& values, std::size_t seeds, std::size_t k)
    {
        const auto n = std::min(values.size(), seeds + k);
        return sine_maximum(t) - *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n));
    }
};

struct SineDemoResult {
    Checkpoint checkpoint;
    std::vector<SineDemoRun> runs;
    SineDemoConfig config;

    /// Fraction of targets where FSBO's regret after `k` trials is below tol * a.
    double success_rate(std::size_t k, double tol = 0.05) const
    {
        std::size_t hits = 0;
        for (const auto& r : runs)
            hits += SineDemoRun::regret(r.task, r.fsbo_values, config.seed_observations, k) < tol * r.task.amplitude;
        return runs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(runs.size());
    }

    double median_regret(bool fsbo, std::size_t k) const
    {
        std::vector<double> v;
        for (const auto& r : runs)
            v.push_back(SineDemoRun::regret(r.task, fsbo ? r.fsbo_values : r.random_values, config.seed_observations, k));
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        if (n == 0)
            return std::numeric_limits<double>::quiet_NaN();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
};

namespace detail {

/// Wraps a model and records its posterior on a fixed grid at every proposal.
template <SurrogateModel Inner>
struct GridTracingModel {
    Inner& inner;
    Eigen::MatrixXd grid;   ///< encoded
    Eigen::VectorXd grid_x; ///< reported coordinates
    std::vector<SineStepTrace>* out;

    PosteriorPrediction predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Xc,
                                Rng& rng)
    {
        Eigen::MatrixXd all(Xc.rows() + grid.rows(), Xc.cols());
        all << Xc, grid;
        const PosteriorPrediction p = inner.predict(X, y, all, rng);
        const auto G = grid.rows();
        SineStepTrace t;
        t.x = grid_x;
        t.mean = -p.mean.tail(G);
        t.std = p.variance.tail(G).cwiseMax(0.0).cwiseSqrt();
        t.ei.resize(G);
        const double best_g = -y.minCoeff();
        for (Eigen::Index i = 0; i < G; ++i)
            t.ei[i] = expected_improvement(t.mean[i], p.variance.tail(G)[i], best_g);
        out->push_back(std::move(t));
        PosteriorPrediction head;
        head.mean = p.mean.head(Xc.rows());
        head.variance = p.variance.head(Xc.rows());
        return head;
    }
};

} // namespace detail

/// Meta-trains on sine source tasks, then runs FSBO and random search from
/// the same seed observations on fresh sine targets.
inline SineDemoResult sine_demo(const SineDemoConfig& cfg, const TrainProgress& progress = {})
{
    cfg.validate();
    SineDemoResult res;
    res.config = cfg;
    const auto sources = sine_dataset(cfg.source_tasks, cfg.seed, cfg.points);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "sine-meta-train", 0);
    res.checkpoint = meta_train(sources, tc, progress);

    const SearchSpace space = sine_space();
    // trace grid: raw x for the CSVs, encoded rows for the model
    std::vector<Config> grid_configs(cfg.grid_points);
    Eigen::VectorXd grid_x(static_cast<Eigen::Index>(cfg.grid_points));
    for (std::size_t i = 0; i < cfg.grid_points; ++i) {
        grid_x[static_cast<Eigen::Index>(i)] =
            -5.0 + 10.0 * static_cast<double>(i) / static_cast<double>(cfg.grid_points - 1);
        grid_configs[i].values["x"] = grid_x[static_cast<Eigen::Index>(i)];
    }
    const Eigen::MatrixXd grid = encode_all(space, grid_configs);

    Rng targets(derive_seed(cfg.seed, "sine-targets", 0));
    for (std::size_t k = 0; k < cfg.target_tasks; ++k) {
        SineDemoRun run;
        run.task = sample_sine_task(targets);
        const SineTask task = run.task;

        Rng init_rng(derive_seed(cfg.seed, "sine-init", k));
        BoConfig bo;
        for (std::size_t i = 0; i < cfg.seed_observations; ++i)
            bo.init_configs.push_back(space.sample_uniform(init_rng));
        bo.budget = cfg.seed_observations + cfg.trials;
        bo.strategy = CandidateStrategy::random;
        bo.fine_tune_steps = cfg.fine_tune_steps;
        bo.fine_tune_lr = cfg.fine_tune_lr;
        bo.seed = derive_seed(cfg.seed, "sine-bo", k);

        BoProblem problem;
        problem.space = &space;
        problem.oracle = [task](const Config& c) { return -sine_value(task, c.real("x")); };
        problem.f_min = -sine_maximum(task);
        problem.f_max = sine_maximum(task);

        FsboModel model;
        model.start = res.checkpoint.surrogate;
        model.steps = cfg.fine_tune_steps;
        model.lr = cfg.fine_tune_lr;
        detail::GridTracingModel<FsboModel> traced{model, grid, grid_x, &run.traces};
        const RunHistory h = run_bo(problem, bo, traced);
        if (!h.error.empty())
            throw NumericalError("sine target " + std::to_string(k) + ": " + h.error);
        for (const auto& t : h.trials) {
            run.fsbo_x.push_back(t.config.real("x"));
            run.fsbo_values.push_back(-t.y);
        }
        for (std::size_t s = 0; s < run.traces.size(); ++s) {
            run.traces[s].chosen_x = run.fsbo_x[cfg.seed_observations + s];
            run.traces[s].chosen_value = run.fsbo_values[cfg.seed_observations + s];
        }

        Rng rand_rng(derive_seed(cfg.seed, "sine-random", k));
        for (std::size_t i = 0; i < bo.budget; ++i) {
            const double x = i < cfg.seed_observations ? run.fsbo_x[i] : space.sample_uniform(rand_rng).real("x");
            run.random_x.push_back(x);
            run.random_values.push_back(sine_value(task, x));
        }
        res.runs.push_back(std::move(run));
    }
    return res;
}

/// summary.csv (per target, method and trial), target_NN/points.csv and
/// target_NN/step_MM.csv with the grid posterior and EI before each proposal.
inline void write_sine_demo(const SineDemoResult& r, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto S = r.config.seed_observations;
    std::ostringstream sum;
    sum << "target,amplitude,phase,method,trial,regret\n";
    for (std::size_t k = 0; k < r.runs.size(); ++k) {
        const auto& run = r.runs[k];
        for (const char* m : {"fsbo", "random"})
            for (std::size_t t = 0; t <= r.config.trials; ++t)
                sum << k << ',' << format_real(run.task.amplitude) << ',' << format_real(run.task.phase) << ',' << m
                    << ',' << t << ','
                    << format_real(SineDemoRun::regret(run.task, std::string(m) == "fsbo" ? run.fsbo_values
                                                                                          : run.random_values,
                                                       S, t))
                    << '\n';

        char name[32];
        std::snprintf(name, sizeof name, "target_%02zu", k);
        const auto sub = dir / name;
        fs::create_directories(sub);
        std::ostringstream pts;
        pts << "trial,x,value,source\n";
        for (std::size_t i = 0; i < run.fsbo_x.size(); ++i)
            pts << i + 1 << ',' << format_real(run.fsbo_x[i]) << ',' << format_real(run.fsbo_values[i]) << ','
                << (i < S ? "seed" : "fsbo") << '\n';
        write_text(sub / "points.csv", pts.str());
        for (std::size_t s = 0; s < run.traces.size(); ++s) {
            const auto& t = run.traces[s];
            std::ostringstream out;
            out << "x,mean,std,ei,true_value\n";
            for (Eigen::Index i = 0; i < t.x.size(); ++i)
                out << format_real(t.x[i]) << ',' << format_real(t.mean[i]) << ',' << format_real(t.std[i]) << ','
                    << format_real(t.ei[i]) << ',' << format_real(sine_value(run.task, t.x[i])) << '\n';
            std::snprintf(name, sizeof name, "step_%02zu.csv", s + 1);
            write_text(sub / name, out.str());
        }
    }
    write_text(dir / "summary.csv", sum.str());
}

} // namespace fsbo
