#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fsbo/dkgp.hpp"
#include "fsbo/error.hpp"
#include "fsbo/metadata.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/search_space.hpp"

namespace fsbo {

/// Smallest predictive standard deviation used in the EI quotient.
inline constexpr double kSigmaFloor = 1e-12;

inline double standard_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// E[max(g - best, 0)] for g ~ N(mean, variance), the maximization form.
/// Zero variance gives the deterministic improvement.
inline double expected_improvement(double mean, double variance, double best)
{
    const double diff = mean - best;
    if (!(variance > 0.0))
        return std::max(diff, 0.0);
    const double sigma = std::max(std::sqrt(variance), kSigmaFloor);
    const double z = diff / sigma;
    return std::max(diff * standard_normal_cdf(z) + sigma * standard_normal_pdf(z), 0.0);
}

/// Index of the EI-maximizing candidate. `mean_g` and `variance` describe
/// the maximization objective g = -loss; ties go to the higher mean, then
/// the lower index.
inline std::size_t propose_index(const Eigen::VectorXd& mean_g, const Eigen::VectorXd& variance, double best_g,
                                 Eigen::VectorXd* ei_out = nullptr)
{
    if (mean_g.size() == 0)
        throw ValidationError("no candidates to propose from");
    if (variance.size() != mean_g.size())
        throw ValidationError("mean and variance sizes differ");
    Eigen::VectorXd ei(mean_g.size());
    std::size_t best = 0;
    for (Eigen::Index i = 0; i < mean_g.size(); ++i) {
        ei[i] = expected_improvement(mean_g[i], variance[i], best_g);
        const auto b = static_cast<Eigen::Index>(best);
        if (i > 0 && (ei[i] > ei[b] || (ei[i] == ei[b] && mean_g[i] > mean_g[b])))
            best = static_cast<std::size_t>(i);
    }
    if (ei_out)
        *ei_out = std::move(ei);
    return best;
}

enum class CandidateStrategy { table, random };

struct BoConfig {
    std::size_t budget = 100;
    std::vector<Config> init_configs;
    std::size_t fine_tune_steps = 100;
    double fine_tune_lr = 1e-3;
    CandidateStrategy strategy = CandidateStrategy::table;
    std::size_t n_candidates = 1000; ///< random strategy only
    std::uint64_t seed = 0;
};

struct Trial {
    Config config;
    double y = 0.0;         ///< observed loss
    double incumbent = 0.0; ///< best loss so far
    double regret = std::numeric_limits<double>::quiet_NaN(); ///< normalized; NaN without known bounds
};

struct RunHistory {
    std::vector<Trial> trials;
    bool exhausted = false;         ///< candidate pool ran dry before the budget
    std::size_t model_failures = 0; ///< trials decided by a random fallback after a numerical failure
    std::string error;              ///< nonempty when the run was aborted

    std::size_t size() const { return trials.size(); }

    /// Incumbent loss after `n` trials (1-based; clamped to the last trial).
    double incumbent_at(std::size_t n) const
    {
        if (trials.empty() || n == 0)
            throw ValidationError("history has no trial " + std::to_string(n));
        return trials[std::min(n, trials.size()) - 1].incumbent;
    }
};

/// A black box plus what is known about it.
struct BoProblem {
    const SearchSpace* space = nullptr;
    std::function<double(const Config&)> oracle;
    const Task* table = nullptr; ///< candidate rows for the table strategy
    double f_min = std::numeric_limits<double>::quiet_NaN();
    double f_max = std::numeric_limits<double>::quiet_NaN();
};

/// Problem that replays a recorded task; regret uses the task's extrema.
inline BoProblem table_problem(const SearchSpace& space, const Task& task)
{
    BoProblem p;
    p.space = &space;
    p.table = &task;
    p.oracle = [&space, &task](const Config& c) { return tabular_oracle(task, space, c); };
    p.f_min = task.f_min();
    p.f_max = task.f_max();
    return p;
}

/// Unevaluated table rows, or `n` uniform samples plus, for a single
/// continuous parameter, a 512-point even grid.
inline std::vector<Config> candidate_pool(CandidateStrategy strategy, const SearchSpace& space, const Task* table,
                                          const std::set<std::size_t>& evaluated_rows, std::size_t n, Rng& rng)
{
    std::vector<Config> pool;
    if (strategy == CandidateStrategy::table) {
        if (!table)
            throw ValidationError("table strategy needs a task table");
        for (std::size_t r = 0; r < table->size(); ++r)
            if (!evaluated_rows.count(r))
                pool.push_back(table->records()[r].config);
        return pool;
    }
    pool.reserve(n + 512);
    for (std::size_t i = 0; i < n; ++i)
        pool.push_back(space.sample_uniform(rng));
    if (space.size() == 1 && space.params()[0].kind == ParamKind::continuous) {
        const auto& p = space.params()[0];
        for (int i = 0; i < 512; ++i) {
            Config c;
            c.values[p.name] = SearchSpace::from_unit_position(p, i / 511.0);
            pool.push_back(std::move(c));
        }
    }
    return pool;
}

/// Predictive distribution of the loss at the candidates given the target
/// observations. Models may use `rng` for fresh initializations.
template <class M>
concept SurrogateModel = requires(M m, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Rng& rng) {
    { m.predict(X, y, X, rng) } -> std::same_as<PosteriorPrediction>;
};

/// Meta-learned surrogate, fine-tuned on the target observations every trial.
struct FsboModel {
    DeepKernelSurrogate start;
    std::size_t steps = 100;
    double lr = 1e-3;
    bool cumulative = false; ///< continue from the previous trial's parameters instead of the checkpoint
    std::size_t fine_tune_failures = 0;

    PosteriorPrediction predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Xc, Rng&)
    {
        auto r = fine_tune(cumulative && tuned_ ? *tuned_ : start, X, y, steps, lr);
        if (!r.ok)
            ++fine_tune_failures;
        if (cumulative)
            tuned_ = r.surrogate;
        return r.surrogate.posterior(X, y, Xc);
    }

private:
    std::optional<DeepKernelSurrogate> tuned_;
};

/// Deep-kernel GP trained from a fresh initialization on the target data only.
struct ScratchDeepKernelModel {
    SurrogateArchitecture architecture;
    std::size_t steps = 100;
    double lr = 1e-3;

    PosteriorPrediction predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Xc,
                                Rng& rng)
    {
        const auto init = DeepKernelSurrogate::make(X.cols(), architecture, rng);
        return fine_tune(init, X, y, steps, lr).surrogate.posterior(X, y, Xc);
    }
};

namespace detail {

inline void record_trial(RunHistory& h, const BoProblem& problem, Config config, double y)
{
    Trial t;
    t.config = std::move(config);
    t.y = y;
    t.incumbent = h.trials.empty() ? y : std::min(h.trials.back().incumbent, y);
    if (std::isfinite(problem.f_min) && std::isfinite(problem.f_max) && problem.f_max > problem.f_min)
        t.regret = normalize_response(problem.f_min, problem.f_max, t.incumbent);
    h.trials.push_back(std::move(t));
}

} // namespace detail

/// Sequential EI optimization: the initial design first, then one proposal
/// per trial from the model's posterior over the candidate pool.
template <SurrogateModel Model>
RunHistory run_bo(const BoProblem& problem, const BoConfig& cfg, Model& model)
{
    if (!problem.space || !problem.oracle)
        throw ValidationError("problem needs a space and an oracle");
    if (cfg.init_configs.empty())
        throw ValidationError("at least one initial configuration is required");
    if (cfg.budget < cfg.init_configs.size())
        throw ValidationError("budget is smaller than the initial design");
    const SearchSpace& space = *problem.space;
    const bool use_table = cfg.strategy == CandidateStrategy::table;

    RunHistory h;
    Rng rng(derive_seed(cfg.seed, "bo", 0));
    std::set<std::size_t> evaluated_rows;
    std::vector<Eigen::VectorXd> xs;
    std::vector<double> ys;

    auto evaluate = [&](const Config& c) -> bool {
        try {
            const double y = problem.oracle(c);
            if (!std::isfinite(y))
                throw NumericalError("oracle returned a non-finite value");
            const Eigen::VectorXd x = space.encode(c);
            if (use_table && problem.table) {
                if (auto row = problem.table->find(x))
                    evaluated_rows.insert(*row);
            }
            xs.push_back(x);
            ys.push_back(y);
            detail::record_trial(h, problem, c, y);
            return true;
        }
        catch (const Error& e) {
            h.error = e.what();
            return false;
        }
    };

    for (const auto& c : cfg.init_configs)
        if (!evaluate(c))
            return h;

    while (h.size() < cfg.budget) {
        auto pool = candidate_pool(cfg.strategy, space, problem.table, evaluated_rows, cfg.n_candidates, rng);
        if (pool.empty()) {
            h.exhausted = true;
            break;
        }
        const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
        Eigen::MatrixXd X(n, static_cast<Eigen::Index>(space.encoded_dim()));
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            X.row(i) = xs[static_cast<std::size_t>(i)].transpose();
            y[i] = ys[static_cast<std::size_t>(i)];
        }
        const Eigen::MatrixXd Xc = encode_all(space, pool);
        std::size_t pick;
        try {
            const PosteriorPrediction p = model.predict(X, y, Xc, rng);
            if (!p.mean.allFinite() || !p.variance.allFinite())
                throw NumericalError("non-finite posterior");
            pick = propose_index(-p.mean, p.variance, -h.trials.back().incumbent);
        }
        catch (const NumericalError&) {
            ++h.model_failures;
            pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        }
        if (!evaluate(pool[pick]))
            return h;
    }
    return h;
}

// ---- serialization -------------------------------------------------------------

inline std::string csv_quote(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

/// Columns trial, config, objective, incumbent, normalized_regret; reals
/// with 17 significant digits.
inline std::string history_to_csv(const RunHistory& h)
{
    std::ostringstream out;
    out << "trial,config,objective,incumbent,normalized_regret\n";
    for (std::size_t i = 0; i < h.trials.size(); ++i) {
        const auto& t = h.trials[i];
        out << (i + 1) << ',' << csv_quote(to_json(t.config).dump()) << ',' << format_real(t.y) << ','
            << format_real(t.incumbent) << ',' << format_real(t.regret) << '\n';
    }
    return out.str();
}

} // namespace fsbo
