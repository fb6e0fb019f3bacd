#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fsbo/dkgp.hpp"
#include "fsbo/error.hpp"
#include "fsbo/metadata.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/search_space.hpp"

namespace fsbo {

/// Normalized responses of C candidates on T source tasks.
struct ResponseMatrix {
    std::vector<Config> candidates;
    std::vector<std::string> task_ids;
    Eigen::MatrixXd values;                          ///< C x T, each column scaled to [0, 1]
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> imputed; ///< C x T
    std::size_t imputation_fallbacks = 0;            ///< tasks imputed with their mean after a numerical failure
    std::vector<std::string> dropped_tasks;          ///< constant tasks left out of the matrix

    std::size_t num_candidates() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t num_tasks() const { return static_cast<std::size_t>(values.cols()); }
};

struct ImputationOptions {
    std::size_t fine_tune_steps = 100;
    double fine_tune_lr = 1e-3;
    std::size_t max_records = 256; ///< larger tables are fine-tuned on an evenly strided subset
};

/// Every distinct config recorded in any of the tasks, in first-seen order.
inline std::vector<Config> union_candidates(const SearchSpace& space, const std::vector<const Task*>& tasks)
{
    std::vector<Config> out;
    std::vector<Eigen::VectorXd> seen;
    for (const Task* t : tasks) {
        for (const auto& r : t->records()) {
            const Eigen::VectorXd x = space.encode_unchecked(r.config);
            const bool dup = std::any_of(seen.begin(), seen.end(), [&](const Eigen::VectorXd& s) {
                return ((s - x).array().abs() <= kGridTolerance).all();
            });
            if (!dup) {
                seen.push_back(x);
                out.push_back(r.config);
            }
        }
    }
    return out;
}

/// Observed entries come from the tables; the rest are posterior means of
/// the surrogate fine-tuned on that task. Predictions are clipped to the
/// task's recorded range, so each column is normalize_response of the task.
inline ResponseMatrix build_response_matrix(const DeepKernelSurrogate& start, const SearchSpace& space,
                                            const std::vector<const Task*>& tasks, std::vector<Config> candidates,
                                            const ImputationOptions& opt = {})
{
    if (candidates.empty())
        throw ValidationError("response matrix needs at least one candidate");
    const Eigen::MatrixXd Xc = encode_all(space, candidates);
    const auto C = static_cast<Eigen::Index>(candidates.size());

    ResponseMatrix m;
    m.candidates = std::move(candidates);
    std::vector<Eigen::VectorXd> cols;
    std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> masks;

    for (const Task* t : tasks) {
        if (!(t->f_max() > t->f_min())) {
            m.dropped_tasks.push_back(t->id());
            continue;
        }
        Eigen::VectorXd raw(C);
        Eigen::Array<bool, Eigen::Dynamic, 1> imputed(C);
        std::vector<Eigen::Index> missing;
        for (Eigen::Index i = 0; i < C; ++i) {
            if (auto row = t->find(Xc.row(i).transpose())) {
                raw[i] = t->records()[*row].y;
                imputed[i] = false;
            }
            else {
                missing.push_back(i);
                imputed[i] = true;
            }
        }
        if (!missing.empty()) {
            // training subset: all records, or an even stride through them
            const std::size_t n = t->size();
            const std::size_t k = std::min(n, std::max<std::size_t>(opt.max_records, 1));
            Eigen::MatrixXd X(static_cast<Eigen::Index>(k), t->X().cols());
            Eigen::VectorXd y(static_cast<Eigen::Index>(k));
            for (std::size_t j = 0; j < k; ++j) {
                const auto r = static_cast<Eigen::Index>(j * n / k);
                X.row(static_cast<Eigen::Index>(j)) = t->X().row(r);
                y[static_cast<Eigen::Index>(j)] = t->y()[r];
            }
            Eigen::MatrixXd Xq(static_cast<Eigen::Index>(missing.size()), Xc.cols());
            for (std::size_t j = 0; j < missing.size(); ++j)
                Xq.row(static_cast<Eigen::Index>(j)) = Xc.row(missing[j]);
            Eigen::VectorXd pred;
            try {
                auto ft = fine_tune(start, X, y, opt.fine_tune_steps, opt.fine_tune_lr);
                if (!ft.ok)
                    throw NumericalError("fine-tuning failed");
                pred = ft.surrogate.posterior(X, y, Xq).mean;
                if (!pred.allFinite())
                    throw NumericalError("non-finite imputation");
            }
            catch (const NumericalError&) {
                ++m.imputation_fallbacks;
                pred = Eigen::VectorXd::Constant(Xq.rows(), t->y().mean());
            }
            for (std::size_t j = 0; j < missing.size(); ++j)
                raw[missing[j]] = std::clamp(pred[static_cast<Eigen::Index>(j)], t->f_min(), t->f_max());
        }
        Eigen::VectorXd col(C);
        for (Eigen::Index i = 0; i < C; ++i)
            col[i] = normalize_response(*t, raw[i]);
        cols.push_back(std::move(col));
        masks.push_back(std::move(imputed));
        m.task_ids.push_back(t->id());
    }
    if (cols.empty())
        throw DegenerateTaskError("every source task is constant");
    m.values.resize(C, static_cast<Eigen::Index>(cols.size()));
    m.imputed.resize(C, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t t = 0; t < cols.size(); ++t) {
        m.values.col(static_cast<Eigen::Index>(t)) = cols[t];
        m.imputed.col(static_cast<Eigen::Index>(t)) = masks[t];
    }
    return m;
}

/// Matrix from given normalized values, every entry marked observed.
inline ResponseMatrix response_matrix_from_values(const Eigen::MatrixXd& values)
{
    ResponseMatrix m;
    m.values = values;
    m.imputed = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(values.rows(), values.cols(), false);
    m.candidates.resize(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index t = 0; t < values.cols(); ++t)
        m.task_ids.push_back("t" + std::to_string(t));
    return m;
}

using CandidateSet = std::vector<std::size_t>; ///< sorted, duplicate-free row indices

/// Sum over tasks of the best value in the set.
inline double set_loss(const CandidateSet& set, const ResponseMatrix& m)
{
    if (set.empty())
        throw ValidationError("set_loss needs a nonempty set");
    double total = 0.0;
    for (Eigen::Index t = 0; t < m.values.cols(); ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (auto i : set) {
            if (i >= m.num_candidates())
                throw ValidationError("candidate index out of range");
            best = std::min(best, m.values(static_cast<Eigen::Index>(i), t));
        }
        total += best;
    }
    return total;
}

/// exp(-min_t value), the unnormalized chance of drawing a candidate.
inline double init_weight(const Eigen::Ref<const Eigen::RowVectorXd>& row) { return std::exp(-row.minCoeff()); }

namespace detail {

inline std::vector<double> candidate_weights(const ResponseMatrix& m)
{
    std::vector<double> w(m.num_candidates());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = init_weight(m.values.row(static_cast<Eigen::Index>(i)));
    return w;
}

/// Weighted draw among indices whose `allowed` flag is set; npos when none.
inline std::size_t weighted_draw(const std::vector<double>& w, const std::vector<char>& allowed, Rng& rng)
{
    std::vector<double> masked(w.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        masked[i] = allowed[i] ? w[i] : 0.0;
        total += masked[i];
    }
    if (total <= 0.0)
        return static_cast<std::size_t>(-1);
    return std::discrete_distribution<std::size_t>(masked.begin(), masked.end())(rng);
}

} // namespace detail

/// I distinct candidates drawn one after another in proportion to init_weight.
inline CandidateSet sample_initial_set(const ResponseMatrix& m, std::size_t set_size, Rng& rng,
                                       const std::vector<double>* weights = nullptr)
{
    if (set_size < 1 || set_size > m.num_candidates())
        throw ValidationError("set size must lie in [1, number of candidates]");
    const auto w = weights ? *weights : detail::candidate_weights(m);
    std::vector<char> allowed(m.num_candidates(), 1);
    CandidateSet s;
    for (std::size_t k = 0; k < set_size; ++k) {
        const auto i = detail::weighted_draw(w, allowed, rng);
        allowed[i] = 0;
        s.push_back(i);
    }
    std::sort(s.begin(), s.end());
    return s;
}

/// Removes one member uniformly and adds a weighted draw from the candidates
/// outside the set, excluding the removed one unless nothing else is left.
inline CandidateSet mutate(const CandidateSet& set, const ResponseMatrix& m, Rng& rng,
                           const std::vector<double>* weights = nullptr)
{
    if (set.empty())
        throw ValidationError("cannot mutate an empty set");
    const auto w = weights ? *weights : detail::candidate_weights(m);
    CandidateSet out = set;
    const auto pos = std::uniform_int_distribution<std::size_t>(0, out.size() - 1)(rng);
    const std::size_t removed = out[pos];
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(pos));
    std::vector<char> allowed(m.num_candidates(), 1);
    for (auto i : out)
        allowed[i] = 0;
    allowed[removed] = 0;
    auto pick = detail::weighted_draw(w, allowed, rng);
    if (pick == static_cast<std::size_t>(-1))
        pick = removed;
    out.insert(std::upper_bound(out.begin(), out.end(), pick), pick);
    return out;
}

/// I distinct members drawn uniformly from the union of the parents.
inline CandidateSet crossover(const CandidateSet& a, const CandidateSet& b, Rng& rng)
{
    if (a.size() != b.size() || a.empty())
        throw ValidationError("crossover needs two parents of equal nonzero size");
    CandidateSet pool;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(pool));
    CandidateSet child;
    std::sample(pool.begin(), pool.end(), std::back_inserter(child), a.size(), rng);
    std::sort(child.begin(), child.end());
    return child;
}

struct EaConfig {
    std::size_t set_size = 5;
    std::size_t population_size = 100;
    std::size_t steps = 100000;
    double mutation_prob = 0.5;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (set_size < 1)
            throw ValidationError("set_size must be >= 1");
        if (population_size < 2)
            throw ValidationError("population_size must be >= 2");
        if (!(mutation_prob > 0.0 && mutation_prob < 1.0))
            throw ValidationError("mutation_prob must lie in (0, 1)");
    }
};

struct EaResult {
    CandidateSet best;
    double best_loss = 0.0;
    std::vector<double> loss_trace; ///< best loss after initialization and after every step
    std::vector<Config> configs;    ///< candidates of `best`
};

/// Steady-state evolution of candidate sets. Each step produces one child
/// by mutation (probability mutation_prob) or crossover of two distinct
/// parents; the population keeps its population_size lowest-loss distinct sets.
inline EaResult evolve(const ResponseMatrix& m, const EaConfig& cfg)
{
    cfg.validate();
    if (m.num_candidates() < cfg.set_size)
        throw ValidationError("fewer candidates than the set size");
    Rng rng(derive_seed(cfg.seed, "evolve", 0));
    const auto weights = detail::candidate_weights(m);

    struct Member {
        CandidateSet set;
        double loss;
    };
    std::vector<Member> pop; // sorted by loss, ties keep insertion order
    auto insert = [&](CandidateSet s) {
        for (const auto& p : pop)
            if (p.set == s)
                return;
        const double l = set_loss(s, m);
        auto it = std::upper_bound(pop.begin(), pop.end(), l, [](double v, const Member& p) { return v < p.loss; });
        pop.insert(it, Member{std::move(s), l});
        if (pop.size() > cfg.population_size)
            pop.pop_back();
    };

    for (std::size_t k = 0; k < cfg.population_size; ++k)
        insert(sample_initial_set(m, cfg.set_size, rng, &weights));

    EaResult r;
    r.loss_trace.reserve(cfg.steps + 1);
    r.loss_trace.push_back(pop.front().loss);
    std::bernoulli_distribution coin(cfg.mutation_prob);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::uniform_int_distribution<std::size_t> parent(0, pop.size() - 1);
        if (coin(rng) || pop.size() < 2) {
            insert(mutate(pop[parent(rng)].set, m, rng, &weights));
        }
        else {
            const auto i = parent(rng);
            auto j = std::uniform_int_distribution<std::size_t>(0, pop.size() - 2)(rng);
            if (j >= i)
                ++j;
            insert(crossover(pop[i].set, pop[j].set, rng));
        }
        r.loss_trace.push_back(pop.front().loss);
    }
    r.best = pop.front().set;
    r.best_loss = pop.front().loss;
    for (auto i : r.best)
        if (i < m.candidates.size())
            r.configs.push_back(m.candidates[i]);
    return r;
}

inline nlohmann::json to_json(const EaConfig& c)
{
    return {{"set_size", c.set_size},
            {"population_size", c.population_size},
            {"steps", c.steps},
            {"mutation_prob", c.mutation_prob},
            {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline EaConfig ea_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ValidationError("EA config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "set_size" && it.key() != "population_size" && it.key() != "steps" &&
            it.key() != "mutation_prob" && it.key() != "seed")
            throw ValidationError("unknown EA config key '" + it.key() + "'");
    EaConfig c;
    try {
        c.set_size = j.value("set_size", c.set_size);
        c.population_size = j.value("population_size", c.population_size);
        c.steps = j.value("steps", c.steps);
        c.mutation_prob = j.value("mutation_prob", c.mutation_prob);
        c.seed = j.value("seed", c.seed);
    }
    catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("EA config: ") + e.what());
    }
    c.validate();
    return c;
}

/// JSON list of configs, the form accepted as an initial design.
inline nlohmann::json configs_to_json(const std::vector<Config>& configs)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : configs)
        arr.push_back(to_json(c));
    return arr;
}

inline std::vector<Config> configs_from_json(const nlohmann::json& j)
{
    if (!j.is_array())
        throw ValidationError("expected a JSON list of configurations");
    std::vector<Config> out;
    for (const auto& c : j)
        out.push_back(config_from_json(c));
    return out;
}

} // namespace fsbo
