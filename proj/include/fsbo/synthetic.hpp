#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "fsbo/metadata.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/search_space.hpp"

namespace fsbo {

// ---- sine family ---------------------------------------------------------------

struct SineTask {
    double amplitude; ///< a
    double phase;     ///< b
};

/// One-dimensional space x in [-5, 5].
inline SearchSpace sine_space() { return SearchSpace({ParamSpec::continuous("x", -5.0, 5.0)}, "sine"); }

/// a ~ U(0.1, 5), b ~ U(0, 2 pi).
inline SineTask sample_sine_task(Rng& rng)
{
    std::uniform_real_distribution<double> a(0.1, 5.0), b(0.0, 2.0 * std::numbers::pi);
    const double amp = a(rng);
    return {amp, b(rng)};
}

/// The maximization target a sin(x + b).
inline double sine_value(const SineTask& t, double x) { return t.amplitude * std::sin(x + t.phase); }

/// Largest value of a sin(x + b) over [-5, 5]; the interval is wider than
/// 2 pi, so this is always a.
inline double sine_maximum(const SineTask& t) { return t.amplitude; }

/// `points` evenly spaced x in [-5, 5], stored as losses -a sin(x + b).
inline Task sine_task_table(const std::string& id, const SineTask& t, std::size_t points = 50)
{
    const auto space = sine_space();
    std::vector<Record> rows;
    rows.reserve(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double x = points == 1 ? 0.0 : -5.0 + 10.0 * static_cast<double>(i) / static_cast<double>(points - 1);
        Config c;
        c.values["x"] = x;
        rows.push_back({c, -sine_value(t, x)});
    }
    return Task(id, space, rows);
}

/// `n` source tasks drawn from the "sine-tasks" stream of `seed`.
inline MetaDataset sine_dataset(std::size_t n, std::uint64_t seed, std::size_t points = 50)
{
    Rng rng(derive_seed(seed, "sine-tasks", 0));
    std::vector<Task> tasks;
    tasks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "sine%04zu", i);
        tasks.push_back(sine_task_table(id, sample_sine_task(rng), points));
    }
    return MetaDataset(sine_space(), std::move(tasks));
}

// ---- shared-structure quadratic family -----------------------------------------

struct QuadraticFamily {
    std::size_t dim = 2;
    std::size_t tasks = 12;
    std::size_t grid_points = 200;
    double optimum_spread = 0.08; ///< per-task jitter of the shared optimum, in unit-cube coordinates
    double curvature_spread = 0.5;
};

/// Tasks f_t(x) = s_t * sum_d c_td (x_d - m_d - e_td)^2 + o_t on one shared
/// set of grid points in [0, 1]^dim. The optimum m is shared up to a small
/// per-task shift e_t; scale s_t and offset o_t vary widely so tasks differ in
/// range. Columns are named x0, x1, ...
inline MetaDataset quadratic_dataset(const QuadraticFamily& fam, std::uint64_t seed)
{
    if (fam.dim < 1 || fam.tasks < 2 || fam.grid_points < 2)
        throw ValidationError("quadratic family needs dim >= 1, tasks >= 2, grid_points >= 2");
    std::vector<ParamSpec> params;
    for (std::size_t d = 0; d < fam.dim; ++d)
        params.push_back(ParamSpec::continuous("x" + std::to_string(d), 0.0, 1.0));
    SearchSpace space(params, "quadratic");

    Rng rng(derive_seed(seed, "quadratic", 0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Config> grid(fam.grid_points);
    for (auto& c : grid)
        for (std::size_t d = 0; d < fam.dim; ++d)
            c.values["x" + std::to_string(d)] = unit(rng);

    std::vector<double> centre(fam.dim);
    for (auto& m : centre)
        m = 0.2 + 0.6 * unit(rng);

    std::normal_distribution<double> shift(0.0, fam.optimum_spread);
    std::vector<Task> tasks;
    for (std::size_t t = 0; t < fam.tasks; ++t) {
        std::vector<double> opt(fam.dim), curv(fam.dim);
        for (std::size_t d = 0; d < fam.dim; ++d) {
            opt[d] = centre[d] + shift(rng);
            curv[d] = 1.0 + fam.curvature_spread * (2.0 * unit(rng) - 1.0);
        }
        const double scale = std::exp(std::log(0.2) + unit(rng) * std::log(25.0)); // [0.2, 5]
        const double offset = 4.0 * unit(rng) - 2.0;
        std::vector<Record> rows;
        rows.reserve(grid.size());
        for (const auto& c : grid) {
            double v = 0.0;
            for (std::size_t d = 0; d < fam.dim; ++d) {
                const double z = c.real("x" + std::to_string(d)) - opt[d];
                v += curv[d] * z * z;
            }
            rows.push_back({c, scale * v + offset});
        }
        char id[32];
        std::snprintf(id, sizeof id, "quad%02zu", t);
        tasks.emplace_back(id, space, rows);
    }
    return MetaDataset(space, std::move(tasks));
}

} // namespace fsbo
