#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "fsbo/adam.hpp"
#include "fsbo/bo.hpp"
#include "fsbo/dkgp.hpp"
#include "fsbo/error.hpp"
#include "fsbo/gp.hpp"
#include "fsbo/kernels.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

/// s (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r) for a scaled distance r >= 0.
inline double matern52(double r, double signal_variance = 1.0)
{
    const double a = std::sqrt(5.0) * r;
    return signal_variance * (1.0 + a + a * a / 3.0) * std::exp(-a);
}

struct VanillaGpOptions {
    std::size_t restarts = 5;
    std::size_t steps = 200;
    double lr = 0.05;
};

/// Single-task Matern 5/2 ARD GP on standardized labels.
struct MaternGp {
    KernelParams kernel;
    Eigen::MatrixXd X;
    Eigen::VectorXd z; ///< standardized labels
    double label_mean = 0.0;
    double label_scale = 1.0;
    double nll = 0.0;        ///< on the standardized labels
    bool fallback = false;   ///< every restart failed; prior defaults in use

    /// Predictive distribution of the original labels.
    PosteriorPrediction predict(const Eigen::MatrixXd& Xq) const
    {
        auto p = gp_posterior(kernel, X, z, Xq);
        p.mean = (p.mean.array() * label_scale + label_mean).matrix();
        p.variance *= label_scale * label_scale;
        return p;
    }
};

inline KernelParams default_matern_params(Eigen::Index dim)
{
    return KernelParams::make(BaseKernel::matern52, dim, true);
}

/// Maximum-likelihood fit by Adam from several initializations. Restart 0
/// starts at unit lengthscales, the others at log-lengthscales drawn from
/// U(-2, 2); the lowest nll seen along any trajectory is kept.
inline MaternGp fit_vanilla_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Rng& rng,
                               const VanillaGpOptions& opt = {})
{
    if (X.rows() < 2 || y.size() != X.rows())
        throw ValidationError("vanilla GP needs at least 2 observations");
    MaternGp gp;
    gp.X = X;
    gp.label_mean = y.mean();
    const double sd = std::sqrt((y.array() - gp.label_mean).square().mean());
    gp.label_scale = sd > 0.0 ? sd : 1.0;
    gp.z = ((y.array() - gp.label_mean) / gp.label_scale).matrix();

    const Eigen::Index D = X.cols();
    std::uniform_real_distribution<double> init(-2.0, 2.0);
    bool found = false;
    double best_nll = std::numeric_limits<double>::infinity();
    KernelParams best = default_matern_params(D);

    for (std::size_t r = 0; r < std::max<std::size_t>(opt.restarts, 1); ++r) {
        KernelParams kp = default_matern_params(D);
        if (r > 0)
            for (Eigen::Index d = 0; d < D; ++d)
                kp.log_lengthscales[d] = init(rng);
        Eigen::VectorXd p(kp.num_params()), g(kp.num_params());
        AdamState st = AdamState::zeros(kp.num_params());
        try {
            for (std::size_t k = 0;; ++k) {
                auto grad = gp_nll_grad(kp, X, gp.z);
                if (grad.nll < best_nll) {
                    best_nll = grad.nll;
                    best = kp;
                    found = true;
                }
                if (k == opt.steps)
                    break;
                grad.dkernel.pack(g);
                if (!g.allFinite())
                    break;
                kp.pack(p);
                adam_step(p, g, st, opt.lr);
                kp.unpack(p);
                kp.log_noise_variance = std::max(kp.log_noise_variance, std::log(kNoiseFloor));
            }
        }
        catch (const NumericalError&) {
            // keep whatever this restart reached before failing
        }
    }
    gp.kernel = best;
    gp.fallback = !found;
    gp.nll = found ? best_nll : std::numeric_limits<double>::quiet_NaN();
    return gp;
}

/// GP(LHS) / GP(WS) surrogate: refit from scratch on every trial.
struct MaternGpModel {
    VanillaGpOptions options;
    std::size_t fallbacks = 0;

    PosteriorPrediction predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Xc,
                                Rng& rng)
    {
        if (X.rows() < 2) {
            MaternGp gp;
            gp.kernel = default_matern_params(X.cols());
            gp.X = X;
            gp.label_mean = y.mean();
            gp.z = Eigen::VectorXd::Zero(y.size());
            ++fallbacks;
            return gp.predict(Xc);
        }
        MaternGp gp = fit_vanilla_gp(X, y, rng, options);
        if (gp.fallback)
            ++fallbacks;
        return gp.predict(Xc);
    }
};

/// Uniform search: table rows without replacement, or uniform samples of
/// the space when no table is attached.
inline RunHistory random_search(const BoProblem& problem, std::size_t budget, Rng& rng)
{
    if (budget < 1)
        throw ValidationError("random search needs budget >= 1");
    if (!problem.space || !problem.oracle)
        throw ValidationError("problem needs a space and an oracle");
    RunHistory h;
    std::vector<Config> order;
    if (problem.table) {
        std::vector<std::size_t> rows(problem.table->size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        std::shuffle(rows.begin(), rows.end(), rng);
        for (std::size_t i = 0; i < std::min(budget, rows.size()); ++i)
            order.push_back(problem.table->records()[rows[i]].config);
        h.exhausted = budget > rows.size();
    }
    else {
        for (std::size_t i = 0; i < budget; ++i)
            order.push_back(problem.space->sample_uniform(rng));
    }
    for (auto& c : order) {
        try {
            const double y = problem.oracle(c);
            detail::record_trial(h, problem, std::move(c), y);
        }
        catch (const Error& e) {
            h.error = e.what();
            break;
        }
    }
    return h;
}

} // namespace fsbo
