#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "fsbo/adam.hpp"
#include "fsbo/error.hpp"
#include "fsbo/gp.hpp"
#include "fsbo/kernels.hpp"
#include "fsbo/mlp.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

/// Lower bound on the noise variance, enforced after every update.
inline constexpr double kNoiseFloor = 1e-8;

struct SurrogateArchitecture {
    std::vector<Eigen::Index> widths{128, 128};
    BaseKernel kernel = BaseKernel::squared_exponential;
    bool ard = true;
    Eigen::Index mixture_components = 4;
};

/// Deep-kernel GP: k(phi(x), phi(x')) with a zero prior mean.
struct DeepKernelSurrogate {
    MlpParams mlp;
    KernelParams kernel;

    static DeepKernelSurrogate make(Eigen::Index input_dim, const SurrogateArchitecture& arch, Rng& rng)
    {
        DeepKernelSurrogate s;
        s.mlp = MlpParams::make(input_dim, arch.widths, rng);
        s.kernel = KernelParams::make(arch.kernel, s.mlp.output_dim(), arch.ard, arch.mixture_components, &rng);
        return s;
    }

    Eigen::Index num_params() const { return mlp.num_params() + kernel.num_params(); }

    /// Feature-map entries first, then kernel entries.
    Eigen::VectorXd pack() const
    {
        Eigen::VectorXd v(num_params());
        mlp.pack(v.head(mlp.num_params()));
        kernel.pack(v.tail(kernel.num_params()));
        return v;
    }

    void unpack(const Eigen::Ref<const Eigen::VectorXd>& v)
    {
        if (v.size() != num_params())
            throw ValidationError("parameter vector has wrong size");
        mlp.unpack(v.head(mlp.num_params()));
        kernel.unpack(v.tail(kernel.num_params()));
    }

    /// Index of the noise entry in the packed vector.
    Eigen::Index noise_index() const { return mlp.num_params() + 1; }

    bool all_finite() const { return mlp.all_finite() && kernel.all_finite(); }

    Eigen::MatrixXd features(const Eigen::MatrixXd& X) const { return feature_map(mlp, X); }

    GramFactor gram(const Eigen::MatrixXd& X) const { return factor_gram(kernel, features(X)); }

    PosteriorPrediction posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Xq,
                                  bool full_covariance = false) const
    {
        const Eigen::MatrixXd Zq = features(Xq);
        if (X.rows() == 0)
            return gp_posterior(kernel, Eigen::MatrixXd(0, Zq.cols()), y, Zq, full_covariance);
        return gp_posterior(kernel, features(X), y, Zq, full_covariance);
    }

    double nll(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const { return gp_nll(kernel, features(X), y); }
};

struct SurrogateGradient {
    double nll = 0.0;
    DeepKernelSurrogate grad; ///< same shape as the surrogate

    Eigen::VectorXd packed() const { return grad.pack(); }
};

/// Exact gradient of nll over every feature-map and kernel parameter.
inline SurrogateGradient nll_grad(const DeepKernelSurrogate& s, const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
{
    MlpTape tape;
    const Eigen::MatrixXd Z = feature_map(s.mlp, X, &tape);
    auto g = gp_nll_grad(s.kernel, Z, y);
    SurrogateGradient out;
    out.nll = g.nll;
    out.grad.kernel = std::move(g.dkernel);
    out.grad.mlp = feature_map_backward(s.mlp, tape, std::move(g.dZ));
    return out;
}

/// Per-entry learning rates: `lr_w` for the feature map, `lr_theta` for the kernel.
inline Eigen::VectorXd learning_rates(const DeepKernelSurrogate& s, double lr_theta, double lr_w)
{
    Eigen::VectorXd lr(s.num_params());
    lr.head(s.mlp.num_params()).setConstant(lr_w);
    lr.tail(s.kernel.num_params()).setConstant(lr_theta);
    return lr;
}

inline void apply_noise_floor(DeepKernelSurrogate& s)
{
    s.kernel.log_noise_variance = std::max(s.kernel.log_noise_variance, std::log(kNoiseFloor));
}

/// One full update of the surrogate from a packed gradient.
inline void surrogate_adam_step(DeepKernelSurrogate& s, const Eigen::VectorXd& grad, AdamState& state,
                                const Eigen::VectorXd& lr)
{
    Eigen::VectorXd p = s.pack();
    adam_step(p, grad, state, lr);
    s.unpack(p);
    apply_noise_floor(s);
}

struct FineTuneResult {
    DeepKernelSurrogate surrogate;
    bool ok = true;           ///< false when a numerical failure forced a fallback
    std::size_t steps_run = 0;
    double nll_before = 0.0;
    double nll_after = 0.0;
};

/// Full-batch Adam on the target observations, starting from `start`.
/// Labels are used as given. On numerical failure the starting parameters
/// are returned with `ok = false`.
inline FineTuneResult fine_tune(const DeepKernelSurrogate& start, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                std::size_t steps, double lr)
{
    if (X.rows() == 0 || y.size() != X.rows())
        throw ValidationError("fine_tune needs a nonempty target set");
    FineTuneResult r{start, true, 0, 0.0, 0.0};
    if (steps == 0) {
        return r;
    }
    try {
        DeepKernelSurrogate s = start;
        AdamState state = AdamState::zeros(s.num_params());
        const Eigen::VectorXd rates = Eigen::VectorXd::Constant(s.num_params(), lr);
        for (std::size_t k = 0; k < steps; ++k) {
            auto g = nll_grad(s, X, y);
            if (k == 0)
                r.nll_before = g.nll;
            const Eigen::VectorXd gp = g.packed();
            if (!gp.allFinite())
                throw NumericalError("non-finite gradient");
            surrogate_adam_step(s, gp, state, rates);
            if (!s.all_finite())
                throw NumericalError("non-finite parameters");
            ++r.steps_run;
        }
        r.nll_after = s.nll(X, y);
        r.surrogate = std::move(s);
    }
    catch (const NumericalError&) {
        r.surrogate = start;
        r.ok = false;
    }
    return r;
}

} // namespace fsbo
