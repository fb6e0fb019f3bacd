#pragma once

#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fsbo/error.hpp"
#include "fsbo/kernels.hpp"

namespace fsbo {

/// Initial diagonal jitter relative to the signal variance, and its ceiling.
inline constexpr double kJitterStart = 1e-6;
inline constexpr double kJitterMax = 1e-2;

/// K_n = k(Z, Z) + (noise + jitter) I together with its Cholesky factor.
struct GramFactor {
    Eigen::MatrixXd signal;     ///< k(Z, Z) without noise or jitter
    Eigen::MatrixXd K;          ///< full K_n
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;        ///< absolute jitter added to the diagonal
    double jitter_relative = 0.0;

    double log_det() const { return 2.0 * llt.matrixLLT().diagonal().array().log().sum(); }
};

/// Builds and factors K_n, escalating the jitter x10 from 1e-6 s up to 1e-2 s.
inline GramFactor factor_gram(const KernelParams& kp, const Eigen::MatrixXd& Z)
{
    if (Z.rows() < 1)
        throw ValidationError("gram needs at least one point");
    if (!kp.all_finite() || !Z.allFinite())
        throw NumericalError("non-finite kernel parameters or features");
    GramFactor f;
    f.signal = kernel_gram(kp, Z);
    const double s = kp.signal_variance(), noise = kp.noise_variance();
    for (double rel = kJitterStart; rel <= kJitterMax * 1.0000001; rel *= 10.0) {
        f.jitter_relative = rel;
        f.jitter = rel * s;
        f.K = f.signal;
        f.K.diagonal().array() += noise + f.jitter;
        f.llt.compute(f.K);
        if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().allFinite() &&
            (f.llt.matrixLLT().diagonal().array() > 0.0).all())
            return f;
    }
    throw NumericalError("Cholesky failed after jitter escalation to 1e-2 * signal variance");
}

/// Negative log marginal likelihood of y under a zero-mean GP with Gram `f`:
/// 0.5 y' K^-1 y + 0.5 log|K| + (n/2) log(2 pi).
inline double nll_from_factor(const GramFactor& f, const Eigen::VectorXd& y)
{
    const Eigen::VectorXd alpha = f.llt.solve(y);
    const double n = static_cast<double>(y.size());
    return 0.5 * y.dot(alpha) + 0.5 * f.log_det() + 0.5 * n * std::log(2.0 * std::numbers::pi);
}

inline double gp_nll(const KernelParams& kp, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y)
{
    if (y.size() != Z.rows() || y.size() < 1)
        throw ValidationError("nll needs |y| = rows(X) >= 1");
    return nll_from_factor(factor_gram(kp, Z), y);
}

struct GpGradient {
    double nll = 0.0;
    KernelParams dkernel;
    Eigen::MatrixXd dZ;
};

/// nll and its exact gradient w.r.t. kernel parameters and the features Z.
///
/// With alpha = K^-1 y the adjoint of K_n is G = (K^-1 - alpha alpha') / 2.
/// The jitter is proportional to the signal variance, so it contributes to
/// the signal-variance gradient through tr(G).
inline GpGradient gp_nll_grad(const KernelParams& kp, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y)
{
    if (y.size() != Z.rows() || y.size() < 1)
        throw ValidationError("nll needs |y| = rows(X) >= 1");
    const GramFactor f = factor_gram(kp, Z);
    const Eigen::Index n = y.size();
    const Eigen::VectorXd alpha = f.llt.solve(y);
    const Eigen::MatrixXd Kinv = f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd G = 0.5 * (Kinv - alpha * alpha.transpose());
    G = 0.5 * (G + G.transpose());

    GpGradient out;
    out.nll = 0.5 * y.dot(alpha) + 0.5 * f.log_det() + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    if (!std::isfinite(out.nll))
        throw NumericalError("non-finite marginal likelihood");

    auto adj = kernel_adjoint(kp, Z, G);
    out.dkernel = std::move(adj.dparams);
    out.dZ = std::move(adj.dZ);
    const double trG = G.trace();
    out.dkernel.log_signal_variance += f.jitter * trG;
    out.dkernel.log_noise_variance = kp.noise_variance() * trG;
    return out;
}

struct PosteriorPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;                ///< diagonal, clamped at 0
    std::optional<Eigen::MatrixXd> covariance;
};

/// Posterior of f* at the rows of Zq given observations (Z, y), via Cholesky
/// solves: mean = K*' K_n^-1 y, cov = K** - K*' K_n^-1 K*.
inline PosteriorPrediction gp_posterior(const KernelParams& kp, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& Zq, bool full_covariance = false)
{
    PosteriorPrediction p;
    const Eigen::Index m = Zq.rows();
    if (Z.rows() == 0) {
        p.mean = Eigen::VectorXd::Zero(m);
        p.variance = Eigen::VectorXd::Constant(m, kp.signal_variance());
        if (full_covariance)
            p.covariance = kernel_gram(kp, Zq);
        return p;
    }
    if (y.size() != Z.rows())
        throw ValidationError("posterior needs |y| = rows(X)");
    const GramFactor f = factor_gram(kp, Z);
    const Eigen::MatrixXd Ks = kernel_matrix(kp, Z, Zq);
    p.mean = Ks.transpose() * f.llt.solve(y);
    const Eigen::MatrixXd V = f.llt.matrixL().solve(Ks);
    if (full_covariance) {
        Eigen::MatrixXd C = kernel_gram(kp, Zq) - V.transpose() * V;
        p.variance = C.diagonal().cwiseMax(0.0);
        C.diagonal() = p.variance;
        p.covariance = std::move(C);
    }
    else {
        p.variance = (kp.signal_variance() - V.colwise().squaredNorm().transpose().array()).cwiseMax(0.0).matrix();
    }
    return p;
}

} // namespace fsbo
