#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "fsbo/error.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

enum class BaseKernel { squared_exponential, matern52, spectral_mixture };

inline const char* to_string(BaseKernel k)
{
    switch (k) {
    case BaseKernel::squared_exponential: return "squared-exponential";
    case BaseKernel::matern52: return "matern52";
    case BaseKernel::spectral_mixture: return "spectral-mixture";
    }
    return "?";
}

inline BaseKernel base_kernel_from_string(const std::string& s)
{
    if (s == "squared-exponential" || s == "se" || s == "rbf")
        return BaseKernel::squared_exponential;
    if (s == "matern52")
        return BaseKernel::matern52;
    if (s == "spectral-mixture" || s == "sm")
        return BaseKernel::spectral_mixture;
    throw ValidationError("unknown base kernel '" + s + "'");
}

/// Kernel hyperparameters, all positive quantities stored as logs.
///
/// Radial kernels (SE, Matern 5/2) use `log_lengthscales`, either one per
/// input dimension (ARD) or a single shared entry. The spectral mixture
///
///   k(d) = s * sum_q w_q exp(-2 pi^2 sum_p d_p^2 v_qp) cos(2 pi sum_p d_p mu_qp)
///
/// uses softmax-normalized weights w, means mu and log-variances log v, so
/// that k(0) = s for every kernel.
struct KernelParams {
    BaseKernel base = BaseKernel::squared_exponential;
    double log_signal_variance = 0.0;
    double log_noise_variance = std::log(1e-2);
    Eigen::VectorXd log_lengthscales;
    Eigen::VectorXd sm_log_weights;
    Eigen::MatrixXd sm_means;
    Eigen::MatrixXd sm_log_variances;

    double signal_variance() const { return std::exp(log_signal_variance); }
    double noise_variance() const { return std::exp(log_noise_variance); }

    bool is_radial() const { return base != BaseKernel::spectral_mixture; }

    /// Parameters with the same shape and every entry zero (gradient accumulator).
    KernelParams zeros_like() const
    {
        KernelParams z = *this;
        z.log_signal_variance = 0.0;
        z.log_noise_variance = 0.0;
        z.log_lengthscales.setZero();
        z.sm_log_weights.setZero();
        z.sm_means.setZero();
        z.sm_log_variances.setZero();
        return z;
    }

    Eigen::Index num_params() const
    {
        return 2 + log_lengthscales.size() + sm_log_weights.size() + sm_means.size() + sm_log_variances.size();
    }

    /// Order: signal, noise, lengthscales, weights, means, log-variances (row-major).
    void pack(Eigen::Ref<Eigen::VectorXd> out) const
    {
        Eigen::Index k = 0;
        out[k++] = log_signal_variance;
        out[k++] = log_noise_variance;
        for (Eigen::Index i = 0; i < log_lengthscales.size(); ++i)
            out[k++] = log_lengthscales[i];
        for (Eigen::Index i = 0; i < sm_log_weights.size(); ++i)
            out[k++] = sm_log_weights[i];
        for (Eigen::Index q = 0; q < sm_means.rows(); ++q)
            for (Eigen::Index p = 0; p < sm_means.cols(); ++p)
                out[k++] = sm_means(q, p);
        for (Eigen::Index q = 0; q < sm_log_variances.rows(); ++q)
            for (Eigen::Index p = 0; p < sm_log_variances.cols(); ++p)
                out[k++] = sm_log_variances(q, p);
    }

    void unpack(const Eigen::Ref<const Eigen::VectorXd>& in)
    {
        Eigen::Index k = 0;
        log_signal_variance = in[k++];
        log_noise_variance = in[k++];
        for (Eigen::Index i = 0; i < log_lengthscales.size(); ++i)
            log_lengthscales[i] = in[k++];
        for (Eigen::Index i = 0; i < sm_log_weights.size(); ++i)
            sm_log_weights[i] = in[k++];
        for (Eigen::Index q = 0; q < sm_means.rows(); ++q)
            for (Eigen::Index p = 0; p < sm_means.cols(); ++p)
                sm_means(q, p) = in[k++];
        for (Eigen::Index q = 0; q < sm_log_variances.rows(); ++q)
            for (Eigen::Index p = 0; p < sm_log_variances.cols(); ++p)
                sm_log_variances(q, p) = in[k++];
    }

    bool all_finite() const
    {
        return std::isfinite(log_signal_variance) && std::isfinite(log_noise_variance) &&
               log_lengthscales.allFinite() && sm_log_weights.allFinite() && sm_means.allFinite() &&
               sm_log_variances.allFinite();
    }

    /// Default initialization: unit signal and lengthscales, noise 1e-2.
    /// Spectral-mixture means are drawn in [0, 1/(2 pi)) and variances set to
    /// match a unit SE lengthscale.
    static KernelParams make(BaseKernel base, Eigen::Index input_dim, bool ard = true, Eigen::Index components = 4,
                             Rng* rng = nullptr)
    {
        KernelParams k;
        k.base = base;
        if (base == BaseKernel::spectral_mixture) {
            const double two_pi = 2.0 * std::numbers::pi;
            k.sm_log_weights = Eigen::VectorXd::Zero(components);
            k.sm_means = Eigen::MatrixXd::Zero(components, input_dim);
            k.sm_log_variances =
                Eigen::MatrixXd::Constant(components, input_dim, -std::log(two_pi * two_pi));
            if (rng) {
                std::uniform_real_distribution<double> u(0.0, 1.0 / two_pi);
                for (Eigen::Index q = 0; q < components; ++q)
                    for (Eigen::Index p = 0; p < input_dim; ++p)
                        k.sm_means(q, p) = u(*rng);
            }
        }
        else {
            k.log_lengthscales = Eigen::VectorXd::Zero(ard ? input_dim : 1);
        }
        return k;
    }
};

namespace detail {

/// Radial profile of the base kernel: value k(r) and q(r) = k'(r) / r.
inline void radial_profile(BaseKernel base, double s, double r2, double& k, double& q)
{
    if (base == BaseKernel::squared_exponential) {
        k = s * std::exp(-0.5 * r2);
        q = -k;
    }
    else {
        const double sqrt5 = std::sqrt(5.0);
        const double r = std::sqrt(std::max(r2, 0.0));
        const double e = std::exp(-sqrt5 * r);
        k = s * (1.0 + sqrt5 * r + 5.0 * r2 / 3.0) * e;
        q = -(5.0 / 3.0) * s * (1.0 + sqrt5 * r) * e;
    }
}

inline Eigen::MatrixXd scale_rows(const KernelParams& kp, const Eigen::MatrixXd& Z)
{
    if (kp.log_lengthscales.size() == 1)
        return Z * std::exp(-kp.log_lengthscales[0]);
    if (kp.log_lengthscales.size() != Z.cols())
        throw ValidationError("lengthscale count does not match feature dimension");
    return Z * (-kp.log_lengthscales.array()).exp().matrix().asDiagonal();
}

inline double sq_dist(const Eigen::MatrixXd& A, Eigen::Index i, const Eigen::MatrixXd& B, Eigen::Index j)
{
    return (A.row(i) - B.row(j)).squaredNorm();
}

inline double sm_value(const KernelParams& kp, const Eigen::VectorXd& w, const Eigen::Ref<const Eigen::RowVectorXd>& d)
{
    const double pi = std::numbers::pi;
    double acc = 0.0;
    for (Eigen::Index q = 0; q < w.size(); ++q) {
        const double a = -2.0 * pi * pi * (d.array().square() * kp.sm_log_variances.row(q).array().exp()).sum();
        const double b = 2.0 * pi * (d.array() * kp.sm_means.row(q).array()).sum();
        acc += w[q] * std::exp(a) * std::cos(b);
    }
    return acc;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& x)
{
    Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
    return e / e.sum();
}

} // namespace detail

/// Signal part of the kernel between the rows of A and B.
inline Eigen::MatrixXd kernel_matrix(const KernelParams& kp, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B)
{
    const double s = kp.signal_variance();
    Eigen::MatrixXd K(A.rows(), B.rows());
    if (kp.is_radial()) {
        const Eigen::MatrixXd As = detail::scale_rows(kp, A), Bs = detail::scale_rows(kp, B);
        double k, q;
        for (Eigen::Index j = 0; j < B.rows(); ++j)
            for (Eigen::Index i = 0; i < A.rows(); ++i) {
                detail::radial_profile(kp.base, s, detail::sq_dist(As, i, Bs, j), k, q);
                K(i, j) = k;
            }
    }
    else {
        const Eigen::VectorXd w = detail::softmax(kp.sm_log_weights);
        Eigen::RowVectorXd d(A.cols());
        for (Eigen::Index j = 0; j < B.rows(); ++j)
            for (Eigen::Index i = 0; i < A.rows(); ++i) {
                d = A.row(i) - B.row(j);
                K(i, j) = s * detail::sm_value(kp, w, d);
            }
    }
    return K;
}

/// Symmetric signal Gram over the rows of Z (upper triangle mirrored).
inline Eigen::MatrixXd kernel_gram(const KernelParams& kp, const Eigen::MatrixXd& Z)
{
    const Eigen::Index n = Z.rows();
    const double s = kp.signal_variance();
    Eigen::MatrixXd K(n, n);
    if (kp.is_radial()) {
        const Eigen::MatrixXd Zs = detail::scale_rows(kp, Z);
        double k, q;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                detail::radial_profile(kp.base, s, detail::sq_dist(Zs, i, Zs, j), k, q);
                K(i, j) = K(j, i) = k;
            }
            K(j, j) = s;
        }
    }
    else {
        const Eigen::VectorXd w = detail::softmax(kp.sm_log_weights);
        Eigen::RowVectorXd d(Z.cols());
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                d = Z.row(i) - Z.row(j);
                K(i, j) = K(j, i) = s * detail::sm_value(kp, w, d);
            }
            K(j, j) = s;
        }
    }
    return K;
}

struct KernelAdjoint {
    KernelParams dparams; ///< only the kernel entries are filled; noise is left at 0
    Eigen::MatrixXd dZ;
};

/// Pulls back an adjoint G of the signal Gram (dL = sum_ij G_ij dK_ij, G
/// symmetric) onto the kernel parameters and the feature rows of Z.
inline KernelAdjoint kernel_adjoint(const KernelParams& kp, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& G)
{
    const Eigen::Index n = Z.rows(), D = Z.cols();
    const double s = kp.signal_variance();
    KernelAdjoint out{kp.zeros_like(), Eigen::MatrixXd::Zero(n, D)};

    if (kp.is_radial()) {
        const Eigen::MatrixXd Zs = detail::scale_rows(kp, Z);
        Eigen::MatrixXd V(n, n);
        double dlog_s = 0.0;
        double k, q;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                detail::radial_profile(kp.base, s, detail::sq_dist(Zs, i, Zs, j), k, q);
                V(i, j) = V(j, i) = G(i, j) * q;
                dlog_s += 2.0 * G(i, j) * k;
            }
            V(j, j) = 0.0;
            dlog_s += G(j, j) * s;
        }
        out.dparams.log_signal_variance = dlog_s;
        const Eigen::VectorXd rowsum = V.rowwise().sum();
        const Eigen::MatrixXd dZs = 2.0 * (rowsum.asDiagonal() * Zs - V * Zs);
        const Eigen::RowVectorXd per_dim = -(dZs.array() * Zs.array()).colwise().sum();
        if (kp.log_lengthscales.size() == 1) {
            out.dparams.log_lengthscales[0] = per_dim.sum();
            out.dZ = dZs * std::exp(-kp.log_lengthscales[0]);
        }
        else {
            out.dparams.log_lengthscales = per_dim.transpose();
            out.dZ = dZs * (-kp.log_lengthscales.array()).exp().matrix().asDiagonal();
        }
        return out;
    }

    const double pi = std::numbers::pi;
    const Eigen::Index Q = kp.sm_log_weights.size();
    const Eigen::VectorXd w = detail::softmax(kp.sm_log_weights);
    const Eigen::MatrixXd v = kp.sm_log_variances.array().exp().matrix();
    const auto& mu = kp.sm_means;
    Eigen::VectorXd g(Q), e(Q), c(Q), sn(Q);
    Eigen::RowVectorXd d(D), dd(D);
    double dlog_s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        dlog_s += G(j, j) * s;
        for (Eigen::Index i = 0; i < j; ++i) {
            const double gamma = 2.0 * G(i, j);
            if (gamma == 0.0)
                continue;
            d = Z.row(i) - Z.row(j);
            const Eigen::ArrayXd d2 = d.array().square();
            double kval = 0.0;
            for (Eigen::Index q = 0; q < Q; ++q) {
                const double a = -2.0 * pi * pi * (d2 * v.row(q).array().transpose()).sum();
                const double b = 2.0 * pi * (d.array() * mu.row(q).array()).sum();
                e[q] = std::exp(a);
                c[q] = std::cos(b);
                sn[q] = std::sin(b);
                g[q] = e[q] * c[q];
                kval += w[q] * g[q];
            }
            dlog_s += gamma * s * kval;
            dd.setZero();
            for (Eigen::Index q = 0; q < Q; ++q) {
                const double scale = gamma * s * w[q];
                out.dparams.sm_log_weights[q] += scale * (g[q] - kval);
                out.dparams.sm_log_variances.row(q).array() +=
                    scale * g[q] * (-2.0 * pi * pi) * d2.transpose() * v.row(q).array();
                out.dparams.sm_means.row(q).array() += scale * e[q] * (-sn[q]) * 2.0 * pi * d.array();
                dd.array() += scale * e[q] *
                              (-4.0 * pi * pi * c[q] * d.array() * v.row(q).array() - 2.0 * pi * sn[q] * mu.row(q).array());
            }
            out.dZ.row(i) += dd;
            out.dZ.row(j) -= dd;
        }
    }
    out.dparams.log_signal_variance = dlog_s;
    return out;
}

} // namespace fsbo
