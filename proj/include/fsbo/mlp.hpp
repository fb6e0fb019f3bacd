#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "fsbo/error.hpp"
#include "fsbo/rng.hpp"

namespace fsbo {

struct DenseLayer {
    Eigen::MatrixXd weight; ///< out x in
    Eigen::VectorXd bias;   ///< out
};

/// Feature map phi(x, w): rectifier after every hidden layer, linear last layer.
struct MlpParams {
    std::vector<DenseLayer> layers;

    Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
    Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

    Eigen::Index num_params() const
    {
        Eigen::Index n = 0;
        for (const auto& l : layers)
            n += l.weight.size() + l.bias.size();
        return n;
    }

    MlpParams zeros_like() const
    {
        MlpParams z = *this;
        for (auto& l : z.layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
        return z;
    }

    /// Row-major weights then bias, layer by layer.
    void pack(Eigen::Ref<Eigen::VectorXd> out) const
    {
        Eigen::Index k = 0;
        for (const auto& l : layers) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                    out[k++] = l.weight(r, c);
            for (Eigen::Index r = 0; r < l.bias.size(); ++r)
                out[k++] = l.bias[r];
        }
    }

    void unpack(const Eigen::Ref<const Eigen::VectorXd>& in)
    {
        Eigen::Index k = 0;
        for (auto& l : layers) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                    l.weight(r, c) = in[k++];
            for (Eigen::Index r = 0; r < l.bias.size(); ++r)
                l.bias[r] = in[k++];
        }
    }

    bool all_finite() const
    {
        for (const auto& l : layers)
            if (!l.weight.allFinite() || !l.bias.allFinite())
                return false;
        return true;
    }

    /// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static MlpParams make(Eigen::Index input_dim, const std::vector<Eigen::Index>& widths, Rng& rng)
    {
        if (widths.empty())
            throw ValidationError("feature map needs at least one layer");
        MlpParams m;
        Eigen::Index in = input_dim;
        for (auto out : widths) {
            if (in <= 0 || out <= 0)
                throw ValidationError("layer widths must be positive");
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            std::uniform_real_distribution<double> u(-bound, bound);
            DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
            for (Eigen::Index r = 0; r < out; ++r)
                for (Eigen::Index c = 0; c < in; ++c)
                    l.weight(r, c) = u(rng);
            for (Eigen::Index r = 0; r < out; ++r)
                l.bias[r] = u(rng);
            m.layers.push_back(std::move(l));
            in = out;
        }
        return m;
    }
};

/// Activations kept for the backward pass; `inputs[l]` is the input of layer l.
struct MlpTape {
    std::vector<Eigen::MatrixXd> inputs;
    Eigen::MatrixXd output;
};

/// Forward pass over the rows of X.
inline Eigen::MatrixXd feature_map(const MlpParams& mlp, const Eigen::MatrixXd& X, MlpTape* tape = nullptr)
{
    if (X.cols() != mlp.input_dim())
        throw ValidationError("feature map input has dimension " + std::to_string(X.cols()) + ", expected " +
                              std::to_string(mlp.input_dim()));
    Eigen::MatrixXd H = X;
    if (tape)
        tape->inputs.clear();
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& layer = mlp.layers[l];
        if (tape)
            tape->inputs.push_back(H);
        Eigen::MatrixXd A = H * layer.weight.transpose();
        A.rowwise() += layer.bias.transpose();
        if (l + 1 < mlp.layers.size())
            A = A.cwiseMax(0.0);
        H = std::move(A);
    }
    if (tape)
        tape->output = H;
    return H;
}

inline Eigen::VectorXd feature_map(const MlpParams& mlp, const Eigen::VectorXd& x)
{
    return feature_map(mlp, Eigen::MatrixXd(x.transpose())).row(0).transpose();
}

/// Reverse pass: gradient of the loss w.r.t. every weight and bias, given
/// dL/d(output).
inline MlpParams feature_map_backward(const MlpParams& mlp, const MlpTape& tape, Eigen::MatrixXd d_out)
{
    MlpParams grad = mlp.zeros_like();
    for (std::size_t l = mlp.layers.size(); l-- > 0;) {
        const auto& input = tape.inputs[l];
        grad.layers[l].weight = d_out.transpose() * input;
        grad.layers[l].bias = d_out.colwise().sum().transpose();
        if (l == 0)
            break;
        Eigen::MatrixXd d_in = d_out * mlp.layers[l].weight;
        // input of layer l is relu(pre-activation); gradient passes where it is positive
        d_out = (input.array() > 0.0).select(d_in, 0.0);
    }
    return grad;
}

} // namespace fsbo
