#pragma once

#include <cmath>

#include <Eigen/Core>

#include "fsbo/error.hpp"

namespace fsbo {

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;

    static AdamState zeros(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0}; }
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam descent step with a per-entry learning rate.
inline void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
                      const Eigen::Ref<const Eigen::VectorXd>& lr, const AdamHyper& h = {})
{
    if (params.size() != grads.size() || lr.size() != params.size())
        throw ValidationError("adam_step: shape mismatch");
    if (state.m.size() != params.size())
        state = AdamState::zeros(params.size());
    ++state.step;
    state.m = h.beta1 * state.m + (1.0 - h.beta1) * grads;
    state.v = h.beta2 * state.v + (1.0 - h.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    params.array() -= lr.array() * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + h.eps);
}

inline void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
                      double lr, const AdamHyper& h = {})
{
    adam_step(params, grads, state, Eigen::VectorXd::Constant(params.size(), lr), h);
}

} // namespace fsbo
