#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ctwso/network.hpp"

namespace ctwso {

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct BceResult {
    double loss = 0.0;
    double dlogit = 0.0;
};

/// Binary cross-entropy on a logit, in the overflow-free form
/// max(z, 0) - z*y + log(1 + exp(-|z|)); the gradient is sigmoid(z) - y.
inline BceResult bce_loss(double logit, double label) noexcept {
    const double loss = std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
    return {loss, sigmoid(logit) - label};
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moments mirroring a parameter set, plus the step count.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t t = 0;
    double lr = 1e-3;
    AdamHyper hyper;
};

template <typename T>
AdamState<T> make_adam_state(const ModelParams<T>& params, double lr) {
    AdamState<T> s;
    s.lr = lr;
    for (const auto& p : params.tensors) {
        s.m.emplace_back(p.shape());
        s.v.emplace_back(p.shape());
    }
    return s;
}

/// One bias-corrected Adam update of a flat parameter range at step t (t >= 1).
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::uint64_t t, double lr, const AdamHyper& hyper) {
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(hyper.beta1);
    const T b2 = static_cast<T>(hyper.beta2);
    const T step = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(hyper.epsilon);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        param[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
}

/// Updates every parameter tensor and bumps params.version.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw ShapeError("adam_step: parameter, gradient and moment counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads.tensors[i].same_shape(params.tensors[i]) ||
            !state.m[i].same_shape(params.tensors[i])) {
            throw ShapeError("adam_step: shape mismatch for " + params.names[i]);
        }
    }
    ++state.t;
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam_update<T>(params.tensors[i].span(), grads.tensors[i].span(), state.m[i].span(),
                       state.v[i].span(), state.t, state.lr, state.hyper);
    }
    ++params.version;
}

}  // namespace ctwso
