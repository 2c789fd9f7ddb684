#include "ctwso/wso.hpp"

#include <iostream>

namespace ctwso {

WsoParams wso_init(const WindowSetting& target, const WindowSetting& base) {
    const RebasedWindow r = rebase_window(target, base, kDefaultUpperBound);
    WsoParams p;
    p.w = r.w;
    p.b = r.b;
    p.upper = kDefaultUpperBound;
    return p;
}

WindowSetting extract_window(const WsoParams& p, const WindowSetting& base) {
    return learned_window_from_rebased(p.w, p.b, base, p.upper);
}

template <typename T>
Tensor<T> wso_forward(const Tensor<T>& x, const WsoParams& p) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<T>(clamped_affine(static_cast<double>(x[i]), p.w, p.b, p.upper));
    }
    return y;
}

template <typename T>
WsoGradients<T> wso_backward(const Tensor<T>& x, const WsoParams& p, const Tensor<T>& upstream) {
    if (!x.same_shape(upstream)) {
        throw ShapeError("wso_backward: input " + shape_string(x.shape()) + " vs gradient " +
                         shape_string(upstream.shape()));
    }
    WsoGradients<T> g{Tensor<T>(x.shape()), 0.0, 0.0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = static_cast<double>(x[i]);
        if (!wso_interior(xi, p)) {
            continue;
        }
        const double gi = static_cast<double>(upstream[i]);
        g.dx[i] = static_cast<T>(p.w * gi);
        g.dw += xi * gi;
        g.db += gi;
    }
    return g;
}

bool wso_adam_step(WsoParams& p, double dw, double db, WsoAdamState& state, double lr) {
    if (p.frozen) {
        return false;
    }
    ++state.t;
    double params[2] = {p.w, p.b};
    const double grads[2] = {dw, db};
    adam_update<double>(params, grads, state.m, state.v, state.t, lr, state.hyper);
    p.b = params[1];
    if (params[0] <= kWsoMinGain) {
        p.w = kWsoMinGain;
        ++p.floor_events;
        std::clog << "wso: gain floored at " << kWsoMinGain << " (update would give " << params[0]
                  << ")\n";
        return true;
    }
    p.w = params[0];
    return false;
}

template Tensor<float> wso_forward<float>(const Tensor<float>&, const WsoParams&);
template Tensor<double> wso_forward<double>(const Tensor<double>&, const WsoParams&);
template WsoGradients<float> wso_backward<float>(const Tensor<float>&, const WsoParams&,
                                                 const Tensor<float>&);
template WsoGradients<double> wso_backward<double>(const Tensor<double>&, const WsoParams&,
                                                   const Tensor<double>&);

}  // namespace ctwso
