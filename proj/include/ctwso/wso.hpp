#pragma once

#include <cstddef>
#include <cstdint>

#include "ctwso/optim.hpp"
#include "ctwso/tensor.hpp"
#include "ctwso/windowing.hpp"

namespace ctwso {

/// Trainable window-setting layer: y = max(min(w*x + b, U), 0) applied
/// elementwise to pixels that were already normalized through a base window
/// (full-range by default). (w, b) live in that rebased domain; HU-domain
/// windows are obtained through extract_window().
struct WsoParams {
    double w = 1.0;
    double b = 0.0;
    double upper = kDefaultUpperBound;
    bool frozen = false;
    /// Number of updates that hit the gain floor.
    std::size_t floor_events = 0;
};

/// Lower bound applied to w after an update.
inline constexpr double kWsoMinGain = 1e-6;

WsoParams wso_init(const WindowSetting& target, const WindowSetting& base = kFullRangeWindow);

inline WsoParams set_frozen(WsoParams p, bool frozen) noexcept {
    p.frozen = frozen;
    return p;
}

WindowSetting extract_window(const WsoParams& p, const WindowSetting& base = kFullRangeWindow);

/// 1 where 0 < w*x + b < U strictly; saturated points (including exact
/// boundaries) have zero gradient.
inline bool wso_interior(double x, const WsoParams& p) noexcept {
    const double y = p.w * x + p.b;
    return y > 0.0 && y < p.upper;
}

template <typename T>
Tensor<T> wso_forward(const Tensor<T>& x, const WsoParams& p);

template <typename T>
struct WsoGradients {
    Tensor<T> dx;
    double dw = 0.0;
    double db = 0.0;
};

template <typename T>
WsoGradients<T> wso_backward(const Tensor<T>& x, const WsoParams& p, const Tensor<T>& upstream);

/// Adam moments for (w, b); untouched while the layer is frozen.
struct WsoAdamState {
    double m[2] = {0.0, 0.0};
    double v[2] = {0.0, 0.0};
    std::uint64_t t = 0;
    AdamHyper hyper;
};

/// Adam update of (w, b). A frozen layer is skipped entirely (values, moments
/// and step count unchanged). Returns true when the gain floor was applied.
bool wso_adam_step(WsoParams& p, double dw, double db, WsoAdamState& state, double lr);

}  // namespace ctwso
