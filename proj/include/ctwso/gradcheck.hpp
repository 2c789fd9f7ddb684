#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctwso/network.hpp"
#include "ctwso/wso.hpp"

namespace ctwso {

struct GradCheckOptions {
    std::size_t samples = 200;   // coordinates that must be compared
    double step = 1e-5;          // central-difference step h
    double tolerance = 1e-5;     // max allowed relative error
    std::uint64_t seed = 1;
    Backend backend = Backend::Parallel;
};

struct GradCheckCoordinate {
    std::string name;   // parameter name, or "wso.w" / "wso.b"
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    GradCheckCoordinate worst;
    std::size_t checked = 0;
    /// Coordinates whose +-h perturbation crossed a ReLU or clamp kink; reported, not failed.
    std::vector<GradCheckCoordinate> excluded;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) noexcept {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / scale;
}

/// Compares backward() (and wso_backward() when `wso` is given) against central
/// finite differences of the summed BCE loss over `batch` with `labels`.
/// Both WSO coordinates are always checked when present; the rest are sampled
/// uniformly without replacement from the network parameters.
template <typename T>
GradCheckReport gradient_check(const ModelParams<T>& params, const NetworkConfig& cfg,
                               const Tensor<T>& batch, std::span<const double> labels,
                               const GradCheckOptions& options,
                               const std::optional<WsoParams>& wso = std::nullopt);

}  // namespace ctwso
