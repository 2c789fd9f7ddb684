#pragma once

#include <cstddef>
#include <vector>

namespace ctwso {

/// Width and level (both in HU) of a CT display window. The HU interval
/// [level - width/2, level + width/2] is mapped linearly onto [0, U].
struct WindowSetting {
    double width = 0.0;
    double level = 0.0;

    double lower() const noexcept { return level - 0.5 * width; }
    double upper() const noexcept { return level + 0.5 * width; }

    friend bool operator==(const WindowSetting&, const WindowSetting&) = default;
};

/// Gain, offset and upper bound of the clamped affine map max(min(w*x + b, U), 0).
struct AffineWindowParams {
    double w = 1.0;
    double b = 0.0;
    double upper = 1.0;
};

/// (w, b) acting on pixels that were already normalized through a base window.
struct RebasedWindow {
    double w = 1.0;
    double b = 0.0;
};

inline constexpr double kDefaultUpperBound = 1.0;
inline constexpr double kMinRecordedHu = -1024.0;
inline constexpr double kMaxRecordedHu = 1024.0;

inline constexpr WindowSetting kFullRangeWindow{2048.0, 0.0};
inline constexpr WindowSetting kEmphysemaWindow{124.0, -962.0};
inline constexpr WindowSetting kLungWindow{1500.0, -700.0};

/// Row-major 2-D grid of HU values.
struct HuSlice {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    HuSlice() = default;
    HuSlice(std::size_t w, std::size_t h, double fill = 0.0)
        : width(w), height(h), pixels(w * h, fill) {}

    double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
    bool empty() const noexcept { return pixels.empty(); }
};

/// Row-major 2-D grid of windowed intensities in [0, U].
struct NormalizedSlice {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Throws InvalidWindowError unless width > 0 and finite.
void validate_window(const WindowSetting& ws);

AffineWindowParams window_to_affine(const WindowSetting& ws, double upper = kDefaultUpperBound);
WindowSetting affine_to_window(const AffineWindowParams& aw);

/// max(min(w*x + b, U), 0)
inline double clamped_affine(double x, double w, double b, double upper) noexcept {
    const double y = w * x + b;
    return y >= upper ? upper : (y <= 0.0 ? 0.0 : y);
}

/// Windows a single HU value. Evaluated as (x - lower) * U / width, which is
/// the same affine map as window_to_affine but exact at the window edges and center.
double window_pixel(double hu, const WindowSetting& ws, double upper = kDefaultUpperBound) noexcept;

NormalizedSlice apply_window(const HuSlice& img, const WindowSetting& ws,
                             double upper = kDefaultUpperBound);

/// Parameters that, applied to pixels already windowed through `base`, reproduce
/// `target` applied directly to HU (on the unclamped interior of both windows).
RebasedWindow rebase_window(const WindowSetting& target, const WindowSetting& base,
                            double upper = kDefaultUpperBound);

/// Inverse of rebase_window: the HU window a rebased (w, b) corresponds to.
WindowSetting learned_window_from_rebased(double w, double b, const WindowSetting& base,
                                          double upper = kDefaultUpperBound);

/// Clamps every pixel into [kMinRecordedHu, kMaxRecordedHu]; returns how many were out of range.
std::size_t clamp_to_recorded_range(HuSlice& img) noexcept;

}  // namespace ctwso
