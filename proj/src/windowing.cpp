#include "ctwso/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctwso/error.hpp"

namespace ctwso {

namespace {

void validate_upper(double upper) {
    if (!(upper > 0.0) || !std::isfinite(upper)) {
        throw InvalidWindowError("upper bound U must be positive, got " + std::to_string(upper));
    }
}

}  // namespace

void validate_window(const WindowSetting& ws) {
    if (!(ws.width > 0.0) || !std::isfinite(ws.width) || !std::isfinite(ws.level)) {
        throw InvalidWindowError("window width must be positive, got (" +
                                 std::to_string(ws.width) + ", " + std::to_string(ws.level) +
                                 ")");
    }
}

AffineWindowParams window_to_affine(const WindowSetting& ws, double upper) {
    validate_window(ws);
    validate_upper(upper);
    const double w = upper / ws.width;
    return {w, w * (0.5 * ws.width - ws.level), upper};
}

WindowSetting affine_to_window(const AffineWindowParams& aw) {
    if (!(aw.w > 0.0) || !std::isfinite(aw.w)) {
        throw InvalidWindowError("affine gain w must be positive, got " + std::to_string(aw.w));
    }
    validate_upper(aw.upper);
    return {aw.upper / aw.w, (0.5 * aw.upper - aw.b) / aw.w};
}

double window_pixel(double hu, const WindowSetting& ws, double upper) noexcept {
    const double y = (hu - ws.lower()) * upper / ws.width;
    return y >= upper ? upper : (y <= 0.0 ? 0.0 : y);
}

NormalizedSlice apply_window(const HuSlice& img, const WindowSetting& ws, double upper) {
    validate_window(ws);
    validate_upper(upper);
    if (img.empty()) {
        throw ShapeError("apply_window: empty image");
    }
    NormalizedSlice out{img.width, img.height, std::vector<double>(img.pixels.size())};
    std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                   [&](double hu) { return window_pixel(hu, ws, upper); });
    return out;
}

RebasedWindow rebase_window(const WindowSetting& target, const WindowSetting& base,
                            double upper) {
    validate_window(target);
    validate_window(base);
    validate_upper(upper);
    return {base.width / target.width, upper * (base.lower() - target.lower()) / target.width};
}

WindowSetting learned_window_from_rebased(double w, double b, const WindowSetting& base,
                                          double upper) {
    if (!(w > 0.0) || !std::isfinite(w)) {
        throw InvalidWindowError("rebased gain w must be positive, got " + std::to_string(w));
    }
    validate_window(base);
    validate_upper(upper);
    const double width = base.width / w;
    return {width, base.lower() + 0.5 * width - b * width / upper};
}

std::size_t clamp_to_recorded_range(HuSlice& img) noexcept {
    std::size_t clamped = 0;
    for (double& p : img.pixels) {
        if (p < kMinRecordedHu) {
            p = kMinRecordedHu;
            ++clamped;
        } else if (p > kMaxRecordedHu) {
            p = kMaxRecordedHu;
            ++clamped;
        }
    }
    return clamped;
}

}  // namespace ctwso
