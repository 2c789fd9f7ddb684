#include <doctest.h>

#include <cmath>
#include <limits>

#include "ctwso/error.hpp"
#include "ctwso/rng.hpp"
#include "ctwso/windowing.hpp"

using namespace ctwso;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

WindowSetting random_window(Rng& rng) {
    return {rng.uniform(1.0, 4000.0), rng.uniform(-1500.0, 1500.0)};
}

}  // namespace

TEST_CASE("emphysema window hits its edges and center exactly") {
    CHECK(window_pixel(-1024.0, kEmphysemaWindow) == 0.0);
    CHECK(window_pixel(-900.0, kEmphysemaWindow) == 1.0);
    CHECK(window_pixel(-962.0, kEmphysemaWindow) == 0.5);
    CHECK(window_pixel(-2000.0, kEmphysemaWindow) == 0.0);
    CHECK(window_pixel(0.0, kEmphysemaWindow) == 1.0);
}

TEST_CASE("full-range window") {
    CHECK(window_pixel(-1024.0, kFullRangeWindow) == 0.0);
    CHECK(window_pixel(0.0, kFullRangeWindow) == 0.5);
    CHECK(window_pixel(1024.0, kFullRangeWindow) == 1.0);
    CHECK(window_pixel(512.0, kFullRangeWindow, 4.0) == 3.0);
}

TEST_CASE("affine form matches the window definition") {
    const auto aw = window_to_affine(kEmphysemaWindow);
    CHECK(aw.w == doctest::Approx(1.0 / 124.0).epsilon(1e-15));
    CHECK(aw.b == doctest::Approx(1024.0 / 124.0).epsilon(1e-15));
    CHECK(aw.upper == 1.0);

    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const WindowSetting ws = random_window(rng);
        const auto a = window_to_affine(ws, 2.0);
        const double hu = rng.uniform(-1024.0, 1024.0);
        CHECK(std::abs(clamped_affine(hu, a.w, a.b, a.upper) - window_pixel(hu, ws, 2.0)) < 1e-12);
    }
}

TEST_CASE("window <-> affine round trip") {
    Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        const WindowSetting ws = random_window(rng);
        const WindowSetting back = affine_to_window(window_to_affine(ws));
        REQUIRE(rel(back.width, ws.width) < 1e-12);
        REQUIRE(std::abs(back.level - ws.level) <= 1e-12 * std::max(std::abs(ws.level), ws.width));
    }
}

TEST_CASE("rebased parameters reproduce the target window on the interior") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const WindowSetting target{rng.uniform(10.0, 2000.0), rng.uniform(-1000.0, 500.0)};
        const auto rw = rebase_window(target, kFullRangeWindow);
        const WindowSetting back = learned_window_from_rebased(rw.w, rw.b, kFullRangeWindow);
        REQUIRE(rel(back.width, target.width) < 1e-12);
        REQUIRE(std::abs(back.level - target.level) < 1e-9);

        const double hu = rng.uniform(std::max(target.lower(), -1024.0), std::min(target.upper(), 1024.0));
        const double via_base = clamped_affine(window_pixel(hu, kFullRangeWindow), rw.w, rw.b, 1.0);
        REQUIRE(std::abs(via_base - window_pixel(hu, target)) < 1e-9);
    }
}

TEST_CASE("identity rebase") {
    const auto rw = rebase_window(kFullRangeWindow, kFullRangeWindow);
    CHECK(rw.w == doctest::Approx(1.0));
    CHECK(rw.b == doctest::Approx(0.0));
}

TEST_CASE("invalid windows are rejected") {
    CHECK_THROWS_AS(validate_window({0.0, 0.0}), InvalidWindowError);
    CHECK_THROWS_AS(validate_window({-5.0, 0.0}), InvalidWindowError);
    CHECK_THROWS_AS(validate_window({std::numeric_limits<double>::infinity(), 0.0}), InvalidWindowError);
    CHECK_THROWS_AS(window_to_affine(kEmphysemaWindow, 0.0), InvalidWindowError);
    CHECK_THROWS_AS(affine_to_window({0.0, 1.0, 1.0}), InvalidWindowError);
}

TEST_CASE("apply_window stays inside [0, U] and is monotone in HU") {
    HuSlice img(16, 1);
    for (std::size_t x = 0; x < 16; ++x) img.at(x, 0) = -1100.0 + 140.0 * static_cast<double>(x);
    const auto out = apply_window(img, kLungWindow, 2.0);
    REQUIRE(out.pixels.size() == 16);
    for (std::size_t x = 0; x < 16; ++x) {
        CHECK(out.at(x, 0) >= 0.0);
        CHECK(out.at(x, 0) <= 2.0);
        if (x > 0) CHECK(out.at(x, 0) >= out.at(x - 1, 0));
    }
}

TEST_CASE("recorded range clamp counts offenders") {
    HuSlice img(3, 1);
    img.pixels = {-3000.0, 0.0, 2000.0};
    CHECK(clamp_to_recorded_range(img) == 2);
    CHECK(img.pixels[0] == -1024.0);
    CHECK(img.pixels[2] == 1024.0);
}
