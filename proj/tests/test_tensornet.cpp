#include <doctest.h>

#include <cmath>
#include <set>

#include "ctwso/gradcheck.hpp"
#include "ctwso/kernels.hpp"
#include "ctwso/network.hpp"
#include "ctwso/optim.hpp"
#include "ctwso/rng.hpp"

using namespace ctwso;
namespace k = ctwso::kernels;

namespace {

using Maps = std::vector<std::vector<double>>;  // [channel][y * size + x]

// Direct-loop network written independently of the library kernels.
Maps conv(const Maps& in, std::size_t size, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t cout = w.dim(0), cin = w.dim(1), ks = w.dim(2);
    const long pad = static_cast<long>(ks / 2);
    Maps out(cout, std::vector<double>(size * size));
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                double acc = b[o];
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t ky = 0; ky < ks; ++ky)
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const long yy = static_cast<long>(y + ky) - pad;
                            const long xx = static_cast<long>(x + kx) - pad;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(size) || xx >= static_cast<long>(size)) continue;
                            acc += w[((o * cin + c) * ks + ky) * ks + kx] *
                                   in[c][static_cast<std::size_t>(yy) * size + static_cast<std::size_t>(xx)];
                        }
                out[o][y * size + x] = acc;
            }
    return out;
}

Maps relu(Maps m) {
    for (auto& ch : m)
        for (auto& v : ch) v = std::max(v, 0.0);
    return m;
}

double naive_logit(const ModelParams<double>& p, const NetworkConfig& cfg, const double* image) {
    std::size_t size = static_cast<std::size_t>(cfg.input_size);
    Maps x(1, std::vector<double>(image, image + size * size));
    Maps feat = relu(conv(x, size, p.at("stem.weight"), p.at("stem.bias")));
    for (int b = 0; b < cfg.num_blocks; ++b) {
        if (b > 0) {
            const std::string t = "transition" + std::to_string(b - 1);
            const Maps c = conv(feat, size, p.at(t + ".weight"), p.at(t + ".bias"));
            const std::size_t half = size / 2;
            Maps pooled(c.size(), std::vector<double>(half * half));
            for (std::size_t ch = 0; ch < c.size(); ++ch)
                for (std::size_t y = 0; y < half; ++y)
                    for (std::size_t xx = 0; xx < half; ++xx)
                        pooled[ch][y * half + xx] = 0.25 * (c[ch][2 * y * size + 2 * xx] + c[ch][2 * y * size + 2 * xx + 1] +
                                                            c[ch][(2 * y + 1) * size + 2 * xx] +
                                                            c[ch][(2 * y + 1) * size + 2 * xx + 1]);
            feat = relu(pooled);
            size = half;
        }
        for (int l = 0; l < cfg.layers_per_block; ++l) {
            const std::string pre = "block" + std::to_string(b) + ".layer" + std::to_string(l);
            const Maps h = relu(conv(feat, size, p.at(pre + ".conv1.weight"), p.at(pre + ".conv1.bias")));
            const Maps g = relu(conv(h, size, p.at(pre + ".conv2.weight"), p.at(pre + ".conv2.bias")));
            feat.insert(feat.end(), g.begin(), g.end());
        }
    }
    double logit = p.at("fc.bias")[0];
    for (std::size_t c = 0; c < feat.size(); ++c) {
        double s = 0.0;
        for (double v : feat[c]) s += v;
        logit += p.at("fc.weight")[c] * s / static_cast<double>(size * size);
    }
    return logit;
}

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.span()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

NetworkConfig small_net() {
    return NetworkConfig{.growth_rate = 3, .num_blocks = 2, .layers_per_block = 2, .stem_channels = 4, .input_size = 8};
}

}  // namespace

TEST_CASE("channel bookkeeping for the default network") {
    const NetworkConfig cfg;
    CHECK(cfg.block_input_channels(0) == 16);
    CHECK(cfg.block_output_channels(0) == 16 + 4 * 8);
    CHECK(cfg.block_input_channels(1) == 24);
    CHECK(cfg.block_output_channels(1) == 56);
    CHECK(cfg.final_channels() == 56);
    CHECK(cfg.bottleneck_channels() == 32);
    const auto layout = param_layout(cfg);
    CHECK(layout.front().first == "stem.weight");
    CHECK(layout.back().first == "fc.bias");
    std::set<std::string> names;
    for (const auto& [name, shape] : layout) CHECK(names.insert(name).second);
}

TEST_CASE("He initialization") {
    const NetworkConfig cfg;
    const auto a = init_params<double>(cfg, 1);
    const auto b = init_params<double>(cfg, 1);
    const auto c = init_params<double>(cfg, 2);
    CHECK(a.tensors == b.tensors);  // bitwise
    CHECK(a.at("stem.weight").span()[0] != c.at("stem.weight").span()[0]);

    // Pool every 3x3 kernel with 32 input channels: fan-in 288.
    std::vector<double> pool;
    for (std::uint64_t seed = 1; pool.size() < 20000; ++seed) {
        const auto p = init_params<double>(cfg, seed);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p.names[i].find("conv2.weight") != std::string::npos)
                for (double v : p.tensors[i].span()) pool.push_back(v);
        }
    }
    double mean = 0.0, var = 0.0;
    for (double v : pool) mean += v;
    mean /= static_cast<double>(pool.size());
    for (double v : pool) var += (v - mean) * (v - mean);
    var /= static_cast<double>(pool.size() - 1);
    CHECK(var == doctest::Approx(2.0 / (9.0 * 32.0)).epsilon(0.2));
    for (double v : a.at("stem.bias").span()) CHECK(v == 0.0);

    // A 3x3x16 population, as in the transition-free case of a 16-channel input.
    const NetworkConfig wide{.growth_rate = 4, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 16, .input_size = 8};
    std::vector<double> k16;
    for (std::uint64_t seed = 1; k16.size() < 10000; ++seed) {
        const auto p = init_params<double>(wide, seed);
        const auto& w = p.at("block0.layer0.conv1.weight");  // fan-in 16
        for (double v : w.span()) k16.push_back(v);
    }
    double s2 = 0.0;
    for (double v : k16) s2 += v * v;
    CHECK(s2 / static_cast<double>(k16.size()) == doctest::Approx(2.0 / 16.0).epsilon(0.2));
}

TEST_CASE("forward matches a direct-loop oracle") {
    const NetworkConfig cfg = small_net();
    Rng rng(21);
    auto params = init_params<double>(cfg, 4);
    for (auto& t : params.tensors)
        if (t.rank() == 1) for (auto& v : t.span()) v = rng.uniform(-0.1, 0.1);
    const auto batch = random_tensor<double>({3, 1, 8, 8}, rng, 0.0, 1.0);
    for (auto backend : {Backend::Reference, Backend::Parallel}) {
        const auto logits = forward(params, cfg, batch, nullptr, backend);
        for (std::size_t s = 0; s < 3; ++s) {
            CHECK(logits[s] == doctest::Approx(naive_logit(params, cfg, batch.data() + s * 64)).epsilon(1e-12));
        }
    }
}

TEST_CASE("forward properties") {
    const NetworkConfig cfg = small_net();
    Rng rng(2);
    const auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);

    SUBCASE("zero parameters give zero logits") {
        auto p = init_params<double>(cfg, 1);
        p.zero();
        const auto z = forward(p, cfg, batch);
        CHECK(z[0] == 0.0);
        CHECK(z[1] == 0.0);
    }
    SUBCASE("deterministic and input-sensitive") {
        const auto p = init_params<double>(cfg, 1);
        const auto a = forward(p, cfg, batch);
        const auto b = forward(p, cfg, batch);
        CHECK(a.span()[0] == b.span()[0]);
        CHECK(a.span()[1] == b.span()[1]);
        Tensor<double> doubled = batch;
        for (auto& v : doubled.span()) v *= 2.0;
        CHECK(forward(p, cfg, doubled)[0] != a[0]);
    }
    SUBCASE("wrong input size names the layer") {
        const auto p = init_params<double>(cfg, 1);
        CHECK_THROWS_WITH_AS(forward(p, cfg, Tensor<double>({1, 1, 6, 6})), doctest::Contains("stem"), ShapeError);
    }
}

TEST_CASE("backward") {
    const NetworkConfig cfg = small_net();
    Rng rng(3);
    auto params = init_params<double>(cfg, 7);
    const auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);

    SUBCASE("zero upstream gradient") {
        ForwardCache<double> cache;
        forward(params, cfg, batch, &cache);
        auto grads = zeros_like(params);
        const std::vector<double> dz(2, 0.0);
        const auto dx = backward(params, cfg, cache, std::span<const double>(dz), grads);
        for (const auto& t : grads.tensors)
            for (double v : t.span()) REQUIRE(v == 0.0);
        for (double v : dx.span()) REQUIRE(v == 0.0);
    }
    SUBCASE("stale cache is rejected") {
        ForwardCache<double> cache;
        forward(params, cfg, batch, &cache);
        auto grads = zeros_like(params);
        auto state = make_adam_state(params, 1e-3);
        adam_step(params, grads, state);
        const std::vector<double> dz(2, 1.0);
        CHECK_THROWS(backward(params, cfg, cache, std::span<const double>(dz), grads));
    }
    SUBCASE("input gradient matches finite differences") {
        ForwardCache<double> cache;
        forward(params, cfg, batch, &cache);
        auto grads = zeros_like(params);
        const std::vector<double> dz = {1.0, -0.5};
        const auto dx = backward(params, cfg, cache, std::span<const double>(dz), grads);
        for (std::size_t i = 0; i < batch.size(); i += 9) {
            Tensor<double> up = batch, down = batch;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            const auto zu = forward(params, cfg, up);
            const auto zd = forward(params, cfg, down);
            const double num = ((zu[0] - zd[0]) * dz[0] + (zu[1] - zd[1]) * dz[1]) / 2e-6;
            CHECK(relative_error(dx[i], num) < 1e-5);
        }
    }
}

TEST_CASE("gradient check passes in double precision") {
    GradCheckOptions opt;
    opt.seed = 5;
    Rng rng(8);
    SUBCASE("tiny network") {
        const NetworkConfig cfg{.growth_rate = 4, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 4, .input_size = 8};
        const auto p = init_params<double>(cfg, 1);
        const auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
        const std::vector<double> labels = {0.0, 1.0};
        const auto r = gradient_check(p, cfg, batch, labels, opt);
        CHECK(r.passed);
        CHECK(r.checked >= 200);
        CHECK(r.max_rel_error < 1e-5);
    }
    SUBCASE("two blocks with transition and concatenation, plus WSO") {
        const NetworkConfig cfg = small_net();
        const auto p = init_params<double>(cfg, 2);
        auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
        const WsoParams wso = wso_init(WindowSetting{1000.0, -300.0});
        // keep inputs away from the clamp kinks
        for (auto& v : batch.span()) {
            const double y = wso.w * v + wso.b;
            if (std::abs(y) < 1e-3 || std::abs(y - 1.0) < 1e-3) v += 0.01;
        }
        const std::vector<double> labels = {1.0, 0.0};
        const auto r = gradient_check(p, cfg, batch, labels, opt, wso);
        CHECK(r.passed);
        CHECK(r.max_rel_error < 1e-5);
        for (const auto& c : r.excluded) CHECK(c.name.rfind("wso.", 0) != 0);
    }
}

TEST_CASE("inputs on a clamp boundary are excluded, not failed") {
    const NetworkConfig cfg{.growth_rate = 2, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 2, .input_size = 8};
    const auto p = init_params<double>(cfg, 3);
    Tensor<double> batch({1, 1, 8, 8}, 0.7);
    const WsoParams wso{2.0, -1.0};  // 2 * 0.5 - 1 == 0 exactly
    batch[0] = 0.5;
    GradCheckOptions opt;
    opt.samples = 20;
    const std::vector<double> labels = {1.0};
    const auto r = gradient_check(p, cfg, batch, labels, opt, wso);
    bool wso_excluded = false;
    for (const auto& c : r.excluded) wso_excluded = wso_excluded || c.name.rfind("wso.", 0) == 0;
    CHECK(wso_excluded);
    CHECK(r.passed);
}

TEST_CASE("impossible tolerance fails with the worst offender named") {
    const NetworkConfig cfg{.growth_rate = 4, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 4, .input_size = 8};
    const auto p = init_params<double>(cfg, 1);
    Rng rng(1);
    const auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
    GradCheckOptions opt;
    opt.tolerance = 1e-12;
    const std::vector<double> labels = {0.0, 1.0};
    const auto r = gradient_check(p, cfg, batch, labels, opt);
    CHECK_FALSE(r.passed);
    CHECK_FALSE(r.worst.name.empty());
}

TEST_CASE("single precision errors exceed double precision errors") {
    const NetworkConfig cfg{.growth_rate = 4, .num_blocks = 1, .layers_per_block = 1, .stem_channels = 4, .input_size = 8};
    Rng rng(1);
    const auto batch = random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
    const std::vector<double> labels = {0.0, 1.0};
    GradCheckOptions opt;
    const auto rd = gradient_check(init_params<double>(cfg, 1), cfg, batch, labels, opt);
    const auto rf = gradient_check(init_params<float>(cfg, 1), cfg, batch.cast<float>(), labels, opt);
    CHECK(rf.max_rel_error > 100.0 * rd.max_rel_error);
}

TEST_CASE("kernels: parallel agrees with reference") {
    Rng rng(13);
    for (const auto& g : {k::ConvGeometry{3, 5, 9, 7, 3, 1}, k::ConvGeometry{6, 4, 8, 8, 1, 0},
                          k::ConvGeometry{1, 16, 64, 64, 3, 1}}) {
        const std::size_t n = 3;
        const auto in = random_tensor<double>({n, g.in_channels, g.height, g.width}, rng);
        const auto w = random_tensor<double>({g.weight_size()}, rng);
        const auto b = random_tensor<double>({g.out_channels}, rng);
        const auto dout = random_tensor<double>({n, g.out_channels, g.height, g.width}, rng);
        const std::size_t is = g.in_channels * g.pixels(), os = g.out_channels * g.pixels();

        Tensor<double> o_ref(dout.shape()), o_par(dout.shape());
        k::reference::conv2d_forward(g, n, in.data(), is, w.data(), b.data(), o_ref.data(), os);
        k::parallel::conv2d_forward(g, n, in.data(), is, w.data(), b.data(), o_par.data(), os);
        for (std::size_t i = 0; i < o_ref.size(); ++i) REQUIRE(o_par[i] == doctest::Approx(o_ref[i]).epsilon(1e-12));

        Tensor<double> dx_r(in.shape()), dx_p(in.shape()), dw_r({g.weight_size()}), dw_p({g.weight_size()}),
            db_r({g.out_channels}), db_p({g.out_channels});
        k::reference::conv2d_backward(g, n, in.data(), is, w.data(), dout.data(), os, dx_r.data(), is, dw_r.data(), db_r.data());
        k::parallel::conv2d_backward(g, n, in.data(), is, w.data(), dout.data(), os, dx_p.data(), is, dw_p.data(), db_p.data());
        for (std::size_t i = 0; i < dx_r.size(); ++i) REQUIRE(dx_p[i] == doctest::Approx(dx_r[i]).epsilon(1e-11));
        for (std::size_t i = 0; i < dw_r.size(); ++i) REQUIRE(dw_p[i] == doctest::Approx(dw_r[i]).epsilon(1e-11));
        for (std::size_t i = 0; i < db_r.size(); ++i) REQUIRE(db_p[i] == doctest::Approx(db_r[i]).epsilon(1e-11));
    }

    const auto pin = random_tensor<double>({2, 3, 6, 6}, rng);
    Tensor<double> p_ref({2, 3, 3, 3}), p_par({2, 3, 3, 3});
    k::reference::avgpool2_forward<double>(3, 6, 6, 2, pin.data(), 108, p_ref.data(), 27);
    k::parallel::avgpool2_forward<double>(3, 6, 6, 2, pin.data(), 108, p_par.data(), 27);
    CHECK(p_ref.span()[0] == doctest::Approx(0.25 * (pin[0] + pin[1] + pin[6] + pin[7])));
    for (std::size_t i = 0; i < p_ref.size(); ++i) CHECK(p_par[i] == doctest::Approx(p_ref[i]).epsilon(1e-14));
}

TEST_CASE("kernels: conv backward against finite differences of the reference forward") {
    Rng rng(17);
    const k::ConvGeometry g{2, 3, 5, 5, 3, 1};
    const auto in = random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = random_tensor<double>({g.weight_size()}, rng);
    const auto b = random_tensor<double>({3}, rng);
    const auto dout = random_tensor<double>({1, 3, 5, 5}, rng);
    Tensor<double> dw({g.weight_size()}), db({3});
    k::reference::conv2d_backward<double>(g, 1, in.data(), 50, w.data(), dout.data(), 75, nullptr, 0, dw.data(), db.data());
    auto loss = [&](const Tensor<double>& wt) {
        Tensor<double> o({1, 3, 5, 5});
        k::reference::conv2d_forward(g, 1, in.data(), 50, wt.data(), b.data(), o.data(), 75);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * dout[i];
        return s;
    };
    for (std::size_t i = 0; i < w.size(); ++i) {
        Tensor<double> up = w, down = w;
        up[i] += 1e-5;
        down[i] -= 1e-5;
        CHECK(dw[i] == doctest::Approx((loss(up) - loss(down)) / 2e-5).epsilon(1e-8));
    }
}

TEST_CASE("binary cross-entropy") {
    const auto mid = bce_loss(0.0, 1.0);
    CHECK(mid.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(mid.dlogit == -0.5);
    const auto sat = bce_loss(50.0, 1.0);
    CHECK(sat.loss < 1e-20);
    CHECK(std::abs(sat.dlogit) < 1e-20);
    CHECK(std::isfinite(bce_loss(-800.0, 1.0).loss));
    CHECK(bce_loss(-800.0, 1.0).loss == doctest::Approx(800.0));

    // The naive form loses digits in 1 - s, so it is evaluated in extended
    // precision and only where that still leaves it accurate.
    for (double z = -20.0; z <= 20.0; z += 0.37) {
        for (double y : {0.0, 1.0}) {
            const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(z)));
            const long double naive = -y * std::log(s) - (1.0L - y) * std::log(1.0L - s);
            if (!std::isfinite(static_cast<double>(naive))) continue;
            CHECK(std::abs(bce_loss(z, y).loss - static_cast<double>(naive)) < 1e-9);
            CHECK(std::abs(bce_loss(z, y).dlogit - static_cast<double>(s - y)) < 1e-15);
        }
    }
}

TEST_CASE("Adam") {
    SUBCASE("constant gradient, three steps by hand") {
        // With a constant gradient the bias-corrected moments equal g and g^2
        // exactly, so each step is lr * g / (|g| + eps).
        double p = 1.0, m = 0.0, v = 0.0;
        const double g = 0.5, lr = 0.1;
        std::span<double> ps(&p, 1), ms(&m, 1), vs(&v, 1);
        const double gg = g;
        for (std::uint64_t t = 1; t <= 3; ++t) adam_update<double>(ps, std::span<const double>(&gg, 1), ms, vs, t, lr, {});
        CHECK(p == doctest::Approx(1.0 - 3.0 * lr * g / (g + 1e-8)).epsilon(1e-13));
        CHECK(m == doctest::Approx(g * (1.0 - std::pow(0.9, 3))).epsilon(1e-14));
        CHECK(v == doctest::Approx(g * g * (1.0 - std::pow(0.999, 3))).epsilon(1e-12));
    }
    SUBCASE("varying gradient against the textbook recursion") {
        const double grads[3] = {0.3, -1.2, 0.05};
        double p = 0.2, m = 0.0, v = 0.0;
        double ep = 0.2, em = 0.0, ev = 0.0;
        for (std::uint64_t t = 1; t <= 3; ++t) {
            const double g = grads[t - 1];
            adam_update<double>(std::span<double>(&p, 1), std::span<const double>(&g, 1), std::span<double>(&m, 1),
                                std::span<double>(&v, 1), t, 0.01, {});
            em = 0.9 * em + 0.1 * g;
            ev = 0.999 * ev + 0.001 * g * g;
            const double mh = em / (1.0 - std::pow(0.9, static_cast<double>(t)));
            const double vh = ev / (1.0 - std::pow(0.999, static_cast<double>(t)));
            ep -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p == doctest::Approx(ep).epsilon(1e-13));
        }
    }
    SUBCASE("zero gradients leave parameters unchanged and count the step") {
        const NetworkConfig cfg = small_net();
        auto p = init_params<double>(cfg, 1);
        const auto before = p.tensors;
        auto state = make_adam_state(p, 1e-3);
        adam_step(p, zeros_like(p), state);
        CHECK(state.t == 1);
        CHECK(p.tensors == before);
    }
    SUBCASE("identical inputs give identical updates") {
        const NetworkConfig cfg = small_net();
        auto a = init_params<double>(cfg, 1), b = init_params<double>(cfg, 1);
        auto g = init_params<double>(cfg, 9);
        auto sa = make_adam_state(a, 1e-3), sb = make_adam_state(b, 1e-3);
        adam_step(a, g, sa);
        adam_step(b, g, sb);
        CHECK(a.tensors == b.tensors);
    }
    SUBCASE("shape mismatch") {
        auto a = init_params<double>(small_net(), 1);
        auto g = init_params<double>(NetworkConfig{}, 1);
        auto s = make_adam_state(a, 1e-3);
        CHECK_THROWS_AS(adam_step(a, g, s), ShapeError);
    }
}
