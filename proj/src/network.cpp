#include "ctwso/network.hpp"

#include <cmath>

#include "ctwso/rng.hpp"

namespace ctwso {

void NetworkConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("network." + key + ": " + why);
    };
    if (growth_rate < 1) fail("growth_rate", "must be >= 1");
    if (num_blocks < 1) fail("num_blocks", "must be >= 1");
    if (layers_per_block < 1) fail("layers_per_block", "must be >= 1");
    if (stem_channels < 1) fail("stem_channels", "must be >= 1");
    if (input_size < 1) fail("input_size", "must be >= 1");
    if (input_size % (1 << (num_blocks - 1)) != 0)
        fail("input_size", "must be divisible by 2^(num_blocks - 1)");
    for (int b = 0; b + 1 < num_blocks; ++b) {
        if (block_output_channels(b) < 2) fail("growth_rate", "transition would leave 0 channels");
    }
}

std::size_t NetworkConfig::block_input_channels(int block) const {
    std::size_t channels = static_cast<std::size_t>(stem_channels);
    for (int b = 0; b < block; ++b) {
        channels = (channels + static_cast<std::size_t>(layers_per_block * growth_rate)) / 2;
    }
    return channels;
}

std::size_t NetworkConfig::block_output_channels(int block) const {
    return block_input_channels(block) + static_cast<std::size_t>(layers_per_block * growth_rate);
}

std::size_t NetworkConfig::block_spatial(int block) const {
    return static_cast<std::size_t>(input_size) >> block;
}

template <typename T>
std::size_t ModelParams<T>::total_elements() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

template <typename T>
std::size_t ModelParams<T>::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return i;
    }
    throw Error("no parameter named '" + name + "'");
}

template <typename T>
void ModelParams<T>::zero() {
    for (auto& t : tensors) t.fill(T(0));
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(const NetworkConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
    const auto stem = static_cast<std::size_t>(cfg.stem_channels);
    const auto growth = static_cast<std::size_t>(cfg.growth_rate);
    const std::size_t bottleneck = cfg.bottleneck_channels();
    layout.push_back({"stem.weight", {stem, 1, 3, 3}});
    layout.push_back({"stem.bias", {stem}});
    for (int b = 0; b < cfg.num_blocks; ++b) {
        const std::size_t c0 = cfg.block_input_channels(b);
        for (int l = 0; l < cfg.layers_per_block; ++l) {
            const std::string prefix = "block" + std::to_string(b) + ".layer" + std::to_string(l);
            const std::size_t cin = c0 + static_cast<std::size_t>(l) * growth;
            layout.push_back({prefix + ".conv1.weight", {bottleneck, cin, 1, 1}});
            layout.push_back({prefix + ".conv1.bias", {bottleneck}});
            layout.push_back({prefix + ".conv2.weight", {growth, bottleneck, 3, 3}});
            layout.push_back({prefix + ".conv2.bias", {growth}});
        }
        if (b + 1 < cfg.num_blocks) {
            const std::size_t cout = cfg.block_output_channels(b);
            const std::string prefix = "transition" + std::to_string(b);
            layout.push_back({prefix + ".weight", {cout / 2, cout, 1, 1}});
            layout.push_back({prefix + ".bias", {cout / 2}});
        }
    }
    layout.push_back({"fc.weight", {cfg.final_channels()}});
    layout.push_back({"fc.bias", {1}});
    return layout;
}

template <typename T>
ModelParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
    ModelParams<T> params;
    Rng rng = Rng::derive(seed, "init_params");
    for (auto& [name, shape] : param_layout(cfg)) {
        Tensor<T> t(shape);
        if (shape.size() > 1 || name == "fc.weight") {
            const std::size_t fan_in = shape.size() > 1 ? t.size() / shape[0] : t.size();
            const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (std::size_t i = 0; i < t.size(); ++i) {
                t[i] = static_cast<T>(rng.normal(0.0, stddev));
            }
        }
        params.names.push_back(name);
        params.tensors.push_back(std::move(t));
    }
    return params;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
    ModelParams<T> out;
    out.names = params.names;
    for (const auto& t : params.tensors) {
        out.tensors.emplace_back(t.shape());
    }
    return out;
}

namespace {

/// Parameter indices in param_layout() order.
struct Indices {
    std::size_t stem = 0;
    std::vector<std::vector<std::size_t>> layers;  // conv1.weight index per layer; +1 bias, +2, +3
    std::vector<std::size_t> transitions;
    std::size_t fc = 0;

    explicit Indices(const NetworkConfig& cfg) {
        std::size_t i = 2;
        for (int b = 0; b < cfg.num_blocks; ++b) {
            layers.emplace_back();
            for (int l = 0; l < cfg.layers_per_block; ++l) {
                layers.back().push_back(i);
                i += 4;
            }
            if (b + 1 < cfg.num_blocks) {
                transitions.push_back(i);
                i += 2;
            }
        }
        fc = i;
    }
};

template <typename T>
void check_layout(const ModelParams<T>& params, const NetworkConfig& cfg) {
    const auto layout = param_layout(cfg);
    if (layout.size() != params.size()) {
        throw ShapeError("parameter count " + std::to_string(params.size()) +
                         " does not match network config (" + std::to_string(layout.size()) + ")");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (params.tensors[i].shape() != layout[i].second) {
            throw ShapeError(layout[i].first + ": expected shape " +
                             shape_string(layout[i].second) + ", got " +
                             shape_string(params.tensors[i].shape()));
        }
    }
}

/// dst[n][0:count] = max(src[n][0:count], 0) over a strided batch.
template <typename T>
void relu_strided(std::size_t batch, std::size_t count, const T* src, T* dst, std::size_t stride) {
    for (std::size_t n = 0; n < batch; ++n) {
        const T* s = src + n * stride;
        T* d = dst + n * stride;
        for (std::size_t i = 0; i < count; ++i) {
            d[i] = s[i] > T(0) ? s[i] : T(0);
        }
    }
}

/// dst[n][i] = grad[n][i] where pre[n][i] > 0, else 0.
template <typename T>
void relu_grad_strided(std::size_t batch, std::size_t count, const T* grad, std::size_t grad_stride,
                       const T* pre, std::size_t pre_stride, T* dst, std::size_t dst_stride) {
    for (std::size_t n = 0; n < batch; ++n) {
        const T* g = grad + n * grad_stride;
        const T* p = pre + n * pre_stride;
        T* d = dst + n * dst_stride;
        for (std::size_t i = 0; i < count; ++i) {
            d[i] = p[i] > T(0) ? g[i] : T(0);
        }
    }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
#ifndef NDEBUG
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i]))) {
            throw Error(std::string("non-finite value in ") + what);
        }
    }
#else
    (void)t;
    (void)what;
#endif
}

}  // namespace

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const NetworkConfig& cfg, const Tensor<T>& batch,
                  std::type_identity_t<ForwardCache<T>>* cache_out, Backend backend) {
    cfg.validate();
    check_layout(params, cfg);
    const auto size = static_cast<std::size_t>(cfg.input_size);
    if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != size || batch.dim(3) != size) {
        throw ShapeError("stem: expected input (N, 1, " + std::to_string(size) + ", " +
                         std::to_string(size) + "), got " + shape_string(batch.shape()));
    }
    const std::size_t n = batch.dim(0);
    const Indices idx(cfg);
    const auto growth = static_cast<std::size_t>(cfg.growth_rate);
    const std::size_t bottleneck = cfg.bottleneck_channels();

    ForwardCache<T> local;
    ForwardCache<T>& cache = cache_out != nullptr ? *cache_out : local;
    cache = ForwardCache<T>{};
    cache.params_version = params.version;
    cache.params_id = &params;
    cache.batch = n;
    cache.input = batch;

    for (int b = 0; b < cfg.num_blocks; ++b) {
        const std::size_t hw = cfg.block_spatial(b);
        const std::size_t cout = cfg.block_output_channels(b);
        const std::size_t plane = hw * hw;
        const std::size_t stride = cout * plane;
        Tensor<T> raw({n, cout, hw, hw});
        Tensor<T> act({n, cout, hw, hw});
        const std::size_t c0 = cfg.block_input_channels(b);

        if (b == 0) {
            const kernels::ConvGeometry g{1, c0, hw, hw, 3, 1};
            kernels::conv2d_forward(backend, g, n, batch.data(), plane, params.tensors[idx.stem].data(),
                                    params.tensors[idx.stem + 1].data(), raw.data(), stride);
        } else {
            // Transition from the previous block: ReLU (already in act), 1x1 conv, 2x2 avg pool.
            const Tensor<T>& prev = cache.block_act.back();
            const std::size_t prev_hw = cfg.block_spatial(b - 1);
            const std::size_t prev_c = cfg.block_output_channels(b - 1);
            const std::size_t ti = idx.transitions[static_cast<std::size_t>(b - 1)];
            const kernels::ConvGeometry g{prev_c, c0, prev_hw, prev_hw, 1, 0};
            Tensor<T> t({n, c0, prev_hw, prev_hw});
            kernels::conv2d_forward(backend, g, n, prev.data(), prev_c * prev_hw * prev_hw,
                                    params.tensors[ti].data(), params.tensors[ti + 1].data(),
                                    t.data(), c0 * prev_hw * prev_hw);
            kernels::avgpool2_forward(backend, c0, prev_hw, prev_hw, n, t.data(),
                                      c0 * prev_hw * prev_hw, raw.data(), stride);
        }
        relu_strided(n, c0 * plane, raw.data(), act.data(), stride);

        cache.bottleneck_raw.emplace_back();
        cache.bottleneck_act.emplace_back();
        std::size_t channels = c0;
        for (int l = 0; l < cfg.layers_per_block; ++l) {
            const std::size_t li = idx.layers[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
            Tensor<T> h({n, bottleneck, hw, hw});
            Tensor<T> ha({n, bottleneck, hw, hw});
            const kernels::ConvGeometry g1{channels, bottleneck, hw, hw, 1, 0};
            kernels::conv2d_forward(backend, g1, n, act.data(), stride, params.tensors[li].data(),
                                    params.tensors[li + 1].data(), h.data(), bottleneck * plane);
            relu_strided(1, h.size(), h.data(), ha.data(), 0);
            const kernels::ConvGeometry g2{bottleneck, growth, hw, hw, 3, 1};
            kernels::conv2d_forward(backend, g2, n, ha.data(), bottleneck * plane,
                                    params.tensors[li + 2].data(), params.tensors[li + 3].data(),
                                    raw.data() + channels * plane, stride);
            relu_strided(n, growth * plane, raw.data() + channels * plane,
                         act.data() + channels * plane, stride);
            channels += growth;
            cache.bottleneck_raw.back().push_back(std::move(h));
            cache.bottleneck_act.back().push_back(std::move(ha));
        }
        if (channels != c0 + static_cast<std::size_t>(cfg.layers_per_block) * growth ||
            channels != cout) {
            throw ShapeError("block" + std::to_string(b) + ": channel bookkeeping mismatch (" +
                             std::to_string(channels) + " vs " + std::to_string(cout) + ")");
        }
        cache.block_raw.push_back(std::move(raw));
        cache.block_act.push_back(std::move(act));
    }

    const Tensor<T>& last = cache.block_act.back();
    const std::size_t cfinal = cfg.final_channels();
    const std::size_t plane = cfg.block_spatial(cfg.num_blocks - 1) * cfg.block_spatial(cfg.num_blocks - 1);
    cache.pooled = Tensor<T>({n, cfinal});
    Tensor<T> logits({n});
    const T* fc_w = params.tensors[idx.fc].data();
    const T fc_b = params.tensors[idx.fc + 1][0];
    // The head reductions are accumulated in extended precision; they dominate the
    // rounding of the logit, which finite-difference checks are sensitive to.
    for (std::size_t s = 0; s < n; ++s) {
        long double logit = fc_b;
        for (std::size_t c = 0; c < cfinal; ++c) {
            const T* p = last.data() + (s * cfinal + c) * plane;
            long double sum = 0.0L;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            const long double mean = sum / static_cast<long double>(plane);
            cache.pooled[s * cfinal + c] = static_cast<T>(mean);
            logit += static_cast<long double>(fc_w[c]) * mean;
        }
        logits[s] = static_cast<T>(logit);
    }
    check_finite(logits, "forward logits");
    return logits;
}

template <typename T>
Tensor<T> backward(const ModelParams<T>& params, const NetworkConfig& cfg,
                   const ForwardCache<T>& cache, std::span<const T> dlogits,
                   ModelParams<T>& grads, Backend backend) {
    if (cache.params_id != &params || cache.params_version != params.version ||
        cache.block_act.size() != static_cast<std::size_t>(cfg.num_blocks)) {
        throw Error("backward: stale forward cache (parameters changed since forward)");
    }
    check_layout(params, cfg);
    check_layout(grads, cfg);
    const std::size_t n = cache.batch;
    if (dlogits.size() != n) {
        throw ShapeError("backward: expected " + std::to_string(n) + " logit gradients, got " +
                         std::to_string(dlogits.size()));
    }
    const Indices idx(cfg);
    const auto growth = static_cast<std::size_t>(cfg.growth_rate);
    const std::size_t bottleneck = cfg.bottleneck_channels();

    // Head: logit = fc_b + fc_w . mean(act_last)
    const int last_block = cfg.num_blocks - 1;
    const std::size_t cfinal = cfg.final_channels();
    const std::size_t last_hw = cfg.block_spatial(last_block);
    const std::size_t last_plane = last_hw * last_hw;
    {
        T* dfc_w = grads.tensors[idx.fc].data();
        T& dfc_b = grads.tensors[idx.fc + 1][0];
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t c = 0; c < cfinal; ++c) {
                dfc_w[c] += dlogits[s] * cache.pooled[s * cfinal + c];
            }
            dfc_b += dlogits[s];
        }
    }

    Tensor<T> d_act({n, cfinal, last_hw, last_hw});
    {
        const T* fc_w = params.tensors[idx.fc].data();
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t c = 0; c < cfinal; ++c) {
                const T v = dlogits[s] * fc_w[c] / static_cast<T>(last_plane);
                T* p = d_act.data() + (s * cfinal + c) * last_plane;
                std::fill(p, p + last_plane, v);
            }
        }
    }

    Tensor<T> dinput({n, 1, cache.input.dim(2), cache.input.dim(3)});
    for (int b = last_block; b >= 0; --b) {
        const std::size_t hw = cfg.block_spatial(b);
        const std::size_t plane = hw * hw;
        const std::size_t cout = cfg.block_output_channels(b);
        const std::size_t stride = cout * plane;
        const std::size_t c0 = cfg.block_input_channels(b);
        const Tensor<T>& raw = cache.block_raw[static_cast<std::size_t>(b)];
        const Tensor<T>& act = cache.block_act[static_cast<std::size_t>(b)];

        Tensor<T> dy({n, growth, hw, hw});
        Tensor<T> dha({n, bottleneck, hw, hw});
        for (int l = cfg.layers_per_block - 1; l >= 0; --l) {
            const std::size_t li = idx.layers[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
            const std::size_t channels = c0 + static_cast<std::size_t>(l) * growth;
            const Tensor<T>& h = cache.bottleneck_raw[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
            const Tensor<T>& ha = cache.bottleneck_act[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];

            // Concatenation adjoint: this layer's output channels are [channels, channels + growth).
            relu_grad_strided(n, growth * plane, d_act.data() + channels * plane, stride,
                              raw.data() + channels * plane, stride, dy.data(), growth * plane);
            dha.fill(T(0));
            const kernels::ConvGeometry g2{bottleneck, growth, hw, hw, 3, 1};
            kernels::conv2d_backward(backend, g2, n, ha.data(), bottleneck * plane,
                                     params.tensors[li + 2].data(), dy.data(), growth * plane,
                                     dha.data(), bottleneck * plane, grads.tensors[li + 2].data(),
                                     grads.tensors[li + 3].data());
            relu_grad_strided(1, dha.size(), dha.data(), 0, h.data(), 0, dha.data(), 0);
            const kernels::ConvGeometry g1{channels, bottleneck, hw, hw, 1, 0};
            kernels::conv2d_backward(backend, g1, n, act.data(), stride, params.tensors[li].data(),
                                     dha.data(), bottleneck * plane, d_act.data(), stride,
                                     grads.tensors[li].data(), grads.tensors[li + 1].data());
        }

        Tensor<T> d_in({n, c0, hw, hw});
        relu_grad_strided(n, c0 * plane, d_act.data(), stride, raw.data(), stride, d_in.data(),
                          c0 * plane);

        if (b == 0) {
            const kernels::ConvGeometry g{1, c0, hw, hw, 3, 1};
            kernels::conv2d_backward(backend, g, n, cache.input.data(), plane,
                                     params.tensors[idx.stem].data(), d_in.data(), c0 * plane,
                                     dinput.data(), plane, grads.tensors[idx.stem].data(),
                                     grads.tensors[idx.stem + 1].data());
        } else {
            const std::size_t prev_hw = cfg.block_spatial(b - 1);
            const std::size_t prev_plane = prev_hw * prev_hw;
            const std::size_t prev_c = cfg.block_output_channels(b - 1);
            const std::size_t ti = idx.transitions[static_cast<std::size_t>(b - 1)];
            Tensor<T> dt({n, c0, prev_hw, prev_hw});
            kernels::avgpool2_backward(backend, c0, prev_hw, prev_hw, n, d_in.data(), c0 * plane,
                                       dt.data(), c0 * prev_plane);
            Tensor<T> d_prev({n, prev_c, prev_hw, prev_hw});
            const kernels::ConvGeometry g{prev_c, c0, prev_hw, prev_hw, 1, 0};
            kernels::conv2d_backward(backend, g, n,
                                     cache.block_act[static_cast<std::size_t>(b - 1)].data(),
                                     prev_c * prev_plane, params.tensors[ti].data(), dt.data(),
                                     c0 * prev_plane, d_prev.data(), prev_c * prev_plane,
                                     grads.tensors[ti].data(), grads.tensors[ti + 1].data());
            d_act = std::move(d_prev);
        }
    }
    check_finite(dinput, "backward input gradient");
    return dinput;
}

#define CTWSO_INSTANTIATE(T)                                                                   \
    template struct ModelParams<T>;                                                            \
    template ModelParams<T> init_params<T>(const NetworkConfig&, std::uint64_t);               \
    template ModelParams<T> zeros_like<T>(const ModelParams<T>&);                              \
    template Tensor<T> forward<T>(const ModelParams<T>&, const NetworkConfig&, const Tensor<T>&, \
                                  std::type_identity_t<ForwardCache<T>>*, Backend);                                \
    template Tensor<T> backward<T>(const ModelParams<T>&, const NetworkConfig&,                \
                                   const ForwardCache<T>&, std::span<const T>, ModelParams<T>&, \
                                   Backend);

CTWSO_INSTANTIATE(float)
CTWSO_INSTANTIATE(double)

#undef CTWSO_INSTANTIATE

}  // namespace ctwso
