#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ctwso/kernels.hpp"
#include "ctwso/tensor.hpp"

namespace ctwso {

using kernels::Backend;

/// Reduced dense-block classifier:
///
///   stem 3x3 conv (1 -> stem_channels)
///   num_blocks x dense block, each layer: ReLU, 1x1 conv to 4*growth_rate,
///       ReLU, 3x3 conv to growth_rate, output concatenated onto the block's feature map
///   between blocks: ReLU, 1x1 conv halving the channels, 2x2 average pool
///   ReLU, global average pool, fully connected to one logit
struct NetworkConfig {
    int growth_rate = 8;
    int num_blocks = 2;
    int layers_per_block = 4;
    int stem_channels = 16;
    int input_size = 64;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    std::size_t bottleneck_channels() const noexcept { return 4 * static_cast<std::size_t>(growth_rate); }
    std::size_t block_input_channels(int block) const;
    /// block_input_channels(block) + layers_per_block * growth_rate
    std::size_t block_output_channels(int block) const;
    std::size_t block_spatial(int block) const;
    /// Channel count entering the global average pool.
    std::size_t final_channels() const { return block_output_channels(num_blocks - 1); }
};

/// Named parameter tensors in a fixed order (see param_names()).
template <typename T>
struct ModelParams {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;
    /// Incremented by every optimizer update; forward caches record it.
    std::uint64_t version = 0;

    std::size_t size() const noexcept { return tensors.size(); }
    std::size_t total_elements() const noexcept;
    std::size_t index_of(const std::string& name) const;
    const Tensor<T>& at(const std::string& name) const { return tensors[index_of(name)]; }
    Tensor<T>& at(const std::string& name) { return tensors[index_of(name)]; }

    void zero();

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.names = names;
        out.version = version;
        for (const auto& t : tensors) {
            out.tensors.push_back(t.template cast<U>());
        }
        return out;
    }
};

/// Canonical parameter order and shapes for a configuration.
std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(const NetworkConfig& cfg);

/// He (fan-in) Gaussian weights, zero biases; deterministic in `seed`.
template <typename T>
ModelParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed);

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params);

/// Activations retained by forward() for backward().
template <typename T>
struct ForwardCache {
    std::uint64_t params_version = 0;
    const void* params_id = nullptr;
    std::size_t batch = 0;
    Tensor<T> input;
    std::vector<Tensor<T>> block_raw;                    // per block (N, C_out, H, W)
    std::vector<Tensor<T>> block_act;                    // ReLU of block_raw
    std::vector<std::vector<Tensor<T>>> bottleneck_raw;  // per layer (N, 4g, H, W)
    std::vector<std::vector<Tensor<T>>> bottleneck_act;
    Tensor<T> pooled;                                    // (N, final_channels)
};

/// Returns one logit per sample of `batch` (N, 1, S, S).
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const NetworkConfig& cfg, const Tensor<T>& batch,
                  std::type_identity_t<ForwardCache<T>>* cache = nullptr,
                  Backend backend = Backend::Parallel);

/// Accumulates parameter gradients into `grads` and returns d(loss)/d(input), shaped like
/// the input batch. Throws if `cache` was produced with different or since-updated params.
template <typename T>
Tensor<T> backward(const ModelParams<T>& params, const NetworkConfig& cfg,
                   const ForwardCache<T>& cache, std::span<const T> dlogits,
                   ModelParams<T>& grads, Backend backend = Backend::Parallel);

}  // namespace ctwso
