#pragma once

#include <cstddef>

namespace ctwso::kernels {

/// Reference kernels are plain serial loops and exist to check the parallel
/// ones; Parallel uses im2col + Eigen GEMM with OpenMP across the batch.
enum class Backend { Reference, Parallel };

/// Stride-1, zero-padded square convolution.
struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t kernel = 1;
    std::size_t pad = 0;

    std::size_t pixels() const noexcept { return height * width; }
    std::size_t patch() const noexcept { return in_channels * kernel * kernel; }
    std::size_t weight_size() const noexcept { return out_channels * patch(); }
};

// Every batched kernel addresses sample n at `ptr + n * stride`, so a contiguous
// channel prefix of a larger feature map can be used directly as an input.

template <typename T>
void conv2d_forward(Backend backend, const ConvGeometry& g, std::size_t batch, const T* in,
                    std::size_t in_stride, const T* weight, const T* bias, T* out,
                    std::size_t out_stride);

/// Accumulates into dweight/dbias (summed over the batch in sample order) and,
/// when din is non-null, into din.
template <typename T>
void conv2d_backward(Backend backend, const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias);

/// 2x2 average pooling with stride 2; height and width must be even.
template <typename T>
void avgpool2_forward(Backend backend, std::size_t channels, std::size_t height,
                      std::size_t width, std::size_t batch, const T* in, std::size_t in_stride,
                      T* out, std::size_t out_stride);

/// Accumulates into din.
template <typename T>
void avgpool2_backward(Backend backend, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t batch, const T* dout,
                       std::size_t dout_stride, T* din, std::size_t din_stride);

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const T* in, std::size_t in_stride,
                    const T* weight, const T* bias, T* out, std::size_t out_stride);
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias);
template <typename T>
void avgpool2_forward(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t batch, const T* in, std::size_t in_stride, T* out,
                      std::size_t out_stride);
template <typename T>
void avgpool2_backward(std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t batch, const T* dout, std::size_t dout_stride, T* din,
                       std::size_t din_stride);

}  // namespace reference

namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const T* in, std::size_t in_stride,
                    const T* weight, const T* bias, T* out, std::size_t out_stride);
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias);
template <typename T>
void avgpool2_forward(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t batch, const T* in, std::size_t in_stride, T* out,
                      std::size_t out_stride);
template <typename T>
void avgpool2_backward(std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t batch, const T* dout, std::size_t dout_stride, T* din,
                       std::size_t din_stride);

}  // namespace parallel

}  // namespace ctwso::kernels
