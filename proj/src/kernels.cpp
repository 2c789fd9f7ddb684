#include "ctwso/kernels.hpp"

namespace ctwso::kernels {

template <typename T>
void conv2d_forward(Backend backend, const ConvGeometry& g, std::size_t batch, const T* in,
                    std::size_t in_stride, const T* weight, const T* bias, T* out,
                    std::size_t out_stride) {
    if (backend == Backend::Reference) {
        reference::conv2d_forward(g, batch, in, in_stride, weight, bias, out, out_stride);
    } else {
        parallel::conv2d_forward(g, batch, in, in_stride, weight, bias, out, out_stride);
    }
}

template <typename T>
void conv2d_backward(Backend backend, const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias) {
    if (backend == Backend::Reference) {
        reference::conv2d_backward(g, batch, in, in_stride, weight, dout, dout_stride, din,
                                   din_stride, dweight, dbias);
    } else {
        parallel::conv2d_backward(g, batch, in, in_stride, weight, dout, dout_stride, din,
                                  din_stride, dweight, dbias);
    }
}

template <typename T>
void avgpool2_forward(Backend backend, std::size_t channels, std::size_t height,
                      std::size_t width, std::size_t batch, const T* in, std::size_t in_stride,
                      T* out, std::size_t out_stride) {
    if (backend == Backend::Reference) {
        reference::avgpool2_forward(channels, height, width, batch, in, in_stride, out,
                                    out_stride);
    } else {
        parallel::avgpool2_forward(channels, height, width, batch, in, in_stride, out,
                                   out_stride);
    }
}

template <typename T>
void avgpool2_backward(Backend backend, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t batch, const T* dout,
                       std::size_t dout_stride, T* din, std::size_t din_stride) {
    if (backend == Backend::Reference) {
        reference::avgpool2_backward(channels, height, width, batch, dout, dout_stride, din,
                                     din_stride);
    } else {
        parallel::avgpool2_backward(channels, height, width, batch, dout, dout_stride, din,
                                    din_stride);
    }
}

#define CTWSO_INSTANTIATE(T)                                                                    \
    template void conv2d_forward<T>(Backend, const ConvGeometry&, std::size_t, const T*,        \
                                    std::size_t, const T*, const T*, T*, std::size_t);          \
    template void conv2d_backward<T>(Backend, const ConvGeometry&, std::size_t, const T*,       \
                                     std::size_t, const T*, const T*, std::size_t, T*,          \
                                     std::size_t, T*, T*);                                      \
    template void avgpool2_forward<T>(Backend, std::size_t, std::size_t, std::size_t,           \
                                      std::size_t, const T*, std::size_t, T*, std::size_t);     \
    template void avgpool2_backward<T>(Backend, std::size_t, std::size_t, std::size_t,          \
                                       std::size_t, const T*, std::size_t, T*, std::size_t);

CTWSO_INSTANTIATE(float)
CTWSO_INSTANTIATE(double)

#undef CTWSO_INSTANTIATE

}  // namespace ctwso::kernels
