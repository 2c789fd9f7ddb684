#include "ctwso/kernels.hpp"

namespace ctwso::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const T* in, std::size_t in_stride,
                    const T* weight, const T* bias, T* out, std::size_t out_stride) {
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);
    const long k = static_cast<long>(g.kernel);
    const long pad = static_cast<long>(g.pad);
    for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in + n * in_stride;
        T* dst = out + n * out_stride;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            for (long y = 0; y < h; ++y) {
                for (long x = 0; x < w; ++x) {
                    T acc = bias[co];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                        for (long ky = 0; ky < k; ++ky) {
                            const long iy = y + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (long kx = 0; kx < k; ++kx) {
                                const long ix = x + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                acc += weight[((co * g.in_channels + ci) * k + ky) * k + kx] *
                                       src[(ci * h + iy) * w + ix];
                            }
                        }
                    }
                    dst[(co * h + y) * w + x] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias) {
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);
    const long k = static_cast<long>(g.kernel);
    const long pad = static_cast<long>(g.pad);
    for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in + n * in_stride;
        const T* grad = dout + n * dout_stride;
        T* dsrc = din != nullptr ? din + n * din_stride : nullptr;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            for (long y = 0; y < h; ++y) {
                for (long x = 0; x < w; ++x) {
                    const T gv = grad[(co * h + y) * w + x];
                    dbias[co] += gv;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                        for (long ky = 0; ky < k; ++ky) {
                            const long iy = y + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (long kx = 0; kx < k; ++kx) {
                                const long ix = x + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                const std::size_t wi = ((co * g.in_channels + ci) * k + ky) * k + kx;
                                const std::size_t pi = (ci * h + iy) * w + ix;
                                dweight[wi] += gv * src[pi];
                                if (dsrc != nullptr) {
                                    dsrc[pi] += gv * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void avgpool2_forward(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t batch, const T* in, std::size_t in_stride, T* out,
                      std::size_t out_stride) {
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* src = in + n * in_stride + c * height * width;
            T* dst = out + n * out_stride + c * oh * ow;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const T* p = src + 2 * y * width + 2 * x;
                    dst[y * ow + x] = T(0.25) * (p[0] + p[1] + p[width] + p[width + 1]);
                }
            }
        }
    }
}

template <typename T>
void avgpool2_backward(std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t batch, const T* dout, std::size_t dout_stride, T* din,
                       std::size_t din_stride) {
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* grad = dout + n * dout_stride + c * oh * ow;
            T* dst = din + n * din_stride + c * height * width;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const T q = T(0.25) * grad[y * ow + x];
                    T* p = dst + 2 * y * width + 2 * x;
                    p[0] += q;
                    p[1] += q;
                    p[width] += q;
                    p[width + 1] += q;
                }
            }
        }
    }
}

#define CTWSO_INSTANTIATE(T)                                                                     \
    template void conv2d_forward<T>(const ConvGeometry&, std::size_t, const T*, std::size_t,     \
                                    const T*, const T*, T*, std::size_t);                        \
    template void conv2d_backward<T>(const ConvGeometry&, std::size_t, const T*, std::size_t,    \
                                     const T*, const T*, std::size_t, T*, std::size_t, T*, T*);  \
    template void avgpool2_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,        \
                                      const T*, std::size_t, T*, std::size_t);                   \
    template void avgpool2_backward<T>(std::size_t, std::size_t, std::size_t, std::size_t,       \
                                       const T*, std::size_t, T*, std::size_t);

CTWSO_INSTANTIATE(float)
CTWSO_INSTANTIATE(double)

#undef CTWSO_INSTANTIATE

}  // namespace ctwso::kernels::reference
