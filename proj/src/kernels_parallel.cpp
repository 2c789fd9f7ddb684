#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "ctwso/aligned.hpp"
#include "ctwso/kernels.hpp"

namespace ctwso::kernels::parallel {

namespace {

template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ColMap = Eigen::Map<ColMatrix<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const ColMatrix<T>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
AlignedVector<T>& scratch() {
    thread_local AlignedVector<T> buffer;
    return buffer;
}

/// For output rows [y_begin, y_end):
/// col[(ci*k + ky)*k + kx][(y - y_begin)*w + x] = in[ci][y + ky - pad][x + kx - pad] (0 outside).
template <typename T>
void im2col(const ConvGeometry& g, const T* in, long y_begin, long y_end, T* col) {
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);
    const long k = static_cast<long>(g.kernel);
    const long pad = static_cast<long>(g.pad);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const T* src = in + ci * g.pixels();
        for (long ky = 0; ky < k; ++ky) {
            for (long kx = 0; kx < k; ++kx) {
                T* row = col + ((ci * k + ky) * k + kx) * (y_end - y_begin) * w;
                for (long y = y_begin; y < y_end; ++y) {
                    const long iy = y + ky - pad;
                    T* dst = row + (y - y_begin) * w;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* line = src + iy * w;
                    // Columns x with 0 <= x + kx - pad < w are copied; the rest are padding.
                    const long x0 = std::max(0L, pad - kx);
                    const long x1 = std::min(w, w + pad - kx);
                    std::fill(dst, dst + x0, T(0));
                    std::copy(line + x0 + kx - pad, line + x1 + kx - pad, dst + x0);
                    std::fill(dst + x1, dst + w, T(0));
                }
            }
        }
    }
}

/// Adjoint of im2col over the same row range, accumulated into din.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, long y_begin, long y_end, T* din) {
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);
    const long k = static_cast<long>(g.kernel);
    const long pad = static_cast<long>(g.pad);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        T* dst = din + ci * g.pixels();
        for (long ky = 0; ky < k; ++ky) {
            for (long kx = 0; kx < k; ++kx) {
                const T* row = col + ((ci * k + ky) * k + kx) * (y_end - y_begin) * w;
                for (long y = y_begin; y < y_end; ++y) {
                    const long iy = y + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + (y - y_begin) * w;
                    T* line = dst + iy * w;
                    const long x0 = std::max(0L, pad - kx);
                    const long x1 = std::min(w, w + pad - kx);
                    T* shifted = line + kx - pad;
                    for (long x = x0; x < x1; ++x) {
                        shifted[x] += src[x];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeometry& g) noexcept { return g.kernel == 1 && g.pad == 0; }

/// Output rows per im2col tile, sized so a tile of the column buffer stays in cache.
long tile_rows(const ConvGeometry& g) noexcept {
    const std::size_t budget = 64 * 1024;  // elements
    const std::size_t per_row = std::max<std::size_t>(1, g.patch() * g.width);
    return std::max(1L, static_cast<long>(budget / per_row));
}

template <typename T>
using Strided = Eigen::Map<ColMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStrided = Eigen::Map<const ColMatrix<T>, 0, Eigen::OuterStride<>>;

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const T* in, std::size_t in_stride,
                    const T* weight, const T* bias, T* out, std::size_t out_stride) {
    const auto cout = static_cast<Eigen::Index>(g.out_channels);
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto pixels = static_cast<Eigen::Index>(g.pixels());
    const ConstVectorMap<T> bvec(bias, cout);
    const ConstColMap<T> wT(weight, patch, cout);
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);

    // Everything is computed transposed (out^T = col^T * W^T, column-major views of
    // the row-major buffers) so the narrow channel count is the GEMM column dimension.
#pragma omp parallel for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in + n * in_stride;
        T* dst = out + n * out_stride;
        if (is_pointwise(g)) {
            ColMap<T> omat(dst, pixels, cout);
            omat.noalias() = ConstColMap<T>(src, pixels, patch) * wT;
            omat.rowwise() += bvec.transpose();
            continue;
        }
        const long rows = tile_rows(g);
        auto& buf = scratch<T>();
        buf.resize(g.patch() * static_cast<std::size_t>(rows * w));
        for (long y0 = 0; y0 < h; y0 += rows) {
            const long y1 = std::min(h, y0 + rows);
            const Eigen::Index tile = (y1 - y0) * w;
            im2col(g, src, y0, y1, buf.data());
            Strided<T> omat(dst + y0 * w, tile, cout, Eigen::OuterStride<>(pixels));
            omat.noalias() = ConstColMap<T>(buf.data(), tile, patch) * wT;
            omat.rowwise() += bvec.transpose();
        }
    }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::size_t batch, const T* in,
                     std::size_t in_stride, const T* weight, const T* dout,
                     std::size_t dout_stride, T* din, std::size_t din_stride, T* dweight,
                     T* dbias) {
    const auto cout = static_cast<Eigen::Index>(g.out_channels);
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto pixels = static_cast<Eigen::Index>(g.pixels());
    const ConstColMap<T> wT(weight, patch, cout);
    const long h = static_cast<long>(g.height);
    const long w = static_cast<long>(g.width);

    // Per-sample parameter gradients, reduced afterwards in sample order so the
    // result does not depend on the thread count.
    const std::size_t slot = g.weight_size() + g.out_channels;
    AlignedVector<T> partial(batch * slot);

#pragma omp parallel for schedule(static)
    for (std::size_t n = 0; n < batch; ++n) {
        const T* src = in + n * in_stride;
        const T* grad = dout + n * dout_stride;
        ColMap<T> dwT(partial.data() + n * slot, patch, cout);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(partial.data() + n * slot + g.weight_size(),
                                                           cout);
        const ConstColMap<T> gT(grad, pixels, cout);
        db.noalias() = gT.colwise().sum().transpose();

        if (is_pointwise(g)) {
            dwT.noalias() = ConstColMap<T>(src, pixels, patch).transpose() * gT;
            if (din != nullptr) {
                ColMap<T> dx(din + n * din_stride, pixels, patch);
                dx.noalias() += gT * wT.transpose();
            }
            continue;
        }
        const long rows = tile_rows(g);
        auto& buf = scratch<T>();
        const std::size_t tile_max = g.patch() * static_cast<std::size_t>(rows * w);
        buf.resize(2 * tile_max);
        dwT.setZero();
        for (long y0 = 0; y0 < h; y0 += rows) {
            const long y1 = std::min(h, y0 + rows);
            const Eigen::Index tile = (y1 - y0) * w;
            const ConstStrided<T> gtile(grad + y0 * w, tile, cout, Eigen::OuterStride<>(pixels));
            im2col(g, src, y0, y1, buf.data());
            dwT.noalias() += ConstColMap<T>(buf.data(), tile, patch).transpose() * gtile;
            if (din != nullptr) {
                T* dcol = buf.data() + tile_max;
                ColMap<T>(dcol, tile, patch).noalias() = gtile * wT.transpose();
                col2im_add(g, dcol, y0, y1, din + n * din_stride);
            }
        }
    }

    for (std::size_t n = 0; n < batch; ++n) {
        const T* p = partial.data() + n * slot;
        for (std::size_t i = 0; i < g.weight_size(); ++i) {
            dweight[i] += p[i];
        }
        for (std::size_t c = 0; c < g.out_channels; ++c) {
            dbias[c] += p[g.weight_size() + c];
        }
    }
}

template <typename T>
void avgpool2_forward(std::size_t channels, std::size_t height, std::size_t width,
                      std::size_t batch, const T* in, std::size_t in_stride, T* out,
                      std::size_t out_stride) {
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    const auto planes = static_cast<long>(batch * channels);
#pragma omp parallel for schedule(static)
    for (long plane = 0; plane < planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / channels;
        const std::size_t c = static_cast<std::size_t>(plane) % channels;
        const T* src = in + n * in_stride + c * height * width;
        T* dst = out + n * out_stride + c * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            const T* r0 = src + 2 * y * width;
            const T* r1 = r0 + width;
            for (std::size_t x = 0; x < ow; ++x) {
                dst[y * ow + x] = T(0.25) * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
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
    const auto planes = static_cast<long>(batch * channels);
#pragma omp parallel for schedule(static)
    for (long plane = 0; plane < planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / channels;
        const std::size_t c = static_cast<std::size_t>(plane) % channels;
        const T* grad = dout + n * dout_stride + c * oh * ow;
        T* dst = din + n * din_stride + c * height * width;
        for (std::size_t y = 0; y < oh; ++y) {
            T* r0 = dst + 2 * y * width;
            T* r1 = r0 + width;
            for (std::size_t x = 0; x < ow; ++x) {
                const T q = T(0.25) * grad[y * ow + x];
                r0[2 * x] += q;
                r0[2 * x + 1] += q;
                r1[2 * x] += q;
                r1[2 * x + 1] += q;
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

}  // namespace ctwso::kernels::parallel
