#include "conv.hpp"

#include "gemm.hpp"

namespace rotlab::detail {

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ks, int stride, int pad) {
    if (xs.size() != 4 || ks.size() != 4) {
        throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(xs) + " and " +
                         shape_str(ks));
    }
    ConvDims d{};
    d.n = xs[0]; d.c = xs[1]; d.h = xs[2]; d.w = xs[3];
    d.f = ks[0]; d.kh = ks[2]; d.kw = ks[3];
    d.stride = stride; d.pad = pad;
    if (ks[1] != d.c) {
        throw ShapeError("conv2d: input channels " + std::to_string(d.c) +
                         " do not match kernel channels " + std::to_string(ks[1]));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
        throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " larger than padded input");
    }
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

namespace {

// col[(c*kh+u)*kw+v, i*ow+j] = x[c, i*s+u-p, j*s+v-p], zero outside.
void im2col(const double* x, const ConvDims& d, double* col) {
    const int ohow = d.oh * d.ow;
    for (int c = 0; c < d.c; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw +
                                     static_cast<std::size_t>(u) * d.kw + v) * ohow;
                for (int i = 0; i < d.oh; ++i) {
                    const int r = i * d.stride + u - d.pad;
                    if (r < 0 || r >= d.h) {
                        for (int j = 0; j < d.ow; ++j) row[i * d.ow + j] = 0.0;
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(r) * d.w;
                    for (int j = 0; j < d.ow; ++j) {
                        const int q = j * d.stride + v - d.pad;
                        row[i * d.ow + j] = (q >= 0 && q < d.w) ? xr[q] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add transpose of im2col
void col2im_acc(const double* col, const ConvDims& d, double* x) {
    const int ohow = d.oh * d.ow;
    for (int c = 0; c < d.c; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
        for (int u = 0; u < d.kh; ++u) {
            for (int v = 0; v < d.kw; ++v) {
                const double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw +
                                           static_cast<std::size_t>(u) * d.kw + v) * ohow;
                for (int i = 0; i < d.oh; ++i) {
                    const int r = i * d.stride + u - d.pad;
                    if (r < 0 || r >= d.h) continue;
                    double* xr = xc + static_cast<std::size_t>(r) * d.w;
                    for (int j = 0; j < d.ow; ++j) {
                        const int q = j * d.stride + v - d.pad;
                        if (q >= 0 && q < d.w) xr[q] += row[i * d.ow + j];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& k, const ConvDims& d, Tensor& out) {
    const int ckk = d.c * d.kh * d.kw;
    const int ohow = d.oh * d.ow;
    std::vector<double> col(static_cast<std::size_t>(ckk) * ohow);
    out.fill(0.0);
    for (int n = 0; n < d.n; ++n) {
        im2col(x.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, col.data());
        mm_acc(k.data.data(), col.data(),
               out.data.data() + static_cast<std::size_t>(n) * d.f * ohow, d.f, ckk, ohow);
    }
}

void conv2d_backward(const Tensor& x, const Tensor& k, const ConvDims& d, const Tensor& gout,
                     Tensor* gx, Tensor* gk) {
    const int ckk = d.c * d.kh * d.kw;
    const int ohow = d.oh * d.ow;
    std::vector<double> col(static_cast<std::size_t>(ckk) * ohow);
    std::vector<double> gcol(static_cast<std::size_t>(ckk) * ohow);
    for (int n = 0; n < d.n; ++n) {
        const double* gout_n = gout.data.data() + static_cast<std::size_t>(n) * d.f * ohow;
        if (gk) {
            im2col(x.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, col.data());
            mm_acc_bt(gout_n, col.data(), gk->data.data(), d.f, ohow, ckk);
        }
        if (gx) {
            std::fill(gcol.begin(), gcol.end(), 0.0);
            mm_acc_at(k.data.data(), gout_n, gcol.data(), ckk, d.f, ohow);
            col2im_acc(gcol.data(), d,
                       gx->data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w);
        }
    }
}

std::vector<int> tconv2d_out_shape(const std::vector<int>& xs, const std::vector<int>& ks,
                                   int stride, int pad) {
    if (xs.size() != 4 || ks.size() != 4) {
        throw ShapeError("tconv2d: expected 4-d input and kernel, got " + shape_str(xs) + " and " +
                         shape_str(ks));
    }
    if (xs[1] != ks[0]) {
        throw ShapeError("tconv2d: input channels " + std::to_string(xs[1]) +
                         " do not match kernel leading dim " + std::to_string(ks[0]));
    }
    if (stride < 1) throw ShapeError("tconv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("tconv2d: padding must be >= 0");
    const int hh = (xs[2] - 1) * stride + ks[2] - 2 * pad;
    const int ww = (xs[3] - 1) * stride + ks[3] - 2 * pad;
    if (hh <= 0 || ww <= 0) throw ShapeError("tconv2d: output extent would be non-positive");
    return {xs[0], ks[1], hh, ww};
}

// Transposed convolution is implemented literally as the adjoint: the input
// plays the role of conv2d's output gradient over a virtual conv input of
// the enlarged size.
void tconv2d_forward(const Tensor& x, const Tensor& k, int stride, int pad, Tensor& out) {
    const auto os = tconv2d_out_shape(x.shape, k.shape, stride, pad);
    ConvDims d = conv_dims(os, k.shape, stride, pad);
    // d.oh/d.ow now reproduce x's spatial extents by construction
    if (d.oh != x.shape[2] || d.ow != x.shape[3]) {
        throw ShapeError("tconv2d: inconsistent geometry");
    }
    const int ckk = d.c * d.kh * d.kw;
    const int ohow = d.oh * d.ow;
    std::vector<double> gcol(static_cast<std::size_t>(ckk) * ohow);
    out.fill(0.0);
    for (int n = 0; n < d.n; ++n) {
        std::fill(gcol.begin(), gcol.end(), 0.0);
        mm_acc_at(k.data.data(), x.data.data() + static_cast<std::size_t>(n) * d.f * ohow,
                  gcol.data(), ckk, d.f, ohow);
        col2im_acc(gcol.data(), d, out.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w);
    }
}

void tconv2d_backward(const Tensor& x, const Tensor& k, int stride, int pad, const Tensor& gout,
                      Tensor* gx, Tensor* gk) {
    ConvDims d = conv_dims(gout.shape, k.shape, stride, pad);
    const int ckk = d.c * d.kh * d.kw;
    const int ohow = d.oh * d.ow;
    std::vector<double> col(static_cast<std::size_t>(ckk) * ohow);
    for (int n = 0; n < d.n; ++n) {
        im2col(gout.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, col.data());
        if (gx) {
            mm_acc(k.data.data(), col.data(),
                   gx->data.data() + static_cast<std::size_t>(n) * d.f * ohow, d.f, ckk, ohow);
        }
        if (gk) {
            mm_acc_bt(x.data.data() + static_cast<std::size_t>(n) * d.f * ohow, col.data(),
                      gk->data.data(), d.f, ohow, ckk);
        }
    }
}

}  // namespace rotlab::detail
