#pragma once

#include "rotlab/tensor.hpp"

// im2col-backed convolution kernels shared by the Conv2d/TConv2d graph ops.
namespace rotlab::detail {

struct ConvDims {
    int n, c, h, w;      // input
    int f, kh, kw;       // kernel
    int stride, pad;
    int oh, ow;          // output spatial extents
};

ConvDims conv_dims(const std::vector<int>& xshape, const std::vector<int>& kshape, int stride,
                   int pad);

// out[N,F,OH,OW] = conv(x[N,C,H,W], k[F,C,kh,kw])
void conv2d_forward(const Tensor& x, const Tensor& k, const ConvDims& d, Tensor& out);
void conv2d_backward(const Tensor& x, const Tensor& k, const ConvDims& d, const Tensor& gout,
                     Tensor* gx, Tensor* gk);

// Exact adjoint of conv2d_forward: out[N,C,H'',W''] with
// H'' = (H-1)*stride + kh - 2*pad, given x[N,F,H,W] and k[F,C,kh,kw].
void tconv2d_forward(const Tensor& x, const Tensor& k, int stride, int pad, Tensor& out);
void tconv2d_backward(const Tensor& x, const Tensor& k, int stride, int pad, const Tensor& gout,
                      Tensor* gx, Tensor* gk);

std::vector<int> tconv2d_out_shape(const std::vector<int>& xshape, const std::vector<int>& kshape,
                                   int stride, int pad);

}  // namespace rotlab::detail
