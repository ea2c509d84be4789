#pragma once

// 2-D (and derived 1-D) convolution via im2col + matmul, per sample.
// x: [B, C, H, W], w: [Co, C, kh, kw], bias: [Co] -> out [B, Co, Ho, Wo]
// Ho = (H + 2*ph - kh)/sh + 1 (floor), same for Wo.

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "ops.hpp"

namespace auscult::nn {

namespace detail {

// col has layout [C*kh*kw, Ho*Wo], row index r = (c*kh + ki)*kw + kj.
inline void im2col(const float* x, std::int64_t C, std::int64_t H,
                   std::int64_t W, std::int64_t kh, std::int64_t kw,
                   std::int64_t sh, std::int64_t sw, std::int64_t ph,
                   std::int64_t pw, std::int64_t Ho, std::int64_t Wo,
                   float* col) {
    const std::int64_t P = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t ki = 0; ki < kh; ++ki)
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                float* crow = col + ((c * kh + ki) * kw + kj) * P;
                for (std::int64_t oi = 0; oi < Ho; ++oi) {
                    const std::int64_t ii = oi * sh - ph + ki;
                    float* dst = crow + oi * Wo;
                    if (ii < 0 || ii >= H) {
                        std::memset(dst, 0,
                                    sizeof(float) * static_cast<std::size_t>(Wo));
                        continue;
                    }
                    const float* src = x + (c * H + ii) * W;
                    for (std::int64_t oj = 0; oj < Wo; ++oj) {
                        const std::int64_t jj = oj * sw - pw + kj;
                        dst[oj] = (jj < 0 || jj >= W) ? 0.0f : src[jj];
                    }
                }
            }
}

// Scatter-add the gradient of the im2col matrix back into dx.
inline void col2im_add(const float* dcol, std::int64_t C, std::int64_t H,
                       std::int64_t W, std::int64_t kh, std::int64_t kw,
                       std::int64_t sh, std::int64_t sw, std::int64_t ph,
                       std::int64_t pw, std::int64_t Ho, std::int64_t Wo,
                       float* dx) {
    const std::int64_t P = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t ki = 0; ki < kh; ++ki)
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                const float* crow = dcol + ((c * kh + ki) * kw + kj) * P;
                for (std::int64_t oi = 0; oi < Ho; ++oi) {
                    const std::int64_t ii = oi * sh - ph + ki;
                    if (ii < 0 || ii >= H) continue;
                    float* dst = dx + (c * H + ii) * W;
                    const float* src = crow + oi * Wo;
                    for (std::int64_t oj = 0; oj < Wo; ++oj) {
                        const std::int64_t jj = oj * sw - pw + kj;
                        if (jj >= 0 && jj < W) dst[jj] += src[oj];
                    }
                }
            }
}

}  // namespace detail

inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w,
                     const Tensor& bias, std::int64_t sh, std::int64_t sw,
                     std::int64_t ph, std::int64_t pw) {
    if (x.rank() != 4 || w.rank() != 4)
        throw std::invalid_argument("conv2d: need x [B,C,H,W], w [Co,C,kh,kw]");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw std::invalid_argument("conv2d: channel mismatch " +
                                    shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    if (bias.numel() != Co)
        throw std::invalid_argument("conv2d: bias must be [Co]");
    const std::int64_t Ho = (H + 2 * ph - kh) / sh + 1;
    const std::int64_t Wo = (W + 2 * pw - kw) / sw + 1;
    if (Ho <= 0 || Wo <= 0)
        throw std::invalid_argument("conv2d: empty output for input " +
                                    shape_str(x.shape()));
    const std::int64_t R = C * kh * kw;  // im2col rows
    const std::int64_t P = Ho * Wo;      // im2col cols

    const bool rg = tape != nullptr &&
                    (x.requires_grad() || w.requires_grad() ||
                     bias.requires_grad());
    Tensor out = Tensor::zeros({B, Co, Ho, Wo}, rg);

    // Keep the per-sample im2col matrices for the backward pass.
    auto cols = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(B * R * P));
    const float* X = x.data();
    const float* Wt = w.data();  // [Co, R] when flattened
    const float* Bs = bias.data();
    float* O = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        float* col = cols->data() + b * R * P;
        detail::im2col(X + b * C * H * W, C, H, W, kh, kw, sh, sw, ph, pw, Ho,
                       Wo, col);
        float* ob = O + b * Co * P;
        for (std::int64_t co = 0; co < Co; ++co) {
            float* orow = ob + co * P;
            const float bv = Bs[co];
            for (std::int64_t p = 0; p < P; ++p) orow[p] = bv;
            const float* wrow = Wt + co * R;
            for (std::int64_t r = 0; r < R; ++r) {
                const float wv = wrow[r];
                if (wv == 0.0f) continue;
                const float* crow = col + r * P;
                for (std::int64_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
            }
        }
    }
    detail::check_finite(out, "conv2d");

    if (rg) {
        tape->record([xi = x.impl_ptr(), wi = w.impl_ptr(),
                      bi = bias.impl_ptr(), oi = out.impl_ptr(), cols, B, C,
                      H, W, Co, kh, kw, sh, sw, ph, pw, Ho, Wo, R, P]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            if (bi->requires_grad) {
                float* dB = detail::grad_of(bi);
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const float* orow = dO + (b * Co + co) * P;
                        float s = 0.0f;
                        for (std::int64_t p = 0; p < P; ++p) s += orow[p];
                        dB[co] += s;
                    }
            }
            if (wi->requires_grad) {
                float* dW = detail::grad_of(wi);  // [Co, R]
                // dW[co,:] += sum_p dO[co,p] * col[:,p]; iterate the col
                // matrix transposed so the inner loop stays contiguous.
                std::vector<float> colT(static_cast<std::size_t>(P * R));
                for (std::int64_t b = 0; b < B; ++b) {
                    const float* col = cols->data() + b * R * P;
                    for (std::int64_t r = 0; r < R; ++r)
                        for (std::int64_t p = 0; p < P; ++p)
                            colT[p * R + r] = col[r * P + p];
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const float* dorow = dO + (b * Co + co) * P;
                        float* dwrow = dW + co * R;
                        for (std::int64_t p = 0; p < P; ++p) {
                            const float v = dorow[p];
                            if (v == 0.0f) continue;
                            const float* ct = colT.data() + p * R;
                            for (std::int64_t r = 0; r < R; ++r)
                                dwrow[r] += v * ct[r];
                        }
                    }
                }
            }
            if (xi->requires_grad) {
                float* dX = detail::grad_of(xi);
                const float* Wt = wi->data.data();
                std::vector<float> dcol(static_cast<std::size_t>(R * P));
                for (std::int64_t b = 0; b < B; ++b) {
                    std::fill(dcol.begin(), dcol.end(), 0.0f);
                    // dcol = W^T x dO_b  (saxpy over output channels)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const float* wrow = Wt + co * R;
                        const float* dorow = dO + (b * Co + co) * P;
                        for (std::int64_t r = 0; r < R; ++r) {
                            const float wv = wrow[r];
                            if (wv == 0.0f) continue;
                            float* drow = dcol.data() + r * P;
                            for (std::int64_t p = 0; p < P; ++p)
                                drow[p] += wv * dorow[p];
                        }
                    }
                    detail::col2im_add(dcol.data(), C, H, W, kh, kw, sh, sw,
                                       ph, pw, Ho, Wo, dX + b * C * H * W);
                }
            }
        });
    }
    return out;
}

// 1-D convolution on [B, C, L] with w [Co, C, k], expressed as a 2-D
// convolution over a height-1 image.
inline Tensor conv1d(Tape* tape, const Tensor& x, const Tensor& w,
                     const Tensor& bias, std::int64_t stride,
                     std::int64_t pad) {
    if (x.rank() != 3 || w.rank() != 3)
        throw std::invalid_argument("conv1d: need x [B,C,L], w [Co,C,k]");
    Tensor x4 = reshape(tape, x, {x.dim(0), x.dim(1), 1, x.dim(2)});
    Tensor w4 = reshape(tape, w, {w.dim(0), w.dim(1), 1, w.dim(2)});
    Tensor out4 = conv2d(tape, x4, w4, bias, 1, stride, 0, pad);
    return reshape(tape, out4, {out4.dim(0), out4.dim(1), out4.dim(3)});
}

}  // namespace auscult::nn
