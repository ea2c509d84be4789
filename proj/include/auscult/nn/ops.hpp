#pragma once

// Differentiable kernels. Conventions shared by every op:
//  * inputs are never modified; each op returns a fresh tensor
//  * accumulation loops run in a fixed sequential row-major order, so
//    results are bit-identical across runs (no fast-math, no reordering)
//  * every forward output is scanned for NaN/Inf and a numeric_fault
//    naming the op is thrown if one appears
//  * `tape == nullptr` disables recording (inference mode)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace auscult::nn {

// ---------------------------------------------------------------------------
// matmul: a[..., K] x b[K, N] -> [..., N]
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: need a rank>=2 and b rank 2, got " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::int64_t K = a.shape().back();
    if (K != b.dim(0))
        throw std::invalid_argument("matmul: inner dims differ: " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::int64_t N = b.dim(1);
    const std::int64_t M = a.numel() / K;

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(N);
    Tensor out = Tensor::zeros(out_shape, detail::want_grad(tape, a, b));

    const float* A = a.data();
    const float* B = b.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < M; ++i) {
        const float* arow = A + i * K;
        float* orow = O + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const float av = arow[k];
            const float* brow = B + k * N;
            for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
    detail::check_finite(out, "matmul");

    if (out.requires_grad()) {
        tape->record([ai = a.impl_ptr(), bi = b.impl_ptr(),
                      oi = out.impl_ptr(), M, K, N]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            if (ai->requires_grad) {
                // dA = dO x B^T, with B^T materialized so the inner loop is
                // contiguous.
                std::vector<float> BT(static_cast<std::size_t>(N * K));
                const float* B = bi->data.data();
                for (std::int64_t k = 0; k < K; ++k)
                    for (std::int64_t j = 0; j < N; ++j)
                        BT[j * K + k] = B[k * N + j];
                float* dA = detail::grad_of(ai);
                for (std::int64_t i = 0; i < M; ++i) {
                    float* darow = dA + i * K;
                    const float* dorow = dO + i * N;
                    for (std::int64_t j = 0; j < N; ++j) {
                        const float v = dorow[j];
                        const float* btrow = BT.data() + j * K;
                        for (std::int64_t k = 0; k < K; ++k)
                            darow[k] += v * btrow[k];
                    }
                }
            }
            if (bi->requires_grad) {
                // dB = A^T x dO
                float* dB = detail::grad_of(bi);
                const float* A = ai->data.data();
                for (std::int64_t i = 0; i < M; ++i) {
                    const float* arow = A + i * K;
                    const float* dorow = dO + i * N;
                    for (std::int64_t k = 0; k < K; ++k) {
                        const float v = arow[k];
                        if (v == 0.0f) continue;
                        float* dbrow = dB + k * N;
                        for (std::int64_t j = 0; j < N; ++j)
                            dbrow[j] += v * dorow[j];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// bmm: batched matmul a[G,M,K] x b[G,K,N] -> [G,M,N].
// transpose_b treats b as [G,N,K] (used for attention scores q k^T).
// ---------------------------------------------------------------------------

inline Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b,
                  bool transpose_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("bmm: need [G,M,K] x [G,*,*], got " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::int64_t G = a.dim(0), M = a.dim(1), K = a.dim(2);
    const std::int64_t N = transpose_b ? b.dim(1) : b.dim(2);
    const std::int64_t bK = transpose_b ? b.dim(2) : b.dim(1);
    if (bK != K)
        throw std::invalid_argument("bmm: inner dims differ: " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));

    Tensor out = Tensor::zeros({G, M, N}, detail::want_grad(tape, a, b));
    const float* A = a.data();
    const float* B = b.data();
    float* O = out.data();
    for (std::int64_t g = 0; g < G; ++g) {
        const float* Ag = A + g * M * K;
        const float* Bg = B + g * (transpose_b ? N * K : K * N);
        float* Og = O + g * M * N;
        if (transpose_b) {
            // out[i,j] = sum_k A[i,k] * B[j,k]; both rows contiguous.
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t j = 0; j < N; ++j) {
                    const float* x = Ag + i * K;
                    const float* y = Bg + j * K;
                    float s = 0.0f;
                    for (std::int64_t k = 0; k < K; ++k) s += x[k] * y[k];
                    Og[i * N + j] = s;
                }
        } else {
            for (std::int64_t i = 0; i < M; ++i) {
                float* orow = Og + i * N;
                const float* arow = Ag + i * K;
                for (std::int64_t k = 0; k < K; ++k) {
                    const float av = arow[k];
                    const float* brow = Bg + k * N;
                    for (std::int64_t j = 0; j < N; ++j)
                        orow[j] += av * brow[j];
                }
            }
        }
    }
    detail::check_finite(out, "bmm");

    if (out.requires_grad()) {
        tape->record([ai = a.impl_ptr(), bi = b.impl_ptr(),
                      oi = out.impl_ptr(), G, M, K, N, transpose_b]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            const float* A = ai->data.data();
            const float* B = bi->data.data();
            float* dA = ai->requires_grad ? detail::grad_of(ai) : nullptr;
            float* dB = bi->requires_grad ? detail::grad_of(bi) : nullptr;
            for (std::int64_t g = 0; g < G; ++g) {
                const float* Ag = A + g * M * K;
                const float* dOg = dO + g * M * N;
                const std::int64_t bstride = transpose_b ? N * K : K * N;
                const float* Bg = B + g * bstride;
                if (transpose_b) {
                    // out = A x B^T with B stored [N,K]:
                    //   dA = dO x B        dB[j,:] += sum_i dO[i,j] * A[i,:]
                    if (dA) {
                        float* dAg = dA + g * M * K;
                        for (std::int64_t i = 0; i < M; ++i) {
                            float* darow = dAg + i * K;
                            const float* dorow = dOg + i * N;
                            for (std::int64_t j = 0; j < N; ++j) {
                                const float v = dorow[j];
                                const float* brow = Bg + j * K;
                                for (std::int64_t k = 0; k < K; ++k)
                                    darow[k] += v * brow[k];
                            }
                        }
                    }
                    if (dB) {
                        float* dBg = dB + g * N * K;
                        for (std::int64_t i = 0; i < M; ++i) {
                            const float* arow = Ag + i * K;
                            const float* dorow = dOg + i * N;
                            for (std::int64_t j = 0; j < N; ++j) {
                                const float v = dorow[j];
                                if (v == 0.0f) continue;
                                float* dbrow = dBg + j * K;
                                for (std::int64_t k = 0; k < K; ++k)
                                    dbrow[k] += v * arow[k];
                            }
                        }
                    }
                } else {
                    // dA = dO x B^T (dot of contiguous rows),
                    // dB = A^T x dO (saxpy).
                    if (dA) {
                        float* dAg = dA + g * M * K;
                        for (std::int64_t i = 0; i < M; ++i)
                            for (std::int64_t k = 0; k < K; ++k) {
                                const float* dorow = dOg + i * N;
                                const float* brow = Bg + k * N;
                                float s = 0.0f;
                                for (std::int64_t j = 0; j < N; ++j)
                                    s += dorow[j] * brow[j];
                                dAg[i * K + k] += s;
                            }
                    }
                    if (dB) {
                        float* dBg = dB + g * K * N;
                        for (std::int64_t i = 0; i < M; ++i) {
                            const float* arow = Ag + i * K;
                            const float* dorow = dOg + i * N;
                            for (std::int64_t k = 0; k < K; ++k) {
                                const float v = arow[k];
                                if (v == 0.0f) continue;
                                float* dbrow = dBg + k * N;
                                for (std::int64_t j = 0; j < N; ++j)
                                    dbrow[j] += v * dorow[j];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise add / mul with limited broadcasting:
//   * identical shapes
//   * b is rank-1 matching the last axis of a (e.g. a bias row)
//   * b is a single value
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { same, last_axis, scalar };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (b.numel() == 1) return Bcast::scalar;
    if (b.rank() == 1 && b.dim(0) == a.shape().back()) return Bcast::last_axis;
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                                shape_str(b.shape()) + " onto " +
                                shape_str(a.shape()));
}

}  // namespace detail

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    const auto kind = detail::bcast_kind(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, a, b));
    const std::int64_t n = a.numel();
    const std::int64_t C = a.shape().back();
    const float* A = a.data();
    const float* B = b.data();
    float* O = out.data();
    switch (kind) {
        case detail::Bcast::same:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] + B[i];
            break;
        case detail::Bcast::scalar:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] + B[0];
            break;
        case detail::Bcast::last_axis:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] + B[i % C];
            break;
    }
    detail::check_finite(out, "add");

    if (out.requires_grad()) {
        tape->record([ai = a.impl_ptr(), bi = b.impl_ptr(),
                      oi = out.impl_ptr(), kind, n, C]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            if (ai->requires_grad) {
                float* dA = detail::grad_of(ai);
                for (std::int64_t i = 0; i < n; ++i) dA[i] += dO[i];
            }
            if (bi->requires_grad) {
                float* dB = detail::grad_of(bi);
                switch (kind) {
                    case detail::Bcast::same:
                        for (std::int64_t i = 0; i < n; ++i) dB[i] += dO[i];
                        break;
                    case detail::Bcast::scalar:
                        for (std::int64_t i = 0; i < n; ++i) dB[0] += dO[i];
                        break;
                    case detail::Bcast::last_axis:
                        for (std::int64_t r = 0; r < n / C; ++r)
                            for (std::int64_t j = 0; j < C; ++j)
                                dB[j] += dO[r * C + j];
                        break;
                }
            }
        });
    }
    return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    const auto kind = detail::bcast_kind(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, a, b));
    const std::int64_t n = a.numel();
    const std::int64_t C = a.shape().back();
    const float* A = a.data();
    const float* B = b.data();
    float* O = out.data();
    switch (kind) {
        case detail::Bcast::same:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] * B[i];
            break;
        case detail::Bcast::scalar:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] * B[0];
            break;
        case detail::Bcast::last_axis:
            for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] * B[i % C];
            break;
    }
    detail::check_finite(out, "mul");

    if (out.requires_grad()) {
        tape->record([ai = a.impl_ptr(), bi = b.impl_ptr(),
                      oi = out.impl_ptr(), kind, n, C]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            const float* A = ai->data.data();
            const float* B = bi->data.data();
            if (ai->requires_grad) {
                float* dA = detail::grad_of(ai);
                switch (kind) {
                    case detail::Bcast::same:
                        for (std::int64_t i = 0; i < n; ++i)
                            dA[i] += dO[i] * B[i];
                        break;
                    case detail::Bcast::scalar:
                        for (std::int64_t i = 0; i < n; ++i)
                            dA[i] += dO[i] * B[0];
                        break;
                    case detail::Bcast::last_axis:
                        for (std::int64_t i = 0; i < n; ++i)
                            dA[i] += dO[i] * B[i % C];
                        break;
                }
            }
            if (bi->requires_grad) {
                float* dB = detail::grad_of(bi);
                switch (kind) {
                    case detail::Bcast::same:
                        for (std::int64_t i = 0; i < n; ++i)
                            dB[i] += dO[i] * A[i];
                        break;
                    case detail::Bcast::scalar:
                        for (std::int64_t i = 0; i < n; ++i)
                            dB[0] += dO[i] * A[i];
                        break;
                    case detail::Bcast::last_axis:
                        for (std::int64_t r = 0; r < n / C; ++r)
                            for (std::int64_t j = 0; j < C; ++j)
                                dB[j] += dO[r * C + j] * A[r * C + j];
                        break;
                }
            }
        });
    }
    return out;
}

// out = a + alpha * b, identical shapes. Covers subtraction (alpha = -1).
inline Tensor add_scaled(Tape* tape, const Tensor& a, const Tensor& b,
                         float alpha) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add_scaled: shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, a, b));
    const std::int64_t n = a.numel();
    const float* A = a.data();
    const float* B = b.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) O[i] = A[i] + alpha * B[i];
    detail::check_finite(out, "add_scaled");

    if (out.requires_grad()) {
        tape->record([ai = a.impl_ptr(), bi = b.impl_ptr(),
                      oi = out.impl_ptr(), alpha, n]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            if (ai->requires_grad) {
                float* dA = detail::grad_of(ai);
                for (std::int64_t i = 0; i < n; ++i) dA[i] += dO[i];
            }
            if (bi->requires_grad) {
                float* dB = detail::grad_of(bi);
                for (std::int64_t i = 0; i < n; ++i) dB[i] += alpha * dO[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape* tape, const Tensor& x, float c) {
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) O[i] = X[i] * c;
    detail::check_finite(out, "scale");
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), c, n]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) dX[i] += c * dO[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// embedding lookup: table[V, d] gathered at ids -> [ids_shape..., d]
// ---------------------------------------------------------------------------

inline Tensor embedding(Tape* tape, const Tensor& table,
                        const std::vector<std::int32_t>& ids,
                        const Shape& ids_shape) {
    if (table.rank() != 2)
        throw std::invalid_argument("embedding: table must be [V,d]");
    if (shape_numel(ids_shape) != static_cast<std::int64_t>(ids.size()))
        throw std::invalid_argument("embedding: ids shape mismatch");
    const std::int64_t V = table.dim(0), d = table.dim(1);
    Shape out_shape = ids_shape;
    out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape, detail::want_grad(tape, table));
    const float* T = table.data();
    float* O = out.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::int32_t id = ids[i];
        if (id < 0 || id >= V)
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " out of range [0," +
                                        std::to_string(V) + ")");
        std::memcpy(O + i * d, T + static_cast<std::int64_t>(id) * d,
                    sizeof(float) * static_cast<std::size_t>(d));
    }
    detail::check_finite(out, "embedding");

    if (out.requires_grad()) {
        tape->record([ti = table.impl_ptr(), oi = out.impl_ptr(), ids, d]() {
            if (!detail::has_upstream(oi) || !ti->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dT = detail::grad_of(ti);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                float* trow = dT + static_cast<std::int64_t>(ids[i]) * d;
                const float* orow = dO + i * d;
                for (std::int64_t j = 0; j < d; ++j) trow[j] += orow[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / log_softmax over the last axis (max-shifted, sequential sums)
// ---------------------------------------------------------------------------

inline Tensor softmax(Tape* tape, const Tensor& x) {
    const std::int64_t C = x.shape().back();
    const std::int64_t R = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        const float* xr = X + r * C;
        float* orow = O + r * C;
        float m = xr[0];
        for (std::int64_t j = 1; j < C; ++j) m = std::max(m, xr[j]);
        float s = 0.0f;
        for (std::int64_t j = 0; j < C; ++j) {
            orow[j] = std::exp(xr[j] - m);
            s += orow[j];
        }
        const float inv = 1.0f / s;
        for (std::int64_t j = 0; j < C; ++j) orow[j] *= inv;
    }
    detail::check_finite(out, "softmax");

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), R, C]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            const float* P = oi->data.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t r = 0; r < R; ++r) {
                const float* p = P + r * C;
                const float* g = dO + r * C;
                float dot = 0.0f;
                for (std::int64_t j = 0; j < C; ++j) dot += p[j] * g[j];
                float* dx = dX + r * C;
                for (std::int64_t j = 0; j < C; ++j)
                    dx[j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor log_softmax(Tape* tape, const Tensor& x) {
    const std::int64_t C = x.shape().back();
    const std::int64_t R = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        const float* xr = X + r * C;
        float* orow = O + r * C;
        float m = xr[0];
        for (std::int64_t j = 1; j < C; ++j) m = std::max(m, xr[j]);
        float s = 0.0f;
        for (std::int64_t j = 0; j < C; ++j) s += std::exp(xr[j] - m);
        const float lse = m + std::log(s);
        for (std::int64_t j = 0; j < C; ++j) orow[j] = xr[j] - lse;
    }
    detail::check_finite(out, "log_softmax");

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), R, C]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            const float* LP = oi->data.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t r = 0; r < R; ++r) {
                const float* lp = LP + r * C;
                const float* g = dO + r * C;
                float gsum = 0.0f;
                for (std::int64_t j = 0; j < C; ++j) gsum += g[j];
                float* dx = dX + r * C;
                for (std::int64_t j = 0; j < C; ++j)
                    dx[j] += g[j] - std::exp(lp[j]) * gsum;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis with learned gain/bias
// ---------------------------------------------------------------------------

inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, float eps = 1e-5f) {
    const std::int64_t D = x.shape().back();
    if (gamma.numel() != D || beta.numel() != D)
        throw std::invalid_argument("layer_norm: gain/bias must match last axis");
    const std::int64_t R = x.numel() / D;
    const bool rg = tape != nullptr && (x.requires_grad() ||
                                        gamma.requires_grad() ||
                                        beta.requires_grad());
    Tensor out = Tensor::zeros(x.shape(), rg);
    auto xhat = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(R));
    const float* X = x.data();
    const float* Gm = gamma.data();
    const float* Bt = beta.data();
    float* O = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        const float* xr = X + r * D;
        float mean = 0.0f;
        for (std::int64_t j = 0; j < D; ++j) mean += xr[j];
        mean /= static_cast<float>(D);
        float var = 0.0f;
        for (std::int64_t j = 0; j < D; ++j) {
            const float c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<float>(D);
        const float is = 1.0f / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        float* xh = xhat->data() + r * D;
        float* orow = O + r * D;
        for (std::int64_t j = 0; j < D; ++j) {
            xh[j] = (xr[j] - mean) * is;
            orow[j] = Gm[j] * xh[j] + Bt[j];
        }
    }
    detail::check_finite(out, "layer_norm");

    if (rg) {
        tape->record([xi = x.impl_ptr(), gi = gamma.impl_ptr(),
                      bi = beta.impl_ptr(), oi = out.impl_ptr(), xhat,
                      inv_std, R, D]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            const float* Gm = gi->data.data();
            if (gi->requires_grad) {
                float* dG = detail::grad_of(gi);
                for (std::int64_t r = 0; r < R; ++r) {
                    const float* g = dO + r * D;
                    const float* xh = xhat->data() + r * D;
                    for (std::int64_t j = 0; j < D; ++j) dG[j] += g[j] * xh[j];
                }
            }
            if (bi->requires_grad) {
                float* dB = detail::grad_of(bi);
                for (std::int64_t r = 0; r < R; ++r) {
                    const float* g = dO + r * D;
                    for (std::int64_t j = 0; j < D; ++j) dB[j] += g[j];
                }
            }
            if (xi->requires_grad) {
                float* dX = detail::grad_of(xi);
                for (std::int64_t r = 0; r < R; ++r) {
                    const float* g = dO + r * D;
                    const float* xh = xhat->data() + r * D;
                    const float is = (*inv_std)[static_cast<std::size_t>(r)];
                    float m1 = 0.0f, m2 = 0.0f;
                    for (std::int64_t j = 0; j < D; ++j) {
                        const float gg = g[j] * Gm[j];
                        m1 += gg;
                        m2 += gg * xh[j];
                    }
                    m1 /= static_cast<float>(D);
                    m2 /= static_cast<float>(D);
                    float* dx = dX + r * D;
                    for (std::int64_t j = 0; j < D; ++j)
                        dx[j] += is * (g[j] * Gm[j] - m1 - xh[j] * m2);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor gelu(Tape* tape, const Tensor& x) {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr float kC0 = 0.7978845608028654f;
    constexpr float kC1 = 0.044715f;
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = X[i];
        const float u = kC0 * (v + kC1 * v * v * v);
        O[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
    detail::check_finite(out, "gelu");

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            const float* X = xi->data.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) {
                const float v = X[i];
                const float u = kC0 * (v + kC1 * v * v * v);
                const float t = std::tanh(u);
                const float du = kC0 * (1.0f + 3.0f * kC1 * v * v);
                const float grad =
                    0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                dX[i] += dO[i] * grad;
            }
        });
    }
    return out;
}

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = X[i];
        O[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                         : std::exp(v) / (1.0f + std::exp(v));
    }
    detail::check_finite(out, "sigmoid");
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            const float* S = oi->data.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i)
                dX[i] += dO[i] * S[i] * (1.0f - S[i]);
        });
    }
    return out;
}

inline Tensor log_sigmoid(Tape* tape, const Tensor& x) {
    // log sigma(x) = -softplus(-x), evaluated in the numerically stable branch.
    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = X[i];
        O[i] = v >= 0.0f ? -std::log1p(std::exp(-v))
                         : v - std::log1p(std::exp(v));
    }
    detail::check_finite(out, "log_sigmoid");
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            const float* X = xi->data.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) {
                const float v = X[i];
                // d/dx log sigma(x) = sigma(-x)
                const float s = v >= 0.0f
                                    ? std::exp(-v) / (1.0f + std::exp(-v))
                                    : 1.0f / (1.0f + std::exp(v));
                dX[i] += dO[i] * s;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros({1}, detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float s = 0.0f;
    for (std::int64_t i = 0; i < n; ++i) s += X[i];
    out.data()[0] = s;
    detail::check_finite(out, "sum_all");
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float g = oi->grad[0];
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) dX[i] += g;
        });
    }
    return out;
}

inline Tensor mean_all(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros({1}, detail::want_grad(tape, x));
    const std::int64_t n = x.numel();
    const float* X = x.data();
    float s = 0.0f;
    for (std::int64_t i = 0; i < n; ++i) s += X[i];
    out.data()[0] = s / static_cast<float>(n);
    detail::check_finite(out, "mean_all");
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float g = oi->grad[0] / static_cast<float>(n);
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) dX[i] += g;
        });
    }
    return out;
}

// Mean over a single axis; the axis is removed from the shape.
inline Tensor mean_axis(Tape* tape, const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw std::invalid_argument("mean_axis: axis out of range");
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::int64_t D = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape, detail::want_grad(tape, x));
    const float* X = x.data();
    float* O = out.data();
    const float invD = 1.0f / static_cast<float>(D);
    for (std::int64_t o = 0; o < outer; ++o) {
        float* orow = O + o * inner;
        for (std::int64_t d = 0; d < D; ++d) {
            const float* xrow = X + (o * D + d) * inner;
            for (std::int64_t i = 0; i < inner; ++i) orow[i] += xrow[i];
        }
        for (std::int64_t i = 0; i < inner; ++i) orow[i] *= invD;
    }
    detail::check_finite(out, "mean_axis");

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), outer, D,
                      inner, invD]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t o = 0; o < outer; ++o) {
                const float* orow = dO + o * inner;
                for (std::int64_t d = 0; d < D; ++d) {
                    float* xrow = dX + (o * D + d) * inner;
                    for (std::int64_t i = 0; i < inner; ++i)
                        xrow[i] += orow[i] * invD;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops: reshape (copying), permute, slice, concat
// ---------------------------------------------------------------------------

inline Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch " +
                                    shape_str(x.shape()) + " -> " +
                                    shape_str(new_shape));
    Tensor out = Tensor::zeros(new_shape, detail::want_grad(tape, x));
    std::memcpy(out.data(), x.data(),
                sizeof(float) * static_cast<std::size_t>(x.numel()));
    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr()]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            const std::size_t n = xi->data.size();
            for (std::size_t i = 0; i < n; ++i) dX[i] += dO[i];
        });
    }
    return out;
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace detail

inline Tensor permute(Tape* tape, const Tensor& x,
                      const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank())
        throw std::invalid_argument("permute: perm rank mismatch");
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        out_shape[i] = x.shape()[perm[i]];
    Tensor out = Tensor::zeros(out_shape, detail::want_grad(tape, x));

    const auto in_strides = detail::row_major_strides(x.shape());
    // Stride to advance in the input when the i-th output coordinate bumps.
    std::vector<std::int64_t> map_strides(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        map_strides[i] = in_strides[perm[i]];

    const float* X = x.data();
    float* O = out.data();
    const std::int64_t n = x.numel();
    const std::size_t rank = perm.size();
    std::vector<std::int64_t> coord(rank, 0);
    std::int64_t src = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
        O[lin] = X[src];
        // Increment the out coordinate (row-major) and track the src offset.
        for (std::size_t i = rank; i-- > 0;) {
            coord[i]++;
            src += map_strides[i];
            if (coord[i] < out_shape[i]) break;
            src -= coord[i] * map_strides[i];
            coord[i] = 0;
        }
    }

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), out_shape,
                      map_strides, n, rank]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            std::vector<std::int64_t> coord(rank, 0);
            std::int64_t src = 0;
            for (std::int64_t lin = 0; lin < n; ++lin) {
                dX[src] += dO[lin];
                for (std::size_t i = rank; i-- > 0;) {
                    coord[i]++;
                    src += map_strides[i];
                    if (coord[i] < out_shape[i]) break;
                    src -= coord[i] * map_strides[i];
                    coord[i] = 0;
                }
            }
        });
    }
    return out;
}

inline Tensor slice(Tape* tape, const Tensor& x, std::size_t axis,
                    std::int64_t start, std::int64_t len) {
    if (axis >= x.rank() || start < 0 || len <= 0 ||
        start + len > x.shape()[axis])
        throw std::invalid_argument("slice: range out of bounds on " +
                                    shape_str(x.shape()));
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::int64_t D = s[axis];
    Shape out_shape = s;
    out_shape[axis] = len;
    Tensor out = Tensor::zeros(out_shape, detail::want_grad(tape, x));
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(O + o * len * inner, X + (o * D + start) * inner,
                    sizeof(float) * static_cast<std::size_t>(len * inner));

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), outer, D, inner,
                      start, len]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t o = 0; o < outer; ++o) {
                float* dst = dX + (o * D + start) * inner;
                const float* src = dO + o * len * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

inline Tensor concat(Tape* tape, const std::vector<Tensor>& parts,
                     std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw std::invalid_argument("concat: bad axis");
    std::int64_t total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.rank() != s0.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.shape()[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch off-axis");
        total += p.shape()[axis];
        rg = rg || (tape != nullptr && p.requires_grad());
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    Tensor out = Tensor::zeros(out_shape, rg);

    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    float* O = out.data();
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
        const std::int64_t D = p.shape()[axis];
        const float* X = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(O + (o * total + off) * inner, X + o * D * inner,
                        sizeof(float) * static_cast<std::size_t>(D * inner));
        off += D;
    }

    if (rg) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl_ptr());
        tape->record([impls, oi = out.impl_ptr(), outer, inner, total,
                      axis]() {
            if (!detail::has_upstream(oi)) return;
            const float* dO = oi->grad.data();
            std::int64_t off = 0;
            for (auto& pi : impls) {
                const std::int64_t D = pi->shape[axis];
                if (pi->requires_grad) {
                    float* dX = detail::grad_of(pi);
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const float* src = dO + (o * total + off) * inner;
                        float* dst = dX + o * D * inner;
                        for (std::int64_t i = 0; i < D * inner; ++i)
                            dst[i] += src[i];
                    }
                }
                off += D;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// causal_mask_fill: scores[..., L, L]; entries with key index > query index
// are replaced by `fill` (a large finite negative, so downstream softmax
// underflows them to exact zero). Gradients do not flow through masked cells.
// ---------------------------------------------------------------------------

inline Tensor causal_mask_fill(Tape* tape, const Tensor& scores,
                               float fill = -1e9f) {
    if (scores.rank() < 2 ||
        scores.shape()[scores.rank() - 1] != scores.shape()[scores.rank() - 2])
        throw std::invalid_argument(
            "causal_mask_fill: need square trailing dims, got " +
            shape_str(scores.shape()));
    const std::int64_t L = scores.shape().back();
    const std::int64_t G = scores.numel() / (L * L);
    Tensor out = Tensor::zeros(scores.shape(), detail::want_grad(tape, scores));
    const float* X = scores.data();
    float* O = out.data();
    for (std::int64_t g = 0; g < G; ++g)
        for (std::int64_t i = 0; i < L; ++i) {
            const float* xr = X + (g * L + i) * L;
            float* orow = O + (g * L + i) * L;
            for (std::int64_t j = 0; j <= i; ++j) orow[j] = xr[j];
            for (std::int64_t j = i + 1; j < L; ++j) orow[j] = fill;
        }
    detail::check_finite(out, "causal_mask_fill");

    if (out.requires_grad()) {
        tape->record([xi = scores.impl_ptr(), oi = out.impl_ptr(), G, L]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t g = 0; g < G; ++g)
                for (std::int64_t i = 0; i < L; ++i) {
                    const float* src = dO + (g * L + i) * L;
                    float* dst = dX + (g * L + i) * L;
                    for (std::int64_t j = 0; j <= i; ++j) dst[j] += src[j];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout (inverted scaling). Identity when not training or p == 0.
// ---------------------------------------------------------------------------

inline Tensor dropout(Tape* tape, const Tensor& x, float p, RandomStream& rng,
                      bool training) {
    if (!training || p <= 0.0f) return x;
    if (p >= 1.0f) throw std::invalid_argument("dropout: p must be < 1");
    const std::int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(n));
    const float keep_scale = 1.0f / (1.0f - p);
    for (std::int64_t i = 0; i < n; ++i)
        (*mask)[static_cast<std::size_t>(i)] =
            rng.uniform_f() < p ? 0.0f : keep_scale;

    Tensor out = Tensor::zeros(x.shape(), detail::want_grad(tape, x));
    const float* X = x.data();
    float* O = out.data();
    for (std::int64_t i = 0; i < n; ++i) O[i] = X[i] * (*mask)[i];
    detail::check_finite(out, "dropout");

    if (out.requires_grad()) {
        tape->record([xi = x.impl_ptr(), oi = out.impl_ptr(), mask, n]() {
            if (!detail::has_upstream(oi) || !xi->requires_grad) return;
            const float* dO = oi->grad.data();
            float* dX = detail::grad_of(xi);
            for (std::int64_t i = 0; i < n; ++i) dX[i] += dO[i] * (*mask)[i];
        });
    }
    return out;
}

}  // namespace auscult::nn
