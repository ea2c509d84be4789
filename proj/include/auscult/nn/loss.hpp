#pragma once

// Fused log-softmax + gather losses over token logits. Both treat the
// logits as rows of [N, V] where N is the number of positions; positions
// with zero weight/mask contribute nothing to value or gradient, and their
// target ids are ignored entirely (so padding may carry any id).

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ops.hpp"

namespace auscult::nn {

namespace detail {

// Row-wise log-sum-exp of [N, V], max-shifted, sequential accumulation.
inline void row_lse(const float* Z, std::int64_t N, std::int64_t V,
                    float* lse) {
    for (std::int64_t i = 0; i < N; ++i) {
        const float* z = Z + i * V;
        float m = z[0];
        for (std::int64_t j = 1; j < V; ++j) m = std::max(m, z[j]);
        float s = 0.0f;
        for (std::int64_t j = 0; j < V; ++j) s += std::exp(z[j] - m);
        lse[i] = m + std::log(s);
    }
}

}  // namespace detail

// Weighted token cross-entropy: sum_i w_i * (lse_i - z_i[t_i]) -> scalar.
// The caller encodes both masking and normalization in the weights (e.g.
// w = 1/(batch * n_response_tokens_of_this_example) at response positions,
// 0 elsewhere, for a mean-over-examples of per-example mean losses).
inline Tensor cross_entropy_weighted(Tape* tape, const Tensor& logits,
                                     const std::vector<std::int32_t>& targets,
                                     const std::vector<float>& weights) {
    const std::int64_t V = logits.shape().back();
    const std::int64_t N = logits.numel() / V;
    if (static_cast<std::int64_t>(targets.size()) != N ||
        static_cast<std::int64_t>(weights.size()) != N)
        throw std::invalid_argument(
            "cross_entropy_weighted: targets/weights must have one entry per "
            "logit row");

    auto lse = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(N));
    detail::row_lse(logits.data(), N, V, lse->data());

    const float* Z = logits.data();
    float total = 0.0f;
    for (std::int64_t i = 0; i < N; ++i) {
        const float w = weights[static_cast<std::size_t>(i)];
        if (w == 0.0f) continue;
        const std::int32_t t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= V)
            throw std::invalid_argument("cross_entropy_weighted: target " +
                                        std::to_string(t) +
                                        " out of range at weighted position");
        total += w * ((*lse)[static_cast<std::size_t>(i)] - Z[i * V + t]);
    }
    Tensor out = Tensor::from({1}, {total}, detail::want_grad(tape, logits));
    detail::check_finite(out, "cross_entropy_weighted");

    if (out.requires_grad()) {
        tape->record([zi = logits.impl_ptr(), oi = out.impl_ptr(), targets,
                      weights, lse, N, V]() {
            if (!detail::has_upstream(oi) || !zi->requires_grad) return;
            const float g = oi->grad[0];
            const float* Z = zi->data.data();
            float* dZ = detail::grad_of(zi);
            for (std::int64_t i = 0; i < N; ++i) {
                const float w = weights[static_cast<std::size_t>(i)];
                if (w == 0.0f) continue;
                const float gw = g * w;
                const float l = (*lse)[static_cast<std::size_t>(i)];
                const float* z = Z + i * V;
                float* dz = dZ + i * V;
                for (std::int64_t j = 0; j < V; ++j)
                    dz[j] += gw * std::exp(z[j] - l);
                dz[targets[static_cast<std::size_t>(i)]] -= gw;
            }
        });
    }
    return out;
}

// Per-sequence log-likelihood: out[b] = sum_l mask[b,l] * log p(t[b,l]).
// logits: [B, L, V]; targets/mask flattened [B*L]. Used by preference
// losses, where whole-sequence log-probs are compared.
inline Tensor sequence_log_prob(Tape* tape, const Tensor& logits,
                                const std::vector<std::int32_t>& targets,
                                const std::vector<float>& mask) {
    if (logits.rank() != 3)
        throw std::invalid_argument("sequence_log_prob: logits must be [B,L,V]");
    const std::int64_t B = logits.dim(0), L = logits.dim(1), V = logits.dim(2);
    const std::int64_t N = B * L;
    if (static_cast<std::int64_t>(targets.size()) != N ||
        static_cast<std::int64_t>(mask.size()) != N)
        throw std::invalid_argument(
            "sequence_log_prob: targets/mask must have one entry per position");

    auto lse = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(N));
    detail::row_lse(logits.data(), N, V, lse->data());

    Tensor out = Tensor::zeros({B}, detail::want_grad(tape, logits));
    const float* Z = logits.data();
    float* O = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        float s = 0.0f;
        for (std::int64_t l = 0; l < L; ++l) {
            const std::int64_t i = b * L + l;
            const float m = mask[static_cast<std::size_t>(i)];
            if (m == 0.0f) continue;
            const std::int32_t t = targets[static_cast<std::size_t>(i)];
            if (t < 0 || t >= V)
                throw std::invalid_argument(
                    "sequence_log_prob: target out of range at masked position");
            s += m * (Z[i * V + t] - (*lse)[static_cast<std::size_t>(i)]);
        }
        O[b] = s;
    }
    detail::check_finite(out, "sequence_log_prob");

    if (out.requires_grad()) {
        tape->record([zi = logits.impl_ptr(), oi = out.impl_ptr(), targets,
                      mask, lse, B, L, V]() {
            if (!detail::has_upstream(oi) || !zi->requires_grad) return;
            const float* G = oi->grad.data();
            const float* Z = zi->data.data();
            float* dZ = detail::grad_of(zi);
            for (std::int64_t b = 0; b < B; ++b) {
                const float g = G[b];
                if (g == 0.0f) continue;
                for (std::int64_t l = 0; l < L; ++l) {
                    const std::int64_t i = b * L + l;
                    const float m = mask[static_cast<std::size_t>(i)];
                    if (m == 0.0f) continue;
                    const float gm = g * m;
                    const float ls = (*lse)[static_cast<std::size_t>(i)];
                    const float* z = Z + i * V;
                    float* dz = dZ + i * V;
                    for (std::int64_t j = 0; j < V; ++j)
                        dz[j] -= gm * std::exp(z[j] - ls);
                    dz[targets[static_cast<std::size_t>(i)]] += gm;
                }
            }
        });
    }
    return out;
}

}  // namespace auscult::nn
