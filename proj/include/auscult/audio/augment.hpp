#pragma once

// Spectrogram-space augmentations and the degraded views used to build
// modality-preference training pairs. All variants preserve shape; crop
// and freq_mask floor the chosen region in place (log of zero energy), so
// re-applying the same region is a no-op.

#include <cstdint>
#include <stdexcept>

#include "../nn/rng.hpp"
#include "mel.hpp"

namespace auscult::audio {

enum class AugmentPolicy { crop, freq_mask, spectral_perturb };

inline MelSpectrogram clone_mel(const MelSpectrogram& s) {
    MelSpectrogram out;
    out.frame_len = s.frame_len;
    out.frame_hop = s.frame_hop;
    out.bins = auscult::nn::Tensor::from(s.bins.shape(), s.bins.vec());
    return out;
}

// Floor a contiguous span of frames (zero energy). len == 0 returns the
// input unchanged.
inline MelSpectrogram crop_span(const MelSpectrogram& s, std::int64_t start,
                                std::int64_t len) {
    const std::int64_t F = s.bins.dim(0), T = s.bins.dim(1);
    if (start < 0 || len < 0 || start + len > T)
        throw std::invalid_argument("crop_span: region out of range");
    MelSpectrogram out = clone_mel(s);
    const float floor_v = std::log(kLogFloorEnergy);
    float* M = out.bins.data();
    for (std::int64_t k = 0; k < F; ++k)
        for (std::int64_t t = start; t < start + len; ++t)
            M[k * T + t] = floor_v;
    return out;
}

// Floor a contiguous band of mel rows, inclusive on both ends.
inline MelSpectrogram mask_rows(const MelSpectrogram& s, std::int64_t row0,
                                std::int64_t row1) {
    const std::int64_t F = s.bins.dim(0), T = s.bins.dim(1);
    if (row0 < 0 || row1 < row0 || row1 >= F)
        throw std::invalid_argument("mask_rows: band out of range");
    MelSpectrogram out = clone_mel(s);
    const float floor_v = std::log(kLogFloorEnergy);
    float* M = out.bins.data();
    for (std::int64_t k = row0; k <= row1; ++k)
        for (std::int64_t t = 0; t < T; ++t) M[k * T + t] = floor_v;
    return out;
}

inline MelSpectrogram perturb(const MelSpectrogram& s, float sigma,
                              auscult::nn::RandomStream& rng) {
    MelSpectrogram out = clone_mel(s);
    float* M = out.bins.data();
    const std::int64_t n = out.bins.numel();
    for (std::int64_t i = 0; i < n; ++i) M[i] += rng.gaussian_f(0.0f, sigma);
    return out;
}

inline MelSpectrogram augment(const MelSpectrogram& s, AugmentPolicy policy,
                              auscult::nn::RandomStream& rng) {
    const std::int64_t F = s.bins.dim(0), T = s.bins.dim(1);
    switch (policy) {
        case AugmentPolicy::crop: {
            const double frac = rng.uniform(0.10, 0.30);
            const std::int64_t len = static_cast<std::int64_t>(
                std::llround(frac * static_cast<double>(T)));
            const std::int64_t start =
                len >= T ? 0 : rng.uniform_int(0, T - len);
            return crop_span(s, start, std::min(len, T));
        }
        case AugmentPolicy::freq_mask: {
            const std::int64_t h = rng.uniform_int(4, 12);
            const std::int64_t hh = std::min(h, F);
            const std::int64_t r0 = rng.uniform_int(0, F - hh);
            return mask_rows(s, r0, r0 + hh - 1);
        }
        case AugmentPolicy::spectral_perturb:
            return perturb(s, 0.1f, rng);
    }
    throw std::invalid_argument("augment: unknown policy");
}

// One uniformly chosen corruption; used to make the rejected view of a
// modality-preference pair.
inline MelSpectrogram degrade_view(const MelSpectrogram& s,
                                   auscult::nn::RandomStream& rng) {
    const std::int64_t pick = rng.uniform_int(0, 2);
    return augment(s, static_cast<AugmentPolicy>(pick), rng);
}

}  // namespace auscult::audio
