#pragma once

// Iterative radix-2 FFT over split re/im arrays with precomputed twiddles.
// The explicit real arithmetic avoids libstdc++'s checked complex multiply
// (__mulsc3), which dominates runtime otherwise. Sizes must be powers of 2.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace auscult::audio {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n) {
        if (!is_pow2(n)) throw std::invalid_argument("fft: size must be 2^k");
        cos_.resize(n / 2);
        sin_.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double a = -2.0 * 3.141592653589793238462643 *
                             static_cast<double>(k) / static_cast<double>(n);
            cos_[k] = static_cast<float>(std::cos(a));
            sin_[k] = static_cast<float>(std::sin(a));
        }
    }

    std::size_t size() const { return n_; }

    // In-place transform of (re, im), both length n. inverse=true applies
    // the conjugate transform and scales by 1/n.
    void operator()(float* re, float* im, bool inverse = false) const {
        const std::size_t n = n_;
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) {
                std::swap(re[i], re[j]);
                std::swap(im[i], im[j]);
            }
        }
        const float ssign = inverse ? -1.0f : 1.0f;
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const std::size_t half = len / 2;
            const std::size_t step = n / len;
            for (std::size_t i = 0; i < n; i += len) {
                for (std::size_t k = 0; k < half; ++k) {
                    const float wr = cos_[k * step];
                    const float wi = ssign * sin_[k * step];
                    const std::size_t a = i + k, b = i + k + half;
                    const float tr = wr * re[b] - wi * im[b];
                    const float ti = wr * im[b] + wi * re[b];
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
        }
        if (inverse) {
            const float inv = 1.0f / static_cast<float>(n);
            for (std::size_t i = 0; i < n; ++i) {
                re[i] *= inv;
                im[i] *= inv;
            }
        }
    }

private:
    std::size_t n_;
    std::vector<float> cos_, sin_;
};

// Convenience wrapper over std::complex buffers.
inline void fft(std::vector<std::complex<float>>& a, bool inverse = false) {
    const std::size_t n = a.size();
    FftPlan plan(n);
    std::vector<float> re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
        re[i] = a[i].real();
        im[i] = a[i].imag();
    }
    plan(re.data(), im.data(), inverse);
    for (std::size_t i = 0; i < n; ++i) a[i] = {re[i], im[i]};
}

// Power spectrum |X_k|^2, k = 0..n/2, of a real frame zero-padded to the
// plan size. scratch_re/scratch_im must each hold plan.size() floats.
inline void power_spectrum(const float* frame, std::size_t frame_len,
                           const FftPlan& plan, float* scratch_re,
                           float* scratch_im, float* out_power) {
    const std::size_t n = plan.size();
    if (n < frame_len)
        throw std::invalid_argument("power_spectrum: plan smaller than frame");
    for (std::size_t i = 0; i < frame_len; ++i) scratch_re[i] = frame[i];
    for (std::size_t i = frame_len; i < n; ++i) scratch_re[i] = 0.0f;
    for (std::size_t i = 0; i < n; ++i) scratch_im[i] = 0.0f;
    plan(scratch_re, scratch_im);
    for (std::size_t k = 0; k <= n / 2; ++k)
        out_power[k] =
            scratch_re[k] * scratch_re[k] + scratch_im[k] * scratch_im[k];
}

// Allocating convenience overload.
inline std::vector<float> power_spectrum(const float* frame,
                                         std::size_t frame_len,
                                         std::size_t n_fft) {
    FftPlan plan(n_fft);
    std::vector<float> re(n_fft), im(n_fft), out(n_fft / 2 + 1);
    power_spectrum(frame, frame_len, plan, re.data(), im.data(), out.data());
    return out;
}

}  // namespace auscult::audio
