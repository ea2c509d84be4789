#pragma once

// Log-mel spectrogram frontend: Hann window, magnitude-squared FFT,
// triangular mel filters spanning 0-8 kHz, natural log with a 1e-6 floor.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "../nn/tensor.hpp"
#include "fft.hpp"

namespace auscult::audio {

struct MelSpectrogram {
    auscult::nn::Tensor bins;  // [F, T'] log-mel energies
    std::int64_t frame_len = 0;
    std::int64_t frame_hop = 0;
};

constexpr float kLogFloorEnergy = 1e-6f;
// The frontend always runs on canonicalized 16 kHz audio.
constexpr double kSampleRateForMel = 16000.0;

inline double hz_to_mel(double f) {
    return 2595.0 * std::log10(1.0 + f / 700.0);
}
inline double mel_to_hz(double m) {
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// Center frequencies (Hz) of the F triangular filters between f_lo and f_hi.
inline std::vector<double> mel_center_freqs(std::int64_t F, double f_lo = 0.0,
                                            double f_hi = 8000.0) {
    const double m_lo = hz_to_mel(f_lo), m_hi = hz_to_mel(f_hi);
    std::vector<double> centers(static_cast<std::size_t>(F));
    for (std::int64_t k = 0; k < F; ++k) {
        const double m = m_lo + (m_hi - m_lo) *
                                    static_cast<double>(k + 1) /
                                    static_cast<double>(F + 1);
        centers[static_cast<std::size_t>(k)] = mel_to_hz(m);
    }
    return centers;
}

// Triangular filterbank as a dense [F, n_fft/2+1] weight matrix.
inline std::vector<float> mel_filterbank(std::int64_t F, std::size_t n_fft,
                                         double sample_rate,
                                         double f_lo = 0.0,
                                         double f_hi = 8000.0) {
    const std::size_t n_bins = n_fft / 2 + 1;
    const double m_lo = hz_to_mel(f_lo), m_hi = hz_to_mel(f_hi);
    std::vector<double> edges(static_cast<std::size_t>(F) + 2);
    for (std::int64_t k = 0; k < F + 2; ++k)
        edges[static_cast<std::size_t>(k)] = mel_to_hz(
            m_lo + (m_hi - m_lo) * static_cast<double>(k) /
                       static_cast<double>(F + 1));
    std::vector<float> w(static_cast<std::size_t>(F) * n_bins, 0.0f);
    for (std::int64_t k = 0; k < F; ++k) {
        const double left = edges[static_cast<std::size_t>(k)];
        const double center = edges[static_cast<std::size_t>(k) + 1];
        const double right = edges[static_cast<std::size_t>(k) + 2];
        for (std::size_t b = 0; b < n_bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate /
                             static_cast<double>(n_fft);
            double v = 0.0;
            if (f >= left && f <= center && center > left)
                v = (f - left) / (center - left);
            else if (f > center && f <= right && right > center)
                v = (right - f) / (right - center);
            w[static_cast<std::size_t>(k) * n_bins + b] =
                static_cast<float>(v);
        }
    }
    return w;
}

inline MelSpectrogram mel_spectrogram(const std::vector<float>& wave,
                                      std::int64_t F = 64,
                                      std::int64_t frame_len = 400,
                                      std::int64_t frame_hop = 160) {
    if (F < 8) throw std::invalid_argument("mel_spectrogram: F must be >= 8");
    if (frame_len > static_cast<std::int64_t>(wave.size()))
        throw std::invalid_argument(
            "mel_spectrogram: frame length exceeds waveform length");
    const std::size_t n_fft = next_pow2(static_cast<std::size_t>(frame_len));
    const std::size_t n_bins = n_fft / 2 + 1;
    const std::int64_t T =
        (static_cast<std::int64_t>(wave.size()) - frame_len) / frame_hop + 1;

    std::vector<float> hann(static_cast<std::size_t>(frame_len));
    for (std::int64_t i = 0; i < frame_len; ++i)
        hann[static_cast<std::size_t>(i)] = static_cast<float>(
            0.5 - 0.5 * std::cos(2.0 * 3.141592653589793 *
                                 static_cast<double>(i) /
                                 static_cast<double>(frame_len - 1)));
    const std::vector<float> fb =
        mel_filterbank(F, n_fft, static_cast<double>(kSampleRateForMel));

    MelSpectrogram out;
    out.frame_len = frame_len;
    out.frame_hop = frame_hop;
    out.bins = auscult::nn::Tensor::zeros({F, T});
    float* M = out.bins.data();

    const FftPlan plan(n_fft);
    std::vector<float> frame(static_cast<std::size_t>(frame_len));
    std::vector<float> scr_re(n_fft), scr_im(n_fft), p(n_bins);
    for (std::int64_t t = 0; t < T; ++t) {
        const float* src = wave.data() + t * frame_hop;
        for (std::int64_t i = 0; i < frame_len; ++i)
            frame[static_cast<std::size_t>(i)] =
                src[i] * hann[static_cast<std::size_t>(i)];
        power_spectrum(frame.data(), frame.size(), plan, scr_re.data(),
                       scr_im.data(), p.data());
        for (std::int64_t k = 0; k < F; ++k) {
            const float* wrow = fb.data() +
                                static_cast<std::size_t>(k) * n_bins;
            float e = 0.0f;
            for (std::size_t b = 0; b < n_bins; ++b) e += wrow[b] * p[b];
            M[k * T + t] = std::log(e + kLogFloorEnergy);
        }
    }
    return out;
}

}  // namespace auscult::audio
