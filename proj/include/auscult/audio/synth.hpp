#pragma once

// Parametric auscultation-like signal generator. Every class is separable
// by construction:
//   respiratory normal : 100-1000 Hz noise under a 0.25 Hz breath envelope
//   wheeze             : + continuous tone (200-800 Hz) during expiration
//   crackle            : + 5-15 short damped-sine bursts (<= 20 ms)
//   cardiac normal     : S1/S2 damped thumps at ~1 Hz over a faint floor
//   murmur             : + 150-400 Hz noise between S1 and S2
//   cough (two classes): 2-5 broadband bursts; the two classes differ by a
//                        spectral tilt around 2 kHz
// All randomness flows through the provided stream, so (label, seed) fully
// determines the waveform.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../nn/rng.hpp"
#include "fft.hpp"

namespace auscult::audio {

constexpr std::uint32_t kSampleRate = 16000;
constexpr double kPi = 3.141592653589793238462643;

enum class Modality { respiratory, cardiac, cough };
enum class Finding {
    normal,
    wheeze,
    crackle,
    murmur,
    cough_covid_pos,
    cough_covid_neg
};
enum class Severity { none, mild, severe };

inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::respiratory: return "respiratory";
        case Modality::cardiac: return "cardiac";
        case Modality::cough: return "cough";
    }
    return "?";
}
inline std::string to_string(Finding f) {
    switch (f) {
        case Finding::normal: return "normal";
        case Finding::wheeze: return "wheeze";
        case Finding::crackle: return "crackle";
        case Finding::murmur: return "murmur";
        case Finding::cough_covid_pos: return "cough_covid_pos";
        case Finding::cough_covid_neg: return "cough_covid_neg";
    }
    return "?";
}
inline std::string to_string(Severity s) {
    switch (s) {
        case Severity::none: return "none";
        case Severity::mild: return "mild";
        case Severity::severe: return "severe";
    }
    return "?";
}

inline Modality modality_from_string(const std::string& s) {
    if (s == "respiratory") return Modality::respiratory;
    if (s == "cardiac") return Modality::cardiac;
    if (s == "cough") return Modality::cough;
    throw std::invalid_argument("unknown modality: " + s);
}
inline Finding finding_from_string(const std::string& s) {
    if (s == "normal") return Finding::normal;
    if (s == "wheeze") return Finding::wheeze;
    if (s == "crackle") return Finding::crackle;
    if (s == "murmur") return Finding::murmur;
    if (s == "cough_covid_pos") return Finding::cough_covid_pos;
    if (s == "cough_covid_neg") return Finding::cough_covid_neg;
    throw std::invalid_argument("unknown finding: " + s);
}
inline Severity severity_from_string(const std::string& s) {
    if (s == "none") return Severity::none;
    if (s == "mild") return Severity::mild;
    if (s == "severe") return Severity::severe;
    throw std::invalid_argument("unknown severity: " + s);
}

struct SoundLabel {
    std::string id;  // recording id, assigned by the data generator
    Modality modality = Modality::respiratory;
    Finding finding = Finding::normal;
    std::string location;
    Severity severity = Severity::none;
    std::uint64_t seed = 0;
};

inline bool finding_valid_for(Modality m, Finding f) {
    switch (m) {
        case Modality::respiratory:
            return f == Finding::normal || f == Finding::wheeze ||
                   f == Finding::crackle;
        case Modality::cardiac:
            return f == Finding::normal || f == Finding::murmur;
        case Modality::cough:
            return f == Finding::cough_covid_pos ||
                   f == Finding::cough_covid_neg;
    }
    return false;
}

inline void validate_label(const SoundLabel& l) {
    if (!finding_valid_for(l.modality, l.finding))
        throw std::invalid_argument("label: finding '" + to_string(l.finding) +
                                    "' invalid for modality '" +
                                    to_string(l.modality) + "'");
    if (l.finding == Finding::normal && l.severity != Severity::none)
        throw std::invalid_argument("label: normal finding requires severity none");
}

inline void to_json(nlohmann::json& j, const SoundLabel& l) {
    j = nlohmann::json{{"id", l.id},
                       {"modality", to_string(l.modality)},
                       {"finding", to_string(l.finding)},
                       {"location", l.location},
                       {"severity", to_string(l.severity)},
                       {"synth_params", {{"seed", l.seed}}}};
}
inline void from_json(const nlohmann::json& j, SoundLabel& l) {
    l.id = j.at("id").get<std::string>();
    l.modality = modality_from_string(j.at("modality").get<std::string>());
    l.finding = finding_from_string(j.at("finding").get<std::string>());
    l.location = j.at("location").get<std::string>();
    l.severity = severity_from_string(j.at("severity").get<std::string>());
    l.seed = j.at("synth_params").at("seed").get<std::uint64_t>();
}

namespace detail {

// Unit-RMS noise whose spectrum is flat inside [f_lo, f_hi] and zero
// outside, built in the frequency domain. When split_hz > 0, bins at or
// above split_hz are weighted by hi_gain (the cough tilt).
inline std::vector<float> band_noise(auscult::nn::RandomStream& rng,
                                     std::size_t n, double f_lo, double f_hi,
                                     double split_hz = 0.0,
                                     double hi_gain = 1.0) {
    const std::size_t N = next_pow2(std::max<std::size_t>(n, 16));
    std::vector<float> re(N, 0.0f), im(N, 0.0f);
    const double df = static_cast<double>(kSampleRate) / static_cast<double>(N);
    for (std::size_t k = 1; k < N / 2; ++k) {
        const double f = k * df;
        if (f < f_lo || f > f_hi) continue;
        const double g =
            (split_hz > 0.0 && f >= split_hz) ? hi_gain : 1.0;
        const float rr = static_cast<float>(g * rng.gaussian());
        const float ii = static_cast<float>(g * rng.gaussian());
        re[k] = rr;
        im[k] = ii;
        re[N - k] = rr;
        im[N - k] = -ii;
    }
    FftPlan plan(N);
    plan(re.data(), im.data(), /*inverse=*/true);
    std::vector<float> out(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = re[i];
        sq += static_cast<double>(out[i]) * out[i];
    }
    const double rms = std::sqrt(sq / static_cast<double>(n));
    const float inv = rms > 0.0 ? static_cast<float>(1.0 / rms) : 0.0f;
    for (float& v : out) v *= inv;
    return out;
}

// Breath amplitude, period 4 s (0.25 Hz): 0 at cycle edges, peak at mid.
inline double breath_env(double t) {
    const double s = std::sin(kPi * 0.25 * t);
    return 0.25 + 0.75 * s * s;
}

// Smooth expiration window: nonzero only in the second half of each 4 s
// cycle, shaped like a half-sine hump.
inline double expiration_env(double t) {
    const double phase = std::fmod(t, 4.0);
    if (phase < 2.0) return 0.0;
    const double tau = (phase - 2.0) / 2.0;  // 0..1 across expiration
    const double s = std::sin(kPi * tau);
    return s * s;
}

inline double severity_mult(Severity s) {
    switch (s) {
        case Severity::none: return 1.0;
        case Severity::mild: return 0.6;
        case Severity::severe: return 1.3;
    }
    return 1.0;
}

inline void add_damped_sine(std::vector<float>& x, double t0, double dur_s,
                            double freq, double decay_s, double amp) {
    const std::size_t i0 = static_cast<std::size_t>(
        std::max(0.0, t0) * kSampleRate);
    const std::size_t len = static_cast<std::size_t>(dur_s * kSampleRate);
    for (std::size_t i = 0; i < len && i0 + i < x.size(); ++i) {
        const double tau = static_cast<double>(i) / kSampleRate;
        x[i0 + i] += static_cast<float>(
            amp * std::exp(-tau / decay_s) * std::sin(2.0 * kPi * freq * tau));
    }
}

}  // namespace detail

inline std::vector<float> synthesize(const SoundLabel& label,
                                     double duration_s,
                                     auscult::nn::RandomStream& rng) {
    if (duration_s <= 0.0)
        throw std::invalid_argument("synthesize: duration must be positive");
    validate_label(label);
    const std::size_t n = static_cast<std::size_t>(
        std::llround(duration_s * kSampleRate));
    std::vector<float> x(n, 0.0f);
    const double sev = detail::severity_mult(label.severity);

    switch (label.modality) {
        case Modality::respiratory: {
            std::vector<float> noise = detail::band_noise(rng, n, 100.0, 1000.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                x[i] = static_cast<float>(0.15 * detail::breath_env(t)) *
                       noise[i];
            }
            if (label.finding == Finding::wheeze) {
                const double f_w = rng.uniform(200.0, 800.0);
                const double amp = 0.17 * sev;
                for (std::size_t i = 0; i < n; ++i) {
                    const double t = static_cast<double>(i) / kSampleRate;
                    x[i] += static_cast<float>(
                        amp * detail::expiration_env(t) *
                        std::sin(2.0 * kPi * f_w * t));
                }
            } else if (label.finding == Finding::crackle) {
                const std::int64_t lo = label.severity == Severity::severe ? 10 : 5;
                const std::int64_t hi = label.severity == Severity::severe ? 15 : 9;
                const std::int64_t count = rng.uniform_int(lo, hi);
                for (std::int64_t c = 0; c < count; ++c) {
                    const double t0 = rng.uniform(0.1, duration_s - 0.1);
                    const double dur = rng.uniform(0.008, 0.020);
                    const double freq = rng.uniform(600.0, 2000.0);
                    const double amp = rng.uniform(0.25, 0.40) * sev;
                    detail::add_damped_sine(x, t0, dur, freq, dur / 4.0, amp);
                }
            }
            break;
        }
        case Modality::cardiac: {
            std::vector<float> floor_noise =
                detail::band_noise(rng, n, 100.0, 600.0);
            for (std::size_t i = 0; i < n; ++i) x[i] = 0.02f * floor_noise[i];
            const double hr_hz = rng.uniform(0.9, 1.4);  // 54-84 bpm
            const double period = 1.0 / hr_hz;
            const double f1 = rng.uniform(35.0, 55.0);
            const double f2 = f1 * 1.5;
            std::vector<float> murmur_noise;
            if (label.finding == Finding::murmur)
                murmur_noise = detail::band_noise(rng, n, 150.0, 400.0);
            for (double tb = 0.05; tb < duration_s; tb += period) {
                detail::add_damped_sine(x, tb, 0.12, f1, 0.030, 0.55);
                detail::add_damped_sine(x, tb + 0.35 * period, 0.08, f2, 0.020,
                                        0.45);
                if (label.finding == Finding::murmur) {
                    // systolic window between S1 decay and S2 onset
                    const double m0 = tb + 0.10 * period;
                    const double m1 = tb + 0.32 * period;
                    const std::size_t i0 = static_cast<std::size_t>(
                        std::max(0.0, m0) * kSampleRate);
                    const std::size_t i1 = std::min(
                        x.size(), static_cast<std::size_t>(m1 * kSampleRate));
                    const double amp = 0.16 * sev;
                    for (std::size_t i = i0; i < i1; ++i) {
                        const double u =
                            static_cast<double>(i - i0) /
                            std::max<std::size_t>(1, i1 - i0 - 1);
                        const double win = std::sin(kPi * u);  // smooth edges
                        x[i] += static_cast<float>(amp * win * win) *
                                murmur_noise[i];
                    }
                }
            }
            break;
        }
        case Modality::cough: {
            std::vector<float> floor_noise =
                detail::band_noise(rng, n, 100.0, 1000.0);
            for (std::size_t i = 0; i < n; ++i) x[i] = 0.012f * floor_noise[i];
            const bool positive = label.finding == Finding::cough_covid_pos;
            const double tilt_gain = positive ? 2.5 : 0.4;
            const std::int64_t bursts = rng.uniform_int(2, 5);
            for (std::int64_t b = 0; b < bursts; ++b) {
                const double slot = duration_s / static_cast<double>(bursts);
                const double t0 = (static_cast<double>(b) + 0.2) * slot +
                                  rng.uniform(0.0, 0.3 * slot);
                const double dur = rng.uniform(0.30, 0.50);
                const std::size_t blen = static_cast<std::size_t>(
                    dur * kSampleRate);
                std::vector<float> burst = detail::band_noise(
                    rng, blen, 100.0, 6000.0, 2000.0, tilt_gain);
                const std::size_t i0 = static_cast<std::size_t>(
                    t0 * kSampleRate);
                const double amp = 0.40 * sev;
                const std::size_t attack = kSampleRate / 200;  // 5 ms
                for (std::size_t i = 0; i < blen && i0 + i < x.size(); ++i) {
                    const double tau = static_cast<double>(i) / kSampleRate;
                    const double on = i < attack
                                          ? static_cast<double>(i) / attack
                                          : std::exp(-(tau - 0.005) / 0.12);
                    x[i0 + i] += static_cast<float>(amp * on) * burst[i];
                }
            }
            break;
        }
    }

    // Safety normalization: keep every sample inside [-1, 1].
    float peak = 0.0f;
    for (float v : x) peak = std::max(peak, std::fabs(v));
    if (peak > 0.95f) {
        const float s = 0.95f / peak;
        for (float& v : x) v *= s;
    }
    return x;
}

// Linear-interpolation resampling to dst_rate.
inline std::vector<float> resample_linear(const std::vector<float>& x,
                                          std::uint32_t src_rate,
                                          std::uint32_t dst_rate) {
    if (x.empty()) throw std::invalid_argument("resample: empty input");
    if (src_rate == dst_rate) return x;
    const double ratio = static_cast<double>(src_rate) / dst_rate;
    const std::size_t n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(x.size()) * dst_rate / src_rate));
    std::vector<float> out(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const std::size_t lo = std::min(
            static_cast<std::size_t>(pos), x.size() - 1);
        const std::size_t hi = std::min(lo + 1, x.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        out[i] = static_cast<float>((1.0 - frac) * x[lo] + frac * x[hi]);
    }
    return out;
}

// Resample to 16 kHz, then truncate (keeping the head) or zero-pad to an
// exact clip length.
inline std::vector<float> canonicalize(const std::vector<float>& w,
                                       std::uint32_t sample_rate,
                                       double clip_seconds = 10.0) {
    if (w.empty()) throw std::invalid_argument("canonicalize: empty waveform");
    std::vector<float> x = resample_linear(w, sample_rate, kSampleRate);
    const std::size_t want = static_cast<std::size_t>(
        std::llround(clip_seconds * kSampleRate));
    x.resize(want, 0.0f);  // truncates or zero-pads
    return x;
}

// Two 4.5 s clips joined by a 1 s silent gap -> exactly 10 s.
inline std::vector<float> concat_pairwise(const std::vector<float>& a,
                                          const std::vector<float>& b) {
    const std::size_t seg = kSampleRate * 9 / 2;  // 72000
    const std::size_t gap = kSampleRate;          // 16000
    if (a.size() != seg || b.size() != seg)
        throw std::invalid_argument(
            "concat_pairwise: inputs must each be 4.5 s at 16 kHz (72000 "
            "samples), got " +
            std::to_string(a.size()) + " and " + std::to_string(b.size()));
    std::vector<float> out;
    out.reserve(2 * seg + gap);
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), gap, 0.0f);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace auscult::audio
