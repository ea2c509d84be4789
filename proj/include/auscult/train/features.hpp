#pragma once

// Audio feature plumbing shared by training and evaluation: a canonical
// label -> waveform rule, pluggable waveform loaders (regenerate from the
// label's synth seed, or read WAV files from a data directory), and a mel
// cache so each distinct recording is transformed through the DSP
// frontend exactly once.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "../audio/mel.hpp"
#include "../audio/synth.hpp"
#include "../audio/wav.hpp"
#include "../data/examples.hpp"

namespace auscult::train {

using audio::MelSpectrogram;
using audio::SoundLabel;
using data::TrainingExample;

// Canonical 10 s / 16 kHz waveform for a label, regenerated from its
// embedded synth seed. The WAV writer and every reader share this rule,
// so on-disk audio and in-memory audio are interchangeable.
inline std::vector<float> wave_for_label(const SoundLabel& label) {
    nn::RandomStream rng(label.seed);
    return audio::synthesize(label, 10.0, rng);
}

// Resolves one audio_ref to its canonical 10 s / 16 kHz waveform.
using WaveLoader = std::function<std::vector<float>(
    const std::string& ref, const SoundLabel& label)>;

// Loader that ignores the ref and regenerates audio from the label.
inline WaveLoader synth_wave_loader() {
    return [](const std::string&, const SoundLabel& label) {
        return wave_for_label(label);
    };
}

// Loader that reads `root/ref` from disk and canonicalizes it.
inline WaveLoader wav_dir_loader(std::string root) {
    return [root = std::move(root)](const std::string& ref,
                                    const SoundLabel&) {
        const audio::WavData w = audio::read_wav(root + "/" + ref);
        return audio::canonicalize(w.samples, w.sample_rate, 10.0);
    };
}

// Mel spectrograms keyed by the example's audio references. Pairs are
// assembled by trimming each referenced clip to 4.5 s and joining them
// with the 1 s silent gap before the mel transform, so a pair example
// still yields one fixed-size spectrogram.
class MelCache {
  public:
    explicit MelCache(WaveLoader loader) : loader_(std::move(loader)) {
        if (!loader_)
            throw std::invalid_argument("MelCache: loader must be callable");
    }

    const MelSpectrogram& mel(const TrainingExample& ex) {
        return mel_for(ex.audio_ref, ex.label);
    }

    const MelSpectrogram& mel_for(const std::vector<std::string>& refs,
                                  const std::vector<SoundLabel>& labels) {
        if (refs.empty() || refs.size() > 2 || refs.size() != labels.size())
            throw std::invalid_argument(
                "MelCache: need 1 or 2 audio refs with matching labels");
        std::string key = refs[0];
        if (refs.size() == 2) key += "|" + refs[1];
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }

        // Computed outside the lock; losers of a rare duplicate race just
        // discard an identical (deterministic) spectrogram. std::map node
        // references stay valid under concurrent insertions.
        MelSpectrogram m;
        if (refs.size() == 1) {
            m = audio::mel_spectrogram(loader_(refs[0], labels[0]));
        } else {
            const std::vector<float> a = audio::canonicalize(
                loader_(refs[0], labels[0]), audio::kSampleRate, 4.5);
            const std::vector<float> b = audio::canonicalize(
                loader_(refs[1], labels[1]), audio::kSampleRate, 4.5);
            m = audio::mel_spectrogram(audio::concat_pairwise(a, b));
        }
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.emplace(std::move(key), std::move(m)).first->second;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.size();
    }
    void clear() {
        std::lock_guard<std::mutex> lock(mu_);
        cache_.clear();
    }

  private:
    WaveLoader loader_;
    mutable std::mutex mu_;
    std::map<std::string, MelSpectrogram> cache_;
};

}  // namespace auscult::train
