#pragma once

// Attention heatmap export for one example: the full (k+n+m)x(k+n+m)
// probability matrix of a chosen layer/head as CSV, a P5 grayscale
// rendering (normalized by the matrix maximum), and a JSON sidecar
// recording where the audio prefix, instruction, and response regions
// begin and end so plots can draw the boundary lines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../audio/mel.hpp"
#include "../data/tokenizer.hpp"
#include "../model/model.hpp"
#include "../train/batch.hpp"

namespace auscult::eval {

struct AttentionExport {
    std::int64_t rows = 0;
    std::int64_t k = 0;  // audio prefix slots
    std::int64_t n = 0;  // instruction tokens (with BOS/SEP)
    std::int64_t m = 0;  // response tokens (with EOS)
    std::string csv_path;
    std::string pgm_path;
    std::string json_path;
};

// Mean, over response rows, of the attention mass landing on the audio
// prefix columns. Grounded checkpoints score measurably higher here than
// untrained ones.
inline double response_prefix_mass(const nn::Tensor& attn, std::int64_t k,
                                   std::int64_t n, std::int64_t m) {
    const std::int64_t L = k + n + m;
    if (attn.rank() != 2 || attn.dim(0) != L || attn.dim(1) != L)
        throw std::invalid_argument(
            "response_prefix_mass: matrix does not match k+n+m");
    if (m <= 0)
        throw std::invalid_argument("response_prefix_mass: no response rows");
    double total = 0.0;
    for (std::int64_t i = k + n; i < L; ++i)
        for (std::int64_t j = 0; j < k; ++j)
            total += static_cast<double>(attn.data()[i * L + j]);
    return total / static_cast<double>(m);
}

inline AttentionExport export_attention(const model::Model& model,
                                        const audio::MelSpectrogram& mel,
                                        const data::Tokenizer& tok,
                                        const std::string& instruction,
                                        const std::string& response,
                                        std::int64_t layer, std::int64_t head,
                                        const std::string& path_base) {
    model::InputSequence seq;
    seq.z_audio = model.prefix_tokens(nullptr, mel);
    seq.instruction_ids = train::instruction_ids(tok, instruction);
    seq.response_ids = tok.encode(response);
    seq.response_ids.push_back(data::Tokenizer::kEos);

    AttentionExport out;
    out.k = model.cfg.k;
    out.n = static_cast<std::int64_t>(seq.instruction_ids.size());
    out.m = static_cast<std::int64_t>(seq.response_ids.size());
    out.rows = out.k + out.n + out.m;
    out.csv_path = path_base + ".csv";
    out.pgm_path = path_base + ".pgm";
    out.json_path = path_base + ".json";

    const nn::Tensor attn = model.attention_weights(seq, layer, head);
    const std::int64_t L = out.rows;
    if (attn.dim(0) != L || attn.dim(1) != L)
        throw std::logic_error("export_attention: unexpected matrix shape");

    {
        std::ofstream csv(out.csv_path, std::ios::binary);
        if (!csv)
            throw std::runtime_error("export_attention: cannot write " +
                                     out.csv_path);
        csv << std::setprecision(9);
        for (std::int64_t i = 0; i < L; ++i) {
            for (std::int64_t j = 0; j < L; ++j) {
                if (j > 0) csv << ",";
                csv << attn.data()[i * L + j];
            }
            csv << "\n";
        }
        if (!csv)
            throw std::runtime_error("export_attention: write failed: " +
                                     out.csv_path);
    }

    {
        float peak = 0.0f;
        for (std::int64_t i = 0; i < L * L; ++i)
            peak = std::max(peak, attn.data()[i]);
        if (peak <= 0.0f) peak = 1.0f;
        std::ofstream pgm(out.pgm_path, std::ios::binary);
        if (!pgm)
            throw std::runtime_error("export_attention: cannot write " +
                                     out.pgm_path);
        pgm << "P5\n" << L << " " << L << "\n255\n";
        std::vector<unsigned char> pixels(static_cast<std::size_t>(L * L));
        for (std::int64_t i = 0; i < L * L; ++i) {
            const double v = attn.data()[i] / peak;
            pixels[static_cast<std::size_t>(i)] = static_cast<unsigned char>(
                std::lround(255.0 * std::min(1.0, std::max(0.0, v))));
        }
        pgm.write(reinterpret_cast<const char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size()));
        if (!pgm)
            throw std::runtime_error("export_attention: write failed: " +
                                     out.pgm_path);
    }

    {
        const nlohmann::json side{{"rows", out.rows},
                                  {"k", out.k},
                                  {"n", out.n},
                                  {"m", out.m},
                                  {"layer", layer},
                                  {"head", head},
                                  {"audio_end", out.k},
                                  {"instruction_end", out.k + out.n},
                                  {"response_end", out.rows},
                                  {"csv", out.csv_path},
                                  {"pgm", out.pgm_path}};
        std::ofstream jf(out.json_path, std::ios::binary);
        if (!jf)
            throw std::runtime_error("export_attention: cannot write " +
                                     out.json_path);
        jf << side.dump(2) << "\n";
        if (!jf)
            throw std::runtime_error("export_attention: write failed: " +
                                     out.json_path);
    }
    return out;
}

}  // namespace auscult::eval
