#pragma once

// Zero-shot classification by report similarity: generate a free-text
// report for each recording (first reporting instruction, greedy), embed
// the report and every candidate label with the checkpoint's mean-pooled
// token embeddings, and predict the candidate with the highest cosine.
// Ties resolve to the lowest candidate index, so predictions are a pure
// function of (checkpoint, recordings, candidates).

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "../data/templates.hpp"
#include "../model/model.hpp"
#include "../nn/parallel.hpp"
#include "../train/batch.hpp"
#include "../train/features.hpp"
#include "../train/sft.hpp"
#include "metrics.hpp"

namespace auscult::eval {

using audio::SoundLabel;

struct ZeroShotResult {
    double accuracy = 0.0;
    std::vector<std::int32_t> predicted;
    std::vector<std::int32_t> truth;
    std::vector<std::string> reports;
};

inline ZeroShotResult zero_shot_classify(
    const model::Model& m, train::MelCache& cache,
    const data::Tokenizer& tok, const std::vector<SoundLabel>& recordings,
    const std::vector<std::string>& candidates,
    const std::function<std::int32_t(const SoundLabel&)>& truth_of,
    std::int64_t max_new_tokens = 48) {
    if (candidates.size() < 2)
        throw std::invalid_argument(
            "zero_shot_classify: need at least 2 candidate labels");
    if (recordings.empty())
        throw std::invalid_argument("zero_shot_classify: no recordings");
    if (!truth_of)
        throw std::invalid_argument(
            "zero_shot_classify: truth function must be callable");

    const std::string& instruction =
        data::TemplateBank::standard()
            .instructions.at(data::TaskType::reporting)
            .front();
    const std::vector<std::int32_t> q =
        train::instruction_ids(tok, instruction);

    std::vector<std::vector<float>> cand_embs;
    cand_embs.reserve(candidates.size());
    for (const std::string& c : candidates)
        cand_embs.push_back(mean_pooled_embedding(c, m, tok));

    const auto n = static_cast<std::int64_t>(recordings.size());
    for (const SoundLabel& l : recordings) cache.mel_for({l.id}, {l});

    ZeroShotResult res;
    res.predicted.resize(static_cast<std::size_t>(n));
    res.truth.resize(static_cast<std::size_t>(n));
    res.reports.resize(static_cast<std::size_t>(n));

    const std::int64_t n_chunks = std::min<std::int64_t>(n, train::kGradChunks);
    nn::run_chunks(n_chunks, [&](std::int64_t c) {
        const std::int64_t b = nn::chunk_begin(n, n_chunks, c);
        const std::int64_t e = nn::chunk_begin(n, n_chunks, c + 1);
        for (std::int64_t i = b; i < e; ++i) {
            const SoundLabel& l = recordings[static_cast<std::size_t>(i)];
            model::GenerateOptions gen;
            gen.greedy = true;
            gen.max_new = max_new_tokens;
            gen.eos_id = data::Tokenizer::kEos;
            const std::vector<std::int32_t> out =
                m.generate(cache.mel_for({l.id}, {l}), q, gen);
            const std::string report = tok.decode(out);
            const std::int64_t pick = argmax_cosine(
                mean_pooled_embedding(report, m, tok), cand_embs);
            res.reports[static_cast<std::size_t>(i)] = report;
            res.predicted[static_cast<std::size_t>(i)] =
                static_cast<std::int32_t>(pick);
            res.truth[static_cast<std::size_t>(i)] = truth_of(l);
        }
    });

    std::int64_t correct = 0;
    for (std::size_t i = 0; i < res.predicted.size(); ++i)
        if (res.predicted[i] == res.truth[i]) ++correct;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return res;
}

}  // namespace auscult::eval
