#pragma once

// Token-sequence framing and batch assembly. A training sequence is
//   [audio prefix (k slots)] [BOS] instruction words [SEP] response words [EOS]
// and scoring covers exactly the response positions (the words plus the
// closing EOS). Batches pad to the longest member with PAD; because all
// padding is trailing and attention is causal, padded tails can never
// influence real positions, so zero weight at those rows is the only
// masking needed.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "../data/examples.hpp"
#include "../data/tokenizer.hpp"
#include "../nn/loss.hpp"

namespace auscult::train {

using data::Tokenizer;
using data::TrainingExample;
using nn::Tape;
using nn::Tensor;

struct SequenceIds {
    std::vector<std::int32_t> instruction;  // [BOS] words... [SEP]
    std::vector<std::int32_t> response;     // words... [EOS]
};

inline SequenceIds build_sequence(const Tokenizer& tok,
                                  const std::string& instruction,
                                  const std::string& response) {
    SequenceIds out;
    out.instruction.push_back(Tokenizer::kBos);
    for (std::int32_t id : tok.encode(instruction))
        out.instruction.push_back(id);
    out.instruction.push_back(Tokenizer::kSep);
    out.response = tok.encode(response);
    out.response.push_back(Tokenizer::kEos);
    return out;
}

inline std::vector<std::int32_t> instruction_ids(const Tokenizer& tok,
                                                 const std::string& text) {
    std::vector<std::int32_t> out;
    out.push_back(Tokenizer::kBos);
    for (std::int32_t id : tok.encode(text)) out.push_back(id);
    out.push_back(Tokenizer::kSep);
    return out;
}

// Padded framing for B sequences against a k-slot audio prefix. Logit
// rows are indexed [b * (k + token_len) + p]; the row at position p
// predicts the token at position p + 1, so sequence b's response tokens
// (positions k+n_b .. k+n_b+m_b-1) are scored by rows
// k+n_b-1 .. k+n_b+m_b-2. `mask` is 1 exactly on those rows and
// `targets` holds the response token each row scores.
struct FramedBatch {
    std::int64_t batch = 0;
    std::int64_t token_len = 0;         // padded ids per sequence (Lt)
    std::vector<std::int32_t> ids;      // batch * token_len
    std::vector<std::int32_t> targets;  // batch * (k + token_len)
    std::vector<float> mask;            // batch * (k + token_len)
    std::vector<std::int64_t> resp_len;
};

inline FramedBatch frame_batch(const std::vector<SequenceIds>& seqs,
                               std::int64_t k, std::int64_t max_seq) {
    FramedBatch out;
    out.batch = static_cast<std::int64_t>(seqs.size());
    for (const SequenceIds& s : seqs) {
        const auto total = static_cast<std::int64_t>(s.instruction.size() +
                                                     s.response.size());
        if (k + total > max_seq)
            throw std::invalid_argument(
                "frame_batch: sequence needs " + std::to_string(k + total) +
                " positions, max_seq is " + std::to_string(max_seq));
        out.token_len = std::max(out.token_len, total);
    }
    if (out.batch == 0) return out;

    const std::int64_t Lt = out.token_len;
    const std::int64_t rows = k + Lt;
    out.ids.assign(static_cast<std::size_t>(out.batch * Lt), Tokenizer::kPad);
    out.targets.assign(static_cast<std::size_t>(out.batch * rows),
                       Tokenizer::kPad);
    out.mask.assign(static_cast<std::size_t>(out.batch * rows), 0.0f);
    out.resp_len.reserve(static_cast<std::size_t>(out.batch));

    for (std::int64_t b = 0; b < out.batch; ++b) {
        const SequenceIds& s = seqs[static_cast<std::size_t>(b)];
        const auto n = static_cast<std::int64_t>(s.instruction.size());
        const auto m = static_cast<std::int64_t>(s.response.size());
        out.resp_len.push_back(m);
        std::int32_t* row = out.ids.data() + b * Lt;
        for (std::int64_t i = 0; i < n; ++i)
            row[i] = s.instruction[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < m; ++j)
            row[n + j] = s.response[static_cast<std::size_t>(j)];
        for (std::int64_t j = 0; j < m; ++j) {
            const std::int64_t p = k + n + j - 1;  // row scoring token j
            out.targets[static_cast<std::size_t>(b * rows + p)] =
                s.response[static_cast<std::size_t>(j)];
            out.mask[static_cast<std::size_t>(b * rows + p)] = 1.0f;
        }
    }
    return out;
}

// One assembled SFT batch: a FramedBatch whose mask has been turned into
// loss weights of 1 / (norm_count * m_b) at the scoring rows, making the
// weighted cross-entropy a mean over examples of per-example mean NLL.
struct SftBatch {
    std::int64_t batch = 0;
    std::int64_t token_len = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> targets;
    std::vector<float> weights;
    std::vector<std::size_t> source;   // index into the examples vector
    std::int64_t skipped_empty = 0;    // dropped: response had no words
};

inline SftBatch build_sft_batch(const std::vector<TrainingExample>& examples,
                                const std::vector<std::size_t>& which,
                                const Tokenizer& tok, std::int64_t k,
                                std::int64_t max_seq,
                                std::int64_t norm_count) {
    if (norm_count < 1)
        throw std::invalid_argument("build_sft_batch: norm_count must be >= 1");
    SftBatch out;
    std::vector<SequenceIds> seqs;
    for (std::size_t idx : which) {
        const TrainingExample& ex = examples.at(idx);
        SequenceIds s = build_sequence(tok, ex.instruction, ex.response);
        // the response always carries EOS; "empty" means no real words
        if (s.response.size() <= 1) {
            ++out.skipped_empty;
            continue;
        }
        out.source.push_back(idx);
        seqs.push_back(std::move(s));
    }
    FramedBatch f = frame_batch(seqs, k, max_seq);
    out.batch = f.batch;
    out.token_len = f.token_len;
    out.ids = std::move(f.ids);
    out.targets = std::move(f.targets);
    out.weights = std::move(f.mask);
    const std::int64_t rows = k + out.token_len;
    for (std::int64_t b = 0; b < out.batch; ++b) {
        const float w =
            1.0f / (static_cast<float>(norm_count) *
                    static_cast<float>(f.resp_len[static_cast<std::size_t>(b)]));
        float* wrow = out.weights.data() + b * rows;
        for (std::int64_t p = 0; p < rows; ++p)
            if (wrow[p] != 0.0f) wrow[p] = w;
    }
    return out;
}

// Weighted masked cross-entropy over the batch's logits [B, k+Lt, V].
inline Tensor sft_loss_from_logits(Tape* tape, const Tensor& logits,
                                   const SftBatch& batch) {
    if (logits.rank() != 3 || logits.dim(0) != batch.batch)
        throw std::invalid_argument(
            "sft_loss: logits must be [B, k+Lt, V] for this batch");
    return nn::cross_entropy_weighted(tape, logits, batch.targets,
                                      batch.weights);
}

}  // namespace auscult::train
