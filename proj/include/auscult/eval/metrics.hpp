#pragma once

// Text-overlap metrics. Both metrics share one normalization (lowercase,
// punctuation stripped, whitespace collapsed — the tokenizer's own word
// rule) so scores never disagree about what a "token" is. The embedding
// metric implements greedy token matching over a pluggable embedder; the
// default embedder is the checkpoint's own token embedding table, so
// absolute values are model-relative and only comparisons are meaningful.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "../data/lexicon.hpp"
#include "../data/tokenizer.hpp"
#include "../model/model.hpp"

namespace auscult::eval {

using data::Tokenizer;

// Maps a normalized token sequence to one vector per token.
using Embedder = std::function<std::vector<std::vector<float>>(
    const std::vector<std::string>&)>;

// Unigram-overlap F1 with clipped (multiset) intersection counts. An
// empty side scores 0 by convention.
inline double rouge1(const std::string& reference,
                     const std::string& generated) {
    const std::vector<std::string> r = data::normalize_words(reference);
    const std::vector<std::string> g = data::normalize_words(generated);
    if (r.empty() || g.empty()) return 0.0;
    std::map<std::string, int> rc;
    for (const std::string& w : r) ++rc[w];
    std::map<std::string, int> gc;
    for (const std::string& w : g) ++gc[w];
    int overlap = 0;
    for (const auto& [w, c] : gc) {
        auto it = rc.find(w);
        if (it != rc.end()) overlap += std::min(c, it->second);
    }
    const double p = overlap / static_cast<double>(g.size());
    const double rr = overlap / static_cast<double>(r.size());
    if (p + rr == 0.0) return 0.0;
    return 2.0 * p * rr / (p + rr);
}

namespace detail {

inline double cosine(const std::vector<float>& a,
                     const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    for (const float v : a) na += static_cast<double>(v) * v;
    for (const float v : b) nb += static_cast<double>(v) * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Drops zero-norm vectors (and their tokens); warns once per call.
inline void drop_zero_norm(std::vector<std::vector<float>>& vecs,
                           std::vector<std::string>& toks,
                           const char* side) {
    std::size_t kept = 0;
    bool warned = false;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        double n2 = 0.0;
        for (const float v : vecs[i]) n2 += static_cast<double>(v) * v;
        if (n2 == 0.0) {
            if (!warned) {
                std::cerr << "embedding_f1: zero-norm embedding for " << side
                          << " token '" << toks[i] << "' excluded\n";
                warned = true;
            }
            continue;
        }
        vecs[kept] = vecs[i];
        toks[kept] = toks[i];
        ++kept;
    }
    vecs.resize(kept);
    toks.resize(kept);
}

}  // namespace detail

// Greedy token-matching F1: precision is the mean over generated tokens
// of the best cosine against any reference token; recall is symmetric;
// F1 is their harmonic mean. Similarities are floored at 0 so the score
// stays in [0,1] for arbitrary embeddings. An empty side (including
// "empty after zero-norm exclusion") scores 0.
inline double embedding_f1(const std::string& reference,
                           const std::string& generated,
                           const Embedder& embed) {
    if (!embed)
        throw std::invalid_argument("embedding_f1: embedder must be callable");
    std::vector<std::string> rt = data::normalize_words(reference);
    std::vector<std::string> gt = data::normalize_words(generated);
    if (rt.empty() || gt.empty()) return 0.0;
    std::vector<std::vector<float>> rv = embed(rt);
    std::vector<std::vector<float>> gv = embed(gt);
    if (rv.size() != rt.size() || gv.size() != gt.size())
        throw std::invalid_argument(
            "embedding_f1: embedder returned a vector count different from "
            "its token count");
    detail::drop_zero_norm(rv, rt, "reference");
    detail::drop_zero_norm(gv, gt, "generated");
    if (rv.empty() || gv.empty()) return 0.0;

    double p = 0.0;
    for (const auto& g : gv) {
        double best = 0.0;
        for (const auto& r : rv)
            best = std::max(best, std::max(0.0, detail::cosine(g, r)));
        p += best;
    }
    p /= static_cast<double>(gv.size());
    double r = 0.0;
    for (const auto& rvec : rv) {
        double best = 0.0;
        for (const auto& g : gv)
            best = std::max(best, std::max(0.0, detail::cosine(rvec, g)));
        r += best;
    }
    r /= static_cast<double>(rv.size());
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

// Embedder backed by a checkpoint's token embedding table. Words outside
// the vocabulary embed to the zero vector, which embedding_f1 then
// excludes, so scoring never throws on free-form text.
inline Embedder model_token_embedder(const model::Model& m,
                                     const Tokenizer& tok) {
    const nn::Tensor table = m.p("lm.tok_emb");
    std::unordered_map<std::string, std::int32_t> ids;
    const std::vector<std::string>& words = tok.vocab_words();
    for (std::size_t i = 0; i < words.size(); ++i)
        ids[words[i]] =
            static_cast<std::int32_t>(i) + Tokenizer::kNumSpecials;
    return [table, ids = std::move(ids)](
               const std::vector<std::string>& toks) {
        const std::int64_t d = table.dim(1);
        std::vector<std::vector<float>> out;
        out.reserve(toks.size());
        for (const std::string& t : toks) {
            auto it = ids.find(t);
            if (it == ids.end()) {
                out.emplace_back(static_cast<std::size_t>(d), 0.0f);
                continue;
            }
            const float* row = table.data() + it->second * d;
            out.emplace_back(row, row + d);
        }
        return out;
    };
}

// Mean of the embedding-table rows of a text's in-vocabulary words; the
// zero vector when none survive. Backs zero-shot label matching.
inline std::vector<float> mean_pooled_embedding(const std::string& text,
                                                const model::Model& m,
                                                const Tokenizer& tok) {
    const nn::Tensor table = m.p("lm.tok_emb");
    const std::int64_t d = table.dim(1);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    std::int64_t count = 0;
    const std::vector<std::string>& words = tok.vocab_words();
    std::unordered_map<std::string, std::int32_t> ids;
    for (std::size_t i = 0; i < words.size(); ++i)
        ids[words[i]] =
            static_cast<std::int32_t>(i) + Tokenizer::kNumSpecials;
    for (const std::string& w : data::normalize_words(text)) {
        auto it = ids.find(w);
        if (it == ids.end()) continue;
        const float* row = table.data() + it->second * d;
        for (std::int64_t j = 0; j < d; ++j)
            acc[static_cast<std::size_t>(j)] += row[j];
        ++count;
    }
    std::vector<float> out(static_cast<std::size_t>(d), 0.0f);
    if (count == 0) return out;
    for (std::int64_t j = 0; j < d; ++j)
        out[static_cast<std::size_t>(j)] = static_cast<float>(
            acc[static_cast<std::size_t>(j)] / static_cast<double>(count));
    return out;
}

// Argmax of cosine similarity against candidate vectors; ties keep the
// lowest index so classification is deterministic.
inline std::int64_t argmax_cosine(
    const std::vector<float>& v,
    const std::vector<std::vector<float>>& candidates) {
    if (candidates.empty())
        throw std::invalid_argument("argmax_cosine: no candidates");
    std::int64_t best = 0;
    double best_cos = detail::cosine(v, candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double c = detail::cosine(v, candidates[i]);
        if (c > best_cos) {
            best_cos = c;
            best = static_cast<std::int64_t>(i);
        }
    }
    return best;
}

}  // namespace auscult::eval
