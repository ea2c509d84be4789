#pragma once

// Stage-2 preference optimization. Preference pairs are built on-policy:
// K candidate responses sampled from the SFT model at varied temperatures
// are ranked against the ground-truth response by a pluggable scorer, and
// the best/worst form (chosen, rejected). The DPO loss compares policy
// and frozen-reference sequence log-probabilities (summed over response
// tokens); the modality-conditional extension adds a term that prefers
// the chosen response under clean audio over a freshly degraded view of
// the same audio. Stage-2 forwards run without dropout, so a policy that
// equals the reference sits exactly at the ln 2 identity point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../audio/augment.hpp"
#include "../model/checkpoint.hpp"
#include "../model/model.hpp"
#include "../nn/parallel.hpp"
#include "batch.hpp"
#include "features.hpp"
#include "optim.hpp"
#include "sft.hpp"

namespace auscult::train {

struct DpoConfig {
    float beta = 0.1f;
    bool mdpo_enabled = true;
    float mdpo_weight = 1.0f;
    std::int64_t candidates = 5;  // K samples per prompt
    float temp_lo = 0.7f;
    float temp_hi = 1.3f;
    float pair_rate = 0.3f;  // fraction of train prompts sampled for pairs
    std::int64_t epochs = 2;
    std::int64_t batch_size = 8;
    std::int64_t max_new_tokens = 40;

    void validate() const {
        if (beta <= 0.0f) throw std::invalid_argument("dpo: beta must be > 0");
        if (candidates < 2)
            throw std::invalid_argument("dpo: need at least 2 candidates");
        if (!(temp_lo > 0.0f) || temp_hi < temp_lo)
            throw std::invalid_argument("dpo: bad temperature range");
        if (pair_rate <= 0.0f || pair_rate > 1.0f)
            throw std::invalid_argument("dpo: pair_rate must be in (0, 1]");
        if (mdpo_weight < 0.0f)
            throw std::invalid_argument("dpo: mdpo_weight must be >= 0");
        if (epochs < 1 || batch_size < 1 || max_new_tokens < 1)
            throw std::invalid_argument("dpo: bad epochs/batch/max_new");
    }
};

inline void to_json(nlohmann::json& j, const DpoConfig& c) {
    j = nlohmann::json{{"beta", c.beta},
                       {"mdpo_enabled", c.mdpo_enabled},
                       {"mdpo_weight", c.mdpo_weight},
                       {"candidates", c.candidates},
                       {"temp_lo", c.temp_lo},
                       {"temp_hi", c.temp_hi},
                       {"pair_rate", c.pair_rate},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"max_new_tokens", c.max_new_tokens}};
}

inline void from_json(const nlohmann::json& j, DpoConfig& c) {
    c.beta = j.value("beta", c.beta);
    c.mdpo_enabled = j.value("mdpo_enabled", c.mdpo_enabled);
    c.mdpo_weight = j.value("mdpo_weight", c.mdpo_weight);
    c.candidates = j.value("candidates", c.candidates);
    c.temp_lo = j.value("temp_lo", c.temp_lo);
    c.temp_hi = j.value("temp_hi", c.temp_hi);
    c.pair_rate = j.value("pair_rate", c.pair_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
}

struct PreferencePair {
    std::vector<std::string> audio_ref;
    std::vector<audio::SoundLabel> label;
    std::string instruction;
    std::string chosen;
    std::string rejected;
    double score_chosen = 0.0;
    double score_rejected = 0.0;
};

inline void to_json(nlohmann::json& j, const PreferencePair& p) {
    j = nlohmann::json{{"audio_ref", p.audio_ref},
                       {"label", p.label},
                       {"instruction", p.instruction},
                       {"chosen", p.chosen},
                       {"rejected", p.rejected},
                       {"score_chosen", p.score_chosen},
                       {"score_rejected", p.score_rejected}};
}

inline void from_json(const nlohmann::json& j, PreferencePair& p) {
    j.at("audio_ref").get_to(p.audio_ref);
    j.at("label").get_to(p.label);
    j.at("instruction").get_to(p.instruction);
    j.at("chosen").get_to(p.chosen);
    j.at("rejected").get_to(p.rejected);
    p.score_chosen = j.value("score_chosen", 0.0);
    p.score_rejected = j.value("score_rejected", 0.0);
}

// Scores a generated text against the reference; higher is better.
using Ranker =
    std::function<double(const std::string& reference, const std::string& gen)>;

// Samples K candidates per selected train prompt and keeps the
// best/worst-ranked distinct pair. Prompts whose candidates all agree, or
// whose top and bottom candidate texts coincide, yield no pair. Output
// order follows ascending prompt index and every random draw is keyed by
// the prompt's index, so the result is one deterministic function of
// (examples, weights, cfg, seed).
inline std::vector<PreferencePair> build_preference_pairs(
    const std::vector<TrainingExample>& train_examples, const model::Model& sft,
    MelCache& cache, const Tokenizer& tok, const DpoConfig& cfg,
    const Ranker& ranker, nn::RandomStream rng) {
    cfg.validate();
    if (!ranker)
        throw std::invalid_argument(
            "build_preference_pairs: ranker must be callable");
    const auto n = static_cast<std::int64_t>(train_examples.size());
    if (n == 0) return {};

    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    nn::RandomStream pick = rng.child(1);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
    const auto n_sel = static_cast<std::size_t>(std::min<std::int64_t>(
        n, std::llround(static_cast<double>(cfg.pair_rate) *
                        static_cast<double>(n))));
    std::vector<std::size_t> selected(idx.begin(),
                                      idx.begin() + static_cast<std::ptrdiff_t>(
                                                        std::max<std::size_t>(
                                                            n_sel, 0)));
    std::sort(selected.begin(), selected.end());

    std::vector<PreferencePair> slots(selected.size());
    std::vector<char> filled(selected.size(), 0);

    nn::run_chunks(static_cast<std::int64_t>(selected.size()),
                   [&](std::int64_t s) {
        const std::size_t prompt = selected[static_cast<std::size_t>(s)];
        const TrainingExample& ex = train_examples[prompt];
        const MelSpectrogram& mel = cache.mel(ex);
        const std::vector<std::int32_t> q = instruction_ids(tok,
                                                            ex.instruction);
        nn::RandomStream prompt_rng =
            rng.child(1000 + static_cast<std::uint64_t>(prompt));

        std::vector<std::string> texts;
        std::vector<double> scores;
        texts.reserve(static_cast<std::size_t>(cfg.candidates));
        for (std::int64_t c = 0; c < cfg.candidates; ++c) {
            nn::RandomStream cand_rng =
                prompt_rng.child(static_cast<std::uint64_t>(c));
            model::GenerateOptions opt;
            opt.greedy = false;
            opt.temperature = static_cast<float>(
                cand_rng.uniform(cfg.temp_lo, cfg.temp_hi));
            opt.max_new = cfg.max_new_tokens;
            texts.push_back(tok.decode(sft.generate(mel, q, opt, &cand_rng)));
            scores.push_back(ranker(ex.response, texts.back()));
        }

        bool all_same = true;
        for (std::size_t c = 1; c < texts.size(); ++c)
            if (texts[c] != texts[0]) all_same = false;
        if (all_same) return;

        std::size_t best = 0, worst = 0;
        for (std::size_t c = 1; c < scores.size(); ++c) {
            if (scores[c] > scores[best]) best = c;
            if (scores[c] <= scores[worst]) worst = c;
        }
        if (texts[best] == texts[worst]) return;

        PreferencePair& p = slots[static_cast<std::size_t>(s)];
        p.audio_ref = ex.audio_ref;
        p.label = ex.label;
        p.instruction = ex.instruction;
        p.chosen = texts[best];
        p.rejected = texts[worst];
        p.score_chosen = scores[best];
        p.score_rejected = scores[worst];
        filled[static_cast<std::size_t>(s)] = 1;
    });

    std::vector<PreferencePair> out;
    for (std::size_t s = 0; s < slots.size(); ++s)
        if (filled[s]) out.push_back(std::move(slots[s]));
    return out;
}

// Core DPO objective on precomputed sequence log-probs. Policy-side
// tensors are [B] and live on the tape; reference-side values are fixed.
// Returns sum_b -log sigmoid(beta * ((w_pol-w_ref) - (l_pol-l_ref))) * inv_norm,
// i.e. the batch mean when inv_norm = 1/B.
inline Tensor dpo_loss_from_logprobs(nn::Tape* tape, const Tensor& lp_w_pol,
                                     const std::vector<float>& lp_w_ref,
                                     const Tensor& lp_l_pol,
                                     const std::vector<float>& lp_l_ref,
                                     float beta, float inv_norm = 0.0f) {
    const std::int64_t B = lp_w_pol.numel();
    if (lp_l_pol.numel() != B ||
        static_cast<std::int64_t>(lp_w_ref.size()) != B ||
        static_cast<std::int64_t>(lp_l_ref.size()) != B)
        throw std::invalid_argument(
            "dpo_loss: log-prob vectors must share one length");
    if (inv_norm == 0.0f) inv_norm = 1.0f / static_cast<float>(B);
    Tensor ref_w = Tensor::from(lp_w_pol.shape(), lp_w_ref);
    Tensor ref_l = Tensor::from(lp_l_pol.shape(), lp_l_ref);
    Tensor dw = nn::add_scaled(tape, lp_w_pol, ref_w, -1.0f);
    Tensor dl = nn::add_scaled(tape, lp_l_pol, ref_l, -1.0f);
    Tensor margin = nn::add_scaled(tape, dw, dl, -1.0f);
    Tensor ls = nn::log_sigmoid(tape, nn::scale(tape, margin, beta));
    return nn::scale(tape, nn::sum_all(tape, ls), -inv_norm);
}

struct PairBatchStats {
    std::int64_t pairs = 0;
    std::int64_t pref_correct = 0;      // (w_pol-w_ref) > (l_pol-l_ref)
    std::int64_t modality_correct = 0;  // clean margin > degraded margin
    bool has_modality = false;
};

namespace detail {

// Policy (on tape) and reference (off tape) response log-probs for one
// side of the pair batch under a shared per-pair prefix list.
struct SideLogProbs {
    Tensor policy;            // [B], on tape
    std::vector<float> ref;   // [B]
};

inline SideLogProbs side_logprobs(nn::Tape* tape, const model::Model& policy,
                                  const model::Model& ref,
                                  const std::vector<Tensor>& pol_prefix,
                                  const std::vector<Tensor>& ref_prefix,
                                  const std::vector<SequenceIds>& seqs) {
    const model::ModelConfig& cfg = policy.cfg;
    FramedBatch f = frame_batch(seqs, cfg.k, cfg.max_seq);
    Tensor pol_pref = pol_prefix.size() == 1
                          ? pol_prefix[0]
                          : nn::concat(tape, pol_prefix, 0);
    Tensor logits = policy.lm_forward_batch(tape, pol_pref, f.ids, f.batch,
                                            f.token_len);
    SideLogProbs out;
    out.policy = nn::sequence_log_prob(tape, logits, f.targets, f.mask);

    Tensor ref_pref = ref_prefix.size() == 1
                          ? ref_prefix[0]
                          : nn::concat(nullptr, ref_prefix, 0);
    Tensor ref_logits = ref.lm_forward_batch(nullptr, ref_pref, f.ids,
                                             f.batch, f.token_len);
    Tensor ref_lp = nn::sequence_log_prob(nullptr, ref_logits, f.targets,
                                          f.mask);
    out.ref.assign(ref_lp.data(), ref_lp.data() + ref_lp.numel());
    return out;
}

inline std::vector<Tensor> prefix_list(nn::Tape* tape, const model::Model& m,
                                       const std::vector<const MelSpectrogram*>&
                                           mels) {
    std::vector<Tensor> out;
    out.reserve(mels.size());
    for (const MelSpectrogram* s : mels)
        out.push_back(nn::reshape(tape, m.prefix_tokens(tape, *s),
                                  {1, m.cfg.k, m.cfg.d}));
    return out;
}

}  // namespace detail

// Batched DPO loss over pairs[begin, end). Stage-2 forwards are
// deterministic (no dropout), so policy == reference gives exactly ln 2.
inline Tensor dpo_loss(nn::Tape* tape, const model::Model& policy,
                       const model::Model& ref,
                       const std::vector<PreferencePair>& pairs,
                       std::int64_t begin, std::int64_t end, MelCache& cache,
                       const Tokenizer& tok, float beta,
                       float inv_norm = 0.0f,
                       PairBatchStats* stats = nullptr) {
    if (begin < 0 || end > static_cast<std::int64_t>(pairs.size()) ||
        begin >= end)
        throw std::invalid_argument("dpo_loss: empty pair range");

    std::vector<const MelSpectrogram*> mels;
    std::vector<SequenceIds> chosen, rejected;
    for (std::int64_t i = begin; i < end; ++i) {
        const PreferencePair& p = pairs[static_cast<std::size_t>(i)];
        mels.push_back(&cache.mel_for(p.audio_ref, p.label));
        chosen.push_back(build_sequence(tok, p.instruction, p.chosen));
        rejected.push_back(build_sequence(tok, p.instruction, p.rejected));
    }
    std::vector<Tensor> pol_prefix = detail::prefix_list(tape, policy, mels);
    std::vector<Tensor> ref_prefix = detail::prefix_list(nullptr, ref, mels);

    detail::SideLogProbs w = detail::side_logprobs(tape, policy, ref,
                                                   pol_prefix, ref_prefix,
                                                   chosen);
    detail::SideLogProbs l = detail::side_logprobs(tape, policy, ref,
                                                   pol_prefix, ref_prefix,
                                                   rejected);
    if (stats != nullptr) {
        const float* wp = w.policy.data();
        const float* lp = l.policy.data();
        for (std::int64_t b = 0; b < end - begin; ++b) {
            ++stats->pairs;
            const auto ub = static_cast<std::size_t>(b);
            if (wp[b] - w.ref[ub] > lp[b] - l.ref[ub]) ++stats->pref_correct;
        }
    }
    return dpo_loss_from_logprobs(tape, w.policy, w.ref, l.policy, l.ref,
                                  beta, inv_norm);
}

// Mean DPO loss over every pair in one call.
inline Tensor dpo_loss(nn::Tape* tape, const model::Model& policy,
                       const model::Model& ref,
                       const std::vector<PreferencePair>& pairs,
                       MelCache& cache, const Tokenizer& tok, float beta,
                       PairBatchStats* stats = nullptr) {
    return dpo_loss(tape, policy, ref, pairs, 0,
                    static_cast<std::int64_t>(pairs.size()), cache, tok, beta,
                    0.0f, stats);
}

// DPO plus the modality-conditional term: for each pair the chosen
// response should gain more (policy vs reference) under clean audio than
// under a freshly degraded view drawn from `degrade_rng` per call.
// weight == 0 returns the plain DPO loss tensor unchanged.
inline Tensor mdpo_loss(nn::Tape* tape, const model::Model& policy,
                        const model::Model& ref,
                        const std::vector<PreferencePair>& pairs,
                        std::int64_t begin, std::int64_t end, MelCache& cache,
                        const Tokenizer& tok, float beta, float weight,
                        nn::RandomStream degrade_rng, float inv_norm = 0.0f,
                        PairBatchStats* stats = nullptr) {
    if (begin < 0 || end > static_cast<std::int64_t>(pairs.size()) ||
        begin >= end)
        throw std::invalid_argument("mdpo_loss: empty pair range");

    std::vector<const MelSpectrogram*> mels;
    std::vector<MelSpectrogram> degraded;
    std::vector<SequenceIds> chosen, rejected;
    degraded.reserve(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i) {
        const PreferencePair& p = pairs[static_cast<std::size_t>(i)];
        mels.push_back(&cache.mel_for(p.audio_ref, p.label));
        nn::RandomStream r = degrade_rng.child(static_cast<std::uint64_t>(i));
        degraded.push_back(audio::degrade_view(*mels.back(), r));
        chosen.push_back(build_sequence(tok, p.instruction, p.chosen));
        rejected.push_back(build_sequence(tok, p.instruction, p.rejected));
    }
    std::vector<const MelSpectrogram*> deg_ptrs;
    for (const MelSpectrogram& d : degraded) deg_ptrs.push_back(&d);

    std::vector<Tensor> pol_prefix = detail::prefix_list(tape, policy, mels);
    std::vector<Tensor> ref_prefix = detail::prefix_list(nullptr, ref, mels);

    detail::SideLogProbs w = detail::side_logprobs(tape, policy, ref,
                                                   pol_prefix, ref_prefix,
                                                   chosen);
    detail::SideLogProbs l = detail::side_logprobs(tape, policy, ref,
                                                   pol_prefix, ref_prefix,
                                                   rejected);
    const std::int64_t B = end - begin;
    if (inv_norm == 0.0f) inv_norm = 1.0f / static_cast<float>(B);
    Tensor pref_term = dpo_loss_from_logprobs(tape, w.policy, w.ref, l.policy,
                                              l.ref, beta, inv_norm);

    if (stats != nullptr) {
        const float* wp = w.policy.data();
        const float* lp = l.policy.data();
        for (std::int64_t b = 0; b < B; ++b) {
            ++stats->pairs;
            const auto ub = static_cast<std::size_t>(b);
            if (wp[b] - w.ref[ub] > lp[b] - l.ref[ub]) ++stats->pref_correct;
        }
    }
    if (weight == 0.0f) return pref_term;

    std::vector<Tensor> pol_deg = detail::prefix_list(tape, policy, deg_ptrs);
    std::vector<Tensor> ref_deg = detail::prefix_list(nullptr, ref, deg_ptrs);
    detail::SideLogProbs wd = detail::side_logprobs(tape, policy, ref,
                                                    pol_deg, ref_deg, chosen);
    if (stats != nullptr) {
        stats->has_modality = true;
        const float* wp = w.policy.data();
        const float* dp = wd.policy.data();
        for (std::int64_t b = 0; b < B; ++b) {
            const auto ub = static_cast<std::size_t>(b);
            if (wp[b] - w.ref[ub] > dp[b] - wd.ref[ub])
                ++stats->modality_correct;
        }
    }
    Tensor mod_term = dpo_loss_from_logprobs(tape, w.policy, w.ref, wd.policy,
                                             wd.ref, beta, inv_norm);
    return nn::add_scaled(tape, pref_term, mod_term, weight);
}

struct DpoResult {
    double final_loss = 0.0;
    double pref_acc = 0.0;
    double modality_acc = 0.0;
    std::int64_t steps = 0;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Stage-2 trainer. The reference model is never touched; the policy's
// trainable groups (encoder, projection, LoRA, and embeddings when
// enabled) all update. Logs per-step and per-epoch preference / modality
// accuracy alongside the loss.
inline DpoResult train_dpo(model::Model& policy, const model::Model& ref,
                           const std::vector<PreferencePair>& pairs,
                           MelCache& cache, const Tokenizer& tok,
                           const DpoConfig& dcfg, const OptimizerConfig& ocfg,
                           const std::string& out_dir, nn::RandomStream rng) {
    dcfg.validate();
    ocfg.validate();
    if (pairs.empty())
        throw std::invalid_argument("train_dpo: no preference pairs");

    std::filesystem::create_directories(out_dir);
    DpoResult res;
    res.checkpoint_path =
        (std::filesystem::path(out_dir) / "dpo.ckpt").string();
    res.metrics_path =
        (std::filesystem::path(out_dir) / "metrics.jsonl").string();
    MetricsWriter metrics(res.metrics_path);

    AdamW opt(policy.trainable_params(), ocfg);
    GradAccumulator acc(policy);
    const auto n_pairs = static_cast<std::int64_t>(pairs.size());
    std::vector<std::size_t> order(static_cast<std::size_t>(n_pairs));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double last_grad_norm = 0.0;
    std::int64_t step = 0;
    for (std::int64_t epoch = 1; epoch <= dcfg.epochs; ++epoch) {
        nn::RandomStream epoch_rng =
            rng.child(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(
                epoch_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        std::int64_t epoch_steps = 0;
        PairBatchStats epoch_stats;
        for (std::int64_t b0 = 0; b0 < n_pairs; b0 += dcfg.batch_size) {
            const std::int64_t b1 = std::min(n_pairs, b0 + dcfg.batch_size);
            const std::int64_t bsz = b1 - b0;
            ++step;
            std::vector<PreferencePair> batch;
            batch.reserve(static_cast<std::size_t>(bsz));
            for (std::int64_t i = b0; i < b1; ++i)
                batch.push_back(pairs[order[static_cast<std::size_t>(i)]]);

            std::vector<PairBatchStats> chunk_stats(
                static_cast<std::size_t>(kGradChunks));
            double loss;
            try {
                loss = acc.accumulate(
                    bsz, [&](model::Model& w, nn::Tape& tape, std::int64_t cb,
                             std::int64_t ce, std::int64_t chunk) {
                        nn::RandomStream deg_rng =
                            rng.child(0xD36A0000u +
                                      static_cast<std::uint64_t>(step))
                                .child(static_cast<std::uint64_t>(chunk));
                        PairBatchStats* st =
                            &chunk_stats[static_cast<std::size_t>(chunk)];
                        const float inv =
                            1.0f / static_cast<float>(bsz);
                        Tensor l =
                            dcfg.mdpo_enabled
                                ? mdpo_loss(&tape, w, ref, batch, cb, ce,
                                            cache, tok, dcfg.beta,
                                            dcfg.mdpo_weight, deg_rng, inv,
                                            st)
                                : dpo_loss(&tape, w, ref, batch, cb, ce,
                                           cache, tok, dcfg.beta, inv, st);
                        tape.backward(l);
                        return static_cast<double>(l.item());
                    });
                if (!std::isfinite(loss))
                    throw nn::numeric_fault("dpo loss is not finite");
                last_grad_norm = opt.step();
                if (!std::isfinite(last_grad_norm))
                    throw nn::numeric_fault("gradient norm is not finite");
            } catch (const nn::numeric_fault& f) {
                throw train_abort_error(
                    "dpo training aborted at step " + std::to_string(step) +
                    " (epoch " + std::to_string(epoch) + "): " + f.what() +
                    "; lr=" + std::to_string(lr_at(ocfg, step)) +
                    ", grad_norm=" + std::to_string(last_grad_norm));
            }
            PairBatchStats step_stats;
            for (const PairBatchStats& st : chunk_stats) {
                step_stats.pairs += st.pairs;
                step_stats.pref_correct += st.pref_correct;
                step_stats.modality_correct += st.modality_correct;
                step_stats.has_modality |= st.has_modality;
            }
            epoch_stats.pairs += step_stats.pairs;
            epoch_stats.pref_correct += step_stats.pref_correct;
            epoch_stats.modality_correct += step_stats.modality_correct;
            epoch_stats.has_modality |= step_stats.has_modality;
            epoch_loss += loss;
            ++epoch_steps;

            nlohmann::json line{{"step", step},
                                {"split", "train"},
                                {"loss", loss},
                                {"lr", lr_at(ocfg, step)},
                                {"grad_norm", last_grad_norm},
                                {"epoch", epoch},
                                {"pref_acc",
                                 static_cast<double>(step_stats.pref_correct) /
                                     static_cast<double>(step_stats.pairs)}};
            if (step_stats.has_modality)
                line["modality_acc"] =
                    static_cast<double>(step_stats.modality_correct) /
                    static_cast<double>(step_stats.pairs);
            metrics.line(line);
        }

        res.final_loss = epoch_loss / static_cast<double>(epoch_steps);
        res.pref_acc = static_cast<double>(epoch_stats.pref_correct) /
                       static_cast<double>(epoch_stats.pairs);
        nlohmann::json line{{"step", step},
                            {"split", "epoch"},
                            {"loss", res.final_loss},
                            {"lr", lr_at(ocfg, step)},
                            {"epoch", epoch},
                            {"pref_acc", res.pref_acc}};
        if (epoch_stats.has_modality) {
            res.modality_acc =
                static_cast<double>(epoch_stats.modality_correct) /
                static_cast<double>(epoch_stats.pairs);
            line["modality_acc"] = res.modality_acc;
        }
        metrics.line(line);
    }
    res.steps = step;
    model::save_checkpoint(policy.params(), res.checkpoint_path);
    return res;
}

}  // namespace auscult::train
