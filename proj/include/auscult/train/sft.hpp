#pragma once

// Stage-1 trainer: masked supervised fine-tuning with AdamW, linear
// warmup, gradient clipping, per-epoch validation, and best-checkpoint
// retention. Gradients are accumulated over a fixed number of contiguous
// batch chunks; each chunk runs forward/backward on its own tape against
// a private copy of the weights, and the per-chunk gradients and losses
// are combined in chunk order, so the numbers are identical whether the
// chunks ran on one thread or many.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../model/checkpoint.hpp"
#include "../model/model.hpp"
#include "../nn/parallel.hpp"
#include "batch.hpp"
#include "features.hpp"
#include "optim.hpp"

namespace auscult::train {

using data::Manifest;
using data::Split;
using model::Model;
using nn::RandomStream;

// Fixed gradient-accumulation fan-out. Chunk structure never depends on
// the machine, only on this constant, so results are portable across
// core counts.
inline constexpr std::int64_t kGradChunks = 4;

// Raised when training hits a non-finite loss or gradient; the message
// carries the step, learning rate, and last finite gradient norm.
struct train_abort_error : std::runtime_error {
    explicit train_abort_error(const std::string& msg)
        : std::runtime_error(msg) {}
};

// Line-per-record JSONL metrics sink.
class MetricsWriter {
  public:
    explicit MetricsWriter(const std::string& path) : out_(path) {
        if (!out_)
            throw std::runtime_error("metrics: cannot open " + path);
    }
    void line(const nlohmann::json& j) {
        out_ << j.dump() << "\n";
        out_.flush();
    }

  private:
    std::ofstream out_;
};

// Runs fn over fixed contiguous chunks of [0, n_items), each chunk with a
// private weight copy and tape, then merges chunk gradients into the
// master parameters and returns the summed loss, both in chunk order.
class GradAccumulator {
  public:
    explicit GradAccumulator(Model& master,
                             std::int64_t n_chunks = kGradChunks)
        : master_(master), n_chunks_(n_chunks) {
        if (n_chunks_ < 1)
            throw std::invalid_argument("GradAccumulator: need >= 1 chunk");
    }

    // fn(weights, tape, begin, end, chunk_idx) must compute the partial
    // loss over items [begin, end), run tape.backward on it, and return
    // its value. Gradients land in `weights`' trainable tensors.
    double accumulate(
        std::int64_t n_items,
        const std::function<double(Model&, nn::Tape&, std::int64_t,
                                   std::int64_t, std::int64_t)>& fn) {
        if (n_items <= 0)
            throw std::invalid_argument("GradAccumulator: no items");
        for (auto& [name, t] : master_.params())
            if (t.requires_grad()) t.zero_grad();

        if (n_chunks_ == 1) {
            nn::Tape tape;
            return fn(master_, tape, 0, n_items, 0);
        }

        if (copies_.empty())
            for (std::int64_t c = 0; c < n_chunks_; ++c)
                copies_.push_back(master_.clone());
        refresh_copies();

        std::vector<double> partial(static_cast<std::size_t>(n_chunks_), 0.0);
        nn::run_chunks(n_chunks_, [&](std::int64_t c) {
            const std::int64_t b = nn::chunk_begin(n_items, n_chunks_, c);
            const std::int64_t e = nn::chunk_begin(n_items, n_chunks_, c + 1);
            if (b >= e) return;
            nn::Tape tape;
            partial[static_cast<std::size_t>(c)] =
                fn(copies_[static_cast<std::size_t>(c)], tape, b, e, c);
        });

        // Merge in chunk order so summation never depends on scheduling.
        auto& mp = master_.params();
        for (std::size_t pi = 0; pi < mp.size(); ++pi) {
            nn::Tensor& mt = mp[pi].second;
            if (!mt.requires_grad()) continue;
            float* dst = nullptr;
            for (std::int64_t c = 0; c < n_chunks_; ++c) {
                const nn::Tensor& ct =
                    copies_[static_cast<std::size_t>(c)].params()[pi].second;
                if (!ct.has_grad()) continue;
                if (dst == nullptr) dst = mt.grad();
                const float* src = ct.grad_vec().data();
                const std::int64_t n = mt.numel();
                for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
            }
        }
        double loss = 0.0;
        for (double p : partial) loss += p;
        return loss;
    }

  private:
    void refresh_copies() {
        const auto& mp = master_.params();
        for (auto& copy : copies_) {
            auto& cp = copy.params();
            for (std::size_t pi = 0; pi < cp.size(); ++pi) {
                cp[pi].second.vec() = mp[pi].second.vec();
                cp[pi].second.zero_grad();
            }
        }
    }

    Model& master_;
    std::int64_t n_chunks_;
    std::vector<Model> copies_;
};

// Forward pass for a span of examples: encodes each example's audio into
// prefix tokens, runs the batched LM, and returns the weighted masked
// cross-entropy with per-example weight 1 / (norm_count * m_i).
inline Tensor sft_loss(nn::Tape* tape, const Model& m,
                       const std::vector<TrainingExample>& examples,
                       const std::vector<std::size_t>& which, MelCache& cache,
                       const Tokenizer& tok, std::int64_t norm_count,
                       bool training = false, RandomStream* rng = nullptr,
                       SftBatch* batch_out = nullptr) {
    SftBatch sb = build_sft_batch(examples, which, tok, m.cfg.k,
                                  m.cfg.max_seq, norm_count);
    if (sb.batch == 0)
        throw std::invalid_argument(
            "sft_loss: every example in the batch had an empty response");
    std::vector<Tensor> prefixes;
    prefixes.reserve(sb.source.size());
    for (std::size_t idx : sb.source) {
        Tensor pk = m.prefix_tokens(tape, cache.mel(examples[idx]));
        prefixes.push_back(nn::reshape(tape, pk, {1, m.cfg.k, m.cfg.d}));
    }
    Tensor prefix = prefixes.size() == 1 ? prefixes[0]
                                         : nn::concat(tape, prefixes, 0);
    Tensor logits = m.lm_forward_batch(tape, prefix, sb.ids, sb.batch,
                                       sb.token_len, training, rng);
    Tensor loss = sft_loss_from_logits(tape, logits, sb);
    if (batch_out != nullptr) *batch_out = std::move(sb);
    return loss;
}

// Mean over a whole split of per-example mean NLL, computed in fixed
// example order with read-only weights (parallel-safe).
inline double eval_split_loss(const Model& m,
                              const std::vector<TrainingExample>& examples,
                              MelCache& cache, const Tokenizer& tok,
                              std::int64_t batch_size) {
    const auto n = static_cast<std::int64_t>(examples.size());
    if (n == 0) throw std::invalid_argument("eval_split_loss: empty split");
    const std::int64_t n_batches = (n + batch_size - 1) / batch_size;
    std::vector<double> partial(static_cast<std::size_t>(n_batches), 0.0);
    nn::run_chunks(n_batches, [&](std::int64_t bi) {
        std::vector<std::size_t> which;
        const std::int64_t b0 = bi * batch_size;
        const std::int64_t b1 = std::min(n, b0 + batch_size);
        for (std::int64_t i = b0; i < b1; ++i)
            which.push_back(static_cast<std::size_t>(i));
        Tensor l = sft_loss(nullptr, m, examples, which, cache, tok, n);
        partial[static_cast<std::size_t>(bi)] = static_cast<double>(l.item());
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

struct TrainResult {
    double best_val_loss = 0.0;
    std::int64_t best_epoch = 0;
    std::int64_t steps = 0;
    double final_train_loss = 0.0;
    std::int64_t skipped_empty = 0;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Full SFT stage over the manifest's train split, validating per epoch.
// The model is left holding the best-validation-loss weights, which are
// also saved to out_dir/best.ckpt; metrics stream to out_dir/metrics.jsonl.
inline TrainResult train_sft(Model& m, const Manifest& manifest,
                             MelCache& cache, const OptimizerConfig& ocfg,
                             const std::string& out_dir, RandomStream rng) {
    ocfg.validate();
    const Tokenizer tok = Tokenizer::from_vocab(manifest.vocab);
    if (tok.vocab_size() != m.cfg.vocab_size)
        throw std::invalid_argument(
            "train_sft: manifest vocab size " +
            std::to_string(tok.vocab_size()) + " != model vocab size " +
            std::to_string(m.cfg.vocab_size));

    std::vector<TrainingExample> train_ex;
    TrainResult res;
    for (const TrainingExample& e : manifest.split_examples(Split::train)) {
        if (tok.encode(e.response).empty()) {
            ++res.skipped_empty;
            continue;
        }
        train_ex.push_back(e);
    }
    const std::vector<TrainingExample> val_ex =
        manifest.split_examples(Split::val);
    if (train_ex.empty())
        throw std::invalid_argument("train_sft: train split is empty");
    if (val_ex.empty())
        throw std::invalid_argument("train_sft: val split is empty");

    std::filesystem::create_directories(out_dir);
    res.checkpoint_path =
        (std::filesystem::path(out_dir) / "best.ckpt").string();
    res.metrics_path =
        (std::filesystem::path(out_dir) / "metrics.jsonl").string();
    MetricsWriter metrics(res.metrics_path);

    AdamW opt(m.trainable_params(), ocfg);
    GradAccumulator acc(m);
    const auto n_train = static_cast<std::int64_t>(train_ex.size());

    std::vector<std::size_t> order(static_cast<std::size_t>(n_train));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    res.best_val_loss = std::numeric_limits<double>::infinity();
    double last_grad_norm = 0.0;
    std::int64_t step = 0;

    for (std::int64_t epoch = 1; epoch <= ocfg.epochs; ++epoch) {
        RandomStream epoch_rng = rng.child(static_cast<std::uint64_t>(epoch));
        // Fisher-Yates with the same draw scheme used elsewhere
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(
                epoch_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        std::int64_t epoch_steps = 0;
        for (std::int64_t b0 = 0; b0 < n_train; b0 += ocfg.batch_size) {
            const std::int64_t b1 = std::min(n_train, b0 + ocfg.batch_size);
            const std::int64_t bsz = b1 - b0;
            ++step;
            double loss;
            try {
                loss = acc.accumulate(
                    bsz, [&](Model& w, nn::Tape& tape, std::int64_t cb,
                             std::int64_t ce, std::int64_t chunk) {
                        std::vector<std::size_t> which;
                        for (std::int64_t i = cb; i < ce; ++i)
                            which.push_back(order[static_cast<std::size_t>(
                                b0 + i)]);
                        RandomStream drop_rng =
                            rng.child(0x5F7A0000u +
                                      static_cast<std::uint64_t>(step))
                                .child(static_cast<std::uint64_t>(chunk));
                        Tensor l = sft_loss(&tape, w, train_ex, which, cache,
                                            tok, bsz, true, &drop_rng);
                        tape.backward(l);
                        return static_cast<double>(l.item());
                    });
                if (!std::isfinite(loss))
                    throw nn::numeric_fault("sft loss is not finite");
                last_grad_norm = opt.step();
                if (!std::isfinite(last_grad_norm))
                    throw nn::numeric_fault("gradient norm is not finite");
            } catch (const nn::numeric_fault& f) {
                throw train_abort_error(
                    "sft training aborted at step " + std::to_string(step) +
                    " (epoch " + std::to_string(epoch) + "): " + f.what() +
                    "; lr=" + std::to_string(lr_at(ocfg, step)) +
                    ", grad_norm=" + std::to_string(last_grad_norm));
            }
            epoch_loss += loss;
            ++epoch_steps;
            metrics.line({{"step", step},
                          {"split", "train"},
                          {"loss", loss},
                          {"lr", lr_at(ocfg, step)},
                          {"grad_norm", last_grad_norm},
                          {"epoch", epoch}});
        }
        res.final_train_loss = epoch_loss / static_cast<double>(epoch_steps);

        double val_loss;
        try {
            val_loss = eval_split_loss(m, val_ex, cache, tok,
                                       ocfg.batch_size);
            if (!std::isfinite(val_loss))
                throw nn::numeric_fault("validation loss is not finite");
        } catch (const nn::numeric_fault& f) {
            throw train_abort_error(
                "sft training aborted at step " + std::to_string(step) +
                " (epoch " + std::to_string(epoch) +
                ", validation): " + f.what() +
                "; lr=" + std::to_string(lr_at(ocfg, step)) +
                ", grad_norm=" + std::to_string(last_grad_norm));
        }
        metrics.line({{"step", step},
                      {"split", "val"},
                      {"loss", val_loss},
                      {"lr", lr_at(ocfg, step)},
                      {"epoch", epoch}});
        if (val_loss < res.best_val_loss) {
            res.best_val_loss = val_loss;
            res.best_epoch = epoch;
            model::save_checkpoint(m.params(), res.checkpoint_path);
        }
    }
    res.steps = step;

    // Leave the model holding the best-validation weights.
    model::load_into(model::load_checkpoint(res.checkpoint_path), m.params());
    return res;
}

}  // namespace auscult::train
