#pragma once

// Per-task evaluation harness. Each example is scored independently
// (read-only checkpoint, cached features), so records are computed in
// parallel chunks and merged in example order; a rerun with the same
// options is byte-identical. Conditions rewire the audio before
// generation: `audio_removed` feeds a zero spectrogram of the same
// shape, and `audio_shuffled` feeds another example's audio through a
// derangement (no example keeps its own recording).

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../data/examples.hpp"
#include "../model/model.hpp"
#include "../nn/parallel.hpp"
#include "../train/batch.hpp"
#include "../train/features.hpp"
#include "../train/sft.hpp"
#include "judge.hpp"
#include "metrics.hpp"
#include "remote_judge.hpp"

namespace auscult::eval {

using audio::MelSpectrogram;
using data::TaskType;
using data::TrainingExample;
using train::MelCache;

enum class Condition { normal, audio_removed, audio_shuffled };

inline std::string to_string(Condition c) {
    switch (c) {
        case Condition::normal: return "normal";
        case Condition::audio_removed: return "audio_removed";
        case Condition::audio_shuffled: return "audio_shuffled";
    }
    return "normal";
}

struct EvalOptions {
    std::vector<Condition> conditions{Condition::normal};
    PromptVariant variant = PromptVariant::v1;
    std::int64_t max_examples = 0;  // 0 = every example in the split
    std::int64_t max_new_tokens = 48;
    std::uint64_t shuffle_seed = 2026;  // draws the audio_shuffled pairing
    // Label stamped on the report; the manifest-level entry point fills
    // it with the split name when left empty.
    std::string split_label;
    // When set, this judge is consulted instead of the offline rules.
    const RemoteJudgeConfig* remote = nullptr;
};

struct EvalRecord {
    std::string example_id;
    TaskType task = TaskType::classification;
    std::string condition;
    std::string reference;
    std::string generated;
    double embedding_f1 = 0.0;
    double rouge1 = 0.0;
    JudgeAnswer judged = JudgeAnswer::unavailable;
    // Lenient re-judgement, kept only for differential records.
    std::optional<JudgeAnswer> judged_relaxed;
};

struct TaskAggregate {
    std::int64_t n = 0;
    double embedding_f1 = 0.0;
    double rouge1 = 0.0;
    double judged_accuracy = 0.0;
    std::int64_t judged_yes = 0;
    std::int64_t judged_no = 0;
    std::int64_t judged_unavailable = 0;
    std::optional<double> relaxed_accuracy;  // differential rows only
};

struct ConditionReport {
    std::string condition;
    std::vector<std::pair<TaskType, TaskAggregate>> per_task;
    TaskAggregate overall;
};

struct EvalReport {
    std::string split;
    std::string judge_id;
    std::string variant;
    std::int64_t max_new_tokens = 0;
    std::uint64_t shuffle_seed = 0;
    std::vector<ConditionReport> conditions;
    std::vector<EvalRecord> records;
};

// Uniformly random cyclic permutation (Sattolo's shuffle): a single
// n-cycle, hence never a fixed point. The result is re-verified on every
// call because downstream claims depend on it.
inline std::vector<std::int64_t> derangement(std::int64_t n,
                                             nn::RandomStream& rng) {
    if (n < 2)
        throw std::invalid_argument(
            "derangement: need at least 2 elements, got " +
            std::to_string(n));
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        p[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i >= 1; --i)
        std::swap(p[static_cast<std::size_t>(i)],
                  p[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
    for (std::int64_t i = 0; i < n; ++i)
        if (p[static_cast<std::size_t>(i)] == i)
            throw std::logic_error("derangement: fixed point produced");
    return p;
}

namespace detail {

inline MelSpectrogram zero_mel_like(const MelSpectrogram& mel) {
    MelSpectrogram z;
    z.bins = nn::Tensor::zeros({mel.bins.dim(0), mel.bins.dim(1)});
    z.frame_len = mel.frame_len;
    z.frame_hop = mel.frame_hop;
    return z;
}

inline void accumulate(TaskAggregate& agg, const EvalRecord& r) {
    ++agg.n;
    agg.embedding_f1 += r.embedding_f1;
    agg.rouge1 += r.rouge1;
    if (r.judged == JudgeAnswer::yes) ++agg.judged_yes;
    if (r.judged == JudgeAnswer::no) ++agg.judged_no;
    if (r.judged == JudgeAnswer::unavailable) ++agg.judged_unavailable;
}

inline void finalize(TaskAggregate& agg, std::int64_t relaxed_yes,
                     std::int64_t relaxed_total) {
    if (agg.n > 0) {
        agg.embedding_f1 /= static_cast<double>(agg.n);
        agg.rouge1 /= static_cast<double>(agg.n);
    }
    const std::int64_t decided = agg.judged_yes + agg.judged_no;
    agg.judged_accuracy =
        decided > 0
            ? static_cast<double>(agg.judged_yes) /
                  static_cast<double>(decided)
            : 0.0;
    if (relaxed_total > 0)
        agg.relaxed_accuracy = static_cast<double>(relaxed_yes) /
                               static_cast<double>(relaxed_total);
}

}  // namespace detail

// Scores one split of examples under every requested condition.
inline EvalReport run_eval(const model::Model& m,
                           const std::vector<TrainingExample>& examples,
                           MelCache& cache, const data::Tokenizer& tok,
                           const EvalOptions& opt = {}) {
    if (examples.empty())
        throw std::invalid_argument("run_eval: no examples to score");
    if (opt.conditions.empty())
        throw std::invalid_argument("run_eval: no conditions requested");
    if (tok.vocab_size() != m.cfg.vocab_size)
        throw std::runtime_error(
            "run_eval: tokenizer vocabulary (" +
            std::to_string(tok.vocab_size()) +
            ") does not match the checkpoint (" +
            std::to_string(m.cfg.vocab_size) + ")");

    std::vector<TrainingExample> subset = examples;
    if (opt.max_examples > 0 &&
        static_cast<std::int64_t>(subset.size()) > opt.max_examples)
        subset.resize(static_cast<std::size_t>(opt.max_examples));
    const auto n = static_cast<std::int64_t>(subset.size());

    // Warm the cache serially so parallel chunks only read.
    for (const TrainingExample& ex : subset) cache.mel(ex);

    const Embedder embed = model_token_embedder(m, tok);
    EvalReport report;
    report.split = opt.split_label.empty() ? "custom" : opt.split_label;
    report.judge_id = opt.remote != nullptr ? opt.remote->model : "rules";
    report.variant = to_string(opt.variant);
    report.max_new_tokens = opt.max_new_tokens;
    report.shuffle_seed = opt.shuffle_seed;

    for (const Condition cond : opt.conditions) {
        std::vector<std::int64_t> perm;
        if (cond == Condition::audio_shuffled) {
            nn::RandomStream rng(opt.shuffle_seed);
            perm = derangement(n, rng);
        }

        std::vector<EvalRecord> records(static_cast<std::size_t>(n));
        const std::int64_t n_chunks =
            std::min<std::int64_t>(n, train::kGradChunks);
        nn::run_chunks(n_chunks, [&](std::int64_t c) {
            const std::int64_t b = nn::chunk_begin(n, n_chunks, c);
            const std::int64_t e = nn::chunk_begin(n, n_chunks, c + 1);
            for (std::int64_t i = b; i < e; ++i) {
                const TrainingExample& ex =
                    subset[static_cast<std::size_t>(i)];
                MelSpectrogram mel = cache.mel(ex);
                if (cond == Condition::audio_removed)
                    mel = detail::zero_mel_like(mel);
                if (cond == Condition::audio_shuffled)
                    mel = cache.mel(subset[static_cast<std::size_t>(
                        perm[static_cast<std::size_t>(i)])]);

                model::GenerateOptions gen;
                gen.greedy = true;
                gen.max_new = opt.max_new_tokens;
                gen.eos_id = data::Tokenizer::kEos;
                const std::vector<std::int32_t> out = m.generate(
                    mel, train::instruction_ids(tok, ex.instruction), gen);

                EvalRecord r;
                r.example_id = ex.example_id;
                r.task = ex.task;
                r.condition = to_string(cond);
                r.reference = ex.response;
                r.generated = tok.decode(out);
                r.embedding_f1 =
                    embedding_f1(r.reference, r.generated, embed);
                r.rouge1 = rouge1(r.reference, r.generated);
                if (r.embedding_f1 < 0.0 || r.embedding_f1 > 1.0 ||
                    r.rouge1 < 0.0 || r.rouge1 > 1.0)
                    throw std::logic_error(
                        "run_eval: metric out of [0,1] on example " +
                        ex.example_id);
                r.judged =
                    opt.remote != nullptr
                        ? judge_remote(*opt.remote, r.reference, r.generated,
                                       opt.variant)
                              .answer
                        : judge_rules(r.reference, r.generated, opt.variant)
                              .answer;
                if (ex.task == TaskType::ddx)
                    r.judged_relaxed =
                        judge_rules(r.reference, r.generated,
                                    PromptVariant::v2_lenient)
                            .answer;
                records[static_cast<std::size_t>(i)] = std::move(r);
            }
        });

        ConditionReport cr;
        cr.condition = to_string(cond);
        std::map<TaskType, TaskAggregate> per_task;
        std::map<TaskType, std::pair<std::int64_t, std::int64_t>> relaxed;
        std::int64_t relaxed_yes_all = 0, relaxed_total_all = 0;
        for (const EvalRecord& r : records) {
            detail::accumulate(per_task[r.task], r);
            detail::accumulate(cr.overall, r);
            if (r.judged_relaxed.has_value()) {
                auto& [ryes, rtot] = relaxed[r.task];
                ++rtot;
                ++relaxed_total_all;
                if (*r.judged_relaxed == JudgeAnswer::yes) {
                    ++ryes;
                    ++relaxed_yes_all;
                }
            }
        }
        for (TaskType t : data::all_tasks()) {
            auto it = per_task.find(t);
            if (it == per_task.end()) continue;
            const auto rel = relaxed.count(t) ? relaxed[t]
                                              : std::pair<std::int64_t,
                                                          std::int64_t>{0, 0};
            detail::finalize(it->second, rel.first, rel.second);
            cr.per_task.emplace_back(t, it->second);
        }
        detail::finalize(cr.overall, relaxed_yes_all, relaxed_total_all);
        report.conditions.push_back(std::move(cr));
        report.records.insert(report.records.end(), records.begin(),
                              records.end());
    }
    return report;
}

// Manifest-level entry point: builds the tokenizer from the manifest
// vocabulary and checks it against the checkpoint before scoring.
inline EvalReport run_eval(const model::Model& m, const data::Manifest& man,
                           data::Split split, MelCache& cache,
                           const EvalOptions& opt = {}) {
    const data::Tokenizer tok = data::Tokenizer::from_vocab(man.vocab);
    if (tok.vocab_size() != m.cfg.vocab_size)
        throw std::runtime_error(
            "run_eval: manifest vocabulary (" +
            std::to_string(tok.vocab_size()) +
            " ids) is incompatible with the checkpoint (" +
            std::to_string(m.cfg.vocab_size) + " ids)");
    EvalOptions resolved = opt;
    if (resolved.split_label.empty())
        resolved.split_label = data::to_string(split);
    return run_eval(m, man.split_examples(split), cache, tok, resolved);
}

inline void to_json(nlohmann::json& j, const TaskAggregate& a) {
    j = nlohmann::json{{"n", a.n},
                       {"embedding_f1", a.embedding_f1},
                       {"rouge1", a.rouge1},
                       {"judged_accuracy", a.judged_accuracy},
                       {"judged_yes", a.judged_yes},
                       {"judged_no", a.judged_no},
                       {"judged_unavailable", a.judged_unavailable}};
    if (a.relaxed_accuracy.has_value())
        j["relaxed_accuracy"] = *a.relaxed_accuracy;
}

inline void to_json(nlohmann::json& j, const EvalRecord& r) {
    j = nlohmann::json{{"example_id", r.example_id},
                       {"task", data::to_string(r.task)},
                       {"condition", r.condition},
                       {"reference", r.reference},
                       {"generated", r.generated},
                       {"embedding_f1", r.embedding_f1},
                       {"rouge1", r.rouge1},
                       {"judged", to_string(r.judged)}};
    if (r.judged_relaxed.has_value())
        j["judged_relaxed"] = to_string(*r.judged_relaxed);
}

inline nlohmann::json to_json(const EvalReport& rep) {
    nlohmann::json conds = nlohmann::json::array();
    for (const ConditionReport& c : rep.conditions) {
        nlohmann::json tasks = nlohmann::json::array();
        for (const auto& [task, agg] : c.per_task) {
            nlohmann::json t = agg;
            t["task"] = data::to_string(task);
            tasks.push_back(std::move(t));
        }
        conds.push_back(nlohmann::json{{"condition", c.condition},
                                       {"per_task", std::move(tasks)},
                                       {"overall", c.overall}});
    }
    return nlohmann::json{{"split", rep.split},
                          {"judge_id", rep.judge_id},
                          {"variant", rep.variant},
                          {"max_new_tokens", rep.max_new_tokens},
                          {"shuffle_seed", rep.shuffle_seed},
                          {"conditions", std::move(conds)},
                          {"records", rep.records}};
}

namespace detail {

inline std::string fixed4(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

inline std::string pad(std::string s, std::size_t width) {
    while (s.size() < width) s.push_back(' ');
    return s;
}

}  // namespace detail

// Fixed-width text table, one block per condition plus an overall row;
// the relaxed column is only populated for differential rows.
inline std::string render_table(const EvalReport& rep) {
    constexpr std::size_t kName = 16, kNum = 8, kVal = 10;
    std::ostringstream out;
    out << "judge: " << rep.judge_id << "  variant: " << rep.variant << "\n";
    for (const ConditionReport& c : rep.conditions) {
        out << "condition: " << c.condition << "\n";
        out << detail::pad("task", kName) << "| " << detail::pad("n", kNum)
            << "| " << detail::pad("emb_f1", kVal) << "| "
            << detail::pad("rouge1", kVal) << "| "
            << detail::pad("judged", kVal) << "| "
            << detail::pad("relaxed", kVal) << "\n";
        auto row = [&](const std::string& name, const TaskAggregate& a) {
            out << detail::pad(name, kName) << "| "
                << detail::pad(std::to_string(a.n), kNum) << "| "
                << detail::pad(detail::fixed4(a.embedding_f1), kVal) << "| "
                << detail::pad(detail::fixed4(a.rouge1), kVal) << "| "
                << detail::pad(detail::fixed4(a.judged_accuracy), kVal)
                << "| "
                << detail::pad(a.relaxed_accuracy.has_value()
                                   ? detail::fixed4(*a.relaxed_accuracy)
                                   : std::string("-"),
                               kVal)
                << "\n";
        };
        for (const auto& [task, agg] : c.per_task)
            row(data::to_string(task), agg);
        row("overall", c.overall);
        out << "\n";
    }
    return out.str();
}

}  // namespace auscult::eval
