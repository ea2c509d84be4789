#pragma once

// Ablation table: the full model versus audio-removed and
// audio-shuffled inference, plus rows for checkpoints retrained at other
// prefix widths. A requested prefix width with no supplied checkpoint is
// reported as an absent row rather than being skipped silently.

#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness.hpp"

namespace auscult::eval {

struct AblationRow {
    std::string condition;
    bool available = false;
    std::int64_t n = 0;
    double embedding_f1 = 0.0;
    double rouge1 = 0.0;
    double judged_accuracy = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
};

namespace detail {

inline AblationRow row_from(const std::string& name,
                            const TaskAggregate& overall) {
    AblationRow r;
    r.condition = name;
    r.available = true;
    r.n = overall.n;
    r.embedding_f1 = overall.embedding_f1;
    r.rouge1 = overall.rouge1;
    r.judged_accuracy = overall.judged_accuracy;
    return r;
}

}  // namespace detail

// `k_models` maps each prefix width to its checkpoint, with nullptr
// marking a width that was requested but never trained.
inline AblationResult ablation_suite(
    const model::Model& m, const std::vector<TrainingExample>& test,
    MelCache& cache, const data::Tokenizer& tok,
    const std::map<std::int64_t, const model::Model*>& k_models = {},
    const EvalOptions& base = {}) {
    EvalOptions opt = base;
    opt.conditions = {Condition::normal, Condition::audio_removed,
                      Condition::audio_shuffled};
    const EvalReport main = run_eval(m, test, cache, tok, opt);

    AblationResult out;
    for (const ConditionReport& c : main.conditions)
        out.rows.push_back(detail::row_from(
            c.condition == "normal" ? "full" : c.condition, c.overall));

    EvalOptions kopt = base;
    kopt.conditions = {Condition::normal};
    for (const auto& [k, mp] : k_models) {
        const std::string name = "prefix_k=" + std::to_string(k);
        if (mp == nullptr) {
            AblationRow r;
            r.condition = name;
            r.available = false;
            out.rows.push_back(r);
            continue;
        }
        const EvalReport rep = run_eval(*mp, test, cache, tok, kopt);
        out.rows.push_back(
            detail::row_from(name, rep.conditions.front().overall));
    }
    return out;
}

inline void to_json(nlohmann::json& j, const AblationRow& r) {
    j = nlohmann::json{{"condition", r.condition},
                       {"available", r.available}};
    if (r.available) {
        j["n"] = r.n;
        j["embedding_f1"] = r.embedding_f1;
        j["rouge1"] = r.rouge1;
        j["judged_accuracy"] = r.judged_accuracy;
    }
}

inline nlohmann::json to_json(const AblationResult& res) {
    return nlohmann::json{{"rows", res.rows}};
}

inline std::string render_table(const AblationResult& res) {
    constexpr std::size_t kName = 16, kNum = 8, kVal = 10;
    std::ostringstream out;
    out << detail::pad("condition", kName) << "| " << detail::pad("n", kNum)
        << "| " << detail::pad("emb_f1", kVal) << "| "
        << detail::pad("rouge1", kVal) << "| "
        << detail::pad("judged", kVal) << "\n";
    for (const AblationRow& r : res.rows) {
        if (!r.available) {
            out << detail::pad(r.condition, kName) << "| "
                << detail::pad("-", kNum) << "| "
                << detail::pad("absent", kVal) << "| "
                << detail::pad("absent", kVal) << "| "
                << detail::pad("absent", kVal) << "\n";
            continue;
        }
        out << detail::pad(r.condition, kName) << "| "
            << detail::pad(std::to_string(r.n), kNum) << "| "
            << detail::pad(detail::fixed4(r.embedding_f1), kVal) << "| "
            << detail::pad(detail::fixed4(r.rouge1), kVal) << "| "
            << detail::pad(detail::fixed4(r.judged_accuracy), kVal) << "\n";
    }
    return out.str();
}

}  // namespace auscult::eval
