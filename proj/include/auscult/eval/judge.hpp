#pragma once

// Rule-based clinical judge. The keyword lexicon is the template answer
// vocabulary itself — finding surface forms (shared with the response
// templates via data/lexicon.hpp), auscultation sites, and differential
// condition names — so every fact an answer can state is a key the judge
// can check. Three prompt variants trade permissiveness:
//   v1         every reference key must appear in the candidate
//   v2_lenient only the primary key (first finding mentioned) must appear
//   v3_strict  v1, and the candidate may not add keys of its own
// A strict yes therefore implies a baseline yes implies a lenient yes.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "../data/lexicon.hpp"
#include "../data/templates.hpp"

namespace auscult::eval {

using audio::Finding;

enum class JudgeAnswer { yes, no, unavailable };
enum class PromptVariant { v1, v2_lenient, v3_strict };

inline std::string to_string(JudgeAnswer a) {
    switch (a) {
        case JudgeAnswer::yes: return "yes";
        case JudgeAnswer::no: return "no";
        case JudgeAnswer::unavailable: return "unavailable";
    }
    return "unavailable";
}

inline std::string to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::v1: return "v1";
        case PromptVariant::v2_lenient: return "v2_lenient";
        case PromptVariant::v3_strict: return "v3_strict";
    }
    return "v1";
}

struct JudgeVerdict {
    JudgeAnswer answer = JudgeAnswer::unavailable;
    std::string judge_id;
    std::string prompt_variant;
};

// Clinical keys extracted from one text. Each key is tagged with its
// family ("f:" finding, "s:" site, "c:" condition) so families can never
// collide; `ordered` lists tagged keys by first mention.
struct JudgeKeys {
    std::set<Finding> findings;
    std::set<std::string> sites;
    std::set<std::string> conditions;
    std::vector<std::string> ordered;

    std::set<std::string> tagged() const {
        return {ordered.begin(), ordered.end()};
    }

    // The key the lenient variant insists on: the first finding when one
    // exists, otherwise the first key of any family; empty when none.
    std::string primary() const {
        for (const std::string& k : ordered)
            if (k.rfind("f:", 0) == 0) return k;
        return ordered.empty() ? std::string() : ordered.front();
    }
};

namespace detail {

// Multi-word keys are matched as exact consecutive word runs.
struct PhraseKey {
    std::string name;
    std::vector<std::string> words;
};

inline const std::vector<PhraseKey>& site_keys() {
    static const std::vector<PhraseKey> keys = [] {
        std::vector<PhraseKey> k;
        for (audio::Modality m :
             {audio::Modality::respiratory, audio::Modality::cardiac,
              audio::Modality::cough})
            for (const std::string& site : data::sites_for(m))
                k.push_back({site, data::normalize_words(site)});
        return k;
    }();
    return keys;
}

inline const std::vector<PhraseKey>& condition_keys() {
    static const std::vector<PhraseKey> keys = [] {
        const std::vector<std::string> names{
            "asthma",        "copd",
            "bronchitis",    "pneumonia",
            "fibrosis",      "heart failure",
            "aortic stenosis", "mitral regurgitation",
            "covid infection", "viral illness",
            "common cold",   "irritant cough",
            "healthy"};
        std::vector<PhraseKey> k;
        for (const std::string& n : names)
            k.push_back({n, data::normalize_words(n)});
        return k;
    }();
    return keys;
}

inline bool phrase_at(const std::vector<std::string>& w, std::size_t i,
                      const std::vector<std::string>& phrase) {
    if (i + phrase.size() > w.size()) return false;
    for (std::size_t j = 0; j < phrase.size(); ++j)
        if (w[i + j] != phrase[j]) return false;
    return true;
}

}  // namespace detail

// Scans a text for finding, site, and condition keys. The finding part
// reproduces data::extract_findings exactly, including the "not"/"no"
// negation guard and the covid sign bigrams.
inline JudgeKeys extract_keys(const std::string& text) {
    const std::vector<std::string> w = data::normalize_words(text);
    JudgeKeys out;
    std::set<std::string> seen;
    auto add = [&out, &seen](const std::string& tagged) {
        if (seen.insert(tagged).second) out.ordered.push_back(tagged);
    };
    for (std::size_t i = 0; i < w.size(); ++i) {
        const bool negated =
            i > 0 && (w[i - 1] == "not" || w[i - 1] == "no");
        for (Finding f :
             {Finding::normal, Finding::wheeze, Finding::crackle,
              Finding::murmur}) {
            if (negated) continue;
            for (const std::string& s : data::finding_surface_forms(f))
                if (w[i] == s) {
                    out.findings.insert(f);
                    add("f:" + audio::to_string(f));
                }
        }
        if (i + 1 < w.size() && w[i] == "covid") {
            if (w[i + 1] == "positive") {
                out.findings.insert(Finding::cough_covid_pos);
                add("f:" + audio::to_string(Finding::cough_covid_pos));
            }
            if (w[i + 1] == "negative") {
                out.findings.insert(Finding::cough_covid_neg);
                add("f:" + audio::to_string(Finding::cough_covid_neg));
            }
        }
        for (const detail::PhraseKey& k : detail::site_keys())
            if (detail::phrase_at(w, i, k.words)) {
                out.sites.insert(k.name);
                add("s:" + k.name);
            }
        for (const detail::PhraseKey& k : detail::condition_keys())
            if (detail::phrase_at(w, i, k.words)) {
                out.conditions.insert(k.name);
                add("c:" + k.name);
            }
    }
    return out;
}

// Offline judge: a pure function of the two texts and the variant.
inline JudgeVerdict judge_rules(const std::string& reference,
                                const std::string& generated,
                                PromptVariant variant) {
    const JudgeKeys ref = extract_keys(reference);
    const JudgeKeys gen = extract_keys(generated);
    const std::set<std::string> rk = ref.tagged();
    const std::set<std::string> gk = gen.tagged();

    bool yes = false;
    switch (variant) {
        case PromptVariant::v1:
            yes = std::includes(gk.begin(), gk.end(), rk.begin(), rk.end());
            break;
        case PromptVariant::v2_lenient: {
            const std::string primary = ref.primary();
            yes = primary.empty() || gk.count(primary) > 0;
            break;
        }
        case PromptVariant::v3_strict:
            yes = rk == gk;
            break;
    }
    return {yes ? JudgeAnswer::yes : JudgeAnswer::no, "rules",
            to_string(variant)};
}

}  // namespace auscult::eval
