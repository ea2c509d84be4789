#pragma once

// Canonical finding vocabulary shared by the response templates and the
// rule-based judge, so the phrases the generator writes are exactly the
// phrases the judge can detect. Multi-word findings ("covid positive")
// are handled as bigrams during extraction.

#include <set>
#include <string>
#include <vector>

#include "../audio/synth.hpp"

namespace auscult::data {

using audio::Finding;
using audio::Modality;

// Surface forms that count as a mention of each finding.
inline const std::vector<std::string>& finding_surface_forms(Finding f) {
    static const std::vector<std::string> normal{"normal", "clear",
                                                 "unremarkable"};
    static const std::vector<std::string> wheeze{"wheeze", "wheezing",
                                                 "wheezes"};
    static const std::vector<std::string> crackle{"crackle", "crackles",
                                                  "crackling"};
    static const std::vector<std::string> murmur{"murmur", "murmurs"};
    static const std::vector<std::string> covid_pos{"covid positive"};
    static const std::vector<std::string> covid_neg{"covid negative"};
    switch (f) {
        case Finding::normal: return normal;
        case Finding::wheeze: return wheeze;
        case Finding::crackle: return crackle;
        case Finding::murmur: return murmur;
        case Finding::cough_covid_pos: return covid_pos;
        case Finding::cough_covid_neg: return covid_neg;
    }
    return normal;
}

// The phrase templates always use for a finding (subject position).
inline std::string finding_phrase(Finding f) {
    switch (f) {
        case Finding::normal: return "normal";
        case Finding::wheeze: return "wheezing";
        case Finding::crackle: return "crackles";
        case Finding::murmur: return "a murmur";
        case Finding::cough_covid_pos: return "a covid positive cough";
        case Finding::cough_covid_neg: return "a covid negative cough";
    }
    return "normal";
}

// Lowercases and keeps only [a-z0-9'] word characters, splitting on
// everything else. The same normalization feeds the judge and metrics.
inline std::vector<std::string> normalize_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        const char lc = (c >= 'A' && c <= 'Z')
                            ? static_cast<char>(c - 'A' + 'a')
                            : c;
        const bool wordc = (lc >= 'a' && lc <= 'z') ||
                           (lc >= '0' && lc <= '9') || lc == '\'';
        if (wordc) {
            cur.push_back(lc);
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

// Finding mentions in free text. Unigram findings match any surface form;
// the cough classes require their sign bigram ("covid positive"/"covid
// negative"). The bare words "normal"/"clear" do NOT fire when negated by
// an immediately preceding "not"/"no".
inline std::set<Finding> extract_findings(const std::string& text) {
    const std::vector<std::string> w = normalize_words(text);
    std::set<Finding> out;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const bool negated =
            i > 0 && (w[i - 1] == "not" || w[i - 1] == "no");
        for (Finding f :
             {Finding::wheeze, Finding::crackle, Finding::murmur}) {
            for (const std::string& s : finding_surface_forms(f))
                if (w[i] == s && !negated) out.insert(f);
        }
        if (!negated)
            for (const std::string& s : finding_surface_forms(Finding::normal))
                if (w[i] == s) out.insert(Finding::normal);
        if (i + 1 < w.size() && w[i] == "covid") {
            if (w[i + 1] == "positive") out.insert(Finding::cough_covid_pos);
            if (w[i + 1] == "negative") out.insert(Finding::cough_covid_neg);
        }
    }
    return out;
}

}  // namespace auscult::data
