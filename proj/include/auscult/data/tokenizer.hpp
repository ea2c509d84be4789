#pragma once

// Word-level tokenizer. The vocabulary is the closed set of words the
// template bank can ever produce (all instructions plus all answers over
// every valid label combination), so it can be frozen at data-generation
// time and shipped in the manifest header. Encoding an out-of-vocabulary
// word is an error: it means text did not come from the bank.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lexicon.hpp"
#include "templates.hpp"

namespace auscult::data {

class Tokenizer {
  public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kBos = 1;
    static constexpr std::int32_t kEos = 2;
    static constexpr std::int32_t kSep = 3;
    static constexpr std::int32_t kNumSpecials = 4;

    static Tokenizer build(const std::vector<std::string>& corpus) {
        std::vector<std::string> uniq;
        std::unordered_map<std::string, std::int32_t> seen;
        for (const std::string& text : corpus)
            for (const std::string& w : normalize_words(text))
                if (seen.emplace(w, 0).second) uniq.push_back(w);
        std::sort(uniq.begin(), uniq.end());
        Tokenizer t;
        t.words_ = std::move(uniq);
        for (std::size_t i = 0; i < t.words_.size(); ++i)
            t.ids_[t.words_[i]] =
                static_cast<std::int32_t>(i) + kNumSpecials;
        return t;
    }

    static Tokenizer from_vocab(std::vector<std::string> words) {
        Tokenizer t;
        t.words_ = std::move(words);
        for (std::size_t i = 0; i < t.words_.size(); ++i)
            t.ids_[t.words_[i]] =
                static_cast<std::int32_t>(i) + kNumSpecials;
        return t;
    }

    // Tokenizer over everything the standard template bank can emit.
    static const Tokenizer& standard() {
        static const Tokenizer t =
            build(template_corpus(TemplateBank::standard()));
        return t;
    }

    // Every string the bank can produce: instructions, single-task answers
    // over all valid (modality, finding, severity, site) combinations, and
    // comparison answers over all label pairs.
    static std::vector<std::string> template_corpus(
        const TemplateBank& bank) {
        std::vector<std::string> corpus;
        for (const auto& [task, phrasings] : bank.instructions)
            for (const std::string& s : phrasings) corpus.push_back(s);

        std::vector<SoundLabel> combos;
        for (audio::Modality m :
             {audio::Modality::respiratory, audio::Modality::cardiac,
              audio::Modality::cough}) {
            for (Finding f :
                 {Finding::normal, Finding::wheeze, Finding::crackle,
                  Finding::murmur, Finding::cough_covid_pos,
                  Finding::cough_covid_neg}) {
                if (!audio::finding_valid_for(m, f)) continue;
                std::vector<Severity> sevs =
                    f == Finding::normal
                        ? std::vector<Severity>{Severity::none}
                        : std::vector<Severity>{Severity::none,
                                                Severity::mild,
                                                Severity::severe};
                for (Severity sv : sevs) {
                    for (const std::string& site : sites_for(m)) {
                        SoundLabel l;
                        l.id = "combo";
                        l.modality = m;
                        l.finding = f;
                        l.severity = sv;
                        l.location = site;
                        combos.push_back(l);
                        for (TaskType t :
                             {TaskType::classification, TaskType::detection,
                              TaskType::reporting, TaskType::reasoning,
                              TaskType::ddx, TaskType::location})
                            corpus.push_back(answer_for(t, l));
                    }
                }
            }
        }
        for (const SoundLabel& a : combos)
            for (const SoundLabel& b : combos)
                for (int style : {0, 1})
                    corpus.push_back(comparison_answer(style, a, b));
        return corpus;
    }

    std::int32_t vocab_size() const {
        return static_cast<std::int32_t>(words_.size()) + kNumSpecials;
    }

    std::vector<std::int32_t> encode(const std::string& text) const {
        std::vector<std::int32_t> out;
        for (const std::string& w : normalize_words(text)) {
            auto it = ids_.find(w);
            if (it == ids_.end())
                throw std::invalid_argument(
                    "tokenizer: out-of-vocabulary word '" + w + "'");
            out.push_back(it->second);
        }
        return out;
    }

    // Joins word tokens with single spaces; special ids are skipped.
    std::string decode(const std::vector<std::int32_t>& toks) const {
        std::string out;
        for (std::int32_t id : toks) {
            if (id < kNumSpecials) continue;
            const std::size_t i = static_cast<std::size_t>(id - kNumSpecials);
            if (i >= words_.size())
                throw std::invalid_argument("tokenizer: id out of range: " +
                                            std::to_string(id));
            if (!out.empty()) out.push_back(' ');
            out += words_[i];
        }
        return out;
    }

    const std::vector<std::string>& vocab_words() const { return words_; }

    nlohmann::json vocab_json() const {
        return nlohmann::json(words_);
    }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

}  // namespace auscult::data
