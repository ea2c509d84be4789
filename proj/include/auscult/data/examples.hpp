#pragma once

// Instruction-response example records and the JSONL manifest that carries
// them. The manifest's first line is a header freezing the vocabulary and
// the template-bank hash; every later line is one example.

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../audio/synth.hpp"
#include "templates.hpp"
#include "tokenizer.hpp"

namespace auscult::data {

enum class Split { train, val, test, ood };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::ood: return "ood";
    }
    return "train";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "ood") return Split::ood;
    throw std::invalid_argument("unknown split: " + s);
}

struct TrainingExample {
    std::string example_id;
    std::vector<std::string> audio_ref;  // one path, or two for comparison
    TaskType task = TaskType::classification;
    std::string instruction;
    std::string response;
    Split split = Split::train;
    std::vector<SoundLabel> label;  // parallel to audio_ref

    bool is_pair() const { return audio_ref.size() == 2; }
};

inline void to_json(nlohmann::json& j, const TrainingExample& e) {
    j = nlohmann::json{{"example_id", e.example_id},
                       {"task", to_string(e.task)},
                       {"instruction", e.instruction},
                       {"response", e.response},
                       {"split", to_string(e.split)}};
    if (e.audio_ref.size() == 1) {
        j["audio_ref"] = e.audio_ref[0];
        j["label"] = e.label.at(0);
    } else {
        j["audio_ref"] = e.audio_ref;
        j["label"] = e.label;
    }
}

inline void from_json(const nlohmann::json& j, TrainingExample& e) {
    e.example_id = j.at("example_id").get<std::string>();
    e.task = task_from_string(j.at("task").get<std::string>());
    e.instruction = j.at("instruction").get<std::string>();
    e.response = j.at("response").get<std::string>();
    e.split = split_from_string(j.at("split").get<std::string>());
    const nlohmann::json& ar = j.at("audio_ref");
    e.audio_ref.clear();
    e.label.clear();
    if (ar.is_string()) {
        e.audio_ref.push_back(ar.get<std::string>());
        e.label.push_back(j.at("label").get<SoundLabel>());
    } else {
        e.audio_ref = ar.get<std::vector<std::string>>();
        e.label = j.at("label").get<std::vector<SoundLabel>>();
    }
    if (e.audio_ref.size() != e.label.size() || e.audio_ref.empty() ||
        e.audio_ref.size() > 2)
        throw std::invalid_argument(
            "manifest: audio_ref/label arity must be 1 or 2 and match");
}

struct Manifest {
    int version = 1;
    std::vector<std::string> vocab;
    std::string template_bank_hash;
    std::vector<TrainingExample> examples;

    std::vector<TrainingExample> split_examples(Split s) const {
        std::vector<TrainingExample> out;
        for (const TrainingExample& e : examples)
            if (e.split == s) out.push_back(e);
        return out;
    }

    void write_jsonl(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for write: " + path);
        nlohmann::json header{{"version", version},
                              {"vocab", vocab},
                              {"template_bank_hash", template_bank_hash}};
        f << header.dump() << "\n";
        for (const TrainingExample& e : examples)
            f << nlohmann::json(e).dump() << "\n";
        if (!f) throw std::runtime_error("write failed: " + path);
    }

    static Manifest read_jsonl(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open manifest: " + path);
        std::string line;
        if (!std::getline(f, line) || line.empty())
            throw std::runtime_error("manifest missing header line: " + path);
        nlohmann::json header = nlohmann::json::parse(line);
        Manifest m;
        m.version = header.at("version").get<int>();
        m.vocab = header.at("vocab").get<std::vector<std::string>>();
        m.template_bank_hash =
            header.at("template_bank_hash").get<std::string>();
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            m.examples.push_back(
                nlohmann::json::parse(line).get<TrainingExample>());
        }
        return m;
    }
};

// Mechanical consistency check: every response must be re-derivable from
// its label via the bank's answer function, every instruction must be a
// bank phrasing, and every example must fit the token budget under the
// manifest's frozen vocabulary.
inline void verify_manifest(const Manifest& m, const TemplateBank& bank,
                            std::int64_t token_limit = 64) {
    if (bank.hash_hex() != m.template_bank_hash)
        throw std::runtime_error("manifest: template bank hash mismatch");
    const Tokenizer tok = Tokenizer::from_vocab(m.vocab);
    for (const TrainingExample& e : m.examples) {
        if (e.instruction.empty() || e.response.empty())
            throw std::runtime_error("manifest: empty text in " +
                                     e.example_id);
        const auto& phr = bank.instructions.at(e.task);
        if (std::find(phr.begin(), phr.end(), e.instruction) == phr.end())
            throw std::runtime_error("manifest: unknown instruction in " +
                                     e.example_id);
        std::string expect;
        if (e.task == TaskType::comparison) {
            if (!e.is_pair())
                throw std::runtime_error(
                    "manifest: comparison without a pair in " + e.example_id);
            const std::string s0 =
                comparison_answer(0, e.label[0], e.label[1]);
            const std::string s1 =
                comparison_answer(1, e.label[0], e.label[1]);
            if (e.response != s0 && e.response != s1)
                throw std::runtime_error(
                    "manifest: response not derivable from labels in " +
                    e.example_id);
        } else {
            if (e.is_pair())
                throw std::runtime_error(
                    "manifest: single task with a pair in " + e.example_id);
            expect = answer_for(e.task, e.label[0]);
            if (e.response != expect)
                throw std::runtime_error(
                    "manifest: response not derivable from label in " +
                    e.example_id);
        }
        const std::int64_t n =
            static_cast<std::int64_t>(tok.encode(e.instruction).size()) +
            static_cast<std::int64_t>(tok.encode(e.response).size());
        if (n > token_limit)
            throw std::runtime_error("manifest: token budget exceeded in " +
                                     e.example_id);
    }
}

}  // namespace auscult::data
