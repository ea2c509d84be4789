#pragma once

// Instruction templates and deterministic answer functions. Every response
// is a pure function of the label(s), so any manifest line can be
// re-derived and checked mechanically.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "../audio/synth.hpp"
#include "lexicon.hpp"

namespace auscult::data {

using audio::Severity;
using audio::SoundLabel;

enum class TaskType {
    classification,
    detection,
    reporting,
    reasoning,
    ddx,
    comparison,
    location
};

inline const std::vector<TaskType>& all_tasks() {
    static const std::vector<TaskType> t{
        TaskType::classification, TaskType::detection, TaskType::reporting,
        TaskType::reasoning,      TaskType::ddx,       TaskType::comparison,
        TaskType::location};
    return t;
}

inline std::string to_string(TaskType t) {
    switch (t) {
        case TaskType::classification: return "classification";
        case TaskType::detection: return "detection";
        case TaskType::reporting: return "reporting";
        case TaskType::reasoning: return "reasoning";
        case TaskType::ddx: return "ddx";
        case TaskType::comparison: return "comparison";
        case TaskType::location: return "location";
    }
    return "classification";
}

inline TaskType task_from_string(const std::string& s) {
    for (TaskType t : all_tasks())
        if (to_string(t) == s) return t;
    throw std::invalid_argument("unknown task type: " + s);
}

// Canonical auscultation sites per modality; also part of the frozen
// vocabulary closure.
inline const std::vector<std::string>& sites_for(audio::Modality m) {
    static const std::vector<std::string> resp{
        "left upper chest", "right upper chest", "left lower chest",
        "right lower chest", "posterior chest"};
    static const std::vector<std::string> card{
        "aortic area", "pulmonic area", "tricuspid area", "mitral area"};
    static const std::vector<std::string> cough{"mouth"};
    switch (m) {
        case audio::Modality::respiratory: return resp;
        case audio::Modality::cardiac: return card;
        case audio::Modality::cough: return cough;
    }
    return resp;
}

namespace detail {

inline std::string sev_adj(Severity s) {
    switch (s) {
        case Severity::none: return "";
        case Severity::mild: return "mild ";
        case Severity::severe: return "severe ";
    }
    return "";
}

// Short noun phrase describing a label's finding, used in comparisons
// and reports.
inline std::string finding_noun(const SoundLabel& l) {
    const std::string sev = sev_adj(l.severity);
    switch (l.finding) {
        case Finding::normal:
            return l.modality == audio::Modality::cardiac
                       ? "normal heart sounds"
                       : "clear breath sounds";
        case Finding::wheeze: return sev + "wheezing";
        case Finding::crackle: return sev + "crackles";
        case Finding::murmur: return "a " + sev + "murmur";
        case Finding::cough_covid_pos: return "a covid positive cough";
        case Finding::cough_covid_neg: return "a covid negative cough";
    }
    return "clear breath sounds";
}

}  // namespace detail

inline bool label_is_abnormal(const SoundLabel& l) {
    return l.finding != Finding::normal;
}

struct TemplateBank {
    std::map<TaskType, std::vector<std::string>> instructions;
    std::string answer_version;

    static const TemplateBank& standard() {
        static const TemplateBank bank = [] {
            TemplateBank b;
            b.answer_version = "answers-v1";
            b.instructions[TaskType::detection] = {
                "what sounds are present in this recording?",
                "identify any adventitious sounds you hear.",
                "listen to the audio and name the sounds present.",
                "which auscultation findings can you hear?",
                "describe what you hear in this recording."};
            b.instructions[TaskType::classification] = {
                "is this recording normal or abnormal?",
                "classify this recording as normal or abnormal.",
                "does this audio contain any abnormal sounds?",
                "state whether the recording is normal or abnormal."};
            b.instructions[TaskType::reporting] = {
                "write a brief report for this recording.",
                "summarize this auscultation in a short report.",
                "provide a structured report of the findings.",
                "draft a concise clinical note for this audio."};
            b.instructions[TaskType::reasoning] = {
                "explain what the acoustic evidence suggests.",
                "what do the sound features indicate, and why?",
                "interpret this recording and justify your conclusion.",
                "reason through the findings in this audio."};
            b.instructions[TaskType::ddx] = {
                "list the most likely differential diagnoses.",
                "which conditions could explain this recording?",
                "give a short differential for these sounds.",
                "what diagnoses should be considered here?"};
            b.instructions[TaskType::comparison] = {
                "compare the two recordings and describe the difference.",
                "how do these two recordings differ?",
                "which of the two recordings is abnormal, and how can you "
                "tell?",
                "contrast the findings in the first and second recording."};
            b.instructions[TaskType::location] = {
                "where on the body was this sound recorded?",
                "name the auscultation site for this recording.",
                "at which site was this audio captured?",
                "identify the recording location."};
            return b;
        }();
        return bank;
    }

    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 0x100000001b3ull;
            }
            h ^= 0x1f;
            h *= 0x100000001b3ull;
        };
        for (TaskType t : all_tasks()) {
            mix(to_string(t));
            auto it = instructions.find(t);
            if (it == instructions.end()) continue;
            for (const std::string& s : it->second) mix(s);
        }
        for (audio::Modality m :
             {audio::Modality::respiratory, audio::Modality::cardiac,
              audio::Modality::cough})
            for (const std::string& s : sites_for(m)) mix(s);
        mix(answer_version);
        return h;
    }

    std::string hash_hex() const {
        static const char* digits = "0123456789abcdef";
        std::uint64_t h = hash();
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }
};

// Deterministic response for a single-recording task.
inline std::string answer_for(TaskType task, const SoundLabel& l) {
    using audio::Modality;
    const std::string sev = detail::sev_adj(l.severity);
    switch (task) {
        case TaskType::classification:
            if (!label_is_abnormal(l))
                return "this recording is normal; no adventitious sounds are "
                       "present.";
            return "this recording is abnormal; " + detail::finding_noun(l) +
                   (l.finding == Finding::murmur ||
                            l.modality == Modality::cough
                        ? " can be heard."
                        : " can be heard throughout.");
        case TaskType::detection:
            switch (l.finding) {
                case Finding::normal:
                    return l.modality == Modality::cardiac
                               ? "heart sounds are normal with a regular "
                                 "rhythm and no murmur."
                               : "breath sounds are clear with no added "
                                 "sounds.";
                case Finding::wheeze:
                    return sev + "wheezing is audible in this recording.";
                case Finding::crackle:
                    return sev + "crackles are audible in this recording.";
                case Finding::murmur:
                    return "a " + sev +
                           "murmur is audible between the heart sounds.";
                case Finding::cough_covid_pos:
                    return "a cough is present and the pattern sounds covid "
                           "positive.";
                case Finding::cough_covid_neg:
                    return "a cough is present and the pattern sounds covid "
                           "negative.";
            }
            break;
        case TaskType::reporting:
            return "site: " + l.location + ". findings: " +
                   detail::finding_noun(l) + ". impression: " +
                   (label_is_abnormal(l) ? "abnormal." : "normal.");
        case TaskType::reasoning:
            switch (l.finding) {
                case Finding::normal:
                    return l.modality == Modality::cardiac
                               ? "two crisp heart sounds repeat at a steady "
                                 "rate with a quiet interval between them, "
                                 "so the recording is normal."
                               : "the breath cycle is smooth with no added "
                                 "tones or transients, which indicates open "
                                 "airways; this recording is normal.";
                case Finding::wheeze:
                    return "a continuous musical tone rides on expiration, "
                           "which indicates airway narrowing; this points "
                           "to " +
                           sev + "wheezing.";
                case Finding::crackle:
                    return "brief popping transients punctuate the breaths, "
                           "which indicates sudden airway reopening; this "
                           "points to " +
                           sev + "crackles.";
                case Finding::murmur:
                    return "a rushing noise fills the interval between the "
                           "two heart sounds, which indicates turbulent "
                           "flow; this points to a " +
                           sev + "murmur.";
                case Finding::cough_covid_pos:
                    return "the cough bursts carry extra high frequency "
                           "energy, a pattern consistent with covid "
                           "positive status.";
                case Finding::cough_covid_neg:
                    return "the cough bursts keep a balanced spectrum, a "
                           "pattern consistent with covid negative status.";
            }
            break;
        case TaskType::ddx:
            switch (l.finding) {
                case Finding::normal:
                    return l.modality == Modality::cardiac
                               ? "no differential is needed; the heart "
                                 "sounds healthy."
                               : "no differential is needed; the lungs "
                                 "sound healthy.";
                case Finding::wheeze:
                    return "asthma, copd, or bronchitis.";
                case Finding::crackle:
                    return "pneumonia, fibrosis, or heart failure.";
                case Finding::murmur:
                    return "aortic stenosis or mitral regurgitation.";
                case Finding::cough_covid_pos:
                    return "covid infection or another viral illness.";
                case Finding::cough_covid_neg:
                    return "a common cold or an irritant cough.";
            }
            break;
        case TaskType::location:
            return "this sound was captured at the " + l.location + ".";
        case TaskType::comparison:
            throw std::invalid_argument(
                "answer_for: comparison needs two labels");
    }
    throw std::invalid_argument("answer_for: unhandled task/label");
}

// Deterministic response for a comparison pair; two styles per pair.
inline std::string comparison_answer(int style, const SoundLabel& a,
                                     const SoundLabel& b) {
    const std::string da = detail::finding_noun(a);
    const std::string db = detail::finding_noun(b);
    if (style == 0)
        return "the first recording shows " + da +
               ", while the second shows " + db + ".";
    const bool aa = label_is_abnormal(a);
    const bool ab = label_is_abnormal(b);
    if (aa && ab)
        return "both recordings are abnormal; the first shows " + da +
               " and the second shows " + db + ".";
    if (!aa && !ab)
        return "both recordings sound normal; the first offers " + da +
               " and the second offers " + db + ".";
    if (ab)
        return "the second recording is abnormal; it contains " + db +
               ", while the first sounds normal.";
    return "the first recording is abnormal; it contains " + da +
           ", while the second sounds normal.";
}

}  // namespace auscult::data
