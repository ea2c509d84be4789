#pragma once

// Dataset construction: label sampling, instruction-response generation
// with exact per-task allocation, recording-disjoint split balancing, and
// held-out (OOD) extraction. Everything is a pure function of the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "../nn/rng.hpp"
#include "examples.hpp"
#include "templates.hpp"
#include "tokenizer.hpp"

namespace auscult::data {

using audio::Modality;
using nn::RandomStream;

inline std::string audio_path_for(const std::string& recording_id) {
    return "audio/" + recording_id + ".wav";
}

// Held-out semantics: one whole cough class plus one severity level never
// appear in train/val/test.
inline const std::set<Finding>& held_out_findings() {
    static const std::set<Finding> s{Finding::cough_covid_pos};
    return s;
}
inline constexpr Severity kHeldOutSeverity = Severity::severe;

inline bool is_held_out(const SoundLabel& l) {
    return held_out_findings().count(l.finding) > 0 ||
           l.severity == kHeldOutSeverity;
}

namespace detail {

template <typename T>
void shuffle(std::vector<T>& v, RandomStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

// Single-audio tasks with their target proportions (sum 92.1; comparison's
// 4.6 is handled by the pairing rate).
struct TaskShare {
    TaskType task;
    double share;
};
inline const std::vector<TaskShare>& single_task_shares() {
    static const std::vector<TaskShare> s{
        {TaskType::detection, 25.9},  {TaskType::classification, 21.5},
        {TaskType::reporting, 16.7},  {TaskType::reasoning, 11.8},
        {TaskType::ddx, 11.6},        {TaskType::location, 4.6}};
    return s;
}

// Largest-remainder allocation of `total` items at the given weights;
// ties rank by index so the result is deterministic.
inline std::vector<std::int64_t> largest_remainder(
    const std::vector<double>& weights, std::int64_t total) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::int64_t> base(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = static_cast<double>(total) * weights[i] / wsum;
        base[i] = static_cast<std::int64_t>(std::floor(quota));
        assigned += base[i];
        rem.push_back({quota - std::floor(quota), i});
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::int64_t k = 0; k < total - assigned; ++k)
        base[rem[static_cast<std::size_t>(k)].second] += 1;
    return base;
}

}  // namespace detail

// Samples recording labels; exactly round(ood_frac*n) of them use held-out
// combinations (covid-positive cough, or a severe finding).
inline std::vector<SoundLabel> sample_labels(std::int64_t n, double ood_frac,
                                             RandomStream rng) {
    if (n <= 0) throw std::invalid_argument("sample_labels: n must be > 0");
    const auto n_ood = static_cast<std::int64_t>(
        std::llround(ood_frac * static_cast<double>(n)));
    std::vector<int> ood_flag(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n_ood; ++i)
        ood_flag[static_cast<std::size_t>(i)] = 1;
    detail::shuffle(ood_flag, rng);

    std::vector<SoundLabel> labels;
    labels.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        SoundLabel l;
        char buf[32];
        std::snprintf(buf, sizeof buf, "rec-%05lld",
                      static_cast<long long>(i));
        l.id = buf;
        if (ood_flag[static_cast<std::size_t>(i)]) {
            if (rng.uniform() < 0.5) {
                l.modality = Modality::cough;
                l.finding = Finding::cough_covid_pos;
                l.severity = Severity::mild;
            } else {
                const std::int64_t pick = rng.uniform_int(0, 2);
                l.finding = pick == 0   ? Finding::wheeze
                            : pick == 1 ? Finding::crackle
                                        : Finding::murmur;
                l.modality = l.finding == Finding::murmur
                                 ? Modality::cardiac
                                 : Modality::respiratory;
                l.severity = Severity::severe;
            }
        } else {
            const double u = rng.uniform();
            if (u < 0.4) {
                l.modality = Modality::respiratory;
                if (rng.uniform() < 0.625) {
                    l.finding = Finding::normal;
                    l.severity = Severity::none;
                } else {
                    l.finding = rng.uniform() < 0.5 ? Finding::wheeze
                                                    : Finding::crackle;
                    l.severity = Severity::mild;
                }
            } else if (u < 0.8) {
                l.modality = Modality::cardiac;
                if (rng.uniform() < 0.625) {
                    l.finding = Finding::normal;
                    l.severity = Severity::none;
                } else {
                    l.finding = Finding::murmur;
                    l.severity = Severity::mild;
                }
            } else {
                l.modality = Modality::cough;
                l.finding = Finding::cough_covid_neg;
                l.severity = Severity::mild;
            }
        }
        const auto& sites = sites_for(l.modality);
        l.location = sites[static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<std::int64_t>(sites.size()) - 1))];
        l.seed = rng.next_u64();
        audio::validate_label(l);
        labels.push_back(l);
    }
    return labels;
}

namespace detail {

// Picks an instruction phrasing for (task, label), starting at a
// rng-chosen index and advancing past phrasings that blow the token
// budget. Exhausting all phrasings is an error naming the template.
inline std::string pick_instruction(const TemplateBank& bank, TaskType task,
                                    const std::string& response,
                                    const Tokenizer& tok,
                                    std::int64_t token_limit,
                                    std::int64_t start_index,
                                    std::int64_t skip_index = -1) {
    const std::vector<std::string>& phr = bank.instructions.at(task);
    const auto n = static_cast<std::int64_t>(phr.size());
    const auto resp_tokens =
        static_cast<std::int64_t>(tok.encode(response).size());
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t idx = (start_index + k) % n;
        if (idx == skip_index) continue;
        const std::string& ins = phr[static_cast<std::size_t>(idx)];
        const auto total =
            static_cast<std::int64_t>(tok.encode(ins).size()) + resp_tokens;
        if (total <= token_limit) return ins;
    }
    throw std::runtime_error(
        "generate: no phrasing fits the token budget for template '" +
        phr[static_cast<std::size_t>(start_index % n)] + "' (task " +
        to_string(task) + ")");
}

}  // namespace detail

// Builds instruction-response examples for the given recordings.
// Exactly 6*N single-audio examples are allocated across tasks at the
// target proportions (largest remainder), with each task's per-recording
// extras placed by seeded shuffle; plus floor(pairing_rate*N) comparison
// pairs, two examples each, drawn uniformly from differing-finding pairs.
inline std::vector<TrainingExample> generate_pairs(
    const std::vector<SoundLabel>& labels, const TemplateBank& bank,
    RandomStream rng, double pairing_rate = 0.3,
    std::int64_t token_limit = 64,
    const Tokenizer* tokenizer = nullptr) {
    if (labels.empty())
        throw std::invalid_argument("generate_pairs: labels empty");
    const Tokenizer& tok =
        tokenizer ? *tokenizer : Tokenizer::standard();
    const auto n = static_cast<std::int64_t>(labels.size());

    const auto& shares = detail::single_task_shares();
    std::vector<double> weights;
    for (const auto& s : shares) weights.push_back(s.share);
    const std::vector<std::int64_t> totals =
        detail::largest_remainder(weights, 6 * n);

    // counts[t][i]: how many examples of task t recording i receives.
    std::vector<std::vector<std::int64_t>> counts(
        shares.size(), std::vector<std::int64_t>(labels.size(), 0));
    RandomStream alloc_rng = rng.child(1);
    for (std::size_t t = 0; t < shares.size(); ++t) {
        const std::int64_t base = totals[t] / n;
        const std::int64_t extra = totals[t] % n;
        std::vector<std::int64_t> order(labels.size());
        std::iota(order.begin(), order.end(), 0);
        detail::shuffle(order, alloc_rng);
        for (std::int64_t i = 0; i < n; ++i)
            counts[t][static_cast<std::size_t>(i)] = base;
        for (std::int64_t k = 0; k < extra; ++k)
            counts[t][static_cast<std::size_t>(
                order[static_cast<std::size_t>(k)])] += 1;
    }

    std::vector<TrainingExample> out;
    RandomStream phr_rng = rng.child(2);
    std::int64_t next_id = 0;
    auto make_id = [&next_id] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "ex-%06lld",
                      static_cast<long long>(next_id++));
        return std::string(buf);
    };

    for (std::size_t i = 0; i < labels.size(); ++i) {
        const SoundLabel& l = labels[i];
        for (std::size_t t = 0; t < shares.size(); ++t) {
            const TaskType task = shares[t].task;
            const auto n_phr = static_cast<std::int64_t>(
                bank.instructions.at(task).size());
            std::int64_t prev_idx = -1;
            for (std::int64_t c = 0; c < counts[t][i]; ++c) {
                TrainingExample e;
                e.example_id = make_id();
                e.audio_ref = {audio_path_for(l.id)};
                e.task = task;
                e.label = {l};
                e.response = answer_for(task, l);
                const std::int64_t start = phr_rng.uniform_int(0, n_phr - 1);
                e.instruction = detail::pick_instruction(
                    bank, task, e.response, tok, token_limit, start,
                    prev_idx);
                const auto& phr = bank.instructions.at(task);
                prev_idx = static_cast<std::int64_t>(
                    std::find(phr.begin(), phr.end(), e.instruction) -
                    phr.begin());
                out.push_back(std::move(e));
            }
        }
    }

    // Comparison pairs: uniform over ordered pairs with differing findings.
    const auto n_pairs = static_cast<std::int64_t>(
        std::floor(pairing_rate * static_cast<double>(n)));
    if (n_pairs > 0) {
        RandomStream pair_rng = rng.child(3);
        bool any_differs = false;
        for (std::size_t a = 0; a < labels.size() && !any_differs; ++a)
            for (std::size_t b = 0; b < labels.size(); ++b)
                if (labels[a].finding != labels[b].finding) {
                    any_differs = true;
                    break;
                }
        if (!any_differs)
            throw std::runtime_error(
                "generate_pairs: no differing-finding pairs available");
        const auto& phr = bank.instructions.at(TaskType::comparison);
        // Phrasing index 2 asks which recording is abnormal and pairs with
        // the style-1 answer; the others describe the difference (style 0).
        const std::int64_t abnormal_query = 2;
        for (std::int64_t p = 0; p < n_pairs; ++p) {
            std::size_t a = 0, b = 0;
            do {
                a = static_cast<std::size_t>(pair_rng.uniform_int(0, n - 1));
                b = static_cast<std::size_t>(pair_rng.uniform_int(0, n - 1));
            } while (a == b || labels[a].finding == labels[b].finding);
            for (int style : {0, 1}) {
                TrainingExample e;
                e.example_id = make_id();
                e.audio_ref = {audio_path_for(labels[a].id),
                               audio_path_for(labels[b].id)};
                e.task = TaskType::comparison;
                e.label = {labels[a], labels[b]};
                e.response = comparison_answer(style, labels[a], labels[b]);
                if (style == 1) {
                    e.instruction =
                        phr[static_cast<std::size_t>(abnormal_query)];
                } else {
                    std::int64_t idx = pair_rng.uniform_int(
                        0, static_cast<std::int64_t>(phr.size()) - 2);
                    if (idx >= abnormal_query) ++idx;
                    e.instruction = phr[static_cast<std::size_t>(idx)];
                }
                const auto ntok =
                    static_cast<std::int64_t>(
                        tok.encode(e.instruction).size()) +
                    static_cast<std::int64_t>(tok.encode(e.response).size());
                if (ntok > token_limit)
                    throw std::runtime_error(
                        "generate: no phrasing fits the token budget for "
                        "template '" +
                        e.instruction + "' (task comparison)");
                out.push_back(std::move(e));
            }
        }
    }
    return out;
}

// Assigns splits so that recordings never straddle splits (comparison
// examples weld their two recordings into one group), split sizes land
// within +-1 of the example-count targets, and per-task proportions stay
// within 2 percentage points across splits.
inline Manifest balance_and_split(std::vector<TrainingExample> examples,
                                  const std::vector<double>& ratios,
                                  RandomStream rng,
                                  const TemplateBank& bank =
                                      TemplateBank::standard()) {
    if (ratios.size() != 3)
        throw std::invalid_argument(
            "balance_and_split: need train/val/test ratios");
    const double rsum = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(rsum - 1.0) > 1e-9)
        throw std::invalid_argument("balance_and_split: ratios must sum to 1");

    // Union-find over audio_ref strings.
    std::map<std::string, std::string> parent;
    std::function<std::string(const std::string&)> find =
        [&](const std::string& x) -> std::string {
        auto it = parent.find(x);
        if (it == parent.end()) {
            parent[x] = x;
            return x;
        }
        if (it->second == x) return x;
        const std::string root = find(it->second);
        parent[x] = root;
        return root;
    };
    auto unite = [&](const std::string& a, const std::string& b) {
        const std::string ra = find(a), rb = find(b);
        if (ra != rb) parent[std::min(ra, rb)] = std::max(ra, rb);
    };
    for (const TrainingExample& e : examples) {
        find(e.audio_ref[0]);
        if (e.is_pair()) unite(e.audio_ref[0], e.audio_ref[1]);
    }

    // Group examples by root.
    std::map<std::string, std::vector<std::size_t>> groups_by_root;
    for (std::size_t i = 0; i < examples.size(); ++i)
        groups_by_root[find(examples[i].audio_ref[0])].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [root, idxs] : groups_by_root)
        groups.push_back(std::move(idxs));
    if (groups.size() < 3)
        throw std::runtime_error(
            "balance_and_split: too few distinct recordings to keep splits "
            "disjoint");

    const auto total = static_cast<std::int64_t>(examples.size());
    const std::vector<std::int64_t> targets =
        detail::largest_remainder(ratios, total);

    // Per-task global proportions.
    std::map<TaskType, double> global_share;
    for (const TrainingExample& e : examples)
        global_share[e.task] += 1.0 / static_cast<double>(total);

    // Per-group tallies.
    struct GroupInfo {
        std::int64_t size = 0;
        std::map<TaskType, std::int64_t> by_task;
    };
    std::vector<GroupInfo> ginfo(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        ginfo[g].size = static_cast<std::int64_t>(groups[g].size());
        for (std::size_t idx : groups[g])
            ginfo[g].by_task[examples[idx].task] += 1;
    }

    // Greedy seed: largest groups first into the most-underfilled split.
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    detail::shuffle(order, rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                         return ginfo[a].size > ginfo[b].size;
                     });

    std::vector<int> assign(groups.size(), 0);
    std::vector<std::int64_t> filled(3, 0);
    std::vector<std::map<TaskType, std::int64_t>> task_cnt(3);
    auto place = [&](std::size_t g, int s) {
        assign[g] = s;
        filled[static_cast<std::size_t>(s)] += ginfo[g].size;
        for (const auto& [t, c] : ginfo[g].by_task)
            task_cnt[static_cast<std::size_t>(s)][t] += c;
    };
    auto unplace = [&](std::size_t g) {
        const int s = assign[g];
        filled[static_cast<std::size_t>(s)] -= ginfo[g].size;
        for (const auto& [t, c] : ginfo[g].by_task)
            task_cnt[static_cast<std::size_t>(s)][t] -= c;
    };
    for (std::size_t g : order) {
        int best = 0;
        double best_deficit = -1e18;
        for (int s = 0; s < 3; ++s) {
            const double deficit =
                static_cast<double>(targets[static_cast<std::size_t>(s)] -
                                    filled[static_cast<std::size_t>(s)]) /
                std::max(1.0, static_cast<double>(
                                  targets[static_cast<std::size_t>(s)]));
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        place(g, best);
    }

    // Local repair: move/swap groups to pull sizes within +-1 of target
    // and task shares within 2 points. Cost decreases monotonically.
    auto cost = [&]() {
        double c = 0.0;
        for (int s = 0; s < 3; ++s) {
            const auto su = static_cast<std::size_t>(s);
            const double over = std::fabs(
                static_cast<double>(filled[su] - targets[su]));
            c += 1000.0 * std::max(0.0, over - 1.0) + over;
            for (const auto& [t, p] : global_share) {
                const double share =
                    filled[su] > 0
                        ? static_cast<double>(task_cnt[su][t]) /
                              static_cast<double>(filled[su])
                        : 0.0;
                const double dev = std::fabs(share - p) * 100.0;
                c += 50.0 * std::max(0.0, dev - 0.9) + dev;
            }
        }
        return c;
    };
    double cur = cost();
    for (int pass = 0; pass < 12; ++pass) {
        bool improved = false;
        // Single-group moves.
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const int s0 = assign[g];
            for (int s = 0; s < 3; ++s) {
                if (s == s0) continue;
                unplace(g);
                place(g, s);
                const double c = cost();
                if (c + 1e-9 < cur) {
                    cur = c;
                    improved = true;
                    break;
                }
                unplace(g);
                place(g, s0);
            }
        }
        // Cross-split swaps: fix task shares while sizes stay put.
        for (std::size_t g1 = 0; g1 < groups.size(); ++g1) {
            for (std::size_t g2 = g1 + 1; g2 < groups.size(); ++g2) {
                const int s1 = assign[g1], s2 = assign[g2];
                if (s1 == s2) continue;
                if (std::llabs(ginfo[g1].size - ginfo[g2].size) > 2)
                    continue;
                unplace(g1);
                unplace(g2);
                place(g1, s2);
                place(g2, s1);
                const double c = cost();
                if (c + 1e-9 < cur) {
                    cur = c;
                    improved = true;
                } else {
                    unplace(g1);
                    unplace(g2);
                    place(g1, s1);
                    place(g2, s2);
                }
            }
        }
        if (!improved) break;
    }

    const Split split_of[3] = {Split::train, Split::val, Split::test};
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t idx : groups[g])
            examples[idx].split =
                split_of[static_cast<std::size_t>(assign[g])];

    Manifest m;
    m.version = 1;
    m.vocab = Tokenizer::build(Tokenizer::template_corpus(bank))
                  .vocab_words();
    m.template_bank_hash = bank.hash_hex();
    m.examples = std::move(examples);
    return m;
}

// Merges held-out examples into the manifest as the ood split, verifying
// the held-out label space never leaks into train/val/test and vice versa.
inline Manifest make_ood_set(Manifest id_manifest,
                             std::vector<TrainingExample> ood_examples,
                             const std::set<Finding>& held_out =
                                 held_out_findings(),
                             Severity held_out_severity = kHeldOutSeverity) {
    auto touches_held_out = [&](const TrainingExample& e) {
        for (const SoundLabel& l : e.label)
            if (held_out.count(l.finding) > 0 ||
                l.severity == held_out_severity)
                return true;
        return false;
    };
    for (const TrainingExample& e : id_manifest.examples)
        if (touches_held_out(e))
            throw std::runtime_error(
                "make_ood_set: held-out label leaked into split '" +
                to_string(e.split) + "' (" + e.example_id + ")");
    for (TrainingExample& e : ood_examples) {
        if (!touches_held_out(e))
            throw std::runtime_error(
                "make_ood_set: non-held-out example routed to ood (" +
                e.example_id + ")");
        e.split = Split::ood;
        id_manifest.examples.push_back(std::move(e));
    }
    return id_manifest;
}

struct DatasetBundle {
    std::vector<SoundLabel> labels;  // all recordings, id order
    Manifest manifest;               // train/val/test/ood examples
};

// Full pipeline: sample labels, generate examples for the in-domain and
// held-out partitions, balance splits, merge, renumber ids.
inline DatasetBundle build_dataset(std::int64_t n_recordings,
                                   std::uint64_t seed,
                                   const TemplateBank& bank =
                                       TemplateBank::standard(),
                                   double ood_frac = 0.10,
                                   double pairing_rate = 0.3) {
    RandomStream rng(seed);
    DatasetBundle bundle;
    bundle.labels = sample_labels(n_recordings, ood_frac, rng.child(10));

    std::vector<SoundLabel> id_labels, ood_labels;
    for (const SoundLabel& l : bundle.labels)
        (is_held_out(l) ? ood_labels : id_labels).push_back(l);

    std::vector<TrainingExample> id_examples =
        generate_pairs(id_labels, bank, rng.child(11), pairing_rate);
    std::vector<TrainingExample> ood_examples;
    if (!ood_labels.empty())
        ood_examples =
            generate_pairs(ood_labels, bank, rng.child(12), pairing_rate);

    Manifest m = balance_and_split(std::move(id_examples), {0.8, 0.1, 0.1},
                                   rng.child(13), bank);
    m = make_ood_set(std::move(m), std::move(ood_examples));
    for (std::size_t i = 0; i < m.examples.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "ex-%06lld",
                      static_cast<long long>(i));
        m.examples[i].example_id = buf;
    }
    bundle.manifest = std::move(m);
    return bundle;
}

}  // namespace auscult::data
