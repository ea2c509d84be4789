// Dataset generation: lexicon extraction, template answers, tokenizer
// closure, per-task allocation, split balancing, and held-out routing.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "auscult/data.hpp"

using namespace auscult;
using namespace auscult::data;
using nn::RandomStream;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

SoundLabel mk_label(Modality m, Finding f, Severity sv,
                    const std::string& id = "rec-test",
                    std::uint64_t seed = 1) {
    SoundLabel l;
    l.id = id;
    l.modality = m;
    l.finding = f;
    l.severity = sv;
    l.location = sites_for(m)[0];
    l.seed = seed;
    return l;
}

int count_substr(const std::string& hay, const std::string& needle) {
    int n = 0;
    std::size_t pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

}  // namespace

TEST_CASE("lexicon extracts finding mentions with negation and bigrams") {
    CHECK(extract_findings("Mild WHEEZING is audible.") ==
          std::set<Finding>{Finding::wheeze});
    CHECK(extract_findings("there are crackles and a murmur") ==
          std::set<Finding>{Finding::crackle, Finding::murmur});
    CHECK(extract_findings("no murmur is heard").empty());
    CHECK(extract_findings("not wheezing, just breathing").empty());
    CHECK(extract_findings("breath sounds are clear") ==
          std::set<Finding>{Finding::normal});
    CHECK(extract_findings("pattern sounds covid positive") ==
          std::set<Finding>{Finding::cough_covid_pos});
    CHECK(extract_findings("covid negative overall") ==
          std::set<Finding>{Finding::cough_covid_neg});
    CHECK(extract_findings("covid status unknown").empty());
    // Negated normal must not count as a normal mention.
    CHECK(extract_findings("the rhythm is not normal").empty());
}

TEST_CASE("normalize_words lowercases and strips punctuation") {
    const auto w = normalize_words("Site: left upper chest. Impression?");
    REQUIRE(w == std::vector<std::string>{"site", "left", "upper", "chest",
                                          "impression"});
}

TEST_CASE("template bank has at least four phrasings per task") {
    const TemplateBank& bank = TemplateBank::standard();
    for (TaskType t : all_tasks()) {
        INFO(to_string(t));
        REQUIRE(bank.instructions.at(t).size() >= 4);
    }
}

TEST_CASE("template bank hash is stable and sensitive") {
    const TemplateBank& bank = TemplateBank::standard();
    CHECK(bank.hash_hex() == TemplateBank::standard().hash_hex());
    REQUIRE(bank.hash_hex().size() == 16);
    TemplateBank changed = bank;
    changed.instructions[TaskType::ddx].push_back("another phrasing?");
    CHECK(changed.hash_hex() != bank.hash_hex());
    TemplateBank bumped = bank;
    bumped.answer_version = "answers-v2";
    CHECK(bumped.hash_hex() != bank.hash_hex());
}

TEST_CASE("answer functions are deterministic and mention the finding") {
    const auto wheeze =
        mk_label(Modality::respiratory, Finding::wheeze, Severity::mild);
    CHECK(answer_for(TaskType::classification, wheeze) ==
          answer_for(TaskType::classification, wheeze));
    CHECK(answer_for(TaskType::classification, wheeze).find("abnormal") !=
          std::string::npos);
    CHECK(answer_for(TaskType::detection, wheeze).find("wheez") !=
          std::string::npos);

    const auto normal =
        mk_label(Modality::respiratory, Finding::normal, Severity::none);
    CHECK(answer_for(TaskType::classification, normal).find("normal") !=
          std::string::npos);
    CHECK(extract_findings(answer_for(TaskType::detection, normal)) ==
          std::set<Finding>{Finding::normal});

    // Reporting embeds the site and an impression keyword.
    const std::string rep = answer_for(TaskType::reporting, wheeze);
    CHECK(rep.find(wheeze.location) != std::string::npos);
    CHECK(rep.find("abnormal") != std::string::npos);

    // Location answers embed the site.
    CHECK(answer_for(TaskType::location, wheeze).find(wheeze.location) !=
          std::string::npos);

    // Severity adjective appears for graded findings.
    const auto severe =
        mk_label(Modality::respiratory, Finding::crackle, Severity::severe);
    CHECK(answer_for(TaskType::detection, severe).find("severe") !=
          std::string::npos);
}

TEST_CASE("comparison answers mention the differing finding exactly once") {
    const auto normal =
        mk_label(Modality::respiratory, Finding::normal, Severity::none);
    const auto crackle =
        mk_label(Modality::respiratory, Finding::crackle, Severity::mild);
    const std::string s0 = comparison_answer(0, normal, crackle);
    CHECK(count_substr(s0, "crackle") == 1);
    CHECK(extract_findings(s0).count(Finding::crackle) == 1);
    const std::string s1 = comparison_answer(1, normal, crackle);
    CHECK(s1.find("second recording is abnormal") != std::string::npos);
    CHECK(count_substr(s1, "crackle") == 1);
    const std::string s1r = comparison_answer(1, crackle, normal);
    CHECK(s1r.find("first recording is abnormal") != std::string::npos);
}

TEST_CASE("comparison answers stay within forty words for all label pairs") {
    std::vector<SoundLabel> combos;
    for (Modality m :
         {Modality::respiratory, Modality::cardiac, Modality::cough})
        for (Finding f : {Finding::normal, Finding::wheeze, Finding::crackle,
                          Finding::murmur, Finding::cough_covid_pos,
                          Finding::cough_covid_neg}) {
            if (!audio::finding_valid_for(m, f)) continue;
            const std::vector<Severity> sevs =
                f == Finding::normal
                    ? std::vector<Severity>{Severity::none}
                    : std::vector<Severity>{Severity::none, Severity::mild,
                                            Severity::severe};
            for (Severity sv : sevs) combos.push_back(mk_label(m, f, sv));
        }
    bool all_ok = true;
    for (const SoundLabel& a : combos)
        for (const SoundLabel& b : combos)
            for (int style : {0, 1}) {
                const std::size_t n =
                    normalize_words(comparison_answer(style, a, b)).size();
                all_ok = all_ok && n <= 40;
            }
    CHECK(all_ok);
}

TEST_CASE("tokenizer closure covers everything the bank can produce") {
    const Tokenizer& tok = Tokenizer::standard();
    REQUIRE(tok.vocab_size() > Tokenizer::kNumSpecials + 50);
    REQUIRE(tok.vocab_size() < 1000);
    // Vocabulary is sorted and unique.
    const auto& words = tok.vocab_words();
    CHECK(std::is_sorted(words.begin(), words.end()));
    CHECK(std::adjacent_find(words.begin(), words.end()) == words.end());
    // Every producible string encodes without error.
    bool ok = true;
    for (const std::string& s :
         Tokenizer::template_corpus(TemplateBank::standard())) {
        try {
            const auto ids = tok.encode(s);
            ok = ok && !ids.empty();
        } catch (const std::exception&) {
            ok = false;
        }
    }
    CHECK(ok);
}

TEST_CASE("tokenizer round trip and specials") {
    const Tokenizer& tok = Tokenizer::standard();
    CHECK(Tokenizer::kPad == 0);
    CHECK(Tokenizer::kBos == 1);
    CHECK(Tokenizer::kEos == 2);
    CHECK(Tokenizer::kSep == 3);
    const std::string text = "is this recording normal or abnormal?";
    const auto ids = tok.encode(text);
    REQUIRE(ids.size() == 6);
    CHECK(tok.decode(ids) == "is this recording normal or abnormal");
    // Specials are skipped on decode.
    auto with_specials = ids;
    with_specials.insert(with_specials.begin(), Tokenizer::kBos);
    with_specials.push_back(Tokenizer::kEos);
    CHECK(tok.decode(with_specials) ==
          "is this recording normal or abnormal");
    CHECK_THROWS_WITH(tok.encode("zebra"),
                      Catch::Matchers::ContainsSubstring("zebra"));
    // Rebuild from the frozen vocab gives identical encodings.
    const Tokenizer tok2 = Tokenizer::from_vocab(tok.vocab_words());
    CHECK(tok2.encode(text) == ids);
}

TEST_CASE("single wheeze label yields six examples with coherent text") {
    const auto wheeze = mk_label(Modality::respiratory, Finding::wheeze,
                                 Severity::mild, "rec-00000");
    const auto ex = generate_pairs({wheeze}, TemplateBank::standard(),
                                   RandomStream(5));
    REQUIRE(ex.size() == 6);
    int n_cls = 0, n_det = 0;
    std::set<std::string> det_instructions;
    for (const TrainingExample& e : ex) {
        CHECK(e.audio_ref ==
              std::vector<std::string>{"audio/rec-00000.wav"});
        CHECK_FALSE(e.instruction.empty());
        CHECK_FALSE(e.response.empty());
        if (e.task == TaskType::classification) {
            ++n_cls;
            CHECK(e.response.find("abnormal") != std::string::npos);
        }
        if (e.task == TaskType::detection) {
            ++n_det;
            CHECK(e.response.find("wheez") != std::string::npos);
            det_instructions.insert(e.instruction);
        }
    }
    CHECK(n_cls >= 1);
    CHECK(n_det >= 1);
    // Repeated tasks on one recording use distinct phrasings.
    CHECK(det_instructions.size() == static_cast<std::size_t>(n_det));
}

TEST_CASE("five hundred labels produce the exact example count and shares") {
    const auto labels = sample_labels(500, 0.0, RandomStream(13));
    REQUIRE(labels.size() == 500);
    const auto ex =
        generate_pairs(labels, TemplateBank::standard(), RandomStream(13));
    REQUIRE(ex.size() == 500 * 6 + (500 * 3 / 10) * 2);

    std::map<TaskType, double> share;
    for (const TrainingExample& e : ex)
        share[e.task] += 100.0 / static_cast<double>(ex.size());
    const std::map<TaskType, double> target{
        {TaskType::detection, 25.9},  {TaskType::classification, 21.5},
        {TaskType::reporting, 16.7},  {TaskType::reasoning, 11.8},
        {TaskType::ddx, 11.6},        {TaskType::comparison, 4.6},
        {TaskType::location, 4.6}};
    for (const auto& [task, pct] : target) {
        INFO(to_string(task) << " share " << share[task]);
        CHECK(std::fabs(share[task] - pct) <= 5.0);
    }

    // Every example satisfies the token budget.
    const Tokenizer& tok = Tokenizer::standard();
    bool budget_ok = true;
    for (const TrainingExample& e : ex)
        budget_ok = budget_ok && tok.encode(e.instruction).size() +
                                         tok.encode(e.response).size() <=
                                     64;
    CHECK(budget_ok);

    // Comparison examples reference two recordings with distinct findings.
    bool pairs_ok = true;
    for (const TrainingExample& e : ex) {
        if (e.task == TaskType::comparison)
            pairs_ok = pairs_ok && e.is_pair() &&
                       e.label[0].finding != e.label[1].finding;
        else
            pairs_ok = pairs_ok && !e.is_pair();
    }
    CHECK(pairs_ok);
}

TEST_CASE("generation is deterministic for a fixed seed") {
    const auto labels = sample_labels(40, 0.1, RandomStream(99));
    const auto a =
        generate_pairs(labels, TemplateBank::standard(), RandomStream(7));
    const auto b =
        generate_pairs(labels, TemplateBank::standard(), RandomStream(7));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(nlohmann::json(a[i]) == nlohmann::json(b[i]));
}

TEST_CASE("token budget violations skip to the next phrasing or error") {
    // The filler word must be in-vocabulary so only the budget can fail.
    TemplateBank bank = TemplateBank::standard();
    std::string monster = "recording";
    for (int i = 0; i < 70; ++i) monster += " recording";
    // One oversized phrasing among fits: generation silently avoids it.
    bank.instructions[TaskType::detection].push_back(monster);
    const auto wheeze = mk_label(Modality::respiratory, Finding::wheeze,
                                 Severity::mild, "rec-00000");
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ex = generate_pairs({wheeze}, bank, RandomStream(seed));
        bool saw_detection = false;
        for (const TrainingExample& e : ex) {
            saw_detection = saw_detection || e.task == TaskType::detection;
            CHECK(e.instruction.find(monster) == std::string::npos);
        }
        CHECK(saw_detection);
    }
    // All phrasings oversized: error names the template.
    TemplateBank broken = TemplateBank::standard();
    broken.instructions[TaskType::detection] = {
        monster, monster + " normal", monster + " abnormal",
        monster + " sounds"};
    CHECK_THROWS_WITH(
        generate_pairs({wheeze}, broken, RandomStream(3)),
        Catch::Matchers::ContainsSubstring("token budget") &&
            Catch::Matchers::ContainsSubstring("recording recording"));
}

TEST_CASE("pair generation requires differing findings somewhere") {
    const auto a = mk_label(Modality::respiratory, Finding::wheeze,
                            Severity::mild, "rec-00000", 1);
    const auto b = mk_label(Modality::respiratory, Finding::wheeze,
                            Severity::mild, "rec-00001", 2);
    CHECK_THROWS_WITH(
        generate_pairs({a, b, a, b}, TemplateBank::standard(),
                       RandomStream(3)),
        Catch::Matchers::ContainsSubstring("differing"));
}

TEST_CASE("balance_and_split hits sizes, disjointness, and task balance") {
    const auto labels = sample_labels(500, 0.0, RandomStream(21));
    auto ex =
        generate_pairs(labels, TemplateBank::standard(), RandomStream(21));
    const auto total = static_cast<std::int64_t>(ex.size());
    const Manifest m = balance_and_split(std::move(ex), {0.8, 0.1, 0.1},
                                         RandomStream(22));
    REQUIRE(static_cast<std::int64_t>(m.examples.size()) == total);

    std::map<Split, std::int64_t> sizes;
    std::map<Split, std::set<std::string>> refs;
    std::map<Split, std::map<TaskType, std::int64_t>> task_counts;
    for (const TrainingExample& e : m.examples) {
        sizes[e.split] += 1;
        for (const std::string& r : e.audio_ref) refs[e.split].insert(r);
        task_counts[e.split][e.task] += 1;
    }

    const auto targets = std::vector<std::int64_t>{
        static_cast<std::int64_t>(std::llround(0.8 * double(total))),
        static_cast<std::int64_t>(std::llround(0.1 * double(total))),
        static_cast<std::int64_t>(std::llround(0.1 * double(total)))};
    CHECK(std::llabs(sizes[Split::train] - targets[0]) <= 1);
    CHECK(std::llabs(sizes[Split::val] - targets[1]) <= 1);
    CHECK(std::llabs(sizes[Split::test] - targets[2]) <= 1);

    for (Split s1 : {Split::train, Split::val, Split::test})
        for (Split s2 : {Split::train, Split::val, Split::test}) {
            if (s1 == s2) continue;
            std::vector<std::string> inter;
            std::set_intersection(refs[s1].begin(), refs[s1].end(),
                                  refs[s2].begin(), refs[s2].end(),
                                  std::back_inserter(inter));
            INFO(to_string(s1) << " vs " << to_string(s2));
            CHECK(inter.empty());
        }

    for (TaskType t : all_tasks()) {
        std::vector<double> shares;
        for (Split s : {Split::train, Split::val, Split::test})
            shares.push_back(100.0 *
                             static_cast<double>(task_counts[s][t]) /
                             static_cast<double>(sizes[s]));
        const double lo = *std::min_element(shares.begin(), shares.end());
        const double hi = *std::max_element(shares.begin(), shares.end());
        INFO(to_string(t) << " spread " << (hi - lo));
        CHECK(hi - lo <= 2.0);
    }
}

TEST_CASE("balance_and_split validates inputs") {
    const auto wheeze = mk_label(Modality::respiratory, Finding::wheeze,
                                 Severity::mild, "rec-00000");
    const auto normal = mk_label(Modality::respiratory, Finding::normal,
                                 Severity::none, "rec-00001");
    auto ex = generate_pairs({wheeze, normal}, TemplateBank::standard(),
                             RandomStream(3));
    CHECK_THROWS_WITH(balance_and_split(ex, {0.8, 0.1, 0.1},
                                        RandomStream(1)),
                      Catch::Matchers::ContainsSubstring("too few"));
    CHECK_THROWS_WITH(balance_and_split(ex, {0.8, 0.3, 0.1},
                                        RandomStream(1)),
                      Catch::Matchers::ContainsSubstring("sum to 1"));
}

TEST_CASE("build_dataset routes held-out labels to the ood split only") {
    const DatasetBundle bundle = build_dataset(200, 13);
    REQUIRE(bundle.labels.size() == 200);
    std::int64_t n_held = 0;
    for (const SoundLabel& l : bundle.labels) n_held += is_held_out(l);
    CHECK(n_held == 20);

    std::int64_t n_ood = 0;
    bool routing_ok = true;
    for (const TrainingExample& e : bundle.manifest.examples) {
        bool held = false;
        for (const SoundLabel& l : e.label) held = held || is_held_out(l);
        if (e.split == Split::ood) {
            ++n_ood;
            routing_ok = routing_ok && held;
        } else {
            routing_ok = routing_ok && !held;
        }
    }
    CHECK(routing_ok);
    CHECK(n_ood >= 6 * 20);

    // Held-out semantics: no severe labels and no covid-positive labels
    // outside ood.
    bool clean = true;
    for (const TrainingExample& e : bundle.manifest.examples) {
        if (e.split == Split::ood) continue;
        for (const SoundLabel& l : e.label)
            clean = clean && l.severity != Severity::severe &&
                    l.finding != Finding::cough_covid_pos;
    }
    CHECK(clean);

    // The whole manifest passes the mechanical consistency check.
    verify_manifest(bundle.manifest, TemplateBank::standard());

    // Example ids are unique and sequential.
    std::set<std::string> ids;
    for (const TrainingExample& e : bundle.manifest.examples)
        ids.insert(e.example_id);
    CHECK(ids.size() == bundle.manifest.examples.size());
}

TEST_CASE("make_ood_set rejects leaks in both directions") {
    const auto wheeze = mk_label(Modality::respiratory, Finding::wheeze,
                                 Severity::severe, "rec-00000");
    const auto normal = mk_label(Modality::respiratory, Finding::normal,
                                 Severity::none, "rec-00001");
    Manifest m;
    m.template_bank_hash = TemplateBank::standard().hash_hex();
    TrainingExample leak;
    leak.example_id = "ex-000000";
    leak.audio_ref = {audio_path_for(wheeze.id)};
    leak.task = TaskType::detection;
    leak.instruction = "what sounds are present in this recording?";
    leak.response = answer_for(TaskType::detection, wheeze);
    leak.split = Split::train;
    leak.label = {wheeze};
    m.examples = {leak};
    CHECK_THROWS_WITH(make_ood_set(m, {}),
                      Catch::Matchers::ContainsSubstring("leaked"));

    Manifest ok;
    ok.template_bank_hash = TemplateBank::standard().hash_hex();
    TrainingExample not_held = leak;
    not_held.label = {normal};
    not_held.audio_ref = {audio_path_for(normal.id)};
    not_held.response = answer_for(TaskType::detection, normal);
    CHECK_THROWS_WITH(make_ood_set(ok, {not_held}),
                      Catch::Matchers::ContainsSubstring("non-held-out"));
}

TEST_CASE("manifest jsonl round trip is byte-identical") {
    const DatasetBundle bundle = build_dataset(60, 5);
    const auto dir = std::filesystem::temp_directory_path() / "auscult_data";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "manifest_a.jsonl").string();
    const std::string p2 = (dir / "manifest_b.jsonl").string();
    bundle.manifest.write_jsonl(p1);

    const Manifest back = Manifest::read_jsonl(p1);
    CHECK(back.version == bundle.manifest.version);
    CHECK(back.vocab == bundle.manifest.vocab);
    CHECK(back.template_bank_hash == bundle.manifest.template_bank_hash);
    REQUIRE(back.examples.size() == bundle.manifest.examples.size());
    for (std::size_t i = 0; i < back.examples.size(); ++i)
        CHECK(nlohmann::json(back.examples[i]) ==
              nlohmann::json(bundle.manifest.examples[i]));
    back.write_jsonl(p2);
    CHECK(slurp(p1) == slurp(p2));

    // Re-running the full pipeline reproduces the same bytes.
    const DatasetBundle again = build_dataset(60, 5);
    const std::string p3 = (dir / "manifest_c.jsonl").string();
    again.manifest.write_jsonl(p3);
    CHECK(slurp(p1) == slurp(p3));

    CHECK_THROWS_AS(Manifest::read_jsonl((dir / "missing.jsonl").string()),
                    std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sample_labels composition is valid and reproducible") {
    const auto labels = sample_labels(300, 0.1, RandomStream(4));
    REQUIRE(labels.size() == 300);
    std::int64_t held = 0, normal_cnt = 0;
    std::set<std::string> ids;
    for (const SoundLabel& l : labels) {
        audio::validate_label(l);
        ids.insert(l.id);
        held += is_held_out(l);
        normal_cnt += l.finding == Finding::normal;
    }
    CHECK(ids.size() == labels.size());
    CHECK(held == 30);
    // Roughly half the in-domain recordings are normal by design.
    CHECK(normal_cnt > 90);
    CHECK(normal_cnt < 190);
    const auto again = sample_labels(300, 0.1, RandomStream(4));
    for (std::size_t i = 0; i < labels.size(); ++i)
        CHECK(nlohmann::json(labels[i]) == nlohmann::json(again[i]));
}
