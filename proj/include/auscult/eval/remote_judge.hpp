#pragma once

// Optional remote judge speaking a chat-completion wire protocol: POST
// {model, messages:[{role, content}]} and read back
// {choices:[{message:{content}}]}, where content must itself parse as
// {"answer":"Yes"} or {"answer":"No"}. Anything else — timeouts,
// transport errors, malformed or off-protocol JSON — yields verdict
// `unavailable`; a remote failure is never coerced into a yes/no. The
// rule-based judge remains the authoritative offline backend.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "judge.hpp"

namespace auscult::eval {

struct RemoteJudgeConfig {
    std::string url;    // full endpoint, e.g. http://host:8000/v1/judge
    std::string token;  // optional bearer token
    std::string model = "judge-1";
    double timeout_seconds = 10.0;
};

// Reads JUDGE_URL (required) and JUDGE_TOKEN (optional) from the
// environment; absent URL means "no remote judge configured".
inline std::optional<RemoteJudgeConfig> remote_judge_from_env() {
    const char* url = std::getenv("JUDGE_URL");
    if (url == nullptr || *url == '\0') return std::nullopt;
    RemoteJudgeConfig cfg;
    cfg.url = url;
    if (const char* tok = std::getenv("JUDGE_TOKEN")) cfg.token = tok;
    return cfg;
}

// Instruction sent to the remote model; each variant states its own
// tolerance for omissions and additions, and all demand the strict JSON
// answer shape.
inline std::string judge_prompt(const std::string& reference,
                                const std::string& generated,
                                PromptVariant variant) {
    std::string rules;
    switch (variant) {
        case PromptVariant::v1:
            rules =
                "Decide whether the candidate reasonably captures the key "
                "clinical information of the reference. Minor wording "
                "differences or small missing details are acceptable.";
            break;
        case PromptVariant::v2_lenient:
            rules =
                "Decide whether the candidate identifies the single most "
                "important clinical finding of the reference. Ignore "
                "missing secondary details.";
            break;
        case PromptVariant::v3_strict:
            rules =
                "Decide whether the candidate states every clinical fact "
                "in the reference without introducing unsupported clinical "
                "claims. Missing or incorrect clinical information means "
                "No.";
            break;
    }
    return "You are comparing two short auscultation answers.\n"
           "Reference answer: " +
           reference + "\nCandidate answer: " + generated + "\n" + rules +
           "\nRespond ONLY in JSON as {\"answer\":\"Yes\"} or "
           "{\"answer\":\"No\"}.";
}

inline nlohmann::json build_judge_request(const RemoteJudgeConfig& cfg,
                                          const std::string& reference,
                                          const std::string& generated,
                                          PromptVariant variant) {
    return nlohmann::json{
        {"model", cfg.model},
        {"messages",
         {{{"role", "user"},
           {"content", judge_prompt(reference, generated, variant)}}}}};
}

// Strict protocol parse; std::nullopt on any deviation.
inline std::optional<JudgeAnswer> parse_judge_response(
    const std::string& body) {
    nlohmann::json outer = nlohmann::json::parse(body, nullptr, false);
    if (outer.is_discarded()) return std::nullopt;
    if (!outer.contains("choices") || !outer["choices"].is_array() ||
        outer["choices"].empty())
        return std::nullopt;
    const nlohmann::json& first = outer["choices"][0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string())
        return std::nullopt;
    nlohmann::json inner = nlohmann::json::parse(
        first["message"]["content"].get<std::string>(), nullptr, false);
    if (inner.is_discarded() || !inner.is_object() ||
        !inner.contains("answer") || !inner["answer"].is_string())
        return std::nullopt;
    const std::string a = inner["answer"].get<std::string>();
    if (a == "Yes") return JudgeAnswer::yes;
    if (a == "No") return JudgeAnswer::no;
    return std::nullopt;
}

namespace detail {

// Splits a full URL into the client base (scheme://host[:port]) and the
// request path.
inline bool split_url(const std::string& url, std::string& base,
                      std::string& path) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) return false;
    const std::size_t slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) {
        base = url;
        path = "/";
    } else {
        base = url.substr(0, slash);
        path = url.substr(slash);
    }
    return true;
}

}  // namespace detail

inline JudgeVerdict judge_remote(const RemoteJudgeConfig& cfg,
                                 const std::string& reference,
                                 const std::string& generated,
                                 PromptVariant variant) {
    JudgeVerdict v{JudgeAnswer::unavailable, cfg.model, to_string(variant)};
    std::string base, path;
    if (!detail::split_url(cfg.url, base, path)) return v;

    httplib::Client client(base);
    const auto timeout = std::chrono::milliseconds(
        static_cast<std::int64_t>(cfg.timeout_seconds * 1000.0));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!cfg.token.empty())
        headers.emplace("Authorization", "Bearer " + cfg.token);

    const std::string body =
        build_judge_request(cfg, reference, generated, variant).dump();
    const httplib::Result res =
        client.Post(path, headers, body, "application/json");
    if (!res || res->status != 200) return v;
    if (const auto answer = parse_judge_response(res->body))
        v.answer = *answer;
    return v;
}

}  // namespace auscult::eval
