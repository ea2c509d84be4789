#pragma once

// Model hyperparameters. Desk-scale defaults keep everything trainable on
// one CPU core; the full-scale reference values are recorded as constants
// for documentation only and are never instantiated here.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace auscult::model {

// Full-scale reference configuration (documentation only).
inline constexpr std::int64_t kFullScaleD = 4096;
inline constexpr std::int64_t kFullScaleDA = 1280;
inline constexpr std::int64_t kFullScaleProjHidden = 2560;
inline constexpr std::int64_t kFullScaleK = 4;
inline constexpr std::int64_t kFullScaleLoraR = 16;
inline constexpr std::int64_t kFullScaleLoraAlpha = 32;
inline constexpr float kFullScaleLoraDropout = 0.1f;

struct ModelConfig {
    std::int64_t d = 128;           // LM hidden size
    std::int64_t k = 4;             // audio prefix token count
    std::int64_t n_layers = 4;      // transformer blocks
    std::int64_t n_heads = 4;       // attention heads
    std::int64_t vocab_size = 0;    // set from the tokenizer
    std::int64_t d_a = 64;          // encoder feature size
    std::int64_t proj_hidden = 128; // projection MLP hidden size
    std::int64_t lora_r = 16;
    std::int64_t lora_alpha = 32;
    float lora_dropout = 0.1f;
    std::int64_t max_seq = 96;      // tokens, including the k prefix slots
    // The transformer block cores are always frozen after init (adapted
    // only through LoRA). This flag additionally trains the token/position
    // embeddings, final layer norm, and output head, which a pretrained
    // backbone would otherwise supply; set false to freeze those too.
    bool lm_train_embeddings = true;

    void validate() const {
        if (d <= 0 || n_heads <= 0 || d % n_heads != 0)
            throw std::invalid_argument(
                "config: d must be positive and divisible by n_heads");
        if (k < 1) throw std::invalid_argument("config: k must be >= 1");
        if (lora_r < 1)
            throw std::invalid_argument("config: lora_r must be >= 1");
        if (n_layers < 1)
            throw std::invalid_argument("config: n_layers must be >= 1");
        if (vocab_size <= 4)
            throw std::invalid_argument(
                "config: vocab_size must exceed the special tokens");
        if (d_a < 1 || proj_hidden < 1)
            throw std::invalid_argument(
                "config: d_a and proj_hidden must be >= 1");
        if (max_seq < k + 2)
            throw std::invalid_argument(
                "config: max_seq must fit the prefix plus text");
        if (lora_dropout < 0.0f || lora_dropout >= 1.0f)
            throw std::invalid_argument(
                "config: lora_dropout must be in [0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"k", c.k},
                       {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},
                       {"vocab_size", c.vocab_size},
                       {"d_a", c.d_a},
                       {"proj_hidden", c.proj_hidden},
                       {"lora_r", c.lora_r},
                       {"lora_alpha", c.lora_alpha},
                       {"lora_dropout", c.lora_dropout},
                       {"max_seq", c.max_seq},
                       {"lm_train_embeddings", c.lm_train_embeddings}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("d").get_to(c.d);
    j.at("k").get_to(c.k);
    j.at("n_layers").get_to(c.n_layers);
    j.at("n_heads").get_to(c.n_heads);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("d_a").get_to(c.d_a);
    j.at("proj_hidden").get_to(c.proj_hidden);
    j.at("lora_r").get_to(c.lora_r);
    j.at("lora_alpha").get_to(c.lora_alpha);
    j.at("lora_dropout").get_to(c.lora_dropout);
    j.at("max_seq").get_to(c.max_seq);
    if (j.contains("lm_train_embeddings"))
        j.at("lm_train_embeddings").get_to(c.lm_train_embeddings);
}

}  // namespace auscult::model
