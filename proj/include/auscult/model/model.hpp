#pragma once

// The multimodal model: strided conv audio encoder, 3-layer projection MLP
// emitting k prefix tokens, and a pre-norm decoder-only transformer whose
// attention projections carry LoRA adapters. The transformer block cores
// are frozen at init; adaptation flows through the adapters (and, by
// default, the embeddings/final-norm/head, which stand in for what a
// pretrained backbone would provide).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "../audio/mel.hpp"
#include "../nn.hpp"
#include "config.hpp"

namespace auscult::model {

using audio::MelSpectrogram;
using nn::RandomStream;
using nn::Shape;
using nn::Tape;
using nn::Tensor;

// Input normalization constants for log-mel values (fixed, not
// data-dependent, so a zero spectrogram still maps to finite features).
inline constexpr float kMelInputShift = 8.0f;
inline constexpr float kMelInputScale = 0.25f;

struct InputSequence {
    Tensor z_audio;  // [k, d] prefix tokens
    std::vector<std::int32_t> instruction_ids;
    std::vector<std::int32_t> response_ids;
};

// Per-layer attention probabilities captured during a forward pass;
// each entry has shape [B*n_heads, L, L].
struct AttnCapture {
    std::vector<Tensor> per_layer;
    std::int64_t batch = 0;
    std::int64_t heads = 0;
};

struct GenerateOptions {
    bool greedy = true;
    float temperature = 1.0f;
    std::int64_t max_new = 40;
    std::int32_t eos_id = 2;
};

class Model {
  public:
    ModelConfig cfg;

    static Model init(const ModelConfig& cfg, RandomStream rng) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        const std::int64_t d = cfg.d, r = cfg.lora_r;
        const std::int64_t channels[5] = {1, 8, 16, 32, cfg.d_a};

        auto gaussian_fill = [&rng](Tensor& t, float sigma) {
            float* p = t.data();
            for (std::int64_t i = 0; i < t.numel(); ++i)
                p[i] = rng.gaussian_f(0.0f, sigma);
        };
        auto add_param = [&m](const std::string& name, Tensor t,
                              bool trainable) {
            t.impl_ptr()->requires_grad = trainable;
            m.named_.push_back({name, t});
            m.index_[name] = m.named_.size() - 1;
            return t;
        };

        for (int i = 0; i < 4; ++i) {
            Tensor w = Tensor::zeros(
                {channels[i + 1], channels[i], 2, 2}, false);
            const float sigma = std::sqrt(
                2.0f / static_cast<float>(channels[i] * 4));
            gaussian_fill(w, sigma);
            add_param("enc.conv" + std::to_string(i) + ".w", w, true);
            add_param("enc.conv" + std::to_string(i) + ".b",
                      Tensor::zeros({channels[i + 1]}, false), true);
        }

        Tensor pw1 = Tensor::zeros({cfg.d_a, cfg.proj_hidden}, false);
        Tensor pw2 = Tensor::zeros({cfg.proj_hidden, cfg.proj_hidden}, false);
        Tensor pw3 = Tensor::zeros({cfg.proj_hidden, cfg.k * d}, false);
        gaussian_fill(pw1, std::sqrt(2.0f / static_cast<float>(cfg.d_a)));
        gaussian_fill(pw2,
                      std::sqrt(2.0f / static_cast<float>(cfg.proj_hidden)));
        gaussian_fill(pw3,
                      std::sqrt(2.0f / static_cast<float>(cfg.proj_hidden)));
        add_param("proj.w1", pw1, true);
        add_param("proj.w2", pw2, true);
        add_param("proj.w3", pw3, true);
        add_param("proj.b", Tensor::zeros({d}, false), true);

        const bool emb_train = cfg.lm_train_embeddings;
        Tensor te = Tensor::zeros({cfg.vocab_size, d}, false);
        Tensor pe = Tensor::zeros({cfg.max_seq, d}, false);
        gaussian_fill(te, 0.02f);
        gaussian_fill(pe, 0.02f);
        add_param("lm.tok_emb", te, emb_train);
        add_param("lm.pos_emb", pe, emb_train);

        for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
            const std::string pfx = "lm.l" + std::to_string(l) + ".";
            add_param(pfx + "ln1.g", Tensor::full({d}, 1.0f, false), false);
            add_param(pfx + "ln1.b", Tensor::zeros({d}, false), false);
            for (const char* proj : {"q", "k", "v", "o"}) {
                Tensor w = Tensor::zeros({d, d}, false);
                gaussian_fill(w, 0.02f);
                add_param(pfx + "attn." + proj + ".w", w, false);
                Tensor a = Tensor::zeros({d, r}, false);
                gaussian_fill(a, 0.02f);
                add_param(pfx + "attn." + proj + ".lora_a", a, true);
                add_param(pfx + "attn." + proj + ".lora_b",
                          Tensor::zeros({r, d}, false), true);
            }
            add_param(pfx + "ln2.g", Tensor::full({d}, 1.0f, false), false);
            add_param(pfx + "ln2.b", Tensor::zeros({d}, false), false);
            Tensor mw1 = Tensor::zeros({d, 4 * d}, false);
            Tensor mw2 = Tensor::zeros({4 * d, d}, false);
            gaussian_fill(mw1, 0.02f);
            gaussian_fill(mw2, 0.02f);
            add_param(pfx + "mlp.w1", mw1, false);
            add_param(pfx + "mlp.b1", Tensor::zeros({4 * d}, false), false);
            add_param(pfx + "mlp.w2", mw2, false);
            add_param(pfx + "mlp.b2", Tensor::zeros({d}, false), false);
        }
        add_param("lm.ln_f.g", Tensor::full({d}, 1.0f, false), emb_train);
        add_param("lm.ln_f.b", Tensor::zeros({d}, false), emb_train);
        Tensor hw = Tensor::zeros({d, cfg.vocab_size}, false);
        gaussian_fill(hw, 0.02f);
        add_param("lm.head.w", hw, emb_train);
        return m;
    }

    std::vector<std::pair<std::string, Tensor>>& params() { return named_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const {
        return named_;
    }

    const Tensor& p(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("unknown parameter: " + name);
        return named_[it->second].second;
    }

    std::vector<Tensor> trainable_params() const {
        std::vector<Tensor> out;
        for (const auto& [name, t] : named_)
            if (t.requires_grad()) out.push_back(t);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : named_) n += t.numel();
        return n;
    }

    // Deep copy with fresh storage, same values and trainable flags. Lets
    // a trainer give each gradient-accumulation chunk its own buffers.
    Model clone() const {
        Model out;
        out.cfg = cfg;
        out.named_.reserve(named_.size());
        for (const auto& [name, t] : named_)
            out.named_.emplace_back(
                name, Tensor::from(t.shape(), t.vec(), t.requires_grad()));
        out.index_ = index_;
        return out;
    }

    // Spectrogram [F, T'] -> features [N_f, d_a]; four stride-2 conv
    // blocks then a mean pool over the frequency rows.
    Tensor encode_audio(Tape* tape, const MelSpectrogram& s) const {
        const std::int64_t F = s.bins.dim(0), T = s.bins.dim(1);
        if (F < 16 || T < 16)
            throw std::invalid_argument(
                "encode_audio: spectrogram " + nn::shape_str(s.bins.shape()) +
                " too small for the conv stride stack (needs >= 16x16)");
        Tensor x = nn::reshape(tape, s.bins, {1, 1, F, T});
        x = nn::scale(tape, nn::add(tape, x, Tensor::scalar(kMelInputShift)),
                      kMelInputScale);
        for (int i = 0; i < 4; ++i) {
            const std::string pfx = "enc.conv" + std::to_string(i);
            x = nn::gelu(tape, nn::conv2d(tape, x, p(pfx + ".w"),
                                          p(pfx + ".b"), 2, 2, 0, 0));
        }
        // [1, d_a, F', N_f] -> mean over F' -> [N_f, d_a]
        x = nn::mean_axis(tape, x, 2);
        x = nn::permute(tape, x, {0, 2, 1});
        return nn::reshape(tape, x, {x.dim(1), cfg.d_a});
    }

    // Features [N_f, d_a] -> k prefix tokens [k, d]. Hidden layers carry
    // no bias, and the single output bias is a d-vector shared across the
    // k token slots, so a zero input yields k identical tokens.
    Tensor project(Tape* tape, const Tensor& feats) const {
        if (feats.rank() != 2 || feats.dim(1) != cfg.d_a)
            throw std::invalid_argument("project: expected [N_f, d_a], got " +
                                        nn::shape_str(feats.shape()));
        Tensor pooled = nn::reshape(tape, nn::mean_axis(tape, feats, 0),
                                    {1, cfg.d_a});
        Tensor h = nn::gelu(tape, nn::matmul(tape, pooled, p("proj.w1")));
        h = nn::gelu(tape, nn::matmul(tape, h, p("proj.w2")));
        h = nn::matmul(tape, h, p("proj.w3"));
        h = nn::reshape(tape, h, {cfg.k, cfg.d});
        return nn::add(tape, h, p("proj.b"));
    }

    Tensor prefix_tokens(Tape* tape, const MelSpectrogram& s) const {
        return project(tape, encode_audio(tape, s));
    }

    // Batched causal forward. prefix: [B, k, d]; ids: B*Lt token ids,
    // row-major. Returns logits [B, k+Lt, V].
    Tensor lm_forward_batch(Tape* tape, const Tensor& prefix,
                            const std::vector<std::int32_t>& ids,
                            std::int64_t B, std::int64_t Lt,
                            bool training = false,
                            RandomStream* rng = nullptr,
                            AttnCapture* capture = nullptr) const {
        if (prefix.rank() != 3 || prefix.dim(0) != B ||
            prefix.dim(1) != cfg.k || prefix.dim(2) != cfg.d)
            throw std::invalid_argument("lm_forward: prefix must be [B,k,d]");
        if (static_cast<std::int64_t>(ids.size()) != B * Lt || Lt < 1)
            throw std::invalid_argument("lm_forward: ids size mismatch");
        const std::int64_t L = cfg.k + Lt;
        if (L > cfg.max_seq)
            throw std::invalid_argument(
                "lm_forward: sequence length " + std::to_string(L) +
                " exceeds max_seq " + std::to_string(cfg.max_seq));
        if (training && cfg.lora_dropout > 0.0f && rng == nullptr)
            throw std::invalid_argument(
                "lm_forward: training with dropout needs an rng");
        const std::int64_t H = cfg.n_heads, dh = cfg.d / H;
        if (capture) {
            capture->per_layer.clear();
            capture->batch = B;
            capture->heads = H;
        }

        Tensor tok = nn::embedding(tape, p("lm.tok_emb"), ids, {B, Lt});
        Tensor x = nn::concat(tape, {prefix, tok}, 1);
        std::vector<std::int32_t> pos_ids(
            static_cast<std::size_t>(B * L));
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t)
                pos_ids[static_cast<std::size_t>(b * L + t)] =
                    static_cast<std::int32_t>(t);
        x = nn::add(tape, x,
                    nn::embedding(tape, p("lm.pos_emb"), pos_ids, {B, L}));

        auto heads_split = [&](const Tensor& t) {
            Tensor h4 = nn::reshape(tape, t, {B, L, H, dh});
            h4 = nn::permute(tape, h4, {0, 2, 1, 3});
            return nn::reshape(tape, h4, {B * H, L, dh});
        };

        for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
            const std::string pfx = "lm.l" + std::to_string(l) + ".";
            Tensor h = nn::layer_norm(tape, x, p(pfx + "ln1.g"),
                                      p(pfx + "ln1.b"));
            auto lora_linear = [&](const Tensor& in, const char* proj) {
                const std::string base = pfx + "attn." + proj;
                Tensor out = nn::matmul(tape, in, p(base + ".w"));
                Tensor lin = in;
                if (training && cfg.lora_dropout > 0.0f)
                    lin = nn::dropout(tape, in, cfg.lora_dropout, *rng,
                                      true);
                Tensor la = nn::matmul(tape, lin, p(base + ".lora_a"));
                Tensor lb = nn::matmul(tape, la, p(base + ".lora_b"));
                const float s = static_cast<float>(cfg.lora_alpha) /
                                static_cast<float>(cfg.lora_r);
                return nn::add_scaled(tape, out, lb, s);
            };
            Tensor q = heads_split(lora_linear(h, "q"));
            Tensor kk = heads_split(lora_linear(h, "k"));
            Tensor v = heads_split(lora_linear(h, "v"));
            Tensor scores = nn::bmm(tape, q, kk, true);
            scores = nn::scale(tape, scores,
                               1.0f / std::sqrt(static_cast<float>(dh)));
            scores = nn::causal_mask_fill(tape, scores);
            Tensor probs = nn::softmax(tape, scores);
            if (capture) capture->per_layer.push_back(probs);
            Tensor ctx = nn::bmm(tape, probs, v, false);
            ctx = nn::reshape(tape, ctx, {B, H, L, dh});
            ctx = nn::permute(tape, ctx, {0, 2, 1, 3});
            ctx = nn::reshape(tape, ctx, {B, L, cfg.d});
            x = nn::add(tape, x, lora_linear(ctx, "o"));

            Tensor h2 = nn::layer_norm(tape, x, p(pfx + "ln2.g"),
                                       p(pfx + "ln2.b"));
            Tensor m1 = nn::gelu(
                tape, nn::add(tape, nn::matmul(tape, h2, p(pfx + "mlp.w1")),
                              p(pfx + "mlp.b1")));
            Tensor m2 = nn::add(tape, nn::matmul(tape, m1, p(pfx + "mlp.w2")),
                                p(pfx + "mlp.b2"));
            x = nn::add(tape, x, m2);
        }
        x = nn::layer_norm(tape, x, p("lm.ln_f.g"), p("lm.ln_f.b"));
        return nn::matmul(tape, x, p("lm.head.w"));
    }

    // Single-sequence forward: logits [k+n+m, V].
    Tensor lm_forward(Tape* tape, const InputSequence& seq,
                      bool training = false, RandomStream* rng = nullptr,
                      AttnCapture* capture = nullptr) const {
        std::vector<std::int32_t> ids = seq.instruction_ids;
        ids.insert(ids.end(), seq.response_ids.begin(),
                   seq.response_ids.end());
        if (ids.empty())
            throw std::invalid_argument("lm_forward: empty token sequence");
        Tensor prefix =
            nn::reshape(tape, seq.z_audio, {1, cfg.k, cfg.d});
        Tensor logits = lm_forward_batch(
            tape, prefix, ids, 1, static_cast<std::int64_t>(ids.size()),
            training, rng, capture);
        return nn::reshape(tape, logits,
                           {cfg.k + static_cast<std::int64_t>(ids.size()),
                            cfg.vocab_size});
    }

    // Autoregressive decoding from a mel clip and instruction ids.
    // Greedy mode is deterministic; temperature mode needs an rng.
    std::vector<std::int32_t> generate(const MelSpectrogram& mel,
                                       const std::vector<std::int32_t>& q,
                                       const GenerateOptions& opt = {},
                                       RandomStream* rng = nullptr) const {
        if (q.empty())
            throw std::invalid_argument("generate: instruction empty");
        if (!opt.greedy && rng == nullptr)
            throw std::invalid_argument(
                "generate: temperature sampling needs an rng");
        Tensor prefix3 = nn::reshape(
            nullptr, prefix_tokens(nullptr, mel), {1, cfg.k, cfg.d});
        std::vector<std::int32_t> ids = q;
        std::vector<std::int32_t> out;
        for (std::int64_t step = 0; step < opt.max_new; ++step) {
            const auto Lt = static_cast<std::int64_t>(ids.size());
            if (cfg.k + Lt + 1 > cfg.max_seq) break;
            Tensor logits =
                lm_forward_batch(nullptr, prefix3, ids, 1, Lt);
            const std::int64_t V = cfg.vocab_size;
            const float* row =
                logits.data() + (cfg.k + Lt - 1) * V;
            std::int32_t next = 0;
            if (opt.greedy) {
                for (std::int64_t v = 1; v < V; ++v)
                    if (row[v] > row[next]) next = static_cast<std::int32_t>(v);
            } else {
                next = sample_row(row, V, opt.temperature, *rng);
            }
            if (next == opt.eos_id) break;
            out.push_back(next);
            ids.push_back(next);
        }
        return out;
    }

    // Attention probabilities for one layer/head: [L, L], row-stochastic
    // under the causal mask.
    Tensor attention_weights(const InputSequence& seq, std::int64_t layer,
                             std::int64_t head) const {
        if (layer < 0 || layer >= cfg.n_layers)
            throw std::invalid_argument("attention_weights: layer " +
                                        std::to_string(layer) +
                                        " out of range");
        if (head < 0 || head >= cfg.n_heads)
            throw std::invalid_argument("attention_weights: head " +
                                        std::to_string(head) +
                                        " out of range");
        AttnCapture cap;
        lm_forward(nullptr, seq, false, nullptr, &cap);
        const Tensor& probs = cap.per_layer[static_cast<std::size_t>(layer)];
        // probs: [B*H, L, L] with B=1.
        return nn::reshape(nullptr, nn::slice(nullptr, probs, 0, head, 1),
                           {probs.dim(1), probs.dim(2)});
    }

  private:
    static std::int32_t sample_row(const float* row, std::int64_t V,
                                   float temperature, RandomStream& rng) {
        const float T = std::max(temperature, 1e-8f);
        double zmax = row[0];
        for (std::int64_t v = 1; v < V; ++v)
            zmax = std::max(zmax, static_cast<double>(row[v]));
        std::vector<double> probs(static_cast<std::size_t>(V));
        double sum = 0.0;
        for (std::int64_t v = 0; v < V; ++v) {
            probs[static_cast<std::size_t>(v)] =
                std::exp((static_cast<double>(row[v]) - zmax) /
                         static_cast<double>(T));
            sum += probs[static_cast<std::size_t>(v)];
        }
        const double u = rng.uniform() * sum;
        double acc = 0.0;
        for (std::int64_t v = 0; v < V; ++v) {
            acc += probs[static_cast<std::size_t>(v)];
            if (u < acc) return static_cast<std::int32_t>(v);
        }
        return static_cast<std::int32_t>(V - 1);
    }

    std::vector<std::pair<std::string, Tensor>> named_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace auscult::model
