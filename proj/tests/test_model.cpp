// Model architecture: encoder/projection shapes, causal transformer
// semantics, LoRA identities, generation, attention export, checkpoints.

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "auscult/model.hpp"
#include "grad_check.hpp"

using namespace auscult;
using namespace auscult::model;
using nn::RandomStream;
using nn::Tape;
using nn::Tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.d = 16;
    c.k = 2;
    c.n_layers = 2;
    c.n_heads = 2;
    c.vocab_size = 40;
    c.d_a = 8;
    c.proj_hidden = 12;
    c.lora_r = 2;
    c.lora_alpha = 4;
    c.lora_dropout = 0.0f;
    c.max_seq = 32;
    return c;
}

ModelConfig desk_config() {
    ModelConfig c;
    c.vocab_size = 500;
    return c;
}

MelSpectrogram random_mel(std::int64_t F, std::int64_t T,
                          std::uint64_t seed) {
    MelSpectrogram s;
    s.bins = Tensor::zeros({F, T}, false);
    RandomStream rng(seed);
    float* p = s.bins.data();
    for (std::int64_t i = 0; i < F * T; ++i)
        p[i] = rng.gaussian_f(-6.0f, 3.0f);
    return s;
}

std::vector<std::int32_t> random_ids(std::int64_t n, std::int64_t vocab,
                                     std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<std::int32_t> ids(static_cast<std::size_t>(n));
    for (auto& id : ids)
        id = static_cast<std::int32_t>(rng.uniform_int(4, vocab - 1));
    return ids;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(),
                       static_cast<std::size_t>(a.numel()) *
                           sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("model config validation rejects bad settings") {
    ModelConfig c = tiny_config();
    c.validate();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.lora_r = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.max_seq = c.k + 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    // JSON round trip covers every field.
    const ModelConfig d = desk_config();
    const nlohmann::json j = d;
    const ModelConfig back = j.get<ModelConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.d == 128);
    CHECK(back.k == 4);
    CHECK(back.n_layers == 4);
    CHECK(back.n_heads == 4);
    CHECK(back.d_a == 64);
    CHECK(back.proj_hidden == 128);
    CHECK(back.lora_r == 16);
    CHECK(back.lora_alpha == 32);
}

TEST_CASE("encoder maps 64x998 mel to 62 frames of d_a features") {
    const Model m = Model::init(desk_config(), RandomStream(1));
    const MelSpectrogram s = random_mel(64, 998, 7);
    const Tensor f = m.encode_audio(nullptr, s);
    REQUIRE(f.shape() == nn::Shape{62, 64});

    // Determinism: identical input, identical bits.
    CHECK(bit_identical(f, m.encode_audio(nullptr, s)));

    // Zero spectrogram stays finite (bias-only path).
    MelSpectrogram z;
    z.bins = Tensor::zeros({64, 998}, false);
    const Tensor fz = m.encode_audio(nullptr, z);
    bool finite = true;
    for (std::int64_t i = 0; i < fz.numel(); ++i)
        finite = finite && std::isfinite(fz.data()[i]);
    CHECK(finite);

    // Too-short input names the constraint.
    MelSpectrogram tiny;
    tiny.bins = Tensor::zeros({64, 15}, false);
    CHECK_THROWS_WITH(m.encode_audio(nullptr, tiny),
                      Catch::Matchers::ContainsSubstring("too small"));
}

TEST_CASE("projection emits k by d prefix tokens") {
    const Model m = Model::init(desk_config(), RandomStream(2));
    const MelSpectrogram s = random_mel(64, 998, 8);
    const Tensor z = m.prefix_tokens(nullptr, s);
    REQUIRE(z.shape() == nn::Shape{4, 128});

    ModelConfig c2 = desk_config();
    c2.k = 2;
    const Model m2 = Model::init(c2, RandomStream(2));
    CHECK(m2.prefix_tokens(nullptr, s).shape() == nn::Shape{2, 128});

    // Zero features -> k identical tokens (the shared output bias).
    Tensor zero_feats = Tensor::zeros({5, 64}, false);
    const Tensor zt = m.project(nullptr, zero_feats);
    const float* zp = zt.data();
    const float* bias = m.p("proj.b").data();
    bool rows_equal_bias = true;
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t j = 0; j < 128; ++j)
            rows_equal_bias =
                rows_equal_bias && zp[r * 128 + j] == bias[j];
    CHECK(rows_equal_bias);
}

TEST_CASE("lm_forward produces the exact sequence-length logits") {
    ModelConfig c = desk_config();
    c.max_seq = 64;
    const Model m = Model::init(c, RandomStream(3));
    InputSequence seq;
    seq.z_audio = Tensor::zeros({4, 128}, false);
    RandomStream rng(5);
    float* zp = seq.z_audio.data();
    for (std::int64_t i = 0; i < seq.z_audio.numel(); ++i)
        zp[i] = rng.gaussian_f(0.0f, 0.5f);
    seq.instruction_ids = random_ids(14, c.vocab_size, 11);
    seq.response_ids = random_ids(20, c.vocab_size, 12);
    const Tensor logits = m.lm_forward(nullptr, seq);
    REQUIRE(logits.shape() == nn::Shape{38, 500});

    // Length overflow is an error.
    InputSequence big = seq;
    big.response_ids = random_ids(80, c.vocab_size, 13);
    CHECK_THROWS_WITH(m.lm_forward(nullptr, big),
                      Catch::Matchers::ContainsSubstring("max_seq"));
}

TEST_CASE("causality is bit-exact across layer and head counts") {
    for (std::int64_t n_layers : {1, 2}) {
        for (std::int64_t n_heads : {1, 2, 4}) {
            ModelConfig c = tiny_config();
            c.n_layers = n_layers;
            c.n_heads = n_heads;
            const Model m = Model::init(c, RandomStream(17));
            InputSequence seq;
            seq.z_audio = Tensor::zeros({c.k, c.d}, false);
            RandomStream rng(21);
            for (std::int64_t i = 0; i < seq.z_audio.numel(); ++i)
                seq.z_audio.data()[i] = rng.gaussian_f();
            seq.instruction_ids = random_ids(6, c.vocab_size, 31);
            seq.response_ids = random_ids(5, c.vocab_size, 32);
            const Tensor base = m.lm_forward(nullptr, seq);
            const std::int64_t L = base.dim(0), V = base.dim(1);

            for (std::int64_t t : {std::int64_t(2), std::int64_t(6),
                                   L - 2}) {
                InputSequence mod = seq;
                std::vector<std::int32_t> all = seq.instruction_ids;
                all.insert(all.end(), seq.response_ids.begin(),
                           seq.response_ids.end());
                // Perturb the token entering position t+1.
                const std::size_t text_pos =
                    static_cast<std::size_t>(t + 1 - c.k);
                all[text_pos] =
                    static_cast<std::int32_t>((all[text_pos] + 7) % 30 + 4);
                mod.instruction_ids.assign(
                    all.begin(),
                    all.begin() + static_cast<std::ptrdiff_t>(
                                      seq.instruction_ids.size()));
                mod.response_ids.assign(
                    all.begin() + static_cast<std::ptrdiff_t>(
                                      seq.instruction_ids.size()),
                    all.end());
                const Tensor pert = m.lm_forward(nullptr, mod);
                INFO("layers " << n_layers << " heads " << n_heads
                               << " t " << t);
                CHECK(std::memcmp(base.data(), pert.data(),
                                  static_cast<std::size_t>((t + 1) * V) *
                                      sizeof(float)) == 0);
                // And the perturbed position itself must differ.
                bool differs = false;
                for (std::int64_t v = 0; v < V; ++v)
                    differs = differs ||
                              base.data()[(t + 1) * V + v] !=
                                  pert.data()[(t + 1) * V + v];
                CHECK(differs);
            }
        }
    }
}

TEST_CASE("lora adapters are inert at init and active once B is nonzero") {
    const ModelConfig c = tiny_config();
    Model m = Model::init(c, RandomStream(23));
    InputSequence seq;
    seq.z_audio = Tensor::full({c.k, c.d}, 0.3f, false);
    seq.instruction_ids = random_ids(5, c.vocab_size, 41);
    const Tensor base = m.lm_forward(nullptr, seq);

    // Scrambling A while B stays zero cannot change the forward pass.
    Tensor a0 = const_cast<Tensor&>(m.p("lm.l0.attn.q.lora_a"));
    RandomStream rng(43);
    for (std::int64_t i = 0; i < a0.numel(); ++i)
        a0.data()[i] = rng.gaussian_f(0.0f, 2.0f);
    CHECK(bit_identical(base, m.lm_forward(nullptr, seq)));

    // A nonzero B engages the adapter.
    Tensor b0 = const_cast<Tensor&>(m.p("lm.l0.attn.q.lora_b"));
    for (std::int64_t i = 0; i < b0.numel(); ++i)
        b0.data()[i] = 0.05f;
    CHECK_FALSE(bit_identical(base, m.lm_forward(nullptr, seq)));
}

TEST_CASE("frozen flags partition the parameter registry") {
    ModelConfig c = tiny_config();
    const Model m = Model::init(c, RandomStream(29));
    for (const auto& [name, t] : m.params()) {
        const bool is_core = name.find(".attn.") != std::string::npos &&
                             name.find(".lora_") == std::string::npos;
        const bool is_mlp = name.find(".mlp.") != std::string::npos;
        const bool is_block_ln = name.find(".ln1.") != std::string::npos ||
                                 name.find(".ln2.") != std::string::npos;
        if (is_core || is_mlp || is_block_ln) {
            INFO(name);
            CHECK_FALSE(t.requires_grad());
        }
        if (name.rfind("enc.", 0) == 0 || name.rfind("proj.", 0) == 0 ||
            name.find("lora_") != std::string::npos) {
            INFO(name);
            CHECK(t.requires_grad());
        }
    }

    ModelConfig frozen_cfg = tiny_config();
    frozen_cfg.lm_train_embeddings = false;
    const Model mf = Model::init(frozen_cfg, RandomStream(29));
    CHECK_FALSE(mf.p("lm.tok_emb").requires_grad());
    CHECK_FALSE(mf.p("lm.pos_emb").requires_grad());
    CHECK_FALSE(mf.p("lm.head.w").requires_grad());
    CHECK(m.p("lm.tok_emb").requires_grad());
}

TEST_CASE("distinct audio produces distinct downstream logits") {
    const Model m = Model::init(desk_config(), RandomStream(31));
    InputSequence a, b;
    a.instruction_ids = b.instruction_ids =
        random_ids(8, desk_config().vocab_size, 51);
    a.response_ids = b.response_ids =
        random_ids(6, desk_config().vocab_size, 52);
    a.z_audio = m.prefix_tokens(nullptr, random_mel(64, 200, 61));
    b.z_audio = m.prefix_tokens(nullptr, random_mel(64, 200, 62));
    const Tensor la = m.lm_forward(nullptr, a);
    const Tensor lb = m.lm_forward(nullptr, b);
    double mean_abs = 0.0;
    for (std::int64_t i = 0; i < la.numel(); ++i)
        mean_abs += std::fabs(static_cast<double>(la.data()[i]) -
                              static_cast<double>(lb.data()[i]));
    mean_abs /= static_cast<double>(la.numel());
    CHECK(mean_abs > 0.0);
}

TEST_CASE("full model gradients match finite differences") {
    // Transformer path on a 6-token toy sequence.
    ModelConfig c;
    c.d = 8;
    c.k = 2;
    c.n_layers = 1;
    c.n_heads = 2;
    c.vocab_size = 11;
    c.d_a = 4;
    c.proj_hidden = 6;
    c.lora_r = 2;
    c.lora_alpha = 4;
    c.lora_dropout = 0.0f;
    c.max_seq = 16;
    Model m = Model::init(c, RandomStream(71));
    // Give the LoRA B matrices mass so their branch carries gradient.
    for (const auto& [name, t] : m.params())
        if (name.find("lora_b") != std::string::npos) {
            RandomStream r(std::hash<std::string>{}(name));
            for (std::int64_t i = 0; i < t.numel(); ++i)
                const_cast<Tensor&>(t).data()[i] = r.gaussian_f(0.0f, 0.3f);
        }

    Tensor prefix = Tensor::zeros({1, c.k, c.d}, true);
    RandomStream rng(73);
    for (std::int64_t i = 0; i < prefix.numel(); ++i)
        prefix.data()[i] = rng.gaussian_f(0.0f, 0.5f);
    const std::vector<std::int32_t> ids = random_ids(6, c.vocab_size, 79);
    const std::vector<std::int32_t> targets = random_ids(8, 11, 83);
    std::vector<float> w(8, 0.125f);

    auto loss_fn = [&](Tape* tape) {
        Tensor logits =
            m.lm_forward_batch(tape, prefix, ids, 1, 6, false, nullptr);
        Tensor flat = nn::reshape(tape, logits, {8, 11});
        return nn::cross_entropy_weighted(tape, flat, targets, w);
    };
    std::vector<Tensor> params = m.trainable_params();
    params.push_back(prefix);
    const auto rep = gradcheck::run(loss_fn, params, 5e-3f, 0.5);
    INFO("max_rel " << rep.max_rel << " over " << rep.checked);
    CHECK(rep.max_rel <= 1e-2);

    // Encoder + projection path on a small spectrogram.
    const MelSpectrogram s = random_mel(16, 16, 89);
    auto enc_loss = [&](Tape* tape) {
        return nn::mean_all(tape, m.project(tape, m.encode_audio(tape, s)));
    };
    std::vector<Tensor> enc_params;
    for (const auto& [name, t] : m.params())
        if (name.rfind("enc.", 0) == 0 || name.rfind("proj.", 0) == 0)
            enc_params.push_back(t);
    const auto rep2 = gradcheck::run(enc_loss, enc_params, 1e-2f, 0.5);
    INFO("enc max_rel " << rep2.max_rel << " over " << rep2.checked);
    CHECK(rep2.max_rel <= 1e-2);
}

TEST_CASE("greedy generation is deterministic and bounded") {
    ModelConfig c = tiny_config();
    const Model m = Model::init(c, RandomStream(91));
    const MelSpectrogram s = random_mel(64, 120, 93);
    const auto q = random_ids(5, c.vocab_size, 95);

    GenerateOptions opt;
    opt.max_new = 10;
    const auto out1 = m.generate(s, q, opt);
    const auto out2 = m.generate(s, q, opt);
    CHECK(out1 == out2);
    CHECK(out1.size() <= 10);

    CHECK_THROWS_WITH(m.generate(s, {}, opt),
                      Catch::Matchers::ContainsSubstring("instruction"));

    // Near-zero temperature reproduces greedy on many prompts.
    GenerateOptions cold;
    cold.greedy = false;
    cold.temperature = 1e-6f;
    cold.max_new = 8;
    GenerateOptions greedy;
    greedy.max_new = 8;
    RandomStream rng(97);
    int match = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto prompt =
            random_ids(4 + static_cast<std::int64_t>(i % 3),
                       c.vocab_size, 100 + i);
        const MelSpectrogram mm = random_mel(64, 100, 200 + i);
        match += m.generate(mm, prompt, greedy) ==
                 m.generate(mm, prompt, cold, &rng);
    }
    CHECK(match == 20);

    // Temperature sampling with different seeds explores.
    GenerateOptions warm;
    warm.greedy = false;
    warm.temperature = 1.3f;
    warm.max_new = 12;
    RandomStream r1(1), r2(2);
    const auto s1 = m.generate(s, q, warm, &r1);
    const auto s2 = m.generate(s, q, warm, &r2);
    CHECK((s1 != s2 || s1.size() <= 2));
}

TEST_CASE("attention weights are causal and row-stochastic") {
    ModelConfig c = tiny_config();
    const Model m = Model::init(c, RandomStream(101));
    InputSequence seq;
    seq.z_audio = m.prefix_tokens(nullptr, random_mel(64, 100, 103));
    seq.instruction_ids = random_ids(6, c.vocab_size, 105);
    seq.response_ids = random_ids(4, c.vocab_size, 107);
    const std::int64_t L = c.k + 10;

    for (std::int64_t layer : {std::int64_t(0), c.n_layers - 1}) {
        for (std::int64_t head = 0; head < c.n_heads; ++head) {
            const Tensor w = m.attention_weights(seq, layer, head);
            REQUIRE(w.shape() == nn::Shape{L, L});
            bool upper_zero = true;
            bool rows_ok = true;
            for (std::int64_t i = 0; i < L; ++i) {
                double sum = 0.0;
                for (std::int64_t j = 0; j < L; ++j) {
                    const float v = w.data()[i * L + j];
                    if (j > i) upper_zero = upper_zero && v == 0.0f;
                    sum += v;
                }
                rows_ok = rows_ok && std::fabs(sum - 1.0) <= 1e-5;
            }
            CHECK(upper_zero);
            CHECK(rows_ok);
        }
    }
    CHECK_THROWS_WITH(m.attention_weights(seq, c.n_layers, 0),
                      Catch::Matchers::ContainsSubstring("layer"));
    CHECK_THROWS_WITH(m.attention_weights(seq, 0, c.n_heads),
                      Catch::Matchers::ContainsSubstring("head"));
}

TEST_CASE("checkpoints round-trip bit-exactly with integrity checks") {
    const auto dir = std::filesystem::temp_directory_path() / "auscult_ckpt";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "a.stlm").string();
    const std::string p2 = (dir / "b.stlm").string();

    ModelConfig c = tiny_config();
    Model m = Model::init(c, RandomStream(111));
    save_checkpoint(m.params(), p1);

    // Exact file size: header 12 + per-tensor metadata + payload + crc.
    std::int64_t expect = 12 + 4;
    for (const auto& [name, t] : m.params())
        expect += 4 + static_cast<std::int64_t>(name.size()) + 4 +
                  4 * static_cast<std::int64_t>(t.rank()) + 4 * t.numel();
    CHECK(static_cast<std::int64_t>(std::filesystem::file_size(p1)) ==
          expect);

    // Load into a second instance: forward passes agree bitwise.
    Model m2 = Model::init(c, RandomStream(999));
    load_into(load_checkpoint(p1), m2.params());
    InputSequence seq;
    seq.z_audio = Tensor::full({c.k, c.d}, 0.1f, false);
    seq.instruction_ids = random_ids(5, c.vocab_size, 113);
    CHECK(bit_identical(m.lm_forward(nullptr, seq),
                        m2.lm_forward(nullptr, seq)));

    // save -> load -> save reproduces identical bytes.
    save_checkpoint(m2.params(), p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> buf1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> buf2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(buf1 == buf2);

    // Header corruption -> format error.
    {
        auto bad = buf1;
        bad[1] = 'X';
        std::ofstream out((dir / "bad_magic.stlm").string(),
                          std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        CHECK_THROWS_AS(load_checkpoint((dir / "bad_magic.stlm").string()),
                        checkpoint_format_error);
    }
    // Payload corruption -> checksum failure.
    {
        auto bad = buf1;
        bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x40);
        std::ofstream out((dir / "bad_payload.stlm").string(),
                          std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        CHECK_THROWS_WITH(
            load_checkpoint((dir / "bad_payload.stlm").string()),
            Catch::Matchers::ContainsSubstring("checksum") ||
                Catch::Matchers::ContainsSubstring("truncated") ||
                Catch::Matchers::ContainsSubstring("implausible"));
    }
    // Truncation -> format error.
    {
        std::vector<char> bad(buf1.begin(),
                              buf1.begin() + static_cast<std::ptrdiff_t>(
                                                 buf1.size() / 3));
        std::ofstream out((dir / "truncated.stlm").string(),
                          std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        CHECK_THROWS_AS(load_checkpoint((dir / "truncated.stlm").string()),
                        checkpoint_format_error);
    }
    // Shape mismatch vs a different config -> shape error, not format.
    {
        ModelConfig c2 = tiny_config();
        c2.d = 32;
        Model m3 = Model::init(c2, RandomStream(5));
        auto loaded = load_checkpoint(p1);
        CHECK_THROWS_AS(load_into(loaded, m3.params()),
                        checkpoint_shape_error);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("batched forward matches single-sequence forward bitwise") {
    ModelConfig c = tiny_config();
    const Model m = Model::init(c, RandomStream(121));

    InputSequence s1, s2;
    s1.z_audio = m.prefix_tokens(nullptr, random_mel(64, 100, 123));
    s2.z_audio = m.prefix_tokens(nullptr, random_mel(64, 100, 124));
    s1.instruction_ids = random_ids(7, c.vocab_size, 125);
    s2.instruction_ids = random_ids(7, c.vocab_size, 126);

    Tensor prefix = Tensor::zeros({2, c.k, c.d}, false);
    std::memcpy(prefix.data(), s1.z_audio.data(),
                static_cast<std::size_t>(c.k * c.d) * sizeof(float));
    std::memcpy(prefix.data() + c.k * c.d, s2.z_audio.data(),
                static_cast<std::size_t>(c.k * c.d) * sizeof(float));
    std::vector<std::int32_t> ids = s1.instruction_ids;
    ids.insert(ids.end(), s2.instruction_ids.begin(),
               s2.instruction_ids.end());

    const Tensor batched = m.lm_forward_batch(nullptr, prefix, ids, 2, 7);
    const Tensor one = m.lm_forward(nullptr, s1);
    const Tensor two = m.lm_forward(nullptr, s2);
    const std::int64_t LV = (c.k + 7) * c.vocab_size;
    CHECK(std::memcmp(batched.data(), one.data(),
                      static_cast<std::size_t>(LV) * sizeof(float)) == 0);
    CHECK(std::memcmp(batched.data() + LV, two.data(),
                      static_cast<std::size_t>(LV) * sizeof(float)) == 0);
}
