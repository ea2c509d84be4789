// Finite-difference gradient checks for every differentiable kernel,
// each over >= 20 randomized shapes.

#include <catch2/catch_amalgamated.hpp>

#include "auscult/nn.hpp"
#include "grad_check.hpp"

using namespace auscult::nn;

namespace {

constexpr int kTrials = 20;
constexpr double kTol = 1e-3;
constexpr float kEps = 5e-3f;

std::int64_t rdim(RandomStream& rng, std::int64_t lo, std::int64_t hi) {
    return rng.uniform_int(lo, hi);
}

}  // namespace

TEST_CASE("grad: matmul", "[nn][grad]") {
    RandomStream rng(101);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t K = rdim(rng, 1, 6), N = rdim(rng, 1, 6);
        const bool batched = rng.uniform_f() < 0.5f;
        Shape ashape = batched ? Shape{rdim(rng, 1, 3), rdim(rng, 1, 4), K}
                               : Shape{rdim(rng, 1, 6), K};
        Tensor a = gradcheck::random_param(rng, ashape);
        Tensor b = gradcheck::random_param(rng, {K, N});
        Shape oshape(ashape.begin(), ashape.end() - 1);
        oshape.push_back(N);
        Tensor w = gradcheck::random_weights(rng, oshape);
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, matmul(tape, a, b), w);
            },
            {a, b}, kEps);
        INFO("trial " << t << " max_rel " << rep.max_rel);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: bmm", "[nn][grad]") {
    RandomStream rng(102);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t G = rdim(rng, 1, 3), M = rdim(rng, 1, 4),
                           K = rdim(rng, 1, 4), N = rdim(rng, 1, 4);
        const bool tb = (t % 2) == 0;
        Tensor a = gradcheck::random_param(rng, {G, M, K});
        Tensor b = gradcheck::random_param(rng, tb ? Shape{G, N, K}
                                                   : Shape{G, K, N});
        Tensor w = gradcheck::random_weights(rng, {G, M, N});
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, bmm(tape, a, b, tb), w);
            },
            {a, b}, kEps);
        INFO("trial " << t << " transpose_b " << tb);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: add/mul broadcasting and add_scaled/scale", "[nn][grad]") {
    RandomStream rng(103);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 4), rdim(rng, 1, 4), rdim(rng, 1, 5)};
        Tensor a = gradcheck::random_param(rng, s);
        Tensor w = gradcheck::random_weights(rng, s);
        // same-shape, last-axis, scalar variants of the second operand
        for (int kind = 0; kind < 3; ++kind) {
            Shape bs = kind == 0 ? s
                       : kind == 1 ? Shape{s.back()}
                                   : Shape{1};
            Tensor b = gradcheck::random_param(rng, bs);
            auto rep_add = gradcheck::run(
                [&](Tape* tape) {
                    return gradcheck::weighted_sum(tape, add(tape, a, b), w);
                },
                {a, b}, kEps);
            REQUIRE(rep_add.max_rel <= kTol);
            auto rep_mul = gradcheck::run(
                [&](Tape* tape) {
                    return gradcheck::weighted_sum(tape, mul(tape, a, b), w);
                },
                {a, b}, kEps);
            REQUIRE(rep_mul.max_rel <= kTol);
        }
        Tensor c = gradcheck::random_param(rng, s);
        auto rep_as = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape,
                                               add_scaled(tape, a, c, -1.7f), w);
            },
            {a, c}, kEps);
        REQUIRE(rep_as.max_rel <= kTol);
        auto rep_sc = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, scale(tape, a, 0.37f), w);
            },
            {a}, kEps);
        REQUIRE(rep_sc.max_rel <= kTol);
    }
}

TEST_CASE("grad: embedding", "[nn][grad]") {
    RandomStream rng(104);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t V = rdim(rng, 2, 8), d = rdim(rng, 1, 5);
        const std::int64_t B = rdim(rng, 1, 3), L = rdim(rng, 1, 4);
        Tensor table = gradcheck::random_param(rng, {V, d});
        std::vector<std::int32_t> ids(static_cast<std::size_t>(B * L));
        for (auto& id : ids)
            id = static_cast<std::int32_t>(rng.uniform_int(0, V - 1));
        Tensor w = gradcheck::random_weights(rng, {B, L, d});
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, embedding(tape, table, ids, {B, L}), w);
            },
            {table}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: softmax and log_softmax", "[nn][grad]") {
    RandomStream rng(105);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 4), rdim(rng, 2, 7)};
        Tensor x = gradcheck::random_param(rng, s, 1.0f);
        Tensor w = gradcheck::random_weights(rng, s);
        auto rep_s = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, softmax(tape, x), w);
            },
            {x}, kEps);
        REQUIRE(rep_s.max_rel <= kTol);
        auto rep_ls = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, log_softmax(tape, x), w);
            },
            {x}, kEps);
        REQUIRE(rep_ls.max_rel <= kTol);
    }
}

TEST_CASE("grad: layer_norm", "[nn][grad]") {
    RandomStream rng(106);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 4), rdim(rng, 3, 8)};
        Tensor x = gradcheck::random_param(rng, s, 1.0f);
        Tensor gamma = gradcheck::random_param(rng, {s.back()}, 0.5f);
        Tensor beta = gradcheck::random_param(rng, {s.back()}, 0.5f);
        Tensor w = gradcheck::random_weights(rng, s);
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, layer_norm(tape, x, gamma, beta), w);
            },
            {x, gamma, beta}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: pointwise nonlinearities", "[nn][grad]") {
    RandomStream rng(107);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 5), rdim(rng, 1, 6)};
        Tensor x = gradcheck::random_param(rng, s, 1.0f);
        Tensor w = gradcheck::random_weights(rng, s);
        for (int which = 0; which < 3; ++which) {
            auto rep = gradcheck::run(
                [&](Tape* tape) {
                    Tensor y = which == 0   ? gelu(tape, x)
                               : which == 1 ? sigmoid(tape, x)
                                            : log_sigmoid(tape, x);
                    return gradcheck::weighted_sum(tape, y, w);
                },
                {x}, kEps);
            INFO("nonlinearity " << which);
            REQUIRE(rep.max_rel <= kTol);
        }
    }
}

TEST_CASE("grad: reductions", "[nn][grad]") {
    RandomStream rng(108);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 4), rdim(rng, 1, 4), rdim(rng, 1, 4)};
        Tensor x = gradcheck::random_param(rng, s);
        auto rep_sum = gradcheck::run(
            [&](Tape* tape) { return sum_all(tape, x); }, {x}, kEps);
        REQUIRE(rep_sum.max_rel <= kTol);
        auto rep_mean = gradcheck::run(
            [&](Tape* tape) { return mean_all(tape, x); }, {x}, kEps);
        REQUIRE(rep_mean.max_rel <= kTol);
        const std::size_t axis = static_cast<std::size_t>(rdim(rng, 0, 2));
        Shape os;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis) os.push_back(s[i]);
        if (os.empty()) os.push_back(1);
        Tensor w = gradcheck::random_weights(rng, os);
        auto rep_axis = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, mean_axis(tape, x, axis),
                                               w);
            },
            {x}, kEps);
        REQUIRE(rep_axis.max_rel <= kTol);
    }
}

TEST_CASE("grad: shape ops", "[nn][grad]") {
    RandomStream rng(109);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t A = rdim(rng, 1, 3), B = rdim(rng, 1, 4),
                           C = rdim(rng, 1, 4);
        Tensor x = gradcheck::random_param(rng, {A, B, C});
        Tensor w_r = gradcheck::random_weights(rng, {A * B * C});
        auto rep_reshape = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, reshape(tape, x, {A * B * C}), w_r);
            },
            {x}, kEps);
        REQUIRE(rep_reshape.max_rel <= kTol);

        Tensor w_p = gradcheck::random_weights(rng, {B, A, C});
        auto rep_perm = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, permute(tape, x, {1, 0, 2}),
                                               w_p);
            },
            {x}, kEps);
        REQUIRE(rep_perm.max_rel <= kTol);

        const std::size_t axis = static_cast<std::size_t>(rdim(rng, 0, 2));
        const std::int64_t D = x.shape()[axis];
        const std::int64_t start = rdim(rng, 0, D - 1);
        const std::int64_t len = rdim(rng, 1, D - start);
        Shape ss = x.shape();
        ss[axis] = len;
        Tensor w_s = gradcheck::random_weights(rng, ss);
        auto rep_slice = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, slice(tape, x, axis, start, len), w_s);
            },
            {x}, kEps);
        REQUIRE(rep_slice.max_rel <= kTol);

        Tensor y = gradcheck::random_param(rng, {A, B, C});
        Shape cs = x.shape();
        cs[axis] *= 2;
        Tensor w_c = gradcheck::random_weights(rng, cs);
        auto rep_cat = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, concat(tape, {x, y}, axis),
                                               w_c);
            },
            {x, y}, kEps);
        REQUIRE(rep_cat.max_rel <= kTol);
    }
}

TEST_CASE("grad: causal_mask_fill", "[nn][grad]") {
    RandomStream rng(110);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t G = rdim(rng, 1, 3), L = rdim(rng, 1, 5);
        Tensor x = gradcheck::random_param(rng, {G, L, L});
        Tensor w = gradcheck::random_weights(rng, {G, L, L});
        // Masked cells hold a large constant; keep them out of the probe
        // loss so the finite difference is not swamped by the fill value.
        for (std::int64_t g = 0; g < G; ++g)
            for (std::int64_t i = 0; i < L; ++i)
                for (std::int64_t j = i + 1; j < L; ++j)
                    w.data()[(g * L + i) * L + j] = 0.0f;
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(tape, causal_mask_fill(tape, x),
                                               w);
            },
            {x}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: dropout (fixed stream)", "[nn][grad]") {
    RandomStream rng(111);
    for (int t = 0; t < kTrials; ++t) {
        Shape s{rdim(rng, 1, 4), rdim(rng, 1, 6)};
        Tensor x = gradcheck::random_param(rng, s);
        Tensor w = gradcheck::random_weights(rng, s);
        const std::uint64_t mask_seed = 9000 + static_cast<std::uint64_t>(t);
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                RandomStream mask_rng(mask_seed);
                return gradcheck::weighted_sum(
                    tape, dropout(tape, x, 0.3f, mask_rng, true), w);
            },
            {x}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: conv2d and conv1d", "[nn][grad]") {
    RandomStream rng(112);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t B = rdim(rng, 1, 2), C = rdim(rng, 1, 3),
                           H = rdim(rng, 3, 6), W = rdim(rng, 3, 6);
        const std::int64_t Co = rdim(rng, 1, 3), kh = rdim(rng, 1, 3),
                           kw = rdim(rng, 1, 3);
        const std::int64_t sh = rdim(rng, 1, 2), sw = rdim(rng, 1, 2);
        const std::int64_t ph = rdim(rng, 0, 1), pw = rdim(rng, 0, 1);
        Tensor x = gradcheck::random_param(rng, {B, C, H, W});
        Tensor wt = gradcheck::random_param(rng, {Co, C, kh, kw});
        Tensor bias = gradcheck::random_param(rng, {Co});
        const std::int64_t Ho = (H + 2 * ph - kh) / sh + 1;
        const std::int64_t Wo = (W + 2 * pw - kw) / sw + 1;
        Tensor w = gradcheck::random_weights(rng, {B, Co, Ho, Wo});
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, conv2d(tape, x, wt, bias, sh, sw, ph, pw), w);
            },
            {x, wt, bias}, 1e-2f);
        INFO("conv2d trial " << t);
        REQUIRE(rep.max_rel <= kTol);
    }
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t B = rdim(rng, 1, 2), C = rdim(rng, 1, 3),
                           L = rdim(rng, 4, 8);
        const std::int64_t Co = rdim(rng, 1, 3), k = rdim(rng, 1, 3);
        const std::int64_t stride = rdim(rng, 1, 2), pad = rdim(rng, 0, 1);
        Tensor x = gradcheck::random_param(rng, {B, C, L});
        Tensor wt = gradcheck::random_param(rng, {Co, C, k});
        Tensor bias = gradcheck::random_param(rng, {Co});
        const std::int64_t Lo = (L + 2 * pad - k) / stride + 1;
        Tensor w = gradcheck::random_weights(rng, {B, Co, Lo});
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, conv1d(tape, x, wt, bias, stride, pad), w);
            },
            {x, wt, bias}, 1e-2f);
        INFO("conv1d trial " << t);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: cross_entropy_weighted", "[nn][grad]") {
    RandomStream rng(113);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t N = rdim(rng, 2, 8), V = rdim(rng, 2, 7);
        Tensor logits = gradcheck::random_param(rng, {N, V}, 1.0f);
        std::vector<std::int32_t> targets(static_cast<std::size_t>(N));
        std::vector<float> weights(static_cast<std::size_t>(N));
        for (std::int64_t i = 0; i < N; ++i) {
            const bool masked = rng.uniform_f() < 0.3f;
            // Masked positions must be ignored entirely, including their ids.
            targets[static_cast<std::size_t>(i)] =
                masked ? -5
                       : static_cast<std::int32_t>(rng.uniform_int(0, V - 1));
            weights[static_cast<std::size_t>(i)] =
                masked ? 0.0f : 0.2f + rng.uniform_f();
        }
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return cross_entropy_weighted(tape, logits, targets, weights);
            },
            {logits}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: sequence_log_prob", "[nn][grad]") {
    RandomStream rng(114);
    for (int t = 0; t < kTrials; ++t) {
        const std::int64_t B = rdim(rng, 1, 3), L = rdim(rng, 2, 5),
                           V = rdim(rng, 2, 7);
        Tensor logits = gradcheck::random_param(rng, {B, L, V}, 1.0f);
        std::vector<std::int32_t> targets(static_cast<std::size_t>(B * L));
        std::vector<float> mask(static_cast<std::size_t>(B * L));
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const bool masked = rng.uniform_f() < 0.4f;
            targets[i] =
                masked ? -9
                       : static_cast<std::int32_t>(rng.uniform_int(0, V - 1));
            mask[i] = masked ? 0.0f : 1.0f;
        }
        Tensor w = gradcheck::random_weights(rng, {B});
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                return gradcheck::weighted_sum(
                    tape, sequence_log_prob(tape, logits, targets, mask), w);
            },
            {logits}, kEps);
        REQUIRE(rep.max_rel <= kTol);
    }
}

TEST_CASE("grad: composite chain (linear-gelu-norm-ce)", "[nn][grad]") {
    RandomStream rng(115);
    for (int t = 0; t < 5; ++t) {
        const std::int64_t N = 4, Din = 5, Dh = 6, V = 5;
        Tensor x = gradcheck::random_weights(rng, {N, Din});
        Tensor w1 = gradcheck::random_param(rng, {Din, Dh});
        Tensor b1 = gradcheck::random_param(rng, {Dh}, 0.2f);
        Tensor gm = gradcheck::random_param(rng, {Dh}, 0.3f);
        Tensor bt = gradcheck::random_param(rng, {Dh}, 0.3f);
        Tensor w2 = gradcheck::random_param(rng, {Dh, V});
        std::vector<std::int32_t> targets(static_cast<std::size_t>(N));
        std::vector<float> weights(static_cast<std::size_t>(N),
                                   1.0f / static_cast<float>(N));
        for (auto& tv : targets)
            tv = static_cast<std::int32_t>(rng.uniform_int(0, V - 1));
        auto rep = gradcheck::run(
            [&](Tape* tape) {
                Tensor h = add(tape, matmul(tape, x, w1), b1);
                h = gelu(tape, h);
                h = layer_norm(tape, h, gm, bt);
                Tensor logits = matmul(tape, h, w2);
                return cross_entropy_weighted(tape, logits, targets, weights);
            },
            {w1, b1, gm, bt, w2}, 3e-3f);
        INFO("composite trial " << t << " max_rel " << rep.max_rel);
        REQUIRE(rep.max_rel <= 5e-3);
    }
}
