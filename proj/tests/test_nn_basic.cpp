// Semantics of the tensor kernels: shapes, broadcasting, masking,
// determinism, and fault behavior.

#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "auscult/nn.hpp"

using namespace auscult::nn;

TEST_CASE("rng: reproducible streams and derived children", "[nn][rng]") {
    RandomStream a(1234), b(1234);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RandomStream base(77);
    RandomStream c0 = base.child(0);
    RandomStream c1 = base.child(1);
    RandomStream c0_again = base.child(0);
    REQUIRE(c0.next_u64() == c0_again.next_u64());
    RandomStream c0b = base.child(0);
    REQUIRE(c0b.next_u64() != c1.next_u64());

    RandomStream u(5);
    for (int i = 0; i < 1000; ++i) {
        const float v = u.uniform_f();
        REQUIRE(v >= 0.0f);
        REQUIRE(v < 1.0f);
    }
    // Gaussian moments over a large sample.
    RandomStream g(9);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = g.gaussian();
        sum += v;
        sq += v * v;
    }
    REQUIRE(std::fabs(sum / n) < 0.03);
    REQUIRE(std::fabs(sq / n - 1.0) < 0.05);

    // Integer draws stay in range and hit both endpoints eventually.
    RandomStream ir(11);
    bool hit_lo = false, hit_hi = false;
    for (int i = 0; i < 500; ++i) {
        const std::int64_t v = ir.uniform_int(3, 7);
        REQUIRE(v >= 3);
        REQUIRE(v <= 7);
        hit_lo = hit_lo || v == 3;
        hit_hi = hit_hi || v == 7;
    }
    REQUIRE(hit_lo);
    REQUIRE(hit_hi);
}

TEST_CASE("ops: broadcast arithmetic values", "[nn][ops]") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = Tensor::from({3}, {10, 20, 30});
    Tensor s = Tensor::from({1}, {100});

    Tensor r1 = add(nullptr, a, row);
    const std::vector<float> want1{11, 22, 33, 14, 25, 36};
    REQUIRE(r1.vec() == want1);

    Tensor r2 = add(nullptr, a, s);
    const std::vector<float> want2{101, 102, 103, 104, 105, 106};
    REQUIRE(r2.vec() == want2);

    Tensor r3 = mul(nullptr, a, row);
    const std::vector<float> want3{10, 40, 90, 40, 100, 180};
    REQUIRE(r3.vec() == want3);

    Tensor r4 = add_scaled(nullptr, a, a, -1.0f);
    for (float v : r4.vec()) REQUIRE(v == 0.0f);

    REQUIRE_THROWS_AS(add(nullptr, a, Tensor::from({2}, {1, 2})),
                      std::invalid_argument);
}

TEST_CASE("ops: matmul matches hand computation", "[nn][ops]") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor o = matmul(nullptr, a, b);
    REQUIRE(o.shape() == Shape{2, 2});
    REQUIRE(o.vec() == std::vector<float>{58, 64, 139, 154});

    // Batched lhs.
    Tensor a3 = Tensor::from({2, 1, 3}, {1, 0, 0, 0, 1, 0});
    Tensor o3 = matmul(nullptr, a3, b);
    REQUIRE(o3.shape() == Shape{2, 1, 2});
    REQUIRE(o3.vec() == std::vector<float>{7, 8, 9, 10});
}

TEST_CASE("ops: bmm transpose flag", "[nn][ops]") {
    // a: [1,2,2], b: [1,2,2]; with transpose_b, out = a x b^T.
    Tensor a = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({1, 2, 2}, {5, 6, 7, 8});
    Tensor o1 = bmm(nullptr, a, b, false);
    REQUIRE(o1.vec() == std::vector<float>{19, 22, 43, 50});
    Tensor o2 = bmm(nullptr, a, b, true);
    REQUIRE(o2.vec() == std::vector<float>{17, 23, 39, 53});
}

TEST_CASE("ops: causal mask zeroes future attention exactly", "[nn][ops]") {
    RandomStream rng(3);
    const std::int64_t L = 6;
    Tensor scores = Tensor::zeros({2, L, L});
    for (std::int64_t i = 0; i < scores.numel(); ++i)
        scores.data()[i] = rng.gaussian_f(0.0f, 2.0f);
    Tensor masked = causal_mask_fill(nullptr, scores);
    Tensor probs = softmax(nullptr, masked);
    for (std::int64_t g = 0; g < 2; ++g)
        for (std::int64_t i = 0; i < L; ++i) {
            float row_sum = 0.0f;
            for (std::int64_t j = 0; j < L; ++j) {
                const float p = probs.data()[(g * L + i) * L + j];
                if (j > i) {
                    // bit-exact zero, not merely small
                    REQUIRE(p == 0.0f);
                } else {
                    REQUIRE(p > 0.0f);
                }
                row_sum += p;
            }
            REQUIRE(row_sum == Catch::Approx(1.0).margin(1e-5));
        }
}

TEST_CASE("ops: softmax rows sum to one; log_softmax consistent", "[nn][ops]") {
    RandomStream rng(4);
    Tensor x = Tensor::zeros({5, 9});
    for (std::int64_t i = 0; i < x.numel(); ++i)
        x.data()[i] = rng.gaussian_f(0.0f, 3.0f);
    Tensor p = softmax(nullptr, x);
    Tensor lp = log_softmax(nullptr, x);
    for (std::int64_t r = 0; r < 5; ++r) {
        float s = 0.0f;
        for (std::int64_t c = 0; c < 9; ++c) {
            s += p.data()[r * 9 + c];
            REQUIRE(std::exp(lp.data()[r * 9 + c]) ==
                    Catch::Approx(p.data()[r * 9 + c]).margin(1e-6));
        }
        REQUIRE(s == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("ops: layer_norm normalizes rows", "[nn][ops]") {
    RandomStream rng(5);
    const std::int64_t D = 16;
    Tensor x = Tensor::zeros({3, D});
    for (std::int64_t i = 0; i < x.numel(); ++i)
        x.data()[i] = rng.gaussian_f(2.0f, 4.0f);
    Tensor ones = Tensor::full({D}, 1.0f);
    Tensor zeros = Tensor::zeros({D});
    Tensor y = layer_norm(nullptr, x, ones, zeros);
    for (std::int64_t r = 0; r < 3; ++r) {
        float mean = 0.0f, var = 0.0f;
        for (std::int64_t c = 0; c < D; ++c) mean += y.data()[r * D + c];
        mean /= D;
        for (std::int64_t c = 0; c < D; ++c) {
            const float d = y.data()[r * D + c] - mean;
            var += d * d;
        }
        var /= D;
        REQUIRE(mean == Catch::Approx(0.0).margin(1e-4));
        REQUIRE(var == Catch::Approx(1.0).margin(1e-2));
    }
}

TEST_CASE("ops: non-finite forward values raise a named fault", "[nn][ops]") {
    Tensor big = Tensor::full({4}, 1e30f);
    bool threw = false;
    try {
        // 1e30 * 1e30 overflows f32 -> Inf
        mul(nullptr, big, big);
    } catch (const numeric_fault& e) {
        threw = true;
        REQUIRE(std::string(e.what()).find("mul") != std::string::npos);
    }
    REQUIRE(threw);
}

TEST_CASE("ops: repeated forward/backward is bit-identical", "[nn][determinism]") {
    auto run_once = [](std::vector<float>* out_data,
                       std::vector<float>* out_grad) {
        RandomStream rng(42);
        Tensor x = Tensor::zeros({4, 6}, true);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            x.data()[i] = rng.gaussian_f(0.0f, 1.0f);
        Tensor w = Tensor::zeros({6, 5}, true);
        for (std::int64_t i = 0; i < w.numel(); ++i)
            w.data()[i] = rng.gaussian_f(0.0f, 0.4f);
        Tape tape;
        Tensor h = gelu(&tape, matmul(&tape, x, w));
        Tensor loss = mean_all(&tape, h);
        tape.backward(loss);
        *out_data = h.vec();
        *out_grad = w.grad_vec();
    };
    std::vector<float> d1, g1, d2, g2;
    run_once(&d1, &g1);
    run_once(&d2, &g2);
    REQUIRE(d1.size() == d2.size());
    REQUIRE(std::memcmp(d1.data(), d2.data(), d1.size() * sizeof(float)) == 0);
    REQUIRE(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
}

TEST_CASE("ops: gradients accumulate across uses", "[nn][ops]") {
    // y = sum(x) + sum(x) must give dx = 2 everywhere.
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tape tape;
    Tensor s1 = sum_all(&tape, x);
    Tensor s2 = sum_all(&tape, x);
    Tensor y = add(&tape, s1, s2);
    tape.backward(y);
    for (float g : x.grad_vec()) REQUIRE(g == 2.0f);
}

TEST_CASE("ops: slice/concat round trip", "[nn][ops]") {
    RandomStream rng(8);
    Tensor x = Tensor::zeros({2, 5, 3});
    for (std::int64_t i = 0; i < x.numel(); ++i)
        x.data()[i] = rng.gaussian_f();
    Tensor a = slice(nullptr, x, 1, 0, 2);
    Tensor b = slice(nullptr, x, 1, 2, 3);
    Tensor back = concat(nullptr, {a, b}, 1);
    REQUIRE(back.shape() == x.shape());
    REQUIRE(std::memcmp(back.data(), x.data(),
                        sizeof(float) * static_cast<std::size_t>(x.numel())) ==
            0);
}

TEST_CASE("ops: permute moves axes", "[nn][ops]") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor y = permute(nullptr, x, {1, 0});
    REQUIRE(y.shape() == Shape{3, 2});
    REQUIRE(y.vec() == std::vector<float>{1, 4, 2, 5, 3, 6});

    Tensor x4 = Tensor::from({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor y4 = permute(nullptr, x4, {0, 2, 1, 3});
    REQUIRE(y4.shape() == Shape{1, 2, 2, 2});
    REQUIRE(y4.vec() == std::vector<float>{0, 1, 4, 5, 2, 3, 6, 7});
}

TEST_CASE("ops: cross_entropy_weighted matches composed ops", "[nn][ops]") {
    RandomStream rng(12);
    const std::int64_t N = 6, V = 5;
    Tensor logits = Tensor::zeros({N, V});
    for (std::int64_t i = 0; i < logits.numel(); ++i)
        logits.data()[i] = rng.gaussian_f(0.0f, 1.5f);
    std::vector<std::int32_t> targets(N);
    std::vector<float> weights(N);
    for (std::int64_t i = 0; i < N; ++i) {
        targets[static_cast<std::size_t>(i)] =
            static_cast<std::int32_t>(rng.uniform_int(0, V - 1));
        weights[static_cast<std::size_t>(i)] = (i % 2 == 0) ? 0.25f : 0.0f;
    }
    const float fused =
        cross_entropy_weighted(nullptr, logits, targets, weights).item();
    Tensor lp = log_softmax(nullptr, logits);
    float manual = 0.0f;
    for (std::int64_t i = 0; i < N; ++i)
        manual -= weights[static_cast<std::size_t>(i)] *
                  lp.data()[i * V + targets[static_cast<std::size_t>(i)]];
    REQUIRE(fused == Catch::Approx(manual).margin(1e-5));
}

TEST_CASE("ops: sequence_log_prob sums masked token log-probs", "[nn][ops]") {
    RandomStream rng(13);
    const std::int64_t B = 2, L = 3, V = 4;
    Tensor logits = Tensor::zeros({B, L, V});
    for (std::int64_t i = 0; i < logits.numel(); ++i)
        logits.data()[i] = rng.gaussian_f(0.0f, 1.0f);
    std::vector<std::int32_t> targets{1, 2, 0, 3, -1, 1};
    std::vector<float> mask{1, 1, 0, 1, 0, 1};
    Tensor out = sequence_log_prob(nullptr, logits, targets, mask);
    Tensor lp = log_softmax(nullptr, logits);
    for (std::int64_t b = 0; b < B; ++b) {
        float want = 0.0f;
        for (std::int64_t l = 0; l < L; ++l) {
            const std::size_t i = static_cast<std::size_t>(b * L + l);
            if (mask[i] == 0.0f) continue;
            want += lp.data()[(b * L + l) * V + targets[i]];
        }
        REQUIRE(out.data()[b] == Catch::Approx(want).margin(1e-5));
    }
}

TEST_CASE("ops: dropout scales kept values and is identity off", "[nn][ops]") {
    Tensor x = Tensor::full({1000}, 1.0f);
    RandomStream rng(21);
    Tensor y = dropout(nullptr, x, 0.25f, rng, true);
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const float v = y.data()[i];
        REQUIRE((v == 0.0f || v == Catch::Approx(1.0f / 0.75f).margin(1e-6)));
        if (v != 0.0f) kept++;
    }
    REQUIRE(kept > 650);
    REQUIRE(kept < 850);
    RandomStream rng2(21);
    Tensor z = dropout(nullptr, x, 0.25f, rng2, false);
    REQUIRE(z.data() == x.data());  // identity returns the same storage
}

TEST_CASE("tape: backward requires scalar", "[nn][tape]") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    Tensor y = scale(&tape, x, 2.0f);
    REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);
}
