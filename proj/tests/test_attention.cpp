#include <cmath>

#include "doctest.h"
#include "finite_diff.hpp"
#include "ssseg/attention.hpp"

using namespace ssseg;
using testing::check_gradient;
using testing::random_tensor;

namespace {

AttentionConfig small_config(int n_heads = 2, int n_layers = 1, int d = 8) {
    AttentionConfig cfg;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.feature_dim = d;
    return cfg;
}

}  // namespace

TEST_CASE("zero query/key transforms give uniform attention rows") {
    Rng rng(21);
    AttentionConfig cfg = small_config();
    AttentionParams p = make_attention_params(cfg, rng);
    for (auto& head : p.layers[0].heads) {
        for (double& v : head.wq.mutable_data()) v = 0.0;
        for (double& v : head.wk.mutable_data()) v = 0.0;
    }
    const int hw = 12;
    Tensor f = random_tensor({hw, cfg.feature_dim}, rng, false);
    SsaOutput out = ssa_forward(f, cfg, p);
    for (double v : out.raw.scores.data()) CHECK(v == 0.0);

    Tensor rows = softmax(out.raw.scores, 1);
    for (double v : rows.data()) CHECK(v == doctest::Approx(1.0 / hw).epsilon(1e-12));
}

TEST_CASE("attention softmax rows sum to one") {
    Rng rng(22);
    AttentionConfig cfg = small_config(2, 2);
    AttentionParams p = make_attention_params(cfg, rng);
    const int hw = 9;
    Tensor f = random_tensor({hw, cfg.feature_dim}, rng, true);
    SsaOutput out = ssa_forward(f, cfg, p);
    CHECK(out.attended.shape() == f.shape());
    CHECK(out.raw.scores.shape() == std::vector<int64_t>{hw, hw, 4});

    Tensor rows = softmax(out.raw.scores, 1);
    for (int64_t pi = 0; pi < hw; ++pi)
        for (int64_t c = 0; c < 4; ++c) {
            double s = 0.0;
            for (int64_t q = 0; q < hw; ++q) s += rows.data()[(pi * hw + q) * 4 + c];
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
}

TEST_CASE("ssa_forward gradients match finite differences") {
    Rng rng(23);
    AttentionConfig cfg = small_config(2, 1, 8);
    AttentionParams p = make_attention_params(cfg, rng);
    const int hw = 16;
    Tensor f = random_tensor({hw, cfg.feature_dim}, rng, true, 0.5);
    auto forward = [&] { return sum(ssa_forward(f, cfg, p).attended); };
    backward(forward());

    std::vector<Tensor> targets = {f,
                                   p.layers[0].heads[0].wq,
                                   p.layers[0].heads[1].wk,
                                   p.layers[0].heads[0].wv,
                                   p.layers[0].heads[1].bq,
                                   p.layers[0].ln_gain,
                                   p.layers[0].ln_bias,
                                   p.layers[0].w_mlp,
                                   p.layers[0].b_mlp,
                                   p.w_compress,
                                   p.b_compress};
    for (Tensor t : targets) {
        auto r = check_gradient(t, t.grad(), [&] { return forward().value(); }, rng, 12);
        CHECK(r.max_rel_err < 1e-3);
    }
}

TEST_CASE("stacked attention layers stay differentiable") {
    Rng rng(29);
    AttentionConfig cfg = small_config(2, 2, 8);
    AttentionParams p = make_attention_params(cfg, rng);
    Tensor f = random_tensor({6, cfg.feature_dim}, rng, true, 0.5);
    auto forward = [&] { return sum(ssa_forward(f, cfg, p).attended); };
    backward(forward());
    for (Tensor t : {f, p.layers[1].heads[0].wq, p.layers[1].w_mlp}) {
        auto r = check_gradient(t, t.grad(), [&] { return forward().value(); }, rng, 8);
        CHECK(r.max_rel_err < 1e-3);
    }
}

TEST_CASE("zero raw scores give a constant affinity matrix") {
    Rng rng(24);
    AttentionConfig cfg = small_config(2, 1, 8);
    AttentionParams p = make_attention_params(cfg, rng);
    const int hw = 10;
    RawAttentionStack raw;
    raw.scores = Tensor::zeros({hw, hw, 2});
    raw.n_heads = 2;
    raw.n_layers = 1;
    AffinityMatrix S = attention_to_affinity(raw, p);
    // uniform softmax rows symmetrize to a constant 2/hw per channel
    const double abar = 2.0 / hw;
    const double z = p.w_affinity.data()[0] * abar + p.w_affinity.data()[1] * abar +
                     p.b_affinity.data()[0];
    const double expected = 1.0 / (1.0 + std::exp(-z));
    for (double v : S.s.data()) CHECK(v == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("affinity matrix is symmetric, in range, and matches a straight-line oracle") {
    Rng rng(25);
    AttentionConfig cfg = small_config(2, 1, 8);
    AttentionParams p = make_attention_params(cfg, rng);
    const int hw = 9, channels = 2;
    RawAttentionStack raw;
    raw.scores = random_tensor({hw, hw, channels}, rng, true, 1.5);
    raw.n_heads = 2;
    raw.n_layers = 1;
    AffinityMatrix S = attention_to_affinity(raw, p);

    // independent elementwise recomputation, no shared helpers
    const auto& a = raw.scores.data();
    std::vector<double> soft(static_cast<size_t>(hw) * hw * channels);
    for (int c = 0; c < channels; ++c)
        for (int pi = 0; pi < hw; ++pi) {
            double m = -1e300;
            for (int q = 0; q < hw; ++q)
                m = std::max(m, a[(static_cast<size_t>(pi) * hw + q) * channels + c]);
            double z = 0.0;
            for (int q = 0; q < hw; ++q)
                z += std::exp(a[(static_cast<size_t>(pi) * hw + q) * channels + c] - m);
            for (int q = 0; q < hw; ++q)
                soft[(static_cast<size_t>(pi) * hw + q) * channels + c] =
                    std::exp(a[(static_cast<size_t>(pi) * hw + q) * channels + c] - m) / z;
        }
    double max_diff = 0.0;
    for (int pi = 0; pi < hw; ++pi)
        for (int q = 0; q < hw; ++q) {
            double z = p.b_affinity.data()[0];
            for (int c = 0; c < channels; ++c) {
                const double abar = soft[(static_cast<size_t>(pi) * hw + q) * channels + c] +
                                    soft[(static_cast<size_t>(q) * hw + pi) * channels + c];
                z += p.w_affinity.data()[static_cast<size_t>(c)] * abar;
            }
            const double expected = 1.0 / (1.0 + std::exp(-z));
            max_diff = std::max(
                max_diff, std::abs(expected - S.s.data()[static_cast<size_t>(pi) * hw + q]));
        }
    CHECK(max_diff < 1e-12);

    for (int pi = 0; pi < hw; ++pi)
        for (int q = 0; q < hw; ++q) {
            const double v = S.s.data()[static_cast<size_t>(pi) * hw + q];
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            CHECK(v == S.s.data()[static_cast<size_t>(q) * hw + pi]);
        }
}

TEST_CASE("symmetrized scores are exactly symmetric for random raw input") {
    Rng rng(26);
    const int hw = 7;
    Tensor a = random_tensor({hw, hw, 3}, rng, false, 2.0);
    Tensor abar = add(a, transpose(a, {1, 0, 2}));
    for (int pi = 0; pi < hw; ++pi)
        for (int q = 0; q < hw; ++q)
            for (int c = 0; c < 3; ++c)
                CHECK(abar.data()[(static_cast<size_t>(pi) * hw + q) * 3 + c] ==
                      abar.data()[(static_cast<size_t>(q) * hw + pi) * 3 + c]);
}

TEST_CASE("gradients flow from the affinity matrix back to the host features") {
    Rng rng(27);
    AttentionConfig cfg = small_config(2, 1, 8);
    AttentionParams p = make_attention_params(cfg, rng);
    const int hw = 16;
    Tensor f = random_tensor({hw, cfg.feature_dim}, rng, true, 0.5);

    {
        SsaOutput out = ssa_forward(f, cfg, p);
        backward(sum(attention_to_affinity(out.raw, p).s));
        double norm = 0.0;
        for (double g : f.grad()) norm += g * g;
        CHECK(norm > 0.0);
        f.zero_grad();
        p.w_affinity.zero_grad();
    }

    // zero-mean probe weights keep the finite-difference quotient
    // well-conditioned (plain sum cancels to tiny gradients under a large
    // function value)
    Tensor w = random_tensor({hw, hw}, rng, false);
    auto forward = [&] {
        SsaOutput out = ssa_forward(f, cfg, p);
        return masked_sum(attention_to_affinity(out.raw, p).s, w);
    };
    backward(forward());
    auto r = check_gradient(f, f.grad(), [&] { return forward().value(); }, rng, 20);
    CHECK(r.max_rel_err < 1e-3);
    auto rw = check_gradient(p.w_affinity, p.w_affinity.grad(),
                             [&] { return forward().value(); }, rng, 2);
    CHECK(rw.max_rel_err < 1e-3);
}

TEST_CASE("distance decay map closed forms") {
    CHECK_THROWS_AS(distance_decay_map(4, 4, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(distance_decay_map(4, 4, -1.0), std::invalid_argument);

    DistanceDecayMap m = distance_decay_map(5, 3, 1.0);
    const int hw = 15;
    for (int pi = 0; pi < hw; ++pi) CHECK(m.m.data()[static_cast<size_t>(pi) * hw + pi] == 1.0);
    // axis-adjacent pixels at unit distance
    CHECK(m.m.data()[0 * hw + 1] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(m.m.data()[0 * hw + 3] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("distance decay map equals brute-force double loop") {
    DistanceDecayMap m = distance_decay_map(4, 4, 2.0);
    const int hw = 16;
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px)
            for (int qy = 0; qy < 4; ++qy)
                for (int qx = 0; qx < 4; ++qx) {
                    const double d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy);
                    const double expected = std::exp(-d2 / (2.0 * 2.0 * 2.0));
                    const int pi = py * 4 + px, q = qy * 4 + qx;
                    CHECK(m.m.data()[static_cast<size_t>(pi) * hw + q] == expected);
                }
    CHECK_FALSE(m.m.requires_grad());
}
