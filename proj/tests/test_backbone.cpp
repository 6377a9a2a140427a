#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "finite_diff.hpp"
#include "ssseg/backbone.hpp"

using namespace ssseg;
using testing::check_gradient;
using testing::random_tensor;

namespace {

FcnConfig desk_config(int classes = 3) {
    FcnConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = classes;
    cfg.encoder_channels = {4, 6, 8};
    cfg.attention_level = 2;
    return cfg;
}

struct IdentityHook : AttentionHook {
    Tensor apply(const Tensor& f, RawAttentionStack*) const override { return f; }
};

}  // namespace

TEST_CASE("config validation") {
    FcnConfig cfg = desk_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = desk_config();
    cfg.attention_level = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("indivisible spatial dims are a configuration error") {
    Rng rng(31);
    FcnConfig cfg = desk_config();
    FcnParams p = make_fcn_params(cfg, rng);
    Tensor img = Tensor::zeros({1, 30, 32});
    CHECK_THROWS_AS(fcn_forward(img, cfg, p), std::invalid_argument);
}

TEST_CASE("zero-weight final layer gives uniform probabilities") {
    Rng rng(32);
    FcnConfig cfg = desk_config(4);
    FcnParams p = make_fcn_params(cfg, rng);
    for (double& v : p.w_out.mutable_data()) v = 0.0;
    for (double& v : p.b_out.mutable_data()) v = 0.0;
    Tensor img = random_tensor({1, 16, 16}, rng, false, 0.3);
    FcnOutput out = fcn_forward(img, cfg, p);
    for (double v : out.pred.probs.data())
        CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("prediction is a per-pixel simplex at input resolution") {
    Rng rng(33);
    FcnConfig cfg = desk_config(3);
    FcnParams p = make_fcn_params(cfg, rng);
    Tensor img = random_tensor({1, 32, 32}, rng, false, 0.3);
    FcnOutput out = fcn_forward(img, cfg, p);
    CHECK(out.pred.probs.shape() == std::vector<int64_t>{3, 32, 32});
    CHECK(out.pred.logits.shape() == std::vector<int64_t>{3, 32, 32});
    for (int64_t i = 0; i < 32 * 32; ++i) {
        double s = 0.0;
        for (int64_t c = 0; c < 3; ++c) s += out.pred.probs.data()[c * 1024 + i];
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("gradient of mean logit matches finite differences for every parameter") {
    Rng rng(34);
    FcnConfig cfg = desk_config(3);
    FcnParams params = make_fcn_params(cfg, rng);
    ParamSet set;
    register_fcn_params(params, set);
    Tensor img = random_tensor({1, 16, 16}, rng, true, 0.3);

    auto forward = [&] {
        FcnOutput out = fcn_forward(img, cfg, params);
        return mul(sum(out.pred.logits), 1.0 / static_cast<double>(out.pred.logits.numel()));
    };
    backward(forward());
    for (const auto& [name, t] : set.items()) {
        auto r = check_gradient(t, t.grad(), [&] { return forward().value(); }, rng, 6);
        INFO(name << " max rel err " << r.max_rel_err);
        CHECK(r.max_rel_err < 1e-3);
    }
    auto r = check_gradient(img, img.grad(), [&] { return forward().value(); }, rng, 10);
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("identity attention attachment reproduces the detached network") {
    Rng rng(35);
    FcnConfig cfg = desk_config(3);
    FcnParams p = make_fcn_params(cfg, rng);
    Tensor img = random_tensor({1, 16, 16}, rng, false, 0.3);
    FcnOutput detached = fcn_forward(img, cfg, p);
    IdentityHook hook;
    FcnOutput attached = fcn_forward(img, cfg, p, &hook);
    for (size_t i = 0; i < detached.pred.logits.data().size(); ++i)
        CHECK(attached.pred.logits.data()[i] == detached.pred.logits.data()[i]);
    CHECK_FALSE(attached.has_raw);
}

TEST_CASE("spatial attention attachment changes the prediction and surfaces raw scores") {
    Rng rng(36);
    FcnConfig cfg = desk_config(3);
    FcnParams p = make_fcn_params(cfg, rng);
    AttentionConfig acfg;
    acfg.n_heads = 2;
    acfg.n_layers = 1;
    acfg.feature_dim = 8;
    AttentionParams ap = make_attention_params(acfg, rng);
    SsaHook hook(acfg, ap);
    Tensor img = random_tensor({1, 16, 16}, rng, false, 0.3);
    FcnOutput detached = fcn_forward(img, cfg, p);
    FcnOutput attached = fcn_forward(img, cfg, p, &hook);
    CHECK(attached.has_raw);
    CHECK(attached.attn_h == 4);
    CHECK(attached.attn_w == 4);
    CHECK(attached.raw.scores.shape() == std::vector<int64_t>{16, 16, 2});
    double diff = 0.0;
    for (size_t i = 0; i < detached.pred.logits.data().size(); ++i)
        diff = std::max(diff, std::abs(attached.pred.logits.data()[i] -
                                       detached.pred.logits.data()[i]));
    CHECK(diff > 0.0);
}

TEST_CASE("gradients reach every parameter through the attached attention") {
    Rng rng(37);
    FcnConfig cfg = desk_config(3);
    FcnParams p = make_fcn_params(cfg, rng);
    AttentionConfig acfg;
    acfg.n_heads = 2;
    acfg.feature_dim = 8;
    AttentionParams ap = make_attention_params(acfg, rng);
    ParamSet set;
    register_fcn_params(p, set);
    register_attention_params(ap, set, "attn");
    SsaHook hook(acfg, ap);
    Tensor img = random_tensor({1, 16, 16}, rng, true, 0.3);
    Tensor w = random_tensor({3, 16, 16}, rng, false);
    auto forward = [&] {
        return masked_sum(fcn_forward(img, cfg, p, &hook).pred.logits, w);
    };
    backward(forward());
    for (const auto& [name, t] : set.items()) {
        if (name == "attn.w_affinity" || name == "attn.b_affinity") continue;  // affinity-only
        INFO(name);
        CHECK_FALSE(t.grad().empty());
        auto r = check_gradient(t, t.grad(), [&] { return forward().value(); }, rng, 4);
        INFO(name << " max rel err " << r.max_rel_err);
        CHECK(r.max_rel_err < 1e-3);
    }
}

TEST_CASE("checkpoint round-trips parameters and config") {
    Rng rng(38);
    FcnConfig cfg = desk_config(3);
    FcnParams p = make_fcn_params(cfg, rng);
    ParamSet set;
    register_fcn_params(p, set);

    const std::string path =
        (std::filesystem::temp_directory_path() / "ssseg_ckpt_test.ssck").string();
    save_checkpoint(path, {{"num_classes", "3"}, {"note", "test"}}, set);
    CheckpointData data = load_checkpoint(path);
    CHECK(data.config.size() == 2);
    CHECK(data.config[0].first == "num_classes");
    CHECK(data.params.size() == set.size());

    FcnParams p2 = make_fcn_params(cfg, rng);  // different random values
    ParamSet set2;
    register_fcn_params(p2, set2);
    apply_checkpoint(data, set2);
    for (size_t i = 0; i < set.size(); ++i) {
        const auto& a = set.items()[i].second.data();
        const auto& b = set2.items()[i].second.data();
        for (size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
    }
    std::filesystem::remove(path);
}
