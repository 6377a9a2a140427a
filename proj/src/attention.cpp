#include "ssseg/attention.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ssseg {

void AttentionConfig::validate() const {
    if (n_heads < 1 || n_layers < 1)
        throw std::invalid_argument("attention config: n_heads and n_layers must be >= 1");
    if (feature_dim < 1)
        throw std::invalid_argument("attention config: feature_dim must be set");
    if (d_q == 0 && feature_dim % n_heads != 0)
        throw std::invalid_argument(
            "attention config: feature_dim not divisible by n_heads, set d_q explicitly");
    if (d_v == 0 && feature_dim % n_heads != 0)
        throw std::invalid_argument(
            "attention config: feature_dim not divisible by n_heads, set d_v explicitly");
}

AttentionParams make_attention_params(const AttentionConfig& cfg, Rng& rng) {
    cfg.validate();
    const int dq = cfg.resolved_dq();
    const int dv = cfg.resolved_dv();
    const int width = cfg.n_heads * dv;  // concatenated head width
    AttentionParams p;
    int din = cfg.feature_dim;
    for (int l = 0; l < cfg.n_layers; ++l) {
        AttentionParams::Layer layer;
        for (int h = 0; h < cfg.n_heads; ++h) {
            AttentionParams::Head head;
            const double s = std::sqrt(1.0 / static_cast<double>(din));
            head.wq = randn_tensor({din, dq}, s, rng);
            head.bq = zeros_param({dq});
            head.wk = randn_tensor({din, dq}, s, rng);
            head.bk = zeros_param({dq});
            head.wv = randn_tensor({din, dv}, s, rng);
            head.bv = zeros_param({dv});
            layer.heads.push_back(std::move(head));
        }
        layer.ln_gain = Tensor::full({width}, 1.0, true);
        layer.ln_bias = zeros_param({width});
        layer.w_mlp = randn_tensor({width, width}, std::sqrt(1.0 / width), rng);
        layer.b_mlp = zeros_param({width});
        p.layers.push_back(std::move(layer));
        din = width;  // stacked layers consume the previous concatenated output
    }
    p.w_compress = randn_tensor({width, cfg.feature_dim}, std::sqrt(1.0 / width), rng);
    p.b_compress = zeros_param({cfg.feature_dim});
    // small random start keeps S responsive without pinning it to a constant
    p.w_affinity = randn_tensor({cfg.n_heads * cfg.n_layers, 1}, 0.1, rng);
    p.b_affinity = zeros_param({1});
    return p;
}

void register_attention_params(AttentionParams& p, ParamSet& set, const std::string& prefix) {
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        for (size_t h = 0; h < layer.heads.size(); ++h) {
            std::ostringstream base;
            base << prefix << ".l" << l << ".h" << h << ".";
            auto& head = layer.heads[h];
            set.add(base.str() + "wq", head.wq);
            set.add(base.str() + "bq", head.bq);
            set.add(base.str() + "wk", head.wk);
            set.add(base.str() + "bk", head.bk);
            set.add(base.str() + "wv", head.wv);
            set.add(base.str() + "bv", head.bv);
        }
        std::ostringstream base;
        base << prefix << ".l" << l << ".";
        set.add(base.str() + "ln_gain", layer.ln_gain);
        set.add(base.str() + "ln_bias", layer.ln_bias);
        set.add(base.str() + "w_mlp", layer.w_mlp);
        set.add(base.str() + "b_mlp", layer.b_mlp);
    }
    set.add(prefix + ".w_compress", p.w_compress);
    set.add(prefix + ".b_compress", p.b_compress);
    set.add(prefix + ".w_affinity", p.w_affinity);
    set.add(prefix + ".b_affinity", p.b_affinity);
}

SsaOutput ssa_forward(const Tensor& f, const AttentionConfig& cfg, const AttentionParams& p) {
    cfg.validate();
    if (f.rank() != 2)
        throw ShapeError("ssa_forward: expected flattened (hw, d) feature map");
    if (f.shape()[1] != cfg.feature_dim) {
        std::ostringstream msg;
        msg << "ssa_forward: feature dim " << f.shape()[1] << " does not match config/params d="
            << cfg.feature_dim << " (axis 1)";
        throw ShapeError(msg.str());
    }
    const int64_t hw = f.shape()[0];
    const int dq = cfg.resolved_dq();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dq));

    std::vector<Tensor> raw_channels;
    Tensor x = f;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& layer = p.layers[static_cast<size_t>(l)];
        std::vector<Tensor> heads_out;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto& head = layer.heads[static_cast<size_t>(h)];
            Tensor q = add_rowvec(matmul(x, head.wq), head.bq);
            Tensor k = add_rowvec(matmul(x, head.wk), head.bk);
            Tensor v = add_rowvec(matmul(x, head.wv), head.bv);
            Tensor scores = mul(matmul(q, transpose(k, {1, 0})), inv_sqrt_dk);
            raw_channels.push_back(reshape(scores, {hw, hw, 1}));
            heads_out.push_back(matmul(softmax(scores, 1), v));
        }
        Tensor a = cfg.n_heads == 1 ? heads_out[0] : concat(heads_out, 1);
        Tensor normed = add_rowvec(mul_rowvec(layer_norm(a, 1), layer.ln_gain), layer.ln_bias);
        Tensor mlp = add_rowvec(matmul(normed, layer.w_mlp), layer.b_mlp);
        x = add(a, mlp);
    }
    SsaOutput out;
    out.attended = add_rowvec(matmul(x, p.w_compress), p.b_compress);
    out.raw.scores =
        raw_channels.size() == 1 ? raw_channels[0] : concat(raw_channels, 2);
    out.raw.n_heads = cfg.n_heads;
    out.raw.n_layers = cfg.n_layers;
    return out;
}

AffinityMatrix attention_to_affinity(const RawAttentionStack& raw, const AttentionParams& p) {
    if (!raw.scores.defined() || raw.scores.rank() != 3)
        throw ShapeError("attention_to_affinity: raw stack must be (hw, hw, channels)");
    const int64_t hw = raw.scores.shape()[0];
    const int64_t channels = raw.scores.shape()[2];
    if (raw.scores.shape()[1] != hw)
        throw ShapeError("attention_to_affinity: raw stack not square over axes 0,1");
    if (p.w_affinity.shape()[0] != channels) {
        std::ostringstream msg;
        msg << "attention_to_affinity: stack has " << channels << " channels but compression has "
            << p.w_affinity.shape()[0] << " (axis 0)";
        throw ShapeError(msg.str());
    }
    // Row-softmax over the second spatial index, per channel.
    Tensor a = softmax(raw.scores, 1);
    Tensor a_sym = add(a, transpose(a, {1, 0, 2}));
    Tensor flat = reshape(a_sym, {hw * hw, channels});
    Tensor compressed = add_rowvec(matmul(flat, p.w_affinity), p.b_affinity);
    AffinityMatrix out;
    out.s = sigmoid(reshape(compressed, {hw, hw}));
    return out;
}

DistanceDecayMap distance_decay_map(int h, int w, double sigma) {
    if (h < 1 || w < 1) throw std::invalid_argument("distance_decay_map: grid must be >= 1x1");
    if (!(sigma > 0.0)) throw std::invalid_argument("distance_decay_map: sigma must be > 0");
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor m = Tensor::zeros({hw, hw});
    auto& data = m.mutable_data();
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            const int64_t pi = static_cast<int64_t>(py) * w + px;
            for (int qy = 0; qy < h; ++qy)
                for (int qx = 0; qx < w; ++qx) {
                    const int64_t qi = static_cast<int64_t>(qy) * w + qx;
                    const double dx = px - qx, dy = py - qy;
                    data[static_cast<size_t>(pi * hw + qi)] =
                        std::exp(-(dx * dx + dy * dy) * inv);
                }
        }
    DistanceDecayMap out;
    out.m = m;
    out.sigma = sigma;
    out.h = h;
    out.w = w;
    return out;
}

}  // namespace ssseg
