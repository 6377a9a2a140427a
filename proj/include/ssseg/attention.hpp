#pragma once

#include <string>
#include <vector>

#include "ssseg/nn.hpp"
#include "ssseg/ops.hpp"

namespace ssseg {

struct AttentionConfig {
    int n_heads = 2;
    int n_layers = 1;
    int d_q = 0;          // query/key width per head; 0 picks feature_dim / n_heads
    int d_v = 0;          // value width per head; 0 picks feature_dim / n_heads
    int feature_dim = 0;  // channel width d of the host layer

    int resolved_dq() const { return d_q > 0 ? d_q : feature_dim / n_heads; }
    int resolved_dv() const { return d_v > 0 ? d_v : feature_dim / n_heads; }
    void validate() const;
};

// Pre-softmax scaled dot-product scores from every head of every layer,
// stacked channelwise: (hw, hw, n_heads * n_layers).
struct RawAttentionStack {
    Tensor scores;
    int n_heads = 0;
    int n_layers = 0;
};

// Learned pairwise similarity over the down-sampled grid; values in (0,1),
// symmetric.
struct AffinityMatrix {
    Tensor s;  // (hw, hw)
};

// Constant Gaussian falloff of pairwise weight with grid distance;
// m[p,q] = exp(-||p_xy - q_xy||^2 / (2 sigma^2)), m[p,p] = 1.
struct DistanceDecayMap {
    Tensor m;  // (hw, hw), not on the tape
    double sigma = 0.0;
    int h = 0, w = 0;
};

struct AttentionParams {
    struct Head {
        Tensor wq, bq;  // (din, d_q), (d_q)
        Tensor wk, bk;
        Tensor wv, bv;  // (din, d_v), (d_v)
    };
    struct Layer {
        std::vector<Head> heads;
        Tensor ln_gain, ln_bias;  // (n*d_v)
        Tensor w_mlp, b_mlp;      // (n*d_v, n*d_v), (n*d_v)
    };
    std::vector<Layer> layers;
    Tensor w_compress, b_compress;  // (n*d_v, d), (d)
    Tensor w_affinity, b_affinity;  // (n*n_layers, 1), (1); channel compression for S
};

AttentionParams make_attention_params(const AttentionConfig& cfg, Rng& rng);
void register_attention_params(AttentionParams& p, ParamSet& set, const std::string& prefix);

struct SsaOutput {
    Tensor attended;  // (hw, d)
    RawAttentionStack raw;
};

// Multi-head scaled dot-product attention over a flattened (hw, d) feature
// map; per layer the concatenated heads pass through a layernorm + MLP skip
// block, and the final output is compressed back to d channels.
SsaOutput ssa_forward(const Tensor& f, const AttentionConfig& cfg, const AttentionParams& p);

// Row-softmax per channel, symmetrization A + A^T, channelwise compression to
// one channel and sigmoid. Keeps gradient connectivity back through the raw
// scores.
AffinityMatrix attention_to_affinity(const RawAttentionStack& raw, const AttentionParams& p);

DistanceDecayMap distance_decay_map(int h, int w, double sigma);

}  // namespace ssseg
