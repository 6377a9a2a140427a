#pragma once

#include <string>
#include <vector>

#include "ssseg/attention.hpp"
#include "ssseg/nn.hpp"
#include "ssseg/ops.hpp"

namespace ssseg {

struct FcnConfig {
    int in_channels = 1;
    int num_classes = 4;  // C+1 including background
    std::vector<int> encoder_channels{16, 32, 64};
    int attention_level = 2;  // encoder level hosting the attention module

    int levels() const { return static_cast<int>(encoder_channels.size()); }
    void validate() const;
};

// Per-pixel class scores; probs = softmax(logits) over the class axis.
struct Prediction {
    Tensor probs;   // (num_classes, H, W)
    Tensor logits;  // (num_classes, H, W)
};

struct FcnParams {
    struct ConvBlock {
        Tensor w1, b1, w2, b2;
    };
    struct UpBlock {
        Tensor wu, bu;  // transposed conv
        ConvBlock conv;
    };
    std::vector<ConvBlock> enc;  // one per encoder level
    std::vector<UpBlock> dec;    // decode order: deepest first
    Tensor w_out, b_out;         // final 1x1 conv
};

FcnParams make_fcn_params(const FcnConfig& cfg, Rng& rng);
void register_fcn_params(FcnParams& p, ParamSet& set);

// Attachment point for a spatial attention module on the flattened feature
// map of one encoder level. The attended output replaces the level's
// feature map.
class AttentionHook {
public:
    virtual ~AttentionHook() = default;
    // f: (hw, d); returns (hw, d). May surface the raw per-head scores.
    virtual Tensor apply(const Tensor& f, RawAttentionStack* raw) const = 0;
};

class SsaHook : public AttentionHook {
public:
    SsaHook(const AttentionConfig& cfg, const AttentionParams& params)
        : cfg_(&cfg), params_(&params) {}
    Tensor apply(const Tensor& f, RawAttentionStack* raw) const override {
        SsaOutput out = ssa_forward(f, *cfg_, *params_);
        if (raw) *raw = out.raw;
        return out.attended;
    }

private:
    const AttentionConfig* cfg_;
    const AttentionParams* params_;
};

struct FcnOutput {
    Prediction pred;
    bool has_raw = false;
    RawAttentionStack raw;
    int attn_h = 0, attn_w = 0;  // spatial grid of the attention host layer
};

// U-shaped encoder-decoder producing per-pixel class probabilities at input
// resolution. When the hook is attached, the feature map at attention_level
// is routed through it.
FcnOutput fcn_forward(const Tensor& image, const FcnConfig& cfg, const FcnParams& params,
                      const AttentionHook* attention = nullptr);

// Checkpoint container: config as key=value text plus the named parameter
// tensors in registration order.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config,
                     const ParamSet& params);

struct CheckpointData {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, Tensor>> params;
};
CheckpointData load_checkpoint(const std::string& path);

// Copies loaded tensors into the registered parameters, matching by name.
void apply_checkpoint(const CheckpointData& data, ParamSet& params);

}  // namespace ssseg
