#include "ssseg/backbone.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssseg {

void FcnConfig::validate() const {
    if (num_classes < 2) throw std::invalid_argument("fcn config: num_classes must be >= 2");
    if (encoder_channels.empty())
        throw std::invalid_argument("fcn config: encoder_channels must be non-empty");
    if (attention_level < 0 || attention_level >= levels())
        throw std::invalid_argument("fcn config: attention_level out of range");
    if (in_channels < 1) throw std::invalid_argument("fcn config: in_channels must be >= 1");
}

FcnParams make_fcn_params(const FcnConfig& cfg, Rng& rng) {
    cfg.validate();
    FcnParams p;
    int cin = cfg.in_channels;
    for (int lvl = 0; lvl < cfg.levels(); ++lvl) {
        const int c = cfg.encoder_channels[static_cast<size_t>(lvl)];
        FcnParams::ConvBlock b;
        b.w1 = he_tensor({c, cin, 3, 3}, static_cast<int64_t>(cin) * 9, rng);
        b.b1 = zeros_param({c});
        b.w2 = he_tensor({c, c, 3, 3}, static_cast<int64_t>(c) * 9, rng);
        b.b2 = zeros_param({c});
        p.enc.push_back(std::move(b));
        cin = c;
    }
    for (int lvl = cfg.levels() - 2; lvl >= 0; --lvl) {
        const int cd = cfg.encoder_channels[static_cast<size_t>(lvl + 1)];  // deeper
        const int cs = cfg.encoder_channels[static_cast<size_t>(lvl)];      // shallower
        FcnParams::UpBlock u;
        u.wu = he_tensor({cd, cs, 2, 2}, static_cast<int64_t>(cd) * 4, rng);
        u.bu = zeros_param({cs});
        u.conv.w1 = he_tensor({cs, 2 * cs, 3, 3}, static_cast<int64_t>(2 * cs) * 9, rng);
        u.conv.b1 = zeros_param({cs});
        u.conv.w2 = he_tensor({cs, cs, 3, 3}, static_cast<int64_t>(cs) * 9, rng);
        u.conv.b2 = zeros_param({cs});
        p.dec.push_back(std::move(u));
    }
    const int c0 = cfg.encoder_channels[0];
    p.w_out = he_tensor({cfg.num_classes, c0, 1, 1}, c0, rng);
    p.b_out = zeros_param({cfg.num_classes});
    return p;
}

void register_fcn_params(FcnParams& p, ParamSet& set) {
    for (size_t lvl = 0; lvl < p.enc.size(); ++lvl) {
        std::ostringstream base;
        base << "enc" << lvl << ".";
        set.add(base.str() + "w1", p.enc[lvl].w1);
        set.add(base.str() + "b1", p.enc[lvl].b1);
        set.add(base.str() + "w2", p.enc[lvl].w2);
        set.add(base.str() + "b2", p.enc[lvl].b2);
    }
    for (size_t i = 0; i < p.dec.size(); ++i) {
        std::ostringstream base;
        base << "dec" << i << ".";
        set.add(base.str() + "wu", p.dec[i].wu);
        set.add(base.str() + "bu", p.dec[i].bu);
        set.add(base.str() + "w1", p.dec[i].conv.w1);
        set.add(base.str() + "b1", p.dec[i].conv.b1);
        set.add(base.str() + "w2", p.dec[i].conv.w2);
        set.add(base.str() + "b2", p.dec[i].conv.b2);
    }
    set.add("out.w", p.w_out);
    set.add("out.b", p.b_out);
}

FcnOutput fcn_forward(const Tensor& image, const FcnConfig& cfg, const FcnParams& params,
                      const AttentionHook* attention) {
    cfg.validate();
    if (image.rank() != 3 || image.shape()[0] != cfg.in_channels)
        throw ShapeError("fcn_forward: image must be (in_channels, H, W)");
    const int64_t H = image.shape()[1], W = image.shape()[2];
    const int64_t div = int64_t{1} << (cfg.levels() - 1);
    if (H % div != 0 || W % div != 0) {
        std::ostringstream msg;
        msg << "fcn_forward: spatial dims " << H << "x" << W << " must be divisible by " << div
            << " for " << cfg.levels() << " levels";
        throw std::invalid_argument(msg.str());
    }

    FcnOutput out;
    Tensor x = image;
    std::vector<Tensor> skips;
    for (int lvl = 0; lvl < cfg.levels(); ++lvl) {
        const auto& b = params.enc[static_cast<size_t>(lvl)];
        x = relu(conv2d(x, b.w1, b.b1, 1, 1));
        x = relu(conv2d(x, b.w2, b.b2, 1, 1));
        if (lvl == cfg.attention_level && attention != nullptr) {
            const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
            Tensor f = transpose(reshape(x, {c, h * w}), {1, 0});
            RawAttentionStack raw;
            Tensor att = attention->apply(f, &raw);
            if (att.shape() != f.shape())
                throw ShapeError("fcn_forward: attention output shape differs from its input");
            x = reshape(transpose(att, {1, 0}), {c, h, w});
            out.has_raw = raw.scores.defined();
            out.raw = raw;
            out.attn_h = static_cast<int>(h);
            out.attn_w = static_cast<int>(w);
        }
        skips.push_back(x);
        if (lvl + 1 < cfg.levels()) x = max_pool2d(x, 2, 2);
    }
    for (size_t i = 0; i < params.dec.size(); ++i) {
        const auto& u = params.dec[i];
        const int lvl = cfg.levels() - 2 - static_cast<int>(i);
        x = transposed_conv2d(x, u.wu, u.bu, 2);
        x = concat({x, skips[static_cast<size_t>(lvl)]}, 0);
        x = relu(conv2d(x, u.conv.w1, u.conv.b1, 1, 1));
        x = relu(conv2d(x, u.conv.w2, u.conv.b2, 1, 1));
    }
    out.pred.logits = conv2d(x, params.w_out, params.b_out, 1, 0);
    out.pred.probs = softmax(out.pred.logits, 0);
    return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config,
                     const ParamSet& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
    f.write("SSCK", 4);
    put_u32(f, 1);  // version
    std::ostringstream cfg;
    for (const auto& [k, v] : config) cfg << k << "=" << v << "\n";
    const std::string cfg_text = cfg.str();
    put_u32(f, static_cast<uint32_t>(cfg_text.size()));
    f.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    put_u32(f, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params.items()) {
        put_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        tensor.save(f);
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SSCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic, expected SSCK");
    const uint32_t version = get_u32(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    const uint32_t cfg_len = get_u32(f);
    std::string cfg_text(cfg_len, '\0');
    f.read(cfg_text.data(), cfg_len);
    CheckpointData data;
    std::istringstream cfg(cfg_text);
    std::string line;
    while (std::getline(cfg, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        data.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    const uint32_t n = get_u32(f);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t name_len = get_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        data.params.emplace_back(name, Tensor::load(f));
    }
    return data;
}

void apply_checkpoint(const CheckpointData& data, ParamSet& params) {
    for (const auto& [name, tensor] : data.params) {
        Tensor* target = params.find(name);
        if (!target) throw std::runtime_error("checkpoint: unknown parameter " + name);
        if (target->shape() != tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for parameter " + name);
        target->mutable_data() = tensor.data();
    }
}

}  // namespace ssseg
