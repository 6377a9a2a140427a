#include "ssseg/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ssseg {

void KernelSpec::validate() const {
    for (const auto& k : kernels) {
        if (!(k.sigma > 0.0))
            throw std::invalid_argument("kernel spec: all bandwidths must be > 0");
        if (k.weight < 0.0)
            throw std::invalid_argument("kernel spec: all weights must be >= 0");
    }
}

double gaussian_kernel_similarity(const std::vector<double>& features_p,
                                  const std::vector<double>& features_q,
                                  const KernelSpec& spec) {
    if (features_p.size() != features_q.size())
        throw ShapeError("gaussian_kernel_similarity: feature vectors differ in length");
    spec.validate();
    const size_t n = features_p.size();
    // layout convention: [intensity..., x, y]
    const size_t loc_start = n >= 2 ? n - 2 : n;
    double intensity2 = 0.0, loc2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = features_p[i] - features_q[i];
        if (i < loc_start)
            intensity2 += d * d;
        else
            loc2 += d * d;
    }
    double s = 0.0;
    for (const auto& k : spec.kernels) {
        double d2 = 0.0;
        switch (k.features) {
            case KernelFeatures::intensity_xy: d2 = intensity2 + loc2; break;
            case KernelFeatures::intensity: d2 = intensity2; break;
            case KernelFeatures::xy: d2 = loc2; break;
        }
        s += k.weight * std::exp(-d2 / (2.0 * k.sigma * k.sigma));
    }
    return s;
}

Tensor pce_loss(const Prediction& pred, const ScribbleMask& scribbles) {
    if (pred.logits.rank() != 3)
        throw ShapeError("pce_loss: prediction must be (num_classes, H, W)");
    const int64_t C = pred.logits.shape()[0];
    const int64_t H = pred.logits.shape()[1];
    const int64_t W = pred.logits.shape()[2];
    if (scribbles.h != H || scribbles.w != W)
        throw ShapeError("pce_loss: scribble mask does not match prediction spatial dims");

    int64_t labeled = 0;
    for (int32_t l : scribbles.labels) {
        if (l == kUnknownLabel) continue;
        if (l < 0 || l >= C) {
            std::ostringstream msg;
            msg << "pce_loss: label value " << l << " outside [0," << C << ")";
            throw std::out_of_range(msg.str());
        }
        ++labeled;
    }
    if (labeled == 0) return Tensor::scalar(0.0);

    Tensor onehot = Tensor::zeros({C, H, W});
    auto& m = onehot.mutable_data();
    const int64_t hw = H * W;
    for (int64_t i = 0; i < hw; ++i) {
        const int32_t l = scribbles.labels[static_cast<size_t>(i)];
        if (l != kUnknownLabel) m[static_cast<size_t>(l * hw + i)] = 1.0;
    }
    return mul(masked_sum(log_softmax(pred.logits, 0), onehot),
               -1.0 / static_cast<double>(labeled));
}

namespace {

// Per-pixel constants entering the CRF kernel.
struct CrfFeatures {
    std::vector<double> intensity, xn, yn;
};

CrfFeatures build_crf_features(const Tensor& image, int64_t H, int64_t W) {
    CrfFeatures f;
    const int64_t hw = H * W;
    f.intensity.resize(static_cast<size_t>(hw));
    f.xn.resize(static_cast<size_t>(hw));
    f.yn.resize(static_cast<size_t>(hw));
    const double* img = image.data().data();
    const double ix = W > 1 ? 1.0 / static_cast<double>(W - 1) : 0.0;
    const double iy = H > 1 ? 1.0 / static_cast<double>(H - 1) : 0.0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const size_t i = static_cast<size_t>(y * W + x);
            f.intensity[i] = img[i];
            f.xn[i] = static_cast<double>(x) * ix;
            f.yn[i] = static_cast<double>(y) * iy;
        }
    return f;
}

double kernel_value(const CrfFeatures& f, const KernelSpec& spec, size_t p, size_t q) {
    const double di = f.intensity[p] - f.intensity[q];
    const double dx = f.xn[p] - f.xn[q];
    const double dy = f.yn[p] - f.yn[q];
    const double intensity2 = di * di;
    const double loc2 = dx * dx + dy * dy;
    double s = 0.0;
    for (const auto& k : spec.kernels) {
        double d2 = 0.0;
        switch (k.features) {
            case KernelFeatures::intensity_xy: d2 = intensity2 + loc2; break;
            case KernelFeatures::intensity: d2 = intensity2; break;
            case KernelFeatures::xy: d2 = loc2; break;
        }
        s += k.weight * std::exp(-d2 / (2.0 * k.sigma * k.sigma));
    }
    return s;
}

Tensor make_scalar_node(const char* op, double value, std::vector<std::shared_ptr<detail::Node>> parents,
                        std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->op = op;
    n->data.assign(1, value);
    bool rg = false;
    if (detail::grad_enabled())
        for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(n);
}

}  // namespace

Tensor masked_crf_loss(const Prediction& pred, const Tensor& image, const GateMask& gate,
                       const KernelSpec& spec, const WindowSpec& window, PairLossStats* stats) {
    if (pred.probs.rank() != 3)
        throw ShapeError("masked_crf_loss: prediction must be (num_classes, H, W)");
    const int64_t C = pred.probs.shape()[0];
    const int64_t H = pred.probs.shape()[1];
    const int64_t W = pred.probs.shape()[2];
    const bool image_hw = image.rank() == 2 && image.shape()[0] == H && image.shape()[1] == W;
    const bool image_chw = image.rank() == 3 && image.shape()[0] == 1 && image.shape()[1] == H &&
                           image.shape()[2] == W;
    if (!image_hw && !image_chw)
        throw ShapeError("masked_crf_loss: image must be (H, W) or (1, H, W) matching prediction");
    if (gate.h != H || gate.w != W)
        throw ShapeError("masked_crf_loss: gate mask does not match prediction spatial dims");
    if (window.radius < 1)
        throw std::invalid_argument("masked_crf_loss: window radius must be >= 1");
    spec.validate();

    const int64_t hw = H * W;
    int64_t n_valid = 0;
    for (uint8_t v : gate.valid) n_valid += v ? 1 : 0;
    if (n_valid == 0) {
        if (stats) {
            stats->empty_set = true;
            stats->valid_pixels = 0;
            stats->pair_terms = 0;
        } else {
            std::fprintf(stderr, "masked_crf_loss: empty valid set, returning 0\n");
        }
        return Tensor::scalar(0.0);
    }

    CrfFeatures feat = build_crf_features(image, H, W);
    const int r = window.radius;
    const double* P = pred.probs.data().data();
    const std::vector<uint8_t> valid = gate.valid;

    double acc = 0.0;
    int64_t pair_terms = 0;
    for (int64_t py = 0; py < H; ++py)
        for (int64_t px = 0; px < W; ++px) {
            const size_t p = static_cast<size_t>(py * W + px);
            if (!valid[p]) continue;
            double row = 0.0;
            const int64_t qy0 = std::max<int64_t>(0, py - r + 1);
            const int64_t qy1 = std::min<int64_t>(H - 1, py + r - 1);
            const int64_t qx0 = std::max<int64_t>(0, px - r + 1);
            const int64_t qx1 = std::min<int64_t>(W - 1, px + r - 1);
            for (int64_t qy = qy0; qy <= qy1; ++qy)
                for (int64_t qx = qx0; qx <= qx1; ++qx) {
                    if (qy == py && qx == px) continue;
                    const size_t q = static_cast<size_t>(qy * W + qx);
                    if (!valid[q]) continue;
                    const double s = kernel_value(feat, spec, p, q);
                    double dot = 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        dot += P[c * hw + p] * P[c * hw + q];
                    row += s * (1.0 - dot);
                    ++pair_terms;
                }
            acc += row;
        }
    const double value = acc / static_cast<double>(n_valid);
    if (stats) {
        stats->valid_pixels = n_valid;
        stats->pair_terms = pair_terms;
        stats->empty_set = false;
    }

    auto backward_fn = [C, H, W, hw, r, n_valid, valid, feat = std::move(feat),
                        spec](detail::Node& self) {
        detail::Node& pp = *self.parents[0];
        if (!pp.requires_grad) return;
        const double cfac = self.grad[0] / static_cast<double>(n_valid);
        const double* P = pp.data.data();
        double* G = pp.grad.data();
        std::vector<double> tmp(static_cast<size_t>(C));
        for (int64_t py = 0; py < H; ++py)
            for (int64_t px = 0; px < W; ++px) {
                const size_t p = static_cast<size_t>(py * W + px);
                if (!valid[p]) continue;
                std::fill(tmp.begin(), tmp.end(), 0.0);
                const int64_t qy0 = std::max<int64_t>(0, py - r + 1);
                const int64_t qy1 = std::min<int64_t>(H - 1, py + r - 1);
                const int64_t qx0 = std::max<int64_t>(0, px - r + 1);
                const int64_t qx1 = std::min<int64_t>(W - 1, px + r - 1);
                for (int64_t qy = qy0; qy <= qy1; ++qy)
                    for (int64_t qx = qx0; qx <= qx1; ++qx) {
                        if (qy == py && qx == px) continue;
                        const size_t q = static_cast<size_t>(qy * W + qx);
                        if (!valid[q]) continue;
                        const double s = kernel_value(feat, spec, p, q);
                        for (int64_t c = 0; c < C; ++c)
                            tmp[static_cast<size_t>(c)] += s * P[c * hw + q];
                    }
                // each unordered pair appears twice in the double sum
                for (int64_t c = 0; c < C; ++c)
                    G[c * hw + p] -= 2.0 * cfac * tmp[static_cast<size_t>(c)];
            }
    };
    return make_scalar_node("masked_crf_loss", value, {pred.probs.node()},
                            std::move(backward_fn));
}

Tensor attentive_similarity_loss(const Prediction& pred, const AffinityMatrix& S,
                                 const DistanceDecayMap& M, const ScribbleMask& scribbles,
                                 const WindowSpec& window, int grid_h, int grid_w,
                                 PairLossStats* stats) {
    if (pred.probs.rank() != 3)
        throw ShapeError("attentive_similarity_loss: prediction must be (num_classes, H, W)");
    const int64_t C = pred.probs.shape()[0];
    const int64_t H = pred.probs.shape()[1];
    const int64_t W = pred.probs.shape()[2];
    if (scribbles.h != H || scribbles.w != W)
        throw ShapeError("attentive_similarity_loss: scribbles do not match prediction dims");
    if (grid_h < 1 || grid_w < 1)
        throw std::invalid_argument("attentive_similarity_loss: grid dims must be >= 1");
    const int64_t hw = static_cast<int64_t>(grid_h) * grid_w;
    if (S.s.rank() != 2 || S.s.shape()[0] != hw || S.s.shape()[1] != hw)
        throw ShapeError("attentive_similarity_loss: affinity matrix does not match grid");
    if (M.m.rank() != 2 || M.m.shape()[0] != hw || M.m.shape()[1] != hw)
        throw ShapeError("attentive_similarity_loss: distance map does not match grid");
    if (H % grid_h != 0 || W % grid_w != 0)
        throw std::invalid_argument(
            "attentive_similarity_loss: grid dims must divide prediction dims");
    if (window.radius < 1)
        throw std::invalid_argument("attentive_similarity_loss: window radius must be >= 1");

    // Conservative projection: a coarse cell is unlabeled only if every
    // covered full-resolution pixel is.
    const int64_t bh = H / grid_h, bw = W / grid_w;
    std::vector<uint8_t> valid(static_cast<size_t>(hw), 0);
    int64_t n_valid = 0;
    for (int64_t cy = 0; cy < grid_h; ++cy)
        for (int64_t cx = 0; cx < grid_w; ++cx) {
            bool all_unknown = true;
            for (int64_t y = cy * bh; all_unknown && y < (cy + 1) * bh; ++y)
                for (int64_t x = cx * bw; x < (cx + 1) * bw; ++x)
                    if (scribbles.labels[static_cast<size_t>(y * W + x)] != kUnknownLabel) {
                        all_unknown = false;
                        break;
                    }
            if (all_unknown) {
                valid[static_cast<size_t>(cy * grid_w + cx)] = 1;
                ++n_valid;
            }
        }
    if (n_valid == 0) {
        if (stats) {
            stats->empty_set = true;
            stats->valid_pixels = 0;
            stats->pair_terms = 0;
        } else {
            std::fprintf(stderr, "attentive_similarity_loss: empty valid set, returning 0\n");
        }
        return Tensor::scalar(0.0);
    }

    Tensor ptilde = bilinear_interpolate(pred.probs, grid_h, grid_w);

    const int r = window.radius;
    const double* P = ptilde.data().data();
    const double* Ms = M.m.data().data();
    const double* Ss = S.s.data().data();

    double acc = 0.0;
    int64_t pair_terms = 0;
    for (int64_t py = 0; py < grid_h; ++py)
        for (int64_t px = 0; px < grid_w; ++px) {
            const int64_t p = py * grid_w + px;
            if (!valid[static_cast<size_t>(p)]) continue;
            double row = 0.0;
            const int64_t qy0 = std::max<int64_t>(0, py - r + 1);
            const int64_t qy1 = std::min<int64_t>(grid_h - 1, py + r - 1);
            const int64_t qx0 = std::max<int64_t>(0, px - r + 1);
            const int64_t qx1 = std::min<int64_t>(grid_w - 1, px + r - 1);
            for (int64_t qy = qy0; qy <= qy1; ++qy)
                for (int64_t qx = qx0; qx <= qx1; ++qx) {
                    if (qy == py && qx == px) continue;
                    const int64_t q = qy * grid_w + qx;
                    if (!valid[static_cast<size_t>(q)]) continue;
                    double dot = 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        dot += P[c * hw + p] * P[c * hw + q];
                    row += Ms[p * hw + q] * Ss[p * hw + q] * (1.0 - dot);
                    ++pair_terms;
                }
            acc += row;
        }
    const double value = acc / static_cast<double>(n_valid);
    if (stats) {
        stats->valid_pixels = n_valid;
        stats->pair_terms = pair_terms;
        stats->empty_set = false;
    }

    const int64_t gh = grid_h, gw = grid_w;
    Tensor m_keepalive = M.m;
    auto backward_fn = [C, gh, gw, hw, r, n_valid, valid,
                        m_keepalive](detail::Node& self) {
        detail::Node& pp = *self.parents[0];  // down-sampled prediction
        detail::Node& ps = *self.parents[1];  // affinity matrix
        const double cfac = self.grad[0] / static_cast<double>(n_valid);
        const double* P = pp.data.data();
        const double* Ss = ps.data.data();
        const double* Ms = m_keepalive.data().data();
        double* Pg = pp.requires_grad ? pp.grad.data() : nullptr;
        double* Sg = ps.requires_grad ? ps.grad.data() : nullptr;
        std::vector<double> tmp(static_cast<size_t>(C));
        for (int64_t py = 0; py < gh; ++py)
            for (int64_t px = 0; px < gw; ++px) {
                const int64_t p = py * gw + px;
                if (!valid[static_cast<size_t>(p)]) continue;
                std::fill(tmp.begin(), tmp.end(), 0.0);
                const int64_t qy0 = std::max<int64_t>(0, py - r + 1);
                const int64_t qy1 = std::min<int64_t>(gh - 1, py + r - 1);
                const int64_t qx0 = std::max<int64_t>(0, px - r + 1);
                const int64_t qx1 = std::min<int64_t>(gw - 1, px + r - 1);
                for (int64_t qy = qy0; qy <= qy1; ++qy)
                    for (int64_t qx = qx0; qx <= qx1; ++qx) {
                        if (qy == py && qx == px) continue;
                        const int64_t q = qy * gw + qx;
                        if (!valid[static_cast<size_t>(q)]) continue;
                        const double m = Ms[p * hw + q];
                        const double s = Ss[p * hw + q];
                        double dot = 0.0;
                        for (int64_t c = 0; c < C; ++c)
                            dot += P[c * hw + p] * P[c * hw + q];
                        if (Sg) Sg[p * hw + q] += cfac * m * (1.0 - dot);
                        if (Pg) {
                            const double ms = m * s;
                            for (int64_t c = 0; c < C; ++c)
                                tmp[static_cast<size_t>(c)] += ms * P[c * hw + q];
                        }
                    }
                if (Pg)
                    for (int64_t c = 0; c < C; ++c)
                        Pg[c * hw + p] -= 2.0 * cfac * tmp[static_cast<size_t>(c)];
            }
    };
    return make_scalar_node("attentive_similarity_loss", value,
                            {ptilde.node(), S.s.node()}, std::move(backward_fn));
}

Tensor total_loss(const Prediction& pred, const Tensor& image, const ScribbleMask& scribbles,
                  const GateMask& gate, const AffinityMatrix& S, const DistanceDecayMap& M,
                  const LossWeights& weights, const LossSpecs& specs) {
    if (weights.lambda_mcrf < 0.0 || weights.lambda_atn < 0.0)
        throw std::invalid_argument("total_loss: loss weights must be >= 0");
    Tensor total = pce_loss(pred, scribbles);
    if (weights.lambda_mcrf != 0.0)
        total = add(total, mul(masked_crf_loss(pred, image, gate, specs.kernel,
                                               specs.mcrf_window),
                               weights.lambda_mcrf));
    if (weights.lambda_atn != 0.0)
        total = add(total, mul(attentive_similarity_loss(pred, S, M, scribbles,
                                                         specs.asl_window, specs.grid_h,
                                                         specs.grid_w),
                               weights.lambda_atn));
    return total;
}

}  // namespace ssseg
