#pragma once

// Brute-force oracles for the loss values. Straight-line loops over the
// formulas, independent of the library implementations they check.

#include <cmath>
#include <vector>

#include "ssseg/losses.hpp"

namespace ssseg::testing {

// -(1/|labeled|) sum log P at the labeled class, per-pixel loop.
inline double pce_oracle(const std::vector<double>& probs, int C, int H, int W,
                         const ScribbleMask& scrib) {
    const int hw = H * W;
    double acc = 0.0;
    int64_t n = 0;
    for (int i = 0; i < hw; ++i) {
        const int32_t l = scrib.labels[static_cast<size_t>(i)];
        if (l == kUnknownLabel) continue;
        acc += std::log(probs[static_cast<size_t>(l) * hw + i]);
        ++n;
    }
    if (n == 0) return 0.0;
    return -acc / static_cast<double>(n);
}

inline double kernel_oracle(double ip, double xp, double yp, double iq, double xq, double yq,
                            const KernelSpec& spec) {
    double s = 0.0;
    for (const auto& k : spec.kernels) {
        double d2 = 0.0;
        const double di = ip - iq, dx = xp - xq, dy = yp - yq;
        switch (k.features) {
            case KernelFeatures::intensity_xy: d2 = di * di + dx * dx + dy * dy; break;
            case KernelFeatures::intensity: d2 = di * di; break;
            case KernelFeatures::xy: d2 = dx * dx + dy * dy; break;
        }
        s += k.weight * std::exp(-d2 / (2.0 * k.sigma * k.sigma));
    }
    return s;
}

// Quadruple loop over all ordered pixel pairs restricted to the Chebyshev
// window, averaged over valid pixels.
inline double mcrf_oracle(const std::vector<double>& probs, int C, int H, int W,
                          const std::vector<double>& image, const GateMask& gate,
                          const KernelSpec& spec, int radius) {
    const int hw = H * W;
    const double ix = W > 1 ? 1.0 / (W - 1) : 0.0;
    const double iy = H > 1 ? 1.0 / (H - 1) : 0.0;
    double acc = 0.0;
    int64_t n_valid = 0;
    for (int py = 0; py < H; ++py)
        for (int px = 0; px < W; ++px) {
            const int p = py * W + px;
            if (!gate.valid[static_cast<size_t>(p)]) continue;
            ++n_valid;
            double row = 0.0;
            for (int qy = 0; qy < H; ++qy)
                for (int qx = 0; qx < W; ++qx) {
                    const int q = qy * W + qx;
                    const int cheb = std::max(std::abs(qy - py), std::abs(qx - px));
                    if (cheb == 0 || cheb >= radius) continue;
                    if (!gate.valid[static_cast<size_t>(q)]) continue;
                    const double s = kernel_oracle(
                        image[static_cast<size_t>(p)], px * ix, py * iy,
                        image[static_cast<size_t>(q)], qx * ix, qy * iy, spec);
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c)
                        dot += probs[static_cast<size_t>(c) * hw + p] *
                               probs[static_cast<size_t>(c) * hw + q];
                    row += s * (1.0 - dot);
                }
            acc += row;
        }
    if (n_valid == 0) return 0.0;
    return acc / static_cast<double>(n_valid);
}

// Corner-aligned bilinear down-sampling, recomputed from scratch.
inline std::vector<double> downsample_oracle(const std::vector<double>& probs, int C, int H,
                                             int W, int h, int w) {
    std::vector<double> out(static_cast<size_t>(C) * h * w);
    const double sy = h > 1 ? static_cast<double>(H - 1) / (h - 1) : 0.0;
    const double sx = w > 1 ? static_cast<double>(W - 1) / (w - 1) : 0.0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double fy = sy * y, fx = sx * x;
                int y0 = static_cast<int>(std::floor(fy));
                int x0 = static_cast<int>(std::floor(fx));
                if (y0 > H - 1) y0 = H - 1;
                if (x0 > W - 1) x0 = W - 1;
                const int y1 = std::min(y0 + 1, H - 1);
                const int x1 = std::min(x0 + 1, W - 1);
                const double ay = fy - y0, ax = fx - x0;
                const auto idx = [&](int yy, int xx) {
                    return static_cast<size_t>(c) * H * W + static_cast<size_t>(yy) * W + xx;
                };
                out[(static_cast<size_t>(c) * h + y) * w + x] =
                    (1 - ay) * ((1 - ax) * probs[idx(y0, x0)] + ax * probs[idx(y0, x1)]) +
                    ay * ((1 - ax) * probs[idx(y1, x0)] + ax * probs[idx(y1, x1)]);
            }
    return out;
}

// Valid coarse cells under the conservative projection rule.
inline std::vector<uint8_t> project_unlabeled_oracle(const ScribbleMask& scrib, int h, int w) {
    const int bh = scrib.h / h, bw = scrib.w / w;
    std::vector<uint8_t> valid(static_cast<size_t>(h) * w, 1);
    for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx)
            for (int y = cy * bh; y < (cy + 1) * bh; ++y)
                for (int x = cx * bw; x < (cx + 1) * bw; ++x)
                    if (scrib.labels[static_cast<size_t>(y) * scrib.w + x] != kUnknownLabel)
                        valid[static_cast<size_t>(cy) * w + cx] = 0;
    return valid;
}

// Full attentive similarity oracle from the full-resolution probabilities.
inline double asl_oracle(const std::vector<double>& probs, int C, int H, int W,
                         const std::vector<double>& S, const std::vector<double>& M,
                         const ScribbleMask& scrib, int radius, int h, int w) {
    const std::vector<double> pt = downsample_oracle(probs, C, H, W, h, w);
    const std::vector<uint8_t> valid = project_unlabeled_oracle(scrib, h, w);
    const int hw = h * w;
    double acc = 0.0;
    int64_t n_valid = 0;
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            const int p = py * w + px;
            if (!valid[static_cast<size_t>(p)]) continue;
            ++n_valid;
            double row = 0.0;
            for (int qy = 0; qy < h; ++qy)
                for (int qx = 0; qx < w; ++qx) {
                    const int q = qy * w + qx;
                    const int cheb = std::max(std::abs(qy - py), std::abs(qx - px));
                    if (cheb == 0 || cheb >= radius) continue;
                    if (!valid[static_cast<size_t>(q)]) continue;
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c)
                        dot += pt[static_cast<size_t>(c) * hw + p] *
                               pt[static_cast<size_t>(c) * hw + q];
                    row += M[static_cast<size_t>(p) * hw + q] *
                           S[static_cast<size_t>(p) * hw + q] * (1.0 - dot);
                }
            acc += row;
        }
    if (n_valid == 0) return 0.0;
    return acc / static_cast<double>(n_valid);
}

}  // namespace ssseg::testing
