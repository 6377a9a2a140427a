#include "ssseg/scribblesim.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace ssseg {

namespace {

// Neighbor ring p2..p9: N, NE, E, SE, S, SW, W, NW.
constexpr int kRingDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kRingDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

int ring_at(const BinaryMask& m, int y, int x, int k) {
    const int ny = y + kRingDy[k], nx = x + kRingDx[k];
    return m.in_bounds(ny, nx) && m.at(ny, nx) ? 1 : 0;
}

}  // namespace

BinaryMask skeletonize(const BinaryMask& mask) {
    BinaryMask cur = mask;
    bool changed = true;
    std::vector<size_t> to_delete;
    while (changed) {
        changed = false;
        for (int phase = 0; phase < 2; ++phase) {
            to_delete.clear();
            for (int y = 0; y < cur.h; ++y)
                for (int x = 0; x < cur.w; ++x) {
                    if (!cur.at(y, x)) continue;
                    int p[8];
                    int b = 0;
                    for (int k = 0; k < 8; ++k) {
                        p[k] = ring_at(cur, y, x, k);
                        b += p[k];
                    }
                    if (b < 2 || b > 6) continue;
                    int a = 0;
                    for (int k = 0; k < 8; ++k)
                        if (p[k] == 0 && p[(k + 1) % 8] == 1) ++a;
                    if (a != 1) continue;
                    // p2=p[0] N, p4=p[2] E, p6=p[4] S, p8=p[6] W
                    if (phase == 0) {
                        if (p[0] * p[2] * p[4] != 0) continue;
                        if (p[2] * p[4] * p[6] != 0) continue;
                    } else {
                        if (p[0] * p[2] * p[6] != 0) continue;
                        if (p[0] * p[4] * p[6] != 0) continue;
                    }
                    to_delete.push_back(static_cast<size_t>(y) * cur.w + x);
                }
            if (!to_delete.empty()) {
                changed = true;
                for (size_t i : to_delete) cur.v[i] = 0;
            }
        }
    }
    return cur;
}

BinaryMask erode3x3(const BinaryMask& mask) {
    BinaryMask out(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            if (!mask.at(y, x)) continue;
            bool keep = true;
            for (int dy = -1; keep && dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if (!mask.in_bounds(ny, nx) || !mask.at(ny, nx)) {
                        keep = false;
                        break;
                    }
                }
            if (keep) out.set(y, x, true);
        }
    return out;
}

BinaryMask dilate_disc(const BinaryMask& mask, int radius) {
    if (radius < 0) throw std::invalid_argument("dilate_disc: radius must be >= 0");
    if (radius == 0) return mask;
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
    BinaryMask out(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            if (!mask.at(y, x)) continue;
            for (const auto& [dy, dx] : offsets) {
                const int ny = y + dy, nx = x + dx;
                if (mask.in_bounds(ny, nx)) out.set(ny, nx, true);
            }
        }
    return out;
}

int count_components8(const BinaryMask& mask) {
    std::vector<uint8_t> seen(mask.v.size(), 0);
    std::vector<int> stack;
    int components = 0;
    for (int y0 = 0; y0 < mask.h; ++y0)
        for (int x0 = 0; x0 < mask.w; ++x0) {
            const size_t i0 = static_cast<size_t>(y0) * mask.w + x0;
            if (!mask.v[i0] || seen[i0]) continue;
            ++components;
            seen[i0] = 1;
            stack.push_back(static_cast<int>(i0));
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                const int y = i / mask.w, x = i % mask.w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const int ny = y + dy, nx = x + dx;
                        if (!mask.in_bounds(ny, nx)) continue;
                        const size_t ni = static_cast<size_t>(ny) * mask.w + nx;
                        if (mask.v[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            stack.push_back(static_cast<int>(ni));
                        }
                    }
            }
        }
    return components;
}

BinaryMask erode_until_disconnect(const BinaryMask& mask) {
    BinaryMask cur = mask;
    if (cur.empty()) return cur;
    int cur_components = count_components8(cur);
    for (;;) {
        BinaryMask next = erode3x3(cur);
        if (next.empty()) return cur;
        const int next_components = count_components8(next);
        if (next_components > cur_components) return cur;
        cur = std::move(next);
        cur_components = next_components;
    }
}

namespace {

struct Pt {
    int64_t x, y;
};

int64_t cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns counter-clockwise hull without the repeated
// endpoint. Collinear inputs collapse to the two extremes.
std::vector<Pt> monotone_chain(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    const size_t n = pts.size();
    if (n <= 2) return pts;
    std::vector<Pt> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace

BinaryMask convex_hull_region(const BinaryMask& mask) {
    std::vector<Pt> pts;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) pts.push_back({x, y});
    BinaryMask out(mask.h, mask.w);
    if (pts.empty()) return out;
    const std::vector<Pt> hull = monotone_chain(std::move(pts));
    if (hull.size() == 1) {
        out.set(static_cast<int>(hull[0].y), static_cast<int>(hull[0].x), true);
        return out;
    }
    if (hull.size() == 2) {
        const Pt a = hull[0], b = hull[1];
        const int64_t len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
        for (int y = 0; y < mask.h; ++y)
            for (int x = 0; x < mask.w; ++x) {
                const Pt p{x, y};
                if (cross(a, b, p) != 0) continue;
                const int64_t d = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
                if (d >= 0 && d <= len2) out.set(y, x, true);
            }
        return out;
    }
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            const Pt p{x, y};
            bool inside = true;
            for (size_t i = 0; inside && i < hull.size(); ++i) {
                const Pt& a = hull[i];
                const Pt& b = hull[(i + 1) % hull.size()];
                if (cross(a, b, p) < 0) inside = false;
            }
            if (inside) out.set(y, x, true);
        }
    return out;
}

ScribbleMask simulate_scribbles(const LabelMap& dense, int num_classes,
                                const ScribbleSimConfig& config) {
    if (config.hull_expand_px < 0)
        throw std::invalid_argument("simulate_scribbles: hull_expand_px must be >= 0");
    if (num_classes < 2)
        throw std::invalid_argument("simulate_scribbles: num_classes must be >= 2");
    const int h = dense.h, w = dense.w;
    ScribbleMask out(h, w, num_classes);

    BinaryMask foreground(h, w);
    for (size_t i = 0; i < dense.v.size(); ++i) {
        const int32_t c = dense.v[i];
        if (c < 0 || c >= num_classes)
            throw std::out_of_range("simulate_scribbles: dense mask class outside range");
        foreground.v[i] = c != 0 ? 1 : 0;
    }
    if (foreground.empty()) return out;  // nothing to annotate

    for (int32_t c = 1; c < num_classes; ++c) {
        BinaryMask class_mask(h, w);
        for (size_t i = 0; i < dense.v.size(); ++i) class_mask.v[i] = dense.v[i] == c ? 1 : 0;
        if (class_mask.empty()) continue;
        // each component gets its own scribble
        std::vector<int32_t> comp_label(class_mask.v.size(), -1);
        std::vector<int> stack;
        int32_t n_comp = 0;
        for (int y0 = 0; y0 < h; ++y0)
            for (int x0 = 0; x0 < w; ++x0) {
                const size_t i0 = static_cast<size_t>(y0) * w + x0;
                if (!class_mask.v[i0] || comp_label[i0] >= 0) continue;
                comp_label[i0] = n_comp;
                stack.push_back(static_cast<int>(i0));
                while (!stack.empty()) {
                    const int i = stack.back();
                    stack.pop_back();
                    const int y = i / w, x = i % w;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (dy == 0 && dx == 0) continue;
                            const int ny = y + dy, nx = x + dx;
                            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                            const size_t ni = static_cast<size_t>(ny) * w + nx;
                            if (class_mask.v[ni] && comp_label[ni] < 0) {
                                comp_label[ni] = n_comp;
                                stack.push_back(static_cast<int>(ni));
                            }
                        }
                }
                ++n_comp;
            }
        for (int32_t comp = 0; comp < n_comp; ++comp) {
            BinaryMask one(h, w);
            for (size_t i = 0; i < comp_label.size(); ++i) one.v[i] = comp_label[i] == comp;
            const BinaryMask scribble = skeletonize(erode_until_disconnect(one));
            for (size_t i = 0; i < scribble.v.size(); ++i)
                if (scribble.v[i]) out.labels[i] = c;
        }
    }

    const BinaryMask hull = convex_hull_region(foreground);
    const BinaryMask expanded = dilate_disc(hull, config.hull_expand_px);
    const BinaryMask interior = erode3x3(expanded);
    for (size_t i = 0; i < expanded.v.size(); ++i)
        if (expanded.v[i] && !interior.v[i] && !foreground.v[i]) out.labels[i] = 0;
    return out;
}

}  // namespace ssseg
