#pragma once

#include <cstdint>
#include <vector>

namespace ssseg {

// Label value marking pixels with no scribble annotation.
inline constexpr int32_t kUnknownLabel = 255;

// Dense per-pixel class map, values in {0..C} with 0 = background.
struct LabelMap {
    int h = 0, w = 0;
    std::vector<int32_t> v;

    LabelMap() = default;
    LabelMap(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}
    int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

// Per-pixel label map over classes plus kUnknownLabel. Labeled pixels form
// the supervised set, unknown pixels its complement.
struct ScribbleMask {
    int h = 0, w = 0;
    int num_classes = 0;  // C+1 including background
    std::vector<int32_t> labels;

    ScribbleMask() = default;
    ScribbleMask(int hh, int ww, int nc)
        : h(hh), w(ww), num_classes(nc),
          labels(static_cast<size_t>(hh) * ww, kUnknownLabel) {}
    int32_t at(int y, int x) const { return labels[static_cast<size_t>(y) * w + x]; }
    int32_t& at(int y, int x) { return labels[static_cast<size_t>(y) * w + x]; }
    bool labeled(size_t i) const { return labels[i] != kUnknownLabel; }
    int64_t labeled_count() const {
        int64_t n = 0;
        for (int32_t l : labels) n += (l != kUnknownLabel) ? 1 : 0;
        return n;
    }
};

// Boolean validity map used by the pairwise regularizers; true pixels
// participate in the sums. Labeled pixels are always excluded; extrapolated
// rotation margins are kept in.
struct GateMask {
    int h = 0, w = 0;
    std::vector<uint8_t> valid;

    GateMask() = default;
    GateMask(int hh, int ww) : h(hh), w(ww), valid(static_cast<size_t>(hh) * ww, 0) {}
};

inline GateMask gate_from_scribbles(const ScribbleMask& s) {
    GateMask g(s.h, s.w);
    for (size_t i = 0; i < s.labels.size(); ++i) g.valid[i] = s.labeled(i) ? 0 : 1;
    return g;
}

// Variant taking extra pixels the caller marks invalid (e.g. padding).
inline GateMask gate_from_scribbles(const ScribbleMask& s, const std::vector<uint8_t>& invalid) {
    GateMask g = gate_from_scribbles(s);
    for (size_t i = 0; i < g.valid.size() && i < invalid.size(); ++i)
        if (invalid[i]) g.valid[i] = 0;
    return g;
}

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}
    bool at(int y, int x) const { return v[static_cast<size_t>(y) * w + x] != 0; }
    void set(int y, int x, bool val) { v[static_cast<size_t>(y) * w + x] = val ? 1 : 0; }
    bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
    int64_t count() const {
        int64_t n = 0;
        for (uint8_t b : v) n += b ? 1 : 0;
        return n;
    }
    bool empty() const { return count() == 0; }
};

}  // namespace ssseg
