#include <cmath>

#include "doctest.h"
#include "ssseg/rng.hpp"
#include "ssseg/scribblesim.hpp"

using namespace ssseg;

namespace {

BinaryMask disc(int h, int w, int cy, int cx, int r) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.set(y, x, true);
    return m;
}

// union of a few random discs, always nonempty
BinaryMask random_blob(int h, int w, Rng& rng) {
    BinaryMask m(h, w);
    const int discs = static_cast<int>(rng.uniform_int(1, 4));
    int cy = static_cast<int>(rng.uniform_int(6, h - 7));
    int cx = static_cast<int>(rng.uniform_int(6, w - 7));
    for (int k = 0; k < discs; ++k) {
        const int r = static_cast<int>(rng.uniform_int(2, 5));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.set(y, x, true);
        cy = std::clamp(cy + static_cast<int>(rng.uniform_int(-4, 4)), 4, h - 5);
        cx = std::clamp(cx + static_cast<int>(rng.uniform_int(-4, 4)), 4, w - 5);
    }
    return m;
}

bool subset_of(const BinaryMask& a, const BinaryMask& b) {
    for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] && !b.v[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("skeletonize trivial masks") {
    BinaryMask empty(10, 10);
    CHECK(skeletonize(empty).empty());

    BinaryMask single(10, 10);
    single.set(4, 7, true);
    BinaryMask sk = skeletonize(single);
    CHECK(sk.count() == 1);
    CHECK(sk.at(4, 7));
}

TEST_CASE("skeleton of a filled disc is a small connected subset") {
    BinaryMask d = disc(20, 20, 10, 10, 8);
    BinaryMask sk = skeletonize(d);
    CHECK(subset_of(sk, d));
    CHECK_FALSE(sk.empty());
    CHECK(count_components8(sk) == 1);
    CHECK(sk.count() < 0.15 * static_cast<double>(d.count()));
}

TEST_CASE("erosion keeps single pixels and bars intact") {
    BinaryMask single(8, 8);
    single.set(3, 3, true);
    BinaryMask r = erode_until_disconnect(single);
    CHECK(r.count() == 1);
    CHECK(r.at(3, 3));

    BinaryMask bar(10, 20);
    for (int y = 4; y < 6; ++y)
        for (int x = 2; x < 18; ++x) bar.set(y, x, true);
    BinaryMask rb = erode_until_disconnect(bar);
    CHECK_FALSE(rb.empty());
    CHECK(count_components8(rb) == 1);
    CHECK(subset_of(rb, bar));
}

TEST_CASE("erosion before disconnection holds over random blobs") {
    Rng rng(71);
    for (int t = 0; t < 100; ++t) {
        BinaryMask blob = random_blob(24, 24, rng);
        const int before = count_components8(blob);
        BinaryMask r = erode_until_disconnect(blob);
        CHECK_FALSE(r.empty());
        CHECK(subset_of(r, blob));
        CHECK(count_components8(r) <= before);
    }
}

TEST_CASE("convex hull region handles degenerate inputs") {
    BinaryMask empty(8, 8);
    CHECK(convex_hull_region(empty).empty());

    BinaryMask single(8, 8);
    single.set(2, 5, true);
    BinaryMask h1 = convex_hull_region(single);
    CHECK(h1.count() == 1);
    CHECK(h1.at(2, 5));

    BinaryMask seg(8, 8);
    seg.set(1, 1, true);
    seg.set(5, 5, true);
    BinaryMask h2 = convex_hull_region(seg);
    CHECK(h2.at(1, 1));
    CHECK(h2.at(3, 3));
    CHECK(h2.at(5, 5));
    CHECK_FALSE(h2.at(1, 5));

    BinaryMask tri(10, 10);
    tri.set(1, 1, true);
    tri.set(1, 8, true);
    tri.set(8, 1, true);
    BinaryMask h3 = convex_hull_region(tri);
    CHECK(h3.at(1, 4));
    CHECK(h3.at(4, 1));
    CHECK(h3.at(3, 3));
    CHECK_FALSE(h3.at(8, 8));
}

TEST_CASE("single-pixel organ yields that pixel and a hull ring at the expansion distance") {
    LabelMap dense(32, 32);
    dense.at(16, 16) = 1;
    ScribbleSimConfig cfg;
    cfg.hull_expand_px = 5;
    ScribbleMask s = simulate_scribbles(dense, 2, cfg);
    CHECK(s.at(16, 16) == 1);

    int bg_count = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            if (s.at(y, x) == 0) {
                ++bg_count;
                const double d = std::sqrt((y - 16.0) * (y - 16.0) + (x - 16.0) * (x - 16.0));
                CHECK(d >= 4.0);
                CHECK(d <= 6.0);
            }
        }
    CHECK(bg_count > 8);
}

TEST_CASE("no foreground yields an all-unknown mask") {
    LabelMap dense(16, 16);
    ScribbleMask s = simulate_scribbles(dense, 3, ScribbleSimConfig{});
    for (int32_t l : s.labels) CHECK(l == kUnknownLabel);
}

TEST_CASE("scribble properties over synthetic two-organ masks") {
    Rng rng(72);
    ScribbleSimConfig cfg;
    for (int t = 0; t < 20; ++t) {
        LabelMap dense(48, 48);
        const int cy1 = static_cast<int>(rng.uniform_int(10, 18));
        const int cx1 = static_cast<int>(rng.uniform_int(10, 18));
        const int cy2 = static_cast<int>(rng.uniform_int(30, 38));
        const int cx2 = static_cast<int>(rng.uniform_int(30, 38));
        const int r1 = static_cast<int>(rng.uniform_int(4, 7));
        const int r2 = static_cast<int>(rng.uniform_int(4, 7));
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                if ((y - cy1) * (y - cy1) + (x - cx1) * (x - cx1) <= r1 * r1)
                    dense.at(y, x) = 1;
                else if ((y - cy2) * (y - cy2) + (x - cx2) * (x - cx2) <= r2 * r2)
                    dense.at(y, x) = 2;
            }
        ScribbleMask s = simulate_scribbles(dense, 3, cfg);

        int64_t labeled = 0;
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const int32_t l = s.at(y, x);
                if (l == kUnknownLabel) continue;
                ++labeled;
                if (l == 0) {
                    CHECK(dense.at(y, x) == 0);  // ring never touches foreground
                } else {
                    CHECK(dense.at(y, x) == l);  // class fidelity
                }
            }
        CHECK(labeled > 0);
        CHECK(static_cast<double>(labeled) / (48.0 * 48.0) < 0.10);

        // per-class scribbles stay connected when the source region is
        for (int32_t c : {1, 2}) {
            BinaryMask m(48, 48);
            for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = s.labels[i] == c ? 1 : 0;
            CHECK(count_components8(m) == 1);
        }
    }
}

TEST_CASE("scribble simulation is deterministic") {
    Rng rng(73);
    LabelMap dense(40, 40);
    for (int y = 8; y < 20; ++y)
        for (int x = 10; x < 26; ++x)
            if ((y - 14) * (y - 14) + (x - 18) * (x - 18) <= 36) dense.at(y, x) = 1;
    ScribbleSimConfig cfg;
    cfg.seed = 9;
    ScribbleMask a = simulate_scribbles(dense, 2, cfg);
    ScribbleMask b = simulate_scribbles(dense, 2, cfg);
    CHECK(a.labels == b.labels);
}
