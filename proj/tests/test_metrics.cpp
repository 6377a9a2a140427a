#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ssseg/metrics.hpp"
#include "ssseg/rng.hpp"
#include "ssseg/tensor.hpp"

using namespace ssseg;

namespace {

LabelVolume random_volume(int d, int h, int w, int classes, Rng& rng, double fg_prob = 0.3) {
    LabelVolume v(d, h, w);
    for (auto& x : v.v)
        x = rng.uniform() < fg_prob ? static_cast<int32_t>(rng.uniform_int(1, classes - 1)) : 0;
    return v;
}

// Independent all-pairs surface-distance recomputation with nearest-rank
// percentile; same surface definition as the spec (6-neighborhood boundary).
std::optional<double> hd95_oracle(const LabelVolume& a, const LabelVolume& b, int cls,
                                  const VolumeMeta& meta) {
    auto surface = [&](const LabelVolume& v) {
        std::vector<std::array<double, 3>> pts;
        for (int z = 0; z < v.d; ++z)
            for (int y = 0; y < v.h; ++y)
                for (int x = 0; x < v.w; ++x) {
                    if (v.at(z, y, x) != cls) continue;
                    bool edge = false;
                    const int dz[6] = {1, -1, 0, 0, 0, 0};
                    const int dy[6] = {0, 0, 1, -1, 0, 0};
                    const int dx[6] = {0, 0, 0, 0, 1, -1};
                    for (int k = 0; k < 6; ++k) {
                        const int nz = z + dz[k], ny = y + dy[k], nx = x + dx[k];
                        if (nz < 0 || nz >= v.d || ny < 0 || ny >= v.h || nx < 0 ||
                            nx >= v.w || v.at(nz, ny, nx) != cls) {
                            edge = true;
                            break;
                        }
                    }
                    if (edge)
                        pts.push_back({x * meta.spacing_x, y * meta.spacing_y,
                                       z * meta.thickness_z});
                }
        return pts;
    };
    const auto sa = surface(a);
    const auto sb = surface(b);
    if (sa.empty() || sb.empty()) return std::nullopt;
    auto directed = [](const std::vector<std::array<double, 3>>& from,
                       const std::vector<std::array<double, 3>>& to) {
        std::vector<double> ds;
        for (const auto& p : from) {
            double best = 1e300;
            for (const auto& q : to) {
                const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) +
                                           (p[1] - q[1]) * (p[1] - q[1]) +
                                           (p[2] - q[2]) * (p[2] - q[2]));
                best = std::min(best, d);
            }
            ds.push_back(best);
        }
        std::sort(ds.begin(), ds.end());
        const size_t rank =
            static_cast<size_t>(std::ceil(0.95 * static_cast<double>(ds.size())));
        return ds[std::max<size_t>(rank, 1) - 1];
    };
    return std::max(directed(sa, sb), directed(sb, sa));
}

}  // namespace

TEST_CASE("dice closed forms") {
    LabelVolume a(2, 4, 4), b(2, 4, 4);
    CHECK(dice3d(a, b, 1) == 1.0);  // both empty

    for (int i = 0; i < 8; ++i) a.v[static_cast<size_t>(i)] = 1;
    for (int i = 4; i < 12; ++i) b.v[static_cast<size_t>(i)] = 1;
    CHECK(dice3d(a, b, 1) == 0.5);  // |A|=|B|=8, overlap 4

    LabelVolume c(2, 4, 4);
    for (int i = 16; i < 20; ++i) c.v[static_cast<size_t>(i)] = 1;
    CHECK(dice3d(a, c, 1) == 0.0);  // disjoint
    CHECK(dice3d(a, a, 1) == 1.0);

    LabelVolume wrong(1, 4, 4);
    CHECK_THROWS_AS(dice3d(a, wrong, 1), ShapeError);
}

TEST_CASE("hd95 closed forms") {
    VolumeMeta meta{1.0, 1.0, 6.0};
    LabelVolume a(4, 6, 6), b(4, 6, 6);
    a.at(1, 3, 3) = 1;
    b.at(2, 3, 3) = 1;  // one slice apart
    auto d = hd95(a, b, 1, meta);
    REQUIRE(d.has_value());
    CHECK(*d == 6.0);

    CHECK(*hd95(a, a, 1, meta) == 0.0);

    LabelVolume empty(4, 6, 6);
    CHECK_FALSE(hd95(a, empty, 1, meta).has_value());
    CHECK_FALSE(hd95(empty, a, 1, meta).has_value());
}

TEST_CASE("hd95 matches the brute-force oracle on random volumes") {
    Rng rng(81);
    const VolumeMeta meta{0.8, 1.3, 4.5};
    for (int t = 0; t < 50; ++t) {
        LabelVolume a = random_volume(4, 12, 12, 3, rng);
        LabelVolume b = random_volume(4, 12, 12, 3, rng);
        for (int cls = 1; cls <= 2; ++cls) {
            auto got = hd95(a, b, cls, meta);
            auto expected = hd95_oracle(a, b, cls, meta);
            CHECK(got.has_value() == expected.has_value());
            if (got && expected) CHECK(std::abs(*got - *expected) < 1e-9);

            // symmetry is exact
            auto rev = hd95(b, a, cls, meta);
            CHECK(got.has_value() == rev.has_value());
            if (got && rev) CHECK(*got == *rev);
        }
    }
}

TEST_CASE("doubling the spacing doubles hd95 exactly, dice unchanged") {
    Rng rng(82);
    const VolumeMeta meta{0.7, 1.1, 3.0};
    const VolumeMeta doubled{1.4, 2.2, 6.0};
    for (int t = 0; t < 10; ++t) {
        LabelVolume a = random_volume(3, 10, 10, 2, rng);
        LabelVolume b = random_volume(3, 10, 10, 2, rng);
        auto d1 = hd95(a, b, 1, meta);
        auto d2 = hd95(a, b, 1, doubled);
        CHECK(d1.has_value() == d2.has_value());
        if (d1 && d2) CHECK(*d2 == 2.0 * *d1);
        CHECK(dice3d(a, b, 1) == dice3d(a, b, 1));
    }
}

TEST_CASE("metrics report text round-trips") {
    MetricsReport r;
    r.entries.push_back({"case_0001", 1, 0.875, 3.25});
    r.entries.push_back({"case_0001", 2, 0.5, std::nullopt});
    const std::string text = r.to_text();
    CHECK(text.find("case=case_0001 class=1 dice=0.875000 hd95_mm=3.250000") !=
          std::string::npos);
    CHECK(text.find("hd95_mm=undefined") != std::string::npos);

    MetricsReport parsed = MetricsReport::parse(text);
    REQUIRE(parsed.entries.size() == 2);
    CHECK(parsed.entries[0].case_id == "case_0001");
    CHECK(parsed.entries[0].dice == doctest::Approx(0.875));
    CHECK(parsed.entries[0].hd95_mm.has_value());
    CHECK_FALSE(parsed.entries[1].hd95_mm.has_value());
    CHECK(r.mean_dice() == doctest::Approx(0.6875));
    CHECK(*r.mean_hd95() == doctest::Approx(3.25));
}
