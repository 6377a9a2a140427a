#include "ssseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "ssseg/tensor.hpp"  // ShapeError

namespace ssseg {

void VolumeMeta::validate() const {
    if (!(spacing_x > 0.0) || !(spacing_y > 0.0) || !(thickness_z > 0.0))
        throw std::invalid_argument("volume meta: spacing and thickness must be > 0");
}

namespace {

void check_volumes(const char* op, const LabelVolume& a, const LabelVolume& b) {
    if (a.d != b.d || a.h != b.h || a.w != b.w) {
        std::ostringstream msg;
        msg << op << ": volume shapes differ, (" << a.d << "," << a.h << "," << a.w << ") vs ("
            << b.d << "," << b.h << "," << b.w << ")";
        throw ShapeError(msg.str());
    }
}

struct SurfacePoint {
    double x, y, z;  // mm
};

// Voxels of the class set with at least one 6-neighbor outside the set;
// out-of-volume counts as outside.
std::vector<SurfacePoint> surface_points(const LabelVolume& vol, int class_id,
                                         const VolumeMeta& meta) {
    static constexpr int dz[6] = {1, -1, 0, 0, 0, 0};
    static constexpr int dy[6] = {0, 0, 1, -1, 0, 0};
    static constexpr int dx[6] = {0, 0, 0, 0, 1, -1};
    std::vector<SurfacePoint> pts;
    for (int z = 0; z < vol.d; ++z)
        for (int y = 0; y < vol.h; ++y)
            for (int x = 0; x < vol.w; ++x) {
                if (vol.at(z, y, x) != class_id) continue;
                bool boundary = false;
                for (int k = 0; k < 6 && !boundary; ++k) {
                    const int nz = z + dz[k], ny = y + dy[k], nx = x + dx[k];
                    if (nz < 0 || nz >= vol.d || ny < 0 || ny >= vol.h || nx < 0 || nx >= vol.w ||
                        vol.at(nz, ny, nx) != class_id)
                        boundary = true;
                }
                if (boundary)
                    pts.push_back({x * meta.spacing_x, y * meta.spacing_y, z * meta.thickness_z});
            }
    return pts;
}

// Nearest-rank percentile of the directed distance set from a to b.
double directed_percentile95(const std::vector<SurfacePoint>& a,
                             const std::vector<SurfacePoint>& b) {
    std::vector<double> dists;
    dists.reserve(a.size());
    for (const auto& pa : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& pb : b) {
            const double dx = pa.x - pb.x, dy = pa.y - pb.y, dz = pa.z - pb.z;
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) best = d2;
        }
        dists.push_back(std::sqrt(best));
    }
    std::sort(dists.begin(), dists.end());
    const size_t n = dists.size();
    const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(n)));
    return dists[std::max<size_t>(rank, 1) - 1];
}

}  // namespace

double dice3d(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
    check_volumes("dice3d", pred, gt);
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool pa = pred.v[i] == class_id;
        const bool pb = gt.v[i] == class_id;
        a += pa ? 1 : 0;
        b += pb ? 1 : 0;
        inter += (pa && pb) ? 1 : 0;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::optional<double> hd95(const LabelVolume& pred, const LabelVolume& gt, int class_id,
                           const VolumeMeta& meta) {
    check_volumes("hd95", pred, gt);
    meta.validate();
    const std::vector<SurfacePoint> sa = surface_points(pred, class_id, meta);
    const std::vector<SurfacePoint> sb = surface_points(gt, class_id, meta);
    if (sa.empty() || sb.empty()) return std::nullopt;
    return std::max(directed_percentile95(sa, sb), directed_percentile95(sb, sa));
}

double MetricsReport::mean_dice() const {
    if (entries.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries) s += e.dice;
    return s / static_cast<double>(entries.size());
}

std::optional<double> MetricsReport::mean_hd95() const {
    double s = 0.0;
    int64_t n = 0;
    for (const auto& e : entries)
        if (e.hd95_mm) {
            s += *e.hd95_mm;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    char buf[64];
    for (const auto& e : entries) {
        os << "case=" << e.case_id << " class=" << e.class_id;
        std::snprintf(buf, sizeof buf, " dice=%.6f", e.dice);
        os << buf;
        if (e.hd95_mm) {
            std::snprintf(buf, sizeof buf, " hd95_mm=%.6f", *e.hd95_mm);
            os << buf;
        } else {
            os << " hd95_mm=undefined";
        }
        os << "\n";
    }
    std::snprintf(buf, sizeof buf, "mean dice=%.6f", mean_dice());
    os << "# " << buf;
    if (auto h = mean_hd95()) {
        std::snprintf(buf, sizeof buf, " hd95_mm=%.6f", *h);
        os << buf;
    } else {
        os << " hd95_mm=undefined";
    }
    os << "\n";
    return os.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
    MetricsReport report;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        MetricsEntry e;
        std::istringstream ls(line);
        std::string tok;
        bool ok = true;
        while (ls >> tok) {
            const size_t eq = tok.find('=');
            if (eq == std::string::npos) {
                ok = false;
                break;
            }
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "case")
                e.case_id = val;
            else if (key == "class")
                e.class_id = std::stoi(val);
            else if (key == "dice")
                e.dice = std::stod(val);
            else if (key == "hd95_mm")
                e.hd95_mm = val == "undefined" ? std::nullopt
                                               : std::optional<double>(std::stod(val));
        }
        if (ok) report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace ssseg
