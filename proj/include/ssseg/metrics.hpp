#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ssseg {

// Physical voxel geometry in millimetres.
struct VolumeMeta {
    double spacing_x = 1.0;
    double spacing_y = 1.0;
    double thickness_z = 1.0;
    void validate() const;
};

// Stacked 2D class maps; slice-major layout (d, h, w).
struct LabelVolume {
    int d = 0, h = 0, w = 0;
    std::vector<int32_t> v;

    LabelVolume() = default;
    LabelVolume(int dd, int hh, int ww)
        : d(dd), h(hh), w(ww), v(static_cast<size_t>(dd) * hh * ww, 0) {}
    int32_t at(int z, int y, int x) const {
        return v[(static_cast<size_t>(z) * h + y) * w + x];
    }
    int32_t& at(int z, int y, int x) {
        return v[(static_cast<size_t>(z) * h + y) * w + x];
    }
};

// 2|A ∩ B| / (|A| + |B|); 1.0 when both sets are empty.
double dice3d(const LabelVolume& pred, const LabelVolume& gt, int class_id);

// 95th-percentile symmetric surface distance in mm. Surfaces use the
// 6-neighborhood boundary (out-of-volume counts as background); percentile is
// nearest-rank. Empty on either side yields nullopt ("undefined").
std::optional<double> hd95(const LabelVolume& pred, const LabelVolume& gt, int class_id,
                           const VolumeMeta& meta);

struct MetricsEntry {
    std::string case_id;
    int class_id = 0;
    double dice = 0.0;
    std::optional<double> hd95_mm;
};

// One record per case per class. Text format, one line per record:
//   case=<id> class=<k> dice=<value> hd95_mm=<value|undefined>
// followed by one summary line per class and an overall line.
struct MetricsReport {
    std::vector<MetricsEntry> entries;

    double mean_dice() const;
    // Mean over defined entries; nullopt when none are defined.
    std::optional<double> mean_hd95() const;
    std::string to_text() const;
    static MetricsReport parse(const std::string& text);
};

}  // namespace ssseg
