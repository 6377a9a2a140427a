#pragma once

#include <cstdint>

#include "ssseg/masks.hpp"

namespace ssseg {

struct ScribbleSimConfig {
    int hull_expand_px = 5;
    uint64_t seed = 0;  // reserved; the pipeline is fully deterministic
};

// Iterative two-subiteration thinning (Zhang-Suen). Preserves 8-connectivity
// of each component; an empty mask yields an empty skeleton.
BinaryMask skeletonize(const BinaryMask& mask);

// One morphological erosion with the full 3x3 structuring element;
// out-of-bounds counts as unset.
BinaryMask erode3x3(const BinaryMask& mask);

// Dilation with a Euclidean disc of the given radius.
BinaryMask dilate_disc(const BinaryMask& mask, int radius);

// Number of 8-connected foreground components.
int count_components8(const BinaryMask& mask);

// Repeated 3x3 erosion, returning the last mask before the component count
// would increase or the mask would vanish.
BinaryMask erode_until_disconnect(const BinaryMask& mask);

// Pixels of the filled convex hull of the mask's foreground (lattice hull;
// degenerate point/segment hulls handled). Empty input yields empty output.
BinaryMask convex_hull_region(const BinaryMask& mask);

// Scribbles from a dense class map: per foreground class and component,
// skeletonize(erode_until_disconnect(component)); background scribble is the
// 1-px ring of the convex hull of all foreground, dilated by hull_expand_px.
// Everything else is unknown.
ScribbleMask simulate_scribbles(const LabelMap& dense, int num_classes,
                                const ScribbleSimConfig& config);

}  // namespace ssseg
