#pragma once

#include <string>
#include <vector>

#include "voxseg/distance.hpp"
#include "voxseg/grid.hpp"
#include "voxseg/surface.hpp"

namespace voxseg {

// Per-class surface attention weight fields W^c = 1 / (dist-to-surface + 1).
// Classes absent from the volume get an all-zero map and a recorded warning,
// so background-only crops stay usable for training.
struct WeightMapSet {
    std::vector<Grid3<double>> maps;          // one per class id
    std::vector<bool> class_present;          // false => map is all zeros
    std::vector<std::string> warnings;

    int num_classes() const { return static_cast<int>(maps.size()); }
};

// W^c_i = 1 / (min_{j in T^c} ||i - j||_2 + 1). Value 1 exactly on the
// surface, monotonically shrinking with distance, always in (0, 1].
inline Grid3<double> compute_weight_map(const LabelVolume& labels, int c,
                                        Connectivity conn = Connectivity::six,
                                        bool use_spacing = false) {
    const SurfaceSet surf = extract_surface(labels, c, conn);
    const std::array<double, 3> spacing =
        use_spacing ? labels.ids.spacing() : std::array<double, 3>{1.0, 1.0, 1.0};
    Grid3<double> dist = distance_transform(surf, labels.ids.dims(), spacing);
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = 1.0 / (dist[i] + 1.0);
    return dist;
}

inline WeightMapSet compute_all_weight_maps(const LabelVolume& labels,
                                            Connectivity conn = Connectivity::six,
                                            bool use_spacing = false) {
    WeightMapSet set;
    set.maps.reserve(labels.num_classes);
    for (int c = 0; c < labels.num_classes; ++c) {
        if (labels.class_present(c)) {
            set.maps.push_back(compute_weight_map(labels, c, conn, use_spacing));
            set.class_present.push_back(true);
        } else {
            set.maps.emplace_back(labels.ids.nx(), labels.ids.ny(), labels.ids.nz(),
                                  labels.ids.spacing());
            set.class_present.push_back(false);
            set.warnings.push_back("class " + std::to_string(c) + " (" + tissue_name(c) +
                                   ") absent; weight map set to zero");
        }
    }
    return set;
}

}  // namespace voxseg
