#pragma once

#include <array>
#include <vector>

#include "voxseg/grid.hpp"

namespace voxseg {

enum class Connectivity { six, twenty_six };

// Voxels of class c whose 6-neighborhood (or 26-neighborhood) contains a
// different label, plus class-c voxels on the volume border.
struct SurfaceSet {
    int class_id = 0;
    std::vector<std::array<int, 3>> voxels;
};

inline SurfaceSet extract_surface(const LabelVolume& labels, int c,
                                  Connectivity conn = Connectivity::six) {
    if (c < 0 || c >= labels.num_classes)
        throw ValidationError("extract_surface: class " + std::to_string(c) +
                              " out of range [0," + std::to_string(labels.num_classes) + ")");
    const auto& g = labels.ids;
    SurfaceSet surf;
    surf.class_id = c;
    bool seen = false;

    auto differs = [&](int x, int y, int z) {
        if (conn == Connectivity::six) {
            static constexpr int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                              {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
            for (const auto& o : off) {
                const int ax = x + o[0], ay = y + o[1], az = z + o[2];
                if (g.in_bounds(ax, ay, az) && g.at(ax, ay, az) != c) return true;
            }
            return false;
        }
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const int ax = x + dx, ay = y + dy, az = z + dz;
                    if (g.in_bounds(ax, ay, az) && g.at(ax, ay, az) != c) return true;
                }
        return false;
    };

    for (int x = 0; x < g.nx(); ++x)
        for (int y = 0; y < g.ny(); ++y)
            for (int z = 0; z < g.nz(); ++z) {
                if (g.at(x, y, z) != c) continue;
                seen = true;
                const bool border = x == 0 || x == g.nx() - 1 || y == 0 || y == g.ny() - 1 ||
                                    z == 0 || z == g.nz() - 1;
                if (border || differs(x, y, z)) surf.voxels.push_back({x, y, z});
            }

    if (!seen)
        throw ValidationError("extract_surface: class " + std::to_string(c) +
                              " absent from label volume, surface is empty");
    return surf;
}

}  // namespace voxseg
