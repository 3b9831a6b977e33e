#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "voxseg/grid.hpp"
#include "voxseg/surface.hpp"

namespace voxseg {

namespace detail {

// 1D squared-distance transform by lower envelope of parabolas
// (Felzenszwalb & Huttenlocher). `f` holds source costs at grid positions
// 0..n-1; `step` is the physical distance between adjacent positions. The
// result is exact up to floating-point rounding, which keeps the output
// within 1e-12 of the brute-force minimum on desk-scale grids.
inline void squared_dt_1d(const std::vector<double>& f, double step, std::vector<double>& out,
                          std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    const double w = step * step;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);

    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        double s;
        for (;;) {
            const int p = v[k];
            s = (f[q] + w * q * q - f[p] - w * p * p) / (2.0 * w * (q - p));
            if (s > z[k]) break;
            if (--k < 0) break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }

    if (k < 0) {  // no finite source in this line
        out.assign(n, inf);
        return;
    }
    out.resize(n);
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double d = (q - v[j]) * step;
        out[q] = d * d + f[v[j]];
    }
}

}  // namespace detail

// Exact Euclidean distance from every voxel to the nearest seed voxel, in the
// grid's physical units. Separable squared transform along x, y, z.
inline Grid3<double> euclidean_distance_to_seeds(const Grid3<std::uint8_t>& seeds,
                                                 std::array<double, 3> spacing = {1.0, 1.0,
                                                                                  1.0}) {
    const int nx = seeds.nx(), ny = seeds.ny(), nz = seeds.nz();
    const double inf = std::numeric_limits<double>::infinity();
    Grid3<double> sq(nx, ny, nz, spacing);
    for (std::size_t i = 0; i < seeds.size(); ++i) sq[i] = seeds[i] ? 0.0 : inf;

    std::vector<double> line, out;
    std::vector<int> v;
    std::vector<double> z;

    // x pass
    line.resize(nx);
    for (int y = 0; y < ny; ++y)
        for (int zz = 0; zz < nz; ++zz) {
            for (int x = 0; x < nx; ++x) line[x] = sq.at(x, y, zz);
            detail::squared_dt_1d(line, spacing[0], out, v, z);
            for (int x = 0; x < nx; ++x) sq.at(x, y, zz) = out[x];
        }
    // y pass
    line.resize(ny);
    for (int x = 0; x < nx; ++x)
        for (int zz = 0; zz < nz; ++zz) {
            for (int y = 0; y < ny; ++y) line[y] = sq.at(x, y, zz);
            detail::squared_dt_1d(line, spacing[1], out, v, z);
            for (int y = 0; y < ny; ++y) sq.at(x, y, zz) = out[y];
        }
    // z pass
    line.resize(nz);
    for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) {
            for (int zz = 0; zz < nz; ++zz) line[zz] = sq.at(x, y, zz);
            detail::squared_dt_1d(line, spacing[2], out, v, z);
            for (int zz = 0; zz < nz; ++zz) sq.at(x, y, zz) = out[zz];
        }

    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = std::sqrt(sq[i]);
    return sq;
}

// Distance field for a class surface: value 0 exactly on surface voxels,
// exact L2 distance to the nearest surface voxel elsewhere. Distances are in
// voxel units unless `use_spacing` applies the grid spacing.
inline Grid3<double> distance_transform(const SurfaceSet& surface, std::array<int, 3> dims,
                                        std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
    if (surface.voxels.empty())
        throw ValidationError("distance_transform: empty surface for class " +
                              std::to_string(surface.class_id));
    Grid3<std::uint8_t> seeds(dims[0], dims[1], dims[2], spacing);
    for (const auto& p : surface.voxels) {
        if (!seeds.in_bounds(p[0], p[1], p[2]))
            throw ValidationError("distance_transform: surface voxel outside dims");
        seeds.at(p[0], p[1], p[2]) = 1;
    }
    return euclidean_distance_to_seeds(seeds, spacing);
}

}  // namespace voxseg
