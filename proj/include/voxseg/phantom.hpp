#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "voxseg/subject.hpp"

namespace voxseg {

// Synthetic nested-shell subject: concentric tissue shells (BG > CSF > GM > WM
// analog) with per-class mean intensities, Gaussian noise and an optional
// smooth radial warp. The two modalities get opposite class-mean orderings,
// mimicking T1/T2 contrast inversion.
struct PhantomSpec {
    std::array<int, 3> dims{64, 64, 64};
    std::vector<double> class_radii{28.0, 20.0, 12.0};  // classes 1..C-1, outermost first
    double contrast_gap = 0.3;   // separation between adjacent class means
    double noise_sigma = 0.05;
    double warp_amplitude = 0.0; // voxels of smooth boundary deformation

    void validate() const {
        if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
            throw ValidationError("PhantomSpec: dims must be positive");
        if (class_radii.empty()) throw ValidationError("PhantomSpec: class_radii empty");
        for (std::size_t i = 0; i < class_radii.size(); ++i) {
            if (class_radii[i] <= 0.0)
                throw ValidationError("PhantomSpec: radii must be positive");
            if (i > 0 && class_radii[i] >= class_radii[i - 1])
                throw ValidationError("PhantomSpec: radii must be strictly decreasing");
        }
        const double half = 0.5 * std::min({dims[0], dims[1], dims[2]});
        if (class_radii.front() + warp_amplitude >= half)
            throw ValidationError("PhantomSpec: outer radius " +
                                  std::to_string(class_radii.front()) +
                                  " (plus warp) exceeds volume half-extent " +
                                  std::to_string(half));
        if (contrast_gap < 0.0 || noise_sigma < 0.0 || warp_amplitude < 0.0)
            throw ValidationError("PhantomSpec: contrast_gap/noise/warp must be >= 0");
    }
};

namespace detail {

struct WarpField {
    double amplitude = 0.0;
    std::array<double, 3> phase{0, 0, 0};
    std::array<double, 3> inv_extent{0, 0, 0};

    double offset(int x, int y, int z) const {
        if (amplitude == 0.0) return 0.0;
        constexpr double two_pi = 6.283185307179586476925286766559;
        const double sx = std::sin(two_pi * 2.0 * x * inv_extent[0] + phase[0]);
        const double sy = std::sin(two_pi * 2.0 * y * inv_extent[1] + phase[1]);
        const double sz = std::sin(two_pi * 2.0 * z * inv_extent[2] + phase[2]);
        return amplitude * (sx + sy + sz) / 3.0;
    }
};

}  // namespace detail

inline SubjectRecord generate_phantom(const PhantomSpec& spec, std::uint64_t seed,
                                      const std::string& id = "") {
    spec.validate();
    Rng rng(seed);

    detail::WarpField warp;
    warp.amplitude = spec.warp_amplitude;
    for (int a = 0; a < 3; ++a) {
        warp.phase[a] = rng.uniform() * 6.283185307179586;
        warp.inv_extent[a] = 1.0 / spec.dims[a];
    }

    const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    const int num_classes = static_cast<int>(spec.class_radii.size()) + 1;
    const double cx = 0.5 * (nx - 1), cy = 0.5 * (ny - 1), cz = 0.5 * (nz - 1);

    SubjectRecord subject;
    subject.id = id.empty() ? "phantom-" + std::to_string(seed) : id;
    subject.labels = LabelVolume(nx, ny, nz, num_classes);
    LabelVolume& labels = *subject.labels;

    for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y)
            for (int z = 0; z < nz; ++z) {
                const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                           (z - cz) * (z - cz)) +
                                 warp.offset(x, y, z);
                std::uint8_t label = 0;
                for (int c = 1; c < num_classes; ++c)
                    if (r <= spec.class_radii[c - 1]) label = static_cast<std::uint8_t>(c);
                labels.ids.at(x, y, z) = label;
            }

    // modality 0: means ascend with class id; modality 1: descend
    const double base = 0.2;
    auto class_mean = [&](int modality, int c) {
        const int order = modality == 0 ? c : (num_classes - 1 - c);
        return base + order * spec.contrast_gap;
    };

    subject.modalities.resize(2);
    for (int m = 0; m < 2; ++m) {
        Volume vol(nx, ny, nz);
        for (int x = 0; x < nx; ++x)
            for (int y = 0; y < ny; ++y)
                for (int z = 0; z < nz; ++z) {
                    const int c = labels.ids.at(x, y, z);
                    const double v = class_mean(m, c) + spec.noise_sigma * rng.normal();
                    vol.at(x, y, z) = static_cast<float>(v);
                }
        subject.modalities[m] = std::move(vol);
    }

    subject.role = SubjectRecord::Role::train;
    return subject;
}

}  // namespace voxseg
