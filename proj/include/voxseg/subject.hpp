#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "voxseg/grid.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/weight_map.hpp"

namespace voxseg {

// One scan subject: ordered modalities (T1, T2), optional labels and
// precomputed weight maps. All member grids share dims and spacing.
struct SubjectRecord {
    enum class Role { train, evaluate };

    std::string id;
    std::vector<Volume> modalities;
    std::optional<LabelVolume> labels;
    std::optional<WeightMapSet> weight_maps;
    Role role = Role::train;

    std::array<int, 3> dims() const {
        if (modalities.empty()) throw ValidationError("SubjectRecord: no modalities");
        return modalities.front().dims();
    }

    void validate() const {
        if (modalities.empty()) throw ValidationError("SubjectRecord: no modalities");
        const Volume& ref = modalities.front();
        for (const Volume& m : modalities)
            if (!m.same_dims(ref))
                throw ValidationError("SubjectRecord '" + id + "': modality dims " +
                                      m.dims_string() + " differ from " + ref.dims_string());
        if (labels && !labels->ids.same_dims(ref))
            throw ValidationError("SubjectRecord '" + id + "': label dims " +
                                  labels->ids.dims_string() + " differ from image dims " +
                                  ref.dims_string());
        for (const Volume& m : modalities)
            for (float v : m.raw())
                if (!std::isfinite(v))
                    throw ValidationError("SubjectRecord '" + id + "': non-finite intensity");
    }
};

// Z-score over the nonzero voxels; zero voxels are left untouched so repeated
// application is stable. A constant volume maps to all-zeros; an all-zero
// volume is returned unchanged with the warning flag set.
inline Volume normalize_intensity(const Volume& v, bool* all_zero_warning = nullptr) {
    if (all_zero_warning) *all_zero_warning = false;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (float x : v.raw()) {
        if (x == 0.0f) continue;
        sum += x;
        sum_sq += static_cast<double>(x) * x;
        ++n;
    }
    if (n == 0) {
        if (all_zero_warning) *all_zero_warning = true;
        return v;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double sd = var > 0.0 ? std::sqrt(var) : 0.0;

    Volume out = v;
    if (sd == 0.0) {
        // constant nonzero intensities: centring alone already yields zeros
        for (float& x : out.raw())
            if (x != 0.0f) x = 0.0f;
        return out;
    }
    for (float& x : out.raw())
        if (x != 0.0f) x = static_cast<float>((x - mean) / sd);
    return out;
}

// A training crop: aligned input block (modalities x h x w x d), label block
// and per-class weight block, plus the corner it was cut from.
template <typename T = float>
struct PatchSample {
    Tensor<T> input;            // (modalities, h, w, d)
    Grid3<std::uint8_t> target; // (h, w, d)
    Tensor<T> weights;          // (classes, h, w, d)
    std::array<int, 3> origin{0, 0, 0};
};

struct PatchOptions {
    bool training = true;        // require labels + weight maps, crop them too
    bool foreground_bias = true; // corner chosen so the patch holds >=1 non-BG voxel
};

namespace detail {

inline std::vector<std::array<int, 3>> foreground_voxels(const LabelVolume& labels) {
    std::vector<std::array<int, 3>> fg;
    const auto& g = labels.ids;
    for (int x = 0; x < g.nx(); ++x)
        for (int y = 0; y < g.ny(); ++y)
            for (int z = 0; z < g.nz(); ++z)
                if (g.at(x, y, z) != 0) fg.push_back({x, y, z});
    return fg;
}

}  // namespace detail

template <typename T = float>
PatchSample<T> sample_patch(const SubjectRecord& s, std::array<int, 3> size, Rng& rng,
                            const PatchOptions& opt = {}) {
    const auto dims = s.dims();
    for (int a = 0; a < 3; ++a) {
        if (size[a] <= 0) throw ValidationError("sample_patch: patch size must be positive");
        if (size[a] > dims[a])
            throw ValidationError("sample_patch: patch size " + std::to_string(size[a]) +
                                  " exceeds volume dim " + std::to_string(dims[a]));
    }
    if (opt.training && !s.labels)
        throw ValidationError("sample_patch: training-mode sampling needs labels (subject '" +
                              s.id + "')");
    if (opt.training && !s.weight_maps)
        throw ValidationError("sample_patch: training-mode sampling needs weight maps (subject '" +
                              s.id + "')");

    std::array<int, 3> origin{0, 0, 0};
    const std::array<int, 3> max_corner = {dims[0] - size[0], dims[1] - size[1],
                                           dims[2] - size[2]};
    if (opt.foreground_bias && s.labels) {
        // Anchor the patch on a random foreground voxel; clamping keeps the
        // crop inside the volume and still containing that voxel.
        auto fg = detail::foreground_voxels(*s.labels);
        if (!fg.empty()) {
            const auto& v = fg[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(fg.size()) - 1))];
            for (int a = 0; a < 3; ++a) {
                const int lo = std::max(0, v[a] - size[a] + 1);
                const int hi = std::min(max_corner[a], v[a]);
                origin[a] = static_cast<int>(rng.uniform_int(lo, hi));
            }
        } else {
            for (int a = 0; a < 3; ++a)
                origin[a] = static_cast<int>(rng.uniform_int(0, max_corner[a]));
        }
    } else {
        for (int a = 0; a < 3; ++a)
            origin[a] = static_cast<int>(rng.uniform_int(0, max_corner[a]));
    }

    PatchSample<T> patch;
    patch.origin = origin;
    const std::size_t h = size[0], w = size[1], d = size[2];
    const std::size_t num_mod = s.modalities.size();
    patch.input = Tensor<T>({num_mod, h, w, d});
    for (std::size_t m = 0; m < num_mod; ++m) {
        const Volume& vol = s.modalities[m];
        for (int x = 0; x < size[0]; ++x)
            for (int y = 0; y < size[1]; ++y)
                for (int z = 0; z < size[2]; ++z)
                    patch.input.at4(m, x, y, z) =
                        static_cast<T>(vol.at(origin[0] + x, origin[1] + y, origin[2] + z));
    }

    if (opt.training) {
        patch.target = Grid3<std::uint8_t>(size[0], size[1], size[2]);
        const auto& ids = s.labels->ids;
        for (int x = 0; x < size[0]; ++x)
            for (int y = 0; y < size[1]; ++y)
                for (int z = 0; z < size[2]; ++z)
                    patch.target.at(x, y, z) =
                        ids.at(origin[0] + x, origin[1] + y, origin[2] + z);

        const int C = s.weight_maps->num_classes();
        patch.weights = Tensor<T>({static_cast<std::size_t>(C), h, w, d});
        for (int c = 0; c < C; ++c) {
            const auto& map = s.weight_maps->maps[c];
            for (int x = 0; x < size[0]; ++x)
                for (int y = 0; y < size[1]; ++y)
                    for (int z = 0; z < size[2]; ++z)
                        patch.weights.at4(c, x, y, z) =
                            static_cast<T>(map.at(origin[0] + x, origin[1] + y, origin[2] + z));
        }
    }
    return patch;
}

}  // namespace voxseg
