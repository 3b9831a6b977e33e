#pragma once

#include <vector>

#include "voxseg/losses.hpp"
#include "voxseg/nn/network.hpp"
#include "voxseg/subject.hpp"

// Full-volume prediction by sliding a patch-sized window over the volume with
// a fixed stride, averaging the per-voxel softmax of overlapping windows with
// uniform weights, and taking the per-voxel argmax. Volumes smaller than the
// window are grown by end-side reflect padding, removed again afterwards.

namespace voxseg {

template <typename T = float>
struct PredictionResult {
    Tensor<T> probs;  // (classes, X, Y, Z), averaged softmax
    LabelVolume labels;
};

namespace detail {

inline std::vector<int> window_starts(int padded, int patch, int stride) {
    std::vector<int> starts;
    for (int s = 0; s + patch <= padded; s += stride) starts.push_back(s);
    if (starts.empty() || starts.back() + patch < padded)
        starts.push_back(padded - patch);  // clamp the final window to the border
    return starts;
}

}  // namespace detail

template <typename T = float>
PredictionResult<T> sliding_window_predict(nn::DilatedAttentionNet<T>& net,
                                           const SubjectRecord& s, int patch, int stride,
                                           bool normalize = true) {
    if (patch < 16 || patch % 16 != 0)
        throw ValidationError("predict: patch size must be a positive multiple of 16, got " +
                              std::to_string(patch));
    if (stride < 1 || stride > patch)
        throw ValidationError("predict: stride must satisfy 1 <= stride <= patch");
    s.validate();
    if (s.modalities.size() != static_cast<std::size_t>(net.config().in_channels))
        throw ValidationError("predict: subject has " + std::to_string(s.modalities.size()) +
                              " modalities, network expects " +
                              std::to_string(net.config().in_channels));

    const auto dims = s.dims();
    std::array<int, 3> padded{};
    for (int a = 0; a < 3; ++a) {
        padded[a] = std::max(dims[a], patch);
        const int pad = padded[a] - dims[a];
        if (pad > dims[a] - 1)
            throw ValidationError("predict: patch " + std::to_string(patch) +
                                  " too large for volume extent " + std::to_string(dims[a]) +
                                  " (reflect padding can at most double an axis)");
    }

    std::vector<Volume> mods = s.modalities;
    if (normalize)
        for (auto& m : mods) m = normalize_intensity(m);

    // Reflect an out-of-range padded coordinate back into the volume.
    auto reflect = [](int i, int n) { return i < n ? i : 2 * n - 2 - i; };

    const std::size_t mod_n = mods.size();
    const int num_classes = net.config().num_classes;
    Tensor<T> window({1, mod_n, std::size_t(patch), std::size_t(patch), std::size_t(patch)});
    Tensor<T> acc({std::size_t(num_classes), std::size_t(padded[0]), std::size_t(padded[1]),
                   std::size_t(padded[2])},
                  T(0));
    Grid3<std::uint32_t> counts(padded[0], padded[1], padded[2]);
    counts.fill(0);

    const auto xs = detail::window_starts(padded[0], patch, stride);
    const auto ys = detail::window_starts(padded[1], patch, stride);
    const auto zs = detail::window_starts(padded[2], patch, stride);
    const std::size_t patch_sp = std::size_t(patch) * patch * patch;

    for (int wx : xs)
        for (int wy : ys)
            for (int wz : zs) {
                for (std::size_t m = 0; m < mod_n; ++m) {
                    T* dst = window.data() + m * patch_sp;
                    for (int x = 0; x < patch; ++x) {
                        const int sx = reflect(wx + x, dims[0]);
                        for (int y = 0; y < patch; ++y) {
                            const int sy = reflect(wy + y, dims[1]);
                            for (int z = 0; z < patch; ++z, ++dst)
                                *dst = static_cast<T>(
                                    mods[m].at(sx, sy, reflect(wz + z, dims[2])));
                        }
                    }
                }
                Tensor<T> logits = net.forward(window);
                Tensor<T> sample({std::size_t(num_classes), std::size_t(patch),
                                  std::size_t(patch), std::size_t(patch)});
                std::copy_n(logits.data(), sample.numel(), sample.data());
                Tensor<T> probs = softmax_classes(sample);

                for (int c = 0; c < num_classes; ++c) {
                    const T* src = probs.data() + std::size_t(c) * patch_sp;
                    for (int x = 0; x < patch; ++x)
                        for (int y = 0; y < patch; ++y)
                            for (int z = 0; z < patch; ++z, ++src)
                                acc[acc.idx4(std::size_t(c), std::size_t(wx + x),
                                             std::size_t(wy + y), std::size_t(wz + z))] += *src;
                }
                for (int x = 0; x < patch; ++x)
                    for (int y = 0; y < patch; ++y)
                        for (int z = 0; z < patch; ++z) ++counts.at(wx + x, wy + y, wz + z);
            }

    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] == 0)
            throw ValidationError("predict: internal error, a voxel was covered by no window");

    PredictionResult<T> result{
        Tensor<T>({std::size_t(num_classes), std::size_t(dims[0]), std::size_t(dims[1]),
                   std::size_t(dims[2])}),
        LabelVolume(dims[0], dims[1], dims[2], num_classes, mods.front().spacing())};

    for (int x = 0; x < dims[0]; ++x)
        for (int y = 0; y < dims[1]; ++y)
            for (int z = 0; z < dims[2]; ++z) {
                const T inv = T(1) / static_cast<T>(counts.at(x, y, z));
                int best = 0;
                T best_p = T(-1);
                for (int c = 0; c < num_classes; ++c) {
                    const T p =
                        acc[acc.idx4(std::size_t(c), std::size_t(x), std::size_t(y),
                                     std::size_t(z))] *
                        inv;
                    result.probs[result.probs.idx4(std::size_t(c), std::size_t(x), std::size_t(y),
                                                   std::size_t(z))] = p;
                    if (p > best_p) {
                        best_p = p;
                        best = c;
                    }
                }
                result.labels.ids.at(x, y, z) = static_cast<std::uint8_t>(best);
            }
    return result;
}

}  // namespace voxseg
