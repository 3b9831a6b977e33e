#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxseg/common.hpp"

namespace voxseg {

// Dense 3D scalar field over an (nx, ny, nz) voxel grid with physical voxel
// spacing in mm. Storage is row-major over (x, y, z), i.e. z moves fastest;
// the on-disk raw format is x-fastest and the conversion happens in io.hpp.
template <typename T>
class Grid3 {
public:
    Grid3() = default;

    Grid3(int nx, int ny, int nz, std::array<double, 3> spacing = {1.0, 1.0, 1.0})
        : nx_(nx), ny_(ny), nz_(nz), spacing_(spacing) {
        if (nx <= 0 || ny <= 0 || nz <= 0)
            throw ValidationError("Grid3: dims must be positive, got " + dims_string());
        if (spacing_[0] <= 0 || spacing_[1] <= 0 || spacing_[2] <= 0)
            throw ValidationError("Grid3: spacing must be strictly positive");
        voxels_.assign(static_cast<std::size_t>(nx) * ny * nz, T{});
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    std::array<int, 3> dims() const { return {nx_, ny_, nz_}; }
    const std::array<double, 3>& spacing() const { return spacing_; }
    void set_spacing(std::array<double, 3> s) {
        if (s[0] <= 0 || s[1] <= 0 || s[2] <= 0)
            throw ValidationError("Grid3: spacing must be strictly positive");
        spacing_ = s;
    }

    std::size_t size() const { return voxels_.size(); }

    std::size_t linear(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) * ny_ + y) * nz_ + z;
    }

    T& at(int x, int y, int z) { return voxels_[linear(x, y, z)]; }
    const T& at(int x, int y, int z) const { return voxels_[linear(x, y, z)]; }

    T& operator[](std::size_t i) { return voxels_[i]; }
    const T& operator[](std::size_t i) const { return voxels_[i]; }

    std::vector<T>& raw() { return voxels_; }
    const std::vector<T>& raw() const { return voxels_; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < nx_ && y >= 0 && y < ny_ && z >= 0 && z < nz_;
    }

    template <typename U>
    bool same_dims(const Grid3<U>& o) const {
        return nx_ == o.nx() && ny_ == o.ny() && nz_ == o.nz();
    }

    std::string dims_string() const {
        return std::to_string(nx_) + "x" + std::to_string(ny_) + "x" + std::to_string(nz_);
    }

    void fill(T v) { std::fill(voxels_.begin(), voxels_.end(), v); }

private:
    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    std::vector<T> voxels_;
};

using Volume = Grid3<float>;

// Class-ID field. IDs are 0 = background, 1 = CSF, 2 = GM, 3 = WM under the
// default four-class layout; anything in [0, num_classes) is accepted.
struct LabelVolume {
    Grid3<std::uint8_t> ids;
    int num_classes = 4;

    LabelVolume() = default;
    LabelVolume(int nx, int ny, int nz, int classes = 4,
                std::array<double, 3> spacing = {1.0, 1.0, 1.0})
        : ids(nx, ny, nz, spacing), num_classes(classes) {
        if (classes < 2) throw ValidationError("LabelVolume: num_classes must be >= 2");
    }

    void validate_ids() const {
        for (std::uint8_t v : ids.raw())
            if (v >= num_classes)
                throw ValidationError("LabelVolume: class id " + std::to_string(int(v)) +
                                      " out of range [0," + std::to_string(num_classes) + ")");
    }

    bool class_present(int c) const {
        for (std::uint8_t v : ids.raw())
            if (v == c) return true;
        return false;
    }
};

inline const char* tissue_name(int class_id) {
    switch (class_id) {
        case 0: return "BG";
        case 1: return "CSF";
        case 2: return "GM";
        case 3: return "WM";
        default: return "class";
    }
}

}  // namespace voxseg
