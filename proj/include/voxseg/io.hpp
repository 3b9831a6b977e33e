#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxseg/grid.hpp"
#include "voxseg/subject.hpp"

namespace voxseg {

namespace fs = std::filesystem;

// On-disk volume format: <name>.raw holds the little-endian payload in
// x-fastest voxel order; <name>.hdr.txt is a three-line text sidecar:
//   dims=H W D
//   dtype=f32|u8
//   spacing=sx sy sz

struct VolumeHeader {
    std::array<int, 3> dims{0, 0, 0};
    std::string dtype;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline fs::path sidecar_path(const fs::path& raw_path) {
    fs::path p = raw_path;
    p.replace_extension(".hdr.txt");
    return p;
}

}  // namespace detail

inline VolumeHeader read_header(const fs::path& hdr_path) {
    std::ifstream in(hdr_path);
    if (!in) throw IoError("cannot open header " + hdr_path.string());
    VolumeHeader h;
    bool got_dims = false, got_dtype = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("malformed header line '" + line + "' in " + hdr_path.string());
        const std::string key = line.substr(0, eq);
        std::istringstream val(line.substr(eq + 1));
        if (key == "dims") {
            if (!(val >> h.dims[0] >> h.dims[1] >> h.dims[2]))
                throw FormatError("bad dims in " + hdr_path.string());
            got_dims = true;
        } else if (key == "dtype") {
            val >> h.dtype;
            got_dtype = true;
        } else if (key == "spacing") {
            if (!(val >> h.spacing[0] >> h.spacing[1] >> h.spacing[2]))
                throw FormatError("bad spacing in " + hdr_path.string());
        } else {
            throw FormatError("unknown header key '" + key + "' in " + hdr_path.string());
        }
    }
    if (!got_dims || !got_dtype)
        throw FormatError("header " + hdr_path.string() + " missing dims or dtype");
    if (h.dtype != "f32" && h.dtype != "u8")
        throw FormatError("unknown dtype '" + h.dtype + "' in " + hdr_path.string() +
                          " (expected f32 or u8)");
    return h;
}

inline void write_header(const fs::path& hdr_path, const VolumeHeader& h) {
    std::ofstream out(hdr_path, std::ios::trunc);
    if (!out) throw IoError("cannot write header " + hdr_path.string());
    out << "dims=" << h.dims[0] << " " << h.dims[1] << " " << h.dims[2] << "\n";
    out << "dtype=" << h.dtype << "\n";
    out << "spacing=" << detail::format_double(h.spacing[0]) << " "
        << detail::format_double(h.spacing[1]) << " " << detail::format_double(h.spacing[2])
        << "\n";
}

namespace detail {

template <typename T>
void read_payload(const fs::path& raw_path, Grid3<T>& grid) {
    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + raw_path.string());
    const std::size_t n = grid.size();
    std::vector<T> flat(n);
    in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(T))
        throw FormatError("payload " + raw_path.string() + " shorter than dims imply (" +
                          std::to_string(in.gcount()) + " of " + std::to_string(n * sizeof(T)) +
                          " bytes)");
    // file order is x-fastest: index = x + nx*(y + ny*z)
    std::size_t i = 0;
    for (int z = 0; z < grid.nz(); ++z)
        for (int y = 0; y < grid.ny(); ++y)
            for (int x = 0; x < grid.nx(); ++x) grid.at(x, y, z) = flat[i++];
}

template <typename T>
void write_payload(const fs::path& raw_path, const Grid3<T>& grid) {
    std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + raw_path.string());
    std::vector<T> flat(grid.size());
    std::size_t i = 0;
    for (int z = 0; z < grid.nz(); ++z)
        for (int y = 0; y < grid.ny(); ++y)
            for (int x = 0; x < grid.nx(); ++x) flat[i++] = grid.at(x, y, z);
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(T)));
}

}  // namespace detail

inline Volume load_volume_f32(const fs::path& raw_path) {
    const VolumeHeader h = read_header(detail::sidecar_path(raw_path));
    if (h.dtype != "f32")
        throw FormatError(raw_path.string() + ": expected dtype f32, got " + h.dtype);
    Volume v(h.dims[0], h.dims[1], h.dims[2], h.spacing);
    detail::read_payload(raw_path, v);
    return v;
}

inline void save_volume_f32(const fs::path& raw_path, const Volume& v) {
    VolumeHeader h;
    h.dims = v.dims();
    h.dtype = "f32";
    h.spacing = v.spacing();
    write_header(detail::sidecar_path(raw_path), h);
    detail::write_payload(raw_path, v);
}

inline LabelVolume load_label_volume(const fs::path& raw_path, int num_classes = 4) {
    const VolumeHeader h = read_header(detail::sidecar_path(raw_path));
    if (h.dtype != "u8")
        throw FormatError(raw_path.string() + ": expected dtype u8, got " + h.dtype);
    LabelVolume lv(h.dims[0], h.dims[1], h.dims[2], num_classes, h.spacing);
    detail::read_payload(raw_path, lv.ids);
    lv.validate_ids();
    return lv;
}

inline void save_label_volume(const fs::path& raw_path, const LabelVolume& lv) {
    VolumeHeader h;
    h.dims = lv.ids.dims();
    h.dtype = "u8";
    h.spacing = lv.ids.spacing();
    write_header(detail::sidecar_path(raw_path), h);
    detail::write_payload(raw_path, lv.ids);
}

// Weight maps are stored as f32 volumes; precision loss is acceptable for the
// on-disk copy (in-memory maps stay double).
inline void save_weight_map(const fs::path& raw_path, const Grid3<double>& map) {
    Volume v(map.nx(), map.ny(), map.nz(), map.spacing());
    for (std::size_t i = 0; i < map.size(); ++i) v[i] = static_cast<float>(map[i]);
    save_volume_f32(raw_path, v);
}

// Subject directory layout: <dir>/T1.raw, <dir>/T2.raw, optional
// <dir>/label.raw, each with its .hdr.txt sidecar.
inline SubjectRecord load_subject(const fs::path& dir,
                                  SubjectRecord::Role role = SubjectRecord::Role::train) {
    if (!fs::is_directory(dir)) throw IoError("subject directory " + dir.string() + " absent");
    SubjectRecord s;
    s.id = dir.filename().string();
    s.role = role;

    for (const char* name : {"T1", "T2"}) {
        const fs::path raw = dir / (std::string(name) + ".raw");
        if (!fs::exists(raw)) throw IoError("modality " + std::string(name) + " absent (" +
                                            raw.string() + ")");
        s.modalities.push_back(load_volume_f32(raw));
    }

    const fs::path label_raw = dir / "label.raw";
    if (fs::exists(label_raw)) {
        LabelVolume lv = load_label_volume(label_raw);
        if (!lv.ids.same_dims(s.modalities.front()))
            throw ValidationError("subject " + s.id + ": label dims " + lv.ids.dims_string() +
                                  " do not match image dims " +
                                  s.modalities.front().dims_string());
        s.labels = std::move(lv);
    }
    s.validate();
    return s;
}

inline void save_subject(const fs::path& dir, const SubjectRecord& s) {
    fs::create_directories(dir);
    if (s.modalities.size() < 2)
        throw ValidationError("save_subject: expected 2 modalities, got " +
                              std::to_string(s.modalities.size()));
    save_volume_f32(dir / "T1.raw", s.modalities[0]);
    save_volume_f32(dir / "T2.raw", s.modalities[1]);
    if (s.labels) save_label_volume(dir / "label.raw", *s.labels);
}

// Binary PGM (P5) slice export for eyeballing volumes and weight maps.
// `axis` is 0/1/2 for x/y/z; values are min-max scaled to [0, 255].
template <typename T>
void export_slice_pgm(const fs::path& path, const Grid3<T>& grid, int axis, int index) {
    if (axis < 0 || axis > 2) throw ValidationError("export_slice_pgm: axis must be 0, 1 or 2");
    const auto dims = grid.dims();
    if (index < 0 || index >= dims[axis])
        throw ValidationError("export_slice_pgm: slice index " + std::to_string(index) +
                              " out of range for axis extent " + std::to_string(dims[axis]));

    const int u_axis = axis == 0 ? 1 : 0;
    const int v_axis = axis == 2 ? 1 : 2;
    const int nu = dims[u_axis], nv = dims[v_axis];

    auto sample = [&](int u, int v) {
        int p[3];
        p[axis] = index;
        p[u_axis] = u;
        p[v_axis] = v;
        return static_cast<double>(grid.at(p[0], p[1], p[2]));
    };

    double lo = sample(0, 0), hi = lo;
    for (int u = 0; u < nu; ++u)
        for (int v = 0; v < nv; ++v) {
            const double s = sample(u, v);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << nu << " " << nv << "\n255\n";
    for (int v = 0; v < nv; ++v)
        for (int u = 0; u < nu; ++u) {
            const auto byte =
                static_cast<unsigned char>(std::lround((sample(u, v) - lo) * scale));
            out.put(static_cast<char>(byte));
        }
}

}  // namespace voxseg
