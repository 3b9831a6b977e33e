#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "voxseg/distance.hpp"
#include "voxseg/grid.hpp"
#include "voxseg/surface.hpp"

// Segmentation quality metrics: Dice similarity coefficient and average
// (symmetric) surface distance, evaluated per tissue class.

namespace voxseg {

// Reference scores reported for this method on the iSeg-2017 evaluation set.
// Documentation only — desk-scale synthetic runs are not expected to reach
// these, and nothing in the test suite targets them.
namespace iseg2017_reference {
inline constexpr double kDscCsf = 95.68;  // percent
inline constexpr double kDscGm = 93.49;
inline constexpr double kDscWm = 92.60;
inline constexpr double kAsdCsfMm = 0.11;
inline constexpr double kAsdGmMm = 0.25;
inline constexpr double kAsdWmMm = 0.28;
inline constexpr double kDscAvg = 93.92;
inline constexpr double kAsdAvgMm = 0.21;
}  // namespace iseg2017_reference

namespace detail {

inline void check_metric_inputs(const LabelVolume& t, const LabelVolume& p, int c,
                                const char* what) {
    if (!t.ids.same_dims(p.ids))
        throw ShapeError(std::string(what) + ": volume dims differ, " + t.ids.dims_string() +
                         " vs " + p.ids.dims_string());
    if (c < 0 || c >= t.num_classes)
        throw ValidationError(std::string(what) + ": class id " + std::to_string(c) +
                              " out of range for " + std::to_string(t.num_classes) + " classes");
}

}  // namespace detail

// Dice similarity coefficient of the binary masks of class c:
// 2|T ∩ P| / (|T| + |P|). Two empty masks agree perfectly, so that case is 1.
inline double dsc(const LabelVolume& t, const LabelVolume& p, int c) {
    detail::check_metric_inputs(t, p, c, "dsc");
    std::size_t t_n = 0, p_n = 0, inter = 0;
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        const bool in_t = t.ids[i] == c;
        const bool in_p = p.ids[i] == c;
        t_n += in_t;
        p_n += in_p;
        inter += in_t && in_p;
    }
    if (t_n + p_n == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(t_n + p_n);
}

// Average symmetric surface distance of class c, in spacing units (mm):
// the mean, over both surfaces' voxels, of the distance to the nearest voxel
// of the opposite surface. Undefined when the class is absent from either
// volume; that case returns NaN and appends a note to `warnings` when given.
inline double asd(const LabelVolume& t, const LabelVolume& p, int c,
                  Connectivity conn = Connectivity::six,
                  std::vector<std::string>* warnings = nullptr) {
    detail::check_metric_inputs(t, p, c, "asd");
    const bool in_t = t.class_present(c);
    const bool in_p = p.class_present(c);
    if (!in_t || !in_p) {
        if (warnings) {
            std::string who = !in_t && !in_p ? "both volumes"
                              : !in_t        ? "ground truth"
                                             : "prediction";
            warnings->push_back("class " + std::to_string(c) + " (" + tissue_name(c) +
                                ") absent in " + who + "; asd undefined");
        }
        return std::numeric_limits<double>::quiet_NaN();
    }

    const SurfaceSet s_t = extract_surface(t, c, conn);
    const SurfaceSet s_p = extract_surface(p, c, conn);
    const Grid3<double> d_to_t = distance_transform(s_t, t.ids.dims(), t.ids.spacing());
    const Grid3<double> d_to_p = distance_transform(s_p, p.ids.dims(), p.ids.spacing());

    double acc = 0.0;
    for (const auto& v : s_p.voxels) acc += d_to_t.at(v[0], v[1], v[2]);
    for (const auto& v : s_t.voxels) acc += d_to_p.at(v[0], v[1], v[2]);
    return acc / static_cast<double>(s_p.voxels.size() + s_t.voxels.size());
}

struct ClassMetrics {
    int class_id = 0;
    std::string name;
    double dsc = 0.0;
    double asd_mm = 0.0;
    bool present_truth = false;
    bool present_pred = false;
};

struct MetricsReport {
    std::string subject_id;
    std::vector<ClassMetrics> per_class;  // CSF, GM, WM (background excluded)
    double mean_dsc = 0.0;
    double mean_asd_mm = 0.0;  // NaN when any class ASD is undefined
    std::vector<std::string> warnings;
};

// Per-tissue DSC and ASD plus their arithmetic means. Background (class 0)
// is excluded, matching the usual reporting convention for this benchmark.
inline MetricsReport evaluate_subject(const LabelVolume& t, const LabelVolume& p,
                                      const std::string& subject_id,
                                      Connectivity conn = Connectivity::six) {
    if (t.num_classes != p.num_classes)
        throw ValidationError("evaluate_subject: class counts differ, " +
                              std::to_string(t.num_classes) + " vs " +
                              std::to_string(p.num_classes));
    detail::check_metric_inputs(t, p, 0, "evaluate_subject");

    MetricsReport rep;
    rep.subject_id = subject_id;
    double dsc_acc = 0.0, asd_acc = 0.0;
    for (int c = 1; c < t.num_classes; ++c) {
        ClassMetrics m;
        m.class_id = c;
        m.name = tissue_name(c);
        m.present_truth = t.class_present(c);
        m.present_pred = p.class_present(c);
        m.dsc = dsc(t, p, c);
        m.asd_mm = asd(t, p, c, conn, &rep.warnings);
        dsc_acc += m.dsc;
        asd_acc += m.asd_mm;  // NaN propagates into the mean by design
        rep.per_class.push_back(std::move(m));
    }
    const double n = static_cast<double>(rep.per_class.size());
    rep.mean_dsc = dsc_acc / n;
    rep.mean_asd_mm = asd_acc / n;
    return rep;
}

inline std::string metrics_csv_header() { return "subject,class,dsc,asd_mm"; }

inline std::vector<std::string> metrics_csv_rows(const MetricsReport& rep) {
    std::vector<std::string> rows;
    for (const auto& m : rep.per_class) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f", rep.subject_id.c_str(),
                      m.name.c_str(), m.dsc, m.asd_mm);
        rows.emplace_back(buf);
    }
    return rows;
}

}  // namespace voxseg
