#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "voxseg/common.hpp"

// Analytic comparison of per-voxel gradient magnitudes |dL/dP| of the losses,
// as a function of the true-class probability P. Used to locate the
// probability below which the focal loss pushes harder than plain
// cross-entropy, which motivates the squared-error attention term whose
// gradient stays bounded as P -> 0.

namespace voxseg {

// |d/dP (-log P)| = 1/P
inline double ce_gradient_magnitude(double p) {
    if (p <= 0.0 || p >= 1.0) throw ValidationError("ce_gradient_magnitude: need 0 < p < 1");
    return 1.0 / p;
}

// |d/dP (-(1-P)^g log P)| = (1-P)^g / P - g (1-P)^(g-1) ln P   (ln P < 0)
inline double focal_gradient_magnitude(double p, double gamma) {
    if (p <= 0.0 || p >= 1.0) throw ValidationError("focal_gradient_magnitude: need 0 < p < 1");
    if (gamma < 0.0) throw ValidationError("focal_gradient_magnitude: gamma must be >= 0");
    double m = std::pow(1.0 - p, gamma) / p;
    if (gamma > 0.0) m -= gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
    return m;
}

// |d/dP (W (1-P)^2)| = 2 W (1-P) for the true class — bounded by 2W.
inline double attention_gradient_magnitude(double p, double weight = 1.0) {
    if (p < 0.0 || p > 1.0)
        throw ValidationError("attention_gradient_magnitude: need 0 <= p <= 1");
    if (weight < 0.0) throw ValidationError("attention_gradient_magnitude: weight must be >= 0");
    return 2.0 * weight * (1.0 - p);
}

struct CrossoverResult {
    bool exists = false;
    double p = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Sign function for the crossover: focal magnitude minus CE magnitude.
// h(P) = (1-P)^g / P - g (1-P)^(g-1) ln P - 1/P
// h -> +inf as P -> 0 (focal pushes harder on hard voxels) and h < 0 near
// P = 1, so a root exists for every g > 0.
inline double focal_minus_ce(double p, double gamma) {
    return focal_gradient_magnitude(p, gamma) - ce_gradient_magnitude(p);
}

}  // namespace detail

// Probability at which the focal-loss gradient magnitude crosses the
// cross-entropy gradient magnitude, found by bisection. gamma = 0 makes the
// two losses identical, so no crossover exists. gamma = 1 has the closed form
// p = 1/e; gamma = 2 gives p ~= 0.298.
inline CrossoverResult gradient_crossover(double gamma, double tol = 1e-9) {
    if (gamma < 0.0) throw ValidationError("gradient_crossover: gamma must be >= 0");
    if (tol <= 0.0) throw ValidationError("gradient_crossover: tol must be > 0");
    if (gamma == 0.0) return {};

    double lo = 1e-12, hi = 1.0 - 1e-12;
    double f_lo = detail::focal_minus_ce(lo, gamma);
    double f_hi = detail::focal_minus_ce(hi, gamma);
    if (!(f_lo > 0.0) || !(f_hi < 0.0))
        throw ValidationError("gradient_crossover: bracket does not straddle a root for gamma " +
                              std::to_string(gamma));
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = detail::focal_minus_ce(mid, gamma);
        if (f_mid > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    return {true, 0.5 * (lo + hi)};
}

// One row of the magnitude comparison table emitted by the CLI.
struct MagnitudeRow {
    double p = 0.0;
    double ce = 0.0;
    std::vector<double> focal;  // one entry per requested gamma
    double attention = 0.0;     // unit weight
};

// Evenly spaced probabilities in (0, 1): p_k = k / (num_points + 1).
inline std::vector<MagnitudeRow> magnitude_table(const std::vector<double>& gammas,
                                                 int num_points = 99) {
    if (num_points < 1) throw ValidationError("magnitude_table: num_points must be >= 1");
    std::vector<MagnitudeRow> rows;
    rows.reserve(static_cast<std::size_t>(num_points));
    for (int k = 1; k <= num_points; ++k) {
        MagnitudeRow r;
        r.p = static_cast<double>(k) / static_cast<double>(num_points + 1);
        r.ce = ce_gradient_magnitude(r.p);
        for (double g : gammas) r.focal.push_back(focal_gradient_magnitude(r.p, g));
        r.attention = attention_gradient_magnitude(r.p);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace voxseg
