#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace voxseg {

static_assert(std::endian::native == std::endian::little,
              "raw volume, checkpoint and weight-map payloads are little-endian");

// Error taxonomy. Everything derives from std::runtime_error so callers that
// do not care can catch one type; the CLI maps any of these to exit code 1.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic random stream. The engine is std::mt19937_64 (sequence pinned
// by the standard); the real-valued draws are implemented here rather than with
// std::*_distribution so that results do not depend on the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi] inclusive; hi >= lo
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(engine_());  // full range
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    // standard normal, Box-Muller with one cached value
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Full generator state (engine plus the Box-Muller cache) as text, so a
    // checkpointed consumer can continue the exact stream after a restore.
    std::string state() const {
        std::ostringstream out;
        out << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' '
            << std::bit_cast<std::uint64_t>(spare_);
        return out.str();
    }

    void restore(const std::string& s) {
        std::istringstream in(s);
        int has = 0;
        std::uint64_t spare_bits = 0;
        in >> engine_ >> has >> spare_bits;
        if (!in) throw FormatError("Rng: invalid serialized state");
        has_spare_ = has != 0;
        spare_ = std::bit_cast<double>(spare_bits);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace voxseg
