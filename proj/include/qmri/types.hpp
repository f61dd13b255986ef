#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace qmri {

// All times are milliseconds, all angles degrees at API boundaries.
// Radians appear only inside trigonometric evaluation.

inline constexpr double kPi = 3.14159265358979323846;

// Proton density assigned to background voxels. Smallest positive normal
// single-precision value, so masks and maps survive 32-bit storage intact.
inline constexpr double kBackgroundPd = 1.17549435082228750796874e-38;

struct TissueProperties {
    double t1_ms = 0.0;   // longitudinal relaxation
    double t2s_ms = 0.0;  // effective transverse relaxation
    double pd = 0.0;      // normalized proton density, (0, 1]
};

struct AcquisitionParams {
    double tr_ms = 0.0;
    double te_ms = 0.0;
    double fa_deg = 0.0;  // flip angle, (0, 180) exclusive
};

struct Protocol {
    std::vector<AcquisitionParams> entries;

    std::size_t size() const { return entries.size(); }
    const AcquisitionParams& operator[](std::size_t i) const { return entries[i]; }
};

// A multiecho scan session: one TR, one FA, several distinct ascending TEs.
struct MultiechoSession {
    Protocol protocol;

    std::size_t echoes() const { return protocol.size(); }
    double tr_ms() const { return protocol.entries.front().tr_ms; }
    double fa_deg() const { return protocol.entries.front().fa_deg; }
    std::vector<double> te_values() const;
};

struct PropertyMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<TissueProperties> voxels;  // row-major, index = y*width + x

    PropertyMap() = default;
    PropertyMap(std::uint32_t w, std::uint32_t h)
        : width(w), height(h), voxels(static_cast<std::size_t>(w) * h) {}

    std::size_t size() const { return voxels.size(); }
    TissueProperties& at(std::uint32_t x, std::uint32_t y) {
        return voxels[static_cast<std::size_t>(y) * width + x];
    }
    const TissueProperties& at(std::uint32_t x, std::uint32_t y) const {
        return voxels[static_cast<std::size_t>(y) * width + x];
    }
};

// Per-contrast signal intensities over a slice. Channel-major storage:
// intensity of channel c at (x, y) lives at c*width*height + y*width + x.
struct ContrastStack {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Protocol protocol;              // channel k corresponds to entries[k]
    std::vector<double> intensities;
    bool noisy = false;             // set once additive noise has been applied

    ContrastStack() = default;
    ContrastStack(std::uint32_t w, std::uint32_t h, Protocol proto)
        : width(w), height(h), protocol(std::move(proto)),
          intensities(static_cast<std::size_t>(w) * h * protocol.size(), 0.0) {}

    std::size_t voxel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t channels() const { return protocol.size(); }
    double& at(std::size_t channel, std::uint32_t x, std::uint32_t y) {
        return intensities[channel * voxel_count() + static_cast<std::size_t>(y) * width + x];
    }
    double at(std::size_t channel, std::uint32_t x, std::uint32_t y) const {
        return intensities[channel * voxel_count() + static_cast<std::size_t>(y) * width + x];
    }
};

// One invariant violation, reported as data rather than thrown.
struct Violation {
    std::string path;     // e.g. "entries[2].te_ms"
    std::string message;
};

using Violations = std::vector<Violation>;

Violations validate(const TissueProperties& p);
Violations validate(const AcquisitionParams& a);
Violations validate(const Protocol& p);
Violations validate(const MultiechoSession& s);
Violations validate(const PropertyMap& m);
Violations validate(const ContrastStack& s);

inline bool is_valid(const Violations& v) { return v.empty(); }

std::string describe(const Violations& v);

}  // namespace qmri
