#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qmri/types.hpp"

namespace qmri {

// On-disk raster container. Header (all little-endian u32 after the magic):
//   "QMV1" | version | ndim | dims[ndim] | channels | dtype | mask flag
// dtype 0 = float32, 1 = float64. Payload is channels rasters of
// product(dims) values, little-endian, then product(dims) mask bytes when
// the flag is set. dims = [width, height]; x varies fastest.
struct Volume {
    std::vector<std::uint32_t> dims;
    std::uint32_t channels = 1;
    bool float64 = true;
    std::vector<double> data;          // channel-major, held as double in memory
    std::vector<std::uint8_t> mask;    // empty, or product(dims) bytes

    std::size_t raster_size() const;
};

void write_volume(const std::string& path, const Volume& v);
Volume read_volume(const std::string& path);

Volume volume_from_stack(const ContrastStack& stack, const std::vector<std::uint8_t>* mask);
ContrastStack stack_from_volume(const Volume& v, Protocol protocol);

// Property maps travel as 3-channel volumes (t1, t2s, pd).
Volume volume_from_map(const PropertyMap& map, const std::vector<std::uint8_t>* mask);
PropertyMap map_from_volume(const Volume& v);

// 8-bit binary PGM with values windowed to [lo, hi]; lo == hi renders flat
// gray. Callers record the window in a sidecar so the image stays
// interpretable.
void write_pgm(const std::string& path, std::uint32_t width, std::uint32_t height,
               const std::vector<double>& values, double lo, double hi);

// Shared atomic-write helper: writes to path + ".tmp", then renames.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace qmri
