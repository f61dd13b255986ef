#pragma once

#include <cstdint>
#include <vector>

#include "qmri/types.hpp"

namespace qmri {

// Per-voxel inverse-problem solution. `detail` holds the selected atom index
// for dictionary fits and the accepted-iteration count for NLLS fits.
struct FitResult {
    PropertyMap properties;
    std::vector<double> residual_norm;   // Euclidean norm of the data residual
    std::vector<std::uint32_t> detail;
    std::vector<std::uint8_t> converged;
};

}  // namespace qmri
