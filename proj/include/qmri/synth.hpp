#pragma once

#include <vector>

#include "qmri/types.hpp"

namespace qmri {

// Contrast synthesis is the forward signal model applied to estimated
// properties; a named operation because it is the product users ask for.
ContrastStack synthesize(const PropertyMap& props, const Protocol& protocol);

// Per-property mean absolute error over masked voxels.
struct PropertyMae {
    double t1_ms = 0.0;
    double t2s_ms = 0.0;
    double pd = 0.0;            // absolute, on the (0,1] scale
    double pd_percent = 0.0;    // same value scaled to percent
};

PropertyMae mae(const PropertyMap& estimate, const PropertyMap& gold,
                const std::vector<std::uint8_t>& mask);

// Mean absolute intensity error over masked voxels and all channels.
double mae(const ContrastStack& estimate, const ContrastStack& gold,
           const std::vector<std::uint8_t>& mask);

// Per-channel breakdown of the stack error.
std::vector<double> mae_per_channel(const ContrastStack& estimate, const ContrastStack& gold,
                                    const std::vector<std::uint8_t>& mask);

}  // namespace qmri
