#pragma once

#include <cstdint>
#include <vector>

#include "qmri/fit_result.hpp"
#include "qmri/types.hpp"

namespace qmri {

// One grid point of the sampled forward model: the unit-PD signal over a
// fixed protocol. PD is not gridded because the model is linear in it.
struct DictionaryAtom {
    double t1_ms = 0.0;
    double t2s_ms = 0.0;
    std::vector<double> signal_shape;
};

struct Dictionary {
    Protocol protocol;
    std::vector<DictionaryAtom> atoms;  // t1-major, t2s-minor order
};

// Logarithmically spaced grid, matching the model's exponential sensitivity.
std::vector<double> log_grid(double lo, double hi, std::uint32_t points);

// Default grids: T1 200-3000 ms and T2* 5-200 ms, 128 points each.
std::vector<double> default_t1_grid();
std::vector<double> default_t2s_grid();

// Throws ConfigError when |atoms| * |protocol| exceeds max_entries.
Dictionary build_dictionary(const Protocol& protocol, const std::vector<double>& t1_grid,
                            const std::vector<double>& t2s_grid,
                            std::size_t max_entries = std::size_t(1) << 27);

// Per voxel: project the signal onto each atom for the optimal PD (clamped
// to (0, 1]), select the atom with the smallest residual, ties to the lowest
// atom index. Equivalent to exhaustive search by construction.
FitResult dictionary_fit(const ContrastStack& stack, const Dictionary& dict);

}  // namespace qmri
