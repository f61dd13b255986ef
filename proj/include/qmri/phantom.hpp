#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qmri/protocol.hpp"
#include "qmri/rng.hpp"
#include "qmri/types.hpp"

namespace qmri {

// A tissue class is a box of plausible property values; phantoms draw
// per-voxel values uniformly inside the box.
struct TissueClass {
    std::string name;
    double t1_range_ms[2] = {0.0, 0.0};
    double t2s_range_ms[2] = {0.0, 0.0};
    double pd_range[2] = {0.0, 0.0};
};

// Three classes spanning short/medium/long relaxation regimes. These are
// implementer-chosen plausible ranges that exist to create contrast
// diversity; treat them as configuration.
std::vector<TissueClass> default_tissue_classes();

struct PhantomConfig {
    std::uint32_t width = 64;
    std::uint32_t height = 64;
    std::vector<TissueClass> classes = default_tissue_classes();
    std::uint32_t blobs_per_class = 2;
    std::uint32_t smooth_radius = 1;  // box kernel half-width; 0 disables smoothing
};

// Ground-truth map plus its foreground mask. Background voxels carry the
// kBackgroundPd sentinel and mid-range relaxation times.
struct Phantom {
    PropertyMap map;
    std::vector<std::uint8_t> foreground;  // row-major, 1 = tissue
};

Phantom generate_phantom(const PhantomConfig& cfg, RandomStream& rng);
Phantom generate_phantom(std::uint32_t width, std::uint32_t height,
                         const std::vector<TissueClass>& classes, RandomStream& rng);

// One training/test element: ground truth, a noisy multiecho input stack,
// and noiseless output-contrast targets, with every seed recorded so the
// item can be re-simulated bit-identically.
struct DatasetItem {
    PropertyMap gt;
    std::vector<std::uint8_t> foreground;
    MultiechoSession input_session;
    ContrastStack input_stack;
    Protocol output_protocol;
    ContrastStack output_stack;
    std::uint64_t phantom_seed = 0;
    std::uint64_t protocol_seed = 0;
    std::uint64_t noise_seed = 0;
    double snr = 0.0;
};

struct SimulateConfig {
    PhantomConfig phantom;
    ProtocolDistribution input_dist = training_input_distribution();
    ProtocolDistribution output_dist = training_output_distribution();
    std::uint32_t n_output_contrasts = 10;
    double snr = 50.0;
    bool fixed_input = false;    // phi_in pinned to the fixed baseline session
    bool fixed_output = false;   // phi_out pinned to the fixed baseline entries
    bool noisy_targets = false;  // targets are noiseless unless set
    // Targets are the measured input stack itself (the reconstruction-style
    // training setup); implies phi_out = phi_in.
    bool outputs_are_inputs = false;
    // With fixed_input, jitters the baseline session's flip angle by up to
    // this many degrees (heterogeneous-scanner test inputs).
    double input_fa_perturb_deg = 0.0;
};

std::vector<DatasetItem> simulate_dataset(std::uint32_t n_items, const SimulateConfig& cfg,
                                          RandomStream& rng);

// Deterministic split by item-index hash; the test fraction lands within one
// item of the request. Throws if either side would be empty.
std::pair<std::vector<DatasetItem>, std::vector<DatasetItem>> split_dataset(
    std::vector<DatasetItem> items, double holdout_fraction);

}  // namespace qmri
