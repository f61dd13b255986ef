#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "qmri/phantom.hpp"
#include "qmri/protocol.hpp"
#include "qmri/train.hpp"

namespace qmri {

// Parsed run configuration. Every section is optional in the JSON file;
// unknown keys anywhere are rejected so typos fail loudly.
struct RunConfig {
    PhantomConfig phantom;
    std::uint32_t n_items = 200;

    TrainMode dataset_mode = TrainMode::MultiAcquisition;
    ProtocolDistribution input_dist = training_input_distribution();
    ProtocolDistribution output_dist = training_output_distribution();
    std::uint32_t n_output_contrasts = 10;

    double snr = 50.0;

    TrainConfig train;

    std::uint32_t experiment_id = 1;
    std::uint32_t n_slices = 100;
    std::uint32_t n_train_items = 200;
    double perturbation_deg = 20.0;
    bool emit_maps = true;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Dataset shape implied by the configured mode: varied-protocol training
// data, fixed-protocol reconstruction data (targets are the inputs), or
// fixed-input data with varied synthesis targets.
SimulateConfig simulate_config_from(const RunConfig& rc);

}  // namespace qmri
