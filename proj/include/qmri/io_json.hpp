#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "qmri/phantom.hpp"
#include "qmri/types.hpp"

namespace qmri {

// Double formatting used for all CSV output: %.17g round-trips exactly, so
// identical values always produce identical bytes.
std::string format_double(double v);

nlohmann::json protocol_to_json(const Protocol& p);
Protocol protocol_from_json(const nlohmann::json& j, const std::string& context);

// Reads and parses a JSON file. Open failures are I/O errors; parse
// failures are config errors for user-authored files (config_context) and
// I/O errors for tool-written artifacts.
nlohmann::json load_json(const std::string& path, bool config_context);

void save_json(const std::string& path, const nlohmann::json& j);

// Per-item dataset manifest: everything needed to reload or re-simulate an
// item, with file names relative to the dataset directory.
struct StoredItem {
    std::uint32_t index = 0;
    Protocol input_protocol;
    Protocol output_protocol;
    std::uint64_t phantom_seed = 0;
    std::uint64_t protocol_seed = 0;
    std::uint64_t noise_seed = 0;
    double snr = 0.0;
    bool input_noisy = true;
    bool output_noisy = false;
    std::string gt_file;
    std::string input_file;
    std::string output_file;
};

nlohmann::json stored_item_to_json(const StoredItem& item);
StoredItem stored_item_from_json(const nlohmann::json& j, const std::string& context);

}  // namespace qmri
