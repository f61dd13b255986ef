#include "qmri/io_json.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "qmri/errors.hpp"
#include "qmri/volume_io.hpp"

namespace qmri {

using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json protocol_to_json(const Protocol& p) {
    json entries = json::array();
    for (const auto& e : p.entries)
        entries.push_back({{"tr_ms", e.tr_ms}, {"te_ms", e.te_ms}, {"fa_deg", e.fa_deg}});
    return json{{"entries", entries}};
}

Protocol protocol_from_json(const json& j, const std::string& context) {
    Protocol p;
    try {
        const json& entries = j.is_array() ? j : j.at("entries");
        for (const auto& e : entries) {
            AcquisitionParams a;
            a.tr_ms = e.at("tr_ms").get<double>();
            a.te_ms = e.at("te_ms").get<double>();
            a.fa_deg = e.at("fa_deg").get<double>();
            p.entries.push_back(a);
        }
    } catch (const json::exception& e) {
        throw ConfigError(context + ": malformed protocol: " + e.what());
    }
    return p;
}

json load_json(const std::string& path, bool config_context) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::exception& e) {
        const std::string msg = path + ": invalid JSON: " + e.what();
        if (config_context) throw ConfigError(msg);
        throw IoError(msg);
    }
}

void save_json(const std::string& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

json stored_item_to_json(const StoredItem& item) {
    return json{{"index", item.index},
                {"input_protocol", protocol_to_json(item.input_protocol)},
                {"output_protocol", protocol_to_json(item.output_protocol)},
                {"phantom_seed", item.phantom_seed},
                {"protocol_seed", item.protocol_seed},
                {"noise_seed", item.noise_seed},
                {"snr", item.snr},
                {"input_noisy", item.input_noisy},
                {"output_noisy", item.output_noisy},
                {"gt_file", item.gt_file},
                {"input_file", item.input_file},
                {"output_file", item.output_file}};
}

StoredItem stored_item_from_json(const json& j, const std::string& context) {
    StoredItem item;
    try {
        item.index = j.at("index").get<std::uint32_t>();
        item.input_protocol = protocol_from_json(j.at("input_protocol"), context);
        item.output_protocol = protocol_from_json(j.at("output_protocol"), context);
        item.phantom_seed = j.at("phantom_seed").get<std::uint64_t>();
        item.protocol_seed = j.at("protocol_seed").get<std::uint64_t>();
        item.noise_seed = j.at("noise_seed").get<std::uint64_t>();
        item.snr = j.at("snr").get<double>();
        item.input_noisy = j.at("input_noisy").get<bool>();
        item.output_noisy = j.at("output_noisy").get<bool>();
        item.gt_file = j.at("gt_file").get<std::string>();
        item.input_file = j.at("input_file").get<std::string>();
        item.output_file = j.at("output_file").get<std::string>();
    } catch (const json::exception& e) {
        throw IoError(context + ": malformed item manifest: " + e.what());
    }
    return item;
}

}  // namespace qmri
