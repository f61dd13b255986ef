#include "qmri/run_config.hpp"

#include <initializer_list>
#include <string>

#include "qmri/errors.hpp"
#include "qmri/io_json.hpp"

namespace qmri {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        bool found = false;
        for (const char* k : known)
            if (key == k) found = true;
        if (!found) throw ConfigError("unknown config key: " + path + "." + key);
        (void)value;
    }
}

const json* section(const json& j, const char* name) {
    if (!j.contains(name)) return nullptr;
    const json& s = j.at(name);
    if (!s.is_object()) throw ConfigError(std::string("config section ") + name +
                                          " must be an object");
    return &s;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key ") + key + " has the wrong type");
    }
}

void read_range(const json& j, const char* key, const std::string& path, double out[2]) {
    if (!j.contains(key)) return;
    const json& a = j.at(key);
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
        throw ConfigError(path + "." + key + " must be [low, high]");
    out[0] = a[0].get<double>();
    out[1] = a[1].get<double>();
}

void check_distribution(const ProtocolDistribution& d, const std::string& path) {
    auto check = [&path](const double r[2], const char* name, double lo_min, double hi_max) {
        if (!(r[0] >= lo_min) || !(r[1] <= hi_max) || !(r[0] <= r[1]))
            throw ConfigError(path + "." + name + " range is invalid");
    };
    check(d.te_range_ms, "te_range", 1e-6, 1e7);
    check(d.tr_range_ms, "tr_range", 1e-6, 1e7);
    check(d.fa_range_deg, "fa_range", 1e-6, 180.0 - 1e-6);
    if (!(d.te_range_ms[0] < d.tr_range_ms[1]))
        throw ConfigError(path + ": te_range and tr_range leave no TE < TR");
}

void parse_distribution(const json& s, const std::string& path, ProtocolDistribution& d,
                        bool allow_n_contrasts) {
    if (allow_n_contrasts)
        reject_unknown(s, path, {"te_range", "tr_range", "fa_range", "n_contrasts"});
    else
        reject_unknown(s, path, {"te_range", "tr_range", "fa_range"});
    read_range(s, "te_range", path, d.te_range_ms);
    read_range(s, "tr_range", path, d.tr_range_ms);
    read_range(s, "fa_range", path, d.fa_range_deg);
    check_distribution(d, path);
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, "config", {"phantom", "protocols", "noise", "train", "experiment"});
    RunConfig rc;

    if (const json* s = section(j, "phantom")) {
        reject_unknown(*s, "phantom",
                       {"width", "height", "n_items", "blobs_per_class", "smooth_radius"});
        rc.phantom.width = get_or<std::uint32_t>(*s, "width", rc.phantom.width);
        rc.phantom.height = get_or<std::uint32_t>(*s, "height", rc.phantom.height);
        rc.n_items = get_or<std::uint32_t>(*s, "n_items", rc.n_items);
        rc.phantom.blobs_per_class =
            get_or<std::uint32_t>(*s, "blobs_per_class", rc.phantom.blobs_per_class);
        rc.phantom.smooth_radius =
            get_or<std::uint32_t>(*s, "smooth_radius", rc.phantom.smooth_radius);
        if (rc.phantom.width < 8 || rc.phantom.height < 8)
            throw ConfigError("phantom.width/height must be at least 8");
        if (rc.n_items == 0) throw ConfigError("phantom.n_items must be positive");
    }

    if (const json* s = section(j, "train")) {
        reject_unknown(*s, "train", {"mode", "lr", "batch", "epochs", "seed", "include_phi_in"});
        rc.train.mode = parse_train_mode(
            get_or<std::string>(*s, "mode", train_mode_name(rc.train.mode)));
        rc.train.learning_rate = get_or<double>(*s, "lr", rc.train.learning_rate);
        rc.train.batch_voxels = get_or<std::uint32_t>(*s, "batch", rc.train.batch_voxels);
        rc.train.epochs = get_or<std::uint32_t>(*s, "epochs", rc.train.epochs);
        rc.train.seed = get_or<std::uint64_t>(*s, "seed", rc.train.seed);
        rc.train.include_phi_in = get_or<bool>(*s, "include_phi_in", rc.train.include_phi_in);
        if (!(rc.train.learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
        if (rc.train.batch_voxels == 0) throw ConfigError("train.batch must be positive");
        if (rc.train.epochs == 0) throw ConfigError("train.epochs must be positive");
    }

    // The dataset shape follows the training mode unless protocols.mode
    // overrides it.
    rc.dataset_mode = rc.train.mode;
    if (const json* s = section(j, "protocols")) {
        reject_unknown(*s, "protocols", {"mode", "input", "output"});
        if (s->contains("mode"))
            rc.dataset_mode = parse_train_mode(s->at("mode").get<std::string>());
        if (s->contains("input"))
            parse_distribution(s->at("input"), "protocols.input", rc.input_dist, false);
        if (s->contains("output")) {
            parse_distribution(s->at("output"), "protocols.output", rc.output_dist, true);
            rc.n_output_contrasts =
                get_or<std::uint32_t>(s->at("output"), "n_contrasts", rc.n_output_contrasts);
            if (rc.n_output_contrasts == 0)
                throw ConfigError("protocols.output.n_contrasts must be positive");
        }
    }

    if (const json* s = section(j, "noise")) {
        reject_unknown(*s, "noise", {"snr"});
        rc.snr = get_or<double>(*s, "snr", rc.snr);
        if (!(rc.snr > 0.0)) throw ConfigError("noise.snr must be positive");
    }

    if (const json* s = section(j, "experiment")) {
        reject_unknown(*s, "experiment",
                       {"id", "n_slices", "n_train_items", "perturbation_deg", "emit_maps"});
        rc.experiment_id = get_or<std::uint32_t>(*s, "id", rc.experiment_id);
        rc.n_slices = get_or<std::uint32_t>(*s, "n_slices", rc.n_slices);
        rc.n_train_items = get_or<std::uint32_t>(*s, "n_train_items", rc.n_train_items);
        rc.perturbation_deg = get_or<double>(*s, "perturbation_deg", rc.perturbation_deg);
        rc.emit_maps = get_or<bool>(*s, "emit_maps", rc.emit_maps);
        if (rc.experiment_id < 1 || rc.experiment_id > 4)
            throw ConfigError("experiment.id must be 1, 2, 3, or 4");
        if (rc.n_slices == 0) throw ConfigError("experiment.n_slices must be positive");
        if (rc.n_train_items == 0) throw ConfigError("experiment.n_train_items must be positive");
        if (rc.perturbation_deg < 0.0)
            throw ConfigError("experiment.perturbation_deg must be non-negative");
    }

    return rc;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(load_json(path, true));
}

SimulateConfig simulate_config_from(const RunConfig& rc) {
    SimulateConfig sc;
    sc.phantom = rc.phantom;
    sc.input_dist = rc.input_dist;
    sc.output_dist = rc.output_dist;
    sc.n_output_contrasts = rc.n_output_contrasts;
    sc.snr = rc.snr;
    switch (rc.dataset_mode) {
        case TrainMode::MultiAcquisition:
            sc.noisy_targets = true;
            break;
        case TrainMode::FixedAcquisition:
            sc.fixed_input = true;
            sc.outputs_are_inputs = true;
            break;
        case TrainMode::SynthesisLoss:
            sc.fixed_input = true;
            sc.noisy_targets = true;
            break;
    }
    return sc;
}

}  // namespace qmri
