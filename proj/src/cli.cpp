#include "qmri/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qmri/dictionary.hpp"
#include "qmri/errors.hpp"
#include "qmri/experiment.hpp"
#include "qmri/io_json.hpp"
#include "qmri/mlp.hpp"
#include "qmri/nlls.hpp"
#include "qmri/run_config.hpp"
#include "qmri/synth.hpp"
#include "qmri/train.hpp"
#include "qmri/volume_io.hpp"

namespace qmri {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

void guard(const std::string& path, bool overwrite) {
    if (!overwrite && fs::exists(path))
        throw IoError(path + " exists; pass --overwrite to replace it");
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir);
}

std::string item_base(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item_%04zu", i);
    return buf;
}

bool protocols_equal(const Protocol& a, const Protocol& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].tr_ms != b[i].tr_ms || a[i].te_ms != b[i].te_ms || a[i].fa_deg != b[i].fa_deg)
            return false;
    return true;
}

void require_valid_protocol(const Protocol& p, const std::string& context) {
    const auto v = validate(p);
    if (!is_valid(v)) throw ValidationError(context + ": " + describe(v));
}

// Accepts a bare entry array, a {"entries": [...]} object, or a dataset item
// manifest (its input protocol wins unless prefer_output is set).
Protocol protocol_from_file(const std::string& path, bool prefer_output, bool* noisy_hint) {
    const json j = load_json(path, true);
    if (j.is_array() || j.contains("entries")) return protocol_from_json(j, path);
    const char* first = prefer_output ? "output_protocol" : "input_protocol";
    const char* second = prefer_output ? "input_protocol" : "output_protocol";
    for (const char* key : {first, second}) {
        if (!j.contains(key)) continue;
        if (noisy_hint)
            *noisy_hint = j.value(prefer_output ? "output_noisy" : "input_noisy", *noisy_hint);
        return protocol_from_json(j.at(key), path);
    }
    throw ConfigError(path + ": no protocol found (expected entries or a dataset manifest)");
}

}  // namespace

void cmd_simulate(const std::string& config_path, std::uint64_t seed,
                  const std::string& out_dir, bool overwrite) {
    if (out_dir.empty()) throw ConfigError("simulate requires --out DIR");
    const RunConfig rc = config_or_default(config_path);
    const SimulateConfig sc = simulate_config_from(rc);

    make_dir(out_dir);
    guard(out_dir + "/dataset.json", overwrite);

    RandomStream rng = seeded_rng(seed);
    const std::vector<DatasetItem> items = simulate_dataset(rc.n_items, sc, rng);

    for (std::size_t i = 0; i < items.size(); ++i) {
        const DatasetItem& item = items[i];
        const std::string base = item_base(i);

        StoredItem si;
        si.index = static_cast<std::uint32_t>(i);
        si.input_protocol = item.input_session.protocol;
        si.output_protocol = item.output_protocol;
        si.phantom_seed = item.phantom_seed;
        si.protocol_seed = item.protocol_seed;
        si.noise_seed = item.noise_seed;
        si.snr = item.snr;
        si.input_noisy = item.input_stack.noisy;
        si.output_noisy = item.output_stack.noisy;
        si.gt_file = base + "_gt.qmv";
        si.input_file = base + "_input.qmv";
        si.output_file = base + "_output.qmv";

        guard(out_dir + "/" + si.gt_file, overwrite);
        write_volume(out_dir + "/" + si.gt_file, volume_from_map(item.gt, &item.foreground));
        guard(out_dir + "/" + si.input_file, overwrite);
        write_volume(out_dir + "/" + si.input_file,
                     volume_from_stack(item.input_stack, &item.foreground));
        guard(out_dir + "/" + si.output_file, overwrite);
        write_volume(out_dir + "/" + si.output_file,
                     volume_from_stack(item.output_stack, nullptr));
        guard(out_dir + "/" + base + ".json", overwrite);
        save_json(out_dir + "/" + base + ".json", stored_item_to_json(si));

        std::printf("%s: tr=%g fa=%g echoes=%zu outputs=%zu phantom_seed=%llu\n", base.c_str(),
                    item.input_session.tr_ms(), item.input_session.fa_deg(),
                    item.input_session.echoes(), item.output_protocol.size(),
                    static_cast<unsigned long long>(item.phantom_seed));
    }

    save_json(out_dir + "/dataset.json",
              json{{"format_version", 1},
                   {"n_items", items.size()},
                   {"seed", seed},
                   {"mode", train_mode_name(rc.dataset_mode)},
                   {"snr", rc.snr}});
    std::printf("wrote %zu items to %s\n", items.size(), out_dir.c_str());
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_path, const std::uint64_t* seed_override,
               bool overwrite) {
    if (data_dir.empty()) throw ConfigError("train requires --data DIR");
    if (out_path.empty()) throw ConfigError("train requires --out PATH");
    const RunConfig rc = config_or_default(config_path);
    TrainConfig tc = rc.train;
    if (seed_override) tc.seed = *seed_override;

    const json index = load_json(data_dir + "/dataset.json", false);
    std::size_t n_items = 0;
    try {
        n_items = index.at("n_items").get<std::size_t>();
    } catch (const json::exception& e) {
        throw IoError(data_dir + "/dataset.json: malformed index: " + e.what());
    }
    if (n_items == 0) throw IoError(data_dir + ": dataset is empty");

    std::vector<TrainItem> items;
    items.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        const std::string base = item_base(i);
        const StoredItem si =
            stored_item_from_json(load_json(data_dir + "/" + base + ".json", false), base);

        TrainItem t;
        const Volume vin = read_volume(data_dir + "/" + si.input_file);
        if (vin.mask.empty())
            throw IoError(si.input_file + ": missing foreground mask");
        t.input_stack = stack_from_volume(vin, si.input_protocol);
        t.input_stack.noisy = si.input_noisy;
        t.foreground = vin.mask;
        t.input_session.protocol = si.input_protocol;

        const Volume vout = read_volume(data_dir + "/" + si.output_file);
        t.output_stack = stack_from_volume(vout, si.output_protocol);
        t.output_stack.noisy = si.output_noisy;
        t.output_protocol = si.output_protocol;
        items.push_back(std::move(t));
    }

    guard(out_path, overwrite);
    const std::string loss_path = out_path + ".loss.csv";
    guard(loss_path, overwrite);

    auto [model, report] = train(tc, items);
    save_model(out_path, model);

    std::string csv = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        csv += std::to_string(e) + "," + format_double(report.epoch_loss[e]) + "\n";
    write_file_atomic(loss_path, csv);

    std::printf("trained %s model: %u epochs, loss %.6g -> %.6g, %.1f s\n",
                train_mode_name(tc.mode), tc.epochs, report.epoch_loss.front(),
                report.epoch_loss.back(), report.wall_seconds);
}

void cmd_fit(const std::string& method, const std::string& input_path,
             const std::string& protocol_path, const std::string& model_path,
             const std::string& out_path, bool overwrite) {
    if (input_path.empty()) throw ConfigError("fit requires --input PATH");
    if (protocol_path.empty()) throw ConfigError("fit requires --protocol PATH");
    if (out_path.empty()) throw ConfigError("fit requires --out PATH");
    if (method != "dict" && method != "nlls" && method != "neural")
        throw ConfigError("unknown fit method: " + method + " (expected dict|nlls|neural)");

    const Volume vin = read_volume(input_path);
    bool noisy = true;
    const Protocol protocol = protocol_from_file(protocol_path, false, &noisy);
    require_valid_protocol(protocol, protocol_path);

    ContrastStack stack = stack_from_volume(vin, protocol);
    stack.noisy = noisy;
    const auto sv = validate(stack);
    if (!is_valid(sv)) throw ValidationError(input_path + ": " + describe(sv));

    const std::vector<std::uint8_t>* mask = vin.mask.empty() ? nullptr : &vin.mask;
    FitResult fit;
    json sidecar;
    sidecar["method"] = method;
    sidecar["input"] = input_path;

    if (method == "dict" || method == "nlls") {
        const Dictionary dict =
            build_dictionary(protocol, default_t1_grid(), default_t2s_grid());
        FitResult coarse = dictionary_fit(stack, dict);
        sidecar["dictionary"] = {{"t1_points", default_t1_grid().size()},
                                 {"t2s_points", default_t2s_grid().size()}};
        if (method == "dict") {
            fit = std::move(coarse);
        } else {
            fit = nlls_fit(stack, coarse.properties);
            double iters = 0.0;
            for (std::uint32_t it : fit.detail) iters += it;
            sidecar["mean_iterations"] = iters / static_cast<double>(fit.detail.size());
        }
    } else {
        if (model_path.empty()) throw ConfigError("neural fit requires --model PATH");
        const MlpModel model = load_model(model_path);
        sidecar["model"] = model_path;
        if (!model.include_phi_in && !model.trained_phi_in.empty()) {
            Protocol trained;
            trained.entries = model.trained_phi_in;
            if (!protocols_equal(trained, protocol)) {
                std::fprintf(stderr,
                             "warning: input protocol differs from the model's training "
                             "protocol and the model does not take scanner parameters as "
                             "input; proceeding, but estimates may not transfer\n");
                sidecar["protocol_mismatch_warning"] = true;
            }
        }
        fit.properties = mlp_estimate(model, stack, mask);
        const std::size_t n_vox = stack.voxel_count();
        // Data-consistency residual: how well the estimate re-synthesizes
        // the measured input.
        const ContrastStack resynth = synthesize(fit.properties, protocol);
        fit.residual_norm.assign(n_vox, 0.0);
        for (std::size_t v = 0; v < n_vox; ++v) {
            double acc = 0.0;
            for (std::size_t c = 0; c < stack.channels(); ++c) {
                const double d =
                    resynth.intensities[c * n_vox + v] - stack.intensities[c * n_vox + v];
                acc += d * d;
            }
            fit.residual_norm[v] = std::sqrt(acc);
        }
        fit.detail.assign(n_vox, 0);
        fit.converged.assign(n_vox, 1);
    }

    std::size_t n_conv = 0;
    double mean_res = 0.0;
    for (std::size_t v = 0; v < fit.converged.size(); ++v) {
        n_conv += fit.converged[v] ? 1 : 0;
        mean_res += fit.residual_norm[v];
    }
    sidecar["voxels"] = fit.converged.size();
    sidecar["converged"] = n_conv;
    sidecar["mean_residual_norm"] = mean_res / static_cast<double>(fit.converged.size());

    guard(out_path, overwrite);
    write_volume(out_path, volume_from_map(fit.properties, mask));
    guard(out_path + ".json", overwrite);
    save_json(out_path + ".json", sidecar);
    std::printf("fit %s: %zu voxels, %zu converged, mean residual %.6g\n", method.c_str(),
                fit.converged.size(), n_conv,
                mean_res / static_cast<double>(fit.converged.size()));
}

void cmd_synth(const std::string& props_path, const std::string& protocol_path,
               const std::string& out_path, bool overwrite) {
    if (props_path.empty()) throw ConfigError("synth requires --props PATH");
    if (protocol_path.empty()) throw ConfigError("synth requires --protocol PATH");
    if (out_path.empty()) throw ConfigError("synth requires --out PATH");

    const Volume pv = read_volume(props_path);
    const PropertyMap props = map_from_volume(pv);
    const auto mv = validate(props);
    if (!is_valid(mv)) throw ValidationError(props_path + ": " + describe(mv));

    const Protocol protocol = protocol_from_file(protocol_path, true, nullptr);
    require_valid_protocol(protocol, protocol_path);

    const ContrastStack stack = synthesize(props, protocol);
    guard(out_path, overwrite);
    write_volume(out_path,
                 volume_from_stack(stack, pv.mask.empty() ? nullptr : &pv.mask));
    guard(out_path + ".json", overwrite);
    save_json(out_path + ".json", json{{"protocol", protocol_to_json(protocol)}});
    std::printf("synthesized %zu contrasts at %ux%u\n", stack.channels(), stack.width,
                stack.height);
}

void cmd_experiment(const std::string& config_path, const std::uint32_t* id_override,
                    const std::uint64_t* seed_override, const std::string& out_dir,
                    bool overwrite) {
    if (out_dir.empty()) throw ConfigError("experiment requires --out DIR");
    const RunConfig rc = config_or_default(config_path);
    const std::uint32_t id = id_override ? *id_override : rc.experiment_id;
    const std::uint64_t seed = seed_override ? *seed_override : rc.train.seed;

    const ExperimentResult result = run_experiment(id, rc, seed);
    write_experiment_artifacts(result, out_dir, overwrite, rc.emit_maps);

    const json& models = result.summary.at("models");
    for (const auto& [name, stats] : models.items()) {
        std::printf("%s: t1 mae %.4g ms, t2s mae %.4g ms, pd mae %.4g%%, synth mae %.6g\n",
                    name.c_str(), stats.at("mean_t1_mae_ms").get<double>(),
                    stats.at("mean_t2s_mae_ms").get<double>(),
                    stats.at("mean_pd_mae_percent").get<double>(),
                    stats.at("mean_synth_mae").get<double>());
    }
    std::printf("experiment %u artifacts written to %s\n", id, out_dir.c_str());
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"FLASH multiecho quantitative MRI: simulation, fitting, training, synthesis"};
    app.require_subcommand(1);

    std::string config, out, data, input, protocol, model, method = "dict", props;
    std::uint64_t seed = 0;
    std::uint32_t exp_id = 0;
    bool overwrite = false;

    CLI::App* sim = app.add_subcommand("simulate", "Simulate a phantom multiecho dataset");
    sim->add_option("--config", config, "JSON run configuration");
    sim->add_option("--seed", seed, "Dataset seed (default 0)");
    sim->add_option("--out", out, "Output directory")->required();
    sim->add_flag("--overwrite", overwrite, "Replace existing outputs");

    CLI::App* fitc = app.add_subcommand("fit", "Estimate tissue properties from a stack");
    fitc->add_option("--method", method, "dict | nlls | neural")->required();
    fitc->add_option("--input", input, "Input stack volume")->required();
    fitc->add_option("--protocol", protocol,
                     "Protocol JSON (entries or dataset item manifest)")
        ->required();
    fitc->add_option("--model", model, "Model file (neural method)");
    fitc->add_option("--out", out, "Output property volume")->required();
    fitc->add_flag("--overwrite", overwrite, "Replace existing outputs");

    CLI::App* tr = app.add_subcommand("train", "Train an estimator on a simulated dataset");
    tr->add_option("--config", config, "JSON run configuration");
    tr->add_option("--data", data, "Dataset directory from simulate")->required();
    tr->add_option("--seed", seed, "Overrides train.seed from the config");
    tr->add_option("--out", out, "Output model file")->required();
    tr->add_flag("--overwrite", overwrite, "Replace existing outputs");

    CLI::App* sy = app.add_subcommand("synth", "Synthesize contrasts from property maps");
    sy->add_option("--props", props, "Property volume (3 channels)")->required();
    sy->add_option("--protocol", protocol, "Protocol JSON for the synthesized contrasts")
        ->required();
    sy->add_option("--out", out, "Output stack volume")->required();
    sy->add_flag("--overwrite", overwrite, "Replace existing outputs");

    CLI::App* ex = app.add_subcommand("experiment", "Run one of the four evaluation studies");
    ex->add_option("--config", config, "JSON run configuration");
    ex->add_option("--id", exp_id, "Experiment id 1-4 (overrides config)");
    ex->add_option("--seed", seed, "Experiment seed (overrides config)");
    ex->add_option("--out", out, "Output directory")->required();
    ex->add_flag("--overwrite", overwrite, "Replace existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sim->parsed()) {
            cmd_simulate(config, seed, out, overwrite);
        } else if (fitc->parsed()) {
            cmd_fit(method, input, protocol, model, out, overwrite);
        } else if (tr->parsed()) {
            const std::uint64_t s = seed;
            cmd_train(config, data, out, tr->count("--seed") ? &s : nullptr, overwrite);
        } else if (sy->parsed()) {
            cmd_synth(props, protocol, out, overwrite);
        } else if (ex->parsed()) {
            const std::uint64_t s = seed;
            const std::uint32_t i = exp_id;
            cmd_experiment(config, ex->count("--id") ? &i : nullptr,
                           ex->count("--seed") ? &s : nullptr, out, overwrite);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 4;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence error: " << e.what() << " (epoch " << e.epoch << ")\n";
        return 5;
    } catch (const std::domain_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace qmri
