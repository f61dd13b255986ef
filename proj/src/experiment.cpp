#include "qmri/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <thread>

#include "qmri/errors.hpp"
#include "qmri/flash.hpp"
#include "qmri/io_json.hpp"
#include "qmri/mlp.hpp"
#include "qmri/synth.hpp"
#include "qmri/train.hpp"
#include "qmri/volume_io.hpp"

namespace qmri {

unsigned thread_budget() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("QMRI_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError("QMRI_THREADS must be a positive integer");
        if (static_cast<unsigned long>(v) < hw) hw = static_cast<unsigned>(v);
    }
    return hw;
}

namespace {

using nlohmann::json;

// Strided parallel loop; results must be written to per-index slots so the
// outcome is identical for any thread count.
void parallel_for(std::size_t n, unsigned budget, const std::function<void(std::size_t)>& fn) {
    if (budget == 0) budget = 1;
    if (budget <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned t_count = static_cast<unsigned>(
        std::min<std::size_t>(budget, n));
    std::vector<std::exception_ptr> errors(t_count);
    std::vector<std::thread> threads;
    threads.reserve(t_count);
    for (unsigned t = 0; t < t_count; ++t) {
        threads.emplace_back([&, t]() {
            try {
                for (std::size_t i = t; i < n; i += t_count) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct ModelEval {
    PropertyMae prop;
    double synth_mae = 0.0;
    double synth_mae_unpert = 0.0;
    double degradation = 0.0;
};

struct SliceEval {
    double fa_deg = 0.0;
    std::vector<ModelEval> models;
};

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double mean_over_mask(const std::vector<double>& values, std::size_t n_vox,
                      std::size_t channels, const std::vector<std::uint8_t>& mask) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t v = 0; v < n_vox; ++v) {
            if (!mask[v]) continue;
            sum += values[c * n_vox + v];
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

DifferenceMap property_diff_map(const std::string& name, const PropertyMap& est,
                                const PropertyMap& gold,
                                const std::vector<std::uint8_t>& mask) {
    DifferenceMap m;
    m.name = name;
    m.width = gold.width;
    m.height = gold.height;
    m.values.assign(gold.size(), 0.0);
    double gold_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < gold.size(); ++v) {
        if (!mask[v]) continue;
        gold_sum += gold.voxels[v].t1_ms;
        ++count;
    }
    const double norm = count ? gold_sum / static_cast<double>(count) : 1.0;
    for (std::size_t v = 0; v < gold.size(); ++v) {
        if (!mask[v]) continue;
        m.values[v] = std::abs(est.voxels[v].t1_ms - gold.voxels[v].t1_ms) / norm;
        m.hi = std::max(m.hi, m.values[v]);
    }
    return m;
}

DifferenceMap synth_diff_map(const std::string& name, const ContrastStack& est,
                             const ContrastStack& gold,
                             const std::vector<std::uint8_t>& mask) {
    DifferenceMap m;
    m.name = name;
    m.width = gold.width;
    m.height = gold.height;
    const std::size_t n_vox = gold.voxel_count();
    m.values.assign(n_vox, 0.0);
    const double norm =
        std::max(mean_over_mask(gold.intensities, n_vox, gold.channels(), mask), 1e-300);
    for (std::size_t v = 0; v < n_vox; ++v) {
        if (!mask[v]) continue;
        double acc = 0.0;
        for (std::size_t c = 0; c < gold.channels(); ++c)
            acc += std::abs(est.intensities[c * n_vox + v] - gold.intensities[c * n_vox + v]);
        m.values[v] = acc / (static_cast<double>(gold.channels()) * norm);
        m.hi = std::max(m.hi, m.values[v]);
    }
    return m;
}

}  // namespace

ExperimentResult run_experiment(std::uint32_t id, const RunConfig& rc, std::uint64_t seed) {
    if (id < 1 || id > 4) throw ConfigError("experiment id must be 1, 2, 3, or 4");
    const bool exp2 = id == 2;
    const std::vector<TrainMode> modes = {
        id == 4 ? TrainMode::SynthesisLoss : TrainMode::MultiAcquisition,
        TrainMode::FixedAcquisition};
    const std::vector<std::string> names = {train_mode_name(modes[0]),
                                            train_mode_name(modes[1])};

    std::vector<MlpModel> models;
    json training = json::object();
    for (std::size_t m = 0; m < modes.size(); ++m) {
        RunConfig data_rc = rc;
        data_rc.dataset_mode = modes[m];
        RandomStream data_rng = seeded_rng(mix_seed(seed, 100 + m));
        std::vector<DatasetItem> data =
            simulate_dataset(rc.n_train_items, simulate_config_from(data_rc), data_rng);

        TrainConfig tc = rc.train;
        tc.mode = modes[m];
        tc.seed = mix_seed(seed, 200 + m);
        auto [model, report] = train(tc, strip_ground_truth(data));
        // No wall-clock entries here: the summary must be byte-identical
        // across identical-seed reruns.
        training[names[m]] = {{"epochs", tc.epochs},
                              {"first_epoch_loss", report.epoch_loss.front()},
                              {"final_epoch_loss", report.epoch_loss.back()},
                              {"checksum", hex64(report.final_checksum)}};
        std::fprintf(stderr, "experiment %u: trained %s in %.1f s\n", id, names[m].c_str(),
                     report.wall_seconds);
        models.push_back(std::move(model));
    }

    // Held-out test slices: noisy input at the experiment's phi_in, noiseless
    // gold-standard targets at random phi_out.
    SimulateConfig test_sc = simulate_config_from(rc);
    test_sc.fixed_input = true;
    test_sc.fixed_output = false;
    test_sc.outputs_are_inputs = false;
    test_sc.noisy_targets = false;
    test_sc.input_fa_perturb_deg = exp2 ? rc.perturbation_deg : 0.0;
    RandomStream test_rng = seeded_rng(mix_seed(seed, 300));
    std::vector<DatasetItem> test = simulate_dataset(rc.n_slices, test_sc, test_rng);

    const MultiechoSession baseline = fixed_baseline_session();
    std::vector<SliceEval> evals(test.size());
    parallel_for(test.size(), thread_budget(), [&](std::size_t s) {
        const DatasetItem& item = test[s];
        SliceEval ev;
        ev.fa_deg = item.input_session.fa_deg();
        ContrastStack unpert;
        if (exp2) {
            RandomStream noise_rng = seeded_rng(item.noise_seed);
            unpert = add_gaussian_noise(flash_signal_batch(item.gt, baseline.protocol),
                                        item.snr, noise_rng);
        }
        for (const MlpModel& model : models) {
            ModelEval me;
            const PropertyMap est = mlp_estimate(model, item.input_stack, &item.foreground);
            me.prop = mae(est, item.gt, item.foreground);
            me.synth_mae = mae(synthesize(est, item.output_protocol), item.output_stack,
                               item.foreground);
            if (exp2) {
                const PropertyMap est0 = mlp_estimate(model, unpert, &item.foreground);
                me.synth_mae_unpert = mae(synthesize(est0, item.output_protocol),
                                          item.output_stack, item.foreground);
                me.degradation = me.synth_mae / std::max(me.synth_mae_unpert, 1e-300);
            }
            ev.models.push_back(me);
        }
        evals[s] = std::move(ev);
    });

    ExperimentResult result;
    result.id = id;
    result.seed = seed;
    for (std::size_t s = 0; s < evals.size(); ++s) {
        const auto slice = static_cast<std::uint32_t>(s);
        if (exp2) result.rows.push_back({id, slice, "input", "fa_deg", evals[s].fa_deg});
        for (std::size_t m = 0; m < models.size(); ++m) {
            const ModelEval& me = evals[s].models[m];
            result.rows.push_back({id, slice, names[m], "t1_mae_ms", me.prop.t1_ms});
            result.rows.push_back({id, slice, names[m], "t2s_mae_ms", me.prop.t2s_ms});
            result.rows.push_back({id, slice, names[m], "pd_mae", me.prop.pd});
            result.rows.push_back({id, slice, names[m], "pd_mae_percent", me.prop.pd_percent});
            result.rows.push_back({id, slice, names[m], "synth_mae", me.synth_mae});
            if (exp2) {
                result.rows.push_back(
                    {id, slice, names[m], "synth_mae_unperturbed", me.synth_mae_unpert});
                result.rows.push_back(
                    {id, slice, names[m], "degradation_ratio", me.degradation});
            }
        }
    }

    // Aggregates and the pairwise comparisons the acceptance gates read.
    const double n = static_cast<double>(evals.size());
    json model_stats = json::object();
    std::vector<double> mean_t1(2, 0.0), mean_t2s(2, 0.0), mean_pd(2, 0.0), mean_synth(2, 0.0);
    std::vector<double> mean_unpert(2, 0.0), worst_synth(2, 0.0), worst_degr(2, 0.0);
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (const SliceEval& ev : evals) {
            const ModelEval& me = ev.models[m];
            mean_t1[m] += me.prop.t1_ms;
            mean_t2s[m] += me.prop.t2s_ms;
            mean_pd[m] += me.prop.pd;
            mean_synth[m] += me.synth_mae;
            mean_unpert[m] += me.synth_mae_unpert;
            worst_synth[m] = std::max(worst_synth[m], me.synth_mae);
            worst_degr[m] = std::max(worst_degr[m], me.degradation);
        }
        mean_t1[m] /= n;
        mean_t2s[m] /= n;
        mean_pd[m] /= n;
        mean_synth[m] /= n;
        mean_unpert[m] /= n;
        json stats = {{"mean_t1_mae_ms", mean_t1[m]},
                      {"mean_t2s_mae_ms", mean_t2s[m]},
                      {"mean_pd_mae", mean_pd[m]},
                      {"mean_pd_mae_percent", mean_pd[m] * 100.0},
                      {"mean_synth_mae", mean_synth[m]},
                      {"worst_synth_mae", worst_synth[m]}};
        if (exp2) {
            stats["mean_synth_mae_unperturbed"] = mean_unpert[m];
            stats["worst_degradation_ratio"] = worst_degr[m];
        }
        model_stats[names[m]] = stats;
    }

    auto fraction_cob = [&](auto metric) {
        std::size_t good = 0;
        for (const SliceEval& ev : evals)
            if (metric(ev.models[0]) <= 1.05 * metric(ev.models[1])) ++good;
        return static_cast<double>(good) / n;
    };
    const double t2s_rel = mean_t2s[0] / std::max(mean_t2s[1], 1e-300);
    json comparisons = {
        {"proposed", names[0]},
        {"baseline", names[1]},
        {"t1_mae_proposed_lower", mean_t1[0] < mean_t1[1]},
        {"pd_mae_proposed_lower", mean_pd[0] < mean_pd[1]},
        {"synth_mae_proposed_lower", mean_synth[0] < mean_synth[1]},
        {"t2s_mae_ratio", std::max(t2s_rel, 1.0 / std::max(t2s_rel, 1e-300))},
        {"fraction_synth_comparable_or_better",
         fraction_cob([](const ModelEval& me) { return me.synth_mae; })},
        {"fraction_t1_comparable_or_better",
         fraction_cob([](const ModelEval& me) { return me.prop.t1_ms; })},
        {"fraction_t2s_comparable_or_better",
         fraction_cob([](const ModelEval& me) { return me.prop.t2s_ms; })},
        {"fraction_pd_comparable_or_better",
         fraction_cob([](const ModelEval& me) { return me.prop.pd; })}};
    if (exp2) comparisons["worst_degradation_smaller"] = worst_degr[0] < worst_degr[1];

    result.summary = {{"experiment_id", id},
                      {"seed", seed},
                      {"n_slices", evals.size()},
                      {"n_train_items", rc.n_train_items},
                      {"snr", rc.snr},
                      {"include_phi_in", rc.train.include_phi_in},
                      {"models", model_stats},
                      {"comparisons", comparisons},
                      {"training", training}};
    if (exp2) result.summary["perturbation_deg"] = rc.perturbation_deg;

    // Difference rasters for the first test slice.
    if (!test.empty()) {
        const DatasetItem& item = test.front();
        for (std::size_t m = 0; m < models.size(); ++m) {
            const PropertyMap est = mlp_estimate(models[m], item.input_stack, &item.foreground);
            const std::string prefix =
                "exp" + std::to_string(id) + "_slice0_" + names[m];
            if (id == 1) {
                result.maps.push_back(
                    property_diff_map(prefix + "_t1_diff", est, item.gt, item.foreground));
            } else {
                result.maps.push_back(synth_diff_map(
                    prefix + "_synth_diff", synthesize(est, item.output_protocol),
                    item.output_stack, item.foreground));
            }
        }
    }
    return result;
}

std::string experiment_csv(const ExperimentResult& result) {
    std::string out = "experiment_id,slice_id,model,metric,value\n";
    for (const CsvRow& row : result.rows) {
        out += std::to_string(row.experiment_id);
        out += ',';
        out += std::to_string(row.slice_id);
        out += ',';
        out += row.model;
        out += ',';
        out += row.metric;
        out += ',';
        out += format_double(row.value);
        out += '\n';
    }
    return out;
}

void write_experiment_artifacts(const ExperimentResult& result, const std::string& out_dir,
                                bool overwrite, bool emit_maps) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir);
    auto target = [&](const std::string& name) {
        const std::string path = out_dir + "/" + name;
        if (!overwrite && fs::exists(path))
            throw IoError(path + " exists; pass --overwrite to replace it");
        return path;
    };
    write_file_atomic(target("results.csv"), experiment_csv(result));
    save_json(target("summary.json"), result.summary);
    if (emit_maps) {
        for (const DifferenceMap& m : result.maps) {
            write_pgm(target(m.name + ".pgm"), m.width, m.height, m.values, m.lo, m.hi);
            save_json(target(m.name + ".json"),
                      {{"width", m.width},
                       {"height", m.height},
                       {"window_min", m.lo},
                       {"window_max", m.hi}});
        }
    }
}

}  // namespace qmri
