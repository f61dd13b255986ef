#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>

#include "qmri/dictionary.hpp"
#include "qmri/errors.hpp"
#include "qmri/experiment.hpp"
#include "qmri/flash.hpp"
#include "qmri/mlp.hpp"
#include "qmri/nlls.hpp"
#include "qmri/phantom.hpp"
#include "qmri/protocol.hpp"
#include "qmri/rng.hpp"
#include "qmri/run_config.hpp"
#include "qmri/synth.hpp"
#include "qmri/train.hpp"
#include "qmri/volume_io.hpp"

namespace py = pybind11;
using namespace qmri;

namespace {

py::array_t<double> plane_array(std::uint32_t width, std::uint32_t height,
                                const double* values) {
    py::array_t<double> out({static_cast<py::ssize_t>(height), static_cast<py::ssize_t>(width)});
    std::copy(values, values + static_cast<std::size_t>(width) * height, out.mutable_data());
    return out;
}

py::array_t<double> map_channel(const PropertyMap& m, double TissueProperties::*field) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
    double* dst = out.mutable_data();
    for (std::size_t i = 0; i < m.voxels.size(); ++i) dst[i] = m.voxels[i].*field;
    return out;
}

py::array_t<std::uint8_t> mask_array(std::uint32_t width, std::uint32_t height,
                                     const std::vector<std::uint8_t>& mask) {
    py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(height), static_cast<py::ssize_t>(width)});
    std::copy(mask.begin(), mask.end(), out.mutable_data());
    return out;
}

std::vector<std::uint8_t> mask_from_object(const py::object& obj, std::size_t expected) {
    if (obj.is_none()) return {};
    auto arr = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(obj);
    if (!arr || static_cast<std::size_t>(arr.size()) != expected)
        throw ValidationError("mask size does not match the raster");
    return std::vector<std::uint8_t>(arr.data(), arr.data() + arr.size());
}

py::array_t<double> stack_array(const ContrastStack& s) {
    py::array_t<double> out({static_cast<py::ssize_t>(s.channels()),
                             static_cast<py::ssize_t>(s.height),
                             static_cast<py::ssize_t>(s.width)});
    std::copy(s.intensities.begin(), s.intensities.end(), out.mutable_data());
    return out;
}

ContrastStack stack_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
    const Protocol& protocol, bool noisy) {
    if (arr.ndim() != 3) throw ValidationError("stack array must be (channels, height, width)");
    if (static_cast<std::size_t>(arr.shape(0)) != protocol.size())
        throw ValidationError("stack channels do not match the protocol");
    ContrastStack s(static_cast<std::uint32_t>(arr.shape(2)),
                    static_cast<std::uint32_t>(arr.shape(1)), protocol);
    std::copy(arr.data(), arr.data() + arr.size(), s.intensities.begin());
    s.noisy = noisy;
    return s;
}

PropertyMap map_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& t1,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& t2s,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& pd) {
    if (t1.ndim() != 2 || t2s.ndim() != 2 || pd.ndim() != 2 ||
        t1.shape(0) != t2s.shape(0) || t1.shape(1) != t2s.shape(1) ||
        t1.shape(0) != pd.shape(0) || t1.shape(1) != pd.shape(1))
        throw ValidationError("property arrays must share one (height, width) shape");
    PropertyMap m(static_cast<std::uint32_t>(t1.shape(1)), static_cast<std::uint32_t>(t1.shape(0)));
    for (std::size_t i = 0; i < m.voxels.size(); ++i)
        m.voxels[i] = {t1.data()[i], t2s.data()[i], pd.data()[i]};
    return m;
}

void raise_if_invalid(const Violations& v, const char* what) {
    if (!v.empty()) throw ValidationError(std::string(what) + ": " + describe(v));
}

}  // namespace

PYBIND11_MODULE(_qmri, mod) {
    mod.doc() = "Quantitative multiecho FLASH estimation core";

    py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(mod, "IoError", PyExc_OSError);
    py::register_exception<ValidationError>(mod, "ValidationError", PyExc_ValueError);
    py::register_exception<DivergenceError>(mod, "DivergenceError", PyExc_RuntimeError);

    py::class_<TissueProperties>(mod, "TissueProperties")
        .def(py::init<>())
        .def(py::init([](double t1, double t2s, double pd) {
                 return TissueProperties{t1, t2s, pd};
             }),
             py::arg("t1_ms"), py::arg("t2s_ms"), py::arg("pd"))
        .def_readwrite("t1_ms", &TissueProperties::t1_ms)
        .def_readwrite("t2s_ms", &TissueProperties::t2s_ms)
        .def_readwrite("pd", &TissueProperties::pd)
        .def("__repr__", [](const TissueProperties& p) {
            return "TissueProperties(t1_ms=" + std::to_string(p.t1_ms) +
                   ", t2s_ms=" + std::to_string(p.t2s_ms) + ", pd=" + std::to_string(p.pd) + ")";
        });

    py::class_<AcquisitionParams>(mod, "AcquisitionParams")
        .def(py::init<>())
        .def(py::init([](double tr, double te, double fa) {
                 return AcquisitionParams{tr, te, fa};
             }),
             py::arg("tr_ms"), py::arg("te_ms"), py::arg("fa_deg"))
        .def_readwrite("tr_ms", &AcquisitionParams::tr_ms)
        .def_readwrite("te_ms", &AcquisitionParams::te_ms)
        .def_readwrite("fa_deg", &AcquisitionParams::fa_deg)
        .def("__repr__", [](const AcquisitionParams& a) {
            return "AcquisitionParams(tr_ms=" + std::to_string(a.tr_ms) +
                   ", te_ms=" + std::to_string(a.te_ms) + ", fa_deg=" + std::to_string(a.fa_deg) + ")";
        });

    py::class_<Protocol>(mod, "Protocol")
        .def(py::init<>())
        .def(py::init([](std::vector<AcquisitionParams> entries) {
                 return Protocol{std::move(entries)};
             }),
             py::arg("entries"))
        .def_readwrite("entries", &Protocol::entries)
        .def("__len__", &Protocol::size)
        .def("__getitem__", [](const Protocol& p, std::size_t i) {
            if (i >= p.size()) throw py::index_error();
            return p.entries[i];
        });

    py::class_<MultiechoSession>(mod, "MultiechoSession")
        .def(py::init<>())
        .def(py::init([](Protocol p) { return MultiechoSession{std::move(p)}; }), py::arg("protocol"))
        .def_readwrite("protocol", &MultiechoSession::protocol)
        .def_property_readonly("echoes", &MultiechoSession::echoes)
        .def("tr_ms", &MultiechoSession::tr_ms)
        .def("fa_deg", &MultiechoSession::fa_deg)
        .def("te_values", &MultiechoSession::te_values);

    py::class_<PropertyMap>(mod, "PropertyMap")
        .def(py::init<std::uint32_t, std::uint32_t>(), py::arg("width"), py::arg("height"))
        .def_static("from_arrays", &map_from_arrays, py::arg("t1_ms"), py::arg("t2s_ms"),
                    py::arg("pd"))
        .def_readonly("width", &PropertyMap::width)
        .def_readonly("height", &PropertyMap::height)
        .def_property_readonly("t1_ms",
                               [](const PropertyMap& m) { return map_channel(m, &TissueProperties::t1_ms); })
        .def_property_readonly("t2s_ms",
                               [](const PropertyMap& m) { return map_channel(m, &TissueProperties::t2s_ms); })
        .def_property_readonly("pd",
                               [](const PropertyMap& m) { return map_channel(m, &TissueProperties::pd); })
        .def("at", [](const PropertyMap& m, std::uint32_t x, std::uint32_t y) {
            if (x >= m.width || y >= m.height) throw py::index_error();
            return m.at(x, y);
        });

    py::class_<ContrastStack>(mod, "ContrastStack")
        .def_static("from_array", &stack_from_array, py::arg("intensities"), py::arg("protocol"),
                    py::arg("noisy") = false)
        .def_readonly("width", &ContrastStack::width)
        .def_readonly("height", &ContrastStack::height)
        .def_readonly("protocol", &ContrastStack::protocol)
        .def_readwrite("noisy", &ContrastStack::noisy)
        .def_property_readonly("array", &stack_array);

    py::class_<RandomStream>(mod, "RandomStream")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("seed", &RandomStream::seed)
        .def("uniform01", &RandomStream::uniform01)
        .def("uniform", &RandomStream::uniform, py::arg("lo"), py::arg("hi"))
        .def("normal", &RandomStream::normal)
        .def("split", &RandomStream::split, py::arg("tag"));

    mod.def("mix_seed", &mix_seed, py::arg("seed"), py::arg("tag"));

    // Signal model.
    mod.def("flash_signal", &flash_signal, py::arg("properties"), py::arg("params"));
    mod.def("flash_signal_shape", &flash_signal_shape, py::arg("properties"), py::arg("params"));
    mod.def(
        "flash_jacobian",
        [](const TissueProperties& p, const AcquisitionParams& phi) {
            const SignalJacobian j = flash_jacobian(p, phi);
            return py::make_tuple(j.dy_dt1, j.dy_dt2s, j.dy_dpd);
        },
        py::arg("properties"), py::arg("params"));
    mod.def("flash_signal_batch", &flash_signal_batch, py::arg("map"), py::arg("protocol"));
    mod.def("ernst_angle_deg", &ernst_angle_deg, py::arg("t1_ms"), py::arg("tr_ms"));
    mod.def("confound_pair", &confound_pair, py::arg("properties"), py::arg("tr_ms"),
            py::arg("fa_deg"), py::arg("t1_factor"));
    mod.def("add_gaussian_noise", &add_gaussian_noise, py::arg("stack"), py::arg("snr"),
            py::arg("rng"));
    mod.def("noise_sigma", &noise_sigma, py::arg("stack"), py::arg("snr"));

    // Protocols.
    mod.def("fixed_baseline_session", &fixed_baseline_session);
    mod.def(
        "validate_protocol",
        [](const Protocol& p) { raise_if_invalid(validate(p), "invalid protocol"); },
        py::arg("protocol"));

    // Phantoms and simulation.
    py::class_<PhantomConfig>(mod, "PhantomConfig")
        .def(py::init<>())
        .def_readwrite("width", &PhantomConfig::width)
        .def_readwrite("height", &PhantomConfig::height)
        .def_readwrite("blobs_per_class", &PhantomConfig::blobs_per_class)
        .def_readwrite("smooth_radius", &PhantomConfig::smooth_radius);

    py::class_<Phantom>(mod, "Phantom")
        .def_readonly("map", &Phantom::map)
        .def_property_readonly("foreground", [](const Phantom& p) {
            return mask_array(p.map.width, p.map.height, p.foreground);
        });

    mod.def(
        "generate_phantom",
        [](const PhantomConfig& cfg, std::uint64_t seed) {
            RandomStream rng(seed);
            return generate_phantom(cfg, rng);
        },
        py::arg("config"), py::arg("seed"));

    py::class_<SimulateConfig>(mod, "SimulateConfig")
        .def(py::init<>())
        .def_readwrite("phantom", &SimulateConfig::phantom)
        .def_readwrite("n_output_contrasts", &SimulateConfig::n_output_contrasts)
        .def_readwrite("snr", &SimulateConfig::snr)
        .def_readwrite("fixed_input", &SimulateConfig::fixed_input)
        .def_readwrite("fixed_output", &SimulateConfig::fixed_output)
        .def_readwrite("noisy_targets", &SimulateConfig::noisy_targets)
        .def_readwrite("outputs_are_inputs", &SimulateConfig::outputs_are_inputs)
        .def_readwrite("input_fa_perturb_deg", &SimulateConfig::input_fa_perturb_deg);

    py::class_<DatasetItem>(mod, "DatasetItem")
        .def_readonly("gt", &DatasetItem::gt)
        .def_property_readonly("foreground",
                               [](const DatasetItem& d) {
                                   return mask_array(d.gt.width, d.gt.height, d.foreground);
                               })
        .def_readonly("input_session", &DatasetItem::input_session)
        .def_readonly("input_stack", &DatasetItem::input_stack)
        .def_readonly("output_protocol", &DatasetItem::output_protocol)
        .def_readonly("output_stack", &DatasetItem::output_stack)
        .def_readonly("phantom_seed", &DatasetItem::phantom_seed)
        .def_readonly("protocol_seed", &DatasetItem::protocol_seed)
        .def_readonly("noise_seed", &DatasetItem::noise_seed)
        .def_readonly("snr", &DatasetItem::snr);

    mod.def(
        "simulate_dataset",
        [](std::uint32_t n_items, const SimulateConfig& cfg, std::uint64_t seed) {
            RandomStream rng(seed);
            return simulate_dataset(n_items, cfg, rng);
        },
        py::arg("n_items"), py::arg("config"), py::arg("seed"));

    // Classical fitting.
    py::class_<FitResult>(mod, "FitResult")
        .def_readonly("properties", &FitResult::properties)
        .def_readonly("residual_norm", &FitResult::residual_norm)
        .def_readonly("detail", &FitResult::detail)
        .def_property_readonly("converged", [](const FitResult& r) {
            std::vector<bool> out(r.converged.begin(), r.converged.end());
            return out;
        });

    py::class_<Dictionary>(mod, "Dictionary")
        .def_readonly("protocol", &Dictionary::protocol)
        .def_property_readonly("n_atoms", [](const Dictionary& d) { return d.atoms.size(); });

    mod.def("log_grid", &log_grid, py::arg("lo"), py::arg("hi"), py::arg("points"));
    mod.def("default_t1_grid", &default_t1_grid);
    mod.def("default_t2s_grid", &default_t2s_grid);
    mod.def("build_dictionary", &build_dictionary, py::arg("protocol"), py::arg("t1_grid"),
            py::arg("t2s_grid"), py::arg("max_entries") = std::size_t(1) << 27);
    mod.def("dictionary_fit", &dictionary_fit, py::arg("stack"), py::arg("dictionary"));

    py::class_<NllsOptions>(mod, "NllsOptions")
        .def(py::init<>())
        .def_readwrite("max_iter", &NllsOptions::max_iter)
        .def_readwrite("tol", &NllsOptions::tol)
        .def_readwrite("lambda_init", &NllsOptions::lambda_init);

    mod.def(
        "nlls_fit",
        [](const ContrastStack& stack, const TissueProperties& init, const NllsOptions& opts) {
            return nlls_fit(stack, init, opts);
        },
        py::arg("stack"), py::arg("init"), py::arg("options") = NllsOptions{});
    mod.def(
        "nlls_fit_map",
        [](const ContrastStack& stack, const PropertyMap& init, const NllsOptions& opts) {
            return nlls_fit(stack, init, opts);
        },
        py::arg("stack"), py::arg("init"), py::arg("options") = NllsOptions{});

    // Neural estimator.
    py::class_<MlpModel>(mod, "MlpModel")
        .def_readonly("layer_sizes", &MlpModel::layer_sizes)
        .def_readonly("include_phi_in", &MlpModel::include_phi_in)
        .def_readonly("echoes", &MlpModel::echoes)
        .def_readonly("trained_mode", &MlpModel::trained_mode)
        .def_property_readonly("parameter_count", &MlpModel::parameter_count)
        .def_property_readonly("checksum", [](const MlpModel& m) { return model_checksum(m); });

    mod.def("save_model", &save_model, py::arg("path"), py::arg("model"));
    mod.def("load_model", &load_model, py::arg("path"));
    mod.def(
        "mlp_estimate",
        [](const MlpModel& model, const ContrastStack& stack, const py::object& foreground) {
            const std::vector<std::uint8_t> mask =
                mask_from_object(foreground, stack.voxel_count());
            return mlp_estimate(model, stack, mask.empty() ? nullptr : &mask);
        },
        py::arg("model"), py::arg("stack"), py::arg("foreground") = py::none());

    // Training.
    py::enum_<TrainMode>(mod, "TrainMode")
        .value("multi_acquisition", TrainMode::MultiAcquisition)
        .value("fixed_acquisition", TrainMode::FixedAcquisition)
        .value("synthesis_loss", TrainMode::SynthesisLoss);

    py::class_<TrainConfig>(mod, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("mode", &TrainConfig::mode)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("batch_voxels", &TrainConfig::batch_voxels)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("contrasts_per_step", &TrainConfig::contrasts_per_step)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("include_phi_in", &TrainConfig::include_phi_in)
        .def_readwrite("hidden", &TrainConfig::hidden)
        .def_readwrite("echoes", &TrainConfig::echoes);

    py::class_<TrainItem>(mod, "TrainItem")
        .def_readonly("input_session", &TrainItem::input_session)
        .def_readonly("input_stack", &TrainItem::input_stack)
        .def_readonly("output_protocol", &TrainItem::output_protocol)
        .def_readonly("output_stack", &TrainItem::output_stack);

    py::class_<TrainReport>(mod, "TrainReport")
        .def_readonly("epoch_loss", &TrainReport::epoch_loss)
        .def_readonly("wall_seconds", &TrainReport::wall_seconds)
        .def_readonly("final_checksum", &TrainReport::final_checksum);

    mod.def("strip_ground_truth",
            py::overload_cast<const std::vector<DatasetItem>&>(&strip_ground_truth),
            py::arg("items"));
    mod.def(
        "train",
        [](const TrainConfig& config, const std::vector<TrainItem>& items) {
            auto [model, report] = train(config, items);
            return py::make_tuple(std::move(model), std::move(report));
        },
        py::arg("config"), py::arg("items"));

    // Synthesis and metrics.
    mod.def("synthesize", &synthesize, py::arg("properties"), py::arg("protocol"));

    py::class_<PropertyMae>(mod, "PropertyMae")
        .def_readonly("t1_ms", &PropertyMae::t1_ms)
        .def_readonly("t2s_ms", &PropertyMae::t2s_ms)
        .def_readonly("pd", &PropertyMae::pd)
        .def_readonly("pd_percent", &PropertyMae::pd_percent);

    mod.def(
        "property_mae",
        [](const PropertyMap& est, const PropertyMap& gold, const py::object& mask) {
            return mae(est, gold, mask_from_object(mask, est.voxels.size()));
        },
        py::arg("estimate"), py::arg("gold"), py::arg("mask"));
    mod.def(
        "stack_mae",
        [](const ContrastStack& est, const ContrastStack& gold, const py::object& mask) {
            return mae(est, gold, mask_from_object(mask, est.voxel_count()));
        },
        py::arg("estimate"), py::arg("gold"), py::arg("mask"));

    // Volume I/O.
    mod.def(
        "write_stack_volume",
        [](const std::string& path, const ContrastStack& stack, const py::object& mask) {
            const std::vector<std::uint8_t> m = mask_from_object(mask, stack.voxel_count());
            write_volume(path, volume_from_stack(stack, m.empty() ? nullptr : &m));
        },
        py::arg("path"), py::arg("stack"), py::arg("mask") = py::none());
    mod.def(
        "read_stack_volume",
        [](const std::string& path, const Protocol& protocol) {
            const Volume v = read_volume(path);
            return py::make_tuple(stack_from_volume(v, protocol),
                                  mask_array(v.dims[0], v.dims[1], v.mask));
        },
        py::arg("path"), py::arg("protocol"));
    mod.def(
        "write_map_volume",
        [](const std::string& path, const PropertyMap& map, const py::object& mask) {
            const std::vector<std::uint8_t> m = mask_from_object(mask, map.voxels.size());
            write_volume(path, volume_from_map(map, m.empty() ? nullptr : &m));
        },
        py::arg("path"), py::arg("map"), py::arg("mask") = py::none());
    mod.def(
        "read_map_volume",
        [](const std::string& path) {
            const Volume v = read_volume(path);
            return py::make_tuple(map_from_volume(v), mask_array(v.dims[0], v.dims[1], v.mask));
        },
        py::arg("path"));

    // Experiments.
    mod.def(
        "run_experiment",
        [](std::uint32_t id, const std::string& config_path, std::uint64_t seed) {
            const RunConfig rc =
                config_path.empty() ? RunConfig{} : load_run_config(config_path);
            const ExperimentResult r = run_experiment(id, rc, seed);
            return py::make_tuple(experiment_csv(r), r.summary.dump(2));
        },
        py::arg("id"), py::arg("config_path") = std::string(), py::arg("seed") = 0,
        "Runs one experiment and returns (csv_text, summary_json_text).");
}
