#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qmri/errors.hpp"
#include "qmri/io_json.hpp"
#include "qmri/run_config.hpp"
#include "qmri/volume_io.hpp"
#include "test_helpers.hpp"

using namespace qmri;
using qmri::testing::TempDir;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void put_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Volume sample_volume(bool float64) {
    Volume v;
    v.dims = {3, 2};
    v.channels = 4;
    v.float64 = float64;
    v.data = {0.0,   1.5,    -2.25,  1e-30, 3.0,   0.125, 7.0,  -8.5,
              0.75,  1e6,    -1e-6,  42.0,  0.5,   2.0,   -3.0, 9.0,
              1.125, -0.625, 1024.0, 0.25,  kBackgroundPd, 1.0, 2.5, -4.75};
    v.mask = {1, 0, 1, 1, 0, 1};
    return v;
}

}  // namespace

TEST_CASE("volumes round trip in both precisions") {
    TempDir dir("qmri_vol");

    const Volume v64 = sample_volume(true);
    const std::string p64 = dir.file("v64.qmv");
    write_volume(p64, v64);
    const Volume r64 = read_volume(p64);
    CHECK(r64.dims == v64.dims);
    CHECK(r64.channels == 4);
    CHECK(r64.float64);
    CHECK(r64.data == v64.data);
    CHECK(r64.mask == v64.mask);

    // All sample values are exactly representable in single precision except
    // 1e-30 and -1e-6; use float-representable data for the f32 check.
    Volume v32 = sample_volume(false);
    for (double& x : v32.data) x = static_cast<double>(static_cast<float>(x));
    const std::string p32 = dir.file("v32.qmv");
    write_volume(p32, v32);
    const Volume r32 = read_volume(p32);
    CHECK_FALSE(r32.float64);
    CHECK(r32.data == v32.data);
    CHECK(r32.mask == v32.mask);

    // The f32 file is smaller by 4 bytes per sample.
    CHECK(read_bytes(p64).size() - read_bytes(p32).size() == 4 * v64.data.size());

    Volume no_mask = v64;
    no_mask.mask.clear();
    const std::string pn = dir.file("nomask.qmv");
    write_volume(pn, no_mask);
    CHECK(read_volume(pn).mask.empty());
}

TEST_CASE("volume writing validates its input") {
    TempDir dir("qmri_vol_bad");
    const std::string path = dir.file("x.qmv");
    Volume v = sample_volume(true);

    Volume bad = v;
    bad.dims.clear();
    CHECK_THROWS_AS(write_volume(path, bad), ConfigError);
    bad = v;
    bad.dims[1] = 0;
    CHECK_THROWS_AS(write_volume(path, bad), ConfigError);
    bad = v;
    bad.channels = 0;
    CHECK_THROWS_AS(write_volume(path, bad), ConfigError);
    bad = v;
    bad.data.pop_back();
    CHECK_THROWS_AS(write_volume(path, bad), ConfigError);
    bad = v;
    bad.mask.push_back(1);
    CHECK_THROWS_AS(write_volume(path, bad), ConfigError);
}

TEST_CASE("volume reading rejects corrupt files") {
    TempDir dir("qmri_vol_corrupt");
    CHECK_THROWS_AS(read_volume(dir.file("missing.qmv")), IoError);

    const std::string good = dir.file("good.qmv");
    write_volume(good, sample_volume(true));
    const std::string bytes = read_bytes(good);

    const auto expect_reject = [&](std::string mutated, const char* label) {
        const std::string path = dir.file(std::string(label) + ".qmv");
        put_bytes(path, mutated);
        CHECK_THROWS_AS(read_volume(path), IoError);
    };

    expect_reject("QM", "short");
    {
        std::string b = bytes;
        b[0] = 'X';
        expect_reject(b, "magic");
    }
    // Little-endian u32 fields: version at 4, ndim at 8, dims at 12 and 16,
    // channels at 20, dtype at 24, mask flag at 28.
    for (const auto& [off, val, label] :
         std::vector<std::tuple<std::size_t, unsigned char, const char*>>{
             {4, 9, "version"}, {8, 0, "ndim0"}, {8, 9, "ndim9"}, {12, 0, "dim0"},
             {20, 0, "chan0"}, {24, 7, "dtype"}, {28, 3, "maskflag"}}) {
        std::string b = bytes;
        b[off] = static_cast<char>(val);
        b[off + 1] = b[off + 2] = b[off + 3] = '\0';
        expect_reject(b, label);
    }
    expect_reject(bytes.substr(0, bytes.size() - 1), "truncated");
    expect_reject(bytes + "z", "padded");
    expect_reject(bytes.substr(0, 18), "header_cut");
}

TEST_CASE("stacks and volumes convert both ways") {
    RandomStream rng(601);
    Protocol protocol;
    for (int i = 0; i < 3; ++i) protocol.entries.push_back(qmri::testing::random_params(rng));
    ContrastStack stack(5, 4, protocol);
    for (auto& x : stack.intensities) x = rng.uniform(0.0, 1.0);
    const std::vector<std::uint8_t> mask(20, 1);

    const Volume v = volume_from_stack(stack, &mask);
    CHECK(v.dims == (std::vector<std::uint32_t>{5, 4}));
    CHECK(v.channels == 3);
    const ContrastStack back = stack_from_volume(v, protocol);
    CHECK(back.intensities == stack.intensities);
    CHECK(back.width == 5);

    Protocol two;
    two.entries = {protocol.entries[0], protocol.entries[1]};
    CHECK_THROWS_AS(stack_from_volume(v, two), ValidationError);
    Volume flat = v;
    flat.dims = {20};
    CHECK_THROWS_AS(stack_from_volume(flat, protocol), ValidationError);
}

TEST_CASE("property maps and volumes convert both ways") {
    RandomStream rng(602);
    PropertyMap map(6, 3);
    for (auto& p : map.voxels) p = qmri::testing::random_properties(rng);
    const Volume v = volume_from_map(map, nullptr);
    CHECK(v.channels == 3);
    CHECK(v.data[0] == map.voxels[0].t1_ms);
    CHECK(v.data[18] == map.voxels[0].t2s_ms);
    CHECK(v.data[36] == map.voxels[0].pd);

    const PropertyMap back = map_from_volume(v);
    REQUIRE(back.size() == map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        CHECK(back.voxels[i].t1_ms == map.voxels[i].t1_ms);
        CHECK(back.voxels[i].t2s_ms == map.voxels[i].t2s_ms);
        CHECK(back.voxels[i].pd == map.voxels[i].pd);
    }

    Volume bad = v;
    bad.channels = 2;
    bad.data.resize(36);
    CHECK_THROWS_AS(map_from_volume(bad), ValidationError);
}

TEST_CASE("grayscale previews window and clamp") {
    TempDir dir("qmri_pgm");
    const std::string path = dir.file("img.pgm");
    write_pgm(path, 2, 2, {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0}, 0.0, 1.0);
    const std::string bytes = read_bytes(path);
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 85);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 170);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 255);

    // Out-of-window values clamp; a degenerate window renders mid-gray.
    write_pgm(path, 1, 2, {-5.0, 99.0}, 0.0, 1.0);
    const std::string clamped = read_bytes(path);
    CHECK(static_cast<unsigned char>(clamped[clamped.size() - 2]) == 0);
    CHECK(static_cast<unsigned char>(clamped[clamped.size() - 1]) == 255);
    write_pgm(path, 1, 1, {3.0}, 2.0, 2.0);
    CHECK(static_cast<unsigned char>(read_bytes(path).back()) == 128);

    CHECK_THROWS_AS(write_pgm(path, 2, 2, {1.0}, 0.0, 1.0), ConfigError);
}

TEST_CASE("atomic writes leave no temp file behind") {
    TempDir dir("qmri_atomic");
    const std::string path = dir.file("out.bin");
    write_file_atomic(path, "first");
    CHECK(read_bytes(path) == "first");
    write_file_atomic(path, "second version");
    CHECK(read_bytes(path) == "second version");
    CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
    CHECK_THROWS_AS(write_file_atomic(dir.file("no/such/dir/x"), "y"), IoError);
}

TEST_CASE("doubles format to round-trippable text") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 1.7976931348623157e308, 5e-324,
                     123456789.123456789, -0.0, 37.0}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
    CHECK(format_double(37.0) == "37");
}

TEST_CASE("protocols survive the JSON form") {
    Protocol p;
    p.entries = {{37.0, 7.0, 20.0}, {50.5, 12.25, 35.0}};
    const nlohmann::json j = protocol_to_json(p);
    const Protocol back = protocol_from_json(j, "test");
    REQUIRE(back.size() == 2);
    CHECK(back[0].tr_ms == 37.0);
    CHECK(back[1].te_ms == 12.25);
    CHECK(back[1].fa_deg == 35.0);

    // A bare entry array is accepted too.
    const Protocol from_array = protocol_from_json(j.at("entries"), "test");
    CHECK(from_array.size() == 2);

    nlohmann::json bad = j;
    bad["entries"][0].erase("te_ms");
    CHECK_THROWS_AS(protocol_from_json(bad, "test"), ConfigError);
    CHECK_THROWS_AS(protocol_from_json(nlohmann::json{{"x", 1}}, "test"), ConfigError);
}

TEST_CASE("item manifests survive the JSON form") {
    StoredItem item;
    item.index = 7;
    item.input_protocol.entries = {{37.0, 7.0, 20.0}};
    item.output_protocol.entries = {{40.0, 9.0, 30.0}, {60.0, 15.0, 10.0}};
    item.phantom_seed = 0xDEADBEEFCAFEBABEull;
    item.protocol_seed = 3;
    item.noise_seed = 0xFFFFFFFFFFFFFFFFull;
    item.snr = 50.0;
    item.input_noisy = true;
    item.output_noisy = false;
    item.gt_file = "item_0007_gt.qmv";
    item.input_file = "item_0007_input.qmv";
    item.output_file = "item_0007_output.qmv";

    const StoredItem back = stored_item_from_json(stored_item_to_json(item), "test");
    CHECK(back.index == 7);
    CHECK(back.noise_seed == item.noise_seed);
    CHECK(back.phantom_seed == item.phantom_seed);
    CHECK(back.snr == 50.0);
    CHECK(back.input_noisy);
    CHECK_FALSE(back.output_noisy);
    CHECK(back.gt_file == item.gt_file);
    CHECK(back.output_protocol.size() == 2);

    nlohmann::json bad = stored_item_to_json(item);
    bad.erase("noise_seed");
    CHECK_THROWS_AS(stored_item_from_json(bad, "test"), IoError);
}

TEST_CASE("JSON loading separates config and artifact failures") {
    TempDir dir("qmri_json");
    CHECK_THROWS_AS(load_json(dir.file("missing.json"), true), IoError);

    const std::string broken = dir.file("broken.json");
    put_bytes(broken, "{\"a\": ");
    CHECK_THROWS_AS(load_json(broken, true), ConfigError);
    CHECK_THROWS_AS(load_json(broken, false), IoError);

    const std::string ok = dir.file("ok.json");
    save_json(ok, nlohmann::json{{"a", 1}});
    CHECK(load_json(ok, false).at("a") == 1);
    CHECK(read_bytes(ok).back() == '\n');
}

TEST_CASE("run configs parse with defaults and reject typos") {
    using nlohmann::json;
    const RunConfig d = parse_run_config(json::object());
    CHECK(d.n_items == 200);
    CHECK(d.snr == 50.0);
    CHECK(d.train.mode == TrainMode::MultiAcquisition);
    CHECK(d.dataset_mode == TrainMode::MultiAcquisition);
    CHECK(d.experiment_id == 1);

    const RunConfig rc = parse_run_config(json::parse(R"({
        "phantom": {"width": 32, "height": 24, "n_items": 10},
        "protocols": {
            "input": {"te_range": [5, 40], "tr_range": [30, 90], "fa_range": [10, 70]},
            "output": {"n_contrasts": 6}
        },
        "noise": {"snr": 25},
        "train": {"mode": "synthesis-loss", "lr": 0.01, "epochs": 5, "seed": 3},
        "experiment": {"id": 4, "n_slices": 8, "n_train_items": 12}
    })"));
    CHECK(rc.phantom.width == 32);
    CHECK(rc.phantom.height == 24);
    CHECK(rc.n_items == 10);
    CHECK(rc.input_dist.te_range_ms[1] == 40.0);
    CHECK(rc.n_output_contrasts == 6);
    CHECK(rc.snr == 25.0);
    CHECK(rc.train.mode == TrainMode::SynthesisLoss);
    CHECK(rc.dataset_mode == TrainMode::SynthesisLoss);
    CHECK(rc.train.learning_rate == 0.01);
    CHECK(rc.experiment_id == 4);
    CHECK(rc.n_train_items == 12);

    // protocols.mode decouples the dataset shape from the training mode.
    const RunConfig over = parse_run_config(json::parse(
        R"({"protocols": {"mode": "fixed-acquisition"}, "train": {"mode": "multi-acquisition"}})"));
    CHECK(over.dataset_mode == TrainMode::FixedAcquisition);
    CHECK(over.train.mode == TrainMode::MultiAcquisition);

    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"phantoms": {}})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"phantom": {"widht": 32}})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"train": {"rate": 1}})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"noise": {"sigma": 1}})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"experiment": {"slices": 1}})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(
                        json::parse(R"({"protocols": {"input": {"n_contrasts": 5}}})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"phantom": 3})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"([1, 2])")), ConfigError);
}

TEST_CASE("run configs enforce value bounds") {
    using nlohmann::json;
    const auto bad = [](const char* text) {
        CHECK_THROWS_AS(parse_run_config(json::parse(text)), ConfigError);
    };
    bad(R"({"phantom": {"width": 4}})");
    bad(R"({"phantom": {"n_items": 0}})");
    bad(R"({"train": {"lr": 0}})");
    bad(R"({"train": {"batch": 0}})");
    bad(R"({"train": {"epochs": 0}})");
    bad(R"({"train": {"mode": "supervised"}})");
    bad(R"({"train": {"lr": "fast"}})");
    bad(R"({"noise": {"snr": 0}})");
    bad(R"({"experiment": {"id": 5}})");
    bad(R"({"experiment": {"n_slices": 0}})");
    bad(R"({"experiment": {"perturbation_deg": -1}})");
    bad(R"({"protocols": {"input": {"te_range": [40, 5]}}})");
    bad(R"({"protocols": {"input": {"te_range": [90, 95], "tr_range": [30, 80]}}})");
    bad(R"({"protocols": {"input": {"fa_range": [0, 90]}}})");
    bad(R"({"protocols": {"output": {"n_contrasts": 0}}})");
    bad(R"({"protocols": {"input": {"te_range": [5]}}})");
}

TEST_CASE("the dataset shape follows the configured mode") {
    using nlohmann::json;
    const SimulateConfig multi =
        simulate_config_from(parse_run_config(json::parse(R"({"train": {"mode": "multi-acquisition"}})")));
    CHECK_FALSE(multi.fixed_input);
    CHECK_FALSE(multi.outputs_are_inputs);
    CHECK(multi.noisy_targets);

    const SimulateConfig fixed =
        simulate_config_from(parse_run_config(json::parse(R"({"train": {"mode": "fixed-acquisition"}})")));
    CHECK(fixed.fixed_input);
    CHECK(fixed.outputs_are_inputs);

    const SimulateConfig synth =
        simulate_config_from(parse_run_config(json::parse(R"({"train": {"mode": "synthesis-loss"}})")));
    CHECK(synth.fixed_input);
    CHECK_FALSE(synth.outputs_are_inputs);
    CHECK(synth.noisy_targets);
}

TEST_CASE("config files load through the same validation") {
    TempDir dir("qmri_cfg");
    const std::string path = dir.file("run.json");
    put_bytes(path, R"({"noise": {"snr": 30}})");
    CHECK(load_run_config(path).snr == 30.0);
    put_bytes(path, R"({"noise": {"snr": 30})");
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir.file("absent.json")), IoError);
}
