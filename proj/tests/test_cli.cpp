#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "qmri/io_json.hpp"
#include "qmri/mlp.hpp"
#include "qmri/synth.hpp"
#include "qmri/volume_io.hpp"
#include "test_helpers.hpp"

using namespace qmri;
using qmri::testing::TempDir;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
}

RunResult run_qmri(const TempDir& scratch, const std::string& args) {
    const std::string out_file = scratch.file("stdout.txt");
    const std::string err_file = scratch.file("stderr.txt");
    const std::string cmd =
        std::string(QMRI_BIN) + " " + args + " >" + out_file + " 2>" + err_file;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

void expect_same_files(const std::string& dir_a, const std::string& dir_b) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir_a)) names.push_back(e.path().filename());
    REQUIRE(!names.empty());
    for (const std::string& name : names) {
        INFO("file ", name);
        REQUIRE(fs::exists(dir_b + "/" + name));
        REQUIRE(slurp(dir_a + "/" + name) == slurp(dir_b + "/" + name));
    }
}

const char* kTinyConfig = R"({
    "phantom": {"width": 16, "height": 16, "n_items": 3},
    "protocols": {"output": {"n_contrasts": 4}},
    "train": {"epochs": 2, "batch": 1024}
})";

}  // namespace

TEST_CASE("help lists every subcommand") {
    TempDir dir("qmri_cli_help");
    const RunResult r = run_qmri(dir, "--help");
    CHECK(r.code == 0);
    for (const char* sub : {"simulate", "fit", "train", "synth", "experiment"})
        CHECK(contains(r.out, sub));
    CHECK(run_qmri(dir, "").code != 0);
    CHECK(run_qmri(dir, "frobnicate").code != 0);
    CHECK(run_qmri(dir, "simulate").code != 0);  // --out is required
}

TEST_CASE("simulate, train, fit, and synth run end to end" * doctest::timeout(600)) {
    TempDir dir("qmri_cli_e2e");
    const std::string cfg = dir.file("run.json");
    spit(cfg, kTinyConfig);
    const std::string data = dir.file("data");

    const RunResult sim =
        run_qmri(dir, "simulate --config " + cfg + " --seed 5 --out " + data);
    REQUIRE(sim.code == 0);
    CHECK(contains(sim.out, "wrote 3 items"));
    for (const char* name :
         {"dataset.json", "item_0000.json", "item_0000_gt.qmv", "item_0000_input.qmv",
          "item_0000_output.qmv", "item_0002_output.qmv"})
        CHECK(std::filesystem::exists(data + "/" + std::string(name)));

    // Refuses to clobber, then replaces on request.
    const RunResult again =
        run_qmri(dir, "simulate --config " + cfg + " --seed 5 --out " + data);
    CHECK(again.code == 3);
    CHECK(contains(again.err, "--overwrite"));
    CHECK(run_qmri(dir, "simulate --config " + cfg + " --seed 5 --out " + data +
                            " --overwrite")
              .code == 0);

    // Identical seeds give byte-identical datasets; a new seed does not.
    const std::string data_b = dir.file("data_b");
    REQUIRE(run_qmri(dir, "simulate --config " + cfg + " --seed 5 --out " + data_b).code == 0);
    expect_same_files(data, data_b);
    const std::string data_c = dir.file("data_c");
    REQUIRE(run_qmri(dir, "simulate --config " + cfg + " --seed 6 --out " + data_c).code == 0);
    CHECK(slurp(data + "/item_0000_gt.qmv") != slurp(data_c + "/item_0000_gt.qmv"));

    const std::string model = dir.file("model.qmm");
    const RunResult tr = run_qmri(dir, "train --config " + cfg + " --data " + data +
                                           " --seed 1 --out " + model);
    REQUIRE(tr.code == 0);
    CHECK(contains(tr.out, "trained multi-acquisition model: 2 epochs"));
    REQUIRE(std::filesystem::exists(model));
    REQUIRE(std::filesystem::exists(model + ".loss.csv"));
    CHECK(contains(slurp(model + ".loss.csv"), "epoch,mean_loss\n0,"));
    const MlpModel m = load_model(model);
    CHECK(m.trained_mode == "multi-acquisition");
    CHECK(m.include_phi_in);

    // Same data and seed, same model bytes.
    const std::string model_b = dir.file("model_b.qmm");
    REQUIRE(run_qmri(dir, "train --config " + cfg + " --data " + data + " --seed 1 --out " +
                              model_b)
                .code == 0);
    CHECK(slurp(model) == slurp(model_b));
    const std::string model_c = dir.file("model_c.qmm");
    REQUIRE(run_qmri(dir, "train --config " + cfg + " --data " + data + " --seed 2 --out " +
                              model_c)
                .code == 0);
    CHECK(slurp(model) != slurp(model_c));

    // Training refuses the guard without --overwrite and a missing dataset.
    CHECK(run_qmri(dir, "train --config " + cfg + " --data " + data + " --seed 1 --out " +
                            model)
              .code == 3);
    CHECK(run_qmri(dir, "train --config " + cfg + " --data " + dir.file("nowhere") +
                            " --seed 1 --out " + dir.file("m2.qmm"))
              .code == 3);

    const std::string input = data + "/item_0000_input.qmv";
    const std::string manifest = data + "/item_0000.json";

    const std::string fit_dict = dir.file("fit_dict.qmv");
    const RunResult fd = run_qmri(dir, "fit --method dict --input " + input + " --protocol " +
                                           manifest + " --out " + fit_dict);
    REQUIRE(fd.code == 0);
    CHECK(contains(fd.out, "fit dict: 256 voxels"));
    const Volume fd_vol = read_volume(fit_dict);
    CHECK(fd_vol.channels == 3);
    CHECK((fd_vol.dims == std::vector<std::uint32_t>{16, 16}));
    const nlohmann::json fd_side = load_json(fit_dict + ".json", false);
    CHECK(fd_side.at("method") == "dict");
    CHECK(fd_side.at("voxels") == 256);

    const std::string fit_nlls = dir.file("fit_nlls.qmv");
    const RunResult fn = run_qmri(dir, "fit --method nlls --input " + input + " --protocol " +
                                           manifest + " --out " + fit_nlls);
    REQUIRE(fn.code == 0);
    const nlohmann::json fn_side = load_json(fit_nlls + ".json", false);
    CHECK(fn_side.at("mean_iterations").get<double>() >= 0.0);

    // A bare protocol file works exactly like the manifest's input protocol.
    const nlohmann::json mj = load_json(manifest, false);
    const std::string proto_only = dir.file("protocol.json");
    spit(proto_only, mj.at("input_protocol").dump());
    const std::string fit_dict2 = dir.file("fit_dict2.qmv");
    REQUIRE(run_qmri(dir, "fit --method dict --input " + input + " --protocol " + proto_only +
                              " --out " + fit_dict2)
                .code == 0);
    CHECK(slurp(fit_dict) == slurp(fit_dict2));

    CHECK(run_qmri(dir, "fit --method guess --input " + input + " --protocol " + manifest +
                            " --out " + dir.file("x.qmv"))
              .code == 2);
    CHECK(run_qmri(dir, "fit --method neural --input " + input + " --protocol " + manifest +
                            " --out " + dir.file("x.qmv"))
              .code == 2);
    CHECK(run_qmri(dir, "fit --method dict --input " + dir.file("absent.qmv") +
                            " --protocol " + manifest + " --out " + dir.file("x.qmv"))
              .code == 3);

    // Neural fit with the scanner-aware model.
    const std::string fit_neural = dir.file("fit_neural.qmv");
    const RunResult fe = run_qmri(dir, "fit --method neural --input " + input +
                                           " --protocol " + manifest + " --model " + model +
                                           " --out " + fit_neural);
    REQUIRE(fe.code == 0);
    CHECK(read_volume(fit_neural).channels == 3);

    // Synthesis from the stored ground truth matches the library exactly.
    const std::string gt = data + "/item_0000_gt.qmv";
    const std::string synth_out = dir.file("synth.qmv");
    const RunResult sy = run_qmri(dir, "synth --props " + gt + " --protocol " + manifest +
                                           " --out " + synth_out);
    REQUIRE(sy.code == 0);
    CHECK(contains(sy.out, "synthesized 4 contrasts at 16x16"));
    const PropertyMap gt_map = map_from_volume(read_volume(gt));
    const Protocol out_protocol =
        protocol_from_json(mj.at("output_protocol"), "manifest");
    const ContrastStack expect = synthesize(gt_map, out_protocol);
    const Volume got = read_volume(synth_out);
    CHECK(got.data == expect.intensities);
    CHECK_FALSE(got.mask.empty());

    CHECK(run_qmri(dir, "synth --props " + gt + " --protocol " + manifest + " --out " +
                            synth_out)
              .code == 3);

    // Dictionary fitting the noiseless synthesis lands within grid resolution.
    const std::string out_proto = dir.file("out_protocol.json");
    spit(out_proto, mj.at("output_protocol").dump());
    const std::string fit_clean = dir.file("fit_clean.qmv");
    REQUIRE(run_qmri(dir, "fit --method dict --input " + synth_out + " --protocol " +
                              out_proto + " --out " + fit_clean)
                .code == 0);
    const Volume clean = read_volume(fit_clean);
    const std::size_t n_vox = gt_map.size();
    for (std::size_t v = 0; v < n_vox; ++v) {
        if (!got.mask[v]) continue;  // synth carried the gt foreground mask
        const double t1_rel = std::abs(clean.data[v] - gt_map.voxels[v].t1_ms) /
                              gt_map.voxels[v].t1_ms;
        const double t2s_rel = std::abs(clean.data[n_vox + v] - gt_map.voxels[v].t2s_ms) /
                               gt_map.voxels[v].t2s_ms;
        CHECK(t1_rel < 0.05);
        CHECK(t2s_rel < 0.05);
    }

    // An unphysical requested contrast is a validation failure.
    const std::string bad_proto = dir.file("bad_protocol.json");
    spit(bad_proto, R"({"entries": [{"tr_ms": 37, "te_ms": 7, "fa_deg": 0}]})");
    const RunResult bad = run_qmri(dir, "synth --props " + gt + " --protocol " + bad_proto +
                                            " --out " + dir.file("bad.qmv"));
    CHECK(bad.code == 4);
    CHECK(contains(bad.err, "validation error"));
}

TEST_CASE("training modes are enforced end to end" * doctest::timeout(600)) {
    TempDir dir("qmri_cli_modes");
    const std::string multi_cfg = dir.file("multi.json");
    spit(multi_cfg, kTinyConfig);
    const std::string fixed_cfg = dir.file("fixed.json");
    spit(fixed_cfg, R"({
        "phantom": {"width": 16, "height": 16, "n_items": 3},
        "train": {"mode": "fixed-acquisition", "epochs": 2, "batch": 1024,
                  "include_phi_in": false}
    })");

    const std::string multi_data = dir.file("multi_data");
    REQUIRE(run_qmri(dir, "simulate --config " + multi_cfg + " --seed 3 --out " + multi_data)
                .code == 0);
    const std::string fixed_data = dir.file("fixed_data");
    REQUIRE(run_qmri(dir, "simulate --config " + fixed_cfg + " --seed 3 --out " + fixed_data)
                .code == 0);

    // Fixed-mode training on a varied-protocol dataset is a config error.
    CHECK(run_qmri(dir, "train --config " + fixed_cfg + " --data " + multi_data + " --out " +
                            dir.file("bad.qmm"))
              .code == 2);

    const std::string model = dir.file("fixed.qmm");
    REQUIRE(run_qmri(dir, "train --config " + fixed_cfg + " --data " + fixed_data +
                              " --seed 1 --out " + model)
                .code == 0);
    const MlpModel m = load_model(model);
    CHECK(m.trained_mode == "fixed-acquisition");
    CHECK_FALSE(m.include_phi_in);
    CHECK(m.trained_phi_in.size() == 3);

    // Matching protocol: quiet. Foreign protocol on a blind model: warned.
    const RunResult ok = run_qmri(dir, "fit --method neural --input " + fixed_data +
                                           "/item_0000_input.qmv --protocol " + fixed_data +
                                           "/item_0000.json --model " + model + " --out " +
                                           dir.file("est_ok.qmv"));
    REQUIRE(ok.code == 0);
    CHECK_FALSE(contains(ok.err, "warning"));

    const RunResult warned = run_qmri(dir, "fit --method neural --input " + multi_data +
                                               "/item_0000_input.qmv --protocol " + multi_data +
                                               "/item_0000.json --model " + model + " --out " +
                                               dir.file("est_warn.qmv"));
    REQUIRE(warned.code == 0);
    CHECK(contains(warned.err, "warning"));
    CHECK(load_json(dir.file("est_warn.qmv") + ".json", false)
              .value("protocol_mismatch_warning", false));
}

TEST_CASE("a small study runs through the experiment command" * doctest::timeout(600)) {
    TempDir dir("qmri_cli_exp");
    const std::string cfg = dir.file("exp.json");
    spit(cfg, R"({
        "phantom": {"width": 16, "height": 16},
        "protocols": {"output": {"n_contrasts": 4}},
        "train": {"epochs": 2, "batch": 1024},
        "experiment": {"id": 1, "n_slices": 2, "n_train_items": 3}
    })");

    const std::string out = dir.file("exp1");
    const RunResult r = run_qmri(dir, "experiment --config " + cfg + " --seed 0 --out " + out);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "experiment 1 artifacts written"));

    const std::string csv = slurp(out + "/results.csv");
    CHECK(contains(csv, "experiment_id,slice_id,model,metric,value\n"));
    CHECK(contains(csv, "multi-acquisition,t1_mae_ms,"));
    CHECK(contains(csv, "fixed-acquisition,synth_mae,"));

    const nlohmann::json summary = load_json(out + "/summary.json", false);
    CHECK(summary.at("experiment_id") == 1);
    CHECK(summary.at("n_slices") == 2);
    CHECK(summary.at("models").contains("multi-acquisition"));
    CHECK(summary.at("comparisons").at("proposed") == "multi-acquisition");
    CHECK(summary.at("training").at("fixed-acquisition").at("epochs") == 2);
    CHECK(std::filesystem::exists(out + "/exp1_slice0_multi-acquisition_t1_diff.pgm"));
    CHECK(std::filesystem::exists(out + "/exp1_slice0_fixed-acquisition_t1_diff.json"));

    CHECK(run_qmri(dir, "experiment --config " + cfg + " --seed 0 --out " + out).code == 3);

    // The perturbation study records each slice's actual flip angle.
    const std::string out2 = dir.file("exp2");
    REQUIRE(run_qmri(dir, "experiment --config " + cfg + " --id 2 --seed 0 --out " + out2)
                .code == 0);
    const std::string csv2 = slurp(out2 + "/results.csv");
    std::size_t fa_rows = 0;
    std::istringstream lines(csv2);
    for (std::string line; std::getline(lines, line);) {
        if (line.find(",input,fa_deg,") == std::string::npos) continue;
        ++fa_rows;
        const double fa = std::stod(line.substr(line.rfind(',') + 1));
        CHECK(fa > 0.0);
        CHECK(fa <= 40.0);
    }
    CHECK(fa_rows == 2);

    // Id 5 does not exist.
    CHECK(run_qmri(dir, "experiment --config " + cfg + " --id 5 --seed 0 --out " +
                            dir.file("exp5"))
              .code == 2);

    // A malformed thread budget is a config error.
    const std::string env_cmd = std::string("QMRI_THREADS=banana ") + QMRI_BIN +
                                " experiment --config " + cfg + " --seed 0 --out " +
                                dir.file("expx") + " >/dev/null 2>&1";
    const int status = std::system(env_cmd.c_str());
    CHECK(WEXITSTATUS(status) == 2);
}
