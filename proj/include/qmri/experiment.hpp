#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmri/run_config.hpp"

namespace qmri {

struct CsvRow {
    std::uint32_t experiment_id = 0;
    std::uint32_t slice_id = 0;
    std::string model;
    std::string metric;
    double value = 0.0;
};

// Normalized-difference raster destined for PGM export.
struct DifferenceMap {
    std::string name;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<double> values;
    double lo = 0.0;
    double hi = 0.0;
};

struct ExperimentResult {
    std::uint32_t id = 0;
    std::uint64_t seed = 0;
    std::vector<CsvRow> rows;
    nlohmann::json summary;
    std::vector<DifferenceMap> maps;
};

// Full harness for one experiment: simulates training data, trains the two
// compared estimators, simulates held-out test slices, and evaluates.
// Deterministic for a given config and seed.
//   1: property estimation on the fixed baseline session
//   2: robustness to perturbed input flip angle
//   3: synthesis of random unseen contrasts
//   4: synthesis-target separation ablation
ExperimentResult run_experiment(std::uint32_t id, const RunConfig& rc, std::uint64_t seed);

// CSV bytes for the result rows, header included; formatting is
// byte-deterministic.
std::string experiment_csv(const ExperimentResult& result);

// Writes results.csv, summary.json, and (optionally) the difference-map
// rasters with their window sidecars into out_dir.
void write_experiment_artifacts(const ExperimentResult& result, const std::string& out_dir,
                                bool overwrite, bool emit_maps);

// Thread budget for slice-parallel evaluation: QMRI_THREADS caps it, and it
// never exceeds the hardware concurrency.
unsigned thread_budget();

}  // namespace qmri
