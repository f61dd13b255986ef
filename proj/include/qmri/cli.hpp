#pragma once

#include <cstdint>
#include <string>

namespace qmri {

// Command entry points. They throw the typed errors from errors.hpp; the
// run_cli wrapper maps those to exit codes (2 config, 3 I/O, 4 validation,
// 5 divergence).

void cmd_simulate(const std::string& config_path, std::uint64_t seed,
                  const std::string& out_dir, bool overwrite);

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_path, const std::uint64_t* seed_override,
               bool overwrite);

void cmd_fit(const std::string& method, const std::string& input_path,
             const std::string& protocol_path, const std::string& model_path,
             const std::string& out_path, bool overwrite);

void cmd_synth(const std::string& props_path, const std::string& protocol_path,
               const std::string& out_path, bool overwrite);

void cmd_experiment(const std::string& config_path, const std::uint32_t* id_override,
                    const std::uint64_t* seed_override, const std::string& out_dir,
                    bool overwrite);

int run_cli(int argc, const char* const* argv);

}  // namespace qmri
