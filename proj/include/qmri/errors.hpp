#pragma once

#include <stdexcept>
#include <string>

namespace qmri {

// Exit-code taxonomy used by the CLI: 2 config, 3 I/O, 4 validation,
// 5 numeric divergence.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, int epoch)
        : std::runtime_error(what), epoch(epoch) {}
    int epoch = -1;
};

}  // namespace qmri
