#include "qmri/dictionary.hpp"

#include <cmath>
#include <stdexcept>

#include "qmri/errors.hpp"
#include "qmri/flash.hpp"

namespace qmri {

std::vector<double> log_grid(double lo, double hi, std::uint32_t points) {
    if (!(lo > 0.0 && hi > lo) || points == 0) {
        throw ConfigError("log_grid: need 0 < lo < hi and points > 0");
    }
    std::vector<double> g(points);
    if (points == 1) {
        g[0] = lo;
        return g;
    }
    const double step = (std::log(hi) - std::log(lo)) / (points - 1);
    for (std::uint32_t i = 0; i < points; ++i) g[i] = std::exp(std::log(lo) + step * i);
    // Pin both endpoints: exp(log(x)) need not round back to x.
    g.front() = lo;
    g.back() = hi;
    return g;
}

std::vector<double> default_t1_grid() { return log_grid(200.0, 3000.0, 128); }
std::vector<double> default_t2s_grid() { return log_grid(5.0, 200.0, 128); }

Dictionary build_dictionary(const Protocol& protocol, const std::vector<double>& t1_grid,
                            const std::vector<double>& t2s_grid, std::size_t max_entries) {
    if (!is_valid(validate(protocol))) {
        throw std::domain_error("build_dictionary: invalid protocol: " +
                                describe(validate(protocol)));
    }
    if (t1_grid.empty() || t2s_grid.empty()) {
        throw ConfigError("build_dictionary: grids must be non-empty");
    }
    const std::size_t entries = t1_grid.size() * t2s_grid.size() * protocol.size();
    if (entries > max_entries) {
        throw ConfigError("build_dictionary: " + std::to_string(entries) +
                          " entries exceed the cap of " + std::to_string(max_entries));
    }
    Dictionary dict;
    dict.protocol = protocol;
    dict.atoms.reserve(t1_grid.size() * t2s_grid.size());
    for (double t1 : t1_grid) {
        for (double t2s : t2s_grid) {
            DictionaryAtom atom;
            atom.t1_ms = t1;
            atom.t2s_ms = t2s;
            atom.signal_shape.reserve(protocol.size());
            const TissueProperties p{t1, t2s, 1.0};
            for (const auto& phi : protocol.entries) {
                atom.signal_shape.push_back(flash_signal(p, phi));
            }
            dict.atoms.push_back(std::move(atom));
        }
    }
    return dict;
}

FitResult dictionary_fit(const ContrastStack& stack, const Dictionary& dict) {
    if (stack.protocol.size() != dict.protocol.size()) {
        throw ValidationError("dictionary_fit: stack/dictionary protocol size mismatch");
    }
    for (std::size_t k = 0; k < dict.protocol.size(); ++k) {
        const auto& a = stack.protocol[k];
        const auto& b = dict.protocol[k];
        if (a.tr_ms != b.tr_ms || a.te_ms != b.te_ms || a.fa_deg != b.fa_deg) {
            throw ValidationError("dictionary_fit: stack protocol differs from dictionary");
        }
    }

    const std::size_t n = stack.voxel_count();
    const std::size_t channels = stack.channels();

    // Cache <a, a> per atom.
    std::vector<double> atom_norm2(dict.atoms.size());
    for (std::size_t a = 0; a < dict.atoms.size(); ++a) {
        double s = 0.0;
        for (double v : dict.atoms[a].signal_shape) s += v * v;
        atom_norm2[a] = s;
    }

    FitResult result;
    result.properties = PropertyMap(stack.width, stack.height);
    result.residual_norm.resize(n);
    result.detail.resize(n);
    result.converged.assign(n, 1);

    std::vector<double> signal(channels);
    for (std::size_t v = 0; v < n; ++v) {
        double signal_norm2 = 0.0;
        for (std::size_t k = 0; k < channels; ++k) {
            signal[k] = stack.intensities[k * n + v];
            signal_norm2 += signal[k] * signal[k];
        }
        if (signal_norm2 == 0.0) {
            // Degenerate voxel: nothing to project, clamp PD to the floor.
            result.properties.voxels[v] = {dict.atoms[0].t1_ms, dict.atoms[0].t2s_ms,
                                           kBackgroundPd};
            result.residual_norm[v] = 0.0;
            result.detail[v] = 0;
            result.converged[v] = 0;
            continue;
        }

        double best_res = 0.0;
        double best_pd = kBackgroundPd;
        std::size_t best_atom = 0;
        bool first = true;
        for (std::size_t a = 0; a < dict.atoms.size(); ++a) {
            const auto& shape = dict.atoms[a].signal_shape;
            double dot = 0.0;
            for (std::size_t k = 0; k < channels; ++k) dot += signal[k] * shape[k];
            double pd = dot / atom_norm2[a];
            if (!(pd > kBackgroundPd)) pd = kBackgroundPd;
            if (pd > 1.0) pd = 1.0;
            double res = 0.0;
            for (std::size_t k = 0; k < channels; ++k) {
                const double r = signal[k] - pd * shape[k];
                res += r * r;
            }
            if (first || res < best_res) {
                first = false;
                best_res = res;
                best_pd = pd;
                best_atom = a;
            }
        }

        result.properties.voxels[v] = {dict.atoms[best_atom].t1_ms,
                                       dict.atoms[best_atom].t2s_ms, best_pd};
        result.residual_norm[v] = std::sqrt(best_res);
        result.detail[v] = static_cast<std::uint32_t>(best_atom);
    }
    return result;
}

}  // namespace qmri
