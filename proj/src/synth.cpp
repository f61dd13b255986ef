#include "qmri/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "qmri/errors.hpp"
#include "qmri/flash.hpp"

namespace qmri {

ContrastStack synthesize(const PropertyMap& props, const Protocol& protocol) {
    return flash_signal_batch(props, protocol);
}

namespace {

std::size_t masked_count(const std::vector<std::uint8_t>& mask, std::size_t expected) {
    if (mask.size() != expected) throw ConfigError("mask size does not match data");
    std::size_t n = 0;
    for (std::uint8_t m : mask)
        if (m) ++n;
    if (n == 0) throw ConfigError("mask selects no voxels");
    return n;
}

}  // namespace

PropertyMae mae(const PropertyMap& estimate, const PropertyMap& gold,
                const std::vector<std::uint8_t>& mask) {
    if (estimate.width != gold.width || estimate.height != gold.height)
        throw ConfigError("property map dimensions differ");
    const std::size_t n = masked_count(mask, gold.size());
    double t1 = 0.0, t2s = 0.0, pd = 0.0;
    for (std::size_t v = 0; v < gold.size(); ++v) {
        if (!mask[v]) continue;
        t1 += std::abs(estimate.voxels[v].t1_ms - gold.voxels[v].t1_ms);
        t2s += std::abs(estimate.voxels[v].t2s_ms - gold.voxels[v].t2s_ms);
        pd += std::abs(estimate.voxels[v].pd - gold.voxels[v].pd);
    }
    PropertyMae out;
    out.t1_ms = t1 / static_cast<double>(n);
    out.t2s_ms = t2s / static_cast<double>(n);
    out.pd = pd / static_cast<double>(n);
    out.pd_percent = out.pd * 100.0;
    return out;
}

double mae(const ContrastStack& estimate, const ContrastStack& gold,
           const std::vector<std::uint8_t>& mask) {
    if (estimate.width != gold.width || estimate.height != gold.height ||
        estimate.channels() != gold.channels())
        throw ConfigError("contrast stack dimensions differ");
    const std::size_t n_vox = gold.voxel_count();
    const std::size_t n = masked_count(mask, n_vox);
    double acc = 0.0;
    for (std::size_t c = 0; c < gold.channels(); ++c) {
        const double* ea = estimate.intensities.data() + c * n_vox;
        const double* ga = gold.intensities.data() + c * n_vox;
        for (std::size_t v = 0; v < n_vox; ++v) {
            if (!mask[v]) continue;
            acc += std::abs(ea[v] - ga[v]);
        }
    }
    return acc / static_cast<double>(n * gold.channels());
}

std::vector<double> mae_per_channel(const ContrastStack& estimate, const ContrastStack& gold,
                                    const std::vector<std::uint8_t>& mask) {
    if (estimate.width != gold.width || estimate.height != gold.height ||
        estimate.channels() != gold.channels())
        throw ConfigError("contrast stack dimensions differ");
    const std::size_t n_vox = gold.voxel_count();
    const std::size_t n = masked_count(mask, n_vox);
    std::vector<double> out(gold.channels(), 0.0);
    for (std::size_t c = 0; c < gold.channels(); ++c) {
        const double* ea = estimate.intensities.data() + c * n_vox;
        const double* ga = gold.intensities.data() + c * n_vox;
        double acc = 0.0;
        for (std::size_t v = 0; v < n_vox; ++v) {
            if (!mask[v]) continue;
            acc += std::abs(ea[v] - ga[v]);
        }
        out[c] = acc / static_cast<double>(n);
    }
    return out;
}

}  // namespace qmri
