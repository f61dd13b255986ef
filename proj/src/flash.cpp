#include "qmri/flash.hpp"

#include <cmath>
#include <stdexcept>

namespace qmri {

namespace {

inline double deg2rad(double deg) { return deg * (kPi / 180.0); }

void require_valid(const TissueProperties& p, const AcquisitionParams& phi) {
    if (!is_valid(validate(p))) {
        throw std::domain_error("flash: invalid tissue properties: " + describe(validate(p)));
    }
    if (!is_valid(validate(phi))) {
        throw std::domain_error("flash: invalid acquisition params: " + describe(validate(phi)));
    }
}

}  // namespace

double flash_signal_shape(const TissueProperties& p, const AcquisitionParams& phi) {
    require_valid(p, phi);
    const double a = deg2rad(phi.fa_deg);
    const double e1 = std::exp(-phi.tr_ms / p.t1_ms);
    const double decay = std::exp(-phi.te_ms / p.t2s_ms);
    return std::sin(a) * decay * (1.0 - e1) / (1.0 - std::cos(a) * e1);
}

double flash_signal(const TissueProperties& p, const AcquisitionParams& phi) {
    return p.pd * flash_signal_shape(p, phi);
}

SignalJacobian flash_jacobian(const TissueProperties& p, const AcquisitionParams& phi) {
    require_valid(p, phi);
    const double a = deg2rad(phi.fa_deg);
    const double s = std::sin(a);
    const double c = std::cos(a);
    const double e1 = std::exp(-phi.tr_ms / p.t1_ms);
    const double decay = std::exp(-phi.te_ms / p.t2s_ms);
    const double denom = 1.0 - c * e1;
    const double shape = s * decay * (1.0 - e1) / denom;

    SignalJacobian j;
    j.dy_dpd = shape;
    // d/dT2*: only the echo decay depends on T2*.
    j.dy_dt2s = p.pd * shape * phi.te_ms / (p.t2s_ms * p.t2s_ms);
    // d/dT1 via dE1/dT1 = E1*TR/T1^2 and d/dE1[(1-E1)/(1-c*E1)] = (c-1)/denom^2.
    const double de1_dt1 = e1 * phi.tr_ms / (p.t1_ms * p.t1_ms);
    j.dy_dt1 = p.pd * s * decay * (c - 1.0) / (denom * denom) * de1_dt1;
    return j;
}

ContrastStack flash_signal_batch(const PropertyMap& map, const Protocol& protocol) {
    if (!is_valid(validate(map))) {
        throw std::domain_error("flash_signal_batch: invalid map: " + describe(validate(map)));
    }
    if (!is_valid(validate(protocol))) {
        throw std::domain_error("flash_signal_batch: invalid protocol: " +
                                describe(validate(protocol)));
    }
    ContrastStack stack(map.width, map.height, protocol);
    const std::size_t n = map.size();
    for (std::size_t k = 0; k < protocol.size(); ++k) {
        const AcquisitionParams& phi = protocol[k];
        const double a = deg2rad(phi.fa_deg);
        const double s = std::sin(a);
        const double c = std::cos(a);
        double* out = stack.intensities.data() + k * n;
        for (std::size_t v = 0; v < n; ++v) {
            const TissueProperties& p = map.voxels[v];
            const double e1 = std::exp(-phi.tr_ms / p.t1_ms);
            const double decay = std::exp(-phi.te_ms / p.t2s_ms);
            // Same association as flash_signal so batch and scalar agree bitwise.
            out[v] = p.pd * (s * decay * (1.0 - e1) / (1.0 - c * e1));
        }
    }
    return stack;
}

double ernst_angle_deg(double t1_ms, double tr_ms) {
    return std::acos(std::exp(-tr_ms / t1_ms)) * (180.0 / kPi);
}

TissueProperties confound_pair(const TissueProperties& p, double tr_ms, double fa_deg,
                               double t1_factor) {
    if (t1_factor <= 0.0 || t1_factor == 1.0) {
        throw std::domain_error("confound_pair: t1_factor must be positive and != 1");
    }
    const double c = std::cos(deg2rad(fa_deg));
    const auto amplitude = [&](double t1) {
        const double e1 = std::exp(-tr_ms / t1);
        return (1.0 - e1) / (1.0 - c * e1);
    };
    TissueProperties q = p;
    q.t1_ms = p.t1_ms * t1_factor;
    q.pd = p.pd * amplitude(p.t1_ms) / amplitude(q.t1_ms);
    if (!(q.pd > 0.0 && q.pd <= 1.0)) {
        throw std::domain_error("confound_pair: matched pd leaves (0, 1]");
    }
    return q;
}

double noise_sigma(const ContrastStack& stack, double snr) {
    if (snr <= 0.0) throw std::domain_error("noise_sigma: snr must be positive");
    const std::size_t n = stack.voxel_count();
    double max_first = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        max_first = std::max(max_first, stack.intensities[v]);
    }
    if (max_first <= 0.0) {
        throw std::domain_error("noise_sigma: stack is identically zero");
    }
    const double threshold = 1e-12 * max_first;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < n; ++v) {
        if (stack.intensities[v] > threshold) {
            sum += stack.intensities[v];
            ++count;
        }
    }
    return sum / static_cast<double>(count) / snr;
}

ContrastStack add_gaussian_noise(const ContrastStack& stack, double snr, RandomStream& rng) {
    if (stack.noisy) {
        throw std::domain_error("add_gaussian_noise: stack already carries noise");
    }
    const double sigma = noise_sigma(stack, snr);
    ContrastStack out = stack;
    for (double& v : out.intensities) v += sigma * rng.normal();
    out.noisy = true;
    return out;
}

}  // namespace qmri
