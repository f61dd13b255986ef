#pragma once

#include "qmri/rng.hpp"
#include "qmri/types.hpp"

namespace qmri {

// FLASH steady-state signal model
//
//   y = PD * sin(a) * exp(-TE/T2*) * (1 - E1) / (1 - cos(a)*E1),
//   E1 = exp(-TR/T1),   a = flip angle in radians.
//
// The signal is linear in PD, strictly decreasing in TE, and maximized over
// flip angle at the Ernst angle cos(a*) = E1.

struct SignalJacobian {
    double dy_dt1 = 0.0;   // per ms
    double dy_dt2s = 0.0;  // per ms
    double dy_dpd = 0.0;   // dimensionless; equals y/pd exactly
};

// Signal at unit proton density; flash_signal is pd * this value bit-exactly.
double flash_signal_shape(const TissueProperties& p, const AcquisitionParams& phi);

double flash_signal(const TissueProperties& p, const AcquisitionParams& phi);

SignalJacobian flash_jacobian(const TissueProperties& p, const AcquisitionParams& phi);

ContrastStack flash_signal_batch(const PropertyMap& map, const Protocol& protocol);

// Flip angle maximizing the signal for given TR/T1: acos(E1) in degrees.
double ernst_angle_deg(double t1_ms, double tr_ms);

// Single-FA PD/T1 confound: with TR and FA fixed, the amplitude
// PD*(1-E1)/(1-cos(a)*E1) is all a multiecho session measures of (PD, T1).
// Returns (pd', t1' = t1*t1_factor, t2s unchanged) with the same amplitude,
// hence identical signals at every echo. Throws std::domain_error if the
// matched pd' leaves (0, 1].
TissueProperties confound_pair(const TissueProperties& p, double tr_ms, double fa_deg,
                               double t1_factor);

// Adds i.i.d. zero-mean Gaussian noise with sigma = m/snr, where m is the
// mean noiseless first-channel intensity over foreground voxels. Foreground
// is taken as intensities above 1e-12 of the first-channel maximum, which
// excludes the near-zero background proton density sentinel.
ContrastStack add_gaussian_noise(const ContrastStack& stack, double snr, RandomStream& rng);

// The sigma that add_gaussian_noise would use; throws on an all-zero stack.
double noise_sigma(const ContrastStack& stack, double snr);

}  // namespace qmri
