#pragma once

#include "qmri/rng.hpp"
#include "qmri/types.hpp"

namespace qmri {

// Sampling space for acquisition protocols. Multiecho mode draws one TR and
// one FA per session with several distinct TEs; independent mode draws every
// entry on its own.
struct ProtocolDistribution {
    enum class Mode { Multiecho, Independent };

    Mode mode = Mode::Multiecho;
    double te_range_ms[2] = {5.0, 80.0};
    double tr_range_ms[2] = {30.0, 100.0};
    double fa_range_deg[2] = {5.0, 80.0};
    std::uint32_t echoes_per_session = 3;
};

// Heterogeneous training ranges: TE 5-80 ms, TR 30-100 ms, FA 5-80 deg.
ProtocolDistribution training_input_distribution();
ProtocolDistribution training_output_distribution();

// TE=[7, 15, 25] ms, TR=37 ms, FA=20 deg.
MultiechoSession fixed_baseline_session();

// Draws one session: shared TR and FA, echoes_per_session distinct TEs
// sorted ascending, each TE < TR (TE alone is rejection-resampled so the
// TR/FA marginals stay uniform).
MultiechoSession sample_input_session(const ProtocolDistribution& dist, RandomStream& rng);

// Draws `count` fully independent contrasts.
Protocol sample_output_contrasts(const ProtocolDistribution& dist, std::uint32_t count,
                                 RandomStream& rng);

// Adds a single uniform draw from [-max_delta, +max_delta] to the session's
// shared flip angle, clamped to stay inside (0, 180).
MultiechoSession perturb_flip_angle(const MultiechoSession& session, double max_delta_deg,
                                    RandomStream& rng);

}  // namespace qmri
