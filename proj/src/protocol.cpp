#include "qmri/protocol.hpp"

#include <algorithm>
#include <cmath>

#include "qmri/errors.hpp"

namespace qmri {

namespace {

void check_ranges(const ProtocolDistribution& d) {
    if (!(d.te_range_ms[0] < d.te_range_ms[1]) || !(d.tr_range_ms[0] < d.tr_range_ms[1]) ||
        !(d.fa_range_deg[0] < d.fa_range_deg[1])) {
        throw ConfigError("protocol distribution: each range needs low < high");
    }
    if (d.te_range_ms[0] <= 0.0 || d.tr_range_ms[0] <= 0.0) {
        throw ConfigError("protocol distribution: te/tr ranges must be positive");
    }
    if (d.fa_range_deg[0] <= 0.0 || d.fa_range_deg[1] >= 180.0) {
        throw ConfigError("protocol distribution: fa range must lie inside (0, 180)");
    }
    if (d.te_range_ms[0] >= d.tr_range_ms[1]) {
        throw ConfigError("protocol distribution: te low >= tr high, TE < TR unsatisfiable");
    }
    if (d.echoes_per_session == 0) {
        throw ConfigError("protocol distribution: echoes_per_session must be positive");
    }
}

double sample_te_below(const ProtocolDistribution& d, double tr, RandomStream& rng) {
    // Rejection keeps the TR marginal exactly uniform even when the TE range
    // extends past the drawn TR.
    for (;;) {
        const double te = rng.uniform(d.te_range_ms[0], d.te_range_ms[1]);
        if (te < tr) return te;
    }
}

}  // namespace

ProtocolDistribution training_input_distribution() {
    ProtocolDistribution d;
    d.mode = ProtocolDistribution::Mode::Multiecho;
    return d;
}

ProtocolDistribution training_output_distribution() {
    ProtocolDistribution d;
    d.mode = ProtocolDistribution::Mode::Independent;
    return d;
}

MultiechoSession fixed_baseline_session() {
    MultiechoSession s;
    for (double te : {7.0, 15.0, 25.0}) {
        s.protocol.entries.push_back({37.0, te, 20.0});
    }
    return s;
}

MultiechoSession sample_input_session(const ProtocolDistribution& dist, RandomStream& rng) {
    check_ranges(dist);
    if (dist.mode != ProtocolDistribution::Mode::Multiecho) {
        throw ConfigError("sample_input_session: distribution not in multiecho mode");
    }
    const double tr = rng.uniform(dist.tr_range_ms[0], dist.tr_range_ms[1]);
    const double fa = rng.uniform(dist.fa_range_deg[0], dist.fa_range_deg[1]);
    std::vector<double> tes(dist.echoes_per_session);
    for (;;) {
        for (double& te : tes) te = sample_te_below(dist, tr, rng);
        std::sort(tes.begin(), tes.end());
        if (std::adjacent_find(tes.begin(), tes.end()) == tes.end()) break;
    }
    MultiechoSession s;
    for (double te : tes) s.protocol.entries.push_back({tr, te, fa});
    return s;
}

Protocol sample_output_contrasts(const ProtocolDistribution& dist, std::uint32_t count,
                                 RandomStream& rng) {
    check_ranges(dist);
    if (dist.mode != ProtocolDistribution::Mode::Independent) {
        throw ConfigError("sample_output_contrasts: distribution not in independent mode");
    }
    if (count == 0) throw ConfigError("sample_output_contrasts: count must be positive");
    Protocol p;
    p.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const double tr = rng.uniform(dist.tr_range_ms[0], dist.tr_range_ms[1]);
        const double fa = rng.uniform(dist.fa_range_deg[0], dist.fa_range_deg[1]);
        const double te = sample_te_below(dist, tr, rng);
        p.entries.push_back({tr, te, fa});
    }
    return p;
}

MultiechoSession perturb_flip_angle(const MultiechoSession& session, double max_delta_deg,
                                    RandomStream& rng) {
    if (max_delta_deg < 0.0) {
        throw ConfigError("perturb_flip_angle: max_delta_deg must be >= 0");
    }
    MultiechoSession out = session;
    if (max_delta_deg == 0.0) return out;
    const double delta = rng.uniform(-max_delta_deg, max_delta_deg);
    // Clamp strictly inside (0, 180); the epsilon keeps sin(a) > 0.
    const double fa =
        std::clamp(session.fa_deg() + delta, 1e-6, 180.0 - 1e-6);
    for (auto& e : out.protocol.entries) e.fa_deg = fa;
    return out;
}

}  // namespace qmri
