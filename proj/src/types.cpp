#include "qmri/types.hpp"

#include <cmath>
#include <sstream>

namespace qmri {

namespace {

void check(Violations& out, bool ok, const std::string& path, const std::string& msg) {
    if (!ok) out.push_back({path, msg});
}

bool finite(double v) { return std::isfinite(v); }

void validate_into(Violations& out, const TissueProperties& p, const std::string& prefix) {
    check(out, finite(p.t1_ms) && p.t1_ms > 0.0, prefix + "t1_ms", "t1_ms > 0 required");
    check(out, finite(p.t2s_ms) && p.t2s_ms > 0.0, prefix + "t2s_ms", "t2s_ms > 0 required");
    check(out, finite(p.pd) && p.pd > 0.0 && p.pd <= 1.0, prefix + "pd", "pd in (0, 1] required");
}

void validate_into(Violations& out, const AcquisitionParams& a, const std::string& prefix) {
    check(out, finite(a.tr_ms) && a.tr_ms > 0.0, prefix + "tr_ms", "tr_ms > 0 required");
    check(out, finite(a.te_ms) && a.te_ms > 0.0, prefix + "te_ms", "te_ms > 0 required");
    check(out, finite(a.te_ms) && finite(a.tr_ms) && a.te_ms < a.tr_ms, prefix + "te_ms",
          "te_ms < tr_ms required");
    check(out, finite(a.fa_deg) && a.fa_deg > 0.0 && a.fa_deg < 180.0, prefix + "fa_deg",
          "fa_deg in (0, 180) required");
}

void validate_into(Violations& out, const Protocol& p, const std::string& prefix) {
    check(out, !p.entries.empty(), prefix + "entries", "protocol must be non-empty");
    for (std::size_t i = 0; i < p.entries.size(); ++i) {
        std::ostringstream path;
        path << prefix << "entries[" << i << "].";
        validate_into(out, p.entries[i], path.str());
    }
}

}  // namespace

std::vector<double> MultiechoSession::te_values() const {
    std::vector<double> te;
    te.reserve(protocol.size());
    for (const auto& e : protocol.entries) te.push_back(e.te_ms);
    return te;
}

Violations validate(const TissueProperties& p) {
    Violations out;
    validate_into(out, p, "");
    return out;
}

Violations validate(const AcquisitionParams& a) {
    Violations out;
    validate_into(out, a, "");
    return out;
}

Violations validate(const Protocol& p) {
    Violations out;
    validate_into(out, p, "");
    return out;
}

Violations validate(const MultiechoSession& s) {
    Violations out;
    validate_into(out, s.protocol, "protocol.");
    if (s.protocol.entries.empty()) return out;
    const auto& e = s.protocol.entries;
    for (std::size_t i = 1; i < e.size(); ++i) {
        std::ostringstream path;
        path << "protocol.entries[" << i << "].";
        check(out, e[i].tr_ms == e[0].tr_ms, path.str() + "tr_ms",
              "all session entries must share tr_ms");
        check(out, e[i].fa_deg == e[0].fa_deg, path.str() + "fa_deg",
              "all session entries must share fa_deg");
        check(out, e[i].te_ms > e[i - 1].te_ms, path.str() + "te_ms",
              "te_ms values must be strictly increasing");
    }
    return out;
}

Violations validate(const PropertyMap& m) {
    Violations out;
    check(out, m.width > 0 && m.height > 0, "width", "dimensions must be positive");
    check(out, m.voxels.size() == static_cast<std::size_t>(m.width) * m.height, "voxels",
          "raster length must equal width*height");
    for (std::size_t i = 0; i < m.voxels.size(); ++i) {
        Violations v;
        validate_into(v, m.voxels[i], "");
        if (!v.empty()) {
            std::ostringstream path;
            path << "voxels[" << i << "]." << v.front().path;
            out.push_back({path.str(), v.front().message});
            if (out.size() > 32) {
                out.push_back({"voxels", "further violations suppressed"});
                break;
            }
        }
    }
    return out;
}

Violations validate(const ContrastStack& s) {
    Violations out;
    check(out, s.width > 0 && s.height > 0, "width", "dimensions must be positive");
    validate_into(out, s.protocol, "protocol.");
    check(out,
          s.intensities.size() ==
              static_cast<std::size_t>(s.width) * s.height * s.protocol.size(),
          "intensities", "raster length must equal width*height*channels");
    for (std::size_t i = 0; i < s.intensities.size(); ++i) {
        if (!std::isfinite(s.intensities[i]) || (!s.noisy && s.intensities[i] < 0.0)) {
            std::ostringstream path;
            path << "intensities[" << i << "]";
            out.push_back({path.str(), s.noisy ? "intensity must be finite"
                                               : "noiseless intensity must be finite and >= 0"});
            break;
        }
    }
    return out;
}

std::string describe(const Violations& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << "; ";
        os << v[i].path << ": " << v[i].message;
    }
    return os.str();
}

}  // namespace qmri
