#include "qmri/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "qmri/errors.hpp"

namespace qmri {

namespace {

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double scale01(double v, const double range[2]) { return (v - range[0]) / (range[1] - range[0]); }

}  // namespace

std::size_t MlpModel::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
}

std::uint32_t mlp_input_size(bool include_phi_in, std::uint32_t echoes) {
    return echoes + (include_phi_in ? 4 + echoes : 0);
}

MlpModel make_mlp(const std::vector<std::uint32_t>& hidden, bool include_phi_in,
                  std::uint32_t echoes, RandomStream& rng) {
    if (echoes == 0) throw ConfigError("model needs at least one echo");
    MlpModel m;
    m.include_phi_in = include_phi_in;
    m.echoes = echoes;
    m.layer_sizes.push_back(mlp_input_size(include_phi_in, echoes));
    for (std::uint32_t h : hidden) {
        if (h == 0) throw ConfigError("hidden layer size must be positive");
        m.layer_sizes.push_back(h);
    }
    m.layer_sizes.push_back(3);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        const std::uint32_t in = m.layer_sizes[l];
        const std::uint32_t out = m.layer_sizes[l + 1];
        Eigen::MatrixXd w(out, in);
        const double limit = std::sqrt(6.0 / static_cast<double>(in));
        for (std::uint32_t r = 0; r < out; ++r)
            for (std::uint32_t c = 0; c < in; ++c) w(r, c) = rng.uniform(-limit, limit);
        m.weights.push_back(std::move(w));
        m.biases.push_back(Eigen::VectorXd::Zero(out));
    }
    return m;
}

std::vector<double> protocol_features(const MlpModel& model, const MultiechoSession& session) {
    if (session.echoes() != model.echoes)
        throw ConfigError("session echo count does not match model");
    const auto& fr = model.feature_ranges;
    std::vector<double> f;
    f.reserve(4 + model.echoes);
    const double fa_rad = session.fa_deg() * kPi / 180.0;
    f.push_back(scale01(session.tr_ms(), fr.tr_ms));
    f.push_back(scale01(session.fa_deg(), fr.fa_deg));
    f.push_back(std::sin(fa_rad));
    f.push_back(std::cos(fa_rad));
    for (const auto& e : session.protocol.entries) f.push_back(scale01(e.te_ms, fr.te_ms));
    return f;
}

double first_echo_scale(const ContrastStack& stack, const std::vector<std::uint8_t>* foreground) {
    const std::size_t n = static_cast<std::size_t>(stack.width) * stack.height;
    if (foreground && foreground->size() != n)
        throw ConfigError("foreground mask size does not match stack");
    double sum = 0.0;
    std::size_t count = 0;
    if (foreground) {
        for (std::size_t v = 0; v < n; ++v) {
            if (!(*foreground)[v]) continue;
            sum += stack.intensities[v];
            ++count;
        }
    } else {
        double peak = 0.0;
        for (std::size_t v = 0; v < n; ++v) peak = std::max(peak, std::abs(stack.intensities[v]));
        const double thresh = 1e-12 * peak;
        for (std::size_t v = 0; v < n; ++v) {
            if (std::abs(stack.intensities[v]) <= thresh) continue;
            sum += stack.intensities[v];
            ++count;
        }
    }
    if (count == 0 || sum <= 0.0)
        throw std::domain_error("cannot normalize a stack with no signal");
    return sum / static_cast<double>(count);
}

Eigen::MatrixXd stack_features(const MlpModel& model, const ContrastStack& stack,
                               const std::vector<std::uint8_t>* foreground) {
    if (stack.channels() != model.echoes)
        throw ConfigError("stack channel count does not match model echoes");
    const std::size_t n = static_cast<std::size_t>(stack.width) * stack.height;
    const double scale = first_echo_scale(stack, foreground);
    Eigen::MatrixXd feat(model.input_size(), static_cast<Eigen::Index>(n));
    for (std::uint32_t c = 0; c < model.echoes; ++c) {
        const double* chan = stack.intensities.data() + static_cast<std::size_t>(c) * n;
        for (std::size_t v = 0; v < n; ++v)
            feat(c, static_cast<Eigen::Index>(v)) = chan[v] / scale;
    }
    if (model.include_phi_in) {
        MultiechoSession session{stack.protocol};
        const auto pf = protocol_features(model, session);
        for (std::size_t k = 0; k < pf.size(); ++k)
            feat.row(static_cast<Eigen::Index>(model.echoes + k)).setConstant(pf[k]);
    }
    return feat;
}

Eigen::MatrixXd mlp_raw_output(const MlpModel& model, const Eigen::MatrixXd& features) {
    if (features.rows() != static_cast<Eigen::Index>(model.input_size()))
        throw ConfigError("feature rows do not match model input size");
    Eigen::MatrixXd h = features;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        Eigen::MatrixXd a = (model.weights[l] * h).colwise() + model.biases[l];
        if (l + 1 < model.weights.size())
            h = a.unaryExpr([](double x) { return softplus(x); });
        else
            h = std::move(a);
    }
    return h;
}

TissueProperties decode_output(const MlpModel& model, const Eigen::Vector3d& raw) {
    const auto& r = model.output_ranges;
    TissueProperties p;
    p.t1_ms = r.t1_ms[0] + (r.t1_ms[1] - r.t1_ms[0]) * sigmoid(raw(0));
    p.t2s_ms = r.t2s_ms[0] + (r.t2s_ms[1] - r.t2s_ms[0]) * sigmoid(raw(1));
    p.pd = r.pd[0] + (r.pd[1] - r.pd[0]) * sigmoid(raw(2));
    return p;
}

TissueProperties forward(const MlpModel& model, const Eigen::VectorXd& features) {
    Eigen::MatrixXd raw = mlp_raw_output(model, features);
    return decode_output(model, Eigen::Vector3d(raw.col(0)));
}

PropertyMap mlp_estimate(const MlpModel& model, const ContrastStack& stack,
                         const std::vector<std::uint8_t>* foreground) {
    const Eigen::MatrixXd feat = stack_features(model, stack, foreground);
    const Eigen::MatrixXd raw = mlp_raw_output(model, feat);
    PropertyMap out;
    out.width = stack.width;
    out.height = stack.height;
    out.voxels.resize(static_cast<std::size_t>(raw.cols()));
    for (Eigen::Index v = 0; v < raw.cols(); ++v)
        out.voxels[static_cast<std::size_t>(v)] = decode_output(model, Eigen::Vector3d(raw.col(v)));
    return out;
}

std::uint64_t model_checksum(const MlpModel& model) {
    // FNV-1a over the parameter bytes in serialization order.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const double* data, std::size_t n) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        mix(model.weights[l].data(), static_cast<std::size_t>(model.weights[l].size()));
        mix(model.biases[l].data(), static_cast<std::size_t>(model.biases[l].size()));
    }
    return h;
}

namespace {

using nlohmann::json;

json ranges_json(const double r[2]) { return json::array({r[0], r[1]}); }

void read_range(const json& j, const char* key, double out[2]) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw IoError(std::string("bad range for ") + key);
    out[0] = a[0].get<double>();
    out[1] = a[1].get<double>();
}

}  // namespace

void save_model(const std::string& path, const MlpModel& model) {
    json header;
    header["format_version"] = 1;
    header["layer_sizes"] = model.layer_sizes;
    header["include_phi_in"] = model.include_phi_in;
    header["echoes"] = model.echoes;
    header["activation"] = "softplus";
    header["output_ranges"] = {{"t1_ms", ranges_json(model.output_ranges.t1_ms)},
                               {"t2s_ms", ranges_json(model.output_ranges.t2s_ms)},
                               {"pd", ranges_json(model.output_ranges.pd)}};
    header["feature_ranges"] = {{"te_ms", ranges_json(model.feature_ranges.te_ms)},
                                {"tr_ms", ranges_json(model.feature_ranges.tr_ms)},
                                {"fa_deg", ranges_json(model.feature_ranges.fa_deg)}};
    header["trained_mode"] = model.trained_mode;
    if (!model.trained_phi_in.empty()) {
        json entries = json::array();
        for (const auto& e : model.trained_phi_in)
            entries.push_back({{"tr_ms", e.tr_ms}, {"te_ms", e.te_ms}, {"fa_deg", e.fa_deg}});
        header["trained_phi_in"] = entries;
    }
    header["parameter_count"] = model.parameter_count();
    const std::string htext = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write("QMM1", 4);
        const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
        f.write(reinterpret_cast<const char*>(&hlen), 4);
        f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
        for (std::size_t l = 0; l < model.weights.size(); ++l) {
            f.write(reinterpret_cast<const char*>(model.weights[l].data()),
                    static_cast<std::streamsize>(sizeof(double) * model.weights[l].size()));
            f.write(reinterpret_cast<const char*>(model.biases[l].data()),
                    static_cast<std::streamsize>(sizeof(double) * model.biases[l].size()));
        }
        if (!f) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move " + tmp + " to " + path);
}

MlpModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "QMM1", 4) != 0) throw IoError(path + ": not a model file");
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f || hlen == 0 || hlen > (1u << 24)) throw IoError(path + ": bad model header length");
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    if (!f) throw IoError(path + ": truncated model header");

    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid model header: " + e.what());
    }
    MlpModel m;
    try {
        if (header.at("format_version").get<int>() != 1)
            throw IoError(path + ": unsupported model format version");
        m.layer_sizes = header.at("layer_sizes").get<std::vector<std::uint32_t>>();
        m.include_phi_in = header.at("include_phi_in").get<bool>();
        m.echoes = header.at("echoes").get<std::uint32_t>();
        read_range(header.at("output_ranges"), "t1_ms", m.output_ranges.t1_ms);
        read_range(header.at("output_ranges"), "t2s_ms", m.output_ranges.t2s_ms);
        read_range(header.at("output_ranges"), "pd", m.output_ranges.pd);
        read_range(header.at("feature_ranges"), "te_ms", m.feature_ranges.te_ms);
        read_range(header.at("feature_ranges"), "tr_ms", m.feature_ranges.tr_ms);
        read_range(header.at("feature_ranges"), "fa_deg", m.feature_ranges.fa_deg);
        m.trained_mode = header.value("trained_mode", std::string());
        if (header.contains("trained_phi_in")) {
            for (const auto& e : header.at("trained_phi_in")) {
                AcquisitionParams a;
                a.tr_ms = e.at("tr_ms").get<double>();
                a.te_ms = e.at("te_ms").get<double>();
                a.fa_deg = e.at("fa_deg").get<double>();
                m.trained_phi_in.push_back(a);
            }
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid model header: " + e.what());
    }
    if (m.layer_sizes.size() < 2 || m.layer_sizes.back() != 3)
        throw IoError(path + ": malformed layer sizes");
    if (m.layer_sizes.front() != mlp_input_size(m.include_phi_in, m.echoes))
        throw IoError(path + ": input size inconsistent with echo count");

    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        Eigen::MatrixXd w(m.layer_sizes[l + 1], m.layer_sizes[l]);
        Eigen::VectorXd b(m.layer_sizes[l + 1]);
        f.read(reinterpret_cast<char*>(w.data()),
               static_cast<std::streamsize>(sizeof(double) * w.size()));
        f.read(reinterpret_cast<char*>(b.data()),
               static_cast<std::streamsize>(sizeof(double) * b.size()));
        if (!f) throw IoError(path + ": truncated model payload");
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    f.peek();
    if (!f.eof()) throw IoError(path + ": trailing bytes after model payload");
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        if (!m.weights[l].allFinite() || !m.biases[l].allFinite())
            throw IoError(path + ": non-finite model parameters");
    }
    return m;
}

}  // namespace qmri
