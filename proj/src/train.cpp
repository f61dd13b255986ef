#include "qmri/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "qmri/errors.hpp"

namespace qmri {

const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::MultiAcquisition: return "multi-acquisition";
        case TrainMode::FixedAcquisition: return "fixed-acquisition";
        case TrainMode::SynthesisLoss: return "synthesis-loss";
    }
    return "unknown";
}

TrainMode parse_train_mode(const std::string& name) {
    if (name == "multi-acquisition") return TrainMode::MultiAcquisition;
    if (name == "fixed-acquisition") return TrainMode::FixedAcquisition;
    if (name == "synthesis-loss") return TrainMode::SynthesisLoss;
    throw ConfigError("unknown training mode: " + name);
}

TrainItem strip_ground_truth(const DatasetItem& item) {
    TrainItem t;
    t.input_session = item.input_session;
    t.input_stack = item.input_stack;
    t.foreground = item.foreground;
    t.output_protocol = item.output_protocol;
    t.output_stack = item.output_stack;
    return t;
}

std::vector<TrainItem> strip_ground_truth(const std::vector<DatasetItem>& items) {
    std::vector<TrainItem> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(strip_ground_truth(item));
    return out;
}

namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;   // pre[l]: layer l pre-activation
    std::vector<Eigen::MatrixXd> post;  // post[0] = input; post[l+1] = activated
    Eigen::MatrixXd sig;                // sigmoid of raw output, 3 x B
    Eigen::MatrixXd props;              // decoded rows: t1, t2s, pd
};

void forward_cached(const MlpModel& model, const Eigen::MatrixXd& features, ForwardCache& c) {
    const std::size_t layers = model.weights.size();
    c.pre.resize(layers);
    c.post.resize(layers + 1);
    c.post[0] = features;
    for (std::size_t l = 0; l < layers; ++l) {
        c.pre[l] = (model.weights[l] * c.post[l]).colwise() + model.biases[l];
        if (l + 1 < layers)
            c.post[l + 1] = c.pre[l].unaryExpr(
                [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); });
        else
            c.post[l + 1] = c.pre[l];
    }
    const Eigen::MatrixXd& raw = c.post[layers];
    c.sig = raw.unaryExpr([](double x) { return logistic(x); });
    const auto& r = model.output_ranges;
    c.props.resize(3, raw.cols());
    c.props.row(0) = (c.sig.row(0).array() * (r.t1_ms[1] - r.t1_ms[0]) + r.t1_ms[0]).matrix();
    c.props.row(1) = (c.sig.row(1).array() * (r.t2s_ms[1] - r.t2s_ms[0]) + r.t2s_ms[0]).matrix();
    c.props.row(2) = (c.sig.row(2).array() * (r.pd[1] - r.pd[0]) + r.pd[0]).matrix();
}

// Mean squared error of synthesized vs measured intensities over the batch;
// optionally accumulates dL/d(tissue properties).
double physics_loss(const VoxelBatch& batch, const Eigen::MatrixXd& props,
                    Eigen::MatrixXd* dprops) {
    const Eigen::Index b = props.cols();
    const Eigen::Index j_count = static_cast<Eigen::Index>(batch.output_protocol.size());
    const Eigen::ArrayXd t1 = props.row(0).transpose().array();
    const Eigen::ArrayXd t2s = props.row(1).transpose().array();
    const Eigen::ArrayXd pd = props.row(2).transpose().array();
    const double norm = 1.0 / (static_cast<double>(b) * static_cast<double>(j_count));

    double sq_sum = 0.0;
    for (Eigen::Index j = 0; j < j_count; ++j) {
        const auto& phi = batch.output_protocol[static_cast<std::size_t>(j)];
        const double fa_rad = phi.fa_deg * kPi / 180.0;
        const double sa = std::sin(fa_rad);
        const double ca = std::cos(fa_rad);
        const Eigen::ArrayXd e1 = (t1.inverse() * -phi.tr_ms).exp();
        const Eigen::ArrayXd decay = (t2s.inverse() * -phi.te_ms).exp();
        const Eigen::ArrayXd denom = 1.0 - ca * e1;
        const Eigen::ArrayXd shape = sa * decay * (1.0 - e1) / denom;
        const Eigen::ArrayXd f = pd * shape;
        const Eigen::ArrayXd err = f - batch.targets.row(j).transpose().array();
        sq_sum += err.square().sum();
        if (dprops) {
            const Eigen::ArrayXd g = err * (2.0 * norm);
            const Eigen::ArrayXd dt1 =
                pd * sa * decay * (ca - 1.0) / denom.square() * e1 * phi.tr_ms / t1.square();
            const Eigen::ArrayXd dt2s = f * phi.te_ms / t2s.square();
            dprops->row(0) += (g * dt1).matrix().transpose();
            dprops->row(1) += (g * dt2s).matrix().transpose();
            dprops->row(2) += (g * shape).matrix().transpose();
        }
    }
    return sq_sum * norm;
}

void check_batch(const MlpModel& model, const VoxelBatch& batch) {
    if (batch.features.rows() != static_cast<Eigen::Index>(model.input_size()))
        throw ConfigError("batch feature rows do not match model input size");
    if (batch.targets.rows() != static_cast<Eigen::Index>(batch.output_protocol.size()))
        throw ConfigError("batch target rows do not match output protocol");
    if (batch.targets.cols() != batch.features.cols())
        throw ConfigError("batch feature and target columns differ");
    if (batch.features.cols() == 0 || batch.output_protocol.size() == 0)
        throw ConfigError("empty training batch");
}

}  // namespace

double synthesis_loss(const MlpModel& model, const VoxelBatch& batch) {
    check_batch(model, batch);
    ForwardCache cache;
    forward_cached(model, batch.features, cache);
    return physics_loss(batch, cache.props, nullptr);
}

double synthesis_loss_backward(const MlpModel& model, const VoxelBatch& batch, Gradients& grads) {
    check_batch(model, batch);
    ForwardCache cache;
    forward_cached(model, batch.features, cache);

    Eigen::MatrixXd dprops = Eigen::MatrixXd::Zero(3, batch.features.cols());
    const double loss = physics_loss(batch, cache.props, &dprops);

    // Through the range decoding: dp/du = span * sig * (1 - sig).
    const auto& r = model.output_ranges;
    Eigen::MatrixXd delta = dprops.cwiseProduct(
        cache.sig.cwiseProduct((1.0 - cache.sig.array()).matrix()));
    delta.row(0) *= r.t1_ms[1] - r.t1_ms[0];
    delta.row(1) *= r.t2s_ms[1] - r.t2s_ms[0];
    delta.row(2) *= r.pd[1] - r.pd[0];

    const std::size_t layers = model.weights.size();
    grads.weights.resize(layers);
    grads.biases.resize(layers);
    for (std::size_t l = layers; l-- > 0;) {
        grads.weights[l] = delta * cache.post[l].transpose();
        grads.biases[l] = delta.rowwise().sum();
        if (l > 0) {
            // softplus' is the logistic function of the pre-activation
            delta = (model.weights[l].transpose() * delta)
                        .cwiseProduct(cache.pre[l - 1].unaryExpr(
                            [](double x) { return logistic(x); }));
        }
    }
    return loss;
}

namespace {

bool same_protocol(const Protocol& a, const Protocol& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].tr_ms != b[i].tr_ms || a[i].te_ms != b[i].te_ms || a[i].fa_deg != b[i].fa_deg)
            return false;
    }
    return true;
}

// Each training mode implies a dataset shape; refuse silently wrong pairings.
void audit_mode(TrainMode mode, const std::vector<TrainItem>& items) {
    bool inputs_identical = true;
    bool outputs_match_input = true;
    for (const auto& item : items) {
        if (!same_protocol(item.input_session.protocol, items.front().input_session.protocol))
            inputs_identical = false;
        if (!same_protocol(item.output_protocol, item.input_session.protocol))
            outputs_match_input = false;
    }
    switch (mode) {
        case TrainMode::MultiAcquisition:
            if (inputs_identical && items.size() > 1)
                throw ConfigError(
                    "multi-acquisition training requires varied input sessions, "
                    "but every item shares one session");
            break;
        case TrainMode::FixedAcquisition:
            if (!inputs_identical)
                throw ConfigError("fixed-acquisition training requires one shared input session");
            if (!outputs_match_input)
                throw ConfigError(
                    "fixed-acquisition training requires output contrasts equal to the "
                    "input session");
            break;
        case TrainMode::SynthesisLoss:
            if (!inputs_identical)
                throw ConfigError("synthesis-loss training requires one shared input session");
            if (outputs_match_input)
                throw ConfigError(
                    "synthesis-loss training requires output contrasts beyond the input "
                    "session, but every item reuses it");
            break;
    }
}

struct ItemCache {
    Eigen::MatrixXd features;  // input_size x foreground voxels
    Eigen::MatrixXd targets;   // output contrasts x foreground voxels
    const Protocol* output_protocol = nullptr;
};

ItemCache build_item_cache(const MlpModel& model, const TrainItem& item) {
    const auto sv = validate(item.input_session);
    if (!is_valid(sv)) throw ConfigError("bad input session: " + describe(sv));
    const auto iv = validate(item.input_stack);
    if (!is_valid(iv)) throw ConfigError("bad input stack: " + describe(iv));
    const auto ov = validate(item.output_stack);
    if (!is_valid(ov)) throw ConfigError("bad output stack: " + describe(ov));
    if (!same_protocol(item.input_stack.protocol, item.input_session.protocol))
        throw ConfigError("input stack does not match its session");
    if (!same_protocol(item.output_stack.protocol, item.output_protocol))
        throw ConfigError("output stack does not match its protocol");
    const std::size_t n = item.input_stack.voxel_count();
    if (item.foreground.size() != n) throw ConfigError("foreground mask size mismatch");

    std::vector<std::size_t> fg;
    for (std::size_t v = 0; v < n; ++v)
        if (item.foreground[v]) fg.push_back(v);
    if (fg.empty()) throw ConfigError("training item has no foreground voxels");

    const Eigen::MatrixXd all = stack_features(model, item.input_stack, &item.foreground);
    ItemCache cache;
    cache.features.resize(all.rows(), static_cast<Eigen::Index>(fg.size()));
    for (std::size_t k = 0; k < fg.size(); ++k)
        cache.features.col(static_cast<Eigen::Index>(k)) =
            all.col(static_cast<Eigen::Index>(fg[k]));

    const std::size_t j_count = item.output_protocol.size();
    cache.targets.resize(static_cast<Eigen::Index>(j_count),
                         static_cast<Eigen::Index>(fg.size()));
    for (std::size_t j = 0; j < j_count; ++j) {
        const double* chan = item.output_stack.intensities.data() + j * n;
        for (std::size_t k = 0; k < fg.size(); ++k)
            cache.targets(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
                chan[fg[k]];
    }
    cache.output_protocol = &item.output_protocol;
    return cache;
}

struct AdamState {
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    std::uint64_t step = 0;

    explicit AdamState(const MlpModel& model) {
        for (std::size_t l = 0; l < model.weights.size(); ++l) {
            mw.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
            vw.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
            mb.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
            vb.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
        }
    }
};

void adam_step(MlpModel& model, const Gradients& grads, AdamState& st, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.step += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        st.mw[l] = b1 * st.mw[l] + (1.0 - b1) * grads.weights[l];
        st.vw[l] = b2 * st.vw[l] + (1.0 - b2) * grads.weights[l].cwiseProduct(grads.weights[l]);
        model.weights[l].array() -=
            lr * (st.mw[l].array() / c1) / ((st.vw[l].array() / c2).sqrt() + eps);
        st.mb[l] = b1 * st.mb[l] + (1.0 - b1) * grads.biases[l];
        st.vb[l] = b2 * st.vb[l] + (1.0 - b2) * grads.biases[l].cwiseProduct(grads.biases[l]);
        model.biases[l].array() -=
            lr * (st.mb[l].array() / c1) / ((st.vb[l].array() / c2).sqrt() + eps);
    }
}

}  // namespace

std::pair<MlpModel, TrainReport> train(const TrainConfig& config,
                                       const std::vector<TrainItem>& items) {
    if (items.empty()) throw ConfigError("training needs at least one item");
    if (config.epochs == 0) throw ConfigError("training needs at least one epoch");
    if (config.batch_voxels == 0) throw ConfigError("batch_voxels must be positive");
    if (config.contrasts_per_step == 0) throw ConfigError("contrasts_per_step must be positive");
    if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    audit_mode(config.mode, items);

    RandomStream root = seeded_rng(config.seed);
    RandomStream init_rng = root.split(1);
    RandomStream order_rng = root.split(2);

    MlpModel model = make_mlp(config.hidden, config.include_phi_in, config.echoes, init_rng);

    std::vector<ItemCache> caches;
    caches.reserve(items.size());
    for (const auto& item : items) caches.push_back(build_item_cache(model, item));

    const auto t0 = std::chrono::steady_clock::now();
    AdamState adam(model);
    Gradients grads;
    TrainReport report;

    std::vector<std::size_t> item_order(items.size());
    std::iota(item_order.begin(), item_order.end(), 0u);

    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(item_order);
        double loss_sum = 0.0;
        std::size_t voxel_sum = 0;
        for (std::size_t idx : item_order) {
            const ItemCache& cache = caches[idx];
            const std::size_t n_vox = static_cast<std::size_t>(cache.features.cols());
            std::vector<std::uint32_t> voxel_order(n_vox);
            std::iota(voxel_order.begin(), voxel_order.end(), 0u);
            order_rng.shuffle(voxel_order);

            const std::size_t j_total = cache.output_protocol->size();
            const std::size_t j_take = std::min<std::size_t>(config.contrasts_per_step, j_total);
            std::vector<std::uint32_t> contrast_ids(j_total);
            std::iota(contrast_ids.begin(), contrast_ids.end(), 0u);

            for (std::size_t start = 0; start < n_vox; start += config.batch_voxels) {
                const std::size_t b = std::min<std::size_t>(config.batch_voxels, n_vox - start);
                if (j_take < j_total) order_rng.shuffle(contrast_ids);

                VoxelBatch batch;
                batch.features.resize(cache.features.rows(), static_cast<Eigen::Index>(b));
                for (std::size_t k = 0; k < b; ++k)
                    batch.features.col(static_cast<Eigen::Index>(k)) =
                        cache.features.col(voxel_order[start + k]);
                batch.output_protocol.entries.reserve(j_take);
                batch.targets.resize(static_cast<Eigen::Index>(j_take),
                                     static_cast<Eigen::Index>(b));
                for (std::size_t jj = 0; jj < j_take; ++jj) {
                    const std::uint32_t j = contrast_ids[jj];
                    batch.output_protocol.entries.push_back((*cache.output_protocol)[j]);
                    for (std::size_t k = 0; k < b; ++k)
                        batch.targets(static_cast<Eigen::Index>(jj),
                                      static_cast<Eigen::Index>(k)) =
                            cache.targets(j, voxel_order[start + k]);
                }

                const double loss = synthesis_loss_backward(model, batch, grads);
                if (!std::isfinite(loss))
                    throw DivergenceError("non-finite training loss", epoch);
                adam_step(model, grads, adam, config.learning_rate);
                loss_sum += loss * static_cast<double>(b);
                voxel_sum += b;
            }
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(voxel_sum));
    }

    const auto t1 = std::chrono::steady_clock::now();
    report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    model.trained_mode = train_mode_name(config.mode);
    if (config.mode != TrainMode::MultiAcquisition)
        model.trained_phi_in = items.front().input_session.protocol.entries;
    report.final_checksum = model_checksum(model);
    return {std::move(model), std::move(report)};
}

}  // namespace qmri
