#include "qmri/nlls.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qmri/errors.hpp"
#include "qmri/flash.hpp"

namespace qmri {

namespace {

double logit(double p) {
    const double clamped = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(clamped / (1.0 - clamped));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Residuals and the Jacobian in transformed coordinates.
void residual_jacobian(std::span<const double> signal, const Protocol& protocol,
                       const TissueProperties& p, Eigen::VectorXd& r,
                       Eigen::Matrix<double, Eigen::Dynamic, 3>* jac) {
    const auto n = static_cast<Eigen::Index>(protocol.size());
    r.resize(n);
    if (jac) jac->resize(n, 3);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& phi = protocol[static_cast<std::size_t>(k)];
        r[k] = flash_signal(p, phi) - signal[static_cast<std::size_t>(k)];
        if (jac) {
            const SignalJacobian j = flash_jacobian(p, phi);
            (*jac)(k, 0) = j.dy_dt1 * p.t1_ms;
            (*jac)(k, 1) = j.dy_dt2s * p.t2s_ms;
            (*jac)(k, 2) = j.dy_dpd * p.pd * (1.0 - p.pd);
        }
    }
}

}  // namespace

Eigen::Vector3d to_log_params(const TissueProperties& p) {
    return {std::log(p.t1_ms), std::log(p.t2s_ms), logit(p.pd)};
}

TissueProperties from_log_params(const Eigen::Vector3d& q) {
    return {std::exp(q[0]), std::exp(q[1]), sigmoid(q[2])};
}

double nlls_cost(std::span<const double> signal, const Protocol& protocol,
                 const TissueProperties& p) {
    Eigen::VectorXd r;
    residual_jacobian(signal, protocol, p, r, nullptr);
    return 0.5 * r.squaredNorm();
}

Eigen::Vector3d nlls_gradient(std::span<const double> signal, const Protocol& protocol,
                              const TissueProperties& p) {
    Eigen::VectorXd r;
    Eigen::Matrix<double, Eigen::Dynamic, 3> jac;
    residual_jacobian(signal, protocol, p, r, &jac);
    return jac.transpose() * r;
}

VoxelFit nlls_fit_voxel(std::span<const double> signal, const Protocol& protocol,
                        const TissueProperties& init, const NllsOptions& opts,
                        std::vector<double>* accepted_costs) {
    if (signal.size() != protocol.size()) {
        throw ValidationError("nlls_fit_voxel: signal/protocol length mismatch");
    }
    Eigen::Vector3d q = to_log_params(init);
    Eigen::VectorXd r;
    Eigen::Matrix<double, Eigen::Dynamic, 3> jac;

    TissueProperties p = from_log_params(q);
    residual_jacobian(signal, protocol, p, r, &jac);
    double cost = 0.5 * r.squaredNorm();
    if (accepted_costs) accepted_costs->push_back(cost);

    VoxelFit fit;
    double lambda = opts.lambda_init;
    bool converged = cost <= 1e-30;

    int iter = 0;
    while (!converged && iter < opts.max_iter) {
        const Eigen::Vector3d g = jac.transpose() * r;
        Eigen::Matrix3d h = jac.transpose() * jac;
        const double diag_floor = 1e-12 * std::max(h.diagonal().maxCoeff(), 1e-300);

        bool accepted = false;
        while (!accepted && lambda < 1e14) {
            Eigen::Matrix3d damped = h;
            for (int i = 0; i < 3; ++i) {
                damped(i, i) += lambda * std::max(h(i, i), diag_floor);
            }
            const Eigen::Vector3d step = damped.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const Eigen::Vector3d q_new = q + step;
            const TissueProperties p_new = from_log_params(q_new);
            // A wild step can over/underflow the exp transform; treat the
            // candidate as infinite cost instead of evaluating the model.
            if (!is_valid(validate(p_new))) {
                lambda *= 10.0;
                continue;
            }
            Eigen::VectorXd r_new;
            residual_jacobian(signal, protocol, p_new, r_new, nullptr);
            const double cost_new = 0.5 * r_new.squaredNorm();
            if (std::isfinite(cost_new) && cost_new <= cost) {
                const double rel_decrease = (cost - cost_new) / std::max(cost, 1e-300);
                q = q_new;
                p = p_new;
                cost = cost_new;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                ++iter;
                if (accepted_costs) accepted_costs->push_back(cost);
                if (rel_decrease < opts.tol || cost <= 1e-30) converged = true;
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) break;  // damping exhausted
        if (!converged) residual_jacobian(signal, protocol, p, r, &jac);
    }

    residual_jacobian(signal, protocol, p, r, nullptr);
    fit.properties = p;
    fit.residual_norm = r.norm();
    fit.iterations = static_cast<std::uint32_t>(iter);
    fit.converged = converged;
    return fit;
}

namespace {

FitResult nlls_fit_impl(const ContrastStack& stack,
                        const TissueProperties* global_init,
                        const PropertyMap* per_voxel_init, const NllsOptions& opts) {
    if (!is_valid(validate(stack))) {
        throw ValidationError("nlls_fit: invalid stack: " + describe(validate(stack)));
    }
    const std::size_t n = stack.voxel_count();
    const std::size_t channels = stack.channels();
    if (per_voxel_init && per_voxel_init->size() != n) {
        throw ValidationError("nlls_fit: init map size mismatch");
    }

    FitResult result;
    result.properties = PropertyMap(stack.width, stack.height);
    result.residual_norm.resize(n);
    result.detail.resize(n);
    result.converged.resize(n);

    std::vector<double> signal(channels);
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t k = 0; k < channels; ++k) signal[k] = stack.intensities[k * n + v];
        const TissueProperties init =
            per_voxel_init ? per_voxel_init->voxels[v] : *global_init;
        const VoxelFit fit = nlls_fit_voxel(signal, stack.protocol, init, opts);
        result.properties.voxels[v] = fit.properties;
        result.residual_norm[v] = fit.residual_norm;
        result.detail[v] = fit.iterations;
        result.converged[v] = fit.converged ? 1 : 0;
    }
    return result;
}

}  // namespace

FitResult nlls_fit(const ContrastStack& stack, const TissueProperties& init,
                   const NllsOptions& opts) {
    return nlls_fit_impl(stack, &init, nullptr, opts);
}

FitResult nlls_fit(const ContrastStack& stack, const PropertyMap& init,
                   const NllsOptions& opts) {
    return nlls_fit_impl(stack, nullptr, &init, opts);
}

}  // namespace qmri
