#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "qmri/fit_result.hpp"
#include "qmri/types.hpp"

namespace qmri {

// Levenberg-Marquardt curve fit of the FLASH model, per voxel, over the
// channels of a stack. The solver works in transformed coordinates
// (log T1, log T2*, logit PD) so every iterate is a valid property triple.

struct NllsOptions {
    int max_iter = 100;
    double tol = 1e-10;          // relative cost decrease termination
    double lambda_init = 1e-3;   // x10 on rejected step, /10 on accepted
};

Eigen::Vector3d to_log_params(const TissueProperties& p);
TissueProperties from_log_params(const Eigen::Vector3d& q);

// Cost 0.5*||f(p, phi_k) - y_k||^2 and its gradient J^T r in transformed
// coordinates; exposed so the normal-equations gradient can be checked
// against finite differences.
double nlls_cost(std::span<const double> signal, const Protocol& protocol,
                 const TissueProperties& p);
Eigen::Vector3d nlls_gradient(std::span<const double> signal, const Protocol& protocol,
                              const TissueProperties& p);

struct VoxelFit {
    TissueProperties properties;
    double residual_norm = 0.0;
    std::uint32_t iterations = 0;  // accepted steps
    bool converged = false;
};

VoxelFit nlls_fit_voxel(std::span<const double> signal, const Protocol& protocol,
                        const TissueProperties& init, const NllsOptions& opts = {},
                        std::vector<double>* accepted_costs = nullptr);

FitResult nlls_fit(const ContrastStack& stack, const TissueProperties& init,
                   const NllsOptions& opts = {});
FitResult nlls_fit(const ContrastStack& stack, const PropertyMap& init,
                   const NllsOptions& opts = {});

}  // namespace qmri
