#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "qmri/rng.hpp"
#include "qmri/types.hpp"

namespace qmri {

// Per-voxel estimator g_theta: intensity features (optionally with the input
// session's scanner parameters appended) -> (T1, T2*, PD). Hidden layers use
// softplus; the output head maps each channel through a sigmoid onto its
// configured range, so any weight setting yields valid tissue properties.

struct OutputRanges {
    double t1_ms[2] = {100.0, 4000.0};
    double t2s_ms[2] = {3.0, 300.0};
    double pd[2] = {1e-30, 1.0};  // tiny positive floor keeps pd > 0 under saturation
};

// Min-max scaling ranges for the protocol features, matching the training
// sampling ranges.
struct FeatureRanges {
    double te_ms[2] = {5.0, 80.0};
    double tr_ms[2] = {30.0, 100.0};
    double fa_deg[2] = {5.0, 80.0};
};

struct MlpModel {
    std::vector<std::uint32_t> layer_sizes;  // input, hidden..., 3
    std::vector<Eigen::MatrixXd> weights;    // weights[l] is (out x in)
    std::vector<Eigen::VectorXd> biases;
    bool include_phi_in = true;
    std::uint32_t echoes = 3;
    OutputRanges output_ranges;
    FeatureRanges feature_ranges;
    std::string trained_mode;  // empty until train() fills it in
    // Set when every training item shared one input session; lets consumers
    // warn about protocol mismatch when the model cannot see phi_in itself.
    std::vector<AcquisitionParams> trained_phi_in;

    std::uint32_t input_size() const { return layer_sizes.front(); }
    std::size_t parameter_count() const;
};

// Feature vector length: echo intensities plus, when phi_in is included,
// [tr, fa, sin(fa), cos(fa), te_1..te_E] scanner features.
std::uint32_t mlp_input_size(bool include_phi_in, std::uint32_t echoes);

// He-style uniform initialization; biases start at zero.
MlpModel make_mlp(const std::vector<std::uint32_t>& hidden, bool include_phi_in,
                  std::uint32_t echoes, RandomStream& rng);

// Scanner-parameter feature block for a session (size 4 + echoes).
std::vector<double> protocol_features(const MlpModel& model, const MultiechoSession& session);

// Mean first-channel intensity over foreground; the per-session intensity
// normalizer. Without a mask, voxels above 1e-12 of the channel maximum
// stand in for foreground.
double first_echo_scale(const ContrastStack& stack, const std::vector<std::uint8_t>* foreground);

// Feature matrix (input_size x n_voxels) for every voxel of a stack.
Eigen::MatrixXd stack_features(const MlpModel& model, const ContrastStack& stack,
                               const std::vector<std::uint8_t>* foreground);

// Raw network output (3 x batch), before range decoding.
Eigen::MatrixXd mlp_raw_output(const MlpModel& model, const Eigen::MatrixXd& features);

TissueProperties decode_output(const MlpModel& model, const Eigen::Vector3d& raw);

TissueProperties forward(const MlpModel& model, const Eigen::VectorXd& features);

// Estimate a full property map from a multiecho stack.
PropertyMap mlp_estimate(const MlpModel& model, const ContrastStack& stack,
                         const std::vector<std::uint8_t>* foreground);

std::uint64_t model_checksum(const MlpModel& model);

void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace qmri
