#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "qmri/mlp.hpp"
#include "qmri/phantom.hpp"
#include "qmri/types.hpp"

namespace qmri {

enum class TrainMode { MultiAcquisition, FixedAcquisition, SynthesisLoss };

const char* train_mode_name(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::MultiAcquisition;
    double learning_rate = 0.001;
    std::uint32_t batch_voxels = 4096;
    std::uint32_t epochs = 30;
    std::uint32_t contrasts_per_step = 10;  // target contrasts drawn per step
    std::uint64_t seed = 0;
    bool include_phi_in = true;
    std::vector<std::uint32_t> hidden = {64, 64};
    std::uint32_t echoes = 3;
};

// What the optimizer is allowed to see: measured stacks and their scanner
// parameters. Ground-truth property maps never cross this boundary.
struct TrainItem {
    MultiechoSession input_session;
    ContrastStack input_stack;
    std::vector<std::uint8_t> foreground;
    Protocol output_protocol;
    ContrastStack output_stack;
};

TrainItem strip_ground_truth(const DatasetItem& item);
std::vector<TrainItem> strip_ground_truth(const std::vector<DatasetItem>& items);

// A training batch: per-voxel input features plus measured target intensities
// at the shared output contrasts.
struct VoxelBatch {
    Eigen::MatrixXd features;  // input_size x B
    Protocol output_protocol;  // J contrasts
    Eigen::MatrixXd targets;   // J x B
};

struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

// Mean squared synthesis error: predictions are decoded tissue properties
// pushed through the signal model at each target contrast.
double synthesis_loss(const MlpModel& model, const VoxelBatch& batch);

// Loss plus analytic parameter gradients (chain rule through the signal
// model, the range decoding, and the network).
double synthesis_loss_backward(const MlpModel& model, const VoxelBatch& batch, Gradients& grads);

struct TrainReport {
    std::vector<double> epoch_loss;  // voxel-weighted mean per epoch
    double wall_seconds = 0.0;
    std::uint64_t final_checksum = 0;
};

std::pair<MlpModel, TrainReport> train(const TrainConfig& config,
                                       const std::vector<TrainItem>& items);

}  // namespace qmri
