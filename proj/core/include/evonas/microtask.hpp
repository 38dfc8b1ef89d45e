#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace evonas {

// Desk-scale synthetic regression task: random input grids mapped to dense
// target maps by a frozen seed-determined two-layer network. Stands in for
// the full-scale benchmark datasets.
struct MicroTaskSpec {
    int grid_size = 16;     // square single-channel input
    int target_size = 4;    // square target map (one value per token)
    int n_train = 64;
    int n_val = 32;
    int generator_hidden = 32;
    std::uint64_t seed = 0;

    bool operator==(const MicroTaskSpec&) const = default;
};

struct MicroTask {
    MicroTaskSpec spec;
    std::vector<Eigen::MatrixXd> train_inputs;
    std::vector<Eigen::VectorXd> train_targets; // flattened target maps
    std::vector<Eigen::MatrixXd> val_inputs;
    std::vector<Eigen::VectorXd> val_targets;

    int target_values() const { return spec.target_size * spec.target_size; }
};

MicroTask make_micro_task(const MicroTaskSpec& spec);

// Pretrain-analog label: sign of the target-map mean, in {-1.0, +1.0}.
double classification_label(const Eigen::VectorXd& target);

} // namespace evonas
