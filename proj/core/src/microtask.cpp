#include "evonas/microtask.hpp"

#include <cmath>

#include "evonas/errors.hpp"
#include "evonas/rng.hpp"

namespace evonas {

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, double scale, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
    return m;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& grid) {
    return Eigen::Map<const Eigen::VectorXd>(grid.data(), grid.size());
}

} // namespace

MicroTask make_micro_task(const MicroTaskSpec& spec) {
    if (spec.grid_size < 1 || spec.target_size < 1 || spec.n_train < 1 ||
        spec.n_val < 1 || spec.generator_hidden < 1)
        throw InvalidConfig("micro task: sizes must be positive");

    MicroTask task;
    task.spec = spec;

    const int in_dim = spec.grid_size * spec.grid_size;
    const int out_dim = spec.target_size * spec.target_size;

    Rng gen_rng(Rng::derive(spec.seed, 0x6E47));
    const Eigen::MatrixXd w1 = random_matrix(spec.generator_hidden, in_dim,
                                             1.0 / std::sqrt(double(in_dim)), gen_rng);
    const Eigen::MatrixXd w2 =
        random_matrix(out_dim, spec.generator_hidden,
                      1.0 / std::sqrt(double(spec.generator_hidden)), gen_rng);

    Rng data_rng(Rng::derive(spec.seed, 0xDA7A));
    // Inputs are smooth: a coarse random field upsampled to the grid with a
    // little high-frequency noise on top, which keeps the regression
    // learnable at the fixed training budgets.
    const int coarse = std::max(2, spec.grid_size / 4);
    auto draw_grid = [&]() {
        Eigen::MatrixXd field(coarse, coarse);
        for (int c = 0; c < coarse; ++c)
            for (int r = 0; r < coarse; ++r) field(r, c) = data_rng.normal();
        Eigen::MatrixXd grid(spec.grid_size, spec.grid_size);
        const double scale = static_cast<double>(coarse - 1) / (spec.grid_size - 1);
        for (int r = 0; r < spec.grid_size; ++r) {
            for (int c = 0; c < spec.grid_size; ++c) {
                const double fr = r * scale, fc = c * scale;
                const int r0 = std::min<int>(coarse - 2, static_cast<int>(fr));
                const int c0 = std::min<int>(coarse - 2, static_cast<int>(fc));
                const double ar = fr - r0, ac = fc - c0;
                grid(r, c) = (1 - ar) * (1 - ac) * field(r0, c0) +
                             (1 - ar) * ac * field(r0, c0 + 1) +
                             ar * (1 - ac) * field(r0 + 1, c0) +
                             ar * ac * field(r0 + 1, c0 + 1);
            }
        }
        for (int c = 0; c < spec.grid_size; ++c)
            for (int r = 0; r < spec.grid_size; ++r)
                grid(r, c) += 0.1 * data_rng.normal();
        return grid;
    };
    auto draw = [&](std::vector<Eigen::MatrixXd>& inputs,
                    std::vector<Eigen::VectorXd>& targets, int n) {
        inputs.reserve(n);
        targets.reserve(n);
        for (int i = 0; i < n; ++i) {
            Eigen::MatrixXd grid = draw_grid();
            inputs.push_back(grid);
            targets.emplace_back(w2 * (w1 * flatten(grid)).array().tanh().matrix());
        }
    };
    // Train drawn first, then val: disjoint by construction.
    draw(task.train_inputs, task.train_targets, spec.n_train);
    draw(task.val_inputs, task.val_targets, spec.n_val);
    return task;
}

double classification_label(const Eigen::VectorXd& target) {
    return target.mean() >= 0.0 ? 1.0 : -1.0;
}

} // namespace evonas
