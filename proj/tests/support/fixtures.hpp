#pragma once

// Shared desk-scale fixtures: a two-stage micro search space with a small
// grid, plus matching task and teacher.

#include "evonas/distill.hpp"
#include "evonas/microtask.hpp"
#include "evonas/supernet.hpp"

namespace evonas::testing {

struct ToyWorld {
    SearchSpace space;
    SupernetDims dims;
    SupernetParams params;
    MicroTask task;
    TeacherModel teacher;

    ToyWorld(std::uint64_t seed, const SearchSpace& sp, int d_model, int grid,
             int patch, int n_train, int n_val)
        : space(sp),
          dims(make_dims(sp, d_model, grid, patch, seed)),
          params(make_params(dims, seed)),
          task(make_task(grid, grid / patch, n_train, n_val, seed)),
          teacher(make_teacher(dims, seed)) {}

    static SupernetDims make_dims(const SearchSpace& sp, int d_model, int grid,
                                  int patch, std::uint64_t seed) {
        SupernetDims dims = SupernetDims::from_space(
            sp, std::vector<int>(sp.num_stages, d_model), seed);
        dims.grid_size = grid;
        dims.patch_size = patch;
        dims.teacher_tokens = dims.tokens();
        return dims;
    }

    static SupernetParams make_params(const SupernetDims& dims, std::uint64_t seed) {
        Rng rng(Rng::derive(seed, 1));
        return init_from_dims(dims, rng);
    }

    static MicroTask make_task(int grid, int side, int n_train, int n_val,
                               std::uint64_t seed) {
        MicroTaskSpec spec;
        spec.grid_size = grid;
        spec.target_size = side;
        spec.n_train = n_train;
        spec.n_val = n_val;
        spec.generator_hidden = 16;
        spec.seed = Rng::derive(seed, 2);
        return make_micro_task(spec);
    }

    static TeacherModel make_teacher(const SupernetDims& dims, std::uint64_t seed) {
        TeacherSpec spec;
        spec.grid_size = dims.grid_size;
        spec.token_rows = dims.token_side();
        spec.token_cols = dims.token_side();
        spec.token_dim = dims.teacher_dim;
        spec.hidden = 32;
        spec.prediction_values = dims.tokens();
        spec.seed = Rng::derive(seed, 3);
        return TeacherModel(spec);
    }

    LossSpec finetune_loss(const LossWeights& w = {0.5, 1.0, 1.0}) const {
        LossSpec loss;
        loss.kind = StageKind::Finetune;
        loss.weights = w;
        loss.teacher = &teacher;
        return loss;
    }

    TrainableMask full_mask() const {
        TrainableMask mask;
        mask.d_state_cap = space.max_d_state();
        mask.ssd_cap = space.max_ssd_expand();
        mask.mlp_cap = space.max_mlp_ratio();
        mask.depth_cap = space.max_depth_per_stage;
        return mask;
    }
};

inline ToyWorld small_world(std::uint64_t seed = 7) {
    SearchSpace sp;
    sp.d_state_candidates = {2, 4, 8};
    sp.ssd_expand_candidates = {0.5, 1.0, 2.0};
    sp.mlp_ratio_candidates = {0.5, 1.0, 2.0};
    sp.max_depth_per_stage = {2, 2};
    sp.num_stages = 2;
    return ToyWorld(seed, sp, 8, 8, 4, 12, 6);
}

// Gradient comparison metric: entries below one percent of the gradient
// scale are held to an absolute tolerance instead of a relative one.
inline double max_relative_error(const SupernetParams& analytic,
                                 const SupernetParams& fd) {
    double gmax = 0.0;
    for_each_tensor(const_cast<SupernetParams&>(analytic),
                    [&](const std::string&, MatrixXd& m) {
                        gmax = std::max(gmax, m.cwiseAbs().maxCoeff());
                    });
    const double floor = std::max(1e-2 * gmax, 1e-12);

    std::vector<const MatrixXd*> a, f;
    for_each_tensor(const_cast<SupernetParams&>(analytic),
                    [&](const std::string&, MatrixXd& m) { a.push_back(&m); });
    for_each_tensor(const_cast<SupernetParams&>(fd),
                    [&](const std::string&, MatrixXd& m) { f.push_back(&m); });
    double worst = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (Eigen::Index c = 0; c < a[t]->cols(); ++c)
            for (Eigen::Index r = 0; r < a[t]->rows(); ++r) {
                const double av = (*a[t])(r, c);
                const double fv = (*f[t])(r, c);
                const double denom = std::max({std::abs(av), std::abs(fv), floor});
                worst = std::max(worst, std::abs(av - fv) / denom);
            }
    }
    return worst;
}

} // namespace evonas::testing
