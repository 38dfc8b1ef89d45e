#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evonas/errors.hpp"
#include "evonas/microtask.hpp"
#include "evonas/rng.hpp"
#include "evonas/search_space.hpp"

namespace evonas {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Writable view onto a leading sub-block of a parameter tensor.
using MatView = Eigen::Ref<MatrixXd, 0, Eigen::OuterStride<>>;

// Fixed structural dimensions of the weight-sharing supernet. All parameter
// tensors are allocated at the maximal extents; subnetworks read leading
// slices only.
struct SupernetDims {
    int grid_size = 16;
    int patch_size = 4;
    std::vector<int> d_model;    // channel width per stage
    int d_state_max = 0;         // max candidate state dimension
    std::vector<int> e_max;      // per stage: round(max ssd_expand * d_model)
    std::vector<int> h_max;      // per stage: round(max mlp_ratio * d_model)
    std::vector<int> max_depth;  // per stage
    int teacher_tokens = 16;     // projection target token count
    int teacher_dim = 64;        // projection target token dimension
    std::uint64_t init_seed = 0;

    int num_stages() const { return static_cast<int>(d_model.size()); }
    int token_side() const { return grid_size / patch_size; }
    int tokens() const { return token_side() * token_side(); }
    int patch_dim() const { return patch_size * patch_size; }
    int d_last() const { return d_model.back(); }

    static SupernetDims from_space(const SearchSpace& space,
                                   const std::vector<int>& d_model_per_stage,
                                   std::uint64_t init_seed = 0);

    void check(const SearchSpace& space) const;

    bool operator==(const SupernetDims&) const = default;
};

// round(ratio * d_model), at least 1; used for both expansion dims.
int scaled_dim(double ratio, int d_model);

struct BlockParams {
    MatrixXd state_transition; // n_max x n_max
    MatrixXd write_proj;       // n_max x e_max
    MatrixXd read_proj;        // d x n_max
    MatrixXd content_proj;     // e_max x d
    MatrixXd mlp_in;           // h_max x d
    MatrixXd mlp_out;          // d x h_max
};

struct StageParams {
    std::vector<BlockParams> blocks;
    MatrixXd transition; // d_next x d; empty for the last stage
};

struct SupernetParams {
    SupernetDims dims;
    MatrixXd patch_embed; // d0 x patch_dim
    std::vector<StageParams> stages;
    // Fixed terminal attention block (not searched).
    MatrixXd attn_wq, attn_wk, attn_wv, attn_wo; // d_last x d_last
    // Query-based projection onto the teacher token layout (trained during
    // distillation only).
    MatrixXd proj_queries;            // teacher_tokens x d_last
    MatrixXd proj_key, proj_value;    // d_last x d_last
    MatrixXd proj_out;                // teacher_dim x d_last
    // Heads: per-token regression and pooled classification logit.
    MatrixXd task_head_w; // d_last x 1
    MatrixXd task_head_b; // 1 x 1
    MatrixXd cls_head_w;  // d_last x 1
    MatrixXd cls_head_b;  // 1 x 1
};

// Allocates all tensors at maximal sizes (zeroed).
SupernetParams allocate_params(const SupernetDims& dims);

// Allocates at maximal sizes, seeded scaled-normal init, head biases zero.
SupernetParams init_maximal(const SearchSpace& space,
                            const std::vector<int>& d_model_per_stage,
                            Rng& rng);
SupernetParams init_from_dims(const SupernetDims& dims, Rng& rng);

SupernetParams zeros_like(const SupernetParams& params);

// Visits every parameter tensor in a fixed order (checkpointing, SGD,
// finite-difference sweeps). Visitor signature: f(name, MatrixXd&).
template <typename P, typename F>
void for_each_tensor(P& params, F&& f) {
    f("patch_embed", params.patch_embed);
    for (std::size_t s = 0; s < params.stages.size(); ++s) {
        auto& stage = params.stages[s];
        const std::string base = "stage" + std::to_string(s);
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            auto& blk = stage.blocks[b];
            const std::string bb = base + ".block" + std::to_string(b);
            f(bb + ".state_transition", blk.state_transition);
            f(bb + ".write_proj", blk.write_proj);
            f(bb + ".read_proj", blk.read_proj);
            f(bb + ".content_proj", blk.content_proj);
            f(bb + ".mlp_in", blk.mlp_in);
            f(bb + ".mlp_out", blk.mlp_out);
        }
        if (stage.transition.size() > 0) f(base + ".transition", stage.transition);
    }
    f("attn_wq", params.attn_wq);
    f("attn_wk", params.attn_wk);
    f("attn_wv", params.attn_wv);
    f("attn_wo", params.attn_wo);
    f("proj_queries", params.proj_queries);
    f("proj_key", params.proj_key);
    f("proj_value", params.proj_value);
    f("proj_out", params.proj_out);
    f("task_head_w", params.task_head_w);
    f("task_head_b", params.task_head_b);
    f("cls_head_w", params.cls_head_w);
    f("cls_head_b", params.cls_head_b);
}

// --- slicing ---

struct StageExtents {
    int n = 0;     // active state dimension
    int e = 0;     // active content expansion width
    int h = 0;     // active MLP hidden width
    int depth = 0; // active leading blocks
};

// Validates cfg against dims; throws ConfigTooLarge.
std::vector<StageExtents> active_extents(const SupernetDims& dims,
                                         const ArchConfig& cfg);

// Writable leading-slice views; training through a view updates the parent
// tensors in place.
struct BlockView {
    MatView state_transition;
    MatView write_proj;
    MatView read_proj;
    MatView content_proj;
    MatView mlp_in;
    MatView mlp_out;
};

struct SliceView {
    std::vector<StageExtents> extents;
    std::vector<std::vector<BlockView>> stage_blocks; // active blocks only
};

SliceView slice_view(SupernetParams& params, const ArchConfig& cfg);

// Number of active (sliced) parameters of a configuration.
std::int64_t count_params(const SupernetDims& dims, const ArchConfig& cfg);

// --- forward / backward ---

struct ForwardResult {
    std::vector<MatrixXd> stage_outputs; // per stage: d_model[s] x tokens
    MatrixXd tokens;                     // tokens x d_last (row per token)
    VectorXd prediction;                 // one value per token
    double cls_logit = 0.0;
};

struct BlockCache {
    MatrixXd input;    // d x P
    MatrixXd content;  // e x P
    MatrixXd state;    // n x (P+1), column 0 is h_0 = 0
    MatrixXd resid;    // d x P, input + read(state)
    MatrixXd mlp_act;  // h x P, tanh of mlp_in * resid
};

struct ForwardCache {
    MatrixXd patches; // patch_dim x P
    std::vector<std::vector<BlockCache>> stage_blocks;
    std::vector<MatrixXd> stage_outputs; // d x P leaving each stage's blocks
    MatrixXd attn_in;                    // d_last x P
    MatrixXd attn_q, attn_k, attn_v;     // d_last x P
    MatrixXd attn_weights;               // P x P row-stochastic
    MatrixXd attn_ctx;                   // d_last x P
    MatrixXd tokens_cols;                // d_last x P (post-attention)
};

ForwardResult forward(const SupernetParams& params, const ArchConfig& cfg,
                      const MatrixXd& input_grid, ForwardCache* cache = nullptr);

struct OutputGrads {
    VectorXd d_prediction;  // size tokens, or empty
    MatrixXd d_tokens;      // tokens x d_last, or empty
    double d_cls_logit = 0.0;
};

// Accumulates parameter gradients for one input into `grads` (allocated via
// zeros_like). Only active slices are touched.
void backward(const SupernetParams& params, const ArchConfig& cfg,
              const MatrixXd& input_grid, const ForwardCache& cache,
              const OutputGrads& out_grads, SupernetParams& grads);

// Mean squared error of per-token predictions over the validation split.
double validation_error(const SupernetParams& params, const ArchConfig& cfg,
                        const MicroTask& task);

// --- progressive schedule ---

enum class TrainMode { Adapt, Joint, Final };

const char* to_string(TrainMode mode);

// Gradient mask for adaptation phases: updates beyond these extents are
// zeroed. Joint/final phases carry the full active extents, which never
// clip a sampled configuration's gradient.
struct TrainableMask {
    int d_state_cap = 0;
    double ssd_cap = 0.0;
    double mlp_cap = 0.0;
    std::vector<int> depth_cap; // per stage: blocks >= cap are frozen

    bool operator==(const TrainableMask&) const = default;
};

struct SchedulePhase {
    int id = 0;
    std::vector<int> d_state_active;
    std::vector<double> ssd_active;
    std::vector<double> mlp_active;
    bool depth_unlocked = false;
    // Values first activated by this phase (drive adapt-mode masking).
    std::vector<int> d_state_new;
    std::vector<double> ssd_new;
    std::vector<double> mlp_new;
    bool depth_new = false;
    int t_adapt = 0;
    int t_joint = 0;

    bool operator==(const SchedulePhase&) const = default;
};

struct ProgressiveSchedule {
    std::vector<SchedulePhase> phases;
    int t_final = 0;

    int total_iters() const;
    void check(const SearchSpace& space) const;

    // Canonical layout: maximal-only warmup, then per-dimension unlocking
    // (d_state, mlp_ratio, ssd_expand, depth), top half of each candidate
    // list first, then the full list; trailing joint convergence phase.
    static ProgressiveSchedule paper_layout(const SearchSpace& space,
                                            int t_initial = 200, int t_adapt = 50,
                                            int t_joint = 200, int t_final = 400);

    bool operator==(const ProgressiveSchedule&) const = default;
};

struct ActiveSets {
    int phase_id = 0;
    TrainMode mode = TrainMode::Joint;
    std::vector<int> d_state;
    std::vector<double> ssd_expand;
    std::vector<double> mlp_ratio;
    bool depth_unlocked = false;
    TrainableMask mask;
};

ActiveSets active_sets(const ProgressiveSchedule& schedule,
                       const SearchSpace& space, int global_iter);

// Balanced uniform sampling over the active candidate sets, per stage.
ArchConfig sample_uniform(const ActiveSets& active, const SearchSpace& space,
                          Rng& rng);

// Zeroes gradient entries outside the mask's extents.
void apply_mask(SupernetParams& grads, const TrainableMask& mask);

// --- training step ---

enum class StageKind { Pretrain, Finetune };

struct LossWeights {
    double theta = 0.5;
    double alpha1 = 1.0;
    double alpha2 = 1.0;

    void check() const; // throws InvalidWeights
    bool operator==(const LossWeights&) const = default;
};

struct StepResult {
    double loss = 0.0;
    // Finetune components: gt, pseudo, spat, freq. Pretrain: loss only.
    double l_gt = 0.0, l_pseudo = 0.0, l_spat = 0.0, l_freq = 0.0;
};

class TeacherModel; // distill.hpp

struct LossSpec {
    StageKind kind = StageKind::Finetune;
    LossWeights weights;
    const TeacherModel* teacher = nullptr; // required for Finetune
};

// One SGD step on the sliced view of `params` for the sampled config over a
// minibatch of training examples. Throws DivergenceError on non-finite loss.
StepResult train_step(SupernetParams& params, const ArchConfig& cfg,
                      const MicroTask& task, std::span<const int> batch_indices,
                      const LossSpec& loss, double lr, const TrainableMask& mask);

// Loss and gradients without the update (shared by train_step and the
// finite-difference tests).
StepResult compute_loss_and_grads(const SupernetParams& params,
                                  const ArchConfig& cfg, const MicroTask& task,
                                  std::span<const int> batch_indices,
                                  const LossSpec& loss,
                                  SupernetParams* grads /* nullable */);

} // namespace evonas
