#include "evonas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evonas/distill.hpp"

namespace evonas {

int scaled_dim(double ratio, int d_model) {
    return std::max<int>(1, static_cast<int>(std::llround(ratio * d_model)));
}

SupernetDims SupernetDims::from_space(const SearchSpace& space,
                                      const std::vector<int>& d_model_per_stage,
                                      std::uint64_t init_seed) {
    space.check();
    SupernetDims dims;
    dims.d_model = d_model_per_stage;
    dims.d_state_max = space.max_d_state();
    dims.max_depth = space.max_depth_per_stage;
    dims.init_seed = init_seed;
    dims.e_max.resize(d_model_per_stage.size());
    dims.h_max.resize(d_model_per_stage.size());
    for (std::size_t s = 0; s < d_model_per_stage.size(); ++s) {
        dims.e_max[s] = scaled_dim(space.max_ssd_expand(), d_model_per_stage[s]);
        dims.h_max[s] = scaled_dim(space.max_mlp_ratio(), d_model_per_stage[s]);
    }
    dims.teacher_dim = 4 * dims.d_last();
    dims.teacher_tokens = dims.tokens();
    dims.check(space);
    return dims;
}

void SupernetDims::check(const SearchSpace& space) const {
    if (static_cast<int>(d_model.size()) != space.num_stages)
        throw InvalidConfig("supernet dims: d_model count != num_stages");
    if (grid_size < 1 || patch_size < 1 || grid_size % patch_size != 0)
        throw InvalidConfig("supernet dims: grid must be a multiple of patch size");
    for (int d : d_model)
        if (d < 1) throw InvalidConfig("supernet dims: d_model must be positive");
    if (teacher_tokens < 1 || teacher_dim < 1)
        throw InvalidConfig("supernet dims: teacher token shape must be positive");
}

// --- init ---

namespace {

void fill_normal(MatrixXd& m, double scale, Rng& rng) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = scale * rng.normal();
}

} // namespace

SupernetParams allocate_params(const SupernetDims& dims) {
    SupernetParams p;
    p.dims = dims;
    const int S = dims.num_stages();
    p.patch_embed = MatrixXd::Zero(dims.d_model[0], dims.patch_dim());
    p.stages.resize(S);
    for (int s = 0; s < S; ++s) {
        const int d = dims.d_model[s];
        p.stages[s].blocks.resize(dims.max_depth[s]);
        for (BlockParams& b : p.stages[s].blocks) {
            b.state_transition = MatrixXd::Zero(dims.d_state_max, dims.d_state_max);
            b.write_proj = MatrixXd::Zero(dims.d_state_max, dims.e_max[s]);
            b.read_proj = MatrixXd::Zero(d, dims.d_state_max);
            b.content_proj = MatrixXd::Zero(dims.e_max[s], d);
            b.mlp_in = MatrixXd::Zero(dims.h_max[s], d);
            b.mlp_out = MatrixXd::Zero(d, dims.h_max[s]);
        }
        if (s + 1 < S) p.stages[s].transition = MatrixXd::Zero(dims.d_model[s + 1], d);
    }
    const int dl = dims.d_last();
    p.attn_wq = MatrixXd::Zero(dl, dl);
    p.attn_wk = MatrixXd::Zero(dl, dl);
    p.attn_wv = MatrixXd::Zero(dl, dl);
    p.attn_wo = MatrixXd::Zero(dl, dl);
    p.proj_queries = MatrixXd::Zero(dims.teacher_tokens, dl);
    p.proj_key = MatrixXd::Zero(dl, dl);
    p.proj_value = MatrixXd::Zero(dl, dl);
    p.proj_out = MatrixXd::Zero(dims.teacher_dim, dl);
    p.task_head_w = MatrixXd::Zero(dl, 1);
    p.task_head_b = MatrixXd::Zero(1, 1);
    p.cls_head_w = MatrixXd::Zero(dl, 1);
    p.cls_head_b = MatrixXd::Zero(1, 1);
    return p;
}

SupernetParams init_from_dims(const SupernetDims& dims, Rng& rng) {
    SupernetParams p = allocate_params(dims);

    auto ends_with = [](const std::string& s, const char* suffix) {
        const std::string suf(suffix);
        return s.size() >= suf.size() && s.rfind(suf) == s.size() - suf.size();
    };
    for_each_tensor(p, [&](const std::string& name, MatrixXd& m) {
        if (name == "task_head_b" || name == "cls_head_b") {
            m.setZero();
            return;
        }
        // Scaled-normal init. The state transition gets a smaller gain so the
        // recurrence stays contractive; branch output projections start small
        // so residual blocks are near-identity and activations keep the
        // embedding scale through depth.
        double gain = 1.0;
        if (ends_with(name, "state_transition")) gain = 0.4;
        if (ends_with(name, "read_proj") || ends_with(name, "mlp_out") ||
            name == "attn_wo")
            gain = 0.2;
        fill_normal(m, gain / std::sqrt(static_cast<double>(m.cols())), rng);
    });
    return p;
}

SupernetParams init_maximal(const SearchSpace& space,
                            const std::vector<int>& d_model_per_stage,
                            Rng& rng) {
    return init_from_dims(SupernetDims::from_space(space, d_model_per_stage), rng);
}

SupernetParams zeros_like(const SupernetParams& params) {
    SupernetParams z = params;
    for_each_tensor(z, [](const std::string&, MatrixXd& m) { m.setZero(); });
    return z;
}

// --- slicing ---

std::vector<StageExtents> active_extents(const SupernetDims& dims,
                                         const ArchConfig& cfg) {
    if (static_cast<int>(cfg.stages.size()) != dims.num_stages())
        throw ConfigTooLarge("config stage count does not match supernet");
    std::vector<StageExtents> ext(cfg.stages.size());
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageConfig& st = cfg.stages[s];
        StageExtents& e = ext[s];
        e.n = st.d_state;
        e.e = scaled_dim(st.ssd_expand, dims.d_model[s]);
        e.h = scaled_dim(st.mlp_ratio, dims.d_model[s]);
        e.depth = st.depth;
        if (e.n < 1 || e.n > dims.d_state_max || e.e > dims.e_max[s] ||
            e.h > dims.h_max[s] || e.depth < 1 || e.depth > dims.max_depth[s])
            throw ConfigTooLarge("config exceeds maximal supernet extents");
    }
    return ext;
}

SliceView slice_view(SupernetParams& params, const ArchConfig& cfg) {
    SliceView view;
    view.extents = active_extents(params.dims, cfg);
    view.stage_blocks.resize(cfg.stages.size());
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageExtents& e = view.extents[s];
        const int d = params.dims.d_model[s];
        for (int b = 0; b < e.depth; ++b) {
            BlockParams& blk = params.stages[s].blocks[b];
            view.stage_blocks[s].push_back(BlockView{
                blk.state_transition.topLeftCorner(e.n, e.n),
                blk.write_proj.topLeftCorner(e.n, e.e),
                blk.read_proj.topLeftCorner(d, e.n),
                blk.content_proj.topLeftCorner(e.e, d),
                blk.mlp_in.topLeftCorner(e.h, d),
                blk.mlp_out.topLeftCorner(d, e.h),
            });
        }
    }
    return view;
}

std::int64_t count_params(const SupernetDims& dims, const ArchConfig& cfg) {
    const auto ext = active_extents(dims, cfg);
    std::int64_t total = dims.d_model[0] * dims.patch_dim();
    for (int s = 0; s < dims.num_stages(); ++s) {
        const StageExtents& e = ext[s];
        const std::int64_t d = dims.d_model[s];
        const std::int64_t per_block = std::int64_t(e.n) * e.n + std::int64_t(e.n) * e.e +
                                       d * e.n + std::int64_t(e.e) * d + 2 * std::int64_t(e.h) * d;
        total += per_block * e.depth;
        if (s + 1 < dims.num_stages()) total += d * dims.d_model[s + 1];
    }
    const std::int64_t dl = dims.d_last();
    total += 4 * dl * dl;   // attention
    total += 2 * (dl + 1);  // heads
    return total;
}

// --- forward ---

namespace {

MatrixXd extract_patches(const SupernetDims& dims, const MatrixXd& grid) {
    if (grid.rows() != dims.grid_size || grid.cols() != dims.grid_size)
        throw ShapeError("forward: input grid shape mismatch");
    const int p = dims.patch_size;
    const int side = dims.token_side();
    MatrixXd patches(dims.patch_dim(), dims.tokens());
    for (int t = 0; t < dims.tokens(); ++t) {
        const int pr = t / side, pc = t % side;
        MatrixXd patch = grid.block(pr * p, pc * p, p, p);
        patches.col(t) = Eigen::Map<const VectorXd>(patch.data(), patch.size());
    }
    return patches;
}

void softmax_rows(MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

} // namespace

ForwardResult forward(const SupernetParams& params, const ArchConfig& cfg,
                      const MatrixXd& input_grid, ForwardCache* cache) {
    const SupernetDims& dims = params.dims;
    const auto ext = active_extents(dims, cfg);
    const int P = dims.tokens();

    ForwardCache local;
    ForwardCache& C = cache ? *cache : local;
    C.stage_blocks.assign(dims.num_stages(), {});
    C.stage_outputs.assign(dims.num_stages(), MatrixXd());

    C.patches = extract_patches(dims, input_grid);
    MatrixXd u = params.patch_embed * C.patches; // d0 x P

    ForwardResult out;
    out.stage_outputs.reserve(dims.num_stages());

    for (int s = 0; s < dims.num_stages(); ++s) {
        const StageExtents& e = ext[s];
        for (int b = 0; b < e.depth; ++b) {
            const BlockParams& blk = params.stages[s].blocks[b];
            const auto A = blk.state_transition.topLeftCorner(e.n, e.n);
            const auto B = blk.write_proj.topLeftCorner(e.n, e.e);
            const auto R = blk.read_proj.topLeftCorner(dims.d_model[s], e.n);
            const auto X = blk.content_proj.topLeftCorner(e.e, dims.d_model[s]);
            const auto W1 = blk.mlp_in.topLeftCorner(e.h, dims.d_model[s]);
            const auto W2 = blk.mlp_out.topLeftCorner(dims.d_model[s], e.h);

            BlockCache bc;
            bc.input = u;
            bc.content = X * u; // e x P
            bc.state.setZero(e.n, P + 1);
            MatrixXd ssm_out(dims.d_model[s], P);
            for (int t = 1; t <= P; ++t) {
                bc.state.col(t) = A * bc.state.col(t - 1) + B * bc.content.col(t - 1);
                ssm_out.col(t - 1) = R * bc.state.col(t);
            }
            bc.resid = u + ssm_out;
            bc.mlp_act = (W1 * bc.resid).array().tanh();
            u = bc.resid + W2 * bc.mlp_act;
            C.stage_blocks[s].push_back(std::move(bc));
        }
        C.stage_outputs[s] = u;
        out.stage_outputs.push_back(u);
        if (s + 1 < dims.num_stages()) u = params.stages[s].transition * u;
    }

    // Terminal global-attention block.
    const int dl = dims.d_last();
    C.attn_in = u;
    C.attn_q = params.attn_wq * u;
    C.attn_k = params.attn_wk * u;
    C.attn_v = params.attn_wv * u;
    C.attn_weights = (C.attn_q.transpose() * C.attn_k) / std::sqrt(double(dl));
    softmax_rows(C.attn_weights);
    C.attn_ctx = C.attn_v * C.attn_weights.transpose();
    C.tokens_cols = u + params.attn_wo * C.attn_ctx;

    out.tokens = C.tokens_cols.transpose();
    out.prediction =
        (C.tokens_cols.transpose() * params.task_head_w).col(0).array() +
        params.task_head_b(0, 0);
    const VectorXd pooled = C.tokens_cols.rowwise().mean();
    out.cls_logit = params.cls_head_w.col(0).dot(pooled) + params.cls_head_b(0, 0);
    return out;
}

// --- backward ---

void backward(const SupernetParams& params, const ArchConfig& cfg,
              const MatrixXd& input_grid, const ForwardCache& cache,
              const OutputGrads& out_grads, SupernetParams& grads) {
    const SupernetDims& dims = params.dims;
    const auto ext = active_extents(dims, cfg);
    const int P = dims.tokens();
    const int dl = dims.d_last();
    (void)input_grid;

    MatrixXd d_tok = MatrixXd::Zero(dl, P);
    if (out_grads.d_tokens.size() > 0) {
        if (out_grads.d_tokens.rows() != P || out_grads.d_tokens.cols() != dl)
            throw ShapeError("backward: token gradient shape mismatch");
        d_tok += out_grads.d_tokens.transpose();
    }
    if (out_grads.d_prediction.size() > 0) {
        if (out_grads.d_prediction.size() != P)
            throw ShapeError("backward: prediction gradient shape mismatch");
        grads.task_head_w.col(0) += cache.tokens_cols * out_grads.d_prediction;
        grads.task_head_b(0, 0) += out_grads.d_prediction.sum();
        d_tok += params.task_head_w * out_grads.d_prediction.transpose();
    }
    if (out_grads.d_cls_logit != 0.0) {
        const VectorXd pooled = cache.tokens_cols.rowwise().mean();
        grads.cls_head_w.col(0) += pooled * out_grads.d_cls_logit;
        grads.cls_head_b(0, 0) += out_grads.d_cls_logit;
        d_tok.colwise() +=
            (params.cls_head_w.col(0) * (out_grads.d_cls_logit / P)).eval();
    }

    // Attention block.
    MatrixXd d_u = d_tok; // residual path
    grads.attn_wo += d_tok * cache.attn_ctx.transpose();
    const MatrixXd d_ctx = params.attn_wo.transpose() * d_tok;
    const MatrixXd d_v = d_ctx * cache.attn_weights;
    MatrixXd d_attn = d_ctx.transpose() * cache.attn_v; // P x P
    for (Eigen::Index i = 0; i < d_attn.rows(); ++i) {
        const double dot = d_attn.row(i).dot(cache.attn_weights.row(i));
        d_attn.row(i) =
            (d_attn.row(i).array() - dot) * cache.attn_weights.row(i).array();
    }
    const double inv_sqrt = 1.0 / std::sqrt(double(dl));
    const MatrixXd d_q = cache.attn_k * d_attn.transpose() * inv_sqrt;
    const MatrixXd d_k = cache.attn_q * d_attn * inv_sqrt;
    grads.attn_wq += d_q * cache.attn_in.transpose();
    grads.attn_wk += d_k * cache.attn_in.transpose();
    grads.attn_wv += d_v * cache.attn_in.transpose();
    d_u += params.attn_wq.transpose() * d_q + params.attn_wk.transpose() * d_k +
           params.attn_wv.transpose() * d_v;

    // Stages in reverse.
    for (int s = dims.num_stages() - 1; s >= 0; --s) {
        if (s + 1 < dims.num_stages()) {
            // d_u refers to the next stage's input = transition * stage_outputs[s]
            grads.stages[s].transition += d_u * cache.stage_outputs[s].transpose();
            d_u = params.stages[s].transition.transpose() * d_u;
        }
        const StageExtents& e = ext[s];
        const int d = dims.d_model[s];
        for (int b = e.depth - 1; b >= 0; --b) {
            const BlockParams& blk = params.stages[s].blocks[b];
            BlockParams& gblk = grads.stages[s].blocks[b];
            const BlockCache& bc = cache.stage_blocks[s][b];

            const auto A = blk.state_transition.topLeftCorner(e.n, e.n);
            const auto B = blk.write_proj.topLeftCorner(e.n, e.e);
            const auto R = blk.read_proj.topLeftCorner(d, e.n);
            const auto X = blk.content_proj.topLeftCorner(e.e, d);
            const auto W1 = blk.mlp_in.topLeftCorner(e.h, d);
            const auto W2 = blk.mlp_out.topLeftCorner(d, e.h);

            // MLP
            gblk.mlp_out.topLeftCorner(d, e.h) += d_u * bc.mlp_act.transpose();
            MatrixXd d_pre = (W2.transpose() * d_u).array() *
                             (1.0 - bc.mlp_act.array().square());
            gblk.mlp_in.topLeftCorner(e.h, d) += d_pre * bc.resid.transpose();
            MatrixXd d_resid = d_u + W1.transpose() * d_pre;

            // Read projection
            gblk.read_proj.topLeftCorner(d, e.n) +=
                d_resid * bc.state.rightCols(P).transpose();
            const MatrixXd d_h_direct = R.transpose() * d_resid; // n x P

            // Backprop through the recurrence.
            MatrixXd d_content(e.e, P);
            VectorXd g = VectorXd::Zero(e.n);
            for (int t = P; t >= 1; --t) {
                g = d_h_direct.col(t - 1) + A.transpose() * g;
                gblk.state_transition.topLeftCorner(e.n, e.n) +=
                    g * bc.state.col(t - 1).transpose();
                gblk.write_proj.topLeftCorner(e.n, e.e) +=
                    g * bc.content.col(t - 1).transpose();
                d_content.col(t - 1) = B.transpose() * g;
            }

            gblk.content_proj.topLeftCorner(e.e, d) +=
                d_content * bc.input.transpose();
            d_u = d_resid + X.transpose() * d_content;
        }
    }

    grads.patch_embed += d_u * cache.patches.transpose();
}

// --- validation ---

double validation_error(const SupernetParams& params, const ArchConfig& cfg,
                        const MicroTask& task) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < task.val_inputs.size(); ++i) {
        const ForwardResult r = forward(params, cfg, task.val_inputs[i]);
        if (r.prediction.size() != task.val_targets[i].size())
            throw ShapeError("validation: prediction/target size mismatch");
        total += (r.prediction - task.val_targets[i]).squaredNorm();
        count += static_cast<std::size_t>(r.prediction.size());
    }
    return total / static_cast<double>(count);
}

// --- progressive schedule ---

const char* to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Adapt: return "adapt";
        case TrainMode::Joint: return "joint";
        case TrainMode::Final: return "final";
    }
    return "?";
}

int ProgressiveSchedule::total_iters() const {
    int total = t_final;
    for (const SchedulePhase& p : phases) total += p.t_adapt + p.t_joint;
    return total;
}

namespace {

template <typename T>
bool is_subset(const std::vector<T>& a, const std::vector<T>& b) {
    for (const T& v : a)
        if (std::find(b.begin(), b.end(), v) == b.end()) return false;
    return true;
}

// Top k values of a strictly increasing candidate list.
template <typename T>
std::vector<T> top_values(const std::vector<T>& cands, std::size_t k) {
    return {cands.end() - static_cast<std::ptrdiff_t>(k), cands.end()};
}

} // namespace

void ProgressiveSchedule::check(const SearchSpace& space) const {
    if (phases.empty()) throw InvalidConfig("schedule: no phases");
    const SchedulePhase& p0 = phases.front();
    if (p0.d_state_active != std::vector<int>{space.max_d_state()} ||
        p0.ssd_active != std::vector<double>{space.max_ssd_expand()} ||
        p0.mlp_active != std::vector<double>{space.max_mlp_ratio()} ||
        p0.depth_unlocked || p0.t_adapt != 0)
        throw InvalidConfig("schedule: phase 0 must be the maximal configuration only");
    int first_mlp = -1, first_ssd = -1, first_depth = -1, last_dstate = -1, last_mlp = -1,
        last_ssd = -1;
    for (std::size_t i = 1; i < phases.size(); ++i) {
        const SchedulePhase& prev = phases[i - 1];
        const SchedulePhase& cur = phases[i];
        if (!is_subset(prev.d_state_active, cur.d_state_active) ||
            !is_subset(prev.ssd_active, cur.ssd_active) ||
            !is_subset(prev.mlp_active, cur.mlp_active) ||
            (prev.depth_unlocked && !cur.depth_unlocked))
            throw InvalidConfig("schedule: active sets must expand monotonically");
        if (!cur.d_state_new.empty()) last_dstate = static_cast<int>(i);
        if (!cur.mlp_new.empty()) {
            if (first_mlp < 0) first_mlp = static_cast<int>(i);
            last_mlp = static_cast<int>(i);
        }
        if (!cur.ssd_new.empty()) {
            if (first_ssd < 0) first_ssd = static_cast<int>(i);
            last_ssd = static_cast<int>(i);
        }
        if (cur.depth_new && first_depth < 0) first_depth = static_cast<int>(i);
        if (cur.t_adapt < 0 || cur.t_joint < 0)
            throw InvalidConfig("schedule: negative phase budget");
    }
    if ((first_mlp >= 0 && last_dstate > first_mlp) ||
        (first_ssd >= 0 && last_mlp > first_ssd) ||
        (first_depth >= 0 && last_ssd > first_depth))
        throw InvalidConfig("schedule: unlock order must be d_state, mlp_ratio, ssd_expand, depth");
    if (t_final < 0) throw InvalidConfig("schedule: negative final budget");
}

ProgressiveSchedule ProgressiveSchedule::paper_layout(const SearchSpace& space,
                                                      int t_initial, int t_adapt,
                                                      int t_joint, int t_final) {
    space.check();
    ProgressiveSchedule sched;
    sched.t_final = t_final;

    SchedulePhase phase;
    phase.id = 0;
    phase.d_state_active = {space.max_d_state()};
    phase.ssd_active = {space.max_ssd_expand()};
    phase.mlp_active = {space.max_mlp_ratio()};
    phase.depth_unlocked = false;
    phase.t_adapt = 0;
    phase.t_joint = t_initial;
    sched.phases.push_back(phase);

    int next_id = 1;
    auto push_phase = [&](SchedulePhase p) {
        p.id = next_id++;
        p.t_adapt = t_adapt;
        p.t_joint = t_joint;
        sched.phases.push_back(std::move(p));
    };

    // Each continuous dimension unlocks the top half of its candidate list
    // first, then the full list.
    auto unlock = [&]<typename T>(const std::vector<T>& cands,
                                  std::vector<T> SchedulePhase::* active,
                                  std::vector<T> SchedulePhase::* added) {
        if (cands.size() < 2) return;
        auto emit = [&](std::vector<T> target_active) {
            SchedulePhase p = sched.phases.back();
            p.d_state_new.clear();
            p.ssd_new.clear();
            p.mlp_new.clear();
            p.depth_new = false;
            std::vector<T> fresh;
            for (const T& v : target_active)
                if (std::find((p.*active).begin(), (p.*active).end(), v) ==
                    (p.*active).end())
                    fresh.push_back(v);
            if (fresh.empty()) return;
            p.*active = std::move(target_active);
            p.*added = std::move(fresh);
            push_phase(std::move(p));
        };
        const std::size_t half = (cands.size() + 1) / 2;
        if (half >= 2 && half < cands.size()) emit(top_values(cands, half));
        emit(cands);
    };

    unlock(space.d_state_candidates, &SchedulePhase::d_state_active,
           &SchedulePhase::d_state_new);
    unlock(space.mlp_ratio_candidates, &SchedulePhase::mlp_active,
           &SchedulePhase::mlp_new);
    unlock(space.ssd_expand_candidates, &SchedulePhase::ssd_active,
           &SchedulePhase::ssd_new);

    const bool any_depth = std::any_of(space.max_depth_per_stage.begin(),
                                       space.max_depth_per_stage.end(),
                                       [](int d) { return d > 1; });
    if (any_depth) {
        SchedulePhase p = sched.phases.back();
        p.d_state_new.clear();
        p.ssd_new.clear();
        p.mlp_new.clear();
        p.depth_unlocked = true;
        p.depth_new = true;
        push_phase(p);
    }

    sched.check(space);
    return sched;
}

namespace {

TrainableMask full_mask(const SchedulePhase& phase, const SearchSpace& space) {
    TrainableMask mask;
    mask.d_state_cap = *std::max_element(phase.d_state_active.begin(),
                                         phase.d_state_active.end());
    mask.ssd_cap = *std::max_element(phase.ssd_active.begin(), phase.ssd_active.end());
    mask.mlp_cap = *std::max_element(phase.mlp_active.begin(), phase.mlp_active.end());
    mask.depth_cap = space.max_depth_per_stage;
    return mask;
}

} // namespace

ActiveSets active_sets(const ProgressiveSchedule& schedule,
                       const SearchSpace& space, int global_iter) {
    if (global_iter < 0) throw InvalidInput("active_sets: negative iteration");
    int cursor = 0;
    for (const SchedulePhase& phase : schedule.phases) {
        const int span = phase.t_adapt + phase.t_joint;
        if (global_iter < cursor + span) {
            ActiveSets out;
            out.phase_id = phase.id;
            out.d_state = phase.d_state_active;
            out.ssd_expand = phase.ssd_active;
            out.mlp_ratio = phase.mlp_active;
            out.depth_unlocked = phase.depth_unlocked;
            const bool adapting = (global_iter - cursor) < phase.t_adapt;
            out.mode = adapting ? TrainMode::Adapt : TrainMode::Joint;
            out.mask = full_mask(phase, space);
            if (adapting) {
                // Restrict updates to the extents reachable by the newly
                // introduced configurations.
                if (!phase.d_state_new.empty())
                    out.mask.d_state_cap = *std::max_element(phase.d_state_new.begin(),
                                                             phase.d_state_new.end());
                if (!phase.ssd_new.empty())
                    out.mask.ssd_cap = *std::max_element(phase.ssd_new.begin(),
                                                         phase.ssd_new.end());
                if (!phase.mlp_new.empty())
                    out.mask.mlp_cap = *std::max_element(phase.mlp_new.begin(),
                                                         phase.mlp_new.end());
                if (phase.depth_new)
                    for (int& cap : out.mask.depth_cap) cap = std::max(1, cap - 1);
            }
            return out;
        }
        cursor += span;
    }
    // Past the last phase: final convergence mode over the full sets.
    const SchedulePhase& last = schedule.phases.back();
    ActiveSets out;
    out.phase_id = last.id;
    out.mode = TrainMode::Final;
    out.d_state = last.d_state_active;
    out.ssd_expand = last.ssd_active;
    out.mlp_ratio = last.mlp_active;
    out.depth_unlocked = last.depth_unlocked;
    out.mask = full_mask(last, space);
    return out;
}

ArchConfig sample_uniform(const ActiveSets& active, const SearchSpace& space,
                          Rng& rng) {
    ArchConfig cfg;
    cfg.stages.resize(space.num_stages);
    for (int s = 0; s < space.num_stages; ++s) {
        StageConfig& st = cfg.stages[s];
        st.d_state = active.d_state[rng.uniform_index(active.d_state.size())];
        st.ssd_expand = active.ssd_expand[rng.uniform_index(active.ssd_expand.size())];
        st.mlp_ratio = active.mlp_ratio[rng.uniform_index(active.mlp_ratio.size())];
        st.depth = active.depth_unlocked
                       ? rng.uniform_int(1, space.max_depth_per_stage[s])
                       : space.max_depth_per_stage[s];
    }
    return cfg;
}

namespace {

void zero_outside_topleft(MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
    if (rows < m.rows()) m.bottomRows(m.rows() - rows).setZero();
    if (cols < m.cols()) m.topRows(rows).rightCols(m.cols() - cols).setZero();
}

} // namespace

void apply_mask(SupernetParams& grads, const TrainableMask& mask) {
    const SupernetDims& dims = grads.dims;
    for (int s = 0; s < dims.num_stages(); ++s) {
        const int d = dims.d_model[s];
        const int n_cap = std::min(mask.d_state_cap, dims.d_state_max);
        const int e_cap = std::min(scaled_dim(mask.ssd_cap, d), dims.e_max[s]);
        const int h_cap = std::min(scaled_dim(mask.mlp_cap, d), dims.h_max[s]);
        const int depth_cap = mask.depth_cap.empty()
                                  ? dims.max_depth[s]
                                  : std::min(mask.depth_cap[s], dims.max_depth[s]);
        for (int b = 0; b < dims.max_depth[s]; ++b) {
            BlockParams& blk = grads.stages[s].blocks[b];
            if (b >= depth_cap) {
                blk.state_transition.setZero();
                blk.write_proj.setZero();
                blk.read_proj.setZero();
                blk.content_proj.setZero();
                blk.mlp_in.setZero();
                blk.mlp_out.setZero();
                continue;
            }
            zero_outside_topleft(blk.state_transition, n_cap, n_cap);
            zero_outside_topleft(blk.write_proj, n_cap, e_cap);
            zero_outside_topleft(blk.read_proj, d, n_cap);
            zero_outside_topleft(blk.content_proj, e_cap, d);
            zero_outside_topleft(blk.mlp_in, h_cap, d);
            zero_outside_topleft(blk.mlp_out, d, h_cap);
        }
    }
}

// --- training step ---

void LossWeights::check() const {
    if (!(theta >= 0.0 && theta <= 1.0))
        throw InvalidWeights("loss_weights.theta must lie in [0, 1]");
    if (alpha1 < 0.0 || alpha2 < 0.0)
        throw InvalidWeights("loss_weights.alpha must be nonnegative");
}

StepResult compute_loss_and_grads(const SupernetParams& params,
                                  const ArchConfig& cfg, const MicroTask& task,
                                  std::span<const int> batch_indices,
                                  const LossSpec& loss, SupernetParams* grads) {
    loss.weights.check();
    if (loss.kind == StageKind::Finetune && loss.teacher == nullptr &&
        (loss.weights.theta != 0.0 || loss.weights.alpha1 != 0.0 ||
         loss.weights.alpha2 != 0.0))
        throw InvalidConfig("finetune with distillation terms requires a teacher");
    if (batch_indices.empty()) throw InvalidInput("empty training batch");

    const double inv_b = 1.0 / static_cast<double>(batch_indices.size());
    StepResult res;

    for (int idx : batch_indices) {
        const MatrixXd& input = task.train_inputs.at(idx);
        const VectorXd& target = task.train_targets.at(idx);
        ForwardCache cache;
        const ForwardResult fwd = forward(params, cfg, input, &cache);

        if (loss.kind == StageKind::Pretrain) {
            const double y = classification_label(target);
            const double z = -y * fwd.cls_logit;
            // softplus(z), computed without overflow
            const double item = z > 0 ? z + std::log1p(std::exp(-z))
                                      : std::log1p(std::exp(z));
            res.loss += item * inv_b;
            if (grads) {
                OutputGrads og;
                og.d_cls_logit = -y / (1.0 + std::exp(-z)) * inv_b;
                backward(params, cfg, input, cache, og, *grads);
            }
            continue;
        }

        if (loss.teacher == nullptr) {
            // Ground-truth supervision alone (baseline strategies).
            if (fwd.prediction.size() != target.size())
                throw ShapeError("train: prediction/target size mismatch");
            const double l_gt = mse_loss(fwd.prediction, target);
            res.l_gt += l_gt * inv_b;
            res.loss += l_gt * inv_b;
            if (grads) {
                OutputGrads og;
                og.d_prediction = mse_loss_backward(fwd.prediction, target) * inv_b;
                backward(params, cfg, input, cache, og, *grads);
            }
            continue;
        }

        const TeacherOutput teacher = loss.teacher->evaluate(input);
        TokenGrid student{fwd.tokens, params.dims.token_side(),
                          params.dims.token_side()};
        ProjectionCache pcache;
        const TokenGrid projected = project_tokens(
            student, params.proj_queries, params.proj_key, params.proj_value,
            params.proj_out, teacher.tokens.rows, teacher.tokens.cols, &pcache);

        if (fwd.prediction.size() != target.size())
            throw ShapeError("train: prediction/target size mismatch");
        const double l_gt = mse_loss(fwd.prediction, target);
        const double l_pseudo = pseudo_loss(fwd.prediction, teacher.prediction);
        const double l_spat = spatial_loss(projected, teacher.tokens);
        const double l_freq = freq_loss(projected, teacher.tokens);
        const double item =
            total_loss(l_gt, l_pseudo, l_spat, l_freq, loss.weights);

        res.l_gt += l_gt * inv_b;
        res.l_pseudo += l_pseudo * inv_b;
        res.l_spat += l_spat * inv_b;
        res.l_freq += l_freq * inv_b;
        res.loss += item * inv_b;

        if (grads) {
            const LossWeights& w = loss.weights;
            OutputGrads og;
            og.d_prediction =
                ((1.0 - w.theta) * mse_loss_backward(fwd.prediction, target) +
                 w.theta * pseudo_loss_backward(fwd.prediction, teacher.prediction)) *
                inv_b;
            MatrixXd d_projected =
                (w.alpha1 * spatial_loss_backward(projected, teacher.tokens) +
                 w.alpha2 * freq_loss_backward(projected, teacher.tokens)) *
                inv_b;
            const ProjectionGrads pg = project_tokens_backward(
                student, params.proj_queries, params.proj_key, params.proj_value,
                params.proj_out, pcache, d_projected);
            grads->proj_queries += pg.d_queries;
            grads->proj_key += pg.d_key;
            grads->proj_value += pg.d_value;
            grads->proj_out += pg.d_out;
            og.d_tokens = pg.d_student;
            backward(params, cfg, input, cache, og, *grads);
        }
    }
    return res;
}

StepResult train_step(SupernetParams& params, const ArchConfig& cfg,
                      const MicroTask& task, std::span<const int> batch_indices,
                      const LossSpec& loss, double lr, const TrainableMask& mask) {
    SupernetParams grads = zeros_like(params);
    const StepResult res =
        compute_loss_and_grads(params, cfg, task, batch_indices, loss, &grads);
    if (!std::isfinite(res.loss)) {
        std::ostringstream os;
        os << "train_step diverged: loss=" << res.loss << " gt=" << res.l_gt
           << " pseudo=" << res.l_pseudo << " spat=" << res.l_spat
           << " freq=" << res.l_freq;
        throw DivergenceError(os.str());
    }
    if (lr == 0.0) return res;

    apply_mask(grads, mask);

    std::vector<MatrixXd*> targets, sources;
    for_each_tensor(params, [&](const std::string&, MatrixXd& m) { targets.push_back(&m); });
    for_each_tensor(grads, [&](const std::string&, MatrixXd& m) { sources.push_back(&m); });
    for (std::size_t i = 0; i < targets.size(); ++i)
        *targets[i] -= lr * (*sources[i]);
    return res;
}

} // namespace evonas

