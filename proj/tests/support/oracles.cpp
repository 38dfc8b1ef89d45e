#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace evonas::oracle {

std::vector<std::vector<int>> brute_force_fronts(const FitnessMatrix& F) {
    std::vector<std::vector<int>> fronts;
    std::set<int> remaining;
    for (int i = 0; i < static_cast<int>(F.size()); ++i) remaining.insert(i);
    while (!remaining.empty()) {
        std::vector<int> front;
        for (int i : remaining) {
            bool dominated = false;
            for (int j : remaining) {
                if (i != j && dominates(F.rows[j], F.rows[i])) {
                    dominated = true;
                    break;
                }
            }
            if (!dominated) front.push_back(i);
        }
        for (int i : front) remaining.erase(i);
        fronts.push_back(std::move(front));
    }
    return fronts;
}

std::vector<int> brute_force_pareto(const FitnessMatrix& F) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(F.size()); ++i) {
        bool dominated = false;
        for (int j = 0; j < static_cast<int>(F.size()); ++j)
            if (i != j && dominates(F.rows[j], F.rows[i])) {
                dominated = true;
                break;
            }
        if (!dominated) out.push_back(i);
    }
    return out;
}

std::vector<double> crowding_by_definition(
    const std::vector<ObjectiveVector>& front) {
    const int n = static_cast<int>(front.size());
    std::vector<double> d(n, 0.0);
    if (n <= 2) return std::vector<double>(n, kInfinity);
    for (int k = 0; k < 3; ++k) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double va = front[a].values()[k];
            const double vb = front[b].values()[k];
            if (va != vb) return va < vb;
            return a < b;
        });
        d[order.front()] = kInfinity;
        d[order.back()] = kInfinity;
        const double width =
            front[order.back()].values()[k] - front[order.front()].values()[k];
        if (width <= 0.0) continue;
        for (int i = 1; i + 1 < n; ++i) {
            if (d[order[i]] == kInfinity) continue;
            d[order[i]] += (front[order[i + 1]].values()[k] -
                            front[order[i - 1]].values()[k]) /
                           width;
        }
    }
    return d;
}

std::vector<int> nsga2_selection(const FitnessMatrix& F, int n_survivors) {
    const auto fronts = brute_force_fronts(F);
    std::vector<int> selected;
    for (const auto& front : fronts) {
        if (static_cast<int>(selected.size() + front.size()) <= n_survivors) {
            selected.insert(selected.end(), front.begin(), front.end());
            continue;
        }
        std::vector<ObjectiveVector> objs;
        for (int i : front) objs.push_back(F.rows[i]);
        const auto crowd = crowding_by_definition(objs);
        std::vector<int> order(front.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (crowd[a] != crowd[b]) return crowd[a] > crowd[b];
            return front[a] < front[b];
        });
        for (int i = 0; static_cast<int>(selected.size()) < n_survivors; ++i)
            selected.push_back(front[order[i]]);
        break;
    }
    return selected;
}

McEstimate mc_hypervolume(const std::vector<std::vector<double>>& points,
                          const std::vector<double>& ref, int samples,
                          std::uint64_t seed) {
    const std::size_t dim = ref.size();
    std::vector<std::vector<double>> pts;
    for (const auto& p : points) {
        bool ok = true;
        for (std::size_t k = 0; k < dim; ++k)
            if (!(p[k] < ref[k])) ok = false;
        if (ok) pts.push_back(p);
    }
    McEstimate est;
    if (pts.empty()) return est;

    std::vector<double> lo(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        lo[k] = pts.front()[k];
        for (const auto& p : pts) lo[k] = std::min(lo[k], p[k]);
    }
    double box = 1.0;
    for (std::size_t k = 0; k < dim; ++k) box *= ref[k] - lo[k];

    Rng rng(seed);
    std::vector<double> x(dim);
    int hits = 0;
    for (int s = 0; s < samples; ++s) {
        for (std::size_t k = 0; k < dim; ++k) x[k] = rng.uniform(lo[k], ref[k]);
        for (const auto& p : pts) {
            bool dominated = true;
            for (std::size_t k = 0; k < dim; ++k)
                if (!(p[k] <= x[k])) {
                    dominated = false;
                    break;
                }
            if (dominated) {
                ++hits;
                break;
            }
        }
    }
    const double frac = static_cast<double>(hits) / samples;
    est.volume = frac * box;
    est.sigma = box * std::sqrt(frac * (1.0 - frac) / samples);
    return est;
}

Eigen::MatrixXd dct2_definition(const Eigen::MatrixXd& x) {
    const int rows = static_cast<int>(x.rows());
    const int cols = static_cast<int>(x.cols());
    const double pi = 3.14159265358979323846;
    Eigen::MatrixXd y(rows, cols);
    for (int u = 0; u < rows; ++u) {
        for (int v = 0; v < cols; ++v) {
            double sum = 0.0;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    sum += x(i, j) * std::cos(pi * (2 * i + 1) * u / (2.0 * rows)) *
                           std::cos(pi * (2 * j + 1) * v / (2.0 * cols));
            const double su = (u == 0) ? std::sqrt(1.0 / rows) : std::sqrt(2.0 / rows);
            const double sv = (v == 0) ? std::sqrt(1.0 / cols) : std::sqrt(2.0 / cols);
            y(u, v) = su * sv * sum;
        }
    }
    return y;
}

namespace {

// Naive matrix-vector multiply, counting each scalar multiply-accumulate.
Eigen::VectorXd matvec_counted(const Eigen::MatrixXd& m, const Eigen::VectorXd& v,
                               std::int64_t& macs) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out(r) += m(r, c) * v(c);
            ++macs;
        }
    return out;
}

} // namespace

std::int64_t instrumented_mac_count(const SupernetParams& params,
                                    const ArchConfig& cfg,
                                    const Eigen::MatrixXd& input_grid) {
    const SupernetDims& dims = params.dims;
    const auto ext = active_extents(dims, cfg);
    const int P = dims.tokens();
    const int p = dims.patch_size;
    const int side = dims.token_side();
    std::int64_t macs = 0;

    // Patch embedding.
    std::vector<Eigen::VectorXd> tokens(P);
    for (int t = 0; t < P; ++t) {
        const int pr = t / side, pc = t % side;
        Eigen::MatrixXd patch = input_grid.block(pr * p, pc * p, p, p);
        const Eigen::Map<const Eigen::VectorXd> flat(patch.data(), patch.size());
        tokens[t] = matvec_counted(params.patch_embed, flat, macs);
    }

    for (int s = 0; s < dims.num_stages(); ++s) {
        const StageExtents& e = ext[s];
        for (int b = 0; b < e.depth; ++b) {
            const BlockParams& blk = params.stages[s].blocks[b];
            const Eigen::MatrixXd A = blk.state_transition.topLeftCorner(e.n, e.n);
            const Eigen::MatrixXd B = blk.write_proj.topLeftCorner(e.n, e.e);
            const Eigen::MatrixXd R =
                blk.read_proj.topLeftCorner(dims.d_model[s], e.n);
            const Eigen::MatrixXd X =
                blk.content_proj.topLeftCorner(e.e, dims.d_model[s]);
            const Eigen::MatrixXd W1 = blk.mlp_in.topLeftCorner(e.h, dims.d_model[s]);
            const Eigen::MatrixXd W2 = blk.mlp_out.topLeftCorner(dims.d_model[s], e.h);

            Eigen::VectorXd h = Eigen::VectorXd::Zero(e.n);
            for (int t = 0; t < P; ++t) {
                const Eigen::VectorXd content = matvec_counted(X, tokens[t], macs);
                h = matvec_counted(A, h, macs) + matvec_counted(B, content, macs);
                const Eigen::VectorXd read = matvec_counted(R, h, macs);
                const Eigen::VectorXd resid = tokens[t] + read;
                const Eigen::VectorXd act =
                    matvec_counted(W1, resid, macs).array().tanh();
                tokens[t] = resid + matvec_counted(W2, act, macs);
            }
        }
        if (s + 1 < dims.num_stages())
            for (int t = 0; t < P; ++t)
                tokens[t] = matvec_counted(params.stages[s].transition, tokens[t], macs);
    }

    // Attention: qkv, scores, context, output projection.
    const int dl = dims.d_last();
    std::vector<Eigen::VectorXd> q(P), k(P), v(P);
    for (int t = 0; t < P; ++t) {
        q[t] = matvec_counted(params.attn_wq, tokens[t], macs);
        k[t] = matvec_counted(params.attn_wk, tokens[t], macs);
        v[t] = matvec_counted(params.attn_wv, tokens[t], macs);
    }
    Eigen::MatrixXd scores(P, P);
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
            double dot = 0.0;
            for (int c = 0; c < dl; ++c) {
                dot += q[i](c) * k[j](c);
                ++macs;
            }
            scores(i, j) = dot / std::sqrt(double(dl));
        }
    for (int i = 0; i < P; ++i) {
        const double mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
    }
    std::vector<Eigen::VectorXd> ctx(P, Eigen::VectorXd::Zero(dl));
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j)
            for (int c = 0; c < dl; ++c) {
                ctx[i](c) += scores(i, j) * v[j](c);
                ++macs;
            }
    for (int t = 0; t < P; ++t)
        tokens[t] = tokens[t] + matvec_counted(params.attn_wo, ctx[t], macs);

    // Heads.
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(dl);
    for (int t = 0; t < P; ++t) {
        double pred = params.task_head_b(0, 0);
        for (int c = 0; c < dl; ++c) {
            pred += params.task_head_w(c, 0) * tokens[t](c);
            ++macs;
        }
        pooled += tokens[t];
    }
    pooled /= P;
    double logit = params.cls_head_b(0, 0);
    for (int c = 0; c < dl; ++c) {
        logit += params.cls_head_w(c, 0) * pooled(c);
        ++macs;
    }
    (void)logit;
    return macs;
}

SupernetParams finite_difference_gradients(const SupernetParams& params,
                                           const ArchConfig& cfg,
                                           const MicroTask& task,
                                           std::vector<int> batch,
                                           const LossSpec& loss, double h) {
    SupernetParams work = params;
    SupernetParams grads = zeros_like(params);

    std::vector<Eigen::MatrixXd*> tensors;
    for_each_tensor(work, [&](const std::string&, Eigen::MatrixXd& m) {
        tensors.push_back(&m);
    });
    std::vector<Eigen::MatrixXd*> grad_tensors;
    for_each_tensor(grads, [&](const std::string&, Eigen::MatrixXd& m) {
        grad_tensors.push_back(&m);
    });

    for (std::size_t t = 0; t < tensors.size(); ++t) {
        Eigen::MatrixXd& m = *tensors[t];
        Eigen::MatrixXd& g = *grad_tensors[t];
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const double saved = m(r, c);
                m(r, c) = saved + h;
                const double up =
                    compute_loss_and_grads(work, cfg, task, batch, loss, nullptr)
                        .loss;
                m(r, c) = saved - h;
                const double down =
                    compute_loss_and_grads(work, cfg, task, batch, loss, nullptr)
                        .loss;
                m(r, c) = saved;
                g(r, c) = (up - down) / (2.0 * h);
            }
        }
    }
    return grads;
}

} // namespace evonas::oracle
