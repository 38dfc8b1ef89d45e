#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "evonas/errors.hpp"
#include "evonas/microtask.hpp"
#include "evonas/supernet.hpp"

namespace evonas {

// Dense token matrix plus its spatial layout (rows * cols == token count).
struct TokenGrid {
    MatrixXd tokens; // n_tokens x token_dim
    int rows = 0;
    int cols = 0;

    int count() const { return static_cast<int>(tokens.rows()); }
    int dim() const { return static_cast<int>(tokens.cols()); }
    void check_shape() const; // throws MissingShape when rows*cols != count
};

// --- spectral ops ---

// Orthonormal 2D type-II DCT (separable); idct2 is its exact inverse.
MatrixXd dct2(const MatrixXd& x);
MatrixXd idct2(const MatrixXd& y);

// Gradient of dct2: maps an upstream spectrum gradient back to the spatial
// domain (the transpose map, which equals idct2 by orthonormality).
MatrixXd dct2_backward(const MatrixXd& d_spectrum);

// Zeroes the (0,0) coefficient; all others unchanged.
MatrixXd suppress_dc(const MatrixXd& spectrum);

// Optional radial high-pass mask: keeps coefficients with normalized radial
// frequency >= cutoff (DC always dropped). cutoff <= 0 reduces to
// suppress_dc alone.
MatrixXd highpass_mask(int rows, int cols, double cutoff);

// --- token projection ---

struct ProjectionCache {
    MatrixXd keys;    // d_a x P_s
    MatrixXd values;  // d_a x P_s
    MatrixXd weights; // P_t x P_s row-stochastic
    MatrixXd ctx;     // d_a x P_t
};

// Single-head scaled dot-product cross-attention: learnable queries attend
// over the student tokens and re-shape them onto the teacher token layout.
TokenGrid project_tokens(const TokenGrid& student, const MatrixXd& queries,
                         const MatrixXd& key_proj, const MatrixXd& value_proj,
                         const MatrixXd& out_proj, int out_rows, int out_cols,
                         ProjectionCache* cache = nullptr);

struct ProjectionGrads {
    MatrixXd d_student; // n_tokens x token_dim
    MatrixXd d_queries, d_key, d_value, d_out;
};

ProjectionGrads project_tokens_backward(
    const TokenGrid& student, const MatrixXd& queries, const MatrixXd& key_proj,
    const MatrixXd& value_proj, const MatrixXd& out_proj,
    const ProjectionCache& cache, const MatrixXd& d_projected);

// --- losses (all mean-over-elements, nonnegative) ---

double spatial_loss(const TokenGrid& student_proj, const TokenGrid& teacher);
MatrixXd spatial_loss_backward(const TokenGrid& student_proj,
                               const TokenGrid& teacher);

// Per token-channel: reshape to (rows, cols), dct2, drop DC (plus optional
// high-pass cutoff), MSE between spectra, averaged over channels.
double freq_loss(const TokenGrid& student_proj, const TokenGrid& teacher,
                 double highpass_cutoff = 0.0);
MatrixXd freq_loss_backward(const TokenGrid& student_proj,
                            const TokenGrid& teacher,
                            double highpass_cutoff = 0.0);

double pseudo_loss(const VectorXd& student_pred, const VectorXd& teacher_pred);
VectorXd pseudo_loss_backward(const VectorXd& student_pred,
                              const VectorXd& teacher_pred);

// Task ground-truth losses for the micro-task.
double mse_loss(const VectorXd& pred, const VectorXd& target);
VectorXd mse_loss_backward(const VectorXd& pred, const VectorXd& target);

// Scale-invariant logarithmic loss (optional task loss; standard
// formulation with variance focus lambda).
double silog_loss(const VectorXd& pred, const VectorXd& target,
                  double lambda = 0.5, double eps = 1e-6);

// (1-theta) * l_gt + theta * l_pseudo + alpha1 * l_spat + alpha2 * l_freq
double total_loss(double l_gt, double l_pseudo, double l_spat, double l_freq,
                  const LossWeights& w);

// --- teacher ---

struct TeacherSpec {
    int grid_size = 16;
    int token_rows = 4;
    int token_cols = 4;
    int token_dim = 64;
    int hidden = 128;
    int prediction_values = 16;
    std::uint64_t seed = 1;

    bool operator==(const TeacherSpec&) const = default;
};

struct TeacherOutput {
    TokenGrid tokens;
    VectorXd prediction;
};

// Frozen synthetic teacher: seed-determined two-layer token network with a
// linear prediction head. Read-only after construction; safe to share
// across evaluation workers.
class TeacherModel {
public:
    explicit TeacherModel(const TeacherSpec& spec);

    TeacherOutput evaluate(const MatrixXd& input_grid) const;
    const TeacherSpec& spec() const { return spec_; }

private:
    TeacherSpec spec_;
    MatrixXd w1_;     // hidden x grid^2
    MatrixXd w2_;     // (tokens*dim) x hidden
    MatrixXd head_w_; // prediction_values x (tokens*dim)
};

} // namespace evonas
