#include "evonas/distill.hpp"

#include <cmath>

namespace evonas {

void TokenGrid::check_shape() const {
    if (rows < 1 || cols < 1 || rows * cols != count())
        throw MissingShape("token grid: rows*cols must equal token count");
}

// --- spectral ops ---

namespace {

constexpr double kPi = 3.14159265358979323846;

// Orthonormal type-II DCT matrix: D(k,n) = s_k cos(pi (2n+1) k / 2N).
MatrixXd dct_matrix(int n) {
    MatrixXd d(n, n);
    const double s0 = std::sqrt(1.0 / n);
    const double sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            d(k, j) = (k == 0 ? s0 : sk) * std::cos(kPi * (2 * j + 1) * k / (2.0 * n));
    return d;
}

} // namespace

MatrixXd dct2(const MatrixXd& x) {
    const MatrixXd dr = dct_matrix(static_cast<int>(x.rows()));
    const MatrixXd dc = dct_matrix(static_cast<int>(x.cols()));
    return dr * x * dc.transpose();
}

MatrixXd idct2(const MatrixXd& y) {
    const MatrixXd dr = dct_matrix(static_cast<int>(y.rows()));
    const MatrixXd dc = dct_matrix(static_cast<int>(y.cols()));
    return dr.transpose() * y * dc;
}

MatrixXd dct2_backward(const MatrixXd& d_spectrum) { return idct2(d_spectrum); }

MatrixXd suppress_dc(const MatrixXd& spectrum) {
    MatrixXd out = spectrum;
    out(0, 0) = 0.0;
    return out;
}

MatrixXd highpass_mask(int rows, int cols, double cutoff) {
    MatrixXd mask = MatrixXd::Ones(rows, cols);
    mask(0, 0) = 0.0;
    if (cutoff <= 0.0) return mask;
    const double rn = std::max(1, rows - 1);
    const double cn = std::max(1, cols - 1);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const double r = std::sqrt((i / rn) * (i / rn) + (j / cn) * (j / cn)) /
                             std::sqrt(2.0);
            if (r < cutoff) mask(i, j) = 0.0;
        }
    mask(0, 0) = 0.0;
    return mask;
}

// --- token projection ---

namespace {

void softmax_rows_inplace(MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

} // namespace

TokenGrid project_tokens(const TokenGrid& student, const MatrixXd& queries,
                         const MatrixXd& key_proj, const MatrixXd& value_proj,
                         const MatrixXd& out_proj, int out_rows, int out_cols,
                         ProjectionCache* cache) {
    const Eigen::Index d_s = student.tokens.cols();
    const Eigen::Index d_a = queries.cols();
    if (key_proj.cols() != d_s || value_proj.cols() != d_s ||
        key_proj.rows() != d_a || value_proj.rows() != d_a ||
        out_proj.cols() != d_a)
        throw ShapeError("project_tokens: projection shapes inconsistent");
    if (queries.rows() != static_cast<Eigen::Index>(out_rows) * out_cols)
        throw ShapeError("project_tokens: query count != output token count");

    ProjectionCache local;
    ProjectionCache& c = cache ? *cache : local;

    const MatrixXd st = student.tokens.transpose(); // d_s x P_s
    c.keys = key_proj * st;
    c.values = value_proj * st;
    c.weights = (queries * c.keys) / std::sqrt(static_cast<double>(d_a));
    softmax_rows_inplace(c.weights);
    c.ctx = c.values * c.weights.transpose(); // d_a x P_t

    TokenGrid out;
    out.tokens = (out_proj * c.ctx).transpose(); // P_t x D_T
    out.rows = out_rows;
    out.cols = out_cols;
    return out;
}

ProjectionGrads project_tokens_backward(
    const TokenGrid& student, const MatrixXd& queries, const MatrixXd& key_proj,
    const MatrixXd& value_proj, const MatrixXd& out_proj,
    const ProjectionCache& cache, const MatrixXd& d_projected) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    const MatrixXd st = student.tokens.transpose(); // d_s x P_s

    ProjectionGrads g;
    const MatrixXd d_out_cols = d_projected.transpose(); // D_T x P_t
    g.d_out = d_out_cols * cache.ctx.transpose();
    const MatrixXd d_ctx = out_proj.transpose() * d_out_cols; // d_a x P_t
    const MatrixXd d_values = d_ctx * cache.weights;           // d_a x P_s
    MatrixXd d_w = d_ctx.transpose() * cache.values;           // P_t x P_s
    for (Eigen::Index i = 0; i < d_w.rows(); ++i) {
        const double dot = d_w.row(i).dot(cache.weights.row(i));
        d_w.row(i) = (d_w.row(i).array() - dot) * cache.weights.row(i).array();
    }
    g.d_queries = d_w * cache.keys.transpose() * inv_sqrt;
    const MatrixXd d_keys = queries.transpose() * d_w * inv_sqrt; // d_a x P_s
    g.d_key = d_keys * st.transpose();
    g.d_value = d_values * st.transpose();
    g.d_student =
        (key_proj.transpose() * d_keys + value_proj.transpose() * d_values)
            .transpose();
    return g;
}

// --- losses ---

namespace {

void require_same_shape(const TokenGrid& a, const TokenGrid& b) {
    if (a.tokens.rows() != b.tokens.rows() || a.tokens.cols() != b.tokens.cols())
        throw ShapeError("token grids differ in shape");
}

// Token channel c as its (rows x cols) spatial map; tokens are laid out
// row-major over the grid.
MatrixXd channel_map(const TokenGrid& g, int channel) {
    MatrixXd m(g.rows, g.cols);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) m(r, c) = g.tokens(r * g.cols + c, channel);
    return m;
}

} // namespace

double spatial_loss(const TokenGrid& student_proj, const TokenGrid& teacher) {
    require_same_shape(student_proj, teacher);
    const auto diff = student_proj.tokens - teacher.tokens;
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

MatrixXd spatial_loss_backward(const TokenGrid& student_proj,
                               const TokenGrid& teacher) {
    require_same_shape(student_proj, teacher);
    return 2.0 * (student_proj.tokens - teacher.tokens) /
           static_cast<double>(student_proj.tokens.size());
}

double freq_loss(const TokenGrid& student_proj, const TokenGrid& teacher,
                 double highpass_cutoff) {
    require_same_shape(student_proj, teacher);
    student_proj.check_shape();
    teacher.check_shape();
    const int channels = student_proj.dim();
    const MatrixXd mask =
        highpass_mask(student_proj.rows, student_proj.cols, highpass_cutoff);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const MatrixXd ds = dct2(channel_map(student_proj, c)).cwiseProduct(mask);
        const MatrixXd dt = dct2(channel_map(teacher, c)).cwiseProduct(mask);
        total += (ds - dt).squaredNorm() / static_cast<double>(ds.size());
    }
    return total / channels;
}

MatrixXd freq_loss_backward(const TokenGrid& student_proj,
                            const TokenGrid& teacher, double highpass_cutoff) {
    require_same_shape(student_proj, teacher);
    student_proj.check_shape();
    teacher.check_shape();
    const int channels = student_proj.dim();
    const int hw = student_proj.rows * student_proj.cols;
    const MatrixXd mask =
        highpass_mask(student_proj.rows, student_proj.cols, highpass_cutoff);
    MatrixXd d_tokens = MatrixXd::Zero(student_proj.count(), channels);
    const double scale = 2.0 / (static_cast<double>(hw) * channels);
    for (int c = 0; c < channels; ++c) {
        const MatrixXd ds = dct2(channel_map(student_proj, c)).cwiseProduct(mask);
        const MatrixXd dt = dct2(channel_map(teacher, c)).cwiseProduct(mask);
        const MatrixXd d_spec = scale * (ds - dt).cwiseProduct(mask);
        const MatrixXd d_map = dct2_backward(d_spec);
        for (int r = 0; r < student_proj.rows; ++r)
            for (int cc = 0; cc < student_proj.cols; ++cc)
                d_tokens(r * student_proj.cols + cc, c) = d_map(r, cc);
    }
    return d_tokens;
}

double pseudo_loss(const VectorXd& student_pred, const VectorXd& teacher_pred) {
    if (student_pred.size() != teacher_pred.size())
        throw ShapeError("pseudo_loss: prediction sizes differ");
    return (student_pred - teacher_pred).squaredNorm() /
           static_cast<double>(student_pred.size());
}

VectorXd pseudo_loss_backward(const VectorXd& student_pred,
                              const VectorXd& teacher_pred) {
    if (student_pred.size() != teacher_pred.size())
        throw ShapeError("pseudo_loss: prediction sizes differ");
    return 2.0 * (student_pred - teacher_pred) /
           static_cast<double>(student_pred.size());
}

double mse_loss(const VectorXd& pred, const VectorXd& target) {
    if (pred.size() != target.size())
        throw ShapeError("mse_loss: prediction/target sizes differ");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

VectorXd mse_loss_backward(const VectorXd& pred, const VectorXd& target) {
    if (pred.size() != target.size())
        throw ShapeError("mse_loss: prediction/target sizes differ");
    return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

double silog_loss(const VectorXd& pred, const VectorXd& target, double lambda,
                  double eps) {
    if (pred.size() != target.size())
        throw ShapeError("silog_loss: prediction/target sizes differ");
    const auto clamp_log = [eps](double v) { return std::log(std::max(v, eps)); };
    const Eigen::Index n = pred.size();
    double sum = 0.0, sum_sq = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = clamp_log(pred(i)) - clamp_log(target(i));
        sum += d;
        sum_sq += d * d;
    }
    const double mean = sum / n;
    return sum_sq / n - lambda * mean * mean;
}

double total_loss(double l_gt, double l_pseudo, double l_spat, double l_freq,
                  const LossWeights& w) {
    w.check();
    return (1.0 - w.theta) * l_gt + w.theta * l_pseudo + w.alpha1 * l_spat +
           w.alpha2 * l_freq;
}

// --- teacher ---

TeacherModel::TeacherModel(const TeacherSpec& spec) : spec_(spec) {
    if (spec.grid_size < 1 || spec.token_rows < 1 || spec.token_cols < 1 ||
        spec.token_dim < 1 || spec.hidden < 1 || spec.prediction_values < 1)
        throw InvalidConfig("teacher: sizes must be positive");
    Rng rng(Rng::derive(spec.seed, 0x7EAC));
    const int in_dim = spec.grid_size * spec.grid_size;
    const int token_total = spec.token_rows * spec.token_cols * spec.token_dim;
    auto init = [&](MatrixXd& m, int rows, int cols) {
        m.resize(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
    };
    init(w1_, spec.hidden, in_dim);
    init(w2_, token_total, spec.hidden);
    init(head_w_, spec.prediction_values, token_total);
}

TeacherOutput TeacherModel::evaluate(const MatrixXd& input_grid) const {
    if (input_grid.rows() != spec_.grid_size || input_grid.cols() != spec_.grid_size)
        throw ShapeError("teacher: input grid shape mismatch");
    const Eigen::Map<const VectorXd> flat(input_grid.data(), input_grid.size());
    const VectorXd hidden = (w1_ * flat).array().tanh();
    const VectorXd token_vec = w2_ * hidden;

    TeacherOutput out;
    out.tokens.rows = spec_.token_rows;
    out.tokens.cols = spec_.token_cols;
    out.tokens.tokens.resize(spec_.token_rows * spec_.token_cols, spec_.token_dim);
    for (int t = 0; t < out.tokens.count(); ++t)
        out.tokens.tokens.row(t) =
            token_vec.segment(static_cast<Eigen::Index>(t) * spec_.token_dim,
                              spec_.token_dim);
    out.prediction = head_w_ * token_vec.array().tanh().matrix();
    return out;
}

} // namespace evonas
