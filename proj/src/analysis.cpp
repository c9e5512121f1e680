#include "dlnlab/analysis.hpp"

#include "dlnlab/rng.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace dln {

NtkTensor ntk_tensor(const Params& theta) {
    const int n_out = theta.shape().out_dim();
    const int n_in = theta.shape().in_dim();
    const auto pre = prefix_products(theta);
    const auto suf = suffix_products(theta);

    Matrix flat = Matrix::Zero(n_out * n_in, n_out * n_in);
    for (int l = 0; l < theta.depth(); ++l) {
        const Matrix S = suf[static_cast<size_t>(l)] * suf[static_cast<size_t>(l)].transpose();
        const Matrix P = pre[static_cast<size_t>(l)].transpose() * pre[static_cast<size_t>(l)];
        for (int i = 0; i < n_out; ++i)
            for (int k = 0; k < n_out; ++k)
                flat.block(i * n_in, k * n_in, n_in, n_in) += S(i, k) * P;
    }
    return NtkTensor{n_out, n_in, std::move(flat)};
}

double ntk_expectation(int L, int w, double gamma) {
    if (L < 1 || w < 1) throw std::invalid_argument("ntk_expectation: need L >= 1, w >= 1");
    return static_cast<double>(L) * std::pow(static_cast<double>(w), (1.0 - gamma) * (L - 1));
}

std::pair<double, double> ntk_change(const Params& theta_start, const Params& theta_end) {
    if (!(theta_start.shape() == theta_end.shape()))
        throw std::invalid_argument("ntk_change: shapes must match");
    const NtkTensor a = ntk_tensor(theta_start);
    const NtkTensor b = ntk_tensor(theta_end);
    return {(b.flat - a.flat).norm(), a.flat.norm()};
}

double saddle_distance_upper(const Params& theta) {
    if (theta.depth() < 2) throw std::invalid_argument("saddle_distance_upper: depth must be >= 2");
    const double a = theta.layer(0).squaredNorm();
    const double b = theta.layer(theta.depth() - 1).squaredNorm();
    return std::sqrt(a + b);
}

namespace {

// Rank of A with a tolerance relative to the top singular value.
int exact_rank(const Eigen::BDCSVD<Matrix>& svd) {
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= 0) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > 1e-12 * s(0)) ++r;
    return r;
}

MinDistanceResult min_distance_svd_construction(const Params& theta, const Matrix& A_star) {
    const NetShape& shape = theta.shape();
    const int L = shape.depth();

    Eigen::BDCSVD<Matrix> svd(A_star, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const int k = exact_rank(svd);
    for (int l = 1; l < L; ++l)
        if (shape.widths[static_cast<size_t>(l)] < k)
            throw std::invalid_argument("min_distance_upper: hidden width below rank(A*)");

    Params target = theta; // start from theta, then edit layers
    const double root = 1.0 / static_cast<double>(L);
    Vector s_root(k);
    for (int i = 0; i < k; ++i) s_root(i) = std::pow(svd.singularValues()(i), root);

    // First and last layers are replaced wholesale.
    Matrix W1 = Matrix::Zero(theta.layer(0).rows(), theta.layer(0).cols());
    if (k > 0)
        W1.topRows(k) = s_root.asDiagonal() * svd.matrixV().leftCols(k).transpose();
    target.layer(0) = W1;

    Matrix WL = Matrix::Zero(theta.layer(L - 1).rows(), theta.layer(L - 1).cols());
    if (k > 0) WL.leftCols(k) = svd.matrixU().leftCols(k) * s_root.asDiagonal();
    target.layer(L - 1) = WL;

    // Middle layers: zero the crossing blocks (first k rows and columns),
    // then place diag(s^{1/L}) in the top-left corner.
    for (int l = 1; l < L - 1; ++l) {
        Matrix W = theta.layer(l);
        W.topRows(k).setZero();
        W.leftCols(k).setZero();
        for (int i = 0; i < k; ++i) W(i, i) = s_root(i);
        target.layer(l) = W;
    }

    MinDistanceResult res;
    res.target = target;
    res.distance = (target - theta).norm();
    res.used_flank = false;
    return res;
}

} // namespace

MinDistanceResult min_distance_upper(const Params& theta, const Matrix& A_star, double gamma) {
    const NetShape& shape = theta.shape();
    const int L = shape.depth();
    if (A_star.rows() != shape.out_dim() || A_star.cols() != shape.in_dim())
        throw std::invalid_argument("min_distance_upper: A* dimensions do not match network");

    if (L == 1) {
        MinDistanceResult res;
        res.target = theta;
        res.target.layer(0) = A_star;
        res.distance = (A_star - theta.layer(0)).norm();
        res.used_flank = true;
        return res;
    }

    if (gamma < 1.0) {
        const Matrix B = prefix_products(theta).back(); // W_{L-1} ... W_1
        Eigen::BDCSVD<Matrix> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Vector& s = svd.singularValues();
        const bool full_column_rank =
            B.rows() >= B.cols() && s.size() == B.cols() && s(s.size() - 1) > 1e-10 * s(0);
        if (full_column_rank) {
            const Matrix residual = A_star - product_map(theta);
            // dW_L = residual * B^+; with full column rank B^+ = (B^T B)^{-1} B^T
            // composed from the SVD factors.
            Matrix dWL = residual * svd.matrixV() * s.cwiseInverse().asDiagonal() *
                         svd.matrixU().transpose();
            MinDistanceResult res;
            res.distance = dWL.norm();
            res.target = theta;
            res.target.layer(L - 1) += dWL;
            res.used_flank = true;
            return res;
        }
        // Flank construction unavailable; fall through to the SVD embedding.
    }
    return min_distance_svd_construction(theta, A_star);
}

double operator_norm_bound_check(int m, int n, double sigma, double t, int trials,
                                 std::uint64_t seed) {
    if (m < 1 || n < 1 || trials < 1 || sigma <= 0 || t < 0)
        throw std::invalid_argument("operator_norm_bound_check: invalid arguments");
    RandomStream rng(seed);
    std::uint64_t counter = 0;
    const double upper = sigma * (std::sqrt(m) + std::sqrt(n) + t);
    const double lower =
        sigma * (std::sqrt(std::max(m, n)) - std::sqrt(std::min(m, n)) - t);

    int ok = 0;
    Matrix A(m, n);
    for (int trial = 0; trial < trials; ++trial) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = sigma * rng.normal(counter++);
        Eigen::BDCSVD<Matrix> svd(A);
        const Vector& s = svd.singularValues();
        if (s(0) <= upper && s(s.size() - 1) >= lower) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(trials);
}

LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("fit_linear: need matching vectors of size >= 2");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    LinearFit fit;
    const double denom = n * sxx - sx * sx;
    if (denom == 0) throw std::invalid_argument("fit_linear: degenerate x values");
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;

    const double mean_y = sy / n;
    double ss_res = 0, ss_tot = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double pred = fit.slope * xs[i] + fit.intercept;
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

ScalingFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys,
                      double theory_slope) {
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] <= 0 || ys[i] <= 0) throw std::invalid_argument("fit_loglog: values must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const LinearFit f = fit_linear(lx, ly);
    ScalingFit fit;
    fit.xs = xs;
    fit.ys = ys;
    fit.slope = f.slope;
    fit.r_squared = f.r_squared;
    fit.theory_slope = theory_slope;
    return fit;
}

} // namespace dln
