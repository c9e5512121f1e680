#pragma once

#include "dlnlab/core.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace dln {

/// NTK tensor Theta[i,j,k,l] = (grad_theta A_ij)^T (grad_theta A_kl),
/// stored flattened as a PSD (n_L n_0) x (n_L n_0) matrix with row-major
/// pairing (i,j) -> i * n_0 + j.
struct NtkTensor {
    int n_out = 0;
    int n_in = 0;
    Matrix flat;

    double entry(int i, int j, int k, int l) const { return flat(i * n_in + j, k * n_in + l); }
    double frobenius_norm() const { return flat.norm(); }
};

/// Exact finite-width NTK, computed layer-wise:
/// Theta[i,j,k,l] = sum_l (Suf_l Suf_l^T)_{ik} (Pre_l^T Pre_l)_{jl}.
NtkTensor ntk_tensor(const Params& theta);

/// Expected diagonal value L * w^{(1-gamma)(L-1)} at initialization with
/// sigma^2 = w^{-gamma} (off-diagonal expectation is zero).
double ntk_expectation(int L, int w, double gamma);

/// (||Theta(end) - Theta(start)||_F, ||Theta(start)||_F).
std::pair<double, double> ntk_change(const Params& theta_start, const Params& theta_end);

/// Distance to the constructed saddle obtained by zeroing W_1 and W_L:
/// sqrt(||W_1||_F^2 + ||W_L||_F^2).
double saddle_distance_upper(const Params& theta);

struct MinDistanceResult {
    double distance = 0;
    Params target;        // constructed parameters with A_target = A*
    bool used_flank = false; // gamma < 1 construction (last-layer correction)
};

/// Length of a constructed perturbation reaching a global minimum with
/// A_theta = A_star. For gamma < 1 only W_L is changed (requires the flank
/// product W_{L-1}...W_1 to have full column rank; falls back to the SVD
/// construction otherwise). For gamma >= 1 the crossing blocks are zeroed
/// and a width-rank(A*) SVD factorization is embedded.
MinDistanceResult min_distance_upper(const Params& theta, const Matrix& A_star, double gamma);

/// Fraction of sampled m x n Gaussian(sigma^2) matrices with
/// s_max <= sigma (sqrt m + sqrt n + t) and s_min >= sigma (sqrt m - sqrt n - t)
/// (dimensions taken in decreasing order for the lower bound).
double operator_norm_bound_check(int m, int n, double sigma, double t, int trials,
                                 std::uint64_t seed);

struct LinearFit {
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
};

/// Ordinary least squares y = slope * x + intercept.
LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys);

struct ScalingFit {
    std::vector<double> xs; // widths
    std::vector<double> ys; // measured quantity
    double slope = 0;       // log-log OLS slope
    double r_squared = 0;
    double theory_slope = 0;
};

/// OLS fit of log(y) against log(x).
ScalingFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys,
                      double theory_slope);

} // namespace dln
