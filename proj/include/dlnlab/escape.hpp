#pragma once

#include "dlnlab/core.hpp"
#include "dlnlab/costs.hpp"
#include "dlnlab/flow.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace dln {

/// Top singular triplet of grad C(0) and the derived escape quantities:
/// optimal escape speed s* = L^{-(L-2)/2} s_1 and the canonical width-1
/// escape direction rho* (unit norm, H(rho*) = -s*/L < 0).
struct EscapeProfile {
    Vector u1;
    Vector v1;
    double s1 = 0;
    double gap = 0;
    double s_star = 0;
    int depth = 0;
    Params rho_star;
};

struct MultiplicityNotOneError : std::runtime_error {
    MultiplicityNotOneError(double s1_, double s2_)
        : std::runtime_error("top singular value of grad C(0) is not simple"), s1(s1_), s2(s2_) {}
    double s1, s2;
};

/// Relative gap below which the top singular value is declared non-simple
/// (u1/v1 are numerically unstable past this point).
inline constexpr double kMultiplicityRelTol = 1e-8;

EscapeProfile escape_profile(const CostSpec& cost, int L);

struct EscapeDirection {
    Params direction; // unit width-1 parameters
    double speed;     // grad H(rho) = -speed * rho; positive iff H(rho) < 0
};

/// All escape directions of H(theta) = Tr[G^T A_theta]: one pair (+/-) per
/// nonzero singular triplet of G, sorted by speed descending.
std::vector<EscapeDirection> all_escape_directions(const Matrix& G, int L);

/// Membership in the escape cone C_eps = { theta : H(theta)/||theta||^L <
/// (-s* + eps)/L } (strict inequality).
bool escape_cone_member(const Params& theta, const Matrix& G, int L, double eps);

/// Norm of the optimal escape path: e^{s(t+T)} for L = 2 and
/// (s(L-2)(T-t))^{-1/(L-2)} for L > 2 (requires t < T).
double theoretical_escape_norm(double t, int L, double s, double T);

/// || gamma_H(t, lambda theta0) - lambda gamma_H(lambda^{L-2} t, theta0) ||
/// for the L-homogeneous trace cost, both sides integrated numerically.
double homogeneous_rescale_check(const Params& theta0, const Matrix& G, double lambda, double t,
                                 const FlowConfig& cfg);

/// Statistic H(theta(t))/||theta(t)||^L + s*/L per recorded snapshot; decay
/// to zero evidences convergence of the flow direction to an optimal escape
/// direction without resolving the rotation ambiguity.
std::vector<double> direction_convergence_stat(const Trajectory& traj, const Matrix& G, int L);

enum class PathKind { Homogeneous, Refined };

/// A path t -> theta(t) sampled on a strictly increasing grid of negative
/// times (geometric in -t).
struct PathGrid {
    std::vector<double> times;
    std::vector<Params> values;
    PathKind kind = PathKind::Homogeneous;
};

struct PathGridSpec {
    int points = 400;
    int width = 1;
    std::optional<double> r;     // localization radius; default 0.25 * s1^{1/(L-1)}
    std::optional<double> t_min; // default: placed where the tail estimate is negligible
    double tail_factor = 0.1;    // dropped tail must be < tol * tail_factor
};

struct TailNotNegligibleError : std::runtime_error {
    explicit TailNotNegligibleError(double estimate)
        : std::runtime_error("correction tail at t_min exceeds the configured bound"), tail(estimate) {}
    double tail;
};

struct NoContractionError : std::runtime_error {
    NoContractionError() : std::runtime_error("fixed-point iteration is not contracting") {}
};

struct RefineResult {
    PathGrid path;                    // refined escape path x0 + b
    PathGrid base;                    // homogeneous optimal path x0
    std::vector<Params> corrections;  // b = path - base, kept at full precision
    std::vector<double> contraction_ratios;
    int iterations = 0;
    double final_change = 0;
    double localization_radius = 0;
};

/// Fixed-point refinement of the escape path: starting from the homogeneous
/// optimal path x0(t) = d(t) I^{(1->w)} rho*, iterates
///   x^{n+1}(t) = x0(t) - int_{t_min}^{t} [grad C_r(x^n(u)) - grad H(x0(u))] du
/// (trapezoid quadrature on the geometric grid) until the sup-norm change is
/// below tol. The correction integrand is evaluated in a cancellation-free
/// form so corrections far in the past stay meaningful.
RefineResult refine_escape_path(const CostSpec& cost, const EscapeProfile& profile,
                                const PathGridSpec& grid, double tol, int max_iter);

/// grad H(x + b) - grad H(x) without forming the near-equal gradients
/// (multilinear difference recursion).
GradVec homogeneous_gradient_delta(const Matrix& G, const Params& x, const Params& b);

/// Sup over interior grid points of || x'(t) + grad C_r(x(t)) ||, the
/// defect of the path as a gradient-flow solution of the localized cost.
/// x' is a second-order nonuniform central difference on the grid.
double path_flow_residual(const PathGrid& path, const CostSpec& base_cost, const Matrix& G,
                          double r);

} // namespace dln
