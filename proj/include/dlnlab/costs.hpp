#pragma once

#include "dlnlab/core.hpp"

#include <memory>
#include <utility>
#include <variant>
#include <vector>

namespace dln {

/// C(A) = (1/N) ||A X - Y||_F^2 with X: n_0 x N, Y: n_L x N.
struct MseCost {
    Matrix X;
    Matrix Y;
};

/// C(A) = (1/N) sum_i (A_{k_i,m_i} - A*_{k_i,m_i})^2 over the observed
/// index set.
struct McCost {
    Matrix A_star;
    std::vector<std::pair<int, int>> observed;
};

/// C(A) = Tr[G^T A]; as a function of theta this is the L-homogeneous
/// polynomial H(theta) = Tr[G^T A_theta].
struct TraceCost {
    Matrix G;
};

class CostSpec;

/// Localization C_r(theta) = H(theta) + e(theta) h(||theta||/r) with
/// H(theta) = Tr[G^T A_theta] and e(theta) = C(A_theta) - H(theta).
struct LocalizedCost {
    std::shared_ptr<const CostSpec> base;
    Matrix G;
    double r = 1.0;
};

class CostSpec {
public:
    CostSpec(MseCost c);       // NOLINT(google-explicit-constructor)
    CostSpec(McCost c);        // NOLINT(google-explicit-constructor)
    CostSpec(TraceCost c);     // NOLINT(google-explicit-constructor)
    CostSpec(LocalizedCost c); // NOLINT(google-explicit-constructor)

    bool is_mse() const { return std::holds_alternative<MseCost>(v_); }
    bool is_mc() const { return std::holds_alternative<McCost>(v_); }
    bool is_trace() const { return std::holds_alternative<TraceCost>(v_); }
    bool is_localized() const { return std::holds_alternative<LocalizedCost>(v_); }

    const MseCost& mse() const { return std::get<MseCost>(v_); }
    const McCost& mc() const { return std::get<McCost>(v_); }
    const TraceCost& trace() const { return std::get<TraceCost>(v_); }
    const LocalizedCost& localized() const { return std::get<LocalizedCost>(v_); }

    /// Output-matrix dimensions n_L x n_0 the cost is defined on.
    int rows() const;
    int cols() const;

private:
    std::variant<MseCost, McCost, TraceCost, LocalizedCost> v_;
};

/// Cost value C(A) for the matrix costs (mse/mc/trace).
double cost_value(const CostSpec& c, const Matrix& A);

/// Gradient dC/dA: mse -> (2/N)(AX - Y)X^T; mc -> (2/N)(A - A*) on observed
/// entries, 0 elsewhere; trace -> G.
Matrix cost_gradient(const CostSpec& c, const Matrix& A);

/// G = grad C(0), the matrix driving the escape analysis.
Matrix cost_gradient_at_zero(const CostSpec& c);

/// grad C(A) - grad C(0) in closed form (no cancellation for small A):
/// mse -> (2/N) A X X^T; mc -> (2/N) A on observed entries; trace -> 0.
Matrix cost_gradient_excess(const CostSpec& c, const Matrix& A);

/// Smooth cutoff: h = 1 on [0,1], h = 0 on [2,inf), quintic smoothstep in
/// between (C^2).
double cutoff_h(double x);
double cutoff_h_prime(double x);

/// Value and exact gradient of the localized cost C_r(theta).
std::pair<double, GradVec> localized_value_gradient(const LocalizedCost& c, const Params& theta);

/// Loss value: C(A_theta) for matrix costs, C_r(theta) for localized.
double loss_value(const Params& theta, const CostSpec& cost);

/// Exact loss gradient, layer by layer. For matrix costs this is the chain
/// rule through the product map with one prefix and one suffix sweep.
GradVec loss_gradient(const Params& theta, const CostSpec& cost);

/// MC cost on the complement of the observed entries, normalized by its own
/// count. Used as the test error of a matrix-completion run.
McCost mc_complement(const McCost& c);

/// H(theta) = Tr[G^T A_theta].
double homogeneous_value(const Matrix& G, const Params& theta);

/// grad H(theta).
GradVec homogeneous_gradient(const Matrix& G, const Params& theta);

} // namespace dln
