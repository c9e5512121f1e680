#pragma once

#include "dlnlab/core.hpp"
#include "dlnlab/costs.hpp"
#include "dlnlab/flow.hpp"

#include <cstdint>
#include <vector>

namespace dln {

struct GreedyConfig {
    double eps = 1e-3;       // init/widening scale and convergence slack
    long inner_steps = 50000; // T full-batch GD steps per stage
    double lr = 1e-2;
    double c_min = 0.0;      // target cost level (0 for realizable tasks)
    int max_width = 16;
    double rank_tol = kRankTolRegime;
};

enum class GreedyTermination { Converged, MaxWidth };

struct GreedyStage {
    int width = 0;
    Params theta;             // after the stage's inner GD
    double cost = 0;          // C(A_theta)
    double top_singular = 0;  // s_1 of grad C(A_theta)
    double gap = 0;           // s_1 - s_2 of grad C(A_theta)
    int rank = 0;             // rank of A_theta at cfg.rank_tol
    bool multiplicity_flag = false; // widening used a near-degenerate triplet
};

struct GreedyReport {
    std::vector<GreedyStage> stages;
    Params final_params;
    GreedyTermination terminated = GreedyTermination::Converged;

    std::vector<int> rank_sequence() const;
};

/// Greedy low-rank search: start from the width-1 seed
/// (-eps v^T, eps, ..., eps u) built on the top singular triplet of
/// grad C(0); alternate T steps of full-batch GD with an SVD-guided width-1
/// augmentation of every layer until C(A_theta) < c_min + eps or the width
/// cap is reached. The loop continues while the cost is still above
/// c_min + eps (see README for the loop-guard convention).
GreedyReport greedy_low_rank(const CostSpec& cost, const NetShape& shape_template,
                             const GreedyConfig& cfg);

struct GreedyFlowComparison {
    bool no_finite_minimum = false; // trace cost: both runs diverge
    double final_rel_diff = 0;      // ||A_flow - A_greedy||_F / ||A_greedy||_F
    std::vector<int> flow_ranks;    // consecutive-deduplicated, zeros dropped
    std::vector<int> greedy_ranks;
    bool ranks_match = false;
    Matrix A_flow;
    Matrix A_greedy;
};

/// Runs gradient flow from alpha * theta0 (Gaussian theta0 keyed by seed)
/// and the greedy algorithm on the same cost, then compares the final
/// matrices (a rotation-invariant quantity) and the visited rank sequences.
/// The correspondence is an alpha -> 0 limit; alpha <= 1e-3 in practice.
GreedyFlowComparison greedy_vs_flow(const CostSpec& cost, const NetShape& shape, double alpha,
                                    std::uint64_t seed, const FlowConfig& cfg_flow,
                                    const GreedyConfig& cfg_greedy);

/// Ranks visited along a trajectory: consecutive duplicates collapsed.
std::vector<int> visited_ranks(const Trajectory& traj);

/// One widening step: -eps v^T appended as a new row of W_1, eps on the new
/// diagonal entry of every middle layer, eps u as a new column of W_L.
Params widen_params(const Params& theta, const Vector& u, const Vector& v, double eps);

} // namespace dln
