#include "dlnlab/greedy.hpp"

#include "dlnlab/escape.hpp"
#include "dlnlab/experiment.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>

using namespace dln;
using namespace dln::testing;

namespace {

CostSpec diag_mse(const std::vector<double>& diag) {
    const int n = static_cast<int>(diag.size());
    Matrix Y = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) Y(i, i) = diag[static_cast<size_t>(i)];
    return MseCost{Matrix::Identity(n, n), Y};
}

} // namespace

TEST_CASE("greedy low-rank search") {
    GreedyConfig cfg;
    cfg.eps = 1e-3;
    cfg.inner_steps = 50000;
    cfg.lr = 1e-2;
    cfg.max_width = 6;
    cfg.rank_tol = 1e-2;
    const NetShape shape = NetShape::rect(2, 4, 4, 4);

    SUBCASE("rank-1 target terminates at width 1") {
        const CostSpec cost = diag_mse({3, 0, 0, 0});
        const GreedyReport rep = greedy_low_rank(cost, shape, cfg);
        CHECK(rep.terminated == GreedyTermination::Converged);
        CHECK(rep.stages.size() == 1);
        Matrix Y = Matrix::Zero(4, 4);
        Y(0, 0) = 3;
        CHECK((product_map(rep.final_params) - Y).norm() <= 1e-2);
    }

    SUBCASE("rank-2 target passes through the best rank-1 approximation") {
        const CostSpec cost = diag_mse({3, 2, 0, 0});
        const GreedyReport rep = greedy_low_rank(cost, shape, cfg);
        CHECK(rep.terminated == GreedyTermination::Converged);
        REQUIRE(rep.stages.size() == 2);
        // Eckart-Young: the width-1 stage fits diag(3,0,0,0).
        Matrix best1 = Matrix::Zero(4, 4);
        best1(0, 0) = 3;
        CHECK((product_map(rep.stages[0].theta) - best1).norm() <= 1e-2);
        CHECK(rep.rank_sequence() == std::vector<int>{1, 2});
        // Stage losses are nonincreasing (widening is loss-neutral at O(eps^L)).
        const double slack = 2.0 * cfg.eps * rep.stages[0].top_singular;
        CHECK(rep.stages[1].cost <= rep.stages[0].cost + slack);
    }

    SUBCASE("c_min above the achievable loss converges immediately") {
        GreedyConfig lazy = cfg;
        lazy.c_min = 100.0;
        lazy.inner_steps = 10;
        const GreedyReport rep = greedy_low_rank(diag_mse({3, 2, 0, 0}), shape, lazy);
        CHECK(rep.terminated == GreedyTermination::Converged);
        CHECK(rep.stages.size() == 1);
    }

    SUBCASE("width cap reports max_width with the report attached") {
        GreedyConfig capped = cfg;
        capped.max_width = 1;
        capped.inner_steps = 20000;
        const GreedyReport rep = greedy_low_rank(diag_mse({3, 2, 0, 0}), shape, capped);
        CHECK(rep.terminated == GreedyTermination::MaxWidth);
        CHECK(rep.stages.size() == 1);
    }

    SUBCASE("degenerate top singular value of grad C(0) is rejected") {
        CHECK_THROWS_AS(greedy_low_rank(diag_mse({2, 2, 0, 0}), shape, cfg), MultiplicityNotOneError);
    }
}

TEST_CASE("widening perturbs the matrix by at most eps^L terms") {
    const NetShape shape = NetShape::rect(3, 2, 4, 4);
    const CostSpec cost = diag_mse({3, 2, 1, 0});
    Params theta = random_params(NetShape::rect(3, 2, 4, 4), 3, 0.6);
    const Matrix A_before = product_map(theta);
    const Matrix g = cost_gradient(cost, A_before);
    Eigen::BDCSVD<Matrix> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s1 = svd.singularValues()(0);
    const double eps = 1e-2;
    const Params wide = widen_params(theta, svd.matrixU().col(0), svd.matrixV().col(0), eps);
    CHECK(wide.shape().hidden_width() == 3);
    CHECK((product_map(wide) - A_before).norm() <= std::pow(eps, 3) * (1.0 + s1));
}

TEST_CASE("greedy visits ranks 1,2,3 on the rank-3 completion task") {
    // Same task family as the staircase preset: the greedy search adds one
    // rank per stage until the observed entries are fit.
    const McCost task = make_mc_task(10, 10, {10.0, 7.0, 4.0}, 60, 7);
    GreedyConfig cfg;
    // eps is the algorithm's stopping slack: wide enough to accept the
    // width-3 fit of the observed entries, far below the width-2 level.
    cfg.eps = 2e-2;
    cfg.inner_steps = 100000;
    cfg.lr = 3e-2;
    cfg.max_width = 5;
    cfg.rank_tol = 0.1;
    const GreedyReport rep = greedy_low_rank(CostSpec(task), NetShape::rect(2, 5, 10, 10), cfg);
    CHECK(rep.terminated == GreedyTermination::Converged);
    CHECK(rep.rank_sequence() == std::vector<int>{1, 2, 3});
}

TEST_CASE("greedy agrees with small-init gradient flow") {
    SUBCASE("trace cost has no finite minimum") {
        const CostSpec cost = TraceCost{random_matrix(3, 3, 4)};
        const GreedyFlowComparison cmp =
            greedy_vs_flow(cost, NetShape::rect(2, 4, 3, 3), 1e-3, 5, FlowConfig{}, GreedyConfig{});
        CHECK(cmp.no_finite_minimum);
    }

    SUBCASE("rank-1 task: same final matrix and rank sequence") {
        const CostSpec cost = diag_mse({3, 0, 0, 0});
        FlowConfig fc;
        fc.eta = 1e-2;
        fc.max_steps = 400000;
        fc.snapshot_every = 200;
        fc.stop_loss = 1e-12;
        fc.rank_tol = 1e-2;
        GreedyConfig gc;
        gc.eps = 1e-3;
        gc.inner_steps = 50000;
        gc.lr = 1e-2;
        gc.rank_tol = 1e-2;
        const GreedyFlowComparison cmp =
            greedy_vs_flow(cost, NetShape::rect(2, 4, 4, 4), 1e-3, 6, fc, gc);
        CHECK(!cmp.no_finite_minimum);
        CHECK(cmp.final_rel_diff <= 1e-2);
        CHECK(cmp.ranks_match);
        CHECK(cmp.greedy_ranks == std::vector<int>{1});
    }
}
