#include "dlnlab/greedy.hpp"

#include "dlnlab/escape.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace dln {

namespace {

struct TopTriplet {
    Vector u, v;
    double s1 = 0, s2 = 0;
};

TopTriplet top_triplet(const Matrix& M) {
    Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    TopTriplet t;
    t.u = svd.matrixU().col(0);
    t.v = svd.matrixV().col(0);
    t.s1 = svd.singularValues()(0);
    t.s2 = svd.singularValues().size() > 1 ? svd.singularValues()(1) : 0.0;
    return t;
}

Params width1_seed(const TopTriplet& t, int L, double eps) {
    const int n0 = static_cast<int>(t.v.size());
    const int nL = static_cast<int>(t.u.size());
    std::vector<int> widths(static_cast<size_t>(L) + 1, 1);
    widths.front() = n0;
    widths.back() = nL;
    std::vector<Matrix> layers;
    layers.reserve(static_cast<size_t>(L));
    layers.push_back(-eps * t.v.transpose());
    for (int l = 1; l < L - 1; ++l) layers.push_back(eps * Matrix::Ones(1, 1));
    layers.push_back(eps * t.u);
    return Params(NetShape{widths}, std::move(layers));
}

Params widen_impl(const Params& theta, const Vector& u, const Vector& v, double eps) {
    const NetShape& shape = theta.shape();
    const int L = shape.depth();
    const int w = L >= 2 ? shape.widths[1] : 1;
    NetShape out_shape = NetShape::rect(L, w + 1, shape.in_dim(), shape.out_dim());

    std::vector<Matrix> layers;
    layers.reserve(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        const Matrix& W = theta.layer(l);
        Matrix V;
        if (l == 0) {
            V = Matrix::Zero(W.rows() + 1, W.cols());
            V.topRows(W.rows()) = W;
            V.bottomRows(1) = -eps * v.transpose();
        } else if (l == L - 1) {
            V = Matrix::Zero(W.rows(), W.cols() + 1);
            V.leftCols(W.cols()) = W;
            V.rightCols(1) = eps * u;
        } else {
            V = Matrix::Zero(W.rows() + 1, W.cols() + 1);
            V.topLeftCorner(W.rows(), W.cols()) = W;
            V(W.rows(), W.cols()) = eps;
        }
        layers.push_back(std::move(V));
    }
    return Params(out_shape, std::move(layers));
}

Params inner_gd(Params theta, const CostSpec& cost, long steps, double lr) {
    for (long n = 0; n < steps; ++n) {
        theta -= lr * loss_gradient(theta, cost);
        if (!theta.all_finite()) throw NonFiniteError(Trajectory{{}, {}, theta, "non_finite"});
    }
    return theta;
}

std::vector<int> dedup(std::vector<int> seq) {
    std::vector<int> out;
    for (int r : seq)
        if (out.empty() || out.back() != r) out.push_back(r);
    return out;
}

std::vector<int> drop_zeros(const std::vector<int>& seq) {
    std::vector<int> out;
    for (int r : seq)
        if (r != 0) out.push_back(r);
    return out;
}

} // namespace

Params widen_params(const Params& theta, const Vector& u, const Vector& v, double eps) {
    return widen_impl(theta, u, v, eps);
}

std::vector<int> GreedyReport::rank_sequence() const {
    std::vector<int> seq;
    seq.reserve(stages.size());
    for (const GreedyStage& s : stages) seq.push_back(s.rank);
    return seq;
}

GreedyReport greedy_low_rank(const CostSpec& cost, const NetShape& shape_template,
                             const GreedyConfig& cfg) {
    if (cfg.eps <= 0 || cfg.inner_steps < 1 || cfg.lr <= 0 || cfg.max_width < 1)
        throw std::invalid_argument("greedy_low_rank: invalid configuration");
    const int L = shape_template.depth();
    if (L < 2) throw std::invalid_argument("greedy_low_rank: depth must be >= 2");

    const Matrix G0 = cost_gradient_at_zero(cost);
    const TopTriplet t0 = top_triplet(G0);
    if (t0.s1 <= 0) throw std::invalid_argument("greedy_low_rank: grad C(0) is zero");
    if (t0.s1 - t0.s2 <= kMultiplicityRelTol * t0.s1) throw MultiplicityNotOneError(t0.s1, t0.s2);

    GreedyReport report;
    Params theta = width1_seed(t0, L, cfg.eps);

    for (int width = 1;; ++width) {
        theta = inner_gd(std::move(theta), cost, cfg.inner_steps, cfg.lr);
        const Matrix A = product_map(theta);
        const Matrix grad_A = cost_gradient(cost, A);
        const TopTriplet t = top_triplet(grad_A);

        GreedyStage stage;
        stage.width = width;
        stage.theta = theta;
        stage.cost = cost_value(cost, A);
        stage.top_singular = t.s1;
        stage.gap = t.s1 - t.s2;
        stage.rank = rank_of(A, cfg.rank_tol);
        report.stages.push_back(stage);

        if (stage.cost < cfg.c_min + cfg.eps) {
            report.terminated = GreedyTermination::Converged;
            break;
        }
        if (width >= cfg.max_width) {
            report.terminated = GreedyTermination::MaxWidth;
            break;
        }
        if (t.s1 - t.s2 <= kMultiplicityRelTol * t.s1) report.stages.back().multiplicity_flag = true;
        theta = widen_params(theta, t.u, t.v, cfg.eps);
    }

    report.final_params = theta;
    return report;
}

std::vector<int> visited_ranks(const Trajectory& traj) {
    std::vector<int> seq;
    seq.reserve(traj.snapshots.size());
    for (const SnapshotRecord& s : traj.snapshots) seq.push_back(s.rank);
    return dedup(seq);
}

GreedyFlowComparison greedy_vs_flow(const CostSpec& cost, const NetShape& shape, double alpha,
                                    std::uint64_t seed, const FlowConfig& cfg_flow,
                                    const GreedyConfig& cfg_greedy) {
    GreedyFlowComparison cmp;
    if (cost.is_trace()) {
        // Linear cost, unbounded below: neither run has a finite limit.
        cmp.no_finite_minimum = true;
        return cmp;
    }

    const Params theta0 = init_gaussian(shape, 1.0, seed);
    const Trajectory traj = integrate(alpha * theta0, cost, cfg_flow);
    cmp.A_flow = product_map(traj.terminal);
    cmp.flow_ranks = drop_zeros(visited_ranks(traj));

    const GreedyReport greedy = greedy_low_rank(cost, shape, cfg_greedy);
    cmp.A_greedy = product_map(greedy.final_params);
    cmp.greedy_ranks = drop_zeros(dedup(greedy.rank_sequence()));

    cmp.final_rel_diff = (cmp.A_flow - cmp.A_greedy).norm() / std::max(cmp.A_greedy.norm(), 1e-300);
    cmp.ranks_match = cmp.flow_ranks == cmp.greedy_ranks;
    return cmp;
}

} // namespace dln
