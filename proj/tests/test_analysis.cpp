#include "dlnlab/analysis.hpp"

#include "dlnlab/costs.hpp"
#include "dlnlab/flow.hpp"
#include "dlnlab/symmetry.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

using namespace dln;
using namespace dln::testing;

namespace {

// Finite-difference Jacobian of theta -> A_theta, then the Gram tensor.
Matrix ntk_fd_oracle(const Params& theta, double h = 1e-5) {
    const int n_out = theta.shape().out_dim();
    const int n_in = theta.shape().in_dim();
    std::vector<Matrix> jac; // one dA/dtheta_p per parameter
    for (int l = 0; l < theta.depth(); ++l)
        for (Eigen::Index i = 0; i < theta.layer(l).rows(); ++i)
            for (Eigen::Index j = 0; j < theta.layer(l).cols(); ++j) {
                Params up = theta, down = theta;
                up.layer(l)(i, j) += h;
                down.layer(l)(i, j) -= h;
                jac.push_back((product_map(up) - product_map(down)) / (2 * h));
            }
    Matrix flat = Matrix::Zero(n_out * n_in, n_out * n_in);
    for (const Matrix& J : jac) {
        Eigen::Map<const Vector> v(J.data(), J.size());
        // J is column-major; rebuild with row-major pairing (i,j) -> i*n_in+j.
        Vector row_major(n_out * n_in);
        for (int i = 0; i < n_out; ++i)
            for (int j = 0; j < n_in; ++j) row_major(i * n_in + j) = J(i, j);
        flat += row_major * row_major.transpose();
    }
    return flat;
}

} // namespace

TEST_CASE("ntk tensor") {
    SUBCASE("depth 1 is the identity tensor") {
        const Params theta = random_params(NetShape({3, 2}), 1);
        const NtkTensor ntk = ntk_tensor(theta);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 2; ++k)
                    for (int l = 0; l < 3; ++l)
                        CHECK(ntk.entry(i, j, k, l) ==
                              doctest::Approx(i == k && j == l ? 1.0 : 0.0));
    }

    SUBCASE("matches the finite-difference Jacobian oracle") {
        const Params theta = random_params(NetShape({2, 2, 2, 2}), 2, 0.8);
        const NtkTensor ntk = ntk_tensor(theta);
        const Matrix oracle = ntk_fd_oracle(theta);
        CHECK((ntk.flat - oracle).cwiseAbs().maxCoeff() <= 1e-8);
    }

    SUBCASE("symmetry and positive semidefiniteness on random instances") {
        for (int i = 0; i < 50; ++i) {
            const Params theta = random_params(NetShape({3, 4, 2}), static_cast<std::uint64_t>(10 + i));
            const NtkTensor ntk = ntk_tensor(theta);
            CHECK((ntk.flat - ntk.flat.transpose()).norm() <= 1e-12 * ntk.flat.norm());
            Eigen::SelfAdjointEigenSolver<Matrix> es(ntk.flat);
            CHECK(es.eigenvalues().minCoeff() >= -1e-9 * ntk.flat.trace());
        }
    }

    SUBCASE("invariant under rotations and inclusions") {
        const Params theta = random_params(NetShape::rect(3, 4, 3, 2), 60);
        const NtkTensor base = ntk_tensor(theta);
        const Rotation R = random_rotation(4, 3, 61);
        CHECK((ntk_tensor(apply_rotation(R, theta)).flat - base.flat).norm() <=
              1e-10 * base.flat.norm());
        CHECK((ntk_tensor(include_to_width(theta, 7)).flat - base.flat).norm() <=
              1e-10 * base.flat.norm());
    }
}

TEST_CASE("ntk expectation") {
    CHECK(ntk_expectation(3, 64, 1.0) == doctest::Approx(3.0));
    CHECK(ntk_expectation(2, 100, 0.5) == doctest::Approx(20.0));

    SUBCASE("monte-carlo at moderate width") {
        const int L = 3, w = 32;
        const NetShape shape = NetShape::rect(L, w, 3, 3);
        const double sigma = std::pow(w, -0.5); // gamma = 1
        double diag_sum = 0;
        const int draws = 60;
        for (int d = 0; d < draws; ++d) {
            const Params theta = init_gaussian(shape, sigma, static_cast<std::uint64_t>(100 + d));
            diag_sum += ntk_tensor(theta).flat.diagonal().mean();
        }
        CHECK(diag_sum / draws == doctest::Approx(3.0).epsilon(0.10));
    }
}

TEST_CASE("ntk change across regimes") {
    SUBCASE("identical endpoints") {
        const Params theta = random_params(NetShape::rect(2, 3, 2, 2), 3);
        const auto [change, initial] = ntk_change(theta, theta);
        CHECK(change == 0.0);
        CHECK(initial == doctest::Approx(ntk_tensor(theta).flat.norm()));
    }

    SUBCASE("relative change decreases with width in the large-variance regime and grows in the small one") {
        const int L = 3, n = 3;
        const Matrix X = Matrix::Identity(n, n);
        const Matrix Y = random_matrix(n, n, 4);
        const CostSpec cost = MseCost{X, Y};
        auto rel_change = [&](int w, double gamma) {
            const NetShape shape = NetShape::rect(L, w, n, n);
            const double sigma = std::pow(w, -gamma / 2.0);
            const Params theta0 = init_gaussian(shape, sigma, 5);
            const double eta0 = 0.05;
            const double eta = gamma > 1.0 ? eta0 : eta0 * std::pow(w, (L - 1) * (gamma - 1.0));
            FlowConfig cfg;
            cfg.eta = eta;
            cfg.max_steps = 4000;
            cfg.snapshot_every = 4000;
            cfg.stop_loss = 1e-10;
            const Trajectory traj = integrate(theta0, cost, cfg);
            const auto [change, initial] = ntk_change(theta0, traj.terminal);
            return change / initial;
        };
        CHECK(rel_change(64, 0.75) < rel_change(16, 0.75));
        CHECK(rel_change(64, 1.5) > rel_change(16, 1.5));
    }
}

TEST_CASE("distance to the zeroed-flank saddle") {
    SUBCASE("already zero") {
        Params theta = random_params(NetShape::rect(3, 4, 3, 2), 6);
        theta.layer(0).setZero();
        theta.layer(2).setZero();
        CHECK(saddle_distance_upper(theta) == 0.0);
        // The construction lands exactly on a stationary point.
        const CostSpec cost = MseCost{random_matrix(3, 5, 7), random_matrix(2, 5, 8)};
        CHECK(std::sqrt(loss_gradient(theta, cost).squared_norm()) <= 1e-8);
    }

    SUBCASE("expected squared distance sigma^2 (n0 + nL) w") {
        const int n0 = 4, nL = 3, w = 16, L = 3;
        const double sigma = 0.2;
        const NetShape shape = NetShape::rect(L, w, n0, nL);
        double acc = 0;
        const int draws = 100;
        for (int d = 0; d < draws; ++d) {
            const double ds = saddle_distance_upper(init_gaussian(shape, sigma, static_cast<std::uint64_t>(d)));
            acc += ds * ds;
        }
        CHECK(acc / draws == doctest::Approx(sigma * sigma * (n0 + nL) * w).epsilon(0.10));
    }

    SUBCASE("slope of the width scaling is (1 - gamma)/2") {
        const int L = 3, n0 = 4, nL = 4;
        for (double gamma : {0.5, 1.5}) {
            std::vector<double> xs, ys;
            for (int w : {8, 16, 32, 64, 128}) {
                std::vector<double> vals;
                for (int seed = 0; seed < 7; ++seed) {
                    const double sigma = std::pow(w, -gamma / 2.0);
                    vals.push_back(saddle_distance_upper(
                        init_gaussian(NetShape::rect(L, w, n0, nL), sigma, static_cast<std::uint64_t>(seed))));
                }
                std::sort(vals.begin(), vals.end());
                xs.push_back(w);
                ys.push_back(vals[3]);
            }
            const ScalingFit fit = fit_loglog(xs, ys, (1.0 - gamma) / 2.0);
            CHECK(std::abs(fit.slope - fit.theory_slope) <= 0.15 * std::abs(fit.theory_slope));
        }
    }
}

TEST_CASE("constructed distance to a global minimum") {
    const int L = 3, n0 = 4, nL = 4, w = 8;
    const NetShape shape = NetShape::rect(L, w, n0, nL);

    SUBCASE("already at the target, flank branch") {
        const Params theta = random_params(shape, 9, 0.5);
        const MinDistanceResult res = min_distance_upper(theta, product_map(theta), 0.5);
        CHECK(res.used_flank);
        CHECK(res.distance <= 1e-10);
    }

    SUBCASE("flank branch reaches the target exactly") {
        const Params theta = random_params(shape, 10, 0.5);
        const Matrix A_star = random_matrix(nL, n0, 14);
        const MinDistanceResult res = min_distance_upper(theta, A_star, 0.5);
        CHECK(res.used_flank);
        CHECK((product_map(res.target) - A_star).norm() <= 1e-8 * std::max(1.0, A_star.norm()));
    }

    SUBCASE("rank-deficient flank falls back to the svd construction") {
        Params theta = random_params(shape, 15, 0.5);
        theta.layer(0).setZero(); // flank product W_2 W_1 = 0, no column rank
        const Matrix A_star = random_matrix(nL, 1, 16) * random_matrix(1, n0, 17);
        const MinDistanceResult res = min_distance_upper(theta, A_star, 0.5);
        CHECK(!res.used_flank);
        CHECK((product_map(res.target) - A_star).norm() <= 1e-10 * std::max(1.0, A_star.norm()));
    }

    SUBCASE("svd branch reproduces a rank-1 target to 1e-10") {
        const double sigma = std::pow(w, -0.75); // gamma = 1.5
        const Params theta = init_gaussian(shape, sigma, 11);
        const Matrix A_star = random_matrix(nL, 1, 12) * random_matrix(1, n0, 13);
        const MinDistanceResult res = min_distance_upper(theta, A_star, 1.5);
        CHECK(!res.used_flank);
        CHECK((product_map(res.target) - A_star).norm() <= 1e-10 * std::max(1.0, A_star.norm()));
        // Reaching the construction leaves a realizable cost at its optimum.
        McCost task;
        task.A_star = A_star;
        for (int i = 0; i < nL; ++i)
            for (int j = 0; j < n0; ++j) task.observed.emplace_back(i, j);
        CHECK(cost_value(CostSpec(task), product_map(res.target)) <= 1e-8);
        // Length is close to the sqrt(||W1||^2 + ||WL||^2 + L sum s^{2/L}) scale.
        Eigen::BDCSVD<Matrix> svd(A_star);
        const double s1 = svd.singularValues()(0);
        const double predicted = std::sqrt(theta.layer(0).squaredNorm() +
                                           theta.layer(L - 1).squaredNorm() +
                                           L * std::pow(s1, 2.0 / L));
        CHECK(res.distance == doctest::Approx(predicted).epsilon(0.25));
    }
}

TEST_CASE("random matrix operator norm bound") {
    SUBCASE("vacuous bound at t = 0 still runs") {
        const double f = operator_norm_bound_check(8, 8, 1.0, 0.0, 50, 1);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }

    SUBCASE("scalar case reduces to the gaussian tail") {
        const double t = 1.0;
        const double f = operator_norm_bound_check(1, 1, 2.0, t, 2000, 2);
        CHECK(f >= 1.0 - 2.0 * std::exp(-t * t / 2.0));
    }

    SUBCASE("moderate size satisfies the stated frequency") {
        const int trials = 200;
        const double f = operator_norm_bound_check(50, 50, 1.0, 2.0, trials, 3);
        const double theory = 1.0 - 2.0 * std::exp(-2.0);
        const double se = std::sqrt(theory * (1.0 - theory) / trials);
        CHECK(f >= theory - 3.0 * se);
    }
}

TEST_CASE("regression helpers") {
    SUBCASE("exact line") {
        const LinearFit f = fit_linear({1, 2, 3, 4}, {3, 5, 7, 9});
        CHECK(f.slope == doctest::Approx(2.0));
        CHECK(f.intercept == doctest::Approx(1.0));
        CHECK(f.r_squared == doctest::Approx(1.0));
    }

    SUBCASE("power law on a log-log scale") {
        std::vector<double> xs{2, 4, 8, 16}, ys;
        for (double x : xs) ys.push_back(3.0 * x * x);
        const ScalingFit f = fit_loglog(xs, ys, 2.0);
        CHECK(f.slope == doctest::Approx(2.0));
        CHECK(f.r_squared == doctest::Approx(1.0));
    }
}
