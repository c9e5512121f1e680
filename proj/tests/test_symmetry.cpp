#include "dlnlab/symmetry.hpp"

#include "dlnlab/costs.hpp"
#include "dlnlab/escape.hpp"
#include "dlnlab/flow.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace dln;
using namespace dln::testing;

namespace {

CostSpec small_mse(int n_in, int n_out, std::uint64_t seed) {
    const Matrix X = random_matrix(n_in, 6, seed);
    const Matrix Y = random_matrix(n_out, 6, seed + 1);
    return MseCost{X, Y};
}

} // namespace

TEST_CASE("rotations leave the product map invariant") {
    const NetShape shape = NetShape::rect(3, 5, 4, 2);
    const Params theta = random_params(shape, 1);

    SUBCASE("identity rotation is a no-op") {
        std::vector<Matrix> ops(2, Matrix::Identity(5, 5));
        const Params rotated = apply_rotation(Rotation(ops), theta);
        CHECK((rotated - theta).norm() == 0.0);
    }

    SUBCASE("random rotation: A invariant, gradient equivariant") {
        const Rotation R = random_rotation(5, 3, 2);
        const Params rotated = apply_rotation(R, theta);
        const Matrix A = product_map(theta);
        CHECK((product_map(rotated) - A).norm() <= 1e-10 * A.norm());

        const CostSpec cost = small_mse(4, 2, 3);
        const GradVec lhs = loss_gradient(rotated, cost);
        const GradVec rhs = apply_rotation(R, loss_gradient(theta, cost));
        CHECK((lhs - rhs).norm() <= 1e-9 * std::max(1.0, rhs.norm()));
    }

    SUBCASE("width mismatch is an error") {
        const Rotation R = random_rotation(4, 3, 4);
        CHECK_THROWS(apply_rotation(R, theta));
    }
}

TEST_CASE("random rotations are orthogonal and deterministic") {
    SUBCASE("width 1 factors are plus or minus one") {
        const Rotation R = random_rotation(1, 4, 5);
        for (const Matrix& O : R.ops) CHECK(std::abs(std::abs(O(0, 0)) - 1.0) <= 1e-15);
    }

    SUBCASE("orthogonality defect at width 50") {
        const Rotation R = random_rotation(50, 2, 6);
        const Matrix& O = R.ops.front();
        CHECK((O.transpose() * O - Matrix::Identity(50, 50)).norm() <= 1e-12);
    }

    SUBCASE("same seed twice is identical") {
        const Rotation a = random_rotation(6, 3, 7);
        const Rotation b = random_rotation(6, 3, 7);
        for (size_t i = 0; i < a.ops.size(); ++i) CHECK((a.ops[i] - b.ops[i]).norm() == 0.0);
    }
}

TEST_CASE("inclusion embeds narrow networks") {
    const NetShape narrow = NetShape::rect(3, 2, 4, 3);
    const Params theta = random_params(narrow, 8);

    SUBCASE("same width is a no-op") { CHECK((include_to_width(theta, 2) - theta).norm() == 0.0); }

    SUBCASE("product map is preserved") {
        const Params wide = include_to_width(theta, 5);
        CHECK((product_map(wide) - product_map(theta)).norm() <= 1e-14);
        CHECK(wide.shape().hidden_width() == 5);
    }

    SUBCASE("gradients commute with inclusion") {
        const CostSpec cost = small_mse(4, 3, 9);
        const GradVec lhs = loss_gradient(include_to_width(theta, 5), cost);
        const GradVec rhs = include_to_width(loss_gradient(theta, cost), 5);
        CHECK((lhs - rhs).norm() <= 1e-10 * std::max(1.0, rhs.norm()));
    }

    SUBCASE("shrinking is an error") { CHECK_THROWS(include_to_width(theta, 1)); }

    SUBCASE("inclusion preserves the balancedness defect exactly") {
        CHECK(balancedness_defect(include_to_width(theta, 6)) ==
              doctest::Approx(balancedness_defect(theta)).epsilon(1e-15));
    }
}

TEST_CASE("balancedness defect") {
    SUBCASE("canonical escape direction is balanced") {
        const CostSpec cost = TraceCost{random_matrix(3, 4, 10)};
        const EscapeProfile prof = escape_profile(cost, 4);
        CHECK(balancedness_defect(prof.rho_star) <= 1e-15);
    }

    SUBCASE("scalar example") {
        Matrix W1(1, 2), W2(1, 1);
        W1 << 1, 0;
        W2 << 2;
        CHECK(balancedness_defect(Params(NetShape({2, 1, 1}), {W1, W2})) == doctest::Approx(3.0));
    }

    SUBCASE("generic gaussian parameters are unbalanced") {
        CHECK(balancedness_defect(random_params(NetShape::rect(3, 4, 4, 4), 11)) > 0.0);
    }
}

TEST_CASE("ntk parametrization map") {
    SUBCASE("all widths one is the identity") {
        const Params theta = random_params(NetShape({1, 1, 1}), 12);
        const auto [mapped, scale] = ntk_param_map(theta);
        CHECK((mapped - theta).norm() == 0.0);
        CHECK(scale == doctest::Approx(1.0));
    }

    SUBCASE("formula substitution") {
        const Params theta = random_params(NetShape::rect(2, 4, 2, 3), 13);
        const auto [mapped, scale] = ntk_param_map(theta);
        CHECK(scale == doctest::Approx(std::sqrt(8.0)));
        CHECK((mapped - std::pow(8.0, -0.25) * theta).norm() <= 1e-15);
    }
}

TEST_CASE("gradient flow commutes with rotations and preserves inclusions") {
    const NetShape shape = NetShape::rect(3, 4, 3, 2);
    const CostSpec cost = small_mse(3, 2, 14);
    const Params theta0 = random_params(shape, 15, 0.4);
    const Rotation R = random_rotation(4, 3, 16);

    SUBCASE("flow-level equivariance at 10 snapshots") {
        FlowConfig cfg;
        cfg.eta = 1e-3;
        cfg.max_steps = 1000;
        cfg.snapshot_every = 100;
        cfg.record_params = true;
        const Trajectory a = integrate(theta0, cost, cfg);
        const Trajectory b = integrate(apply_rotation(R, theta0), cost, cfg);
        REQUIRE(a.snapshot_params.size() == b.snapshot_params.size());
        REQUIRE(a.snapshot_params.size() >= 10);
        for (size_t k = 0; k < a.snapshot_params.size(); ++k) {
            const Params expected = apply_rotation(R, a.snapshot_params[k]);
            CHECK((b.snapshot_params[k] - expected).norm() <= 1e-8);
        }
    }

    SUBCASE("image of the inclusion is flow-invariant") {
        const Params narrow0 = random_params(NetShape::rect(3, 2, 3, 2), 17, 0.4);
        FlowConfig cfg;
        cfg.eta = 1e-3;
        cfg.max_steps = 500;
        cfg.snapshot_every = 50;
        cfg.record_params = true;
        const Trajectory traj = integrate(include_to_width(narrow0, 4), cost, cfg);
        for (const Params& p : traj.snapshot_params) {
            CHECK(p.layer(0).bottomRows(2).norm() <= 1e-12);
            CHECK(p.layer(1).bottomRows(2).norm() <= 1e-12);
            CHECK(p.layer(1).rightCols(2).norm() <= 1e-12);
            CHECK(p.layer(2).rightCols(2).norm() <= 1e-12);
        }
    }
}

TEST_CASE("classical flow from the mapped init matches the ntk-parametrized flow") {
    // A^{NTK} = c_A A with c_A = (n_0 ... n_{L-1})^{-1/2}; flowing the
    // classical loss on C(c_A A) from theta_ntk and rescaling time by
    // c = 1/c_A reproduces A_{theta(t)} from the mapped initialization.
    const int n0 = 2, w = 4, nL = 2, L = 2;
    const NetShape shape = NetShape::rect(L, w, n0, nL);
    const Matrix X = random_matrix(n0, 5, 18);
    const Matrix Y = random_matrix(nL, 5, 19);
    const CostSpec cost = MseCost{X, Y};

    const Params theta_ntk0 = random_params(shape, 20);
    const auto [theta0, time_scale] = ntk_param_map(theta_ntk0);
    const double c_A = 1.0 / time_scale;
    const CostSpec ntk_cost = MseCost{c_A * X, Y};

    const double eta = 1e-4;
    double sup = 0;
    for (double t : {0.2, 0.5, 1.0}) {
        const Params classical = integrate_to_time(theta0, cost, eta, t, Integrator::Rk4);
        const Params ntk = integrate_to_time(theta_ntk0, ntk_cost, eta * time_scale,
                                             time_scale * t, Integrator::Rk4);
        sup = std::max(sup, (product_map(classical) - c_A * product_map(ntk)).norm());
    }
    CHECK(sup <= 1e-6);
}
