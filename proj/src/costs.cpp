#include "dlnlab/costs.hpp"

#include <set>
#include <stdexcept>

namespace dln {

namespace {

void validate_mse(const MseCost& c) {
    if (c.X.cols() < 1) throw std::invalid_argument("mse: need at least one sample");
    if (c.X.cols() != c.Y.cols()) throw std::invalid_argument("mse: X and Y must share column count");
}

void validate_mc(const McCost& c) {
    if (c.observed.empty()) throw std::invalid_argument("mc: need at least one observed entry");
    std::set<std::pair<int, int>> seen;
    for (auto [i, j] : c.observed) {
        if (i < 0 || j < 0 || i >= c.A_star.rows() || j >= c.A_star.cols())
            throw std::invalid_argument("mc: observed index out of range");
        if (!seen.insert({i, j}).second) throw std::invalid_argument("mc: duplicate observed index");
    }
}

void validate_localized(const LocalizedCost& c) {
    if (!c.base) throw std::invalid_argument("localized: missing base cost");
    if (c.base->is_localized()) throw std::invalid_argument("localized: base must be a matrix cost");
    if (c.r <= 0) throw std::invalid_argument("localized: r must be positive");
    if (c.G.rows() != c.base->rows() || c.G.cols() != c.base->cols())
        throw std::invalid_argument("localized: homogeneous part shape mismatch");
}

void check_dims(const CostSpec& c, const Matrix& A) {
    if (A.rows() != c.rows() || A.cols() != c.cols())
        throw std::invalid_argument("cost: matrix dimensions do not match cost");
}

} // namespace

CostSpec::CostSpec(MseCost c) : v_(std::move(c)) { validate_mse(mse()); }
CostSpec::CostSpec(McCost c) : v_(std::move(c)) { validate_mc(mc()); }
CostSpec::CostSpec(TraceCost c) : v_(std::move(c)) {}
CostSpec::CostSpec(LocalizedCost c) : v_(std::move(c)) { validate_localized(localized()); }

int CostSpec::rows() const {
    if (is_mse()) return static_cast<int>(mse().Y.rows());
    if (is_mc()) return static_cast<int>(mc().A_star.rows());
    if (is_trace()) return static_cast<int>(trace().G.rows());
    return localized().base->rows();
}

int CostSpec::cols() const {
    if (is_mse()) return static_cast<int>(mse().X.rows());
    if (is_mc()) return static_cast<int>(mc().A_star.cols());
    if (is_trace()) return static_cast<int>(trace().G.cols());
    return localized().base->cols();
}

double cost_value(const CostSpec& c, const Matrix& A) {
    if (c.is_localized()) throw std::invalid_argument("cost_value: localized cost is a function of theta");
    check_dims(c, A);
    if (c.is_mse()) {
        const MseCost& m = c.mse();
        return (A * m.X - m.Y).squaredNorm() / static_cast<double>(m.X.cols());
    }
    if (c.is_mc()) {
        const McCost& m = c.mc();
        double s = 0;
        for (auto [i, j] : m.observed) {
            const double d = A(i, j) - m.A_star(i, j);
            s += d * d;
        }
        return s / static_cast<double>(m.observed.size());
    }
    return (c.trace().G.transpose() * A).trace();
}

Matrix cost_gradient(const CostSpec& c, const Matrix& A) {
    if (c.is_localized()) throw std::invalid_argument("cost_gradient: localized cost is a function of theta");
    check_dims(c, A);
    if (c.is_mse()) {
        const MseCost& m = c.mse();
        return (2.0 / static_cast<double>(m.X.cols())) * (A * m.X - m.Y) * m.X.transpose();
    }
    if (c.is_mc()) {
        const McCost& m = c.mc();
        Matrix g = Matrix::Zero(A.rows(), A.cols());
        const double scale = 2.0 / static_cast<double>(m.observed.size());
        for (auto [i, j] : m.observed) g(i, j) = scale * (A(i, j) - m.A_star(i, j));
        return g;
    }
    return c.trace().G;
}

Matrix cost_gradient_at_zero(const CostSpec& c) {
    return cost_gradient(c, Matrix::Zero(c.rows(), c.cols()));
}

Matrix cost_gradient_excess(const CostSpec& c, const Matrix& A) {
    if (c.is_localized())
        throw std::invalid_argument("cost_gradient_excess: localized cost is a function of theta");
    check_dims(c, A);
    if (c.is_mse()) {
        const MseCost& m = c.mse();
        return (2.0 / static_cast<double>(m.X.cols())) * A * (m.X * m.X.transpose());
    }
    if (c.is_mc()) {
        const McCost& m = c.mc();
        Matrix g = Matrix::Zero(A.rows(), A.cols());
        const double scale = 2.0 / static_cast<double>(m.observed.size());
        for (auto [i, j] : m.observed) g(i, j) = scale * A(i, j);
        return g;
    }
    return Matrix::Zero(c.rows(), c.cols());
}

double cutoff_h(double x) {
    if (x <= 1.0) return 1.0;
    if (x >= 2.0) return 0.0;
    const double y = x - 1.0;
    return 1.0 - y * y * y * (10.0 + y * (-15.0 + 6.0 * y));
}

double cutoff_h_prime(double x) {
    if (x <= 1.0 || x >= 2.0) return 0.0;
    const double y = x - 1.0;
    return -30.0 * y * y * (y - 1.0) * (y - 1.0);
}

std::pair<double, GradVec> localized_value_gradient(const LocalizedCost& c, const Params& theta) {
    const Matrix A = product_map(theta);
    const double h = cutoff_h(theta.norm() / c.r);
    const double H = (c.G.transpose() * A).trace();
    GradVec grad = layer_gradients(theta, c.G);

    if (h == 0.0) return {H, std::move(grad)};

    const double e = cost_value(*c.base, A) - H;
    const Matrix base_grad_A = cost_gradient(*c.base, A);
    grad += h * layer_gradients(theta, Matrix(base_grad_A - c.G));

    const double norm = theta.norm();
    const double hp = cutoff_h_prime(norm / c.r);
    if (hp != 0.0) grad += (e * hp / (c.r * norm)) * theta;

    return {H + e * h, std::move(grad)};
}

double loss_value(const Params& theta, const CostSpec& cost) {
    if (cost.is_localized()) return localized_value_gradient(cost.localized(), theta).first;
    return cost_value(cost, product_map(theta));
}

GradVec loss_gradient(const Params& theta, const CostSpec& cost) {
    if (cost.is_localized()) return localized_value_gradient(cost.localized(), theta).second;
    return layer_gradients(theta, cost_gradient(cost, product_map(theta)));
}

McCost mc_complement(const McCost& c) {
    std::set<std::pair<int, int>> obs(c.observed.begin(), c.observed.end());
    McCost out;
    out.A_star = c.A_star;
    for (int i = 0; i < c.A_star.rows(); ++i)
        for (int j = 0; j < c.A_star.cols(); ++j)
            if (!obs.count({i, j})) out.observed.emplace_back(i, j);
    if (out.observed.empty()) throw std::invalid_argument("mc_complement: all entries are observed");
    return out;
}

double homogeneous_value(const Matrix& G, const Params& theta) {
    return (G.transpose() * product_map(theta)).trace();
}

GradVec homogeneous_gradient(const Matrix& G, const Params& theta) {
    return layer_gradients(theta, G);
}

} // namespace dln
