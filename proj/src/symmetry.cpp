#include "dlnlab/symmetry.hpp"

#include "dlnlab/rng.hpp"

#include <Eigen/QR>
#include <stdexcept>

namespace dln {

namespace {
constexpr double kOrthTol = 1e-10;
}

Rotation::Rotation(std::vector<Matrix> factors) : ops(std::move(factors)) {
    if (ops.empty()) throw std::invalid_argument("Rotation: need at least one factor (depth >= 2)");
    const Eigen::Index w = ops.front().rows();
    for (const Matrix& O : ops) {
        if (O.rows() != w || O.cols() != w) throw std::invalid_argument("Rotation: factors must be square of equal size");
        const double defect = (O.transpose() * O - Matrix::Identity(w, w)).norm();
        if (defect > kOrthTol) throw std::invalid_argument("Rotation: factor is not orthogonal");
    }
}

Params apply_rotation(const Rotation& R, const Params& theta) {
    const NetShape& shape = theta.shape();
    const int L = shape.depth();
    if (L < 2) throw std::invalid_argument("apply_rotation: depth must be >= 2");
    if (!shape.rectangular() || shape.hidden_width() != R.width() || R.depth() != L)
        throw std::invalid_argument("apply_rotation: rotation does not match network width/depth");

    std::vector<Matrix> layers;
    layers.reserve(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        Matrix W = theta.layer(l);
        if (l > 0) W = W * R.ops[static_cast<size_t>(l - 1)].transpose();
        if (l < L - 1) W = R.ops[static_cast<size_t>(l)] * W;
        layers.push_back(std::move(W));
    }
    return Params(shape, std::move(layers));
}

Rotation random_rotation(int w, int L, std::uint64_t seed) {
    if (w < 1 || L < 2) throw std::invalid_argument("random_rotation: need w >= 1, L >= 2");
    RandomStream rng(seed);
    std::uint64_t counter = 0;
    std::vector<Matrix> ops;
    ops.reserve(static_cast<size_t>(L - 1));
    for (int k = 0; k < L - 1; ++k) {
        Matrix Z(w, w);
        for (int i = 0; i < w; ++i)
            for (int j = 0; j < w; ++j) Z(i, j) = rng.normal(counter++);
        Eigen::HouseholderQR<Matrix> qr(Z);
        Matrix Q = qr.householderQ();
        const Matrix Rmat = qr.matrixQR().triangularView<Eigen::Upper>();
        // Fix the sign ambiguity of QR so the distribution is Haar.
        for (int j = 0; j < w; ++j)
            if (Rmat(j, j) < 0) Q.col(j) *= -1.0;
        ops.push_back(std::move(Q));
    }
    return Rotation(std::move(ops));
}

Params include_to_width(const Params& theta, int w_target) {
    const NetShape& shape = theta.shape();
    const int L = shape.depth();
    if (L < 2) throw std::invalid_argument("include_to_width: depth must be >= 2");
    if (!shape.rectangular()) throw std::invalid_argument("include_to_width: network must be rectangular");
    const int w = shape.hidden_width();
    if (w_target < w) throw std::invalid_argument("include_to_width: target width smaller than current");
    if (w_target == w) return theta;

    NetShape out_shape = NetShape::rect(L, w_target, shape.in_dim(), shape.out_dim());
    Params out = Params::zero(out_shape);
    out.layer(0).topRows(w) = theta.layer(0);
    for (int l = 1; l < L - 1; ++l) out.layer(l).topLeftCorner(w, w) = theta.layer(l);
    out.layer(L - 1).leftCols(w) = theta.layer(L - 1);
    return out;
}

double balancedness_defect(const Params& theta) {
    const int L = theta.depth();
    if (L < 2) throw std::invalid_argument("balancedness_defect: depth must be >= 2");
    double worst = 0;
    for (int l = 0; l + 1 < L; ++l) {
        const Matrix& W = theta.layer(l);
        const Matrix& V = theta.layer(l + 1);
        worst = std::max(worst, (W * W.transpose() - V.transpose() * V).norm());
    }
    return worst;
}

std::pair<Params, double> ntk_param_map(const Params& theta_ntk) {
    const NetShape& shape = theta_ntk.shape();
    const int L = shape.depth();
    double prod = 1.0;
    for (int l = 0; l < L; ++l) prod *= static_cast<double>(shape.widths[static_cast<size_t>(l)]);
    const double scale = std::pow(prod, -1.0 / (2.0 * L));
    return {scale * theta_ntk, std::sqrt(prod)};
}

} // namespace dln
