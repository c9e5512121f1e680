#include "dlnlab/core.hpp"

#include "dlnlab/rng.hpp"

#include <Eigen/SVD>
#include <stdexcept>

namespace dln {

NetShape::NetShape(std::vector<int> w) : widths(std::move(w)) {
    if (widths.size() < 2) throw std::invalid_argument("NetShape: need at least depth 1 (two widths)");
    for (int n : widths)
        if (n <= 0) throw std::invalid_argument("NetShape: widths must be positive");
}

NetShape NetShape::rect(int depth, int hidden, int n_in, int n_out) {
    if (depth < 1) throw std::invalid_argument("NetShape::rect: depth must be >= 1");
    std::vector<int> w(static_cast<size_t>(depth) + 1, hidden);
    w.front() = n_in;
    w.back() = n_out;
    return NetShape(std::move(w));
}

bool NetShape::rectangular() const {
    for (size_t i = 2; i + 1 < widths.size(); ++i)
        if (widths[i] != widths[1]) return false;
    return true;
}

int NetShape::hidden_width() const {
    if (depth() < 2) throw std::logic_error("hidden_width: no hidden layer for depth < 2");
    if (!rectangular()) throw std::logic_error("hidden_width: network is not rectangular");
    return widths[1];
}

long NetShape::param_count() const {
    long p = 0;
    for (size_t l = 1; l < widths.size(); ++l) p += static_cast<long>(widths[l - 1]) * widths[l];
    return p;
}

Params::Params(NetShape shape, std::vector<Matrix> layers)
    : shape_(std::move(shape)), layers_(std::move(layers)) {
    if (layers_.size() != static_cast<size_t>(shape_.depth()))
        throw std::invalid_argument("Params: layer count does not match shape depth");
    for (int l = 0; l < shape_.depth(); ++l) {
        const Matrix& W = layers_[static_cast<size_t>(l)];
        if (W.rows() != shape_.widths[static_cast<size_t>(l) + 1] ||
            W.cols() != shape_.widths[static_cast<size_t>(l)])
            throw std::invalid_argument("Params: layer dimensions do not chain with shape");
    }
}

Params Params::zero(const NetShape& shape) {
    std::vector<Matrix> layers;
    layers.reserve(static_cast<size_t>(shape.depth()));
    for (int l = 0; l < shape.depth(); ++l)
        layers.push_back(Matrix::Zero(shape.widths[static_cast<size_t>(l) + 1],
                                      shape.widths[static_cast<size_t>(l)]));
    return Params(shape, std::move(layers));
}

double Params::squared_norm() const {
    double s = 0;
    for (const Matrix& W : layers_) s += W.squaredNorm();
    return s;
}

double Params::norm() const { return std::sqrt(squared_norm()); }

bool Params::all_finite() const {
    for (const Matrix& W : layers_)
        if (!W.allFinite()) return false;
    return true;
}

Params& Params::operator+=(const Params& o) {
    for (size_t l = 0; l < layers_.size(); ++l) layers_[l] += o.layers_[l];
    return *this;
}

Params& Params::operator-=(const Params& o) {
    for (size_t l = 0; l < layers_.size(); ++l) layers_[l] -= o.layers_[l];
    return *this;
}

Params& Params::operator*=(double c) {
    for (Matrix& W : layers_) W *= c;
    return *this;
}

double dot(const Params& a, const Params& b) {
    if (!(a.shape() == b.shape())) throw std::invalid_argument("dot: shapes must match");
    double s = 0;
    for (int l = 0; l < a.depth(); ++l) s += a.layer(l).cwiseProduct(b.layer(l)).sum();
    return s;
}

Matrix product_map(const Params& theta) {
    Matrix A = theta.layer(0);
    for (int l = 1; l < theta.depth(); ++l) A = theta.layer(l) * A;
    return A;
}

std::vector<Matrix> prefix_products(const Params& theta) {
    const int L = theta.depth();
    std::vector<Matrix> pre(static_cast<size_t>(L));
    pre[0] = Matrix::Identity(theta.shape().in_dim(), theta.shape().in_dim());
    for (int l = 1; l < L; ++l) pre[static_cast<size_t>(l)] = theta.layer(l - 1) * pre[static_cast<size_t>(l - 1)];
    return pre;
}

std::vector<Matrix> suffix_products(const Params& theta) {
    const int L = theta.depth();
    std::vector<Matrix> suf(static_cast<size_t>(L));
    suf[static_cast<size_t>(L - 1)] = Matrix::Identity(theta.shape().out_dim(), theta.shape().out_dim());
    for (int l = L - 2; l >= 0; --l)
        suf[static_cast<size_t>(l)] = suf[static_cast<size_t>(l + 1)] * theta.layer(l + 1);
    return suf;
}

GradVec layer_gradients(const Params& theta, const Matrix& cost_grad_at_A) {
    const auto pre = prefix_products(theta);
    const auto suf = suffix_products(theta);
    std::vector<Matrix> grads;
    grads.reserve(static_cast<size_t>(theta.depth()));
    for (int l = 0; l < theta.depth(); ++l)
        grads.push_back(suf[static_cast<size_t>(l)].transpose() * cost_grad_at_A *
                        pre[static_cast<size_t>(l)].transpose());
    return GradVec(theta.shape(), std::move(grads));
}

Params init_gaussian(const NetShape& shape, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw std::invalid_argument("init_gaussian: sigma must be nonnegative");
    Params theta = Params::zero(shape);
    if (sigma == 0.0) return theta;
    RandomStream rng(seed);
    std::uint64_t counter = 0;
    for (int l = 0; l < shape.depth(); ++l) {
        Matrix& W = theta.layer(l);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = sigma * rng.normal(counter++);
    }
    return theta;
}

int rank_of(const Matrix& A, double tol) {
    if (tol <= 0) throw std::invalid_argument("rank_of: tol must be positive");
    if (A.size() == 0) return 0;
    Eigen::BDCSVD<Matrix> svd(A);
    const Vector& s = svd.singularValues();
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > tol) ++r;
    return r;
}

double nuclear_norm(const Matrix& A) {
    if (A.size() == 0) return 0.0;
    Eigen::BDCSVD<Matrix> svd(A);
    return svd.singularValues().sum();
}

} // namespace dln
