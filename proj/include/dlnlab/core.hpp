#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace dln {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Architecture of a deep linear network: depth L and widths (n_0, ..., n_L).
struct NetShape {
    std::vector<int> widths;

    NetShape() = default;
    explicit NetShape(std::vector<int> w);

    /// Rectangular (L, w)-network with input n0 and output nL.
    static NetShape rect(int depth, int hidden, int n_in, int n_out);

    int depth() const { return static_cast<int>(widths.size()) - 1; }
    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }
    bool rectangular() const;
    /// Common hidden width w; requires rectangular() and depth >= 2.
    int hidden_width() const;
    /// Total parameter count P = sum_l n_{l-1} * n_l.
    long param_count() const;

    bool operator==(const NetShape& o) const { return widths == o.widths; }
};

/// Parameter vector theta = (W_1, ..., W_L), stored ascending: W_1 first.
/// Layer l has dimensions n_l x n_{l-1}.
class Params {
public:
    Params() = default;
    Params(NetShape shape, std::vector<Matrix> layers);

    /// All-zero parameters of the given shape.
    static Params zero(const NetShape& shape);

    const NetShape& shape() const { return shape_; }
    int depth() const { return shape_.depth(); }
    const Matrix& layer(int l) const { return layers_[static_cast<size_t>(l)]; }
    Matrix& layer(int l) { return layers_[static_cast<size_t>(l)]; }
    const std::vector<Matrix>& layers() const { return layers_; }

    /// Euclidean norm of the flattened concatenation: sqrt(sum_l ||W_l||_F^2).
    double norm() const;
    double squared_norm() const;
    bool all_finite() const;

    Params& operator+=(const Params& o);
    Params& operator-=(const Params& o);
    Params& operator*=(double c);
    friend Params operator+(Params a, const Params& b) { return a += b; }
    friend Params operator-(Params a, const Params& b) { return a -= b; }
    friend Params operator*(double c, Params a) { return a *= c; }
    friend Params operator*(Params a, double c) { return a *= c; }

private:
    NetShape shape_;
    std::vector<Matrix> layers_;
};

/// Gradient of the loss w.r.t. theta; same layout as Params.
using GradVec = Params;

/// Euclidean inner product of the flattened concatenations.
double dot(const Params& a, const Params& b);

/// Product map A_theta = W_L W_{L-1} ... W_1, dimensions n_L x n_0.
Matrix product_map(const Params& theta);

/// Prefix products Pre_l = W_{l-1} ... W_1 (Pre_1 = I_{n_0}) for l = 1..L.
std::vector<Matrix> prefix_products(const Params& theta);
/// Suffix products Suf_l = W_L ... W_{l+1} (Suf_L = I_{n_L}) for l = 1..L.
std::vector<Matrix> suffix_products(const Params& theta);

/// Chain rule through the product map: given dC/dA at A_theta, returns the
/// per-layer gradients dL/dW_l = Suf_l^T (dC/dA) Pre_l^T. Both flank
/// product sweeps are computed once (O(L) matrix products total).
GradVec layer_gradients(const Params& theta, const Matrix& cost_grad_at_A);

/// I.i.d. N(0, sigma^2) parameters from a counter-based stream keyed by
/// seed. sigma = 0 gives the origin. Entries are assigned in layer order,
/// each layer filled row-major, so results are platform-order independent.
Params init_gaussian(const NetShape& shape, double sigma, std::uint64_t seed);

/// Number of singular values of A strictly greater than tol.
int rank_of(const Matrix& A, double tol);

/// Sum of singular values.
double nuclear_norm(const Matrix& A);

/// Default rank tolerances used by the experiment presets.
inline constexpr double kRankTolRegime = 1e-1;
inline constexpr double kRankTolFine = 1e-4;

} // namespace dln
