#pragma once

#include "dlnlab/core.hpp"

#include <cstdint>
#include <vector>

namespace dln {

/// Hidden-layer rotation: L-1 orthogonal w x w factors (O_1, ..., O_{L-1}).
struct Rotation {
    std::vector<Matrix> ops;

    explicit Rotation(std::vector<Matrix> factors);
    int width() const { return static_cast<int>(ops.front().rows()); }
    int depth() const { return static_cast<int>(ops.size()) + 1; }
};

/// R theta = (O_1 W_1, O_2 W_2 O_1^T, ..., W_L O_{L-1}^T). Guarantees
/// A_{R theta} = A_theta; requires a rectangular network matching R.
Params apply_rotation(const Rotation& R, const Params& theta);

/// Haar-distributed rotation via QR of a Gaussian matrix with sign-fixed
/// diagonal; deterministic per seed.
Rotation random_rotation(int w, int L, std::uint64_t seed);

/// Zero-padding embedding of a width-w network into width w_target: W_1
/// padded with zero rows below, middle layers embedded top-left, W_L padded
/// with zero columns right. Commutes with A and with loss gradients.
Params include_to_width(const Params& theta, int w_target);

/// max_l || W_l W_l^T - W_{l+1}^T W_{l+1} ||_F; zero exactly on balanced
/// parameters, conserved by gradient flow.
double balancedness_defect(const Params& theta);

/// Classical-parametrization initialization equivalent to gradient flow in
/// the NTK parametrization started at theta_ntk: returns
/// (n_0 ... n_{L-1})^{-1/(2L)} * theta_ntk and the time-scale factor
/// c = sqrt(n_0 ... n_{L-1}) such that A_{theta(t)} = A^{NTK}(c t).
/// The maximal-update parametrization needs no map: for rectangular linear
/// networks it coincides with the classical one at variance w^{-1}.
std::pair<Params, double> ntk_param_map(const Params& theta_ntk);

} // namespace dln
