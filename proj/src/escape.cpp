#include "dlnlab/escape.hpp"

#include "dlnlab/symmetry.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace dln {

namespace {

Params width1_direction(const Vector& u, const Vector& v, int L, double v_sign) {
    const int n0 = static_cast<int>(v.size());
    const int nL = static_cast<int>(u.size());
    std::vector<int> widths(static_cast<size_t>(L) + 1, 1);
    widths.front() = n0;
    widths.back() = nL;
    NetShape shape{widths};

    const double c = 1.0 / std::sqrt(static_cast<double>(L));
    std::vector<Matrix> layers;
    layers.reserve(static_cast<size_t>(L));
    layers.push_back(v_sign * c * v.transpose());
    for (int l = 1; l < L - 1; ++l) layers.push_back(c * Matrix::Ones(1, 1));
    layers.push_back(c * u);
    return Params(shape, std::move(layers));
}

double top_singular_value(const Matrix& G) {
    return Eigen::BDCSVD<Matrix>(G).singularValues()(0);
}

} // namespace

EscapeProfile escape_profile(const CostSpec& cost, int L) {
    if (L < 2) throw std::invalid_argument("escape_profile: depth must be >= 2");
    const Matrix G = cost_gradient_at_zero(cost);
    Eigen::BDCSVD<Matrix> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    if (s(0) <= 0) throw std::invalid_argument("escape_profile: grad C(0) is zero");
    const double s2 = s.size() > 1 ? s(1) : 0.0;
    if (s(0) - s2 <= kMultiplicityRelTol * s(0)) throw MultiplicityNotOneError(s(0), s2);

    EscapeProfile p;
    p.u1 = svd.matrixU().col(0);
    p.v1 = svd.matrixV().col(0);
    p.s1 = s(0);
    p.gap = s(0) - s2;
    p.s_star = std::pow(static_cast<double>(L), -(L - 2) / 2.0) * s(0);
    p.depth = L;
    p.rho_star = width1_direction(p.u1, p.v1, L, -1.0);
    return p;
}

std::vector<EscapeDirection> all_escape_directions(const Matrix& G, int L) {
    if (L < 2) throw std::invalid_argument("all_escape_directions: depth must be >= 2");
    Eigen::BDCSVD<Matrix> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= 0) throw std::invalid_argument("all_escape_directions: G is zero");

    const double depth_factor = std::pow(static_cast<double>(L), -(L - 2) / 2.0);
    const double tiny = 1e-12 * s(0);
    std::vector<EscapeDirection> pos, neg;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) <= tiny) continue;
        const Vector u = svd.matrixU().col(i);
        const Vector v = svd.matrixV().col(i);
        pos.push_back({width1_direction(u, v, L, -1.0), depth_factor * s(i)});
        neg.push_back({width1_direction(u, v, L, +1.0), -depth_factor * s(i)});
    }
    // Speeds descending: +s_1', +s_2', ..., then -s_r', ..., -s_1'.
    std::vector<EscapeDirection> out = std::move(pos);
    for (auto it = neg.rbegin(); it != neg.rend(); ++it) out.push_back(std::move(*it));
    return out;
}

bool escape_cone_member(const Params& theta, const Matrix& G, int L, double eps) {
    const double norm = theta.norm();
    if (norm == 0) throw std::invalid_argument("escape_cone_member: theta must be nonzero");
    const double s_star = std::pow(static_cast<double>(L), -(L - 2) / 2.0) * top_singular_value(G);
    const double lhs = homogeneous_value(G, theta) / std::pow(norm, L);
    return lhs < (-s_star + eps) / static_cast<double>(L);
}

double theoretical_escape_norm(double t, int L, double s, double T) {
    if (L < 2) throw std::invalid_argument("theoretical_escape_norm: depth must be >= 2");
    if (s <= 0) throw std::invalid_argument("theoretical_escape_norm: s must be positive");
    if (L == 2) return std::exp(s * (t + T));
    if (t >= T) throw std::domain_error("theoretical_escape_norm: t must be < T for L > 2");
    return std::pow(s * (L - 2) * (T - t), -1.0 / (L - 2));
}

double homogeneous_rescale_check(const Params& theta0, const Matrix& G, double lambda, double t,
                                 const FlowConfig& cfg) {
    if (lambda <= 0 || t <= 0) throw std::invalid_argument("homogeneous_rescale_check: need lambda, t > 0");
    const int L = theta0.depth();
    const CostSpec cost = TraceCost{G};
    const Params a = integrate_to_time(lambda * theta0, cost, cfg.eta, t, cfg.integrator);
    const Params b =
        integrate_to_time(theta0, cost, cfg.eta, std::pow(lambda, L - 2) * t, cfg.integrator);
    return (a - lambda * b).norm();
}

std::vector<double> direction_convergence_stat(const Trajectory& traj, const Matrix& G, int L) {
    if (traj.snapshot_params.empty())
        throw std::invalid_argument("direction_convergence_stat: trajectory has no recorded parameters");
    const double s_star = std::pow(static_cast<double>(L), -(L - 2) / 2.0) * top_singular_value(G);
    std::vector<double> stat;
    stat.reserve(traj.snapshot_params.size());
    for (const Params& theta : traj.snapshot_params) {
        const double norm = theta.norm();
        if (norm == 0) {
            stat.push_back(s_star / L);
            continue;
        }
        stat.push_back(homogeneous_value(G, theta) / std::pow(norm, L) + s_star / L);
    }
    return stat;
}

GradVec homogeneous_gradient_delta(const Matrix& G, const Params& x, const Params& b) {
    const int L = x.depth();
    const auto pre = prefix_products(x);
    const auto suf = suffix_products(x);

    // dPre_l = Pre_l(x + b) - Pre_l(x), built from small quantities only.
    std::vector<Matrix> dpre(static_cast<size_t>(L));
    dpre[0] = Matrix::Zero(pre[0].rows(), pre[0].cols());
    for (int l = 1; l < L; ++l)
        dpre[static_cast<size_t>(l)] =
            b.layer(l - 1) * pre[static_cast<size_t>(l - 1)] +
            (x.layer(l - 1) + b.layer(l - 1)) * dpre[static_cast<size_t>(l - 1)];

    std::vector<Matrix> dsuf(static_cast<size_t>(L));
    dsuf[static_cast<size_t>(L - 1)] =
        Matrix::Zero(suf[static_cast<size_t>(L - 1)].rows(), suf[static_cast<size_t>(L - 1)].cols());
    for (int l = L - 2; l >= 0; --l)
        dsuf[static_cast<size_t>(l)] =
            suf[static_cast<size_t>(l + 1)] * b.layer(l + 1) +
            dsuf[static_cast<size_t>(l + 1)] * (x.layer(l + 1) + b.layer(l + 1));

    std::vector<Matrix> grads;
    grads.reserve(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        const size_t k = static_cast<size_t>(l);
        grads.push_back(dsuf[k].transpose() * G * (pre[k] + dpre[k]).transpose() +
                        suf[k].transpose() * G * dpre[k].transpose());
    }
    return GradVec(x.shape(), std::move(grads));
}

namespace {

// || grad C_r(x0(t)) - grad H(x0(t)) || = || grad e(x0(t)) || inside the
// h == 1 ball, evaluated without cancellation.
double correction_integrand_norm(const CostSpec& base, const Params& x0) {
    const Matrix A = product_map(x0);
    return std::sqrt(layer_gradients(x0, cost_gradient_excess(base, A)).squared_norm());
}

// Estimated integral of the correction integrand over (-inf, t], using the
// theoretical decay rate of ||x0||^{2L-1}.
double tail_estimate(double delta_at_t, double t, int L, double s_star) {
    if (L == 2) return delta_at_t / (3.0 * s_star);
    return delta_at_t * (-t) * (L - 2) / static_cast<double>(L + 1);
}

} // namespace

double path_flow_residual(const PathGrid& path, const CostSpec& base_cost, const Matrix& G,
                          double r) {
    if (path.times.size() < 3) throw std::invalid_argument("path_flow_residual: need at least 3 points");
    const LocalizedCost loc{std::make_shared<CostSpec>(base_cost), G, r};
    double sup = 0;
    for (size_t j = 1; j + 1 < path.times.size(); ++j) {
        const double h1 = path.times[j] - path.times[j - 1];
        const double h2 = path.times[j + 1] - path.times[j];
        const double denom = h1 * h2 * (h1 + h2);
        Params deriv = (h1 * h1) * path.values[j + 1];
        deriv += (h2 * h2 - h1 * h1) * path.values[j];
        deriv -= (h2 * h2) * path.values[j - 1];
        deriv *= 1.0 / denom;
        deriv += localized_value_gradient(loc, path.values[j]).second;
        sup = std::max(sup, deriv.norm());
    }
    return sup;
}

RefineResult refine_escape_path(const CostSpec& cost, const EscapeProfile& profile,
                                const PathGridSpec& grid, double tol, int max_iter) {
    if (tol <= 0 || max_iter < 1) throw std::invalid_argument("refine_escape_path: need tol > 0, max_iter >= 1");
    if (grid.points < 8) throw std::invalid_argument("refine_escape_path: need at least 8 grid points");
    if (cost.is_localized()) throw std::invalid_argument("refine_escape_path: pass the base cost, not a localization");

    const int L = profile.depth;
    const double s_star = profile.s_star;
    const double r = grid.r ? *grid.r : 0.25 * std::pow(profile.s1, 1.0 / (L - 1));
    const Matrix G = cost_gradient_at_zero(cost);

    const Params rho_w = grid.width > 1 ? include_to_width(profile.rho_star, grid.width) : profile.rho_star;

    // T = 0 fixes the time origin; the grid then lives at negative times with
    // ||x0(t_max)|| = r/2.
    const double t_max = L == 2 ? std::log(r / 2.0) / s_star
                                : -std::pow(r / 2.0, -(L - 2)) / (s_star * (L - 2));
    if (!(t_max < 0))
        throw std::invalid_argument("refine_escape_path: localization radius too large (t_max >= 0)");

    auto x0_at = [&](double t) { return theoretical_escape_norm(t, L, s_star, 0.0) * rho_w; };

    double t_min;
    if (grid.t_min) {
        t_min = *grid.t_min;
        if (t_min >= t_max) throw std::invalid_argument("refine_escape_path: t_min must be < t_max");
        const double tail = tail_estimate(correction_integrand_norm(cost, x0_at(t_min)), t_min, L, s_star);
        if (tail > tol * grid.tail_factor) throw TailNotNegligibleError(tail);
    } else {
        t_min = 10.0 * t_max;
        for (int tries = 0;; ++tries) {
            const double tail =
                tail_estimate(correction_integrand_norm(cost, x0_at(t_min)), t_min, L, s_star);
            if (tail <= tol * grid.tail_factor) break;
            if (tries >= 200) throw TailNotNegligibleError(tail);
            t_min *= 1.5;
        }
    }

    const int N = grid.points;
    std::vector<double> times(static_cast<size_t>(N));
    const double lo = std::log(-t_min), hi = std::log(-t_max);
    for (int i = 0; i < N; ++i)
        times[static_cast<size_t>(i)] = -std::exp(lo + (hi - lo) * i / static_cast<double>(N - 1));

    std::vector<Params> x0(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) x0[static_cast<size_t>(i)] = x0_at(times[static_cast<size_t>(i)]);

    const Params zero = Params::zero(rho_w.shape());
    std::vector<Params> b(static_cast<size_t>(N), zero);

    // grad C_r(x0 + b) - grad H(x0), cancellation-free inside ||theta|| <= r.
    auto delta_grad = [&](const Params& x, const Params& corr) -> GradVec {
        const Params theta = x + corr;
        if (theta.norm() <= r) {
            GradVec d = homogeneous_gradient_delta(G, x, corr);
            d += layer_gradients(theta, cost_gradient_excess(cost, product_map(theta)));
            return d;
        }
        LocalizedCost loc{std::make_shared<CostSpec>(cost), G, r};
        GradVec d = localized_value_gradient(loc, theta).second;
        d -= homogeneous_gradient(G, x);
        return d;
    };

    RefineResult result;
    result.localization_radius = r;
    double prev_change = -1;
    int consecutive_expanding = 0;

    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<Params> b_next(static_cast<size_t>(N), zero);
        Params acc = zero;
        GradVec f_prev = delta_grad(x0[0], b[0]);
        for (int i = 1; i < N; ++i) {
            const size_t k = static_cast<size_t>(i);
            GradVec f = delta_grad(x0[k], b[k]);
            acc += (0.5 * (times[k] - times[k - 1])) * (f + f_prev);
            b_next[k] = -1.0 * acc;
            f_prev = std::move(f);
        }

        double change = 0;
        for (int i = 0; i < N; ++i)
            change = std::max(change, (b_next[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]).norm());
        b = std::move(b_next);
        ++result.iterations;

        if (prev_change > 0) {
            const double ratio = change / prev_change;
            result.contraction_ratios.push_back(ratio);
            consecutive_expanding = ratio > 1.0 ? consecutive_expanding + 1 : 0;
            if (consecutive_expanding >= 3) throw NoContractionError();
        }
        prev_change = change;
        result.final_change = change;
        if (change <= tol) break;
    }

    result.base.times = times;
    result.base.values = x0;
    result.base.kind = PathKind::Homogeneous;
    result.path.times = times;
    result.path.kind = PathKind::Refined;
    result.path.values.reserve(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i)
        result.path.values.push_back(x0[static_cast<size_t>(i)] + b[static_cast<size_t>(i)]);
    result.corrections = std::move(b);
    return result;
}

} // namespace dln
