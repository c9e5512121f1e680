#include "dlnlab/flow.hpp"

#include "dlnlab/symmetry.hpp"

#include <cmath>
#include <limits>

namespace dln {

namespace {

GradVec neg_gradient(const Params& theta, const CostSpec& cost) {
    GradVec g = loss_gradient(theta, cost);
    g *= -1.0;
    return g;
}

Params rk4_step_from(const Params& theta, const CostSpec& cost, double eta, const GradVec& k1) {
    const GradVec k2 = neg_gradient(theta + (eta / 2.0) * k1, cost);
    const GradVec k3 = neg_gradient(theta + (eta / 2.0) * k2, cost);
    const GradVec k4 = neg_gradient(theta + eta * k3, cost);
    return theta + (eta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Params rk4_step(const Params& theta, const CostSpec& cost, double eta) {
    return rk4_step_from(theta, cost, eta, neg_gradient(theta, cost));
}

SnapshotRecord make_snapshot(long step, double time, const Params& theta, double loss,
                             double grad_norm, const FlowConfig& cfg,
                             const std::optional<CostSpec>& test_cost) {
    SnapshotRecord rec;
    rec.step = step;
    rec.time = time;
    rec.loss_train = loss;
    if (test_cost) rec.loss_test = loss_value(theta, *test_cost);
    rec.grad_norm = grad_norm;
    rec.param_norm = theta.norm();
    const Matrix A = product_map(theta);
    rec.rank = rank_of(A, cfg.rank_tol);
    rec.nuclear_norm = nuclear_norm(A);
    rec.balance_defect = theta.depth() >= 2 ? balancedness_defect(theta) : 0.0;
    return rec;
}

} // namespace

Params flow_step(const Params& theta, const CostSpec& cost, double eta, Integrator integ) {
    if (integ == Integrator::Rk4) return rk4_step(theta, cost, eta);
    return theta + eta * neg_gradient(theta, cost);
}

Trajectory integrate(const Params& theta0, const CostSpec& cost, const FlowConfig& cfg,
                     const std::optional<CostSpec>& test_cost) {
    if (cfg.eta <= 0) throw std::invalid_argument("integrate: eta must be positive");
    if (cfg.snapshot_every < 1) throw std::invalid_argument("integrate: snapshot_every must be >= 1");

    Trajectory traj;
    traj.terminal = theta0;
    Params theta = theta0;

    for (long step = 0;; ++step) {
        const double loss = loss_value(theta, cost);
        const GradVec grad = loss_gradient(theta, cost);
        const double grad_norm = std::sqrt(grad.squared_norm());
        if (!std::isfinite(loss) || !std::isfinite(grad_norm)) {
            traj.terminal = theta;
            throw NonFiniteError(std::move(traj));
        }

        const bool due = (step % cfg.snapshot_every == 0) || step == cfg.max_steps;
        bool stop = false;
        std::string reason;
        if (cfg.stop_loss && loss <= *cfg.stop_loss) {
            stop = true;
            reason = "stop_loss";
        } else if (cfg.stop_grad_norm && grad_norm <= *cfg.stop_grad_norm) {
            stop = true;
            reason = "stop_grad_norm";
        } else if (step == cfg.max_steps) {
            stop = true;
            reason = "max_steps";
        }

        if (due || stop) {
            traj.snapshots.push_back(
                make_snapshot(step, static_cast<double>(step) * cfg.eta, theta, loss, grad_norm, cfg, test_cost));
            if (cfg.record_params) traj.snapshot_params.push_back(theta);
        }
        if (stop) {
            traj.terminal = theta;
            traj.stop_reason = reason;
            return traj;
        }

        if (cfg.integrator == Integrator::Euler) {
            theta += cfg.eta * -1.0 * grad;
        } else {
            GradVec k1 = grad;
            k1 *= -1.0;
            theta = rk4_step_from(theta, cost, cfg.eta, k1);
        }
        if (!theta.all_finite()) {
            traj.terminal = theta;
            throw NonFiniteError(std::move(traj));
        }
    }
}

Params integrate_to_time(const Params& theta0, const CostSpec& cost, double eta, double time,
                         Integrator integ) {
    if (eta <= 0 || time < 0) throw std::invalid_argument("integrate_to_time: need eta > 0, time >= 0");
    Params theta = theta0;
    const long whole = static_cast<long>(std::floor(time / eta + 1e-12));
    for (long n = 0; n < whole; ++n) {
        theta = flow_step(theta, cost, eta, integ);
        if (!theta.all_finite()) throw NonFiniteError(Trajectory{{}, {}, theta, "non_finite"});
    }
    const double rest = time - static_cast<double>(whole) * eta;
    if (rest > 1e-15 * std::max(1.0, time)) theta = flow_step(theta, cost, rest, integ);
    return theta;
}

PlateauReport detect_plateaus(const Trajectory& traj, int window, double slope_tol, double sep_tol,
                              double eps_floor, double level_ratio) {
    const auto& snaps = traj.snapshots;
    if (static_cast<int>(snaps.size()) < window)
        throw std::invalid_argument("detect_plateaus: trajectory shorter than window");

    const double loss_final = snaps.back().loss_train;
    const size_t n = snaps.size();
    std::vector<double> log_excess(n);
    for (size_t k = 0; k < n; ++k)
        log_excess[k] = std::log(std::max(snaps[k].loss_train - loss_final, 0.0) + eps_floor);

    // Flatness of each snapshot-to-snapshot segment in log-excess.
    std::vector<bool> flat(n - 1);
    for (size_t k = 0; k + 1 < n; ++k) {
        const double dt = snaps[k + 1].time - snaps[k].time;
        flat[k] = std::abs(log_excess[k + 1] - log_excess[k]) <= slope_tol * dt;
    }

    struct Run {
        size_t first, last; // snapshot index range, inclusive
        double mean_loss, mean_excess, min_excess, max_excess;
    };
    std::vector<Run> runs;
    size_t k = 0;
    while (k + 1 < n) {
        if (!flat[k]) {
            ++k;
            continue;
        }
        size_t end = k;
        while (end + 1 < n && flat[end]) ++end; // segments [k, end) flat, snapshots k..end
        if (static_cast<int>(end - k + 1) >= window) {
            double sum_loss = 0, sum_excess = 0;
            double lo = std::numeric_limits<double>::infinity(), hi = 0;
            for (size_t i = k; i <= end; ++i) {
                const double excess = std::max(snaps[i].loss_train - loss_final, 0.0) + eps_floor;
                sum_loss += snaps[i].loss_train;
                sum_excess += excess;
                lo = std::min(lo, excess);
                hi = std::max(hi, excess);
            }
            const double m = static_cast<double>(end - k + 1);
            runs.push_back({k, end, sum_loss / m, sum_excess / m, lo, hi});
        }
        k = end + 1;
    }

    // Drop runs sitting at the excess floor or falling across more than
    // level_ratio: the former is noise, the latter is slow terminal
    // convergence, not a saddle plateau.
    std::vector<Run> kept;
    for (const Run& r : runs)
        if (r.mean_excess > 100.0 * eps_floor && r.max_excess <= level_ratio * r.min_excess)
            kept.push_back(r);

    // Merge neighbours whose levels are not separated by a relative drop of
    // at least sep_tol.
    std::vector<Run> merged;
    for (const Run& r : kept) {
        if (!merged.empty()) {
            Run& prev = merged.back();
            const double drop = (prev.mean_loss - r.mean_loss) /
                                std::max(std::abs(prev.mean_loss), eps_floor);
            if (drop < sep_tol) {
                const double n_prev = static_cast<double>(prev.last - prev.first + 1);
                const double n_cur = static_cast<double>(r.last - r.first + 1);
                prev.mean_loss = (prev.mean_loss * n_prev + r.mean_loss * n_cur) / (n_prev + n_cur);
                prev.last = r.last;
                prev.min_excess = std::min(prev.min_excess, r.min_excess);
                prev.max_excess = std::max(prev.max_excess, r.max_excess);
                continue;
            }
        }
        merged.push_back(r);
    }

    PlateauReport report;
    for (const Run& r : merged)
        report.intervals.push_back({snaps[r.first].time, snaps[r.last].time, r.mean_loss});
    return report;
}

double escape_time(const Params& theta0, const CostSpec& cost, const FlowConfig& cfg, double r,
                   double alpha) {
    if (r <= 0 || alpha <= 0) throw std::invalid_argument("escape_time: need r > 0, alpha > 0");
    Params theta = alpha * theta0;
    double prev_norm = theta.norm();
    if (prev_norm >= r) return 0.0;

    for (long step = 0; step < cfg.max_steps; ++step) {
        theta = flow_step(theta, cost, cfg.eta, cfg.integrator);
        if (!theta.all_finite()) throw NonFiniteError(Trajectory{{}, {}, theta, "non_finite"});
        const double norm = theta.norm();
        if (norm >= r) {
            const double t_prev = static_cast<double>(step) * cfg.eta;
            const double frac = (r - prev_norm) / (norm - prev_norm);
            return t_prev + frac * cfg.eta;
        }
        prev_norm = norm;
    }
    return std::numeric_limits<double>::infinity();
}

} // namespace dln
