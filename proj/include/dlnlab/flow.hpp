#pragma once

#include "dlnlab/core.hpp"
#include "dlnlab/costs.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dln {

enum class Integrator { Euler, Rk4 };

struct FlowConfig {
    double eta = 1e-3;
    long max_steps = 100000;
    long snapshot_every = 100;
    std::optional<double> stop_loss;
    std::optional<double> stop_grad_norm;
    Integrator integrator = Integrator::Euler;
    double rank_tol = kRankTolRegime;
    bool record_params = false; // keep theta at every snapshot
};

struct SnapshotRecord {
    long step = 0;
    double time = 0;
    double loss_train = 0;
    std::optional<double> loss_test;
    double grad_norm = 0;
    double param_norm = 0;
    int rank = 0;
    double nuclear_norm = 0;
    double balance_defect = 0;
};

struct Trajectory {
    std::vector<SnapshotRecord> snapshots;
    std::vector<Params> snapshot_params; // filled when cfg.record_params
    Params terminal;
    std::string stop_reason; // max_steps | stop_loss | stop_grad_norm
};

/// Raised when a parameter or loss becomes NaN/Inf (step size too large).
/// Carries whatever part of the trajectory was already recorded.
struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(Trajectory t)
        : std::runtime_error("integration produced a non-finite value"), partial(std::move(t)) {}
    Trajectory partial;
};

/// One discrete step of theta' = -grad L(theta): plain gradient descent
/// (euler) or the classical 4-stage Runge-Kutta update.
Params flow_step(const Params& theta, const CostSpec& cost, double eta, Integrator integ);

/// Gradient descent / gradient flow with trajectory instrumentation.
/// Snapshots are taken at step 0, every cfg.snapshot_every steps, and at the
/// final step. If test_cost is given its value is recorded per snapshot.
Trajectory integrate(const Params& theta0, const CostSpec& cost, const FlowConfig& cfg,
                     const std::optional<CostSpec>& test_cost = std::nullopt);

/// Integrate to an exact time horizon (whole steps plus one shortened final
/// step); returns the terminal parameters only.
Params integrate_to_time(const Params& theta0, const CostSpec& cost, double eta, double time,
                         Integrator integ);

struct PlateauInterval {
    double t_start = 0;
    double t_end = 0;
    double mean_loss = 0;
};

struct PlateauReport {
    std::vector<PlateauInterval> intervals;
    int count() const { return static_cast<int>(intervals.size()); }
};

/// Plateau detector. A plateau is a maximal run of at least `window`
/// snapshots on which |d log(loss - loss_final + eps_floor) / dt| stays
/// below slope_tol; runs whose mean loss levels differ by less than a
/// relative sep_tol are merged. A plateau must also hold its level: runs
/// whose excess spans more than level_ratio (slow terminal convergence,
/// which is flat per unit time but falls across decades) are discarded,
/// as are runs sitting at the eps_floor noise level.
PlateauReport detect_plateaus(const Trajectory& traj, int window, double slope_tol, double sep_tol,
                              double eps_floor = 1e-12, double level_ratio = 10.0);

/// Earliest time with ||theta(t)|| >= r for the flow started at
/// alpha * theta0, linearly interpolated between the bracketing steps.
/// Returns +inf if the radius is never reached within cfg.max_steps.
double escape_time(const Params& theta0, const CostSpec& cost, const FlowConfig& cfg, double r,
                   double alpha);

} // namespace dln
