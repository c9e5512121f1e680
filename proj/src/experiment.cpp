#include "dlnlab/experiment.hpp"

#include "dlnlab/analysis.hpp"
#include "dlnlab/escape.hpp"
#include "dlnlab/flow.hpp"
#include "dlnlab/greedy.hpp"
#include "dlnlab/rng.hpp"
#include "dlnlab/symmetry.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace dln {

namespace {

// ---------------------------------------------------------------------------
// JSON access with field-path diagnostics
// ---------------------------------------------------------------------------

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config error at '" + where + "': " + what);
}

std::uint64_t need_seed(const Json& j, const std::string& where);

const Json& need(const Json& j, const std::string& key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) fail(where + "." + key, "missing required field");
    return j.at(key);
}

double need_num(const Json& j, const std::string& key, const std::string& where) {
    const Json& v = need(j, key, where);
    if (!v.is_number()) fail(where + "." + key, "expected a number");
    return v.get<double>();
}

long need_int(const Json& j, const std::string& key, const std::string& where) {
    const Json& v = need(j, key, where);
    if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
    return v.get<long>();
}

double opt_num(const Json& j, const std::string& key, double def) {
    return j.is_object() && j.contains(key) ? j.at(key).get<double>() : def;
}

long opt_int(const Json& j, const std::string& key, long def) {
    return j.is_object() && j.contains(key) ? j.at(key).get<long>() : def;
}

std::uint64_t need_seed(const Json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("seed")) fail(where + ".seed", "missing required field");
    const Json& v = j.at("seed");
    if (!v.is_number_integer() || v.get<long long>() < 0)
        fail(where + ".seed", "expected a nonnegative integer");
    return v.get<std::uint64_t>();
}

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) fail(where + "." + key, "unknown field");
}

// ---------------------------------------------------------------------------
// Sub-config parsing
// ---------------------------------------------------------------------------

NetShape shape_from_json(const Json& j, const std::string& where) {
    if (j.contains("widths")) {
        check_keys(j, {"widths"}, where);
        const auto w = j.at("widths").get<std::vector<int>>();
        if (w.size() < 2) fail(where + ".widths", "need at least two widths");
        return NetShape(w);
    }
    check_keys(j, {"depth", "width", "in", "out"}, where);
    const int depth = static_cast<int>(need_int(j, "depth", where));
    const int width = static_cast<int>(need_int(j, "width", where));
    const int in = static_cast<int>(need_int(j, "in", where));
    const int out = static_cast<int>(need_int(j, "out", where));
    if (depth < 1 || width < 1 || in < 1 || out < 1) fail(where, "dimensions must be positive");
    return NetShape::rect(depth, width, in, out);
}

Integrator integrator_from_string(const std::string& s, const std::string& where) {
    if (s == "euler") return Integrator::Euler;
    if (s == "rk4") return Integrator::Rk4;
    fail(where, "integrator must be 'euler' or 'rk4'");
}

FlowConfig flow_from_json(const Json& j, const std::string& where) {
    check_keys(j, {"eta", "max_steps", "snapshot_every", "stop_loss", "stop_grad_norm", "integrator",
                   "rank_tol"},
               where);
    FlowConfig cfg;
    cfg.eta = need_num(j, "eta", where);
    cfg.max_steps = need_int(j, "max_steps", where);
    cfg.snapshot_every = opt_int(j, "snapshot_every", 1);
    if (j.contains("stop_loss")) cfg.stop_loss = j.at("stop_loss").get<double>();
    if (j.contains("stop_grad_norm")) cfg.stop_grad_norm = j.at("stop_grad_norm").get<double>();
    cfg.integrator = integrator_from_string(
        j.contains("integrator") ? j.at("integrator").get<std::string>() : "euler", where + ".integrator");
    cfg.rank_tol = opt_num(j, "rank_tol", kRankTolRegime);
    if (cfg.eta <= 0) fail(where + ".eta", "must be positive");
    if (cfg.snapshot_every < 1) fail(where + ".snapshot_every", "must be >= 1");
    if (cfg.rank_tol <= 0) fail(where + ".rank_tol", "must be positive");
    return cfg;
}

CostSpec cost_from_config(const Json& j, const std::string& where) {
    try {
        return cost_from_json(j);
    } catch (const std::exception& e) {
        fail(where, e.what());
    }
}

double sigma_from_config(const Json& cfg, const NetShape& shape, const std::string& where) {
    const bool has_gamma = cfg.contains("gamma");
    const bool has_sigma = cfg.contains("sigma");
    if (has_gamma && has_sigma) fail(where, "gamma and sigma are mutually exclusive");
    if (!has_gamma && !has_sigma) fail(where, "one of gamma or sigma is required");
    if (has_sigma) {
        const double s = cfg.at("sigma").get<double>();
        if (s < 0) fail(where + ".sigma", "must be nonnegative");
        return s;
    }
    const double gamma = cfg.at("gamma").get<double>();
    if (shape.depth() < 2 || !shape.rectangular())
        fail(where + ".gamma", "gamma needs a rectangular network with a hidden layer");
    const int w = shape.hidden_width(); // sigma^2 = w^{-gamma}
    return std::pow(static_cast<double>(w), -gamma / 2.0);
}

struct PlateauParams {
    int window = 8;
    double slope_tol = 0.05;
    double sep_tol = 0.2;
};

PlateauParams plateau_from_json(const Json& j, const std::string& where, PlateauParams def = {}) {
    check_keys(j, {"window", "slope_tol", "sep_tol"}, where);
    PlateauParams p = def;
    p.window = static_cast<int>(opt_int(j, "window", p.window));
    p.slope_tol = opt_num(j, "slope_tol", p.slope_tol);
    p.sep_tol = opt_num(j, "sep_tol", p.sep_tol);
    return p;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(jobs));
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Json check_entry(const std::string& name, bool pass, double value, double threshold) {
    return Json{{"name", name}, {"pass", pass}, {"value", value}, {"threshold", threshold}};
}

struct ExecResult {
    std::vector<std::pair<std::string, std::string>> files; // name -> content
    Json summary;
    int status = 0;
};

std::optional<CostSpec> default_test_cost(const CostSpec& cost) {
    if (!cost.is_mc()) return std::nullopt;
    const McCost& mc = cost.mc();
    if (mc.observed.size() >= static_cast<size_t>(mc.A_star.size())) return std::nullopt;
    return CostSpec(mc_complement(mc));
}

Json ranks_json(const std::vector<int>& ranks) {
    Json arr = Json::array();
    for (int r : ranks) arr.push_back(r);
    return arr;
}

} // namespace

// ---------------------------------------------------------------------------
// Tasks and presets
// ---------------------------------------------------------------------------

Matrix random_low_rank(int rows, int cols, int rank, double scale, std::uint64_t seed) {
    RandomStream rng(seed);
    std::uint64_t counter = 0;
    Matrix B1(rows, rank), B2(rank, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < rank; ++j) B1(i, j) = rng.normal(counter++);
    for (int i = 0; i < rank; ++i)
        for (int j = 0; j < cols; ++j) B2(i, j) = rng.normal(counter++);
    return scale * B1 * B2;
}

McCost make_mc_task(int rows, int cols, const std::vector<double>& singular_values, int observed,
                    std::uint64_t seed) {
    const int k = static_cast<int>(singular_values.size());
    if (k < 1 || k > std::min(rows, cols)) throw std::invalid_argument("make_mc_task: bad rank");
    if (observed < 1 || observed > rows * cols) throw std::invalid_argument("make_mc_task: bad observed count");

    RandomStream rng(seed);
    std::uint64_t counter = 0;
    auto orthonormal = [&](int n) {
        Matrix Z(n, k);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) Z(i, j) = rng.normal(counter++);
        Eigen::HouseholderQR<Matrix> qr(Z);
        Matrix Q = qr.householderQ() * Matrix::Identity(n, k);
        return Q;
    };
    const Matrix U = orthonormal(rows);
    const Matrix V = orthonormal(cols);
    Vector s(k);
    for (int i = 0; i < k; ++i) s(i) = singular_values[static_cast<size_t>(i)];

    McCost task;
    task.A_star = U * s.asDiagonal() * V.transpose();

    // Fisher-Yates prefix over all index pairs.
    std::vector<std::pair<int, int>> all;
    all.reserve(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) all.emplace_back(i, j);
    for (int i = 0; i < observed; ++i) {
        const auto pick = i + static_cast<int>(rng.bits(counter++) % static_cast<std::uint64_t>(all.size() - i));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(pick)]);
    }
    task.observed.assign(all.begin(), all.begin() + observed);
    return task;
}

std::vector<std::string> preset_names() { return {"figure1", "figure3"}; }

Json preset_config(const std::string& name) {
    if (name == "figure1") {
        // Rank-3 staircase: 10x10 rank-3 matrix completion, L=4, gamma=2.
        // Desk-scaled: width 20 instead of 100; step budget reduced to keep
        // the run in minutes. The plateau/rank staircase is preserved.
        Json j;
        j["kind"] = "figure1";
        j["seed"] = 1;
        j["shape"] = {{"depth", 4}, {"width", 20}, {"in", 10}, {"out", 10}};
        j["gamma"] = 2.0;
        j["figure1"] = {{"teacher_seed", 7},
                        {"singular_values", {10.0, 7.0, 4.0}},
                        {"observed", 60},
                        {"plateau", {{"window", 8}, {"slope_tol", 0.015}, {"sep_tol", 0.2}}}};
        j["flow"] = {{"eta", 2e-3},    {"max_steps", 3000000}, {"snapshot_every", 500},
                     {"stop_loss", 1e-8}, {"integrator", "euler"}, {"rank_tol", 0.1}};
        return j;
    }
    if (name == "figure3") {
        // Regime comparison on matrix completion: 12x12 rank-1 teacher, 30%
        // of entries observed, widths {16, 64}. Desk-scaled from 30x30 /
        // widths up to 1000; the property under test is the ordering of the
        // regimes, not the exact error values.
        Json j;
        j["kind"] = "figure3";
        j["seed"] = 1;
        j["figure3"] = {{"depth", 4},
                        {"rows", 12},
                        {"cols", 12},
                        {"teacher_seed", 11},
                        {"singular_values", {12.0}},
                        {"observed", 43},
                        {"widths", {16, 64}},
                        {"gammas", {0.75, 1.5}},
                        {"seeds", 5},
                        {"eta0", 0.05},
                        {"max_steps", 20000},
                        {"rank_tol", 0.1}};
        return j;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

std::string presets_text() {
    std::ostringstream out;
    out << "figure1   rank-3 staircase run: 10x10 rank-3 matrix completion, L=4, w=20,\n"
           "          gamma=2. Desk-scaled (width 100 -> 20, reduced step budget);\n"
           "          checks: 3 plateaus, ranks 1,2,3, train <= 1e-6, test <= 1e-2.\n"
           "figure3   regime comparison: 12x12 rank-1 matrix completion, 30% observed,\n"
           "          L=4, w in {16,64}, gamma in {0.75,1.5}. Desk-scaled (30x30 and\n"
           "          w up to 1000 -> above); checks: smaller-variance init reaches\n"
           "          lower test error and lower converged rank.\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Validation / resolution
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string> kKindSet(std::begin(kKindNames), std::end(kKindNames));

void validate_single_kind_block(const Json& j, const std::string& kind) {
    for (const std::string& k : kKindSet)
        if (j.contains(k) && k != kind) fail("config." + k, "kind-specific block does not match kind '" + kind + "'");
}

} // namespace

Json resolve_config(const Json& raw) {
    if (!raw.is_object()) throw ConfigError("config error at 'config': expected a JSON object");
    const Json& kind_j = need(raw, "kind", "config");
    if (!kind_j.is_string()) fail("config.kind", "expected a string");
    const std::string kind = kind_j.get<std::string>();
    if (!kKindSet.count(kind)) fail("config.kind", "unknown kind '" + kind + "'");
    validate_single_kind_block(raw, kind);

    Json cfg = raw;

    // Presets: merge missing fields from the built-in config.
    if (kind == "figure1" || kind == "figure3") {
        Json base = preset_config(kind);
        for (const auto& [key, value] : base.items())
            if (!cfg.contains(key)) cfg[key] = value;
        if (cfg.at(kind).is_object()) {
            Json block = base.at(kind);
            for (const auto& [key, value] : cfg.at(kind).items()) block[key] = value;
            cfg[kind] = block;
        }
    }

    const std::set<std::string> common = {"kind", "seed", "shape", "gamma", "sigma", "cost", "flow", kind};
    check_keys(cfg, common, "config");

    // Per-kind structural validation. Materializes nothing heavy; executors
    // re-parse through the same typed helpers.
    if (kind == "run") {
        need_seed(cfg, "config");
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        sigma_from_config(cfg, shape, "config");
        const CostSpec cost = cost_from_config(need(cfg, "cost", "config"), "config.cost");
        if (cost.rows() != shape.out_dim() || cost.cols() != shape.in_dim())
            fail("config.cost", "cost dimensions do not match shape");
        flow_from_json(need(cfg, "flow", "config"), "config.flow");
        if (!cfg.contains("run")) cfg["run"] = Json::object();
        check_keys(cfg.at("run"), {"plateau"}, "config.run");
        if (cfg.at("run").contains("plateau"))
            plateau_from_json(cfg.at("run").at("plateau"), "config.run.plateau");
    } else if (kind == "greedy") {
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        const CostSpec cost = cost_from_config(need(cfg, "cost", "config"), "config.cost");
        if (cost.rows() != shape.out_dim() || cost.cols() != shape.in_dim())
            fail("config.cost", "cost dimensions do not match shape");
        const Json& g = need(cfg, "greedy", "config");
        check_keys(g, {"eps", "inner_steps", "lr", "c_min", "max_width", "rank_tol"}, "config.greedy");
        if (need_num(g, "eps", "config.greedy") <= 0) fail("config.greedy.eps", "must be positive");
        if (need_int(g, "inner_steps", "config.greedy") < 1) fail("config.greedy.inner_steps", "must be >= 1");
        if (need_num(g, "lr", "config.greedy") <= 0) fail("config.greedy.lr", "must be positive");
        if (opt_int(g, "max_width", 16) < 1) fail("config.greedy.max_width", "must be >= 1");
    } else if (kind == "escape_sweep") {
        need_seed(cfg, "config");
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        if (shape.depth() < 2) fail("config.shape", "escape analysis needs depth >= 2");
        const CostSpec cost = cost_from_config(need(cfg, "cost", "config"), "config.cost");
        if (cost.rows() != shape.out_dim() || cost.cols() != shape.in_dim())
            fail("config.cost", "cost dimensions do not match shape");
        flow_from_json(need(cfg, "flow", "config"), "config.flow");
        const Json& b = need(cfg, "escape_sweep", "config");
        check_keys(b, {"alphas", "r"}, "config.escape_sweep");
        const auto alphas = need(b, "alphas", "config.escape_sweep").get<std::vector<double>>();
        if (alphas.size() < 2) fail("config.escape_sweep.alphas", "need at least two alphas");
        for (double a : alphas)
            if (a <= 0) fail("config.escape_sweep.alphas", "alphas must be positive");
        if (need_num(b, "r", "config.escape_sweep") <= 0) fail("config.escape_sweep.r", "must be positive");
    } else if (kind == "regime_sweep") {
        const Json& b = need(cfg, "regime_sweep", "config");
        check_keys(b, {"widths", "gammas", "seeds", "depth", "in", "out", "teacher"},
                   "config.regime_sweep");
        const auto widths = need(b, "widths", "config.regime_sweep").get<std::vector<int>>();
        if (widths.size() < 2) fail("config.regime_sweep.widths", "need at least two widths");
        need(b, "gammas", "config.regime_sweep");
        if (need_int(b, "seeds", "config.regime_sweep") < 1) fail("config.regime_sweep.seeds", "must be >= 1");
        if (need_int(b, "depth", "config.regime_sweep") < 2) fail("config.regime_sweep.depth", "must be >= 2");
        const Json& t = need(b, "teacher", "config.regime_sweep");
        if (!t.contains("matrix")) {
            check_keys(t, {"rank", "scale", "seed"}, "config.regime_sweep.teacher");
            need_int(t, "rank", "config.regime_sweep.teacher");
            need_num(t, "scale", "config.regime_sweep.teacher");
            need_int(t, "seed", "config.regime_sweep.teacher");
        }
    } else if (kind == "ntk_check") {
        need_seed(cfg, "config");
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        if (!cfg.contains("gamma")) fail("config.gamma", "ntk_check requires gamma");
        sigma_from_config(cfg, shape, "config");
        const Json& b = need(cfg, "ntk_check", "config");
        check_keys(b, {"draws"}, "config.ntk_check");
        if (need_int(b, "draws", "config.ntk_check") < 2) fail("config.ntk_check.draws", "must be >= 2");
    } else if (kind == "refine_path") {
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        if (shape.depth() < 2) fail("config.shape", "escape analysis needs depth >= 2");
        const CostSpec cost = cost_from_config(need(cfg, "cost", "config"), "config.cost");
        if (cost.is_localized()) fail("config.cost", "refine_path expects the base cost, not a localization");
        if (cost.rows() != shape.out_dim() || cost.cols() != shape.in_dim())
            fail("config.cost", "cost dimensions do not match shape");
        const Json& b = need(cfg, "refine_path", "config");
        check_keys(b, {"points", "width", "r", "tol", "max_iter"}, "config.refine_path");
        if (opt_int(b, "points", 400) < 8) fail("config.refine_path.points", "must be >= 8");
        if (opt_num(b, "tol", 1e-10) <= 0) fail("config.refine_path.tol", "must be positive");
        if (opt_int(b, "max_iter", 50) < 1) fail("config.refine_path.max_iter", "must be >= 1");
    } else if (kind == "figure1") {
        need_seed(cfg, "config");
        const NetShape shape = shape_from_json(need(cfg, "shape", "config"), "config.shape");
        sigma_from_config(cfg, shape, "config");
        flow_from_json(need(cfg, "flow", "config"), "config.flow");
        const Json& b = need(cfg, "figure1", "config");
        check_keys(b, {"teacher_seed", "singular_values", "observed", "plateau"}, "config.figure1");
        need_int(b, "teacher_seed", "config.figure1");
        const auto sv = need(b, "singular_values", "config.figure1").get<std::vector<double>>();
        if (sv.empty()) fail("config.figure1.singular_values", "need at least one value");
        const long obs = need_int(b, "observed", "config.figure1");
        if (obs < 1 || obs > shape.in_dim() * shape.out_dim())
            fail("config.figure1.observed", "out of range");
        plateau_from_json(need(b, "plateau", "config.figure1"), "config.figure1.plateau");
    } else { // figure3
        need_seed(cfg, "config");
        const Json& b = need(cfg, "figure3", "config");
        check_keys(b,
                   {"depth", "rows", "cols", "teacher_seed", "singular_values", "observed", "widths",
                    "gammas", "seeds", "eta0", "max_steps", "rank_tol"},
                   "config.figure3");
        if (need_int(b, "depth", "config.figure3") < 2) fail("config.figure3.depth", "must be >= 2");
        const auto widths = need(b, "widths", "config.figure3").get<std::vector<int>>();
        const auto gammas = need(b, "gammas", "config.figure3").get<std::vector<double>>();
        if (widths.empty() || gammas.size() < 2)
            fail("config.figure3", "need at least one width and two gammas");
        if (need_int(b, "seeds", "config.figure3") < 1) fail("config.figure3.seeds", "must be >= 1");
        if (need_num(b, "eta0", "config.figure3") <= 0) fail("config.figure3.eta0", "must be positive");
        if (need_int(b, "max_steps", "config.figure3") < 1) fail("config.figure3.max_steps", "must be >= 1");
    }

    return cfg;
}

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

namespace {

Json trajectory_summary(const Trajectory& traj, const PlateauParams& pp) {
    Json s;
    s["stop_reason"] = traj.stop_reason;
    s["steps"] = traj.snapshots.back().step;
    s["final_train_loss"] = traj.snapshots.back().loss_train;
    if (traj.snapshots.back().loss_test) s["final_test_loss"] = *traj.snapshots.back().loss_test;
    s["final_rank"] = traj.snapshots.back().rank;
    s["rank_sequence"] = ranks_json(visited_ranks(traj));
    if (static_cast<int>(traj.snapshots.size()) >= pp.window) {
        const PlateauReport plat = detect_plateaus(traj, pp.window, pp.slope_tol, pp.sep_tol);
        s["plateau_count"] = plat.count();
        Json intervals = Json::array();
        for (const PlateauInterval& p : plat.intervals)
            intervals.push_back({{"t_start", p.t_start}, {"t_end", p.t_end}, {"mean_loss", p.mean_loss}});
        s["plateaus"] = std::move(intervals);
    } else {
        s["plateau_count"] = 0;
        s["plateaus"] = Json::array();
    }
    return s;
}

ExecResult exec_run_like(const Json& cfg, const CostSpec& cost, const PlateauParams& pp,
                         bool figure1_checks) {
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const double sigma = sigma_from_config(cfg, shape, "config");
    const FlowConfig flow = flow_from_json(cfg.at("flow"), "config.flow");
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const Params theta0 = init_gaussian(shape, sigma, seed);
    const std::optional<CostSpec> test_cost = default_test_cost(cost);

    ExecResult res;
    try {
        const Trajectory traj = integrate(theta0, cost, flow, test_cost);
        res.files.emplace_back("trajectory.csv", trajectory_csv(traj));
        res.summary = trajectory_summary(traj, pp);
    } catch (const NonFiniteError& e) {
        res.files.emplace_back("trajectory.csv", trajectory_csv(e.partial));
        res.summary["error"] = "non_finite";
        res.status = 3;
        return res;
    }

    if (figure1_checks) {
        const Json& s = res.summary;
        const auto seq = s.at("rank_sequence").get<std::vector<int>>();
        bool nondecreasing = std::is_sorted(seq.begin(), seq.end());
        std::set<int> positive;
        for (int r : seq)
            if (r > 0) positive.insert(r);
        const bool ranks_ok = nondecreasing && positive == std::set<int>{1, 2, 3};
        const double train = s.at("final_train_loss").get<double>();
        const double test = s.contains("final_test_loss") ? s.at("final_test_loss").get<double>() : 1e30;
        Json checks = Json::array();
        checks.push_back(check_entry("plateau_count_is_3", s.at("plateau_count") == 3,
                                     s.at("plateau_count").get<double>(), 3));
        checks.push_back(check_entry("rank_sequence_1_2_3", ranks_ok, ranks_ok ? 1 : 0, 1));
        checks.push_back(check_entry("final_train_le_1e-6", train <= 1e-6, train, 1e-6));
        checks.push_back(check_entry("final_test_le_1e-2", test <= 1e-2, test, 1e-2));
        res.summary["checks"] = std::move(checks);
    }
    return res;
}

ExecResult exec_run(const Json& cfg) {
    const CostSpec cost = cost_from_config(cfg.at("cost"), "config.cost");
    PlateauParams pp;
    if (cfg.at("run").contains("plateau"))
        pp = plateau_from_json(cfg.at("run").at("plateau"), "config.run.plateau");
    return exec_run_like(cfg, cost, pp, false);
}

ExecResult exec_figure1(Json cfg) {
    const Json& b = cfg.at("figure1");
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const McCost task = make_mc_task(shape.out_dim(), shape.in_dim(),
                                     b.at("singular_values").get<std::vector<double>>(),
                                     static_cast<int>(b.at("observed").get<long>()),
                                     b.at("teacher_seed").get<std::uint64_t>());
    const PlateauParams pp = plateau_from_json(b.at("plateau"), "config.figure1.plateau");
    return exec_run_like(cfg, CostSpec(task), pp, true);
}

ExecResult exec_greedy(const Json& cfg) {
    const CostSpec cost = cost_from_config(cfg.at("cost"), "config.cost");
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const Json& g = cfg.at("greedy");
    GreedyConfig gc;
    gc.eps = g.at("eps").get<double>();
    gc.inner_steps = g.at("inner_steps").get<long>();
    gc.lr = g.at("lr").get<double>();
    gc.c_min = opt_num(g, "c_min", 0.0);
    gc.max_width = static_cast<int>(opt_int(g, "max_width", 16));
    gc.rank_tol = opt_num(g, "rank_tol", kRankTolRegime);

    ExecResult res;
    GreedyReport report;
    try {
        report = greedy_low_rank(cost, shape, gc);
    } catch (const NonFiniteError&) {
        res.summary["error"] = "non_finite";
        res.status = 3;
        return res;
    }

    Json stages = Json::array();
    for (const GreedyStage& s : report.stages)
        stages.push_back({{"width", s.width},
                          {"cost", s.cost},
                          {"top_singular", s.top_singular},
                          {"gap", s.gap},
                          {"rank", s.rank},
                          {"multiplicity_flag", s.multiplicity_flag},
                          {"theta", params_to_json(s.theta)}});
    Json report_json;
    report_json["stages"] = std::move(stages);
    report_json["terminated"] =
        report.terminated == GreedyTermination::Converged ? "converged" : "max_width";
    report_json["final_params"] = params_to_json(report.final_params);
    res.files.emplace_back("greedy.json", report_json.dump(2) + "\n");

    res.summary["terminated"] = report_json["terminated"];
    res.summary["stages"] = report.stages.size();
    res.summary["rank_sequence"] = ranks_json(report.rank_sequence());
    res.summary["final_cost"] = report.stages.back().cost;
    return res;
}

ExecResult exec_escape_sweep(const Json& cfg, int jobs) {
    const CostSpec cost = cost_from_config(cfg.at("cost"), "config.cost");
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const FlowConfig flow = flow_from_json(cfg.at("flow"), "config.flow");
    const Json& b = cfg.at("escape_sweep");
    const auto alphas = b.at("alphas").get<std::vector<double>>();
    const double r = b.at("r").get<double>();
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const int L = shape.depth();

    const Params theta0 = init_gaussian(shape, 1.0, seed);
    std::vector<double> times(alphas.size());
    std::atomic<bool> non_finite{false};
    parallel_for(static_cast<int>(alphas.size()), jobs, [&](int i) {
        try {
            times[static_cast<size_t>(i)] = escape_time(theta0, cost, flow, r, alphas[static_cast<size_t>(i)]);
        } catch (const NonFiniteError&) {
            non_finite = true;
            times[static_cast<size_t>(i)] = std::nan("");
        }
    });

    std::ostringstream csv;
    csv << "alpha,t_alpha\n";
    for (size_t i = 0; i < alphas.size(); ++i)
        csv << format_g17(alphas[i]) << ',' << format_g17(times[i]) << '\n';

    const EscapeProfile prof = escape_profile(cost, L);
    std::vector<double> xs, ys;
    for (size_t i = 0; i < alphas.size(); ++i) {
        if (!std::isfinite(times[i])) continue; // never escaped or diverged
        if (L == 2) {
            xs.push_back(-std::log(alphas[i]));
            ys.push_back(times[i]);
        } else {
            xs.push_back(std::log(alphas[i]));
            ys.push_back(std::log(times[i]));
        }
    }

    ExecResult res;
    res.files.emplace_back("escape_times.csv", csv.str());
    if (non_finite) res.status = 3;
    res.summary["s_star"] = prof.s_star;
    res.summary["h_at_theta0"] = homogeneous_value(cost_gradient_at_zero(cost), theta0);
    res.summary["finite_escapes"] = xs.size();
    if (xs.size() >= 2) {
        const LinearFit fit = fit_linear(xs, ys);
        res.summary["slope"] = fit.slope;
        res.summary["r_squared"] = fit.r_squared;
        res.summary["theory_slope"] = L == 2 ? 1.0 / prof.s_star : -(L - 2.0);
        res.summary["law"] = L == 2 ? "t_alpha ~ (1/s*) * (-log alpha)" : "t_alpha ~ alpha^{-(L-2)}";
    }
    return res;
}

ExecResult exec_regime_sweep(const Json& cfg, int jobs) {
    const Json& b = cfg.at("regime_sweep");
    const auto widths = b.at("widths").get<std::vector<int>>();
    const auto gammas = b.at("gammas").get<std::vector<double>>();
    const int seeds = static_cast<int>(b.at("seeds").get<long>());
    const int depth = static_cast<int>(b.at("depth").get<long>());
    const int n_in = static_cast<int>(b.at("in").get<long>());
    const int n_out = static_cast<int>(b.at("out").get<long>());

    Matrix A_star;
    const Json& t = b.at("teacher");
    if (t.contains("matrix")) {
        A_star = matrix_from_json(t.at("matrix"));
        if (A_star.rows() != n_out || A_star.cols() != n_in)
            throw ConfigError("config error at 'config.regime_sweep.teacher.matrix': dimension mismatch");
    } else {
        A_star = random_low_rank(n_out, n_in, static_cast<int>(t.at("rank").get<long>()),
                                 t.at("scale").get<double>(), t.at("seed").get<std::uint64_t>());
    }

    struct Row {
        int w;
        double gamma;
        int seed;
        double d_s, d_m, ntk_diag;
    };
    std::vector<Row> rows(widths.size() * gammas.size() * static_cast<size_t>(seeds));
    parallel_for(static_cast<int>(rows.size()), jobs, [&](int idx) {
        const size_t u = static_cast<size_t>(idx);
        const size_t gi = u / (widths.size() * static_cast<size_t>(seeds));
        const size_t rem = u % (widths.size() * static_cast<size_t>(seeds));
        const size_t wi = rem / static_cast<size_t>(seeds);
        const int seed = static_cast<int>(rem % static_cast<size_t>(seeds));
        const int w = widths[wi];
        const double gamma = gammas[gi];
        const NetShape shape = NetShape::rect(depth, w, n_in, n_out);
        const double sigma = std::pow(static_cast<double>(w), -gamma / 2.0);
        const Params theta = init_gaussian(shape, sigma, static_cast<std::uint64_t>(seed) + 1);
        const NtkTensor ntk = ntk_tensor(theta);
        rows[u] = Row{w,
                      gamma,
                      seed,
                      saddle_distance_upper(theta),
                      min_distance_upper(theta, A_star, gamma).distance,
                      ntk.flat.diagonal().mean()};
    });

    std::ostringstream csv;
    csv << "w,gamma,seed,d_s_upper,d_m_upper,ntk_diag_mean\n";
    for (const Row& r : rows)
        csv << r.w << ',' << format_g17(r.gamma) << ',' << r.seed << ',' << format_g17(r.d_s) << ','
            << format_g17(r.d_m) << ',' << format_g17(r.ntk_diag) << '\n';

    ExecResult res;
    res.files.emplace_back("sweep.csv", csv.str());

    Json fits = Json::array();
    Json checks = Json::array();
    for (const double gamma : gammas) {
        std::vector<double> xs, med_ds, med_dm;
        for (const int w : widths) {
            std::vector<double> ds, dm;
            for (const Row& r : rows)
                if (r.w == w && r.gamma == gamma) {
                    ds.push_back(r.d_s);
                    dm.push_back(r.d_m);
                }
            xs.push_back(static_cast<double>(w));
            med_ds.push_back(median(ds));
            med_dm.push_back(median(dm));
        }
        const double theory_ds = (1.0 - gamma) / 2.0;
        const double theory_dm = gamma < 1.0 ? -(1.0 - gamma) * (depth - 1) / 2.0 : 0.0;
        const ScalingFit fit_ds = fit_loglog(xs, med_ds, theory_ds);
        const ScalingFit fit_dm = fit_loglog(xs, med_dm, theory_dm);
        fits.push_back({{"gamma", gamma},
                        {"d_s_slope", fit_ds.slope},
                        {"d_s_theory", theory_ds},
                        {"d_s_r2", fit_ds.r_squared},
                        {"d_m_slope", fit_dm.slope},
                        {"d_m_theory", theory_dm},
                        {"d_m_r2", fit_dm.r_squared}});
        auto slope_check = [&checks, gamma](const std::string& what, double slope, double theory) {
            const bool pass = theory != 0.0 ? std::abs(slope - theory) <= 0.15 * std::abs(theory)
                                            : std::abs(slope) <= 0.15;
            checks.push_back(check_entry(what + "_slope_gamma_" + format_g17(gamma), pass, slope, theory));
        };
        slope_check("d_s", fit_ds.slope, theory_ds);
        slope_check("d_m", fit_dm.slope, theory_dm);
    }
    res.summary["fits"] = std::move(fits);
    res.summary["checks"] = std::move(checks);
    return res;
}

ExecResult exec_ntk_check(const Json& cfg, int jobs) {
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const double gamma = cfg.at("gamma").get<double>();
    const double sigma = sigma_from_config(cfg, shape, "config");
    const int draws = static_cast<int>(cfg.at("ntk_check").at("draws").get<long>());
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

    std::vector<double> diag(static_cast<size_t>(draws)), offdiag(static_cast<size_t>(draws));
    parallel_for(draws, jobs, [&](int d) {
        const Params theta = init_gaussian(shape, sigma, seed + static_cast<std::uint64_t>(d));
        const NtkTensor ntk = ntk_tensor(theta);
        diag[static_cast<size_t>(d)] = ntk.flat.diagonal().mean();
        const Eigen::Index n = ntk.flat.rows();
        double acc = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (i != j) acc += ntk.flat(i, j);
        offdiag[static_cast<size_t>(d)] = n > 1 ? acc / static_cast<double>(n * n - n) : 0.0;
    });

    std::ostringstream csv;
    csv << "draw,diag_mean,offdiag_mean\n";
    for (int d = 0; d < draws; ++d)
        csv << d << ',' << format_g17(diag[static_cast<size_t>(d)]) << ','
            << format_g17(offdiag[static_cast<size_t>(d)]) << '\n';

    double diag_mean = 0, off_mean = 0;
    for (double v : diag) diag_mean += v;
    for (double v : offdiag) off_mean += v;
    diag_mean /= draws;
    off_mean /= draws;
    double off_var = 0;
    for (double v : offdiag) off_var += (v - off_mean) * (v - off_mean);
    const double off_se = std::sqrt(off_var / (draws - 1.0) / draws);

    const double expected = ntk_expectation(shape.depth(), shape.hidden_width(), gamma);

    ExecResult res;
    res.files.emplace_back("ntk_draws.csv", csv.str());
    res.summary["diag_mean"] = diag_mean;
    res.summary["expected_diag"] = expected;
    res.summary["offdiag_mean"] = off_mean;
    res.summary["offdiag_se"] = off_se;
    Json checks = Json::array();
    checks.push_back(check_entry("diag_within_5pct", std::abs(diag_mean - expected) <= 0.05 * expected,
                                 diag_mean, expected));
    checks.push_back(
        check_entry("offdiag_within_3se", std::abs(off_mean) <= 3.0 * off_se, off_mean, 3.0 * off_se));
    res.summary["checks"] = std::move(checks);
    return res;
}

ExecResult exec_refine_path(const Json& cfg) {
    const CostSpec cost = cost_from_config(cfg.at("cost"), "config.cost");
    const NetShape shape = shape_from_json(cfg.at("shape"), "config.shape");
    const Json& b = cfg.at("refine_path");

    PathGridSpec spec;
    spec.points = static_cast<int>(opt_int(b, "points", 400));
    spec.width = static_cast<int>(opt_int(b, "width", 1));
    if (b.contains("r")) spec.r = b.at("r").get<double>();
    const double tol = opt_num(b, "tol", 1e-10);
    const int max_iter = static_cast<int>(opt_int(b, "max_iter", 50));

    const EscapeProfile prof = escape_profile(cost, shape.depth());
    const RefineResult result = refine_escape_path(cost, prof, spec, tol, max_iter);

    ExecResult res;
    res.files.emplace_back("refined_path.csv", path_grid_csv(result.path));
    res.files.emplace_back("homogeneous_path.csv", path_grid_csv(result.base));
    res.summary["iterations"] = result.iterations;
    res.summary["final_change"] = result.final_change;
    res.summary["localization_radius"] = result.localization_radius;
    res.summary["contraction_ratios"] = result.contraction_ratios;
    res.summary["s_star"] = prof.s_star;
    res.summary["flow_residual_sup"] = path_flow_residual(
        result.path, cost, cost_gradient_at_zero(cost), result.localization_radius);
    return res;
}

ExecResult exec_figure3(const Json& cfg, int jobs) {
    const Json& b = cfg.at("figure3");
    const int depth = static_cast<int>(b.at("depth").get<long>());
    const int rows_n = static_cast<int>(b.at("rows").get<long>());
    const int cols_n = static_cast<int>(b.at("cols").get<long>());
    const auto widths = b.at("widths").get<std::vector<int>>();
    const auto gammas = b.at("gammas").get<std::vector<double>>();
    const int seeds = static_cast<int>(b.at("seeds").get<long>());
    const double eta0 = b.at("eta0").get<double>();
    const long max_steps = b.at("max_steps").get<long>();
    const double rank_tol = opt_num(b, "rank_tol", kRankTolRegime);
    const std::uint64_t seed0 = cfg.at("seed").get<std::uint64_t>();

    const McCost task = make_mc_task(rows_n, cols_n, b.at("singular_values").get<std::vector<double>>(),
                                     static_cast<int>(b.at("observed").get<long>()),
                                     b.at("teacher_seed").get<std::uint64_t>());
    const CostSpec cost(task);
    const CostSpec test_cost(mc_complement(task));

    struct Row {
        int w;
        double gamma;
        int seed;
        double train, test;
        int rank;
        long steps;
    };
    std::vector<Row> rows(widths.size() * gammas.size() * static_cast<size_t>(seeds));
    std::atomic<bool> non_finite{false};
    parallel_for(static_cast<int>(rows.size()), jobs, [&](int idx) {
        const size_t u = static_cast<size_t>(idx);
        const size_t gi = u / (widths.size() * static_cast<size_t>(seeds));
        const size_t rem = u % (widths.size() * static_cast<size_t>(seeds));
        const size_t wi = rem / static_cast<size_t>(seeds);
        const int seed = static_cast<int>(rem % static_cast<size_t>(seeds));
        const int w = widths[wi];
        const double gamma = gammas[gi];

        FlowConfig fc;
        // Large-width learning-rate policy: eta0 in the small-variance
        // regime, eta0 * w^{(L-1)(gamma-1)} for gamma <= 1.
        fc.eta = gamma > 1.0 ? eta0 : eta0 * std::pow(static_cast<double>(w), (depth - 1) * (gamma - 1.0));
        fc.max_steps = max_steps;
        fc.snapshot_every = std::max<long>(1, max_steps / 50);
        fc.stop_loss = 1e-10;
        fc.rank_tol = rank_tol;

        const NetShape shape = NetShape::rect(depth, w, cols_n, rows_n);
        const double sigma = std::pow(static_cast<double>(w), -gamma / 2.0);
        const Params theta0 =
            init_gaussian(shape, sigma, seed0 + 1000 * static_cast<std::uint64_t>(seed) + static_cast<std::uint64_t>(w));
        try {
            const Trajectory traj = integrate(theta0, cost, fc, test_cost);
            const SnapshotRecord& last = traj.snapshots.back();
            rows[u] = Row{w, gamma, seed, last.loss_train, *last.loss_test, last.rank, last.step};
        } catch (const NonFiniteError&) {
            non_finite = true;
            rows[u] = Row{w, gamma, seed, std::nan(""), std::nan(""), -1, -1};
        }
    });

    std::ostringstream csv;
    csv << "w,gamma,seed,final_train,final_test,final_rank,steps\n";
    for (const Row& r : rows)
        csv << r.w << ',' << format_g17(r.gamma) << ',' << r.seed << ',' << format_g17(r.train) << ','
            << format_g17(r.test) << ',' << r.rank << ',' << r.steps << '\n';

    ExecResult res;
    res.files.emplace_back("regime_runs.csv", csv.str());
    if (non_finite) {
        res.summary["error"] = "non_finite";
        res.status = 3;
        return res;
    }

    // Medians per (gamma, w); the regime claim compares extremes of gamma.
    const double g_lo = *std::min_element(gammas.begin(), gammas.end());
    const double g_hi = *std::max_element(gammas.begin(), gammas.end());
    Json medians = Json::array();
    Json checks = Json::array();
    for (const int w : widths) {
        auto stats = [&](double gamma) {
            std::vector<double> test, rank;
            for (const Row& r : rows)
                if (r.w == w && r.gamma == gamma) {
                    test.push_back(r.test);
                    rank.push_back(static_cast<double>(r.rank));
                }
            return std::pair<double, double>{median(test), median(rank)};
        };
        for (const double gamma : gammas) {
            const auto [mt, mr] = stats(gamma);
            medians.push_back({{"w", w}, {"gamma", gamma}, {"median_test", mt}, {"median_rank", mr}});
        }
        const auto [test_lo, rank_lo] = stats(g_lo);
        const auto [test_hi, rank_hi] = stats(g_hi);
        checks.push_back(check_entry("test_error_smaller_at_high_gamma_w" + std::to_string(w),
                                     test_hi < test_lo, test_hi, test_lo));
        checks.push_back(check_entry("rank_not_larger_at_high_gamma_w" + std::to_string(w),
                                     rank_hi <= rank_lo, rank_hi, rank_lo));
    }
    res.summary["medians"] = std::move(medians);
    res.summary["checks"] = std::move(checks);
    return res;
}

Json version_info() {
    Json v;
    v["dln_lab"] = "0.1.0";
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                 "." + std::to_string(EIGEN_MINOR_VERSION);
    v["compiler"] = __VERSION__;
    return v;
}

} // namespace

int run_experiment_json(const Json& raw, const std::filesystem::path& out_dir, const RunOptions& opts) {
    Json resolved;
    try {
        resolved = resolve_config(raw);
        if (opts.seed_override) resolved["seed"] = *opts.seed_override;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    const std::string kind = resolved.at("kind").get<std::string>();
    ExecResult result;
    try {
        if (kind == "run") result = exec_run(resolved);
        else if (kind == "greedy") result = exec_greedy(resolved);
        else if (kind == "escape_sweep") result = exec_escape_sweep(resolved, opts.jobs);
        else if (kind == "regime_sweep") result = exec_regime_sweep(resolved, opts.jobs);
        else if (kind == "ntk_check") result = exec_ntk_check(resolved, opts.jobs);
        else if (kind == "refine_path") result = exec_refine_path(resolved);
        else if (kind == "figure1") result = exec_figure1(resolved);
        else result = exec_figure3(resolved, opts.jobs);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const NonFiniteError&) {
        std::cerr << "integration produced a non-finite value\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "experiment failed: " << e.what() << "\n";
        return 1;
    }

    std::filesystem::create_directories(out_dir);
    result.files.emplace_back("summary.json", result.summary.dump(2) + "\n");

    Json manifest;
    manifest["config"] = resolved;
    manifest["config_hash"] = sha256_hex(resolved.dump());
    manifest["versions"] = version_info();
    Json outputs = Json::object();
    for (const auto& [name, content] : result.files) {
        write_text_file(out_dir / name, content);
        outputs[name] = sha256_hex(content);
    }
    manifest["outputs"] = std::move(outputs);
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return result.status;
}

int run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                   const RunOptions& opts) {
    Json raw;
    try {
        raw = Json::parse(read_text_file(config_path));
    } catch (const std::exception& e) {
        std::cerr << "config error at '" << config_path.string() << "': " << e.what() << "\n";
        return 2;
    }
    return run_experiment_json(raw, out_dir, opts);
}

} // namespace dln
