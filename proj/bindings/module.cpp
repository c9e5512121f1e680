#include "dlnlab/analysis.hpp"
#include "dlnlab/core.hpp"
#include "dlnlab/costs.hpp"
#include "dlnlab/escape.hpp"
#include "dlnlab/experiment.hpp"
#include "dlnlab/flow.hpp"
#include "dlnlab/greedy.hpp"
#include "dlnlab/symmetry.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace dln;

namespace {

std::vector<Matrix> params_layers(const Params& p) { return p.layers(); }

CostSpec make_mse(const Matrix& X, const Matrix& Y) { return MseCost{X, Y}; }

CostSpec make_mc(const Matrix& A_star, const std::vector<std::pair<int, int>>& observed) {
    return McCost{A_star, observed};
}

CostSpec make_trace(const Matrix& G) { return TraceCost{G}; }

CostSpec make_localized(const CostSpec& base, const Matrix& G, double r) {
    return LocalizedCost{std::make_shared<CostSpec>(base), G, r};
}

FlowConfig make_flow_config(double eta, long max_steps, long snapshot_every,
                            std::optional<double> stop_loss, std::optional<double> stop_grad_norm,
                            const std::string& integrator, double rank_tol, bool record_params) {
    FlowConfig cfg;
    cfg.eta = eta;
    cfg.max_steps = max_steps;
    cfg.snapshot_every = snapshot_every;
    cfg.stop_loss = stop_loss;
    cfg.stop_grad_norm = stop_grad_norm;
    cfg.integrator = integrator == "rk4" ? Integrator::Rk4 : Integrator::Euler;
    cfg.rank_tol = rank_tol;
    cfg.record_params = record_params;
    return cfg;
}

py::dict snapshot_dict(const SnapshotRecord& s) {
    py::dict d;
    d["step"] = s.step;
    d["time"] = s.time;
    d["loss_train"] = s.loss_train;
    d["loss_test"] = s.loss_test ? py::object(py::float_(*s.loss_test)) : py::object(py::none());
    d["grad_norm"] = s.grad_norm;
    d["param_norm"] = s.param_norm;
    d["rank"] = s.rank;
    d["nuclear_norm"] = s.nuclear_norm;
    d["balance_defect"] = s.balance_defect;
    return d;
}

} // namespace

PYBIND11_MODULE(_dlnlab, m) {
    m.doc() = "Training dynamics of deep linear networks: gradient flow, saddle escape, "
              "greedy low-rank search, NTK and distance scalings.";

    py::class_<NetShape>(m, "NetShape")
        .def(py::init<std::vector<int>>(), py::arg("widths"))
        .def_static("rect", &NetShape::rect, py::arg("depth"), py::arg("hidden"), py::arg("n_in"),
                    py::arg("n_out"))
        .def_readonly("widths", &NetShape::widths)
        .def_property_readonly("depth", &NetShape::depth)
        .def("rectangular", &NetShape::rectangular)
        .def("param_count", &NetShape::param_count);

    py::class_<Params>(m, "Params")
        .def(py::init<NetShape, std::vector<Matrix>>(), py::arg("shape"), py::arg("layers"))
        .def_static("zero", &Params::zero, py::arg("shape"))
        .def_property_readonly("shape", &Params::shape)
        .def("layers", &params_layers)
        .def("norm", &Params::norm)
        .def("__add__", [](const Params& a, const Params& b) { return a + b; })
        .def("__sub__", [](const Params& a, const Params& b) { return a - b; })
        .def("__rmul__", [](const Params& a, double c) { return c * a; });

    py::class_<CostSpec>(m, "CostSpec")
        .def_property_readonly("rows", &CostSpec::rows)
        .def_property_readonly("cols", &CostSpec::cols);
    m.def("mse_cost", &make_mse, py::arg("x"), py::arg("y"));
    m.def("mc_cost", &make_mc, py::arg("a_star"), py::arg("observed"));
    m.def("trace_cost", &make_trace, py::arg("g"));
    m.def("localized_cost", &make_localized, py::arg("base"), py::arg("g"), py::arg("r"));
    m.def("mc_test_cost", [](const CostSpec& c) { return CostSpec(mc_complement(c.mc())); });

    m.def("product_map", &product_map, py::arg("theta"));
    m.def("loss_value", &loss_value, py::arg("theta"), py::arg("cost"));
    m.def("loss_gradient", &loss_gradient, py::arg("theta"), py::arg("cost"));
    m.def("init_gaussian", &init_gaussian, py::arg("shape"), py::arg("sigma"), py::arg("seed"));
    m.def("rank_of", &rank_of, py::arg("a"), py::arg("tol"));
    m.def("nuclear_norm", &nuclear_norm, py::arg("a"));
    m.def("cost_value", &cost_value, py::arg("cost"), py::arg("a"));
    m.def("cost_gradient", &cost_gradient, py::arg("cost"), py::arg("a"));

    py::class_<FlowConfig>(m, "FlowConfig")
        .def(py::init(&make_flow_config), py::arg("eta") = 1e-3, py::arg("max_steps") = 100000,
             py::arg("snapshot_every") = 100, py::arg("stop_loss") = std::nullopt,
             py::arg("stop_grad_norm") = std::nullopt, py::arg("integrator") = "euler",
             py::arg("rank_tol") = kRankTolRegime, py::arg("record_params") = false);

    py::class_<Trajectory>(m, "Trajectory")
        .def_property_readonly("snapshots",
                               [](const Trajectory& t) {
                                   py::list out;
                                   for (const auto& s : t.snapshots) out.append(snapshot_dict(s));
                                   return out;
                               })
        .def_readonly("terminal", &Trajectory::terminal)
        .def_readonly("stop_reason", &Trajectory::stop_reason);

    m.def("integrate", &integrate, py::arg("theta0"), py::arg("cost"), py::arg("cfg"),
          py::arg("test_cost") = std::nullopt);
    m.def("escape_time", &escape_time, py::arg("theta0"), py::arg("cost"), py::arg("cfg"),
          py::arg("r"), py::arg("alpha"));
    m.def("visited_ranks", &visited_ranks, py::arg("trajectory"));
    m.def(
        "detect_plateaus",
        [](const Trajectory& traj, int window, double slope_tol, double sep_tol) {
            const PlateauReport rep = detect_plateaus(traj, window, slope_tol, sep_tol);
            py::list out;
            for (const auto& p : rep.intervals)
                out.append(py::make_tuple(p.t_start, p.t_end, p.mean_loss));
            return out;
        },
        py::arg("trajectory"), py::arg("window"), py::arg("slope_tol"), py::arg("sep_tol"));

    py::class_<Rotation>(m, "Rotation").def(py::init<std::vector<Matrix>>(), py::arg("factors"));
    m.def("apply_rotation", &apply_rotation, py::arg("rotation"), py::arg("theta"));
    m.def("random_rotation", &random_rotation, py::arg("w"), py::arg("depth"), py::arg("seed"));
    m.def("include_to_width", &include_to_width, py::arg("theta"), py::arg("w_target"));
    m.def("balancedness_defect", &balancedness_defect, py::arg("theta"));
    m.def("ntk_param_map", &ntk_param_map, py::arg("theta_ntk"));

    py::class_<EscapeProfile>(m, "EscapeProfile")
        .def_readonly("u1", &EscapeProfile::u1)
        .def_readonly("v1", &EscapeProfile::v1)
        .def_readonly("s1", &EscapeProfile::s1)
        .def_readonly("gap", &EscapeProfile::gap)
        .def_readonly("s_star", &EscapeProfile::s_star)
        .def_readonly("rho_star", &EscapeProfile::rho_star);
    m.def("escape_profile", &escape_profile, py::arg("cost"), py::arg("depth"));
    m.def("all_escape_directions", [](const Matrix& G, int L) {
        py::list out;
        for (const auto& d : all_escape_directions(G, L)) out.append(py::make_tuple(d.direction, d.speed));
        return out;
    });
    m.def("escape_cone_member", &escape_cone_member, py::arg("theta"), py::arg("g"), py::arg("depth"),
          py::arg("eps"));
    m.def("theoretical_escape_norm", &theoretical_escape_norm, py::arg("t"), py::arg("depth"),
          py::arg("s"), py::arg("t_blowup"));
    m.def("homogeneous_value", &homogeneous_value, py::arg("g"), py::arg("theta"));

    py::class_<NtkTensor>(m, "NtkTensor")
        .def_readonly("flat", &NtkTensor::flat)
        .def("entry", &NtkTensor::entry)
        .def("frobenius_norm", &NtkTensor::frobenius_norm);
    m.def("ntk_tensor", &ntk_tensor, py::arg("theta"));
    m.def("ntk_expectation", &ntk_expectation, py::arg("depth"), py::arg("w"), py::arg("gamma"));
    m.def("ntk_change", &ntk_change, py::arg("theta_start"), py::arg("theta_end"));
    m.def("saddle_distance_upper", &saddle_distance_upper, py::arg("theta"));
    m.def("min_distance_upper", [](const Params& theta, const Matrix& A_star, double gamma) {
        const MinDistanceResult r = min_distance_upper(theta, A_star, gamma);
        return py::make_tuple(r.distance, r.target, r.used_flank);
    });
    m.def("operator_norm_bound_check", &operator_norm_bound_check, py::arg("m"), py::arg("n"),
          py::arg("sigma"), py::arg("t"), py::arg("trials"), py::arg("seed"));

    py::class_<GreedyConfig>(m, "GreedyConfig")
        .def(py::init<>())
        .def_readwrite("eps", &GreedyConfig::eps)
        .def_readwrite("inner_steps", &GreedyConfig::inner_steps)
        .def_readwrite("lr", &GreedyConfig::lr)
        .def_readwrite("c_min", &GreedyConfig::c_min)
        .def_readwrite("max_width", &GreedyConfig::max_width)
        .def_readwrite("rank_tol", &GreedyConfig::rank_tol);
    m.def("greedy_low_rank", [](const CostSpec& cost, const NetShape& shape, const GreedyConfig& cfg) {
        const GreedyReport rep = greedy_low_rank(cost, shape, cfg);
        py::dict d;
        py::list stages;
        for (const auto& s : rep.stages) {
            py::dict sd;
            sd["width"] = s.width;
            sd["cost"] = s.cost;
            sd["top_singular"] = s.top_singular;
            sd["rank"] = s.rank;
            stages.append(sd);
        }
        d["stages"] = stages;
        d["final_params"] = rep.final_params;
        d["terminated"] = rep.terminated == GreedyTermination::Converged ? "converged" : "max_width";
        return d;
    });

    py::class_<RunOptions>(m, "RunOptions")
        .def(py::init<>())
        .def_readwrite("jobs", &RunOptions::jobs);
    m.def("run_experiment", &run_experiment, py::arg("config_path"), py::arg("out_dir"),
          py::arg("opts") = RunOptions{});
    m.def("presets_text", &presets_text);

    py::register_exception<NonFiniteError>(m, "NonFiniteError");
    py::register_exception<MultiplicityNotOneError>(m, "MultiplicityNotOneError");
}
