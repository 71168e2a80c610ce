#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "causalstream/io.hpp"
#include "causalstream/normal.hpp"
#include "causalstream/simulate.hpp"

namespace py = pybind11;
namespace cs = causalstream;

using RowMajorXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Streaming causal inference: online ATE estimation from summary statistics, "
              "sandwich variances, and group-sequential monitoring";

    py::register_exception<cs::Error>(m, "CausalStreamError");

    py::enum_<cs::Family>(m, "Family")
        .value("GCOMP", cs::Family::GComp)
        .value("IPTW", cs::Family::Iptw)
        .value("AIPTW", cs::Family::Aiptw);

    py::enum_<cs::OutcomeType>(m, "OutcomeType")
        .value("CONTINUOUS", cs::OutcomeType::Continuous)
        .value("BINARY", cs::OutcomeType::Binary);

    py::enum_<cs::Spending>(m, "Spending")
        .value("POCOCK", cs::Spending::Pocock)
        .value("OBRIEN_FLEMING", cs::Spending::OBrienFleming);

    py::enum_<cs::Decision>(m, "Decision")
        .value("CONTINUE", cs::Decision::Continue)
        .value("REJECT", cs::Decision::Reject)
        .value("COMPLETE_ACCEPT", cs::Decision::CompleteAccept);

    py::enum_<cs::StreamBias>(m, "StreamBias")
        .value("NONE", cs::StreamBias::None)
        .value("COVARIATE_SORTED", cs::StreamBias::CovariateSorted);

    py::class_<cs::ModelSpec>(m, "ModelSpec")
        .def(py::init([](cs::Family family, cs::OutcomeType outcome, int p) {
                 cs::ModelSpec s{family, outcome, p};
                 s.validate();
                 return s;
             }),
             py::arg("family"), py::arg("outcome"), py::arg("p"))
        .def_readonly("family", &cs::ModelSpec::family)
        .def_readonly("outcome", &cs::ModelSpec::outcome)
        .def_readonly("p", &cs::ModelSpec::p)
        .def_property_readonly("dim", &cs::ModelSpec::dim)
        .def_property_readonly("delta_index", &cs::ModelSpec::delta_index);

    py::class_<cs::Observation>(m, "Observation")
        .def(py::init([](double y, int a, Eigen::VectorXd x) {
                 return cs::Observation{y, a, std::move(x)};
             }),
             py::arg("y"), py::arg("a"), py::arg("x"))
        .def_readonly("y", &cs::Observation::y)
        .def_readonly("a", &cs::Observation::a)
        .def_readonly("x", &cs::Observation::x);

    py::class_<cs::DataBatch>(m, "DataBatch")
        .def(py::init([](long batch_index, Eigen::VectorXd y, Eigen::VectorXi a, RowMajorXd x,
                         bool add_intercept) {
                 if (add_intercept) {
                     RowMajorXd x1(x.rows(), x.cols() + 1);
                     x1.col(0).setOnes();
                     x1.rightCols(x.cols()) = x;
                     return cs::DataBatch(batch_index, std::move(y), std::move(a), std::move(x1));
                 }
                 return cs::DataBatch(batch_index, std::move(y), std::move(a), std::move(x));
             }),
             py::arg("batch_index"), py::arg("y"), py::arg("a"), py::arg("x"),
             py::arg("add_intercept") = false,
             "Column-wise batch; x may carry the intercept already or have it prepended")
        .def_property_readonly("batch_index", &cs::DataBatch::batch_index)
        .def_property_readonly("n", &cs::DataBatch::size)
        .def_property_readonly("p", &cs::DataBatch::p)
        .def("observation", &cs::DataBatch::observation, py::arg("i"))
        .def("y", [](const cs::DataBatch& b) { return b.y(); })
        .def("a", [](const cs::DataBatch& b) { return b.a(); })
        .def("x", [](const cs::DataBatch& b) -> RowMajorXd { return b.x(); });

    py::class_<cs::ParameterVector>(m, "ParameterVector")
        .def(py::init<cs::ModelSpec, Eigen::VectorXd>(), py::arg("spec"), py::arg("theta"))
        .def_static("zero", &cs::ParameterVector::zero, py::arg("spec"))
        .def_static("pack", &cs::ParameterVector::pack, py::arg("spec"), py::arg("alpha"),
                    py::arg("beta"), py::arg("delta"))
        .def_property_readonly("spec", &cs::ParameterVector::spec)
        .def_property_readonly("theta",
                               [](const cs::ParameterVector& p) { return p.theta(); })
        .def_property_readonly("alpha",
                               [](const cs::ParameterVector& p) -> Eigen::VectorXd { return p.alpha(); })
        .def_property_readonly("beta",
                               [](const cs::ParameterVector& p) -> Eigen::VectorXd { return p.beta(); })
        .def_property_readonly("delta", &cs::ParameterVector::delta);

    m.def("expit", py::vectorize(&cs::expit), py::arg("z"));
    m.def("ps_features", &cs::ps_features, py::arg("obs"));
    m.def("or_features", py::overload_cast<const cs::Observation&>(&cs::or_features),
          py::arg("obs"));
    m.def("predict_outcome", &cs::predict_outcome, py::arg("a"), py::arg("x"), py::arg("beta"),
          py::arg("outcome"));

    py::class_<cs::ScoreBundle>(m, "ScoreBundle")
        .def_readonly("u", &cs::ScoreBundle::u)
        .def_readonly("s", &cs::ScoreBundle::s)
        .def_readonly("m", &cs::ScoreBundle::m);

    m.def("score_gcomp", &cs::score_gcomp, py::arg("obs"), py::arg("params"));
    m.def("score_iptw", &cs::score_iptw, py::arg("obs"), py::arg("params"));
    m.def("score_aiptw", &cs::score_aiptw, py::arg("obs"), py::arg("params"));
    m.def("batch_bundle", &cs::batch_bundle, py::arg("batch"), py::arg("params"),
          py::arg("with_variability") = true);

    py::class_<cs::SolverOptions>(m, "SolverOptions")
        .def(py::init([](double tol, int max_iter) {
                 cs::SolverOptions o;
                 o.tol = tol;
                 o.max_iter = max_iter;
                 o.validate();
                 return o;
             }),
             py::arg("tol") = 1e-8, py::arg("max_iter") = 50)
        .def_readonly("tol", &cs::SolverOptions::tol)
        .def_readonly("max_iter", &cs::SolverOptions::max_iter);

    py::class_<cs::OnlineState>(m, "OnlineState")
        .def_readonly("spec", &cs::OnlineState::spec)
        .def_readonly("theta", &cs::OnlineState::theta)
        .def_readonly("s_cum", &cs::OnlineState::s_cum)
        .def_readonly("m_cum", &cs::OnlineState::m_cum)
        .def_readonly("n_total", &cs::OnlineState::n_total)
        .def_readonly("batch_count", &cs::OnlineState::batch_count)
        .def("params", &cs::OnlineState::params);

    py::class_<cs::AteEstimate>(m, "AteEstimate")
        .def_readonly("delta", &cs::AteEstimate::delta)
        .def_readonly("se", &cs::AteEstimate::se);

    py::class_<cs::OfflineFit>(m, "OfflineFit")
        .def_readonly("params", &cs::OfflineFit::params)
        .def_readonly("variance", &cs::OfflineFit::variance)
        .def_readonly("n_total", &cs::OfflineFit::n_total);

    m.def("init_state", &cs::init_state, py::arg("batch"), py::arg("spec"),
          py::arg("opts") = cs::SolverOptions{});
    m.def("renew", &cs::renew, py::arg("state"), py::arg("batch"),
          py::arg("opts") = cs::SolverOptions{});
    m.def("sandwich_variance", &cs::sandwich_variance, py::arg("state"));
    m.def("ate_estimate", &cs::ate_estimate, py::arg("state"));
    m.def(
        "solve_offline",
        [](const std::vector<cs::DataBatch>& batches, const cs::ModelSpec& spec,
           const cs::SolverOptions& opts) { return cs::solve_offline(batches, spec, opts); },
        py::arg("batches"), py::arg("spec"), py::arg("opts") = cs::SolverOptions{});
    m.def("condition_number", &cs::condition_number, py::arg("state"));

    py::class_<cs::MonitorConfig>(m, "MonitorConfig")
        .def(py::init([](int total_analyses, double alpha, cs::Spending spending,
                         double null_delta, std::vector<double> info_fractions) {
                 cs::MonitorConfig c;
                 c.total_analyses = total_analyses;
                 c.alpha = alpha;
                 c.spending = spending;
                 c.null_delta = null_delta;
                 c.info_fractions = std::move(info_fractions);
                 c.validate();
                 return c;
             }),
             py::arg("total_analyses"), py::arg("alpha") = 0.05,
             py::arg("spending") = cs::Spending::Pocock, py::arg("null_delta") = 0.0,
             py::arg("info_fractions") = std::vector<double>{})
        .def_readonly("total_analyses", &cs::MonitorConfig::total_analyses)
        .def_readonly("alpha", &cs::MonitorConfig::alpha)
        .def_readonly("spending", &cs::MonitorConfig::spending)
        .def_readonly("null_delta", &cs::MonitorConfig::null_delta)
        .def_readonly("info_fractions", &cs::MonitorConfig::info_fractions);

    py::class_<cs::MonitorState>(m, "MonitorState")
        .def_readonly("config", &cs::MonitorState::config)
        .def_readonly("boundaries", &cs::MonitorState::boundaries)
        .def_readonly("z_history", &cs::MonitorState::z_history)
        .def_readonly("decision", &cs::MonitorState::decision)
        .def_property_readonly("analyses_done", &cs::MonitorState::analyses_done);

    m.def("spending_value", &cs::spending_value, py::arg("spending"), py::arg("t"),
          py::arg("total_analyses"), py::arg("alpha"));
    m.def("compute_boundaries", &cs::compute_boundaries, py::arg("config"));
    m.def("make_monitor", &cs::make_monitor, py::arg("config"));
    m.def("monitor_step", &cs::monitor_step, py::arg("monitor"), py::arg("state"));
    m.def("wald_stat", &cs::wald_stat, py::arg("state"), py::arg("null_delta") = 0.0);
    m.def("norm_quantile", &cs::norm_quantile, py::arg("p"));

    py::class_<cs::TrueTheta>(m, "TrueTheta")
        .def(py::init([](Eigen::VectorXd alpha, Eigen::VectorXd beta) {
                 return cs::TrueTheta{std::move(alpha), std::move(beta)};
             }),
             py::arg("alpha"), py::arg("beta"))
        .def_readonly("alpha", &cs::TrueTheta::alpha)
        .def_readonly("beta", &cs::TrueTheta::beta);

    m.def("study_truth", &cs::study_truth);

    py::class_<cs::SimConfig>(m, "SimConfig")
        .def(py::init([](long n_batches, long batch_size, int p_covariates, double rho,
                         cs::OutcomeType outcome, long replications, std::uint64_t seed,
                         cs::StreamBias stream_bias, std::optional<cs::TrueTheta> fixed_truth) {
                 cs::SimConfig c;
                 c.n_batches = n_batches;
                 c.batch_size = batch_size;
                 c.p_covariates = p_covariates;
                 c.rho = rho;
                 c.outcome = outcome;
                 c.replications = replications;
                 c.seed = seed;
                 c.stream_bias = stream_bias;
                 c.fixed_truth = std::move(fixed_truth);
                 c.validate();
                 return c;
             }),
             py::arg("n_batches") = 100, py::arg("batch_size") = 100, py::arg("p_covariates") = 1,
             py::arg("rho") = 0.5, py::arg("outcome") = cs::OutcomeType::Continuous,
             py::arg("replications") = 500, py::arg("seed") = 20240601,
             py::arg("stream_bias") = cs::StreamBias::None,
             py::arg("fixed_truth") = std::nullopt)
        .def_readonly("n_batches", &cs::SimConfig::n_batches)
        .def_readonly("batch_size", &cs::SimConfig::batch_size)
        .def_readonly("p_covariates", &cs::SimConfig::p_covariates)
        .def_readonly("rho", &cs::SimConfig::rho)
        .def_readonly("outcome", &cs::SimConfig::outcome)
        .def_readonly("replications", &cs::SimConfig::replications)
        .def_readonly("seed", &cs::SimConfig::seed)
        .def_readonly("stream_bias", &cs::SimConfig::stream_bias);

    py::class_<cs::MetricsRow>(m, "MetricsRow")
        .def_readonly("family", &cs::MetricsRow::family)
        .def_readonly("mode", &cs::MetricsRow::mode)
        .def_readonly("n_batches", &cs::MetricsRow::n_batches)
        .def_readonly("batch_size", &cs::MetricsRow::batch_size)
        .def_readonly("n_total", &cs::MetricsRow::n_total)
        .def_readonly("replications", &cs::MetricsRow::replications)
        .def_readonly("failures", &cs::MetricsRow::failures)
        .def_readonly("bias", &cs::MetricsRow::bias)
        .def_readonly("relative_bias", &cs::MetricsRow::relative_bias)
        .def_readonly("ase", &cs::MetricsRow::ase)
        .def_readonly("ese", &cs::MetricsRow::ese)
        .def_readonly("coverage", &cs::MetricsRow::coverage)
        .def_readonly("total_time", &cs::MetricsRow::total_time)
        .def_readonly("run_time", &cs::MetricsRow::run_time);

    py::class_<cs::MetricsTable>(m, "MetricsTable")
        .def_readonly("rows", &cs::MetricsTable::rows)
        .def("to_csv", [](const cs::MetricsTable& t) { return cs::metrics_to_csv(t); })
        .def("to_json", [](const cs::MetricsTable& t) { return cs::metrics_to_json(t); });

    m.def("run_scenario", &cs::run_scenario, py::arg("config"), py::arg("families"),
          py::call_guard<py::gil_scoped_release>());

    py::class_<cs::EquivalenceResult>(m, "EquivalenceResult")
        .def_readonly("gap", &cs::EquivalenceResult::gap)
        .def_readonly("oracle_se", &cs::EquivalenceResult::oracle_se)
        .def_readonly("failures", &cs::EquivalenceResult::failures)
        .def_readonly("replications", &cs::EquivalenceResult::replications)
        .def("fraction_within", &cs::EquivalenceResult::fraction_within, py::arg("se_multiple"));

    m.def("run_equivalence", &cs::run_equivalence, py::arg("config"), py::arg("family"),
          py::call_guard<py::gil_scoped_release>());

    py::class_<cs::SequentialResult>(m, "SequentialResult")
        .def_readonly("families", &cs::SequentialResult::families)
        .def_readonly("delta_grid", &cs::SequentialResult::delta_grid)
        .def_readonly("rate", &cs::SequentialResult::rate)
        .def_readonly("failures", &cs::SequentialResult::failures)
        .def("to_csv", [](const cs::SequentialResult& r) { return cs::sequential_to_csv(r); });

    m.def("run_sequential_experiment", &cs::run_sequential_experiment, py::arg("config"),
          py::arg("monitor_config"), py::arg("delta_grid"), py::arg("families"),
          py::call_guard<py::gil_scoped_release>());

    py::class_<cs::PersistedState>(m, "PersistedState")
        .def_readonly("format_version", &cs::PersistedState::format_version)
        .def_readonly("engine", &cs::PersistedState::engine)
        .def_property_readonly("monitor", [](const cs::PersistedState& s) {
            return s.monitor ? py::cast(*s.monitor) : py::none().cast<py::object>();
        });

    m.def("read_batch_csv", &cs::read_batch_csv, py::arg("path"),
          py::arg("outcome") = std::nullopt, py::arg("batch_index") = 0);
    m.def(
        "save_state",
        [](const std::string& path, const cs::OnlineState& engine,
           const std::optional<cs::MonitorState>& monitor) {
            cs::save_state(path, engine, monitor);
        },
        py::arg("path"), py::arg("engine"), py::arg("monitor") = std::nullopt);
    m.def("load_state", &cs::load_state, py::arg("path"));
}
