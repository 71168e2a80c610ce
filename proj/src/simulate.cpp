#include "causalstream/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "causalstream/normal.hpp"

namespace causalstream {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Lower Cholesky factor of the compound-symmetry covariance (unit diagonal,
// constant off-diagonal rho).
Eigen::MatrixXd compound_symmetry_chol(int q, double rho) {
    if (q == 0) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(q, q, rho);
    v.diagonal().setOnes();
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
        throw ConfigError("compound-symmetry covariance is not positive definite");
    }
    return llt.matrixL();
}

// Deterministic parallel map over replications: results land in a
// pre-indexed vector, so aggregation order never depends on scheduling.
template <typename Fn>
void parallel_for_reps(long reps, Fn&& fn) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned workers = static_cast<unsigned>(std::min<long>(hw, std::max<long>(reps, 1)));
    if (workers <= 1 || reps < 2) {
        for (long r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (long r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) fn(r);
        });
    }
    for (auto& th : pool) th.join();
}

struct ObservationDraw {
    Eigen::VectorXd x;
    int a = 0;
    double y = 0.0;
};

void draw_observation(const SimConfig& config, const TrueTheta& truth,
                      const Eigen::MatrixXd& chol, Rng& rng, ObservationDraw& out) {
    const int p = config.p();
    const int q = config.p_covariates;
    out.x.resize(p);
    out.x[0] = 1.0;
    if (q > 0) {
        Eigen::VectorXd z = rng.normal_vector(q);
        out.x.tail(q).noalias() = chol * z;
    }
    const double pa = expit(out.x.dot(truth.alpha));
    out.a = rng.bernoulli(pa) ? 1 : 0;
    double eta = out.x.dot(truth.beta.head(p));
    if (out.a) eta += out.x.dot(truth.beta.tail(p));
    if (config.outcome == OutcomeType::Continuous) {
        out.y = eta + rng.normal();
    } else {
        out.y = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
    }
}

}  // namespace

TrueTheta draw_true_theta(const SimConfig& config, Rng& rng) {
    if (config.fixed_truth) {
        if (config.fixed_truth->alpha.size() != config.p() ||
            config.fixed_truth->beta.size() != 2 * config.p()) {
            throw ConfigError("SimConfig: fixed_truth dimensions do not match p_covariates");
        }
        return *config.fixed_truth;
    }
    const int p = config.p();
    TrueTheta t;
    t.alpha = rng.normal_vector(p);
    t.beta = rng.normal_vector(2 * p);
    if (config.outcome == OutcomeType::Binary) {
        // Raw unit-normal coefficients occasionally push propensities and
        // event rates to machine limits; halve them for the binary design.
        t.alpha *= 0.5;
        t.beta *= 0.5;
    }
    return t;
}

TrueTheta study_truth() {
    TrueTheta t;
    t.alpha = Eigen::VectorXd(2);
    t.alpha << 0.0, 0.66;
    t.beta = Eigen::VectorXd(4);
    t.beta << 0.0, 0.55, 0.1794, 1.04;
    return t;
}

TrueTheta draw_true_theta_sequential(const SimConfig& config, double delta, Rng& rng) {
    if (config.outcome != OutcomeType::Continuous) {
        throw ConfigError("sequential experiment uses the Gaussian linear model");
    }
    const int p = config.p();
    TrueTheta t;
    if (config.fixed_truth) {
        // Keep the pinned nuisances; the grid controls the treatment effect.
        t = *config.fixed_truth;
        t.beta.tail(p).setZero();
    } else {
        t.alpha = rng.normal_vector(p);
        t.beta = Eigen::VectorXd::Zero(2 * p);
        t.beta.head(p) = rng.normal_vector(p);  // intercept and covariate main effects
    }
    t.beta[p] = delta;  // treatment main effect; no interactions
    return t;
}

DataBatch generate_batch(const SimConfig& config, const TrueTheta& truth, long batch_index,
                         long n, Rng& rng) {
    config.validate();
    const Eigen::MatrixXd chol = compound_symmetry_chol(config.p_covariates, config.rho);
    Eigen::VectorXd y(n);
    Eigen::VectorXi a(n);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(n, config.p());
    ObservationDraw draw;
    for (long i = 0; i < n; ++i) {
        draw_observation(config, truth, chol, rng, draw);
        y[i] = draw.y;
        a[i] = draw.a;
        x.row(i) = draw.x.transpose();
    }
    return DataBatch(batch_index, std::move(y), std::move(a), std::move(x));
}

TrueAte true_ate(const TrueTheta& truth, const SimConfig& config, Rng& rng) {
    const int p = config.p();
    if (config.outcome == OutcomeType::Continuous) {
        // Covariates have mean zero, so interaction terms drop out of the
        // expectation and the ATE is the treatment main coefficient.
        return TrueAte{truth.beta[p], 0.0};
    }
    const long n_draws = 1000000;
    const Eigen::MatrixXd chol = compound_symmetry_chol(config.p_covariates, config.rho);
    Eigen::VectorXd x(p);
    x[0] = 1.0;
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < n_draws; ++i) {
        if (config.p_covariates > 0) {
            x.tail(config.p_covariates).noalias() = chol * rng.normal_vector(config.p_covariates);
        }
        const double eta0 = x.dot(truth.beta.head(p));
        const double eta1 = eta0 + x.dot(truth.beta.tail(p));
        const double diff = expit(eta1) - expit(eta0);
        sum += diff;
        sumsq += diff * diff;
    }
    const double mean = sum / n_draws;
    const double var = std::max(0.0, sumsq / n_draws - mean * mean);
    return TrueAte{mean, std::sqrt(var / n_draws)};
}

std::vector<DataBatch> make_stream(const SimConfig& config, const TrueTheta& truth, Rng& rng) {
    config.validate();
    const long n = config.n_total();
    const Eigen::MatrixXd chol = compound_symmetry_chol(config.p_covariates, config.rho);
    Eigen::VectorXd y(n);
    Eigen::VectorXi a(n);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(n, config.p());
    ObservationDraw draw;
    for (long i = 0; i < n; ++i) {
        draw_observation(config, truth, chol, rng, draw);
        y[i] = draw.y;
        a[i] = draw.a;
        x.row(i) = draw.x.transpose();
    }

    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0L);
    if (config.stream_bias == StreamBias::CovariateSorted) {
        std::stable_sort(order.begin(), order.end(),
                         [&](long i, long j) { return x(i, 1) < x(j, 1); });
    }

    std::vector<DataBatch> stream;
    stream.reserve(static_cast<std::size_t>(config.n_batches));
    long at = 0;
    for (long b = 0; b < config.n_batches; ++b) {
        const long nb = config.batch_size;
        Eigen::VectorXd yb(nb);
        Eigen::VectorXi ab(nb);
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xb(nb, config.p());
        for (long i = 0; i < nb; ++i) {
            const long src = order[static_cast<std::size_t>(at + i)];
            yb[i] = y[src];
            ab[i] = a[src];
            xb.row(i) = x.row(src);
        }
        at += nb;
        stream.emplace_back(b + 1, std::move(yb), std::move(ab), std::move(xb));
    }
    return stream;
}

StreamRunResult run_stream_online(const std::vector<DataBatch>& stream, const ModelSpec& spec,
                                  const SolverOptions& opts, bool record_path) {
    if (stream.empty()) throw ConfigError("run_stream_online: empty stream");
    StreamRunResult out;

    // Pool leading batches until the initial solve identifies all parameters;
    // a lone extreme batch (e.g. single-arm) cannot anchor the recursion.
    const std::size_t max_init = std::max<std::size_t>(1, stream.size() / 2);
    std::size_t k = 1;
    for (;; ++k) {
        try {
            const auto t0 = Clock::now();
            if (k == 1) {
                out.state = init_state(stream[0], spec, opts);
            } else {
                std::vector<Observation> pooled;
                for (std::size_t j = 0; j < k; ++j) {
                    for (Eigen::Index i = 0; i < stream[j].size(); ++i) {
                        pooled.push_back(stream[j].observation(i));
                    }
                }
                out.state = init_state(DataBatch::from_observations(1, pooled), spec, opts);
            }
            out.run_seconds += seconds_since(t0);
            break;
        } catch (const Error&) {
            if (k >= max_init) throw;
        }
    }
    out.init_batches = static_cast<int>(k);
    if (record_path) out.path.push_back(ate_estimate(out.state));

    for (std::size_t j = k; j < stream.size(); ++j) {
        const auto t0 = Clock::now();
        renew_in_place(out.state, stream[j], opts);
        out.run_seconds += seconds_since(t0);
        if (record_path) out.path.push_back(ate_estimate(out.state));
    }
    return out;
}

namespace {

struct RepOutcome {
    bool online_ok = false;
    bool offline_ok = false;
    double truth = 0.0;
    double online_delta = 0.0, online_se = 0.0;
    double offline_delta = 0.0, offline_se = 0.0;
    double online_run = 0.0, online_total = 0.0;
    double offline_run = 0.0, offline_total = 0.0;
};

MetricsRow aggregate_rows(const std::string& family, const std::string& mode,
                          const SimConfig& config, const std::vector<RepOutcome>& reps,
                          bool online) {
    MetricsRow row;
    row.family = family;
    row.mode = mode;
    row.n_batches = config.n_batches;
    row.batch_size = config.batch_size;
    row.n_total = config.n_total();
    row.replications = static_cast<long>(reps.size());

    const double zcrit = norm_quantile(0.975);
    double sum_err = 0.0, sum_truth = 0.0, sum_se = 0.0;
    double sum_run = 0.0, sum_total = 0.0;
    long covered = 0, ok = 0;
    std::vector<double> errs;
    errs.reserve(reps.size());
    for (const RepOutcome& r : reps) {
        const bool good = online ? r.online_ok : r.offline_ok;
        if (!good) {
            ++row.failures;
            continue;
        }
        ++ok;
        const double est = online ? r.online_delta : r.offline_delta;
        const double se = online ? r.online_se : r.offline_se;
        const double err = est - r.truth;
        errs.push_back(err);
        sum_err += err;
        sum_truth += r.truth;
        sum_se += se;
        if (std::fabs(err) <= zcrit * se) ++covered;
        sum_run += online ? r.online_run : r.offline_run;
        sum_total += online ? r.online_total : r.offline_total;
    }
    if (ok == 0) return row;
    row.bias = sum_err / ok;
    const double mean_truth = sum_truth / ok;
    row.relative_bias = mean_truth != 0.0 ? row.bias / mean_truth : 0.0;
    row.ase = sum_se / ok;
    double ss = 0.0;
    for (double e : errs) ss += (e - row.bias) * (e - row.bias);
    row.ese = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
    row.coverage = static_cast<double>(covered) / ok;
    row.run_time = sum_run / ok;
    row.total_time = sum_total / ok;
    return row;
}

}  // namespace

MetricsTable run_scenario(const SimConfig& config, const std::vector<Family>& families) {
    config.validate();
    MetricsTable table;
    if (config.replications == 0) return table;

    const long reps = config.replications;
    std::vector<std::vector<RepOutcome>> results(families.size());
    for (auto& v : results) v.resize(static_cast<std::size_t>(reps));

    parallel_for_reps(reps, [&](long r) {
        Rng rng(config.seed, static_cast<std::uint64_t>(r));
        const TrueTheta truth = draw_true_theta(config, rng);
        Rng ate_rng(config.seed ^ 0xA7EA7Eu, static_cast<std::uint64_t>(r));
        const TrueAte ate = true_ate(truth, config, ate_rng);
        const std::vector<DataBatch> stream = make_stream(config, truth, rng);

        for (std::size_t fi = 0; fi < families.size(); ++fi) {
            const ModelSpec spec{families[fi], config.outcome, config.p()};
            RepOutcome& out = results[fi][static_cast<std::size_t>(r)];
            out.truth = ate.value;
            try {
                const auto t0 = Clock::now();
                StreamRunResult run = run_stream_online(stream, spec, config.solver);
                const AteEstimate est = ate_estimate(run.state);
                out.online_total = seconds_since(t0);
                out.online_run = run.run_seconds;
                out.online_delta = est.delta;
                out.online_se = est.se;
                out.online_ok = true;
            } catch (const Error&) {
            }
            try {
                const auto t0 = Clock::now();
                OfflineFit fit = solve_offline(stream, spec, config.solver);
                const Eigen::Index di = spec.delta_index();
                out.offline_run = seconds_since(t0);
                out.offline_total = out.offline_run;
                out.offline_delta = fit.params.theta()[di];
                out.offline_se = std::sqrt(std::max(0.0, fit.variance(di, di)));
                out.offline_ok = true;
            } catch (const Error&) {
            }
        }
    });

    for (std::size_t fi = 0; fi < families.size(); ++fi) {
        const std::string fam = to_string(families[fi]);
        table.rows.push_back(aggregate_rows(fam, "online", config, results[fi], true));
        table.rows.push_back(aggregate_rows(fam, "offline", config, results[fi], false));
    }
    return table;
}

double EquivalenceResult::fraction_within(double se_multiple) const {
    if (gap.empty()) return 0.0;
    long within = 0;
    for (std::size_t i = 0; i < gap.size(); ++i) {
        if (gap[i] <= se_multiple * oracle_se[i]) ++within;
    }
    return static_cast<double>(within) / static_cast<double>(replications);
}

EquivalenceResult run_equivalence(const SimConfig& config, Family family) {
    config.validate();
    const long reps = config.replications;
    EquivalenceResult out;
    out.replications = reps;

    std::vector<double> gap(static_cast<std::size_t>(reps),
                            std::numeric_limits<double>::quiet_NaN());
    std::vector<double> ose(static_cast<std::size_t>(reps), 0.0);

    parallel_for_reps(reps, [&](long r) {
        Rng rng(config.seed, static_cast<std::uint64_t>(r));
        const TrueTheta truth = draw_true_theta(config, rng);
        const std::vector<DataBatch> stream = make_stream(config, truth, rng);
        const ModelSpec spec{family, config.outcome, config.p()};
        try {
            StreamRunResult run = run_stream_online(stream, spec, config.solver);
            OfflineFit fit = solve_offline(stream, spec, config.solver);
            const Eigen::Index di = spec.delta_index();
            gap[static_cast<std::size_t>(r)] =
                std::fabs(run.state.theta[di] - fit.params.theta()[di]);
            ose[static_cast<std::size_t>(r)] = std::sqrt(std::max(0.0, fit.variance(di, di)));
        } catch (const Error&) {
        }
    });

    for (long r = 0; r < reps; ++r) {
        if (std::isnan(gap[static_cast<std::size_t>(r)])) {
            ++out.failures;
            continue;
        }
        out.gap.push_back(gap[static_cast<std::size_t>(r)]);
        out.oracle_se.push_back(ose[static_cast<std::size_t>(r)]);
    }
    return out;
}

SequentialResult run_sequential_experiment(const SimConfig& config,
                                           const MonitorConfig& monitor_config,
                                           const std::vector<double>& delta_grid,
                                           const std::vector<Family>& families) {
    config.validate();
    monitor_config.validate();
    if (std::find(delta_grid.begin(), delta_grid.end(), 0.0) == delta_grid.end()) {
        throw ConfigError("run_sequential_experiment: delta grid must include 0");
    }
    if (monitor_config.total_analyses != config.n_batches) {
        throw ConfigError("run_sequential_experiment: one analysis per batch (T = n_batches)");
    }

    const MonitorState prototype = make_monitor(monitor_config);
    SequentialResult result;
    result.delta_grid = delta_grid;

    const long reps = config.replications;
    for (Family family : families) {
        result.families.push_back(to_string(family));
        std::vector<double> rates;
        std::vector<long> fails;
        for (std::size_t di = 0; di < delta_grid.size(); ++di) {
            const double delta = delta_grid[di];
            std::vector<int> rejected(static_cast<std::size_t>(reps), -1);  // -1 = failure
            parallel_for_reps(reps, [&](long r) {
                const std::uint64_t stream_id =
                    static_cast<std::uint64_t>(di) * static_cast<std::uint64_t>(reps + 1) +
                    static_cast<std::uint64_t>(r);
                Rng rng(config.seed, stream_id);
                const TrueTheta truth = draw_true_theta_sequential(config, delta, rng);
                const std::vector<DataBatch> stream = make_stream(config, truth, rng);
                const ModelSpec spec{family, config.outcome, config.p()};
                try {
                    MonitorState monitor = prototype;
                    OnlineState state = init_state(stream[0], spec, config.solver);
                    monitor = monitor_step(monitor, state);
                    for (std::size_t j = 1;
                         j < stream.size() && monitor.decision == Decision::Continue; ++j) {
                        state = renew(state, stream[j], config.solver);
                        monitor = monitor_step(monitor, state);
                    }
                    rejected[static_cast<std::size_t>(r)] =
                        monitor.decision == Decision::Reject ? 1 : 0;
                } catch (const Error&) {
                }
            });
            long rej = 0, ok = 0;
            for (int v : rejected) {
                if (v >= 0) {
                    ++ok;
                    rej += v;
                }
            }
            rates.push_back(ok > 0 ? static_cast<double>(rej) / ok : 0.0);
            fails.push_back(reps - ok);
        }
        result.rate.push_back(std::move(rates));
        result.failures.push_back(std::move(fails));
    }
    return result;
}

Trajectory trajectory_run(const SimConfig& config, Family family, long replication) {
    config.validate();
    Rng rng(config.seed, static_cast<std::uint64_t>(replication));
    const TrueTheta truth = draw_true_theta(config, rng);
    const std::vector<DataBatch> stream = make_stream(config, truth, rng);
    const ModelSpec spec{family, config.outcome, config.p()};

    Trajectory traj;
    traj.family = to_string(family);
    StreamRunResult run = run_stream_online(stream, spec, config.solver, true);
    long n = 0;
    std::size_t path_at = 0;
    for (std::size_t j = 0; j < stream.size(); ++j) {
        n += stream[j].size();
        if (j + 1 >= static_cast<std::size_t>(run.init_batches)) {
            const AteEstimate& est = run.path.at(path_at++);
            traj.n_total.push_back(n);
            traj.delta.push_back(est.delta);
            traj.se.push_back(est.se);
        }
    }
    OfflineFit fit = solve_offline(stream, spec, config.solver);
    const Eigen::Index di = spec.delta_index();
    traj.offline_delta = fit.params.theta()[di];
    traj.offline_se = std::sqrt(std::max(0.0, fit.variance(di, di)));
    return traj;
}

namespace {

void append_csv_double(std::ostringstream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    os << buf;
}

}  // namespace

std::string metrics_to_csv(const MetricsTable& table) {
    std::ostringstream os;
    os << "family,mode,n_batches,batch_size,n_total,replications,failures,bias,relative_bias,"
          "ase,ese,coverage,total_time,run_time\n";
    for (const MetricsRow& r : table.rows) {
        os << r.family << ',' << r.mode << ',' << r.n_batches << ',' << r.batch_size << ','
           << r.n_total << ',' << r.replications << ',' << r.failures << ',';
        append_csv_double(os, r.bias);
        os << ',';
        append_csv_double(os, r.relative_bias);
        os << ',';
        append_csv_double(os, r.ase);
        os << ',';
        append_csv_double(os, r.ese);
        os << ',';
        append_csv_double(os, r.coverage);
        os << ',';
        append_csv_double(os, r.total_time);
        os << ',';
        append_csv_double(os, r.run_time);
        os << '\n';
    }
    return os.str();
}

std::string metrics_to_json(const MetricsTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const MetricsRow& r : table.rows) {
        rows.push_back({{"family", r.family},
                        {"mode", r.mode},
                        {"n_batches", r.n_batches},
                        {"batch_size", r.batch_size},
                        {"n_total", r.n_total},
                        {"replications", r.replications},
                        {"failures", r.failures},
                        {"bias", r.bias},
                        {"relative_bias", r.relative_bias},
                        {"ase", r.ase},
                        {"ese", r.ese},
                        {"coverage", r.coverage},
                        {"total_time", r.total_time},
                        {"run_time", r.run_time}});
    }
    return nlohmann::json{{"rows", rows}}.dump(2);
}

std::string sequential_to_csv(const SequentialResult& result) {
    std::ostringstream os;
    os << "family,delta,rejection_rate,failures\n";
    for (std::size_t fi = 0; fi < result.families.size(); ++fi) {
        for (std::size_t di = 0; di < result.delta_grid.size(); ++di) {
            os << result.families[fi] << ',';
            append_csv_double(os, result.delta_grid[di]);
            os << ',';
            append_csv_double(os, result.rate[fi][di]);
            os << ',' << result.failures[fi][di] << '\n';
        }
    }
    return os.str();
}

std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories) {
    std::ostringstream os;
    os << "family,n_total,delta,se,offline_delta,offline_se\n";
    for (const Trajectory& t : trajectories) {
        for (std::size_t i = 0; i < t.n_total.size(); ++i) {
            os << t.family << ',' << t.n_total[i] << ',';
            append_csv_double(os, t.delta[i]);
            os << ',';
            append_csv_double(os, t.se[i]);
            os << ',';
            append_csv_double(os, t.offline_delta);
            os << ',';
            append_csv_double(os, t.offline_se);
            os << '\n';
        }
    }
    return os.str();
}

}  // namespace causalstream
