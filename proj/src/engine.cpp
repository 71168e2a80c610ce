#include "causalstream/engine.hpp"

#include <cmath>
#include <iostream>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "causalstream/rng.hpp"

namespace causalstream {

namespace {

WarningHandler& warning_handler() {
    static WarningHandler handler = [](const std::string& msg) {
        std::cerr << "[causalstream] warning: " << msg << "\n";
    };
    return handler;
}

void warn(const std::string& msg) {
    if (warning_handler()) warning_handler()(msg);
}

constexpr double kRcondFloor = 1e-14;
constexpr double kCondWarn = 1e10;
constexpr int kInitRestarts = 5;

// Newton iteration on a generic score system: fill(theta, u, jac) evaluates
// the equation and its negative-Jacobian at theta. Stops when the step
// max-norm drops below tol.
template <typename Fill>
Eigen::VectorXd newton_solve(Eigen::VectorXd theta, const SolverOptions& opts, Fill&& fill,
                             const char* what) {
    const Eigen::Index d = theta.size();
    thread_local Eigen::VectorXd u, step;
    thread_local Eigen::MatrixXd jac;
    thread_local Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    u.resize(d);
    step.resize(d);
    jac.resize(d, d);
    double step_norm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_iter; ++it) {
        fill(theta, u, jac);
        lu.compute(jac);
        if (!(lu.rcond() > kRcondFloor)) {
            throw SingularityError(std::string(what) +
                                   ": singular sensitivity matrix (is the batch large and varied "
                                   "enough to identify all parameters?)");
        }
        step = lu.solve(u);
        theta += step;
        step_norm = step.cwiseAbs().maxCoeff();
        if (!std::isfinite(step_norm)) {
            throw ConvergenceError(std::string(what) + ": Newton step is non-finite", it + 1,
                                   step_norm,
                                   std::vector<double>(theta.data(), theta.data() + d));
        }
        if (step_norm < opts.tol) return theta;
    }
    throw ConvergenceError(std::string(what) + ": no convergence in " +
                               std::to_string(opts.max_iter) + " iterations (last step " +
                               std::to_string(step_norm) + ")",
                           opts.max_iter, step_norm,
                           std::vector<double>(theta.data(), theta.data() + d));
}

// Solve sum_i U(O_i; theta) = 0 over one batch from theta0 = 0, retrying from
// seeded random points if the cold start fails.
Eigen::VectorXd solve_from_zero(const DataBatch& batch, const ModelSpec& spec,
                                const SolverOptions& opts, const char* what) {
    auto fill = [&](const Eigen::VectorXd& th, Eigen::VectorXd& u, Eigen::MatrixXd& jac) {
        u.setZero();
        jac.setZero();
        accumulate_bundle(batch, spec, th, u, jac, nullptr);
    };
    const Eigen::Index d = spec.dim();
    Eigen::VectorXd start = Eigen::VectorXd::Zero(d);
    for (int attempt = 0;; ++attempt) {
        try {
            return newton_solve(start, opts, fill, what);
        } catch (const Error&) {
            if (attempt >= kInitRestarts) throw;
            Rng rng(0x5eedu, static_cast<std::uint64_t>(attempt));
            start = 0.5 * rng.normal_vector(d);
        }
    }
}

}  // namespace

void set_warning_handler(WarningHandler handler) { warning_handler() = std::move(handler); }

OnlineState init_state(const DataBatch& batch, const ModelSpec& spec, const SolverOptions& opts) {
    spec.validate();
    opts.validate();
    batch.validate(spec);
    const Eigen::Index d = spec.dim();
    if (batch.size() <= d) {
        warn("first batch has n=" + std::to_string(batch.size()) + " <= d=" + std::to_string(d) +
             " parameters; the initial solve may be fragile");
    }

    OnlineState state;
    state.spec = spec;
    state.theta = solve_from_zero(batch, spec, opts, "init_state");

    // Summaries are evaluated at the converged estimate.
    ScoreBundle bundle = batch_bundle(batch, ParameterVector(spec, state.theta), true);
    state.s_cum = std::move(bundle.s);
    state.m_cum = std::move(bundle.m);
    state.n_total = batch.size();
    state.batch_count = 1;
    return state;
}

void renew_in_place(OnlineState& state, const DataBatch& batch, const SolverOptions& opts) {
    opts.validate();
    if (state.batch_count < 1) throw ConfigError("renew: state is not initialized");
    batch.validate(state.spec);

    thread_local Eigen::VectorXd theta_prev, diff;
    theta_prev = state.theta;
    auto fill = [&](const Eigen::VectorXd& th, Eigen::VectorXd& u, Eigen::MatrixXd& jac) {
        diff = theta_prev;
        diff -= th;
        u.noalias() = state.s_cum * diff;
        jac = state.s_cum;
        accumulate_bundle(batch, state.spec, th, u, jac, nullptr);
    };
    state.theta = newton_solve(theta_prev, opts, fill, "renew");

    // Fold the batch's contributions at the new estimate straight into the
    // cumulative summaries.
    thread_local Eigen::VectorXd u_unused;
    u_unused.setZero(state.spec.dim());
    accumulate_bundle(batch, state.spec, state.theta, u_unused, state.s_cum, &state.m_cum);
    state.n_total += batch.size();
    state.batch_count += 1;

    // Conditioning telemetry on a sparse schedule (early batches plus every
    // 32nd); the exact number is always available through condition_number().
    if (state.batch_count <= 4 || state.batch_count % 32 == 0) {
        thread_local Eigen::PartialPivLU<Eigen::MatrixXd> cond_lu;
        cond_lu.compute(state.s_cum);
        const double rc = cond_lu.rcond();
        if (!(rc > 1.0 / kCondWarn)) {
            warn("cumulative sensitivity is ill-conditioned (cond ~ " +
                 std::to_string(rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity()) +
                 ") after batch " + std::to_string(state.batch_count));
        }
    }
}

OnlineState renew(const OnlineState& state, const DataBatch& batch, const SolverOptions& opts) {
    OnlineState next = state;
    renew_in_place(next, batch, opts);
    return next;
}

Eigen::MatrixXd sandwich_variance(const OnlineState& state) {
    if (state.batch_count < 1) throw ConfigError("sandwich_variance: state is not initialized");
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(state.s_cum);
    if (!(lu.rcond() > kRcondFloor)) {
        throw SingularityError("sandwich_variance: cumulative sensitivity is singular");
    }
    const Eigen::MatrixXd sinv_m = lu.solve(state.m_cum);
    Eigen::MatrixXd v = lu.solve(sinv_m.transpose()).transpose();
    // v = s^-1 m s^-T up to roundoff; symmetrize against the residual skew.
    return 0.5 * (v + v.transpose());
}

AteEstimate ate_estimate(const OnlineState& state) {
    const Eigen::Index di = state.spec.delta_index();
    const Eigen::MatrixXd v = sandwich_variance(state);
    double var_delta = v(di, di);
    if (var_delta < 0.0 && var_delta > -1e-12) var_delta = 0.0;
    if (var_delta < 0.0) {
        throw SingularityError("ate_estimate: negative variance from an unstable sandwich");
    }
    return AteEstimate{state.theta[di], std::sqrt(var_delta)};
}

OfflineFit solve_offline(std::span<const DataBatch> batches, const ModelSpec& spec,
                         const SolverOptions& opts) {
    spec.validate();
    opts.validate();
    if (batches.empty()) throw ConfigError("solve_offline: no batches given");

    // The offline estimator works on the pooled raw data, so pooling is part
    // of the solve itself.
    Eigen::Index n = 0;
    for (const DataBatch& b : batches) {
        b.validate(spec);
        n += b.size();
    }
    Eigen::VectorXd y(n);
    Eigen::VectorXi a(n);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(n, spec.p);
    Eigen::Index at = 0;
    for (const DataBatch& b : batches) {
        y.segment(at, b.size()) = b.y();
        a.segment(at, b.size()) = b.a();
        x.middleRows(at, b.size()) = b.x();
        at += b.size();
    }
    DataBatch pooled(0, std::move(y), std::move(a), std::move(x));

    Eigen::VectorXd theta = solve_from_zero(pooled, spec, opts, "solve_offline");
    ScoreBundle bundle = batch_bundle(pooled, ParameterVector(spec, theta), true);

    OnlineState tmp;
    tmp.spec = spec;
    tmp.theta = theta;
    tmp.s_cum = std::move(bundle.s);
    tmp.m_cum = std::move(bundle.m);
    tmp.n_total = n;
    tmp.batch_count = 1;
    return OfflineFit{ParameterVector(spec, std::move(theta)), sandwich_variance(tmp), n};
}

double condition_number(const OnlineState& state) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(state.s_cum);
    const auto& sv = svd.singularValues();
    const double smin = sv[sv.size() - 1];
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return sv[0] / smin;
}

}  // namespace causalstream
