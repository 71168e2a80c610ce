#pragma once

#include <functional>
#include <span>
#include <string>

#include <Eigen/Core>

#include "causalstream/estimating.hpp"
#include "causalstream/model.hpp"

namespace causalstream {

struct SolverOptions {
    double tol = 1e-8;  // max-norm of the Newton step
    int max_iter = 50;

    void validate() const {
        if (!(tol > 0.0)) throw ConfigError("SolverOptions: tol must be positive");
        if (max_iter < 1) throw ConfigError("SolverOptions: max_iter must be >= 1");
    }
};

/// Renewable summary of everything seen so far. Together with the next batch
/// this is sufficient for all future updates; raw observations are never
/// retained.
struct OnlineState {
    ModelSpec spec;
    Eigen::VectorXd theta;   // current estimate, delta last
    Eigen::MatrixXd s_cum;   // sum of batch sensitivities at their update points
    Eigen::MatrixXd m_cum;   // sum of score outer products at their update points
    long n_total = 0;        // observations absorbed
    long batch_count = 0;    // batches absorbed

    ParameterVector params() const { return ParameterVector(spec, theta); }
};

struct AteEstimate {
    double delta = 0.0;
    double se = 0.0;
};

struct OfflineFit {
    ParameterVector params;
    Eigen::MatrixXd variance;
    long n_total = 0;
};

/// Warnings (small first batch, ill-conditioned cumulative sensitivity) are
/// reported through this hook; the default writes to stderr.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);

/// Solves the first-batch estimating equation by Newton-Raphson from zero
/// (with a few seeded random restarts if that fails) and initializes the
/// cumulative summaries at the solution.
OnlineState init_state(const DataBatch& batch, const ModelSpec& spec,
                       const SolverOptions& opts = {});

/// Absorbs one new batch: solves the online estimating equation
///   s_cum * (theta_prev - theta) + U_b(D_b; theta) = 0
/// warm-started at theta_prev, then folds the batch's sensitivity and
/// variability at the new estimate into the summaries. Reads no prior batch.
OnlineState renew(const OnlineState& state, const DataBatch& batch,
                  const SolverOptions& opts = {});

/// Same update without copying the summaries; the streaming hot path.
void renew_in_place(OnlineState& state, const DataBatch& batch, const SolverOptions& opts = {});

/// Sandwich variance of the current estimate, s^-1 m s^-T, symmetrized.
Eigen::MatrixXd sandwich_variance(const OnlineState& state);

/// ATE point estimate (last entry of theta) and its standard error (sqrt of
/// the last diagonal entry of the sandwich).
AteEstimate ate_estimate(const OnlineState& state);

/// Pooled offline solve over all batches from theta = 0; the oracle the
/// online estimator is compared against. Pools the raw data internally.
OfflineFit solve_offline(std::span<const DataBatch> batches, const ModelSpec& spec,
                         const SolverOptions& opts = {});

/// 2-norm condition number estimate of the cumulative sensitivity.
double condition_number(const OnlineState& state);

}  // namespace causalstream
