#pragma once

#include <Eigen/Core>

#include "causalstream/model.hpp"

namespace causalstream {

/// Propensities outside (eps, 1-eps) violate positivity and raise an error
/// instead of being truncated.
inline constexpr double kPositivityEps = 1e-8;

/// Per-batch sums of the estimating function, its negative Jacobian, and the
/// outer-product variability contribution:
///   u = sum_i U(O_i; theta)
///   s = -sum_i dU(O_i; theta)/dtheta^T      (analytic)
///   m = sum_i U(O_i; theta) U(O_i; theta)^T (symmetric PSD)
struct ScoreBundle {
    Eigen::VectorXd u;
    Eigen::MatrixXd s;
    Eigen::MatrixXd m;
};

Eigen::VectorXd score_gcomp(const Observation& obs, const ParameterVector& params);
Eigen::VectorXd score_iptw(const Observation& obs, const ParameterVector& params);
Eigen::VectorXd score_aiptw(const Observation& obs, const ParameterVector& params);

/// Dispatches on params.spec().family.
Eigen::VectorXd score(const Observation& obs, const ParameterVector& params);

/// Sums u, s (and m unless with_variability is false) over the batch. The
/// reduction is associative; the result does not depend on observation order
/// beyond floating-point roundoff. Propagates positivity violations with the
/// batch/observation index attached and rejects non-finite results.
ScoreBundle batch_bundle(const DataBatch& batch, const ParameterVector& params,
                         bool with_variability = true);

/// Allocation-free accumulation into caller-owned u/s/m; the engine's hot
/// path. Batch terms are ADDED to u and s (callers may preload them); m may
/// be null.
void accumulate_bundle(const DataBatch& batch, const ParameterVector& params, Eigen::VectorXd& u,
                       Eigen::MatrixXd& s, Eigen::MatrixXd* m);
void accumulate_bundle(const DataBatch& batch, const ModelSpec& spec, const Eigen::VectorXd& theta,
                       Eigen::VectorXd& u, Eigen::MatrixXd& s, Eigen::MatrixXd* m);

}  // namespace causalstream
