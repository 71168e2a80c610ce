#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "causalstream/errors.hpp"

namespace causalstream {

enum class Family { GComp, Iptw, Aiptw };
enum class OutcomeType { Continuous, Binary };

std::string to_string(Family f);
std::string to_string(OutcomeType o);
Family family_from_string(const std::string& s);
OutcomeType outcome_from_string(const std::string& s);

/// Numerically stable logistic function; saturates instead of overflowing.
inline double expit(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// One subject's record. The covariate vector carries the intercept as its
/// first component, so x.size() is the full design dimension p.
struct Observation {
    double y = 0.0;
    int a = 0;
    Eigen::VectorXd x;
};

/// Estimator family, outcome type, and covariate dimension p (intercept
/// included). Determines the packed parameter layout theta = (alpha, beta,
/// delta) with delta always last.
struct ModelSpec {
    Family family = Family::Aiptw;
    OutcomeType outcome = OutcomeType::Continuous;
    int p = 0;

    int alpha_size() const { return family == Family::GComp ? 0 : p; }
    int beta_size() const { return family == Family::Iptw ? 0 : 2 * p; }
    int dim() const { return alpha_size() + beta_size() + 1; }
    int alpha_offset() const { return 0; }
    int beta_offset() const { return alpha_size(); }
    int delta_index() const { return dim() - 1; }

    bool operator==(const ModelSpec& other) const = default;

    void validate() const {
        if (p < 1) throw ConfigError("ModelSpec: p must be >= 1 (intercept included)");
    }
};

/// A finite batch of observations, stored column-wise. The batch index is the
/// 1-based position of the batch in its stream.
class DataBatch {
public:
    DataBatch() = default;
    DataBatch(long batch_index, Eigen::VectorXd y, Eigen::VectorXi a,
              Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x);
    static DataBatch from_observations(long batch_index, const std::vector<Observation>& obs);

    long batch_index() const { return batch_index_; }
    Eigen::Index size() const { return y_.size(); }
    Eigen::Index p() const { return x_.cols(); }

    double y(Eigen::Index i) const { return y_[i]; }
    int a(Eigen::Index i) const { return a_[i]; }
    double x(Eigen::Index i, Eigen::Index j) const { return x_(i, j); }
    auto x_row(Eigen::Index i) const { return x_.row(i); }

    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::VectorXi& a() const { return a_; }
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& x() const {
        return x_;
    }

    Observation observation(Eigen::Index i) const;

    /// Checks batch-level invariants plus spec-dependent ones (dimension p,
    /// binary outcomes in {0,1}).
    void validate(const ModelSpec& spec) const;

private:
    long batch_index_ = 0;
    Eigen::VectorXd y_;
    Eigen::VectorXi a_;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x_;
};

/// Packed parameter vector theta with named slices. Layout per family:
///   GComp: (beta[2p], delta), Iptw: (alpha[p], delta),
///   Aiptw: (alpha[p], beta[2p], delta); delta is always the last entry.
class ParameterVector {
public:
    ParameterVector(ModelSpec spec, Eigen::VectorXd theta);
    static ParameterVector zero(const ModelSpec& spec);
    static ParameterVector pack(const ModelSpec& spec, const Eigen::VectorXd& alpha,
                                const Eigen::VectorXd& beta, double delta);

    const ModelSpec& spec() const { return spec_; }
    const Eigen::VectorXd& theta() const { return theta_; }
    Eigen::Index dim() const { return theta_.size(); }

    auto alpha() const { return theta_.segment(spec_.alpha_offset(), spec_.alpha_size()); }
    auto beta() const { return theta_.segment(spec_.beta_offset(), spec_.beta_size()); }
    double delta() const { return theta_[spec_.delta_index()]; }

private:
    ModelSpec spec_;
    Eigen::VectorXd theta_;
};

/// Propensity-score design g(X) = X (logistic score), length p.
Eigen::VectorXd ps_features(const Observation& obs);

/// Outcome-regression design h(A,X) = (X, A*X), length 2p. The same ordering
/// is used for the beta slice, the simulator, and predictions.
Eigen::VectorXd or_features(const Observation& obs);
Eigen::VectorXd or_features(int a, const Eigen::VectorXd& x);

/// Conditional outcome mean m(a,x;beta): linear for continuous outcomes,
/// logistic for binary. Supports counterfactual a regardless of the observed
/// treatment.
double predict_outcome(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& beta,
                       OutcomeType outcome);

}  // namespace causalstream
