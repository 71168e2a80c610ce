#include "causalstream/model.hpp"

#include <cmath>

namespace causalstream {

std::string to_string(Family f) {
    switch (f) {
        case Family::GComp: return "gcomp";
        case Family::Iptw: return "iptw";
        case Family::Aiptw: return "aiptw";
    }
    return "?";
}

std::string to_string(OutcomeType o) {
    return o == OutcomeType::Continuous ? "continuous" : "binary";
}

Family family_from_string(const std::string& s) {
    if (s == "gcomp") return Family::GComp;
    if (s == "iptw") return Family::Iptw;
    if (s == "aiptw") return Family::Aiptw;
    throw ConfigError("unknown family '" + s + "' (expected gcomp|iptw|aiptw)");
}

OutcomeType outcome_from_string(const std::string& s) {
    if (s == "continuous") return OutcomeType::Continuous;
    if (s == "binary") return OutcomeType::Binary;
    throw ConfigError("unknown outcome type '" + s + "' (expected continuous|binary)");
}

DataBatch::DataBatch(long batch_index, Eigen::VectorXd y, Eigen::VectorXi a,
                     Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x)
    : batch_index_(batch_index), y_(std::move(y)), a_(std::move(a)), x_(std::move(x)) {
    if (y_.size() != a_.size() || y_.size() != x_.rows()) {
        throw DimensionError("DataBatch: y, a, x row counts differ");
    }
}

DataBatch DataBatch::from_observations(long batch_index, const std::vector<Observation>& obs) {
    if (obs.empty()) throw ValidationError("DataBatch: batch must contain at least one observation");
    const Eigen::Index p = obs.front().x.size();
    Eigen::VectorXd y(static_cast<Eigen::Index>(obs.size()));
    Eigen::VectorXi a(y.size());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(y.size(), p);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const Observation& o = obs[static_cast<std::size_t>(i)];
        if (o.x.size() != p) {
            throw DimensionError("DataBatch: observations disagree on covariate dimension");
        }
        y[i] = o.y;
        a[i] = o.a;
        x.row(i) = o.x.transpose();
    }
    return DataBatch(batch_index, std::move(y), std::move(a), std::move(x));
}

Observation DataBatch::observation(Eigen::Index i) const {
    return Observation{y_[i], a_[i], x_.row(i).transpose()};
}

void DataBatch::validate(const ModelSpec& spec) const {
    if (size() < 1) throw ValidationError("DataBatch: batch must contain at least one observation");
    if (p() != spec.p) {
        throw DimensionError("DataBatch: covariate dimension " + std::to_string(p()) +
                             " does not match spec p=" + std::to_string(spec.p));
    }
    for (Eigen::Index i = 0; i < size(); ++i) {
        if (a_[i] != 0 && a_[i] != 1) {
            throw ValidationError("DataBatch: treatment must be 0 or 1 at observation " +
                                  std::to_string(i));
        }
        if (x_(i, 0) != 1.0) {
            throw ValidationError("DataBatch: x[0] must equal 1 (intercept) at observation " +
                                  std::to_string(i));
        }
        if (!std::isfinite(y_[i]) || !x_.row(i).allFinite()) {
            throw ValidationError("DataBatch: non-finite value at observation " + std::to_string(i));
        }
        if (spec.outcome == OutcomeType::Binary && y_[i] != 0.0 && y_[i] != 1.0) {
            throw ValidationError("DataBatch: binary outcome must be 0 or 1 at observation " +
                                  std::to_string(i));
        }
    }
}

ParameterVector::ParameterVector(ModelSpec spec, Eigen::VectorXd theta)
    : spec_(spec), theta_(std::move(theta)) {
    spec_.validate();
    if (theta_.size() != spec_.dim()) {
        throw DimensionError("ParameterVector: theta has length " + std::to_string(theta_.size()) +
                             ", spec requires " + std::to_string(spec_.dim()));
    }
}

ParameterVector ParameterVector::zero(const ModelSpec& spec) {
    spec.validate();
    return ParameterVector(spec, Eigen::VectorXd::Zero(spec.dim()));
}

ParameterVector ParameterVector::pack(const ModelSpec& spec, const Eigen::VectorXd& alpha,
                                      const Eigen::VectorXd& beta, double delta) {
    spec.validate();
    if (alpha.size() != spec.alpha_size()) {
        throw DimensionError("ParameterVector::pack: alpha slice has wrong length");
    }
    if (beta.size() != spec.beta_size()) {
        throw DimensionError("ParameterVector::pack: beta slice has wrong length");
    }
    Eigen::VectorXd theta(spec.dim());
    theta.segment(spec.alpha_offset(), spec.alpha_size()) = alpha;
    theta.segment(spec.beta_offset(), spec.beta_size()) = beta;
    theta[spec.delta_index()] = delta;
    return ParameterVector(spec, std::move(theta));
}

Eigen::VectorXd ps_features(const Observation& obs) { return obs.x; }

Eigen::VectorXd or_features(int a, const Eigen::VectorXd& x) {
    const Eigen::Index p = x.size();
    Eigen::VectorXd h(2 * p);
    h.head(p) = x;
    h.tail(p) = a ? x : Eigen::VectorXd::Zero(p);
    return h;
}

Eigen::VectorXd or_features(const Observation& obs) { return or_features(obs.a, obs.x); }

double predict_outcome(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& beta,
                       OutcomeType outcome) {
    if (beta.size() != 2 * x.size()) {
        throw DimensionError("predict_outcome: beta must have length 2p");
    }
    const Eigen::Index p = x.size();
    double eta = x.dot(beta.head(p));
    if (a) eta += x.dot(beta.tail(p));
    return outcome == OutcomeType::Continuous ? eta : expit(eta);
}

}  // namespace causalstream
