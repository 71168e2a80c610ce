#include "causalstream/estimating.hpp"

#include <cmath>
#include <string>

namespace causalstream {

PositivityError::PositivityError(double propensity, long batch_index, long obs_index)
    : Error("positivity violation: propensity " + std::to_string(propensity) +
            " outside (1e-08, 1-1e-08) at batch " + std::to_string(batch_index) +
            ", observation " + std::to_string(obs_index)),
      propensity(propensity),
      batch_index(batch_index),
      obs_index(obs_index) {}

namespace {

double checked_propensity(double e, long batch_index, long obs_index) {
    if (!(e > kPositivityEps && e < 1.0 - kPositivityEps)) {
        throw PositivityError(e, batch_index, obs_index);
    }
    return e;
}

// Scratch buffers reused across calls; thread_local keeps concurrent callers
// independent.
struct Scratch {
    Eigen::VectorXd ui;   // single-observation score, length d
    Eigen::VectorXd xc;   // covariate column, length p
    Eigen::MatrixXd xxt;  // p x p outer product
};

Scratch& scratch(Eigen::Index d, Eigen::Index p) {
    thread_local Scratch s;
    s.ui.resize(d);
    s.xc.resize(p);
    s.xxt.resize(p, p);
    return s;
}

void add_observation(const ModelSpec& spec, const Eigen::VectorXd& theta, double y, int a,
                     long batch_index, long obs_index, Eigen::VectorXd& u, Eigen::MatrixXd& s,
                     Eigen::MatrixXd* m, Scratch& sc) {
    const Eigen::Index p = spec.p;
    const int ao = spec.alpha_offset();
    const int bo = spec.beta_offset();
    const int di = spec.delta_index();
    const bool binary = spec.outcome == OutcomeType::Binary;
    const double delta = theta[di];
    const Eigen::VectorXd& x = sc.xc;

    double e = 0.0, we = 0.0;
    if (spec.alpha_size() > 0) {
        const double eta = x.dot(theta.segment(ao, p));
        e = checked_propensity(expit(eta), batch_index, obs_index);
        we = e * (1.0 - e);
    }

    double m0 = 0.0, m1 = 0.0, ma = 0.0, wm0 = 1.0, wm1 = 1.0, wma = 1.0;
    if (spec.beta_size() > 0) {
        const double eta0 = x.dot(theta.segment(bo, p));
        const double eta1 = eta0 + x.dot(theta.segment(bo + p, p));
        if (binary) {
            m0 = expit(eta0);
            m1 = expit(eta1);
            wm0 = m0 * (1.0 - m0);
            wm1 = m1 * (1.0 - m1);
        } else {
            m0 = eta0;
            m1 = eta1;
        }
        ma = a ? m1 : m0;
        wma = a ? wm1 : wm0;
    }

    Eigen::VectorXd& ui = sc.ui;

    switch (spec.family) {
        case Family::GComp: {
            const double r = y - ma;
            ui.segment(bo, p) = r * x;
            if (a) {
                ui.segment(bo + p, p) = r * x;
            } else {
                ui.segment(bo + p, p).setZero();
            }
            ui[di] = m1 - m0 - delta;

            // S[beta,beta] += wma * h h^T with h = (x, a*x)
            sc.xxt.noalias() = wma * x * x.transpose();
            s.block(bo, bo, p, p) += sc.xxt;
            if (a) {
                s.block(bo, bo + p, p, p) += sc.xxt;
                s.block(bo + p, bo, p, p) += sc.xxt;
                s.block(bo + p, bo + p, p, p) += sc.xxt;
            }
            // S[delta,beta] = -((wm1-wm0) x, wm1 x)^T
            s.row(di).segment(bo, p) -= (wm1 - wm0) * x;
            s.row(di).segment(bo + p, p) -= wm1 * x;
            s(di, di) += 1.0;
            break;
        }
        case Family::Iptw: {
            ui.segment(ao, p) = (a - e) * x;
            ui[di] = (a ? y / e : -y / (1.0 - e)) - delta;

            sc.xxt.noalias() = we * x * x.transpose();
            s.block(ao, ao, p, p) += sc.xxt;
            const double c = a ? y * (1.0 - e) / e : y * e / (1.0 - e);
            s.row(di).segment(ao, p) += c * x;
            s(di, di) += 1.0;
            break;
        }
        case Family::Aiptw: {
            const double r = y - ma;
            ui.segment(ao, p) = (a - e) * x;
            ui.segment(bo, p) = r * x;
            if (a) {
                ui.segment(bo + p, p) = r * x;
            } else {
                ui.segment(bo + p, p).setZero();
            }
            const double aug1 = m1 + (a ? (y - m1) / e : 0.0);
            const double aug0 = m0 + (a ? 0.0 : (y - m0) / (1.0 - e));
            ui[di] = aug1 - aug0 - delta;

            sc.xxt.noalias() = we * x * x.transpose();
            s.block(ao, ao, p, p) += sc.xxt;

            sc.xxt.noalias() = wma * x * x.transpose();
            s.block(bo, bo, p, p) += sc.xxt;
            if (a) {
                s.block(bo, bo + p, p, p) += sc.xxt;
                s.block(bo + p, bo, p, p) += sc.xxt;
                s.block(bo + p, bo + p, p, p) += sc.xxt;
            }

            const double ca = a ? (y - m1) * (1.0 - e) / e : (y - m0) * e / (1.0 - e);
            s.row(di).segment(ao, p) += ca * x;

            // S[delta,beta] = ((c1+c0) x, c1 x)^T
            const double c1 = wm1 * (a / e - 1.0);
            const double c0 = wm0 * (1.0 - (1.0 - a) / (1.0 - e));
            s.row(di).segment(bo, p) += (c1 + c0) * x;
            s.row(di).segment(bo + p, p) += c1 * x;
            s(di, di) += 1.0;
            break;
        }
    }

    u += ui;
    if (m) m->selfadjointView<Eigen::Lower>().rankUpdate(ui, 1.0);
}

}  // namespace

void accumulate_bundle(const DataBatch& batch, const ParameterVector& params, Eigen::VectorXd& u,
                       Eigen::MatrixXd& s, Eigen::MatrixXd* m) {
    accumulate_bundle(batch, params.spec(), params.theta(), u, s, m);
}

void accumulate_bundle(const DataBatch& batch, const ModelSpec& spec, const Eigen::VectorXd& theta,
                       Eigen::VectorXd& u, Eigen::MatrixXd& s, Eigen::MatrixXd* m) {
    if (batch.p() != spec.p) {
        throw DimensionError("accumulate_bundle: batch covariate dimension does not match spec");
    }
    if (theta.size() != spec.dim()) {
        throw DimensionError("accumulate_bundle: theta length does not match spec");
    }
    Scratch& sc = scratch(spec.dim(), spec.p);
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        sc.xc = batch.x_row(i).transpose();
        add_observation(spec, theta, batch.y(i), batch.a(i), batch.batch_index(), i, u, s, m, sc);
    }
    if (m) m->triangularView<Eigen::StrictlyUpper>() = m->transpose();
    if (!u.allFinite() || !s.allFinite() || (m && !m->allFinite())) {
        throw Error("batch bundle has non-finite entries (batch " +
                    std::to_string(batch.batch_index()) + ")");
    }
}

ScoreBundle batch_bundle(const DataBatch& batch, const ParameterVector& params,
                         bool with_variability) {
    const Eigen::Index d = params.spec().dim();
    ScoreBundle out;
    out.u = Eigen::VectorXd::Zero(d);
    out.s = Eigen::MatrixXd::Zero(d, d);
    out.m = Eigen::MatrixXd::Zero(d, d);
    accumulate_bundle(batch, params, out.u, out.s, with_variability ? &out.m : nullptr);
    return out;
}

namespace {

Eigen::VectorXd single_score(const Observation& obs, const ParameterVector& params,
                             Family expect) {
    if (params.spec().family != expect) {
        throw DimensionError("score: parameter layout does not match requested family");
    }
    DataBatch b = DataBatch::from_observations(-1, {obs});
    return batch_bundle(b, params, false).u;
}

}  // namespace

Eigen::VectorXd score_gcomp(const Observation& obs, const ParameterVector& params) {
    return single_score(obs, params, Family::GComp);
}

Eigen::VectorXd score_iptw(const Observation& obs, const ParameterVector& params) {
    return single_score(obs, params, Family::Iptw);
}

Eigen::VectorXd score_aiptw(const Observation& obs, const ParameterVector& params) {
    return single_score(obs, params, Family::Aiptw);
}

Eigen::VectorXd score(const Observation& obs, const ParameterVector& params) {
    DataBatch b = DataBatch::from_observations(-1, {obs});
    return batch_bundle(b, params, false).u;
}

}  // namespace causalstream
