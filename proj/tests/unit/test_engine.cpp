#include <doctest.h>

#include <cmath>

#include "causalstream/engine.hpp"
#include "causalstream/rng.hpp"
#include "test_oracles.hpp"

using namespace causalstream;
using cstest::batch_ya;

namespace {

// Silence expected small-batch warnings during tests.
struct QuietWarnings {
    QuietWarnings() { set_warning_handler([](const std::string&) {}); }
    ~QuietWarnings() {
        set_warning_handler(nullptr);
    }
};

DataBatch simulated_batch(long index, long n, int p, Rng& rng, const Eigen::VectorXd& alpha,
                          const Eigen::VectorXd& beta) {
    std::vector<Observation> obs;
    obs.reserve(n);
    for (long i = 0; i < n; ++i) {
        Eigen::VectorXd x = rng.normal_vector(p);
        x[0] = 1.0;
        const int a = rng.bernoulli(expit(x.dot(alpha))) ? 1 : 0;
        const double eta0 = x.dot(beta.head(p));
        const double eta = a ? eta0 + x.dot(beta.tail(p)) : eta0;
        obs.push_back(Observation{eta + rng.normal(), a, x});
    }
    return DataBatch::from_observations(index, obs);
}

}  // namespace

TEST_CASE("init_state on the saturated gcomp example") {
    QuietWarnings quiet;
    ModelSpec spec{Family::GComp, OutcomeType::Continuous, 1};
    DataBatch batch = batch_ya(1, {{1.0, 1}, {3.0, 1}, {0.0, 0}, {2.0, 0}});
    OnlineState state = init_state(batch, spec);
    CHECK(state.batch_count == 1);
    CHECK(state.n_total == 4);
    // intercept-only arms: delta = mean(y|a=1) - mean(y|a=0) = 2 - 1
    CHECK(ate_estimate(state).delta == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("init_state on the intercept-only iptw example") {
    QuietWarnings quiet;
    ModelSpec spec{Family::Iptw, OutcomeType::Continuous, 1};
    DataBatch batch = batch_ya(1, {{1.0, 1}, {3.0, 1}, {0.0, 0}, {2.0, 0}});
    OnlineState state = init_state(batch, spec);
    CHECK(state.theta[0] == doctest::Approx(0.0).epsilon(1e-8));  // fitted propensity 1/2
    CHECK(state.theta[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("degenerate single-arm batch cannot initialize") {
    QuietWarnings quiet;
    ModelSpec spec{Family::GComp, OutcomeType::Continuous, 1};
    DataBatch batch = batch_ya(1, {{1.0, 1}, {2.0, 1}, {0.5, 1}});
    CHECK_THROWS_AS(init_state(batch, spec), Error);

    ModelSpec iptw{Family::Iptw, OutcomeType::Continuous, 1};
    CHECK_THROWS_AS(init_state(batch_ya(1, {{1.0, 1}, {2.0, 1}, {0.5, 1}, {1.5, 1}}), iptw), Error);
}

TEST_CASE("renew reproduces the pooled fit for the linear family") {
    QuietWarnings quiet;
    ModelSpec spec{Family::GComp, OutcomeType::Continuous, 1};
    OnlineState s1 = init_state(batch_ya(1, {{1.0, 1}, {0.0, 0}}), spec);
    OnlineState s2 = renew(s1, batch_ya(2, {{3.0, 1}, {2.0, 0}}));
    CHECK(s2.batch_count == 2);
    CHECK(s2.n_total == 4);
    OnlineState pooled = init_state(batch_ya(1, {{1.0, 1}, {3.0, 1}, {0.0, 0}, {2.0, 0}}), spec);
    CHECK(ate_estimate(s2).delta ==
          doctest::Approx(ate_estimate(pooled).delta).epsilon(1e-7));
}

TEST_CASE("renew accepts a batch of size one") {
    QuietWarnings quiet;
    Rng rng(41);
    ModelSpec spec{Family::Aiptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
    Eigen::VectorXd beta = rng.normal_vector(4);
    OnlineState state = init_state(simulated_batch(1, 200, 2, rng, alpha, beta), spec);
    OnlineState next = renew(state, simulated_batch(2, 1, 2, rng, alpha, beta));
    CHECK(next.n_total == 201);
    CHECK(next.batch_count == 2);
}

TEST_CASE("one-batch sandwich equals the offline sandwich") {
    QuietWarnings quiet;
    Rng rng(43);
    ModelSpec spec{Family::Iptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
    Eigen::VectorXd beta = rng.normal_vector(4);
    DataBatch batch = simulated_batch(1, 500, 2, rng, alpha, beta);

    OnlineState state = init_state(batch, spec);
    std::vector<DataBatch> one{batch};
    OfflineFit fit = solve_offline(one, spec);
    CHECK((state.theta - fit.params.theta()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((sandwich_variance(state) - fit.variance).cwiseAbs().maxCoeff() <=
          1e-10 * fit.variance.cwiseAbs().maxCoeff());
}

TEST_CASE("gcomp sandwich matches the difference-of-means variance") {
    QuietWarnings quiet;
    Rng rng(47);
    const long n = 20000;
    std::vector<std::pair<double, int>> rows;
    double s1 = 0, s0 = 0, ss1 = 0, ss0 = 0;
    long n1 = 0, n0 = 0;
    for (long i = 0; i < n; ++i) {
        const int a = rng.bernoulli(0.4) ? 1 : 0;
        const double y = (a ? 1.0 : 0.0) + (a ? 2.0 : 1.0) * rng.normal();
        rows.push_back({y, a});
        if (a) {
            s1 += y;
            ss1 += y * y;
            ++n1;
        } else {
            s0 += y;
            ss0 += y * y;
            ++n0;
        }
    }
    ModelSpec spec{Family::GComp, OutcomeType::Continuous, 1};
    OnlineState state = init_state(batch_ya(1, rows), spec);
    const double var1 = ss1 / n1 - (s1 / n1) * (s1 / n1);
    const double var0 = ss0 / n0 - (s0 / n0) * (s0 / n0);
    const double textbook = var1 / n1 + var0 / n0;
    const AteEstimate est = ate_estimate(state);
    CHECK(est.se * est.se == doctest::Approx(textbook).epsilon(0.02));
}

TEST_CASE("duplicated data halves the sandwich") {
    QuietWarnings quiet;
    Rng rng(53);
    ModelSpec spec{Family::Aiptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
    Eigen::VectorXd beta = rng.normal_vector(4);
    DataBatch batch = simulated_batch(1, 400, 2, rng, alpha, beta);

    std::vector<Observation> doubled;
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        doubled.push_back(batch.observation(i));
        doubled.push_back(batch.observation(i));
    }
    OnlineState a1 = init_state(batch, spec);
    OnlineState a2 = init_state(DataBatch::from_observations(1, doubled), spec);
    const Eigen::MatrixXd v1 = sandwich_variance(a1);
    const Eigen::MatrixXd v2 = sandwich_variance(a2);
    CHECK((v1 - 2.0 * v2).cwiseAbs().maxCoeff() <= 1e-8 * v1.cwiseAbs().maxCoeff());
}

TEST_CASE("state is sufficient: a copied state continues identically") {
    QuietWarnings quiet;
    Rng rng(59);
    ModelSpec spec{Family::Iptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
    Eigen::VectorXd beta = rng.normal_vector(4);

    OnlineState state = init_state(simulated_batch(1, 300, 2, rng, alpha, beta), spec);
    state = renew(state, simulated_batch(2, 150, 2, rng, alpha, beta));
    OnlineState copy = state;  // value semantics; prior raw data no longer exists

    DataBatch b3 = simulated_batch(3, 150, 2, rng, alpha, beta);
    OnlineState via_original = renew(state, b3);
    OnlineState via_copy = renew(copy, b3);
    CHECK(via_original.theta == via_copy.theta);
    CHECK(via_original.s_cum == via_copy.s_cum);
    CHECK(via_original.m_cum == via_copy.m_cum);
}

TEST_CASE("offline solve is invariant to batch order and matches init on one batch") {
    QuietWarnings quiet;
    Rng rng(61);
    ModelSpec spec{Family::Aiptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
    Eigen::VectorXd beta = rng.normal_vector(4);
    std::vector<DataBatch> batches;
    for (long j = 1; j <= 4; ++j) batches.push_back(simulated_batch(j, 200, 2, rng, alpha, beta));

    OfflineFit fit = solve_offline(batches, spec);
    std::vector<DataBatch> shuffled{batches[2], batches[0], batches[3], batches[1]};
    OfflineFit fit2 = solve_offline(shuffled, spec);
    CHECK((fit.params.theta() - fit2.params.theta()).cwiseAbs().maxCoeff() <= 1e-7);

    std::vector<DataBatch> one{batches[0]};
    OnlineState state = init_state(batches[0], spec);
    OfflineFit single = solve_offline(one, spec);
    CHECK((state.theta - single.params.theta()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("pooled mean score at the online estimate decays with N") {
    // log-log slope of |U_pooled(theta_online)/N| against N should be <= -0.4
    QuietWarnings quiet;
    ModelSpec spec{Family::Aiptw, OutcomeType::Continuous, 2};
    std::vector<double> log_n, log_score;
    for (long nb : {10L, 100L, 1000L}) {
        double acc = 0.0;
        const int reps = 3;
        for (int r = 0; r < reps; ++r) {
            Rng rng(1000 + static_cast<std::uint64_t>(nb), static_cast<std::uint64_t>(r));
            Eigen::VectorXd alpha = 0.5 * rng.normal_vector(2);
            Eigen::VectorXd beta = rng.normal_vector(4);
            std::vector<DataBatch> stream;
            for (long j = 1; j <= nb; ++j) {
                stream.push_back(simulated_batch(j, 100, 2, rng, alpha, beta));
            }
            OnlineState state = init_state(stream[0], spec);
            for (std::size_t j = 1; j < stream.size(); ++j) state = renew(state, stream[j]);

            Eigen::VectorXd u = Eigen::VectorXd::Zero(spec.dim());
            Eigen::MatrixXd s = Eigen::MatrixXd::Zero(spec.dim(), spec.dim());
            ParameterVector pv(spec, state.theta);
            for (const DataBatch& b : stream) accumulate_bundle(b, pv, u, s, nullptr);
            acc += (u / static_cast<double>(state.n_total)).cwiseAbs().maxCoeff();
        }
        log_n.push_back(std::log(static_cast<double>(nb) * 100.0));
        log_score.push_back(std::log(acc / reps));
    }
    const double slope = (log_score[2] - log_score[0]) / (log_n[2] - log_n[0]);
    CHECK(slope <= -0.4);
}

TEST_CASE("convergence failures carry diagnostics") {
    QuietWarnings quiet;
    Rng rng(67);
    ModelSpec spec{Family::Iptw, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha(2), beta(4);
    alpha << 0.4, -0.8;
    beta = rng.normal_vector(4);
    DataBatch batch = simulated_batch(1, 200, 2, rng, alpha, beta);
    SolverOptions strict;
    strict.max_iter = 1;
    try {
        init_state(batch, spec, strict);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.iterations == 1);
        CHECK(e.last_step_norm > 0.0);
        CHECK(e.last_iterate.size() == static_cast<std::size_t>(spec.dim()));
    }
}

TEST_CASE("condition number is reported") {
    QuietWarnings quiet;
    Rng rng(71);
    ModelSpec spec{Family::GComp, OutcomeType::Continuous, 2};
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd beta = rng.normal_vector(4);
    OnlineState state = init_state(simulated_batch(1, 300, 2, rng, alpha, beta), spec);
    const double cond = condition_number(state);
    CHECK(cond >= 1.0);
    CHECK(std::isfinite(cond));
}
