#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "causalstream/simulate.hpp"

using namespace causalstream;

namespace {

struct QuietWarnings {
    QuietWarnings() { set_warning_handler([](const std::string&) {}); }
};

}  // namespace

TEST_CASE("generate_batch moments") {
    SimConfig cfg;
    cfg.p_covariates = 2;
    cfg.rho = 0.5;
    Rng rng(1234);

    SUBCASE("balanced randomization at alpha = 0") {
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(3);
        truth.beta = Eigen::VectorXd::Zero(6);
        DataBatch b = generate_batch(cfg, truth, 1, 10000, rng);
        const double rate = b.a().cast<double>().mean();
        CHECK(std::fabs(rate - 0.5) <= 3.0 * 0.5 / std::sqrt(10000.0));
    }

    SUBCASE("sample covariance matches compound symmetry") {
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(3);
        truth.beta = Eigen::VectorXd::Zero(6);
        const long n = 100000;
        DataBatch b = generate_batch(cfg, truth, 1, n, rng);
        Eigen::MatrixXd xr = b.x().rightCols(2);
        Eigen::RowVectorXd mean = xr.colwise().mean();
        Eigen::MatrixXd centered = xr.rowwise() - mean;
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
        CHECK(std::fabs(cov(0, 0) - 1.0) <= 0.02);
        CHECK(std::fabs(cov(1, 1) - 1.0) <= 0.02);
        CHECK(std::fabs(cov(0, 1) - 0.5) <= 0.02);
    }

    SUBCASE("rho = 0 gives uncorrelated covariates") {
        SimConfig c0 = cfg;
        c0.rho = 0.0;
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(3);
        truth.beta = Eigen::VectorXd::Zero(6);
        const long n = 50000;
        DataBatch b = generate_batch(c0, truth, 1, n, rng);
        Eigen::MatrixXd xr = b.x().rightCols(2);
        Eigen::RowVectorXd mean = xr.colwise().mean();
        Eigen::MatrixXd centered = xr.rowwise() - mean;
        const double c01 = (centered.col(0).dot(centered.col(1))) / static_cast<double>(n - 1);
        CHECK(std::fabs(c01) <= 3.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("true ATE") {
    Rng rng(77);
    SUBCASE("continuous: the treatment main coefficient, interactions drop") {
        SimConfig cfg;
        cfg.p_covariates = 2;
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(3);
        truth.beta = Eigen::VectorXd::Zero(6);
        truth.beta[3] = 0.7;   // treatment main effect
        truth.beta[4] = -2.0;  // interactions: irrelevant in expectation
        truth.beta[5] = 1.3;
        const TrueAte ate = true_ate(truth, cfg, rng);
        CHECK(ate.value == 0.7);
        CHECK(ate.mc_se == 0.0);
    }
    SUBCASE("binary at beta = 0 has no effect") {
        SimConfig cfg;
        cfg.outcome = OutcomeType::Binary;
        cfg.p_covariates = 1;
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(2);
        truth.beta = Eigen::VectorXd::Zero(4);
        const TrueAte ate = true_ate(truth, cfg, rng);
        CHECK(std::fabs(ate.value) <= 4.0 * std::max(ate.mc_se, 1e-12));
    }
    SUBCASE("binary intercept-only closed form") {
        SimConfig cfg;
        cfg.outcome = OutcomeType::Binary;
        cfg.p_covariates = 0;
        TrueTheta truth;
        truth.alpha = Eigen::VectorXd::Zero(1);
        truth.beta = Eigen::VectorXd::Zero(2);
        truth.beta[1] = 1.0;  // m1 = expit(1), m0 = expit(0)
        const TrueAte ate = true_ate(truth, cfg, rng);
        CHECK(ate.value == doctest::Approx(0.2310585786300049).epsilon(1e-10));
    }
}

TEST_CASE("streams: iid vs covariate-sorted") {
    SimConfig cfg;
    cfg.n_batches = 20;
    cfg.batch_size = 50;
    cfg.p_covariates = 1;
    cfg.seed = 99;

    Rng rng_a(cfg.seed, 0);
    const TrueTheta truth = draw_true_theta(cfg, rng_a);
    Rng rng1(cfg.seed, 1);
    const std::vector<DataBatch> plain = make_stream(cfg, truth, rng1);

    SimConfig sorted_cfg = cfg;
    sorted_cfg.stream_bias = StreamBias::CovariateSorted;
    Rng rng2(cfg.seed, 1);
    const std::vector<DataBatch> sorted = make_stream(sorted_cfg, truth, rng2);

    REQUIRE(plain.size() == 20);
    REQUIRE(sorted.size() == 20);

    SUBCASE("sorting skews batch covariate means") {
        const double first = sorted.front().x().col(1).mean();
        const double last = sorted.back().x().col(1).mean();
        CHECK(first < last);
        CHECK(first < -1.0);
        CHECK(last > 1.0);
    }

    SUBCASE("the pooled sample is exactly preserved") {
        std::vector<double> a, b;
        for (const auto& batch : plain) {
            for (Eigen::Index i = 0; i < batch.size(); ++i) {
                a.push_back(batch.y(i) + 1000.0 * batch.x(i, 1) + 31.0 * batch.a(i));
            }
        }
        for (const auto& batch : sorted) {
            for (Eigen::Index i = 0; i < batch.size(); ++i) {
                b.push_back(batch.y(i) + 1000.0 * batch.x(i, 1) + 31.0 * batch.a(i));
            }
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }

    SUBCASE("sorted streams need a covariate") {
        SimConfig bad = sorted_cfg;
        bad.p_covariates = 0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("run_scenario smoke") {
    QuietWarnings quiet;
    SimConfig cfg;
    cfg.n_batches = 10;
    cfg.batch_size = 60;
    cfg.replications = 40;
    cfg.seed = 314;

    SUBCASE("zero replications produce an empty table") {
        SimConfig c0 = cfg;
        c0.replications = 0;
        CHECK(run_scenario(c0, {Family::GComp}).rows.empty());
    }

    const MetricsTable table = run_scenario(cfg, {Family::GComp, Family::Aiptw});
    REQUIRE(table.rows.size() == 4);  // two families x online/offline
    for (const MetricsRow& row : table.rows) {
        INFO(row.family << " " << row.mode);
        CHECK(row.replications == 40);
        CHECK(row.failures <= 2);
        CHECK(std::fabs(row.bias) < 0.15);
        CHECK(row.ese > 0.0);
        CHECK(row.ase > 0.0);
        CHECK(row.coverage > 0.8);
        CHECK(row.coverage <= 1.0);
        CHECK(std::fabs(row.ase / row.ese - 1.0) < 0.5);
    }

    SUBCASE("linear family: online and offline rows report the same bias") {
        const MetricsRow* on = nullptr;
        const MetricsRow* off = nullptr;
        for (const MetricsRow& r : table.rows) {
            if (r.family == "gcomp") (r.mode == "online" ? on : off) = &r;
        }
        REQUIRE(on != nullptr);
        REQUIRE(off != nullptr);
        CHECK(std::fabs(on->bias - off->bias) <= 1e-9);
        CHECK(std::fabs(on->ese - off->ese) <= 1e-9);
    }

    SUBCASE("statistical columns are reproducible bit for bit") {
        const MetricsTable again = run_scenario(cfg, {Family::GComp, Family::Aiptw});
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            CHECK(table.rows[i].bias == again.rows[i].bias);
            CHECK(table.rows[i].ase == again.rows[i].ase);
            CHECK(table.rows[i].ese == again.rows[i].ese);
            CHECK(table.rows[i].coverage == again.rows[i].coverage);
            CHECK(table.rows[i].failures == again.rows[i].failures);
        }
    }

    SUBCASE("csv and json render") {
        const std::string csv = metrics_to_csv(table);
        CHECK(csv.find("family,mode") == 0);
        CHECK(csv.find("gcomp,online") != std::string::npos);
        CHECK(metrics_to_json(table).find("\"rows\"") != std::string::npos);
    }
}

TEST_CASE("gcomp online equals the oracle through the equivalence runner") {
    QuietWarnings quiet;
    SimConfig cfg;
    cfg.n_batches = 12;
    cfg.batch_size = 40;
    cfg.replications = 10;
    cfg.seed = 2718;
    const EquivalenceResult res = run_equivalence(cfg, Family::GComp);
    CHECK(res.failures == 0);
    REQUIRE(res.gap.size() == 10);
    for (double g : res.gap) CHECK(g <= 1e-7);
    CHECK(res.fraction_within(0.1) == 1.0);
}

TEST_CASE("sequential experiment smoke") {
    QuietWarnings quiet;
    SimConfig cfg;
    cfg.n_batches = 5;
    cfg.batch_size = 200;
    cfg.replications = 60;
    cfg.seed = 13579;

    MonitorConfig mc;
    mc.total_analyses = 5;
    mc.alpha = 0.05;

    SUBCASE("grid must include the null point") {
        CHECK_THROWS_AS(run_sequential_experiment(cfg, mc, {0.1}, {Family::GComp}), ConfigError);
    }

    const SequentialResult res =
        run_sequential_experiment(cfg, mc, {0.0, 0.4}, {Family::GComp});
    REQUIRE(res.rate.size() == 1);
    REQUIRE(res.rate[0].size() == 2);
    CHECK(res.rate[0][0] <= 0.15);  // near the nominal level
    CHECK(res.rate[0][1] >= 0.85);  // strong signal: mu ~ 0.4/0.032
    CHECK(res.failures[0][0] == 0);

    const std::string csv = sequential_to_csv(res);
    CHECK(csv.find("family,delta,rejection_rate") == 0);
}

TEST_CASE("binary-outcome scenario smoke") {
    QuietWarnings quiet;
    SimConfig cfg;
    cfg.n_batches = 10;
    cfg.batch_size = 100;
    cfg.outcome = OutcomeType::Binary;
    cfg.replications = 25;
    cfg.seed = 515151;
    const MetricsTable table = run_scenario(cfg, {Family::GComp, Family::Aiptw});
    for (const MetricsRow& row : table.rows) {
        INFO(row.family << " " << row.mode);
        CHECK(row.failures <= 2);
        CHECK(row.coverage >= 0.8);
        CHECK(row.ase > 0.0);
        CHECK(std::fabs(row.bias) < 0.1);
    }
}

TEST_CASE("covariate-sorted streams: the online-oracle gap shrinks with N") {
    // Each batch is skewed, yet the online estimate tracks the pooled oracle
    // as evidence accrues; the absolute gap decays with the total sample.
    QuietWarnings quiet;
    auto median_gap = [](long n_batches, Family family) {
        SimConfig cfg;
        cfg.n_batches = n_batches;
        cfg.batch_size = 100;
        cfg.replications = 11;
        cfg.seed = 60606;
        cfg.stream_bias = StreamBias::CovariateSorted;
        cfg.fixed_truth = study_truth();
        EquivalenceResult res = run_equivalence(cfg, family);
        REQUIRE(res.failures == 0);
        std::vector<double> g = res.gap;
        std::sort(g.begin(), g.end());
        return g[g.size() / 2];
    };
    for (Family f : {Family::Iptw, Family::Aiptw}) {
        const double small_n = median_gap(25, f);
        const double large_n = median_gap(400, f);
        INFO(to_string(f) << ": " << small_n << " -> " << large_n);
        CHECK(large_n < small_n);
    }
}

TEST_CASE("trajectories") {
    QuietWarnings quiet;
    SimConfig cfg;
    cfg.n_batches = 8;
    cfg.batch_size = 50;
    cfg.seed = 24680;
    const Trajectory t = trajectory_run(cfg, Family::Aiptw, 0);
    REQUIRE(!t.n_total.empty());
    CHECK(t.n_total.back() == 400);
    CHECK(t.delta.size() == t.n_total.size());
    CHECK(t.se.size() == t.n_total.size());
    for (double se : t.se) CHECK(se > 0.0);
    CHECK(std::fabs(t.delta.back() - t.offline_delta) < 0.2);
    const std::string csv = trajectories_to_csv({t});
    CHECK(csv.find("family,n_total") == 0);
}
