#include "causalstream/sequential.hpp"

#include <algorithm>
#include <cmath>

#include "causalstream/normal.hpp"

namespace causalstream {

std::string to_string(Spending s) {
    return s == Spending::Pocock ? "pocock" : "obrien-fleming";
}

std::string to_string(Decision d) {
    switch (d) {
        case Decision::Continue: return "CONTINUE";
        case Decision::Reject: return "REJECT";
        case Decision::CompleteAccept: return "COMPLETE_ACCEPT";
    }
    return "?";
}

Spending spending_from_string(const std::string& s) {
    if (s == "pocock") return Spending::Pocock;
    if (s == "obf" || s == "obrien-fleming") return Spending::OBrienFleming;
    throw ConfigError("unknown spending function '" + s + "' (expected pocock|obf)");
}

Decision decision_from_string(const std::string& s) {
    if (s == "CONTINUE") return Decision::Continue;
    if (s == "REJECT") return Decision::Reject;
    if (s == "COMPLETE_ACCEPT") return Decision::CompleteAccept;
    throw ConfigError("unknown decision '" + s + "'");
}

void MonitorConfig::validate() const {
    if (total_analyses < 1) throw ConfigError("MonitorConfig: total_analyses must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("MonitorConfig: alpha must be in (0,1)");
    if (!std::isfinite(null_delta)) throw ConfigError("MonitorConfig: null_delta must be finite");
    if (!info_fractions.empty()) {
        if (static_cast<int>(info_fractions.size()) != total_analyses) {
            throw ConfigError("MonitorConfig: info_fractions must have one entry per analysis");
        }
        double prev = 0.0;
        for (double t : info_fractions) {
            if (!(t > prev)) throw ConfigError("MonitorConfig: info_fractions must be strictly increasing");
            prev = t;
        }
        if (std::fabs(info_fractions.back() - 1.0) > 1e-12) {
            throw ConfigError("MonitorConfig: final information fraction must be 1");
        }
    }
}

std::vector<double> MonitorConfig::fractions() const {
    if (!info_fractions.empty()) {
        std::vector<double> t = info_fractions;
        t.back() = 1.0;
        return t;
    }
    std::vector<double> t(static_cast<std::size_t>(total_analyses));
    for (int k = 0; k < total_analyses; ++k) {
        t[static_cast<std::size_t>(k)] = static_cast<double>(k + 1) / total_analyses;
    }
    return t;
}

double spending_at_fraction(Spending spending, double fraction, double alpha) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("spending_at_fraction: fraction must be in (0,1]");
    }
    if (fraction >= 1.0) return alpha;  // both families terminate at alpha exactly
    switch (spending) {
        case Spending::Pocock:
            return alpha * std::log1p((std::exp(1.0) - 1.0) * fraction);
        case Spending::OBrienFleming:
            return 2.0 * (1.0 - norm_cdf(norm_quantile(1.0 - alpha / 2.0) / std::sqrt(fraction)));
    }
    return alpha;
}

double spending_value(Spending spending, int t, int total_analyses, double alpha) {
    if (t < 1 || t > total_analyses) throw ConfigError("spending_value: need 1 <= t <= T");
    return spending_at_fraction(spending, static_cast<double>(t) / total_analyses, alpha);
}

namespace {

// Continuation-density grid for the Brownian-scale statistic W_k = Z_k *
// sqrt(t_k), restricted to the non-crossing region of looks 1..k. Simpson
// nodes, odd count.
constexpr int kGridNodes = 513;

struct StageGrid {
    std::vector<double> v;  // nodes
    std::vector<double> f;  // subdensity values
    double h = 0.0;         // node spacing

    double simpson_weight(int j) const {
        if (j == 0 || j == kGridNodes - 1) return h / 3.0;
        return (j % 2 == 1) ? 4.0 * h / 3.0 : 2.0 * h / 3.0;
    }
};

// f_k at w from the previous stage's grid through the increment kernel.
double convolve(const StageGrid& prev, double w, double sigma_inc) {
    double acc = 0.0;
    const double inv = 1.0 / sigma_inc;
    for (int j = 0; j < kGridNodes; ++j) {
        acc += prev.simpson_weight(j) * prev.f[static_cast<std::size_t>(j)] *
               norm_pdf((w - prev.v[static_cast<std::size_t>(j)]) * inv) * inv;
    }
    return acc;
}

// Mass of f_k on [-c, c] by Simpson over a fresh grid.
double continuation_mass(const StageGrid& prev, double sigma_inc, double c) {
    if (c <= 0.0) return 0.0;
    const double h = 2.0 * c / (kGridNodes - 1);
    double acc = 0.0;
    for (int j = 0; j < kGridNodes; ++j) {
        const double w = -c + h * j;
        const double fw = convolve(prev, w, sigma_inc);
        const double weight = (j == 0 || j == kGridNodes - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
        acc += weight * fw;
    }
    return acc * h / 3.0;
}

StageGrid build_grid(double c, double sd) {
    StageGrid g;
    g.v.resize(kGridNodes);
    g.f.resize(kGridNodes);
    g.h = 2.0 * c / (kGridNodes - 1);
    for (int j = 0; j < kGridNodes; ++j) {
        g.v[static_cast<std::size_t>(j)] = -c + g.h * j;
        g.f[static_cast<std::size_t>(j)] = norm_pdf(g.v[static_cast<std::size_t>(j)] / sd) / sd;
    }
    return g;
}

StageGrid advance_grid(const StageGrid& prev, double sigma_inc, double c) {
    StageGrid g;
    g.v.resize(kGridNodes);
    g.f.resize(kGridNodes);
    g.h = 2.0 * c / (kGridNodes - 1);
    for (int j = 0; j < kGridNodes; ++j) {
        g.v[static_cast<std::size_t>(j)] = -c + g.h * j;
        g.f[static_cast<std::size_t>(j)] = convolve(prev, g.v[static_cast<std::size_t>(j)], sigma_inc);
    }
    return g;
}

}  // namespace

std::vector<double> compute_boundaries(const MonitorConfig& config) {
    config.validate();
    const int T = config.total_analyses;
    const std::vector<double> t = config.fractions();

    std::vector<double> spent(static_cast<std::size_t>(T));
    double prev_alpha = 0.0;
    for (int k = 0; k < T; ++k) {
        spent[static_cast<std::size_t>(k)] =
            spending_at_fraction(config.spending, t[static_cast<std::size_t>(k)], config.alpha);
        if (spent[static_cast<std::size_t>(k)] + 1e-15 < prev_alpha) {
            throw ConfigError("compute_boundaries: spent alpha must be nondecreasing");
        }
        prev_alpha = spent[static_cast<std::size_t>(k)];
    }

    std::vector<double> z(static_cast<std::size_t>(T));
    // First look has no history: closed-form two-sided quantile.
    z[0] = norm_quantile(1.0 - spent[0] / 2.0);
    if (T == 1) return z;

    StageGrid grid = build_grid(z[0] * std::sqrt(t[0]), std::sqrt(t[0]));
    for (int k = 1; k < T; ++k) {
        const double tk = t[static_cast<std::size_t>(k)];
        const double sigma_inc = std::sqrt(tk - t[static_cast<std::size_t>(k - 1)]);
        const double target = 1.0 - spent[static_cast<std::size_t>(k)];  // survivor mass

        double lo = 0.0, hi = 10.0;
        double zk = 0.5 * (lo + hi);
        for (int it = 0; it < 200; ++it) {
            zk = 0.5 * (lo + hi);
            const double mass = continuation_mass(grid, sigma_inc, zk * std::sqrt(tk));
            if (std::fabs(mass - target) <= 1e-8 && it >= 20) break;
            if (mass < target) {
                lo = zk;
            } else {
                hi = zk;
            }
            if (hi - lo < 1e-12) break;
        }
        z[static_cast<std::size_t>(k)] = zk;
        if (k + 1 < T) grid = advance_grid(grid, sigma_inc, zk * std::sqrt(tk));
    }
    return z;
}

double wald_stat(const OnlineState& state, double null_delta) {
    const AteEstimate est = ate_estimate(state);
    if (!(est.se > 0.0)) {
        throw SingularityError("wald_stat: zero variance for the ATE estimate");
    }
    return (est.delta - null_delta) / est.se;
}

MonitorState make_monitor(const MonitorConfig& config) {
    MonitorState m;
    m.config = config;
    m.boundaries = compute_boundaries(config);
    return m;
}

MonitorState monitor_step(const MonitorState& monitor, const OnlineState& state) {
    if (monitor.decision != Decision::Continue) {
        throw ConfigError("monitor_step: monitor already terminated with decision " +
                          to_string(monitor.decision));
    }
    const int t = monitor.analyses_done();
    if (t >= monitor.config.total_analyses) {
        throw ConfigError("monitor_step: all planned analyses already performed");
    }
    MonitorState next = monitor;
    const double zstat = wald_stat(state, monitor.config.null_delta);
    next.z_history.push_back(zstat);
    if (std::fabs(zstat) >= next.boundaries[static_cast<std::size_t>(t)]) {
        next.decision = Decision::Reject;
    } else if (t + 1 == monitor.config.total_analyses) {
        next.decision = Decision::CompleteAccept;
    } else {
        next.decision = Decision::Continue;
    }
    return next;
}

}  // namespace causalstream
