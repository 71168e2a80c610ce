#pragma once

#include <string>
#include <vector>

#include "causalstream/engine.hpp"

namespace causalstream {

enum class Spending { Pocock, OBrienFleming };
enum class Decision { Continue, Reject, CompleteAccept };

std::string to_string(Spending s);
std::string to_string(Decision d);
Spending spending_from_string(const std::string& s);
Decision decision_from_string(const std::string& s);

/// Plan for a group-sequential two-sided test of H0: delta = null_delta over
/// at most total_analyses interim looks.
struct MonitorConfig {
    int total_analyses = 1;
    double alpha = 0.05;
    Spending spending = Spending::Pocock;
    double null_delta = 0.0;
    /// Information fractions t_k in (0,1], strictly increasing, last = 1.
    /// Empty means equally spaced k/T.
    std::vector<double> info_fractions;

    void validate() const;
    std::vector<double> fractions() const;
};

/// Cumulative alpha spent through analysis t of T. Pocock-type:
/// alpha*log(1+(e-1)t/T); O'Brien-Fleming-type: 2*(1-Phi(z_{1-a/2}/sqrt(t/T))).
/// Both spend exactly alpha at t = T.
double spending_value(Spending spending, int t, int total_analyses, double alpha);

/// Same, at an arbitrary information fraction in (0,1].
double spending_at_fraction(Spending spending, double fraction, double alpha);

/// Two-sided boundaries z(1..T) such that the cumulative crossing probability
/// under the null equals the spent alpha at every look, assuming the
/// canonical joint law cov(Z_j, Z_k) = sqrt(t_j/t_k). Computed by recursive
/// numerical integration of the continuation density with bisection per look;
/// deterministic for a given config.
std::vector<double> compute_boundaries(const MonitorConfig& config);

/// (delta - null_delta) / se from the current engine state.
double wald_stat(const OnlineState& state, double null_delta);

struct MonitorState {
    MonitorConfig config;
    std::vector<double> boundaries;
    std::vector<double> z_history;
    Decision decision = Decision::Continue;

    int analyses_done() const { return static_cast<int>(z_history.size()); }
};

/// Computes boundaries up front and starts at analysis 0.
MonitorState make_monitor(const MonitorConfig& config);

/// Runs one interim analysis against the engine state: appends the Wald
/// statistic and decides REJECT / CONTINUE / COMPLETE_ACCEPT. Stepping a
/// terminated monitor is an error.
MonitorState monitor_step(const MonitorState& monitor, const OnlineState& state);

}  // namespace causalstream
