// Named scenario presets: the standard cohorts the test batteries and the
// CLI's `simulate` command draw from.
#pragma once

#include <string>

#include "gsnm/simlab.hpp"

namespace gsnm {

// Sharp null: no effects, no hidden structure.
inline ScenarioSpec scenario_null(int n, int horizon, std::uint64_t seed) {
    ScenarioSpec s;
    s.kind = ScenarioKind::latent;
    s.n = n;
    s.horizon = horizon;
    s.seed = seed;
    s.beta_true = Eigen::VectorXd::Zero(1);
    s.psi_true = Eigen::VectorXd::Zero(1);
    s.reverse_gap = 0.0;
    s.xi_prob_u = s.xi_prob;
    s.p_zero_u = s.p_zero;
    s.gain_scale_u = 1.0;
    s.p_death = 0.4;
    return s;
}

// Measured confounding only (CO holds given L); constant blip, no event-time
// effect.
inline ScenarioSpec scenario_co(int n, int horizon, std::uint64_t seed, double beta = 2.0) {
    ScenarioSpec s = scenario_null(n, horizon, seed);
    s.beta_true[0] = beta;
    s.y_bh = 2.0;
    s.y_bx = 0.4;
    return s;
}

// Reverse causation by preclinical disease: U(m) = I(X_m <= m + delta)
// suppresses gain; exposure shortens the event time through psi*.
inline ScenarioSpec scenario_rc_cd(int n, int horizon, std::uint64_t seed, double beta = 2.0,
                                   double psi = 0.15, double delta = 6.0) {
    ScenarioSpec s;
    s.kind = ScenarioKind::latent;
    s.n = n;
    s.horizon = horizon;
    s.seed = seed;
    s.beta_true = Eigen::VectorXd::Constant(1, beta);
    s.psi_true = Eigen::VectorXd::Constant(1, psi);
    s.reverse_gap = delta;
    s.xi_prob = 0.45;
    s.xi_prob_u = 0.15;
    s.p_zero = 0.5;
    s.p_zero_u = 0.95;
    s.gain_scale_u = 0.25;
    s.p_death = 0.5;
    s.x_mu = 0.8;
    s.x_sigma = 1.2;
    s.y_bx = 0.6;
    s.y_bh = 1.5;
    s.y_sigma = 1.0;
    return s;
}

// RC+CD with administrative censoring at the horizon (roughly 30% censored at
// the default knobs).
inline ScenarioSpec scenario_censored(int n, int horizon, std::uint64_t seed, double beta = 2.0,
                                      double psi = 0.15, double delta = 6.0) {
    ScenarioSpec s = scenario_rc_cd(n, horizon, seed, beta, psi, delta);
    s.censor = true;
    s.censor_slack = 0.5 * horizon;
    s.x_mu = 0.25;
    s.x_sigma = 1.1;
    return s;
}

// Minimal latent period: the exposure effect on X lags by chi months, with
// reverse causation active underneath.
inline ScenarioSpec scenario_mlp(int n, int horizon, std::uint64_t seed, int chi = 9,
                                 double delta = 6.0, double psi = 0.25) {
    ScenarioSpec s = scenario_rc_cd(n, horizon, seed, 2.0, psi, delta);
    s.mlp_chi = chi;
    s.p_death = 1.0;  // keep the weight process simple: events truncate exposure
    s.y_bx = 0.6;
    return s;
}

// Binary Markov covariate, death-only events, psi* = 0: every comparator
// model (zero-probability, hazard, transition, outcome) is exactly
// specifiable, which is what the cross-estimator battery needs.
inline ScenarioSpec scenario_markov_co(int n, int horizon, std::uint64_t seed,
                                       double beta = 2.0) {
    ScenarioSpec s;
    s.kind = ScenarioKind::markov;
    s.n = n;
    s.horizon = horizon;
    s.seed = seed;
    s.beta_true = Eigen::VectorXd::Constant(1, beta);
    s.psi_true = Eigen::VectorXd::Zero(1);
    s.xi_prob = 0.3;
    s.gain_sigma = 0.4;
    s.y_const = 40.0;
    s.y_bx = 0.5;
    s.y_bl = 3.0;
    s.y_sigma = 1.0;
    return s;
}

// Single-period discrete exposure: the time-independent paradigm used by the
// distributional oracle and the non-identifiability demonstrations.
inline ScenarioSpec scenario_paradigmatic(int n, std::uint64_t seed, double psi = 0.5,
                                          double delta = 0.2) {
    ScenarioSpec s;
    s.kind = ScenarioKind::paradigmatic;
    s.n = n;
    s.horizon = 1;
    s.seed = seed;
    s.blip.family = BlipFamily::constant;
    s.beta_true = Eigen::VectorXd::Constant(1, 1.5);
    s.psi_true = Eigen::VectorXd::Constant(1, psi);
    s.reverse_gap = delta;
    s.levels = {0.0, 0.5, 1.0};
    s.level_probs = {0.4, 0.3, 0.3};
    s.level_probs_u = {0.92, 0.05, 0.03};
    s.x_mu = -0.3;
    s.x_sigma = 1.3;
    s.pd_x_lo = 0.02;
    s.pd_x_hi = 0.98;
    s.y_const = 10.0;
    s.y_bx = 4.0;
    s.y_bu = -1.0;
    s.y_sigma = 0.5;
    s.p_death = 0.0;
    return s;
}

// Paradigmatic scenario generated under the threshold blip of the
// non-identifiability demonstration: gamma = a (b0 I(x<=w) + b1 I(x>w)).
inline ScenarioSpec scenario_threshold_blip(int n, std::uint64_t seed, double window,
                                            double b0 = 3.0, double b1 = 1.0,
                                            double psi = 0.4, double delta = 0.2) {
    ScenarioSpec s = scenario_paradigmatic(n, seed, psi, delta);
    s.blip.family = BlipFamily::x_threshold;
    s.blip.threshold_window = window;
    s.beta_true = Eigen::VectorXd::Zero(2);
    s.beta_true << b0, b1;
    return s;
}

// Short-horizon discrete-exposure scenario generated under the optimal-regime
// structural models: a concave action effect (so an interior gain level is
// optimal) joined with a multiplicative event-time model. The blip is kept
// free of the event-time argument, which is what makes the rank-preserving
// optimal-regime world exactly self-consistent.
inline ScenarioSpec scenario_optreg(int n, std::uint64_t seed,
                                    std::vector<double> levels = {0.0, 0.5, 1.0},
                                    double b0 = 0.8, double b1 = 0.7, double psi = 0.3) {
    ScenarioSpec s;
    s.kind = ScenarioKind::optreg;
    s.n = n;
    s.horizon = 2;
    s.seed = seed;
    s.blip.family = BlipFamily::action_quadratic;
    s.blip.quad_use_x = false;
    s.beta_true = Eigen::VectorXd::Zero(2);
    s.beta_true << b0, b1;  // gamma = b0 a - b1 a^2
    s.psi_true = Eigen::VectorXd::Constant(1, psi);
    s.levels = std::move(levels);
    s.level_probs.assign(s.levels.size(), 1.0 / static_cast<double>(s.levels.size()));
    s.level_probs_u = s.level_probs;
    s.x_mu = 0.4;
    s.x_sigma = 1.0;
    s.y_const = 12.0;
    s.y_bx = 2.0;
    s.y_sigma = 0.5;
    s.p_death = 0.0;
    return s;
}

// CO cohort measured with BMI noise, for the coarsening sensitivity protocol.
inline ScenarioSpec scenario_measurement_error(int n, int horizon, std::uint64_t seed,
                                               double noise_sd = 0.35) {
    ScenarioSpec s = scenario_co(n, horizon, seed);
    s.bmi_noise_sd = noise_sd;
    return s;
}

inline ScenarioSpec scenario_by_name(const std::string& name, int n, int horizon,
                                     std::uint64_t seed) {
    if (name == "null") return scenario_null(n, horizon, seed);
    if (name == "co") return scenario_co(n, horizon, seed);
    if (name == "rc_cd") return scenario_rc_cd(n, horizon, seed);
    if (name == "censored") return scenario_censored(n, horizon, seed);
    if (name == "mlp") return scenario_mlp(n, horizon, seed);
    if (name == "markov_co") return scenario_markov_co(n, horizon, seed);
    if (name == "paradigmatic") return scenario_paradigmatic(n, seed);
    if (name == "threshold") return scenario_threshold_blip(n, seed, 0.3);
    if (name == "optreg") return scenario_optreg(n, seed);
    if (name == "measurement_error") return scenario_measurement_error(n, horizon, seed);
    throw ConfigError("unknown scenario preset: " + name);
}

}  // namespace gsnm
