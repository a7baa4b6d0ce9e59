// Optimal maximum-gain regimes: the per-(beta, psi) backward recursion over
// candidate counterfactual event-time shifts, concavity checking of the
// action effect, and small-scale joint estimation of (beta, psi).
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"
#include "gsnm/ctf.hpp"
#include "gsnm/gest.hpp"
#include "gsnm/stats.hpp"

namespace gsnm {

struct OptRegimeSpec {
    BlipSpec blip;        // concave-in-action family (action_quadratic)
    TimeRatioSpec ratio;
    std::vector<double> action_grid;  // sorted nonnegative levels, 0 first
    int history_lags = 8;             // exposure lags defining regression cells

    void check() const {
        if (action_grid.empty()) throw ConfigError("optimal regime: empty action grid");
        for (std::size_t k = 0; k < action_grid.size(); ++k) {
            if (action_grid[k] < 0.0)
                throw ConfigError("optimal regime: actions must be nonnegative");
            if (k > 0 && action_grid[k] <= action_grid[k - 1])
                throw ConfigError("optimal regime: action grid must be strictly increasing");
        }
    }
};

// ---------------------------------------------------------------------------
// candidate_x_shift
// ---------------------------------------------------------------------------

// X^{a(m), g_opt,m+1}(psi) from x_next = X^{g_opt,m+1}(psi): rewrites month
// m's exposure from the observed a_obs to a. The four-branch piecewise map
// composes through the baseline residual; the computed branch is validated
// against its conditions.
inline double candidate_x_shift(const TimeRatioSpec& ratio, const Eigen::VectorXd& psi,
                                const std::vector<double>& cov_row, int m, double a_obs,
                                double a, double x_next) {
    const double out = shift_exposure_month(ratio, psi, cov_row, m, a_obs, a, x_next);
    // branch validation: v = x_next - m and w = out - m must land on a
    // consistent side of the month boundary
    const double v = x_next - static_cast<double>(m);
    const double w = out - static_cast<double>(m);
    if (v > 0.0) {
        const double tol = 1e-9;
        const bool v_in = v < 1.0 + tol, v_out = v > 1.0 - tol;
        const bool w_in = w < 1.0 + tol, w_out = w > 1.0 - tol;
        if (!((v_in || v_out) && (w_in || w_out)) || !(w > 0.0) || !std::isfinite(out))
            throw EstimationError("candidate_x_shift: no branch applies at m=" +
                                  std::to_string(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Concavity check (the Additional Condition)
// ---------------------------------------------------------------------------

struct ConcavityReport {
    struct Violation {
        std::size_t subject;
        int month;
        double second_difference;
    };
    std::vector<Violation> violations;
    std::size_t checked = 0;
    bool pass() const { return violations.empty(); }
};

// For each sampled (history, x): gamma on the action grid must be everywhere
// zero or strictly concave (negative second differences).
inline ConcavityReport concavity_check(const OptRegimeSpec& spec, const Eigen::VectorXd& beta,
                                       const Cohort& cohort,
                                       const std::vector<std::vector<double>>& x_args,
                                       int stride = 1) {
    spec.check();
    ConcavityReport rep;
    const auto& grid = spec.action_grid;
    for (std::size_t i = 0; i < cohort.subjects.size(); i += static_cast<std::size_t>(stride)) {
        for (int m = 0; m < cohort.horizon; ++m) {
            const std::size_t mm = static_cast<std::size_t>(m);
            std::vector<double> g(grid.size());
            bool all_zero = true;
            for (std::size_t k = 0; k < grid.size(); ++k) {
                g[k] = blip_eval(spec.blip, m, grid[k],
                                 cohort.subjects[i].cov[mm], x_args[i][mm], beta);
                if (g[k] != 0.0) all_zero = false;
            }
            ++rep.checked;
            if (all_zero) continue;
            for (std::size_t k = 2; k < grid.size(); ++k) {
                // second difference on a possibly non-uniform grid
                const double d1 = (g[k - 1] - g[k - 2]) / (grid[k - 1] - grid[k - 2]);
                const double d2 = (g[k] - g[k - 1]) / (grid[k] - grid[k - 1]);
                if (d2 - d1 >= 0.0)
                    rep.violations.push_back({i, m, d2 - d1});
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Backward recursion
// ---------------------------------------------------------------------------

struct RecursionState {
    // per month m: regression-cell key -> fitted q-value per action
    std::vector<std::map<std::string, std::vector<double>>> q_values;
    std::vector<std::map<std::string, double>> g_star;
    std::vector<std::vector<double>> assigned;  // n x horizon: min(A(m), g*)
    std::vector<std::vector<double>> x_chain;   // n x (horizon+1): X^{g_opt,m}(psi)
    std::vector<std::vector<double>> x_zero;    // n x horizon: X^{0(m), g_opt,m+1}(psi)
    ConcavityReport concavity;
};

namespace detail {
inline std::string action_cell_key(const std::vector<double>& a, int m, int lags) {
    std::string key;
    const int lo = std::max(0, m - lags);
    for (int j = lo; j < m; ++j) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%.6g", a[static_cast<std::size_t>(j)]);
        key += buf;
        key += ',';
    }
    return key;
}
}  // namespace detail

// Backward pass m = K..0: per-history argmax over the action grid of the
// fitted conditional mean of gamma(a, X^{0(m), g_opt,m+1}(psi)); events
// already realized use the known X pointwise; the assigned gain is capped at
// the subject's observed A(m).
inline RecursionState optimal_regime_recursion(const Cohort& cohort,
                                               const std::vector<std::vector<double>>& a,
                                               const OptRegimeSpec& spec,
                                               const Eigen::VectorXd& beta,
                                               const Eigen::VectorXd& psi) {
    spec.check();
    const std::size_t n = cohort.subjects.size();
    const int h = cohort.horizon;
    for (const auto& s : cohort.subjects)
        if (!s.event_time)
            throw EstimationError("optimal regime recursion requires uncensored event times");

    RecursionState st;
    st.q_values.resize(static_cast<std::size_t>(h));
    st.g_star.resize(static_cast<std::size_t>(h));
    st.assigned.assign(n, std::vector<double>(static_cast<std::size_t>(h), 0.0));
    st.x_chain.assign(n, std::vector<double>(static_cast<std::size_t>(h) + 1, 0.0));
    st.x_zero.assign(n, std::vector<double>(static_cast<std::size_t>(h), 0.0));
    for (std::size_t i = 0; i < n; ++i)
        st.x_chain[i][static_cast<std::size_t>(h)] = *cohort.subjects[i].event_time;

    const auto& grid = spec.action_grid;
    for (int m = h - 1; m >= 0; --m) {
        const std::size_t mm = static_cast<std::size_t>(m);
        std::vector<double> x0m(n);
        for (std::size_t i = 0; i < n; ++i) {
            x0m[i] = candidate_x_shift(spec.ratio, psi, cohort.subjects[i].cov[mm], m,
                                       a[i][mm], 0.0, st.x_chain[i][mm + 1]);
            st.x_zero[i][mm] = x0m[i];
        }

        std::map<std::string, std::vector<double>> sums;
        std::map<std::string, double> counts;
        for (std::size_t i = 0; i < n; ++i) {
            if (*cohort.subjects[i].event_time <= static_cast<double>(m)) continue;
            const std::string key = detail::action_cell_key(a[i], m, spec.history_lags);
            auto& acc = sums[key];
            if (acc.empty()) acc.assign(grid.size(), 0.0);
            for (std::size_t k = 0; k < grid.size(); ++k)
                acc[k] += blip_eval(spec.blip, m, grid[k], cohort.subjects[i].cov[mm],
                                    x0m[i], beta);
            counts[key] += 1.0;
        }
        for (auto& [key, acc] : sums) {
            std::vector<double> q(acc.size());
            for (std::size_t k = 0; k < acc.size(); ++k) q[k] = acc[k] / counts[key];
            double gs = grid[0];
            double best = q[0];
            for (std::size_t k = 1; k < q.size(); ++k)
                if (q[k] > best + 1e-12) {  // ties break to the smallest gain
                    best = q[k];
                    gs = grid[k];
                }
            st.q_values[mm][key] = std::move(q);
            st.g_star[mm][key] = gs;
        }

        for (std::size_t i = 0; i < n; ++i) {
            const Subject& s = cohort.subjects[i];
            double gs;
            if (*s.event_time <= static_cast<double>(m)) {
                // X <= m: the expectation is degenerate; use the pointwise value
                double best = -kInf;
                gs = grid[0];
                for (double act : grid) {
                    const double v = blip_eval(spec.blip, m, act, s.cov[mm], *s.event_time, beta);
                    if (v > best + 1e-12) {
                        best = v;
                        gs = act;
                    }
                }
            } else {
                const std::string key = detail::action_cell_key(a[i], m, spec.history_lags);
                auto it = st.g_star[mm].find(key);
                if (it == st.g_star[mm].end())
                    throw EstimationError("optimal regime: regression cell unfit at month " +
                                          std::to_string(m));
                gs = it->second;
            }
            st.assigned[i][mm] = std::min(a[i][mm], gs);
            st.x_chain[i][mm] = candidate_x_shift(spec.ratio, psi, s.cov[mm], m, a[i][mm],
                                                  st.assigned[i][mm], st.x_chain[i][mm + 1]);
        }
    }

    st.concavity = concavity_check(spec, beta, cohort, st.x_chain, 1);
    if (!st.concavity.pass())
        throw EstimationError("optimal regime: action effect is not concave on the grid");
    return st;
}

// ---------------------------------------------------------------------------
// Joint estimation of (beta, psi) under the optimal-regime models
// ---------------------------------------------------------------------------

struct JointFitConfig {
    std::vector<int> beta_coords;  // free beta coordinates scanned on beta_grid
    GridSpec beta_grid{0.0, 2.0, 0.1};
    GridSpec psi_grid{0.0, 0.6, 0.05};
    Eigen::VectorXd beta_template;  // fixed values for the other coordinates
    double zeta = 0.0;
    GEstConfig gest;  // treatment model, variance mode, alpha level
};

struct JointFitResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd psi;
    double ey0_opt = kNaN;
    double statistic = kNaN;  // combined beta+psi score statistic at the optimum
    double p_value = kNaN;
    bool converged = false;
    RecursionState state;

    struct LandscapePoint {
        Eigen::VectorXd beta;
        double psi;
        double stat_beta;
        double stat_psi;
    };
    std::vector<LandscapePoint> landscape;  // dumped when no joint zero exists
};

// Transformed utility whose value at the truth equals the counterfactual
// Y^{0(m), g_opt,m+1}: removes the month-m blip and swaps every later
// observed blip for its regime-assigned counterpart, all evaluated at the
// zero-action candidate times. Unlike the raw chain quantities, this is
// independent of A(m) given history at the true parameters, which is what
// the score test needs.
inline double y_zero_candidate(const OptRegimeSpec& spec, const Eigen::VectorXd& beta,
                               const Subject& s, const std::vector<double>& a_row,
                               const RecursionState& st, std::size_t i, int m, int horizon) {
    double y = s.utility;
    for (int k = m; k < horizon; ++k) {
        const std::size_t kk = static_cast<std::size_t>(k);
        const double x0 = st.x_zero[i][kk];
        y -= blip_eval(spec.blip, k, a_row[kk], s.cov[kk], x0, beta);
        if (k > m) y += blip_eval(spec.blip, k, st.assigned[i][kk], s.cov[kk], x0, beta);
    }
    return y;
}

// Grid search for (beta, psi) making both restricted score tests zero. The
// scoring covariates are built from the fixed-action-zero candidates
// X^{0(m), g_opt,m+1}(psi) and the matching utility transform: these are the
// quantities the optimal-regime comparability assumption makes independent of
// A(m), whereas the min-capped chain itself is a function of A(m). Both tests
// are restricted to candidate times > m + zeta and Xi(m) = 1.
inline JointFitResult joint_optimal_fit(const Cohort& cohort, const OptRegimeSpec& spec,
                                        const JointFitConfig& cfg) {
    if (cfg.beta_coords.empty() || cfg.beta_coords.size() > 2)
        throw ConfigError("joint fit: scan one or two beta coordinates");
    if (cfg.beta_template.size() != spec.blip.beta_dim())
        throw ConfigError("joint fit: beta template dimension mismatch");
    if (spec.ratio.psi_dim() != 1)
        throw ConfigError("joint fit: a scalar psi grid is required");

    GEstConfig gcfg = cfg.gest;
    gcfg.zeta = cfg.zeta;
    GEstEngine engine(cohort, spec.blip, spec.ratio, gcfg);
    const auto& a = engine.exposure();
    const std::size_t n = cohort.subjects.size();

    JointFitResult best;
    best.statistic = kInf;
    const int npb = cfg.beta_grid.points();
    const int npp = cfg.psi_grid.points();
    const int npb2 = cfg.beta_coords.size() == 2 ? npb : 1;

    for (int kb = 0; kb < npb; ++kb) {
        for (int kb2 = 0; kb2 < npb2; ++kb2) {
            Eigen::VectorXd beta = cfg.beta_template;
            beta[cfg.beta_coords[0]] = cfg.beta_grid.at(kb);
            if (cfg.beta_coords.size() == 2) beta[cfg.beta_coords[1]] = cfg.beta_grid.at(kb2);
            for (int kp = 0; kp < npp; ++kp) {
                Eigen::VectorXd psi(1);
                psi << cfg.psi_grid.at(kp);
                RecursionState st = optimal_regime_recursion(cohort, a, spec, beta, psi);

                GEstEngine::XVals xv;
                xv.censoring = false;
                xv.k_m.assign(static_cast<std::size_t>(cohort.horizon), kInf);
                xv.val = st.x_zero;

                ScoreResult sp = engine.score_psi_at(xv, Restriction::zeta);
                ScoreResult sb = engine.score_with(
                    spec.blip.beta_dim(), Restriction::zeta, &xv,
                    [&](std::size_t i, int m, Eigen::VectorXd& q) {
                        const double ym = y_zero_candidate(spec, beta, cohort.subjects[i],
                                                           a[i], st, i, m, cohort.horizon);
                        q = engine.beta_instrument(
                            i, m, xv.val[i][static_cast<std::size_t>(m)]);
                        q *= ym;
                    });
                const double stat = sp.statistic + sb.statistic;
                best.landscape.push_back({beta, psi[0], sb.statistic, sp.statistic});
                if (stat < best.statistic) {
                    best.statistic = stat;
                    best.beta = beta;
                    best.psi = psi;
                    best.state = std::move(st);
                    best.p_value = chi2_sf(stat, sp.dof + sb.dof);
                }
            }
        }
    }
    best.converged = best.p_value > gcfg.alpha_level;
    if (best.converged) best.landscape.clear();

    // n^{-1} sum Y0^{g_opt}: the transform at m = 0 evaluated at the optimum
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        acc += y_zero_candidate(spec, best.beta, cohort.subjects[i], a[i], best.state, i, 0,
                                cohort.horizon) +
               blip_eval(spec.blip, 0, best.state.assigned[i][0], cohort.subjects[i].cov[0],
                         best.state.x_zero[i][0], best.beta);
    best.ey0_opt = acc / static_cast<double>(n);
    return best;
}

}  // namespace gsnm
