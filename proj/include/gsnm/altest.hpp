// Alternative estimators: IPTW means and survival curves, the Monte Carlo
// g-formula, lagged views under a minimal latent period, and the
// intractable-subgroup target E[Y0^T].
//
// Weight products are accumulated in log space; ratio (Hajek) estimates are
// invariant to rescaling the weights.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"
#include "gsnm/regimes.hpp"
#include "gsnm/rng.hpp"
#include "gsnm/stats.hpp"
#include "gsnm/threads.hpp"

namespace gsnm {

// ---------------------------------------------------------------------------
// Zero-probability model: pr(A_Delta^g(m) = 0 | history, eligibility)
// ---------------------------------------------------------------------------

struct ZeroProbModelSpec {
    std::vector<int> cov_indices;  // L(m) features
    bool include_month = false;
    bool event_state = false;      // adds I(X <= m)
    int lag = 0;                   // exposure/covariates taken at m - lag

    int dim() const {
        return 1 + static_cast<int>(cov_indices.size()) + (include_month ? 1 : 0) +
               (event_state ? 1 : 0);
    }
};

struct FittedZeroProb {
    ZeroProbModelSpec spec;
    Eigen::VectorXd coef;
    std::size_t n_rows = 0;
    bool vacuous = false;  // no eligible person-months anywhere: weights are 1
};

namespace detail {

// Feature row for month m; covariates read at m - lag, the event state at the
// original timing m (the asymmetric substitution of the lag transform).
inline Eigen::VectorXd zero_prob_row(const ZeroProbModelSpec& spec, const Subject& s, int m) {
    Eigen::VectorXd w(spec.dim());
    Eigen::Index at = 0;
    w[at++] = 1.0;
    const int src = m - spec.lag;
    for (int idx : spec.cov_indices)
        w[at++] = s.cov[static_cast<std::size_t>(src)].at(static_cast<std::size_t>(idx));
    if (spec.include_month) w[at++] = static_cast<double>(m);
    if (spec.event_state)
        w[at++] = (s.event_time && *s.event_time <= static_cast<double>(m)) ? 1.0 : 0.0;
    return w;
}

}  // namespace detail

// Pooled logistic fit of I(A(m - lag) = 0) over person-months with
// Xi(m - lag) = 1.
inline FittedZeroProb fit_zero_prob(const Cohort& cohort,
                                    const std::vector<std::vector<double>>& a,
                                    const std::vector<std::vector<unsigned char>>& xi,
                                    const ZeroProbModelSpec& spec) {
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> ys;
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        for (int m = spec.lag; m < cohort.horizon; ++m) {
            const int src = m - spec.lag;
            if (!xi[i][static_cast<std::size_t>(src)]) continue;
            rows.push_back(detail::zero_prob_row(spec, cohort.subjects[i], m));
            ys.push_back(a[i][static_cast<std::size_t>(src)] == 0.0 ? 1.0 : 0.0);
        }
    }
    if (rows.empty()) {
        // the regime never binds: every weight factor is an empty product
        FittedZeroProb out;
        out.spec = spec;
        out.vacuous = true;
        return out;
    }
    if (rows.size() < static_cast<std::size_t>(spec.dim()))
        throw EstimationError("zero-probability model: not enough eligible person-months");
    Eigen::MatrixXd x(rows.size(), spec.dim());
    Eigen::VectorXd y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = rows[r];
        y[static_cast<Eigen::Index>(r)] = ys[r];
    }
    auto fit = logistic_fit(x, y);
    FittedZeroProb out;
    out.spec = spec;
    out.coef = fit.coef;
    out.n_rows = rows.size();
    return out;
}

// ---------------------------------------------------------------------------
// IPTW estimators
// ---------------------------------------------------------------------------

struct IptwResult {
    double estimate = kNaN;
    double se = kNaN;              // large-sample standard error
    std::size_t n_consistent = 0;
    std::vector<std::string> warnings;
};

// Log-weight through month `upto` (inclusive): sum over eligible months of
// -ln pr(A=0 | .), exponent active only where Xi = 1.
inline double log_weight_through(const FittedZeroProb& fit, const Subject& s,
                                 const std::vector<double>&,
                                 const std::vector<unsigned char>& xi, int upto) {
    double lw = 0.0;
    if (fit.vacuous) return lw;
    for (int m = fit.spec.lag; m <= upto; ++m) {
        const int src = m - fit.spec.lag;
        if (!xi[static_cast<std::size_t>(src)]) continue;
        const double p = logistic_prob(fit.coef, detail::zero_prob_row(fit.spec, s, m));
        lw -= std::log(p);
    }
    return lw;
}

// Ratio-form IPTW estimate of E[Y0^g]: consistent subjects (residual exposure
// identically zero) weighted by the inverse probability of that consistency.
inline IptwResult iptw_mean_y0(const Cohort& cohort,
                               const std::vector<std::vector<double>>& a,
                               const std::vector<std::vector<unsigned char>>& xi,
                               const FittedZeroProb& fit, bool ratio_form = true) {
    IptwResult res;
    const std::size_t n = cohort.subjects.size();
    const int last = cohort.horizon - 1;
    std::vector<double> terms(n, 0.0), wts(n, 0.0);
    std::size_t n_cons = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int hi = last - fit.spec.lag;  // consistency over the lagged window
        bool consistent = true;
        for (int j = 0; j <= hi; ++j)
            if (a[i][static_cast<std::size_t>(j)] != 0.0) consistent = false;
        if (!consistent) continue;
        ++n_cons;
        const double lw =
            log_weight_through(fit, cohort.subjects[i], a[i], xi[i], last);
        const double w = std::exp(lw);
        terms[i] = w * cohort.subjects[i].utility;
        wts[i] = w;
    }
    res.n_consistent = n_cons;
    if (n_cons == 0)
        throw EstimationError(
            "iptw: no subject is consistent with the regime; estimate undefined");
    double sw = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sw += wts[i];
        sy += terms[i];
    }
    if (ratio_form) {
        res.estimate = sy / sw;
        // linearized variance of the ratio
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double inf = (terms[i] - res.estimate * wts[i]) / (sw / static_cast<double>(n));
            acc += inf * inf;
        }
        res.se = std::sqrt(acc) / static_cast<double>(n);
    } else {
        res.estimate = sy / static_cast<double>(n);
        std::vector<double> t2(terms);
        res.se = mc_se(t2);
    }
    if (static_cast<double>(n_cons) / static_cast<double>(n) < 0.01)
        res.warnings.push_back("iptw: fewer than 1% of subjects are regime-consistent");
    return res;
}

struct SurvivalPoint {
    double u = 0.0;
    double s = 0.0;
    double se = 0.0;
};

// S_{X0^g}(u) = E[ I{X>u} I{A_Delta^g consistent through u} W(u) ].
inline std::vector<SurvivalPoint> iptw_survival(const Cohort& cohort,
                                                const std::vector<std::vector<double>>& a,
                                                const std::vector<std::vector<unsigned char>>& xi,
                                                const FittedZeroProb& fit,
                                                const std::vector<double>& u_grid,
                                                bool ratio_form = false) {
    std::vector<SurvivalPoint> curve;
    const std::size_t n = cohort.subjects.size();
    for (double u : u_grid) {
        const int upto = std::min(cohort.horizon - 1,
                                  static_cast<int>(std::floor(u)));
        std::vector<double> term(n, 0.0), wt(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const Subject& s = cohort.subjects[i];
            bool consistent = true;
            for (int m = fit.spec.lag; m <= upto; ++m) {
                const int src = m - fit.spec.lag;
                if (a[i][static_cast<std::size_t>(src)] != 0.0) consistent = false;
            }
            if (!consistent) continue;
            const double w =
                std::exp(log_weight_through(fit, s, a[i], xi[i], upto));
            wt[i] = w;
            const bool surv = !s.event_time || *s.event_time > u;
            if (surv) term[i] = w;
        }
        SurvivalPoint pt;
        pt.u = u;
        if (ratio_form) {
            double sw = 0.0, st = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sw += wt[i];
                st += term[i];
            }
            pt.s = st / sw;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double inf = (term[i] - pt.s * wt[i]) / (sw / static_cast<double>(n));
                acc += inf * inf;
            }
            pt.se = std::sqrt(acc) / static_cast<double>(n);
        } else {
            pt.s = mean(term);
            pt.se = mc_se(term);
        }
        curve.push_back(pt);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Lagged views (minimal latent period)
// ---------------------------------------------------------------------------

// L_dagger(t) = L(t - chi) with an empty shifted history before chi; the
// event columns keep their original timing.
inline Cohort mlp_lag_views(const Cohort& c, int chi) {
    if (chi < 0) throw ConfigError("mlp_lag_views: chi must be nonnegative");
    if (chi == 0) return c;
    Cohort out = c;
    for (auto& s : out.subjects) {
        for (int t = c.horizon; t >= 0; --t) {
            const std::size_t tt = static_cast<std::size_t>(t);
            if (t >= chi) {
                s.cov[tt] = s.cov[static_cast<std::size_t>(t - chi)];
                s.bmi[tt] = s.bmi[static_cast<std::size_t>(t - chi)];
            } else {
                std::fill(s.cov[tt].begin(), s.cov[tt].end(), 0.0);
                s.bmi[tt] = s.bmi[0];
            }
        }
    }
    return out;
}

// A_dagger(t) = A(t - chi), zero (vacuously consistent) before chi.
inline std::vector<std::vector<double>> lag_exposure(
    const std::vector<std::vector<double>>& a, int chi) {
    std::vector<std::vector<double>> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i].assign(a[i].size(), 0.0);
        for (std::size_t t = static_cast<std::size_t>(chi); t < a[i].size(); ++t)
            out[i][t] = a[i][t - static_cast<std::size_t>(chi)];
    }
    return out;
}

inline std::vector<std::vector<unsigned char>> lag_eligibility(
    const std::vector<std::vector<unsigned char>>& xi, int chi) {
    std::vector<std::vector<unsigned char>> out(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        out[i].assign(xi[i].size(), 0);
        for (std::size_t t = static_cast<std::size_t>(chi); t < xi[i].size(); ++t)
            out[i][t] = xi[i][t - static_cast<std::size_t>(chi)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// E[Y0^T]: IPTW for the intervention that only binds outside intractably
// confounded subgroups, identified through the chi-lag transform.
// ---------------------------------------------------------------------------

inline IptwResult iptw_intercal(const Cohort& cohort, const SubgroupMask& mask, int chi,
                                ZeroProbModelSpec spec, bool ratio_form = true) {
    auto masked = mask_intractable(cohort, mask);
    std::vector<std::vector<double>> a(masked.size());
    std::vector<std::vector<unsigned char>> xi(masked.size());
    for (std::size_t i = 0; i < masked.size(); ++i) {
        a[i] = std::move(masked[i].a);
        xi[i] = std::move(masked[i].xi);
    }
    spec.lag = chi;
    auto fit = fit_zero_prob(cohort, a, xi, spec);
    return iptw_mean_y0(cohort, a, xi, fit, ratio_form);
}

// ---------------------------------------------------------------------------
// Monte Carlo g-formula
// ---------------------------------------------------------------------------

struct GFormulaSpec {
    int cov_index = 0;       // the discretized covariate
    int max_levels = 12;     // distinct recorded values allowed
    bool hazard_by_month = false;
    bool outcome_min_x = true;  // outcome feature min(X, horizon)
    bool outcome_l0 = true;     // outcome features: baseline level dummies
    int draws = 20000;
    std::uint64_t seed = 1;
    int threads = 1;
};

// Hazard, covariate-transition, baseline and outcome models fitted on the
// zero-residual (regime-consistent) exposure paths, per the g-formula's
// conditioning.
struct GFormulaFit {
    GFormulaSpec spec;
    std::vector<double> levels;                 // recoded covariate levels
    Eigen::VectorXd hazard_coef;                // logistic on (1, level dummies[, m])
    std::vector<std::vector<double>> trans;     // rows: from-level -> to-level probs
    std::vector<double> baseline;               // P(L(0) = level)
    Eigen::VectorXd outcome_coef;               // (1 [, min(x,h)] [, level dummies])
    int horizon = 0;
    std::size_t extrapolation_warnings = 0;

    int level_of(double v) const {
        for (std::size_t k = 0; k < levels.size(); ++k)
            if (std::fabs(levels[k] - v) < 1e-9) return static_cast<int>(k);
        return -1;
    }

    double hazard(int level, int m) const {
        Eigen::VectorXd row(hazard_dim());
        Eigen::Index at = 0;
        row[at++] = 1.0;
        for (std::size_t k = 1; k < levels.size(); ++k)
            row[at++] = level == static_cast<int>(k) ? 1.0 : 0.0;
        if (spec.hazard_by_month) row[at++] = static_cast<double>(m);
        return logistic_prob(hazard_coef, row);
    }

    int hazard_dim() const {
        return 1 + static_cast<int>(levels.size()) - 1 + (spec.hazard_by_month ? 1 : 0);
    }

    double outcome(double min_x, int level0) const {
        Eigen::VectorXd row(outcome_dim());
        Eigen::Index at = 0;
        row[at++] = 1.0;
        if (spec.outcome_min_x) row[at++] = min_x;
        if (spec.outcome_l0)
            for (std::size_t k = 1; k < levels.size(); ++k)
                row[at++] = level0 == static_cast<int>(k) ? 1.0 : 0.0;
        return outcome_coef.dot(row);
    }

    int outcome_dim() const {
        return 1 + (spec.outcome_min_x ? 1 : 0) +
               (spec.outcome_l0 ? static_cast<int>(levels.size()) - 1 : 0);
    }
};

inline GFormulaFit gformula_fit(const Cohort& cohort,
                                const std::vector<std::vector<double>>& a,
                                const GFormulaSpec& spec) {
    GFormulaFit fit;
    fit.spec = spec;
    fit.horizon = cohort.horizon;

    // recode the covariate into discrete levels
    for (const auto& s : cohort.subjects)
        for (int m = 0; m <= cohort.horizon; ++m) {
            if (!s.alive[static_cast<std::size_t>(m)]) continue;
            const double v = s.cov[static_cast<std::size_t>(m)].at(
                static_cast<std::size_t>(spec.cov_index));
            if (fit.level_of(v) < 0) fit.levels.push_back(v);
        }
    std::sort(fit.levels.begin(), fit.levels.end());
    if (static_cast<int>(fit.levels.size()) > spec.max_levels)
        throw ConfigError("g-formula: covariate has too many distinct levels; declare bins");
    const std::size_t nl = fit.levels.size();

    // consistency prefix: A residual zero through m
    auto consistent_through = [&](std::size_t i, int m) {
        for (int j = 0; j <= m; ++j)
            if (a[i][static_cast<std::size_t>(j)] != 0.0) return false;
        return true;
    };

    // hazard rows over at-risk, consistent person-months
    std::vector<Eigen::VectorXd> hrows;
    std::vector<double> hy;
    // transition counts and baseline
    std::vector<std::vector<double>> tc(nl, std::vector<double>(nl, 0.0));
    fit.baseline.assign(nl, 0.0);
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        const Subject& s = cohort.subjects[i];
        fit.baseline[static_cast<std::size_t>(fit.level_of(
            s.cov[0].at(static_cast<std::size_t>(spec.cov_index))))] += 1.0;
        for (int m = 0; m < cohort.horizon; ++m) {
            const std::size_t mm = static_cast<std::size_t>(m);
            if (!s.alive[mm]) break;
            const bool at_risk = !s.event_time || *s.event_time > m;
            if (!at_risk) break;
            if (!consistent_through(i, m)) break;
            const int lev = fit.level_of(s.cov[mm].at(static_cast<std::size_t>(spec.cov_index)));
            Eigen::VectorXd row(1 + static_cast<Eigen::Index>(nl) - 1 +
                                (spec.hazard_by_month ? 1 : 0));
            Eigen::Index at = 0;
            row[at++] = 1.0;
            for (std::size_t k = 1; k < nl; ++k) row[at++] = lev == static_cast<int>(k) ? 1.0 : 0.0;
            if (spec.hazard_by_month) row[at++] = static_cast<double>(m);
            hrows.push_back(row);
            hy.push_back(s.event_time && *s.event_time <= m + 1 ? 1.0 : 0.0);
            // transition (m -> m+1) among survivors of month m
            if (m + 1 <= cohort.horizon && s.alive[mm + 1] &&
                (!s.event_time || *s.event_time > m + 1)) {
                const int nxt = fit.level_of(
                    s.cov[mm + 1].at(static_cast<std::size_t>(spec.cov_index)));
                tc[static_cast<std::size_t>(lev)][static_cast<std::size_t>(nxt)] += 1.0;
            }
        }
    }
    if (hrows.size() < nl + 1)
        throw EstimationError("g-formula: not enough consistent person-months");
    Eigen::MatrixXd hx(hrows.size(), hrows[0].size());
    Eigen::VectorXd hyv(hrows.size());
    for (std::size_t r = 0; r < hrows.size(); ++r) {
        hx.row(static_cast<Eigen::Index>(r)) = hrows[r];
        hyv[static_cast<Eigen::Index>(r)] = hy[r];
    }
    fit.hazard_coef = logistic_fit(hx, hyv).coef;

    const double bsum = std::accumulate(fit.baseline.begin(), fit.baseline.end(), 0.0);
    for (auto& b : fit.baseline) b /= bsum;
    fit.trans.assign(nl, std::vector<double>(nl, 0.0));
    for (std::size_t k = 0; k < nl; ++k) {
        const double rs = std::accumulate(tc[k].begin(), tc[k].end(), 0.0);
        if (rs == 0.0) {
            fit.trans[k] = fit.baseline;  // unseen stratum: marginal fallback
            ++fit.extrapolation_warnings;
        } else {
            for (std::size_t j = 0; j < nl; ++j) fit.trans[k][j] = tc[k][j] / rs;
        }
    }

    // outcome regression over fully consistent subjects
    std::vector<Eigen::VectorXd> orows;
    std::vector<double> oy;
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        if (!consistent_through(i, cohort.horizon - 1)) continue;
        const Subject& s = cohort.subjects[i];
        Eigen::VectorXd row(fit.outcome_dim());
        Eigen::Index at = 0;
        row[at++] = 1.0;
        if (spec.outcome_min_x)
            row[at++] = s.event_time ? std::min(*s.event_time, static_cast<double>(cohort.horizon))
                                     : static_cast<double>(cohort.horizon);
        if (spec.outcome_l0) {
            const int l0 = fit.level_of(s.cov[0].at(static_cast<std::size_t>(spec.cov_index)));
            for (std::size_t k = 1; k < nl; ++k) row[at++] = l0 == static_cast<int>(k) ? 1.0 : 0.0;
        }
        orows.push_back(row);
        oy.push_back(s.utility);
    }
    if (orows.size() < static_cast<std::size_t>(fit.outcome_dim()))
        throw EstimationError("g-formula: not enough consistent subjects for the outcome model");
    Eigen::MatrixXd ox(orows.size(), fit.outcome_dim());
    Eigen::VectorXd oyv(orows.size());
    for (std::size_t r = 0; r < orows.size(); ++r) {
        ox.row(static_cast<Eigen::Index>(r)) = orows[r];
        oyv[static_cast<Eigen::Index>(r)] = oy[r];
    }
    fit.outcome_coef = ols(ox, oyv).coef;
    return fit;
}

struct GFormulaResult {
    std::vector<SurvivalPoint> survival;
    double mean_y0 = kNaN;
    double mean_y0_se = kNaN;
    std::size_t extrapolation_warnings = 0;
};

// Forward Monte Carlo through the fitted transition and hazard models with
// the residual exposure forced to zero. Each draw samples a full covariate
// path and accumulates the survival product exp-style, so the estimator is
// the plain product-limit form of the g-formula; the event leg only feeds the
// outcome model. Draw d uses the stream (seed, d, month, purpose), making
// results reproducible for a fixed draw count regardless of threads.
inline GFormulaResult gformula_run(const GFormulaFit& fit, const std::vector<double>& u_grid) {
    GFormulaResult res;
    res.extrapolation_warnings = fit.extrapolation_warnings;
    const int draws = fit.spec.draws;
    const int h = fit.horizon;
    std::vector<std::vector<double>> surv(u_grid.size(),
                                          std::vector<double>(static_cast<std::size_t>(draws), 1.0));
    std::vector<double> ydraw(static_cast<std::size_t>(draws), 0.0);

    parallel_for(static_cast<std::size_t>(draws), fit.spec.threads, [&](std::size_t d) {
        CounterRng rng_l0(fit.spec.seed, d, 0, 101);
        int level = static_cast<int>(rng_l0.categorical(fit.baseline));
        const int level0 = level;
        double sprod = 1.0;
        double x = static_cast<double>(h);  // event time; horizon when none sampled
        bool event = false;
        for (int m = 0; m < h; ++m) {
            const double lam = fit.hazard(level, m);
            // survival values requested inside (m, m+1] get the partial factor
            for (std::size_t k = 0; k < u_grid.size(); ++k) {
                const double u = u_grid[k];
                if (u > m && u <= m + 1)
                    surv[k][d] = sprod * (1.0 - lam * (u - static_cast<double>(m)));
            }
            sprod *= 1.0 - lam;
            if (!event) {
                CounterRng rng_e(fit.spec.seed, d, static_cast<std::uint64_t>(m), 102);
                if (rng_e.bernoulli(lam)) {
                    event = true;
                    x = m + rng_e.uniform();
                }
            }
            CounterRng rng_t(fit.spec.seed, d, static_cast<std::uint64_t>(m), 103);
            level = static_cast<int>(rng_t.categorical(fit.trans[static_cast<std::size_t>(level)]));
        }
        ydraw[d] = fit.outcome(std::min(x, static_cast<double>(h)), level0);
    });

    res.survival.assign(u_grid.size(), SurvivalPoint{});
    for (std::size_t k = 0; k < u_grid.size(); ++k) {
        res.survival[k].u = u_grid[k];
        res.survival[k].s = mean(surv[k]);
        res.survival[k].se = mc_se(surv[k]);
    }
    res.mean_y0 = mean(ydraw);
    res.mean_y0_se = mc_se(ydraw);
    return res;
}

inline GFormulaResult gformula_survival(const Cohort& cohort,
                                        const std::vector<std::vector<double>>& a,
                                        const GFormulaSpec& spec,
                                        const std::vector<double>& u_grid) {
    auto fit = gformula_fit(cohort, a, spec);
    return gformula_run(fit, u_grid);
}

}  // namespace gsnm
