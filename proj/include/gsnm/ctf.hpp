// Counterfactual transforms.
//
// Blip functions gamma_m map an exposure increment at month m to its effect on
// the end-of-study utility; time-ratio functions omega rescale time spent
// exposed. Together they produce the transformed outcomes Y_m(beta),
// X_m(psi), Y_m(beta,psi) and the censoring-floored C_m(psi).
//
// Every blip family here is linear in beta: gamma = beta' * phi(a, m, l, x)
// with each feature carrying a factor of a (so gamma vanishes at a=0 or
// beta=0). Time-ratio families are likewise linear in psi.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"

namespace gsnm {

// --------------------------------------------------------------------------
// Blip specification
// --------------------------------------------------------------------------

enum class BlipFamily {
    constant,          // gamma = beta * a
    linear_time,       // gamma = (b0 + b1 m) a
    covariate,         // gamma = a * (b0 + b' L(m)[indices])
    x_affine,          // gamma = a * (b0 + b1 x)
    x_threshold,       // gamma = a * (b0 I(x <= m+w) + b1 I(x > m+w))
    action_quadratic,  // gamma = b0 a - b1 a^2 [+ a * b' L(m)] [+ b_x a x]
};

struct BlipSpec {
    BlipFamily family = BlipFamily::constant;
    std::vector<int> cov_indices;    // covariate / action_quadratic families
    double threshold_window = 0.0;   // x_threshold: w in I(x <= m+w)
    bool quad_use_x = false;         // action_quadratic: include a*x term

    int beta_dim() const {
        switch (family) {
            case BlipFamily::constant: return 1;
            case BlipFamily::linear_time: return 2;
            case BlipFamily::covariate: return 1 + static_cast<int>(cov_indices.size());
            case BlipFamily::x_affine: return 2;
            case BlipFamily::x_threshold: return 2;
            case BlipFamily::action_quadratic:
                return 2 + static_cast<int>(cov_indices.size()) + (quad_use_x ? 1 : 0);
        }
        return 1;
    }

    bool x_dependent() const {
        return family == BlipFamily::x_affine || family == BlipFamily::x_threshold ||
               (family == BlipFamily::action_quadratic && quad_use_x);
    }
};

// Feature vector phi with gamma = beta' * phi. Requires x when the family is
// x-dependent.
inline Eigen::VectorXd blip_features(const BlipSpec& spec, int m, double a,
                                     const std::vector<double>& cov_row,
                                     std::optional<double> x) {
    if (spec.x_dependent() && !x)
        throw ConfigError("blip family requires an event-time argument x");
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(spec.beta_dim());
    if (a == 0.0) return phi;
    switch (spec.family) {
        case BlipFamily::constant:
            phi[0] = a;
            break;
        case BlipFamily::linear_time:
            phi[0] = a;
            phi[1] = a * static_cast<double>(m);
            break;
        case BlipFamily::covariate: {
            phi[0] = a;
            for (std::size_t k = 0; k < spec.cov_indices.size(); ++k)
                phi[1 + static_cast<Eigen::Index>(k)] =
                    a * cov_row.at(static_cast<std::size_t>(spec.cov_indices[k]));
            break;
        }
        case BlipFamily::x_affine:
            phi[0] = a;
            phi[1] = a * (*x);
            break;
        case BlipFamily::x_threshold: {
            const bool late = *x > static_cast<double>(m) + spec.threshold_window;
            phi[0] = late ? 0.0 : a;
            phi[1] = late ? a : 0.0;
            break;
        }
        case BlipFamily::action_quadratic: {
            phi[0] = a;
            phi[1] = -a * a;
            Eigen::Index at = 2;
            for (int idx : spec.cov_indices)
                phi[at++] = a * cov_row.at(static_cast<std::size_t>(idx));
            if (spec.quad_use_x) phi[at] = a * (*x);
            break;
        }
    }
    return phi;
}

inline double blip_eval(const BlipSpec& spec, int m, double a,
                        const std::vector<double>& cov_row, std::optional<double> x,
                        const Eigen::VectorXd& beta) {
    if (beta.size() != spec.beta_dim())
        throw ConfigError("blip_eval: beta has dimension " + std::to_string(beta.size()) +
                          ", spec requires " + std::to_string(spec.beta_dim()));
    return beta.dot(blip_features(spec, m, a, cov_row, x));
}

// --------------------------------------------------------------------------
// Time-ratio specification
// --------------------------------------------------------------------------

enum class RatioFamily {
    constant,   // omega = psi * a
    covariate,  // omega = a * (p0 + p' L(t)[indices])
};

struct TimeRatioSpec {
    RatioFamily family = RatioFamily::constant;
    std::vector<int> cov_indices;

    int psi_dim() const {
        return family == RatioFamily::constant ? 1
                                               : 1 + static_cast<int>(cov_indices.size());
    }
};

inline double omega_eval(const TimeRatioSpec& spec, double a,
                         const std::vector<double>& cov_row, const Eigen::VectorXd& psi) {
    if (psi.size() != spec.psi_dim())
        throw ConfigError("omega_eval: psi has dimension " + std::to_string(psi.size()) +
                          ", spec requires " + std::to_string(spec.psi_dim()));
    if (a == 0.0) return 0.0;
    double w = psi[0] * a;
    for (std::size_t k = 0; k < spec.cov_indices.size(); ++k)
        w += psi[1 + static_cast<Eigen::Index>(k)] * a *
             cov_row.at(static_cast<std::size_t>(spec.cov_indices[k]));
    return w;
}

// exp(omega_j) for j = 0..K and their prefix sums; the workhorse behind every
// X_m(psi) evaluation. prefix[m] = sum_{j<m} exp(omega_j).
struct RatePath {
    std::vector<double> rate;    // size horizon
    std::vector<double> prefix;  // size horizon+1
};

inline RatePath rate_path(const TimeRatioSpec& spec, const Eigen::VectorXd& psi,
                          const std::vector<double>& exposure, const Subject& subj,
                          int horizon) {
    if (static_cast<int>(exposure.size()) != horizon)
        throw ConfigError("rate_path: exposure length must equal the horizon");
    RatePath rp;
    rp.rate.resize(static_cast<std::size_t>(horizon));
    rp.prefix.resize(static_cast<std::size_t>(horizon) + 1);
    rp.prefix[0] = 0.0;
    for (int j = 0; j < horizon; ++j) {
        const std::size_t jj = static_cast<std::size_t>(j);
        rp.rate[jj] = std::exp(omega_eval(spec, exposure[jj], subj.cov[jj], psi));
        rp.prefix[jj + 1] = rp.prefix[jj] + rp.rate[jj];
    }
    return rp;
}

// Piecewise-exact integral of exp(omega) over [from, to] with 0 <= from <= to
// <= horizon, on the monthly grid.
inline double rate_integral(const RatePath& rp, double from, double to) {
    if (to <= from) return 0.0;
    const int lo = static_cast<int>(std::floor(from));
    const int hi_full = static_cast<int>(std::floor(to));
    if (lo == hi_full) return (to - from) * rp.rate[static_cast<std::size_t>(lo)];
    double s = (static_cast<double>(lo) + 1.0 - from) * rp.rate[static_cast<std::size_t>(lo)];
    s += rp.prefix[static_cast<std::size_t>(std::min<int>(
             hi_full, static_cast<int>(rp.rate.size())))] -
         rp.prefix[static_cast<std::size_t>(lo) + 1];
    const double frac = to - static_cast<double>(hi_full);
    if (frac > 0.0) s += frac * rp.rate[static_cast<std::size_t>(hi_full)];
    return s;
}

// X_m(psi): X if X <= m, else m + integral_m^X exp(omega). Requires an
// observed (uncensored) event time.
inline double x_transform_at(const RatePath& rp, double x, int m) {
    if (x <= static_cast<double>(m)) return x;
    return static_cast<double>(m) + rate_integral(rp, static_cast<double>(m), x);
}

inline double x_transform(const TimeRatioSpec& spec, const Eigen::VectorXd& psi,
                          const std::vector<double>& exposure, const Subject& subj,
                          int horizon, int m) {
    if (!subj.event_time)
        throw EstimationError("x_transform: event time is censored; use censor_floor");
    if (m < 0 || m > horizon) throw ConfigError("x_transform: m out of range");
    auto rp = rate_path(spec, psi, exposure, subj, horizon);
    return x_transform_at(rp, *subj.event_time, m);
}

// --------------------------------------------------------------------------
// Censoring floor (administrative end of follow-up)
// --------------------------------------------------------------------------

struct CensorFloorResult {
    double k_m = kInf;          // smallest X_m(psi) any censored subject could have
    std::vector<double> c_m;    // per-subject C_m(psi) = min(candidate, k_m)
};

// Per-subject X_m(psi) candidates: the observed transform for uncensored
// subjects, the integral to the horizon for censored ones. K_m(psi) is the
// minimum of the censored candidates; C_m floors every candidate at K_m.
inline CensorFloorResult censor_floor(const TimeRatioSpec& spec, const Eigen::VectorXd& psi,
                                      const std::vector<std::vector<double>>& exposures,
                                      const Cohort& cohort, int m) {
    CensorFloorResult r;
    const std::size_t n = cohort.subjects.size();
    std::vector<double> candidate(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Subject& s = cohort.subjects[i];
        auto rp = rate_path(spec, psi, exposures[i], s, cohort.horizon);
        if (s.event_time) {
            candidate[i] = x_transform_at(rp, *s.event_time, m);
        } else {
            candidate[i] = static_cast<double>(m) +
                           rate_integral(rp, static_cast<double>(m),
                                         static_cast<double>(cohort.horizon));
            r.k_m = std::min(r.k_m, candidate[i]);
        }
    }
    r.c_m.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.c_m[i] = std::min(candidate[i], r.k_m);
    return r;
}

// --------------------------------------------------------------------------
// Y transforms
// --------------------------------------------------------------------------

// sum_{j=m}^{K} phi_j, so that Y_m(beta) = Y - beta' * value. x_series, when
// given, supplies the event-time argument per month (X_j(psi) or C_j(psi)).
inline Eigen::VectorXd blip_feature_sum(const BlipSpec& spec,
                                        const std::vector<double>& exposure,
                                        const Subject& subj, int horizon, int m,
                                        const std::vector<double>* x_series) {
    if (spec.x_dependent() && x_series == nullptr)
        throw ConfigError("y_transform: x-dependent blip requires an x_series");
    Eigen::VectorXd s = Eigen::VectorXd::Zero(spec.beta_dim());
    for (int j = m; j < horizon; ++j) {
        const std::size_t jj = static_cast<std::size_t>(j);
        if (exposure[jj] == 0.0) continue;
        std::optional<double> xj;
        if (x_series) xj = (*x_series)[jj];
        s += blip_features(spec, j, exposure[jj], subj.cov[jj], xj);
    }
    return s;
}

// Y_m(beta) = Y - sum_{j=m}^{K} gamma_j; Y_{K+1}(beta) = Y.
inline double y_transform(const BlipSpec& spec, const Eigen::VectorXd& beta,
                          const std::vector<double>& exposure, const Subject& subj,
                          int horizon, int m, const std::vector<double>* x_series = nullptr) {
    if (beta.size() != spec.beta_dim())
        throw ConfigError("y_transform: beta dimension mismatch");
    return subj.utility - beta.dot(blip_feature_sum(spec, exposure, subj, horizon, m, x_series));
}

// Rewrites one month of exposure inside a transformed event time: given
// x_next computed with exposure a_from during month m (and a fixed
// continuation after m+1), returns the time when month m instead carries
// exposure a_to. Composition goes through the baseline residual
// u = time-content of (m, x] measured at month-m rates.
inline double shift_exposure_month(const TimeRatioSpec& spec, const Eigen::VectorXd& psi,
                                   const std::vector<double>& cov_row, int m, double a_from,
                                   double a_to, double x_next) {
    if (!std::isfinite(x_next)) throw EstimationError("shift_exposure_month: non-finite time");
    const double v = x_next - static_cast<double>(m);
    if (v <= 0.0) return x_next;  // event precedes m: nothing to rewrite
    const double r_from = std::exp(omega_eval(spec, a_from, cov_row, psi));
    const double r_to = std::exp(omega_eval(spec, a_to, cov_row, psi));
    const double u = v < 1.0 ? v * r_from : r_from + (v - 1.0);
    const double w = u < r_to ? u / r_to : 1.0 + (u - r_to);
    return static_cast<double>(m) + w;
}

// Convenience: X_j(psi) for j = 0..K for one subject (used as the x_series of
// an x-dependent blip when no censoring is present).
inline std::vector<double> x_series_all_months(const TimeRatioSpec& spec,
                                               const Eigen::VectorXd& psi,
                                               const std::vector<double>& exposure,
                                               const Subject& subj, int horizon) {
    if (!subj.event_time)
        throw EstimationError("x_series_all_months: censored subject; use censor_floor");
    auto rp = rate_path(spec, psi, exposure, subj, horizon);
    std::vector<double> xs(static_cast<std::size_t>(horizon));
    for (int m = 0; m < horizon; ++m)
        xs[static_cast<std::size_t>(m)] = x_transform_at(rp, *subj.event_time, m);
    return xs;
}

}  // namespace gsnm
