// G-estimation engine: treatment-process regression, score tests with added
// counterfactual covariates, grid/root-finding and closed-form estimators for
// beta* and psi*, restriction windows, score-inversion confidence sets, and
// E[Y0] estimation.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"
#include "gsnm/ctf.hpp"
#include "gsnm/regimes.hpp"
#include "gsnm/stats.hpp"
#include "gsnm/threads.hpp"

namespace gsnm {

// ---------------------------------------------------------------------------
// Treatment model
// ---------------------------------------------------------------------------

enum class TreatmentResponse {
    identity,    // E[A(m)|W] = alpha'W
    log_shift,   // E[ln(A(m)+0.1)|W] = alpha'W
    log_linear,  // E[A(m)|W] = exp(alpha'W)
};

struct TreatmentModelSpec {
    TreatmentResponse response = TreatmentResponse::identity;
    bool w_month = false;
    std::vector<int> w_cov;  // indices into L(m)
    int w_prior_a = 0;       // lagged exposure terms A(m-1), ..., A(m-w_prior_a)

    int dim() const {
        return 1 + (w_month ? 1 : 0) + static_cast<int>(w_cov.size()) + w_prior_a;
    }
};

struct FittedTreatmentModel {
    TreatmentModelSpec spec;
    Eigen::VectorXd alpha;
    std::size_t n_rows = 0;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct GridSpec {
    double lo = -5.0;
    double hi = 5.0;
    double step = 0.1;  // the default scan resolution

    int points() const {
        if (!(hi > lo) || step <= 0.0) throw ConfigError("grid: need lo < hi and step > 0");
        return static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
    }
    double at(int k) const { return lo + step * k; }
};

enum class VarianceMode { iid, cluster };
enum class Restriction { none, zeta, zeta_chi_window };

struct GEstConfig {
    double zeta = 72.0;
    std::optional<double> chi;  // minimal latent period; window (m+zeta, m+chi)
    GridSpec beta_grid{-5.0, 5.0, 0.1};
    GridSpec psi_grid{-1.0, 1.0, 0.02};
    VarianceMode variance = VarianceMode::cluster;
    double alpha_level = 0.05;
    TreatmentModelSpec treatment;
    int q_variant = 0;  // 0 default instruments; 1..3 preset alternates
    int threads = 1;
    double root_tol = 1e-10;
    double positivity_warn = 1e-3;
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ScoreResult {
    Eigen::VectorXd theta_score;
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
    std::size_t n_included = 0;
};

struct CoordinateSet {
    std::vector<std::pair<double, double>> intervals;  // union of grid intervals

    bool contains(double v) const {
        for (auto& [a, b] : intervals)
            if (v >= a && v <= b) return true;
        return false;
    }
    bool empty() const { return intervals.empty(); }
    double width() const {
        double w = 0.0;
        for (auto& [a, b] : intervals) w += b - a;
        return w;
    }
};

struct EstimateResult {
    Eigen::VectorXd beta_hat;
    Eigen::VectorXd psi_hat;  // size 0 when no SNFTM is fitted
    double ey0_hat = 0.0;
    double ey_obs = 0.0;
    double diff = 0.0;
    std::vector<CoordinateSet> beta_ci;
    std::vector<CoordinateSet> psi_ci;

    struct Diagnostics {
        std::vector<double> beta_grid_roots;      // 1-d scan roots
        std::vector<double> psi_grid_roots;
        double closed_vs_grid_gap = 0.0;          // |closed form - grid root|
        bool beta_closed_form = false;
        bool beta_singular = false;
        std::vector<int> beta_non_identified;     // coordinates with no information
        bool non_identified = false;              // unresolved multiple zeros
        std::vector<std::string> warnings;
        std::size_t person_months_used = 0;
    } diag;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

// Bundles a cohort with an exposure view (plain, masked, or regime-residual)
// and runs every estimation primitive on it. All methods are deterministic;
// parallelism only splits independent per-subject or per-grid-point work.
class GEstEngine {
  public:
    GEstEngine(const Cohort& cohort, std::vector<std::vector<double>> exposure,
               std::vector<std::vector<unsigned char>> xi, BlipSpec blip,
               std::optional<TimeRatioSpec> ratio, GEstConfig cfg)
        : cohort_(&cohort),
          a_(std::move(exposure)),
          xi_(std::move(xi)),
          blip_(std::move(blip)),
          ratio_(std::move(ratio)),
          cfg_(std::move(cfg)) {
        n_ = cohort_->subjects.size();
        h_ = cohort_->horizon;
        if (a_.empty() && xi_.empty()) {
            auto d = derive_exposure(*cohort_);
            a_.resize(n_);
            xi_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) {
                a_[i] = std::move(d[i].a);
                xi_[i] = std::move(d[i].xi);
            }
        }
        if (a_.size() != n_ || xi_.size() != n_)
            throw ConfigError("g-estimation: exposure arrays must cover every subject");
        any_censored_ = false;
        for (const auto& s : cohort_->subjects)
            if (s.censored) any_censored_ = true;
        build_w_rows();
    }

    // Convenience: plain derived exposure.
    GEstEngine(const Cohort& cohort, BlipSpec blip, std::optional<TimeRatioSpec> ratio,
               GEstConfig cfg)
        : GEstEngine(cohort, {}, {}, std::move(blip), std::move(ratio), std::move(cfg)) {}

    const GEstConfig& config() const { return cfg_; }

    // ---- x-values: X_m(psi), or C_m(psi) when any subject is censored ------

    struct XVals {
        std::vector<std::vector<double>> val;  // n x horizon
        std::vector<double> k_m;               // censoring floor per month (+inf if none)
        bool censoring = false;
    };

    XVals x_values(const Eigen::VectorXd& psi) const {
        if (!ratio_) throw ConfigError("x_values: no time-ratio model declared");
        XVals xv;
        xv.censoring = any_censored_;
        xv.val.assign(n_, std::vector<double>(static_cast<std::size_t>(h_), 0.0));
        xv.k_m.assign(static_cast<std::size_t>(h_), kInf);
        std::vector<RatePath> paths(n_);
        parallel_for(n_, cfg_.threads, [&](std::size_t i) {
            paths[i] = rate_path(*ratio_, psi, a_[i], cohort_->subjects[i], h_);
        });
        if (any_censored_) {
            for (int m = 0; m < h_; ++m) {
                double lo = kInf;
                for (std::size_t i = 0; i < n_; ++i) {
                    if (cohort_->subjects[i].censored) {
                        const double cand =
                            m + rate_integral(paths[i], m, static_cast<double>(h_));
                        if (cand < lo) lo = cand;
                    }
                }
                xv.k_m[static_cast<std::size_t>(m)] = lo;
            }
        }
        parallel_for(n_, cfg_.threads, [&](std::size_t i) {
            const Subject& s = cohort_->subjects[i];
            for (int m = 0; m < h_; ++m) {
                const std::size_t mm = static_cast<std::size_t>(m);
                double cand;
                if (s.event_time)
                    cand = x_transform_at(paths[i], *s.event_time, m);
                else
                    cand = m + rate_integral(paths[i], m, static_cast<double>(h_));
                xv.val[i][mm] = std::min(cand, xv.k_m[mm]);
            }
        });
        return xv;
    }

    // ---- inclusion ----------------------------------------------------------

    // Whether person-month (i, m) contributes under the given restriction.
    bool included(std::size_t i, int m, Restriction restr, const XVals* xv) const {
        const std::size_t mm = static_cast<std::size_t>(m);
        if (!xi_[i][mm]) return false;
        if (restr == Restriction::none) return true;
        double x;
        if (xv != nullptr) {
            x = xv->val[i][mm];
        } else {
            // restriction on the observed event time (no SNFTM declared)
            if (!cohort_->subjects[i].event_time) return false;
            x = *cohort_->subjects[i].event_time;
        }
        if (!(x > m + cfg_.zeta)) return false;
        if (restr == Restriction::zeta_chi_window) {
            if (!cfg_.chi) throw ConfigError("zeta-chi window requires chi");
            if (!(x < m + *cfg_.chi)) return false;
        }
        return true;
    }

    Restriction default_restriction() const {
        if (!ratio_ && !cfg_.chi) return Restriction::none;
        return cfg_.chi ? Restriction::zeta_chi_window : Restriction::zeta;
    }

    // ---- scores -------------------------------------------------------------

    // Score for the psi-model at psi: instruments Q**(X_m(psi)) against the
    // treatment residuals, inclusion re-derived and the treatment model refit
    // at this psi.
    ScoreResult score_psi(const Eigen::VectorXd& psi, Restriction restr) const {
        if (!ratio_) throw ConfigError("score_psi: no time-ratio model declared");
        XVals xv = x_values(psi);
        return score_psi_at(xv, restr);
    }

    // Same score with externally supplied event-time values (used by the
    // optimal-regime machinery, whose X_m's come from the backward recursion).
    ScoreResult score_psi_at(const XVals& xv, Restriction restr) const {
        if (!ratio_) throw ConfigError("score_psi: no time-ratio model declared");
        const int k = ratio_->psi_dim();
        return build_score(k, restr, &xv, [&](std::size_t i, int m, Eigen::VectorXd& q) {
            fill_q_psi(i, m, xv.val[i][static_cast<std::size_t>(m)], q);
        });
    }

    // Score with caller-supplied instruments of dimension k; xv only drives
    // the inclusion restriction.
    ScoreResult score_with(int k, Restriction restr, const XVals* xv,
                           const std::function<void(std::size_t, int, Eigen::VectorXd&)>&
                               q_of) const {
        return build_score(k, restr, xv, q_of);
    }

    // The default instrument shape multiplying a transformed utility.
    Eigen::VectorXd beta_instrument(std::size_t i, int m, std::optional<double> x) const {
        Eigen::VectorXd q(blip_.beta_dim());
        fill_q_beta(i, m, x, q);
        return q;
    }

    using SuffixSums = std::vector<std::vector<Eigen::VectorXd>>;

    // Score for the beta-model at beta, with the event-time argument series
    // fixed at xv (or absent in CO mode). The suffix-sum cache lets grid scans
    // and set inversions reuse the blip features across beta values.
    ScoreResult score_beta(const Eigen::VectorXd& beta, Restriction restr,
                           const XVals* xv) const {
        auto ssum = blip_suffix_sums(xv);
        return score_beta(beta, restr, xv, ssum);
    }

    ScoreResult score_beta(const Eigen::VectorXd& beta, Restriction restr, const XVals* xv,
                           const SuffixSums& ssum) const {
        if (beta.size() != blip_.beta_dim()) throw ConfigError("score_beta: beta dimension");
        const int k = blip_.beta_dim();
        return build_score(k, restr, xv, [&](std::size_t i, int m, Eigen::VectorXd& q) {
            const std::size_t mm = static_cast<std::size_t>(m);
            const double ym = cohort_->subjects[i].utility - beta.dot(ssum[i][mm]);
            fill_q_beta(i, m,
                        xv ? std::optional<double>(xv->val[i][mm]) : std::optional<double>(),
                        q);
            q *= ym;
        });
    }

    // ---- closed form ---------------------------------------------------------

    struct ClosedForm {
        Eigen::VectorXd beta;
        bool singular = false;
        std::vector<int> non_identified;  // coordinates with a null information column
    };

    // Exact zero of the linear beta-score. Coordinates whose information
    // column vanishes on the included set are reported non-identified and
    // pinned to zero; the rest solve the reduced system.
    ClosedForm closed_form_beta(Restriction restr, const XVals* xv) const {
        auto ssum = blip_suffix_sums(xv);
        return closed_form_beta(restr, xv, ssum);
    }

    ClosedForm closed_form_beta(Restriction restr, const XVals* xv,
                                const SuffixSums& ssum) const {
        const int k = blip_.beta_dim();
        auto incl = inclusion_mask(restr, xv);
        FittedTreatmentModel tm = fit_treatment_model_internal(incl);

        Eigen::MatrixXd m_mat = Eigen::MatrixXd::Zero(k, k);
        Eigen::VectorXd b_vec = Eigen::VectorXd::Zero(k);
        Eigen::VectorXd q(k);
        for (std::size_t i = 0; i < n_; ++i) {
            for (int m = 0; m < h_; ++m) {
                const std::size_t mm = static_cast<std::size_t>(m);
                if (!incl[i][mm]) continue;
                const double g = residual(tm, i, m);
                fill_q_beta(i, m,
                            xv ? std::optional<double>(xv->val[i][mm]) : std::optional<double>(),
                            q);
                m_mat.noalias() += g * q * ssum[i][mm].transpose();
                b_vec.noalias() += g * q * cohort_->subjects[i].utility;
            }
        }

        ClosedForm out;
        const double scale = m_mat.cwiseAbs().maxCoeff();
        for (int j = 0; j < k; ++j)
            if (m_mat.col(j).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, scale))
                out.non_identified.push_back(j);

        if (out.non_identified.empty()) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(m_mat);
            if (lu.isInvertible() &&
                lu.rcond() > 1e-14) {
                out.beta = lu.solve(b_vec);
                return out;
            }
            out.singular = true;
            out.beta = Eigen::VectorXd::Zero(k);
            return out;
        }

        // reduced system over the identified coordinates
        std::vector<int> keep;
        for (int j = 0; j < k; ++j)
            if (std::find(out.non_identified.begin(), out.non_identified.end(), j) ==
                out.non_identified.end())
                keep.push_back(j);
        out.singular = true;
        out.beta = Eigen::VectorXd::Zero(k);
        if (!keep.empty()) {
            Eigen::MatrixXd mr(keep.size(), keep.size());
            Eigen::VectorXd br(keep.size());
            for (std::size_t r = 0; r < keep.size(); ++r) {
                br[static_cast<Eigen::Index>(r)] = b_vec[keep[r]];
                for (std::size_t c = 0; c < keep.size(); ++c)
                    mr(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        m_mat(keep[r], keep[c]);
            }
            Eigen::VectorXd sol = mr.fullPivLu().solve(br);
            for (std::size_t r = 0; r < keep.size(); ++r) out.beta[keep[r]] = sol[static_cast<Eigen::Index>(r)];
        }
        return out;
    }

    // ---- root finding ---------------------------------------------------------

    // 1-d grid scan for sign changes of f, then bisection to cfg_.root_tol.
    // Returns every bracketed root in grid order.
    std::vector<double> grid_roots(const GridSpec& grid,
                                   const std::function<double(double)>& f) const {
        const int np = grid.points();
        std::vector<double> vals(static_cast<std::size_t>(np));
        parallel_for(static_cast<std::size_t>(np), cfg_.threads,
                     [&](std::size_t k) { vals[k] = f(grid.at(static_cast<int>(k))); });
        std::vector<double> roots;
        for (int k = 0; k + 1 < np; ++k) {
            double f0 = vals[static_cast<std::size_t>(k)], f1 = vals[static_cast<std::size_t>(k) + 1];
            if (f0 == 0.0) {
                roots.push_back(grid.at(k));
                continue;
            }
            if (f0 * f1 < 0.0) {
                double lo = grid.at(k), hi = grid.at(k + 1);
                double flo = f0;
                while (hi - lo > cfg_.root_tol) {
                    const double mid = 0.5 * (lo + hi);
                    const double fm = f(mid);
                    if (fm == 0.0) {
                        lo = hi = mid;
                        break;
                    }
                    if (flo * fm < 0.0) {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                roots.push_back(0.5 * (lo + hi));
            }
        }
        if (!vals.empty() && vals.back() == 0.0) roots.push_back(grid.at(np - 1));
        return roots;
    }

    // Damped Broyden for stacked score systems (dim >= 2), seeded from the
    // best grid point.
    Eigen::VectorXd broyden_root(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 Eigen::VectorXd x0, double tol, int max_iter = 80) const {
        const Eigen::Index k = x0.size();
        Eigen::VectorXd fx = f(x0);
        Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(k, k);
        // finite-difference initial Jacobian
        const double eps = 1e-5;
        for (Eigen::Index j = 0; j < k; ++j) {
            Eigen::VectorXd xp = x0;
            xp[j] += eps;
            jac.col(j) = (f(xp) - fx) / eps;
        }
        for (int it = 0; it < max_iter; ++it) {
            if (fx.lpNorm<Eigen::Infinity>() < tol) return x0;
            Eigen::VectorXd step = jac.fullPivLu().solve(-fx);
            double lambda = 1.0;
            Eigen::VectorXd xn, fn;
            for (int half = 0; half < 12; ++half) {
                xn = x0 + lambda * step;
                fn = f(xn);
                if (fn.norm() < fx.norm()) break;
                lambda *= 0.5;
            }
            const Eigen::VectorXd dx = xn - x0;
            const Eigen::VectorXd df = fn - fx;
            if (dx.norm() > 0)
                jac += (df - jac * dx) * dx.transpose() / dx.squaredNorm();
            x0 = xn;
            fx = fn;
        }
        if (fx.lpNorm<Eigen::Infinity>() >= 1e-6)
            throw EstimationError("stacked score solver did not converge");
        return x0;
    }

    // ---- estimation pipeline ---------------------------------------------------

    EstimateResult estimate() const {
        EstimateResult res;
        Restriction restr = default_restriction();
        std::optional<XVals> xv;

        if (ratio_) {
            res.psi_hat = estimate_psi(restr, res.diag);
            xv = x_values(res.psi_hat);
        } else if (blip_.x_dependent()) {
            // no SNFTM declared: the sharp-null series X_m(0) = X
            TimeRatioSpec null_ratio;
            GEstEngine tmp(*this);
            tmp.ratio_ = null_ratio;
            xv = tmp.x_values(Eigen::VectorXd::Zero(1));
        }

        const XVals* xvp = xv ? &*xv : nullptr;
        const SuffixSums ssum = blip_suffix_sums(xvp);
        res.beta_hat = estimate_beta(restr, xvp, ssum, res.diag);

        // confidence sets by score-test inversion, coordinate by coordinate
        res.beta_ci = invert_beta(res.beta_hat, restr, xvp, ssum);
        if (ratio_) res.psi_ci = invert_psi(res.psi_hat, restr);

        auto ey = estimate_ey0(res.beta_hat, ratio_ ? &res.psi_hat : nullptr);
        res.ey0_hat = ey.first;
        res.ey_obs = observed_mean_y();
        res.diff = ey.second;

        positivity_audit(restr, xv ? &*xv : nullptr, res.diag.warnings);
        auto incl = inclusion_mask(restr, xv ? &*xv : nullptr);
        for (auto& row : incl)
            for (auto c : row) res.diag.person_months_used += c ? 1 : 0;
        return res;
    }

    // E[Y0] and the difference against the observed mean utility.
    std::pair<double, double> estimate_ey0(const Eigen::VectorXd& beta,
                                           const Eigen::VectorXd* psi) const {
        std::optional<XVals> xv;
        if (ratio_ && psi != nullptr) xv = x_values(*psi);
        if (blip_.x_dependent() && !xv)
            throw ConfigError("estimate_ey0: x-dependent blip requires a fitted SNFTM");
        double acc = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            const std::vector<double>* xs = xv ? &xv->val[i] : nullptr;
            acc += y_transform(blip_, beta, a_[i], cohort_->subjects[i], h_, 0, xs);
        }
        const double ey0 = acc / static_cast<double>(n_);
        return {ey0, ey0 - observed_mean_y()};
    }

    double observed_mean_y() const {
        double acc = 0.0;
        for (const auto& s : cohort_->subjects) acc += s.utility;
        return acc / static_cast<double>(n_);
    }

    // Public score-test entry point (target beta- or psi-model).
    ScoreResult score_statistic(const Eigen::VectorXd& beta, const Eigen::VectorXd* psi,
                                bool psi_target, Restriction restr) const {
        if (psi_target) {
            if (psi == nullptr) throw ConfigError("score_statistic: psi required");
            return score_psi(*psi, restr);
        }
        std::optional<XVals> xv;
        if (ratio_ && psi != nullptr) xv = x_values(*psi);
        return score_beta(beta, restr, xv ? &*xv : nullptr);
    }

    // Fitted treatment model on the inclusion set implied by (restr, psi).
    FittedTreatmentModel fit_treatment_model(Restriction restr,
                                             const Eigen::VectorXd* psi) const {
        std::optional<XVals> xv;
        if (ratio_ && psi != nullptr) xv = x_values(*psi);
        return fit_treatment_model_internal(inclusion_mask(restr, xv ? &*xv : nullptr));
    }

    const std::vector<std::vector<double>>& exposure() const { return a_; }
    const std::vector<std::vector<unsigned char>>& eligibility() const { return xi_; }

  private:
    const Cohort* cohort_;
    std::vector<std::vector<double>> a_;
    std::vector<std::vector<unsigned char>> xi_;
    BlipSpec blip_;
    std::optional<TimeRatioSpec> ratio_;
    GEstConfig cfg_;
    std::size_t n_ = 0;
    int h_ = 0;
    bool any_censored_ = false;
    std::vector<std::vector<Eigen::VectorXd>> w_rows_;  // n x horizon

    void build_w_rows() {
        const auto& t = cfg_.treatment;
        w_rows_.assign(n_, {});
        for (std::size_t i = 0; i < n_; ++i) {
            w_rows_[i].resize(static_cast<std::size_t>(h_));
            for (int m = 0; m < h_; ++m) {
                Eigen::VectorXd w(t.dim());
                Eigen::Index at = 0;
                w[at++] = 1.0;
                if (t.w_month) w[at++] = static_cast<double>(m);
                for (int idx : t.w_cov)
                    w[at++] = cohort_->subjects[i].cov[static_cast<std::size_t>(m)].at(
                        static_cast<std::size_t>(idx));
                for (int lag = 1; lag <= t.w_prior_a; ++lag)
                    w[at++] = m - lag >= 0 ? a_[i][static_cast<std::size_t>(m - lag)] : 0.0;
                w_rows_[i][static_cast<std::size_t>(m)] = std::move(w);
            }
        }
    }

    // instruments --------------------------------------------------------------

    double variant_scale(int m) const {
        const double t = static_cast<double>(m) / std::max(1, h_);
        switch (cfg_.q_variant) {
            case 1: return 1.0 + t;
            case 2: return std::exp(-t);
            case 3: return (1.0 + t) * (1.0 + t);
            default: return 1.0;
        }
    }

    // Q*: multiplies Y_m(beta); shaped like the blip features with the
    // exposure factor dropped. Fills a preallocated buffer.
    void fill_q_beta(std::size_t i, int m, std::optional<double> x, Eigen::VectorXd& q) const {
        const auto& cov = cohort_->subjects[i].cov[static_cast<std::size_t>(m)];
        switch (blip_.family) {
            case BlipFamily::constant: q << 1.0; break;
            case BlipFamily::linear_time: q << 1.0, static_cast<double>(m); break;
            case BlipFamily::covariate: {
                q[0] = 1.0;
                for (std::size_t k = 0; k < blip_.cov_indices.size(); ++k)
                    q[1 + static_cast<Eigen::Index>(k)] =
                        cov.at(static_cast<std::size_t>(blip_.cov_indices[k]));
                break;
            }
            case BlipFamily::x_affine: {
                if (!x) throw ConfigError("instrument requires an event-time argument");
                q << 1.0, *x;
                break;
            }
            case BlipFamily::x_threshold: {
                if (!x) throw ConfigError("instrument requires an event-time argument");
                const bool late = *x > m + blip_.threshold_window;
                q << (late ? 0.0 : 1.0), (late ? 1.0 : 0.0);
                break;
            }
            case BlipFamily::action_quadratic: {
                Eigen::Index at = 0;
                q[at++] = 1.0;
                q[at++] = static_cast<double>(m);
                for (int idx : blip_.cov_indices)
                    q[at++] = cov.at(static_cast<std::size_t>(idx));
                if (blip_.quad_use_x) {
                    if (!x) throw ConfigError("instrument requires an event-time argument");
                    q[at] = *x;
                }
                break;
            }
        }
        q *= variant_scale(m);
    }

    // Q**: functions of (history, X_m(psi)); defaults to X_m(psi) times the
    // ratio-family covariates. Fills a preallocated buffer.
    void fill_q_psi(std::size_t i, int m, double x, Eigen::VectorXd& q) const {
        const auto& cov = cohort_->subjects[i].cov[static_cast<std::size_t>(m)];
        q[0] = x;
        for (std::size_t k = 0; k < ratio_->cov_indices.size(); ++k)
            q[1 + static_cast<Eigen::Index>(k)] =
                x * cov.at(static_cast<std::size_t>(ratio_->cov_indices[k]));
        q *= variant_scale(m);
    }

    // blip feature suffix sums: S~_im = sum_{j>=m} phi_j ------------------------

    std::vector<std::vector<Eigen::VectorXd>> blip_suffix_sums(const XVals* xv) const {
        if (blip_.x_dependent() && xv == nullptr)
            throw ConfigError("x-dependent blip requires event-time values");
        std::vector<std::vector<Eigen::VectorXd>> out(n_);
        parallel_for(n_, cfg_.threads, [&](std::size_t i) {
            auto& rows = out[i];
            rows.resize(static_cast<std::size_t>(h_) + 1);
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(blip_.beta_dim());
            rows[static_cast<std::size_t>(h_)] = acc;
            for (int j = h_ - 1; j >= 0; --j) {
                const std::size_t jj = static_cast<std::size_t>(j);
                if (a_[i][jj] != 0.0) {
                    std::optional<double> xj;
                    if (xv != nullptr) xj = xv->val[i][jj];
                    acc += blip_features(blip_, j, a_[i][jj],
                                         cohort_->subjects[i].cov[jj], xj);
                }
                rows[jj] = acc;
            }
        });
        return out;
    }

    std::vector<std::vector<unsigned char>> inclusion_mask(Restriction restr,
                                                           const XVals* xv) const {
        std::vector<std::vector<unsigned char>> incl(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            incl[i].assign(static_cast<std::size_t>(h_), 0);
            for (int m = 0; m < h_; ++m)
                incl[i][static_cast<std::size_t>(m)] = included(i, m, restr, xv) ? 1 : 0;
        }
        return incl;
    }

    // treatment model -----------------------------------------------------------

    double response_value(std::size_t i, int m) const {
        const double a = a_[i][static_cast<std::size_t>(m)];
        return cfg_.treatment.response == TreatmentResponse::log_shift ? std::log(a + 0.1) : a;
    }

    FittedTreatmentModel fit_treatment_model_internal(
        const std::vector<std::vector<unsigned char>>& incl) const {
        const int p = cfg_.treatment.dim();
        std::size_t rows = 0;
        for (const auto& r : incl)
            for (auto c : r) rows += c ? 1 : 0;
        if (rows < static_cast<std::size_t>(p))
            throw EstimationError("treatment model: fewer included person-months than parameters");

        FittedTreatmentModel out;
        out.spec = cfg_.treatment;
        out.n_rows = rows;

        if (cfg_.treatment.response != TreatmentResponse::log_linear) {
            Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
            Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
            for (std::size_t i = 0; i < n_; ++i)
                for (int m = 0; m < h_; ++m) {
                    if (!incl[i][static_cast<std::size_t>(m)]) continue;
                    const auto& w = w_rows_[i][static_cast<std::size_t>(m)];
                    xtx.noalias() += w * w.transpose();
                    xty.noalias() += w * response_value(i, m);
                }
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtx);
            qr.setThreshold(1e-10);
            if (qr.rank() < p) {
                std::ostringstream os;
                os << "treatment model: singular fit; collinear columns:";
                const auto& perm = qr.colsPermutation().indices();
                for (Eigen::Index k = qr.rank(); k < p; ++k) os << ' ' << perm[k];
                throw EstimationError(os.str());
            }
            out.alpha = qr.solve(xty);
            return out;
        }

        // log-linear mean: Gauss-Newton on A - exp(alpha'W)
        Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
        alpha[0] = -1.0;
        for (int it = 0; it < 100; ++it) {
            Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(p, p);
            Eigen::VectorXd jtr = Eigen::VectorXd::Zero(p);
            for (std::size_t i = 0; i < n_; ++i)
                for (int m = 0; m < h_; ++m) {
                    if (!incl[i][static_cast<std::size_t>(m)]) continue;
                    const auto& w = w_rows_[i][static_cast<std::size_t>(m)];
                    const double mu = std::exp(alpha.dot(w));
                    jtj.noalias() += mu * mu * w * w.transpose();
                    jtr.noalias() += mu * (a_[i][static_cast<std::size_t>(m)] - mu) * w;
                }
            jtj.diagonal().array() += 1e-10;
            const Eigen::VectorXd step = jtj.ldlt().solve(jtr);
            alpha += step;
            if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
        }
        out.alpha = alpha;
        return out;
    }

    double residual(const FittedTreatmentModel& tm, std::size_t i, int m) const {
        const auto& w = w_rows_[i][static_cast<std::size_t>(m)];
        if (cfg_.treatment.response == TreatmentResponse::log_linear)
            return a_[i][static_cast<std::size_t>(m)] - std::exp(tm.alpha.dot(w));
        return response_value(i, m) - tm.alpha.dot(w);
    }

    // derivative of the fitted mean with respect to alpha, for orthogonalization
    Eigen::VectorXd mean_gradient(const FittedTreatmentModel& tm, std::size_t i, int m) const {
        const auto& w = w_rows_[i][static_cast<std::size_t>(m)];
        if (cfg_.treatment.response == TreatmentResponse::log_linear)
            return std::exp(tm.alpha.dot(w)) * w;
        return w;
    }

    // score assembly ------------------------------------------------------------

    // Two passes over the included cells with preallocated buffers: the first
    // fits the treatment model and accumulates the score and the
    // orthogonalization moments, the second accumulates the sandwich. Q is
    // recomputed rather than stored; this keeps the hot loop allocation-free.
    ScoreResult build_score(int k, Restriction restr, const XVals* xv,
                            const std::function<void(std::size_t, int, Eigen::VectorXd&)>&
                                q_of) const {
        auto incl = inclusion_mask(restr, xv);
        std::size_t cells = 0;
        for (const auto& r : incl)
            for (auto c : r) cells += c ? 1 : 0;
        if (cells == 0) throw EstimationError("score test: empty inclusion set");
        FittedTreatmentModel tm = fit_treatment_model_internal(incl);
        const bool linear_mean = cfg_.treatment.response != TreatmentResponse::log_linear;

        const int p = cfg_.treatment.dim();
        Eigen::VectorXd u = Eigen::VectorXd::Zero(k);
        Eigen::MatrixXd c_qw = Eigen::MatrixXd::Zero(k, p);
        Eigen::MatrixXd m_ww = Eigen::MatrixXd::Zero(p, p);

        Eigen::VectorXd q(k), wg_buf(p);
        for (std::size_t i = 0; i < n_; ++i) {
            for (int m = 0; m < h_; ++m) {
                const std::size_t mm = static_cast<std::size_t>(m);
                if (!incl[i][mm]) continue;
                q_of(i, m, q);
                const double g = residual(tm, i, m);
                const Eigen::VectorXd& w = w_rows_[i][mm];
                if (linear_mean) {
                    u.noalias() += q * g;
                    c_qw.noalias() += q * w.transpose();
                    m_ww.noalias() += w * w.transpose();
                } else {
                    wg_buf.noalias() = std::exp(tm.alpha.dot(w)) * w;
                    u.noalias() += q * g;
                    c_qw.noalias() += q * wg_buf.transpose();
                    m_ww.noalias() += wg_buf * wg_buf.transpose();
                }
            }
        }

        const Eigen::MatrixXd proj = c_qw * m_ww.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k);
        Eigen::VectorXd phi(k), qt(k);
        for (std::size_t i = 0; i < n_; ++i) {
            phi.setZero();
            bool any = false;
            for (int m = 0; m < h_; ++m) {
                const std::size_t mm = static_cast<std::size_t>(m);
                if (!incl[i][mm]) continue;
                any = true;
                q_of(i, m, q);
                const double g = residual(tm, i, m);
                const Eigen::VectorXd& w = w_rows_[i][mm];
                if (linear_mean) {
                    qt.noalias() = q - proj * w;
                } else {
                    wg_buf.noalias() = std::exp(tm.alpha.dot(w)) * w;
                    qt.noalias() = q - proj * wg_buf;
                }
                if (cfg_.variance == VarianceMode::cluster) {
                    phi.noalias() += qt * g;
                } else {
                    v.noalias() += qt * qt.transpose() * (g * g);
                }
            }
            if (any && cfg_.variance == VarianceMode::cluster)
                v.noalias() += phi * phi.transpose();
        }

        ScoreResult res;
        res.theta_score = u;
        res.n_included = cells;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
        const double vmax = es.eigenvalues().cwiseAbs().maxCoeff();
        int rank = 0;
        double stat = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double ev = es.eigenvalues()[j];
            if (ev > 1e-12 * std::max(1.0, vmax)) {
                const double proj_u = es.eigenvectors().col(j).dot(u);
                stat += proj_u * proj_u / ev;
                ++rank;
            }
        }
        res.statistic = stat;
        res.dof = rank == 0 ? k : rank;
        res.p_value = rank == 0 ? 1.0 : chi2_sf(stat, res.dof);
        return res;
    }

    // estimation steps ------------------------------------------------------------

    Eigen::VectorXd estimate_psi(Restriction restr, EstimateResult::Diagnostics& diag) const {
        const int k = ratio_->psi_dim();
        if (k == 1) {
            auto f = [&](double p) {
                Eigen::VectorXd pv(1);
                pv << p;
                return score_psi(pv, restr).theta_score[0];
            };
            auto roots = grid_roots(cfg_.psi_grid, f);
            if (roots.empty())
                throw EstimationError("psi score has no sign change on the declared grid");
            diag.psi_grid_roots = roots;
            double chosen = select_root(roots, true, restr, nullptr, nullptr, diag);
            Eigen::VectorXd psi(1);
            psi << chosen;
            return psi;
        }
        // multi-dimensional: best grid point on the first coordinate grid, then
        // a damped quasi-root-finder on the stacked system
        Eigen::VectorXd seed = Eigen::VectorXd::Zero(k);
        double best = kInf;
        const int np = cfg_.psi_grid.points();
        for (int a = 0; a < np; ++a) {
            for (int b = 0; b < np; ++b) {
                if (k > 2 && b > 0) break;
                Eigen::VectorXd p = Eigen::VectorXd::Zero(k);
                p[0] = cfg_.psi_grid.at(a);
                if (k >= 2) p[1] = cfg_.psi_grid.at(b);
                const double norm = score_psi(p, restr).theta_score.norm();
                if (norm < best) {
                    best = norm;
                    seed = p;
                }
            }
        }
        return broyden_root(
            [&](const Eigen::VectorXd& p) { return score_psi(p, restr).theta_score; }, seed,
            cfg_.root_tol);
    }

    Eigen::VectorXd estimate_beta(Restriction restr, const XVals* xv, const SuffixSums& ssum,
                                  EstimateResult::Diagnostics& diag) const {
        const int k = blip_.beta_dim();
        ClosedForm cf = closed_form_beta(restr, xv, ssum);
        diag.beta_closed_form = true;
        diag.beta_singular = cf.singular;
        diag.beta_non_identified = cf.non_identified;
        if (!cf.non_identified.empty()) diag.non_identified = true;

        if (k == 1) {
            auto f = [&](double b) {
                Eigen::VectorXd bv(1);
                bv << b;
                return score_beta(bv, restr, xv, ssum).theta_score[0];
            };
            auto roots = grid_roots(cfg_.beta_grid, f);
            diag.beta_grid_roots = roots;
            if (!cf.singular && !roots.empty()) {
                double nearest = roots[0];
                for (double r : roots)
                    if (std::fabs(r - cf.beta[0]) < std::fabs(nearest - cf.beta[0])) nearest = r;
                diag.closed_vs_grid_gap = std::fabs(nearest - cf.beta[0]);
            }
            if (cf.singular) {
                if (roots.empty())
                    throw EstimationError("beta score has no sign change on the declared grid");
                Eigen::VectorXd b(1);
                b << select_root(roots, false, restr, xv, &ssum, diag);
                return b;
            }
            if (roots.size() > 1) (void)select_root(roots, false, restr, xv, &ssum, diag);
            return cf.beta;
        }
        if (cf.singular && cf.non_identified.empty())
            diag.warnings.push_back("beta closed form singular; returning pseudo-solution");
        return cf.beta;
    }

    // Multiple-zero disambiguation: re-test each candidate with the preset
    // alternate instruments; more than one survivor is a non-identified
    // verdict.
    double select_root(const std::vector<double>& roots, bool psi_target, Restriction restr,
                       const XVals* xv, const SuffixSums* ssum,
                       EstimateResult::Diagnostics& diag) const {
        if (roots.size() == 1) return roots[0];
        std::vector<double> survivors;
        for (double r : roots) {
            bool ok = true;
            for (int variant = 1; variant <= 3 && ok; ++variant) {
                GEstEngine alt(*this);
                alt.cfg_.q_variant = variant;
                Eigen::VectorXd v(1);
                v << r;
                ScoreResult s = psi_target ? alt.score_psi(v, restr)
                                           : (ssum ? alt.score_beta(v, restr, xv, *ssum)
                                                   : alt.score_beta(v, restr, xv));
                if (s.p_value < cfg_.alpha_level) ok = false;
            }
            if (ok) survivors.push_back(r);
        }
        if (survivors.size() == 1) return survivors[0];
        diag.non_identified = true;
        diag.warnings.push_back(std::string(psi_target ? "psi" : "beta") +
                                ": multiple score zeros survive alternate instruments");
        return survivors.empty() ? roots[0] : survivors[0];
    }

    std::vector<CoordinateSet> invert_beta(const Eigen::VectorXd& center, Restriction restr,
                                           const XVals* xv, const SuffixSums& ssum) const {
        std::vector<CoordinateSet> out(static_cast<std::size_t>(blip_.beta_dim()));
        for (int c = 0; c < blip_.beta_dim(); ++c) {
            out[static_cast<std::size_t>(c)] = invert_coordinate(
                cfg_.beta_grid, [&](double v) {
                    Eigen::VectorXd b = center;
                    b[c] = v;
                    return score_beta(b, restr, xv, ssum).p_value;
                });
        }
        return out;
    }

    std::vector<CoordinateSet> invert_psi(const Eigen::VectorXd& center,
                                          Restriction restr) const {
        std::vector<CoordinateSet> out(static_cast<std::size_t>(ratio_->psi_dim()));
        for (int c = 0; c < ratio_->psi_dim(); ++c) {
            out[static_cast<std::size_t>(c)] = invert_coordinate(
                cfg_.psi_grid, [&](double v) {
                    Eigen::VectorXd p = center;
                    p[c] = v;
                    return score_psi(p, restr).p_value;
                });
        }
        return out;
    }

    CoordinateSet invert_coordinate(const GridSpec& grid,
                                    const std::function<double(double)>& pval) const {
        const int np = grid.points();
        std::vector<unsigned char> in(static_cast<std::size_t>(np), 0);
        parallel_for(static_cast<std::size_t>(np), cfg_.threads, [&](std::size_t k) {
            in[k] = pval(grid.at(static_cast<int>(k))) > cfg_.alpha_level ? 1 : 0;
        });
        CoordinateSet set;
        int start = -1;
        for (int k = 0; k < np; ++k) {
            if (in[static_cast<std::size_t>(k)] && start < 0) start = k;
            if ((!in[static_cast<std::size_t>(k)] || k == np - 1) && start >= 0) {
                const int end = in[static_cast<std::size_t>(k)] ? k : k - 1;
                set.intervals.emplace_back(grid.at(start), grid.at(end));
                start = -1;
            }
        }
        return set;
    }

    void positivity_audit(Restriction restr, const XVals* xv,
                          std::vector<std::string>& warnings) const {
        auto incl = inclusion_mask(restr, xv);
        FittedTreatmentModel tm;
        try {
            tm = fit_treatment_model_internal(incl);
        } catch (const EstimationError&) {
            return;
        }
        // strata: quintiles of the fitted treatment mean
        std::vector<std::pair<double, bool>> cells;  // (fitted, A==0)
        for (std::size_t i = 0; i < n_; ++i)
            for (int m = 0; m < h_; ++m) {
                const std::size_t mm = static_cast<std::size_t>(m);
                if (!incl[i][mm]) continue;
                cells.emplace_back(tm.alpha.dot(w_rows_[i][mm]), a_[i][mm] == 0.0);
            }
        if (cells.size() < 50) return;
        std::sort(cells.begin(), cells.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        const std::size_t q = cells.size() / 5;
        for (int b = 0; b < 5; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * q;
            const std::size_t hi = b == 4 ? cells.size() : lo + q;
            if (hi <= lo) continue;
            double zeros = 0.0;
            for (std::size_t k = lo; k < hi; ++k) zeros += cells[k].second ? 1.0 : 0.0;
            const double frac = zeros / static_cast<double>(hi - lo);
            if (frac < cfg_.positivity_warn) {
                warnings.push_back("positivity: stratum " + std::to_string(b + 1) +
                                   " has P(A=0) = " + std::to_string(frac));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Pipeline entry points
// ---------------------------------------------------------------------------

inline EstimateResult g_estimate(const Cohort& cohort, const BlipSpec& blip,
                                 const std::optional<TimeRatioSpec>& ratio,
                                 const GEstConfig& cfg) {
    GEstEngine engine(cohort, blip, ratio, cfg);
    return engine.estimate();
}

// One full estimation per zeta; failures recorded per row without aborting
// the sweep.
struct SensitivityRow {
    double zeta = 0.0;
    bool ok = false;
    std::string error;
    EstimateResult result;
};

inline std::vector<SensitivityRow> sensitivity_zeta(const Cohort& cohort, const BlipSpec& blip,
                                                    const std::optional<TimeRatioSpec>& ratio,
                                                    GEstConfig cfg,
                                                    const std::vector<double>& zeta_list) {
    if (zeta_list.empty()) throw ConfigError("sensitivity: zeta list is empty");
    std::vector<SensitivityRow> rows;
    for (double z : zeta_list) {
        SensitivityRow row;
        row.zeta = z;
        cfg.zeta = z;
        try {
            row.result = g_estimate(cohort, blip, ratio, cfg);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Regime pipeline: the section-3 analysis with residual exposures, regime
// indicators, and regime-shifted transforms replacing their plain
// counterparts. The zero regime reproduces the plain pipeline bit for bit.
inline EstimateResult estimate_ey0_g(const Cohort& cohort, const Regime& regime,
                                     const BlipSpec& blip,
                                     const std::optional<TimeRatioSpec>& ratio,
                                     const GEstConfig& cfg) {
    auto derived = derive_exposure(cohort);
    std::vector<std::vector<double>> a(cohort.subjects.size());
    std::vector<std::vector<unsigned char>> xi(cohort.subjects.size());
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        a[i] = residual_exposure(cohort.subjects[i], derived[i], regime, cohort.horizon);
        xi[i] = regime_indicators(cohort.subjects[i], derived[i], regime, cohort.horizon);
    }
    GEstEngine engine(cohort, std::move(a), std::move(xi), blip, ratio, cfg);
    return engine.estimate();
}

}  // namespace gsnm
