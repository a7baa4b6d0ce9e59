// Synthetic-cohort generator with exact per-subject counterfactual ground
// truth under locally rank-preserving joint structural nested models, plus
// regime replay and the quantile-quantile empirical oracle.
//
// The generator draws (Y0, X0) and latent health first, then walks months
// forward. The event clock consumes baseline time X0 at rate exp(omega) per
// observed month, using the *recorded* exposure, so the estimation-side
// transforms reproduce the stored counterfactuals exactly. Months in which a
// death occurs carry no recorded gain; an event pulled into a month by that
// month's own gain is resolved as a diagnosis (the subject survives it), which
// keeps the recorded data and the clock consistent. All randomness is keyed by
// (seed, subject, month, purpose), so replays under interventions stay
// aligned draw-for-draw with the observed world.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"
#include "gsnm/ctf.hpp"
#include "gsnm/regimes.hpp"
#include "gsnm/rng.hpp"
#include "gsnm/stats.hpp"
#include "gsnm/threads.hpp"

namespace gsnm {

enum class ScenarioKind {
    latent,        // continuous L with a latent health index; CO / RC+CD / censor / MLP
    markov,        // binary Markov L, psi*=0, death-only events; cross-estimator scenario
    paradigmatic,  // single-period discrete exposure (time-independent case)
    optreg,        // short-horizon discrete exposure under the optimal-regime SNMM
};

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::latent;
    int n = 1000;
    int horizon = 60;  // K+1
    std::uint64_t seed = 1;

    BlipSpec blip;
    Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(1);
    TimeRatioSpec ratio;
    Eigen::VectorXd psi_true = Eigen::VectorXd::Zero(1);

    double reverse_gap = 0.0;  // delta: preclinical window driving U(m)
    int mlp_chi = 0;           // minimal latent period of the exposure effect on X
    bool censor = false;
    double censor_slack = 0.0;  // X0 support extends to horizon + slack when censoring
    double p_death = 0.0;       // P(event is a death | event)

    // Treatment process (latent kind): P(Xi=1), P(A=0 | Xi=1), lognormal gain
    // with mean c0 + cl * L linear in the covariate; U=1 variants implement
    // reverse causation by suppressed gain.
    double xi_prob = 0.45, xi_prob_u = 0.2;
    double p_zero = 0.5, p_zero_u = 0.95;
    double gain_c0 = 0.6, gain_cl = 0.25, gain_sigma = 0.4;
    double gain_scale_u = 0.3;

    // Covariate process (latent kind): L(m) = tanh(cov_h * H + z_m), z AR(1).
    double cov_h = 0.8, cov_ar = 0.5, cov_noise = 0.5;

    // Baseline event time X0 = bound * sigmoid(x_mu + x_sigma*(rho H + ...)).
    double x_mu = 0.8, x_sigma = 1.2, x_rho = 0.7;

    // Utility Y0 = y_const + y_bx * X0 + y_bh * H + y_bu * U(0) + y_sigma * eps.
    double y_const = 50.0, y_bx = 0.4, y_bh = 2.0, y_bu = 0.0, y_sigma = 1.0;

    double bmi0_mean = 22.0, bmi0_sd = 1.5;
    double bmi_noise_sd = 0.0;  // measurement error on recorded BMI
    bool bmi_round = false;     // round recorded BMI to the nearest unit

    // Markov kind: binary L, monthly death hazards by L, logistic zero-gain.
    double mk_l0_p1 = 0.4;
    double mk_stay0 = 0.85, mk_stay1 = 0.8;
    double mk_h0 = 0.02, mk_h1 = 0.06;
    double mk_pzero_b0 = 1.2, mk_pzero_b1 = -0.9;  // logit P(A=0 | Xi=1, L)
    double mk_gain_mu0 = 0.4, mk_gain_mu1 = 0.8;   // mean gain by L
    double y_bl = 3.0;                             // Y0 coefficient on L(0)

    // Paradigmatic / optreg kinds: discrete exposure levels and arm masses.
    std::vector<double> levels = {0.0, 0.5, 1.0};
    std::vector<double> level_probs = {0.4, 0.3, 0.3};
    std::vector<double> level_probs_u = {0.92, 0.05, 0.03};
    double pd_xi_zero = 0.7;  // P(Xi=1 | A=0) in the discrete kinds
    double pd_x_lo = 0.05;    // paradigmatic X0 support (pd_x_lo, pd_x_hi)
    double pd_x_hi = 0.95;
    double positivity_floor = 1e-3;

    int threads = 1;
};

struct GroundTruth {
    std::vector<double> y0;
    std::vector<double> x0;
    std::vector<double> x_true;  // event time, possibly beyond the horizon
    std::vector<std::vector<double>> x_m;           // n x (horizon+1): X_m, m=0..K+1
    std::vector<std::vector<unsigned char>> u;      // n x horizon
    std::vector<std::vector<double>> p_zero_xi;     // P(A=0 | history, Xi=1) per month
    std::vector<std::vector<double>> y_m;           // n x (horizon+1): Y_m, m=0..K+1
    std::vector<std::vector<double>> a_rec;         // true recorded exposure (pre measurement error)
    // optreg extras: per-subject assigned optimal gains and shifted times.
    std::vector<std::vector<double>> og_assigned;   // n x horizon
    std::vector<std::vector<double>> og_xchain;     // n x (horizon+1): X^{g_opt,m}(psi*)
    std::map<std::string, std::vector<double>> og_gstar;  // cell key -> per-month g*
};

namespace detail {

// Purpose tags for counter-based draws.
enum Purpose : std::uint64_t {
    kH = 1,
    kZx = 2,
    kEy = 3,
    kLnoise = 4,
    kXi = 5,
    kAzero = 6,
    kAgain = 7,
    kDeathCoin = 8,
    kBmiDrop = 9,
    kBmiNoise = 10,
    kBmi0 = 11,
    kL0 = 12,
    kLtrans = 13,
    kHazard = 14,
    kFrac = 15,
    kLevel = 16,
};

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Latent per-subject state shared between the observed world and replays.
struct SubjectLatents {
    double h = 0.0;
    double x0 = 0.0;
    double y0 = 0.0;     // baseline utility (latent)
    double bmi0 = 22.0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

class Simulator {
  public:
    explicit Simulator(const ScenarioSpec& spec) : spec_(spec) { check_spec(); }

    struct Output {
        Cohort cohort;
        GroundTruth truth;
    };

    // Observed world.
    Output simulate() const { return run(nullptr, nullptr, 0); }

    // Intervention world: gains capped by the regime (and, when a mask is
    // given, capped only at months outside the masked subgroups, which is the
    // "intervene only where IN=0" intervention).
    Output replay(const Regime& regime, const SubgroupMask* mask = nullptr,
                  double mask_event_window = 0.0) const {
        if (mask_event_window > 0.0 && spec_.mlp_chi <= mask_event_window)
            throw ConfigError(
                "event-window masking needs a minimal latent period longer than the window");
        return run(&regime, mask, mask_event_window);
    }

    // E[Y0] (no regime) or E[Y0^g] by intervention replay.
    double true_counterfactual_mean(const Regime* regime = nullptr) const {
        if (regime == nullptr) {
            auto out = simulate();
            return mean(out.truth.y0);
        }
        auto out = replay(*regime);
        std::vector<double> y(out.cohort.subjects.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = out.cohort.subjects[i].utility;
        return mean(y);
    }

    double true_intercal_mean(const SubgroupMask& mask, double event_window) const {
        auto out = replay(Regime::zero(), &mask, event_window);
        std::vector<double> y(out.cohort.subjects.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = out.cohort.subjects[i].utility;
        return mean(y);
    }

    // True survival of the counterfactual event time under the regime.
    std::vector<double> true_survival(const Regime& regime,
                                      const std::vector<double>& u_grid) const {
        auto out = replay(regime);
        std::vector<double> s(u_grid.size(), 0.0);
        const double n = static_cast<double>(out.truth.x_true.size());
        for (std::size_t k = 0; k < u_grid.size(); ++k) {
            double c = 0.0;
            for (double x : out.truth.x_true)
                if (x > u_grid[k]) c += 1.0;
            s[k] = c / n;
        }
        return s;
    }

  private:
    ScenarioSpec spec_;

    void check_spec() const {
        if (spec_.n < 1 || spec_.horizon < 1) throw ConfigError("scenario: n and horizon must be positive");
        if (spec_.p_zero < spec_.positivity_floor || spec_.p_zero_u < spec_.positivity_floor)
            throw ConfigError("scenario: treatment positivity floor violated");
        if (spec_.beta_true.size() != spec_.blip.beta_dim())
            throw ConfigError("scenario: beta_true dimension mismatch");
        if (spec_.psi_true.size() != spec_.ratio.psi_dim())
            throw ConfigError("scenario: psi_true dimension mismatch");
        if (spec_.kind == ScenarioKind::markov && spec_.psi_true.lpNorm<Eigen::Infinity>() != 0.0)
            throw ConfigError("markov scenario requires psi* = 0");
        if (!spec_.censor && spec_.kind == ScenarioKind::latent) {
            // rates stay >= 1 only when omega >= 0 for every achievable exposure
            if (spec_.psi_true[0] < 0.0)
                throw ConfigError("uncensored latent scenario requires psi* >= 0");
        }
        if (spec_.mlp_chi > 0 && spec_.ratio.family != RatioFamily::constant)
            throw ConfigError("scenario: minimal latent period requires the constant ratio family");
        // An event-time argument inside the blip breaks the self-consistency of
        // the rank-preserving optimal-regime construction.
        if (spec_.kind == ScenarioKind::optreg && spec_.blip.x_dependent())
            throw ConfigError("optreg scenario requires an x-independent blip family");
    }

    double omega_rate(double a, const std::vector<double>& cov_row) const {
        return std::exp(omega_eval(spec_.ratio, a, cov_row, spec_.psi_true));
    }

    struct WorldState {
        // per-subject evolving state for one world (observed or replay)
        std::vector<double> bmi;            // recorded BMI (0..horizon)
        std::vector<std::vector<double>> cov;
        std::vector<unsigned char> alive;
        std::vector<double> a_rec;          // recorded exposure per month
        std::vector<unsigned char> xi_rec;
        std::vector<double> p0;             // P(A=0|...,Xi=1) per month (NaN if Xi=0)
        std::vector<unsigned char> u;
        std::vector<double> x_m;            // counterfactual no-further-gain times
        double x = kInf;                    // realized event time (maybe > horizon)
        bool event_death = false;
        double bmi_max = 0.0;
    };

    // Event time if no gain is recorded from month m onward, given the rate
    // history through m. Handles the minimal-latent-period lag: months
    // j in [m, m+chi) still run at rates driven by recorded gains before m.
    double x_if_stopped(int m, double x0, const std::vector<double>& b_prefix,
                        const WorldState& w) const {
        double rem = x0 - b_prefix[static_cast<std::size_t>(m)];
        if (rem <= 0.0) return w.x;  // already realized
        int j = m;
        while (true) {
            double r = 1.0;
            const int src = j - spec_.mlp_chi;
            if (spec_.mlp_chi > 0 && src < m) {
                const double a = src >= 0 ? w.a_rec[static_cast<std::size_t>(src)] : 0.0;
                r = omega_rate(a, w.cov[static_cast<std::size_t>(std::min(j, spec_.horizon))]);
            }
            if (rem <= r) return static_cast<double>(j) + rem / r;
            rem -= r;
            ++j;
            if (j > spec_.horizon + spec_.mlp_chi + 4 * spec_.horizon + 64)
                return static_cast<double>(j);  // effectively infinite
        }
    }

    Output run(const Regime* regime, const SubgroupMask* mask, double mask_window) const {
        const int h = spec_.horizon;
        const std::size_t n = static_cast<std::size_t>(spec_.n);
        Output out;
        out.cohort.horizon = h;
        out.cohort.n_cov = n_cov();
        out.cohort.subjects.resize(n);
        out.truth.y0.resize(n);
        out.truth.x0.resize(n);
        out.truth.x_true.resize(n);
        out.truth.x_m.assign(n, {});
        out.truth.u.assign(n, {});
        out.truth.p_zero_xi.assign(n, {});
        out.truth.y_m.assign(n, {});
        out.truth.a_rec.assign(n, {});

        parallel_for(n, spec_.threads, [&](std::size_t i) {
            generate_subject(static_cast<std::uint64_t>(i), regime, mask, mask_window, out);
        });

        if (spec_.kind == ScenarioKind::optreg) finalize_optreg(out, regime);
        else finalize_utilities(out);
        return out;
    }

    int n_cov() const {
        switch (spec_.kind) {
            case ScenarioKind::latent: return 1;
            case ScenarioKind::markov: return 1;
            case ScenarioKind::paradigmatic: return 0;
            case ScenarioKind::optreg: return 0;
        }
        return 0;
    }

    // ---- per-subject generation --------------------------------------------

    void generate_subject(std::uint64_t i, const Regime* regime, const SubgroupMask* mask,
                          double mask_window, Output& out) const {
        using namespace detail;
        const int h = spec_.horizon;
        const auto hs = static_cast<std::size_t>(h);

        SubjectLatents lat = draw_latents(i);
        WorldState w;
        w.bmi.assign(hs + 1, 0.0);
        w.cov.assign(hs + 1, std::vector<double>(static_cast<std::size_t>(n_cov()), 0.0));
        w.alive.assign(hs + 1, 1);
        w.a_rec.assign(hs, 0.0);
        w.xi_rec.assign(hs, 0);
        w.p0.assign(hs, kNaN);
        w.u.assign(hs, 0);
        w.x_m.assign(hs + 1, 0.0);
        w.bmi[0] = lat.bmi0;
        w.bmi_max = lat.bmi0;

        std::vector<double> b_prefix(hs + 2, 0.0);  // baseline time consumed
        double z = 0.0;                             // covariate AR state
        int mk_l = 0;                               // markov covariate level
        if (spec_.kind == ScenarioKind::markov)
            mk_l = CounterRng(spec_.seed, i, 0, kL0).bernoulli(spec_.mk_l0_p1) ? 1 : 0;

        bool event_realized = false;
        bool dead = false;

        for (int m = 0; m < h; ++m) {
            const std::size_t mm = static_cast<std::size_t>(m);

            // covariate for month m (exogenous; zero convention once dead)
            if (spec_.kind == ScenarioKind::latent) {
                z = spec_.cov_ar * z +
                    spec_.cov_noise * CounterRng(spec_.seed, i, mm, kLnoise).normal();
                if (!dead) w.cov[mm][0] = std::tanh(spec_.cov_h * lat.h + z);
            } else if (spec_.kind == ScenarioKind::markov) {
                if (m > 0) {
                    const double stay = mk_l == 0 ? spec_.mk_stay0 : spec_.mk_stay1;
                    if (!CounterRng(spec_.seed, i, mm, kLtrans).bernoulli(stay)) mk_l = 1 - mk_l;
                }
                if (!dead) w.cov[mm][0] = static_cast<double>(mk_l);
            }

            // counterfactual no-further-gain time and preclinical indicator
            if (spec_.kind == ScenarioKind::markov) {
                w.x_m[mm] = event_realized ? w.x : kNaN;  // filled after hazard walk below
            } else {
                w.x_m[mm] = event_realized ? w.x : x_if_stopped(m, lat.x0, b_prefix, w);
            }
            const bool u_now =
                event_realized ? true
                               : (spec_.kind != ScenarioKind::markov &&
                                  w.x_m[mm] <= static_cast<double>(m) + spec_.reverse_gap);
            w.u[mm] = u_now ? 1 : 0;

            if (dead) {
                b_prefix[mm + 1] = b_prefix[mm] + 1.0;
                continue;
            }

            // exposure draw
            double a_draw = 0.0;
            bool xi_draw = false;
            double p0 = kNaN;
            draw_exposure(i, m, w, u_now, mk_l, xi_draw, a_draw, p0);

            // regime / intercal-mask intervention: cap the gain
            if (regime != nullptr && xi_draw) {
                bool apply = true;
                if (mask != nullptr) {
                    // intervene only where IN(m) = 0; the event-window part of
                    // IN is evaluated against this world's (determined) event
                    // time, the declared rules against this world's history.
                    bool in_flag = false;
                    Subject view = snapshot_subject(w, m);
                    if (mask->in(view, m)) in_flag = true;
                    if (!in_flag && mask_window > 0.0) {
                        const double xw = event_realized
                                              ? w.x
                                              : x_if_stopped(m, lat.x0, b_prefix, w);
                        if (static_cast<double>(m) < xw &&
                            xw < static_cast<double>(m) + mask_window)
                            in_flag = true;
                    }
                    apply = !in_flag;
                }
                if (apply) {
                    Subject view = snapshot_subject(w, m);
                    const double cap = regime->allowed_gain(view, w.a_rec, m);
                    a_draw = std::min(a_draw, cap);
                }
            }

            // event-clock step on the recorded-exposure convention
            const double r_draw = month_rate(m, a_draw, w);
            double rate_used = r_draw;
            bool event_this_month = false;
            bool death_this_month = false;
            if (!event_realized && spec_.kind != ScenarioKind::markov) {
                const double base = b_prefix[mm];
                const double r_nogain = month_rate(m, 0.0, w);
                if (lat.x0 <= base + r_nogain) {
                    event_this_month = true;
                    death_this_month =
                        CounterRng(spec_.seed, i, mm, kDeathCoin).bernoulli(spec_.p_death);
                    if (death_this_month) {
                        // no recorded gain in a death month; clock runs at the
                        // no-gain rate
                        a_draw = 0.0;
                        xi_draw = false;
                        p0 = kNaN;
                        rate_used = r_nogain;
                    }
                    w.x = static_cast<double>(m) + (lat.x0 - base) / rate_used;
                } else if (lat.x0 <= base + r_draw) {
                    // the month's own gain pulls the event in: resolved as a
                    // diagnosis so the gain stays recorded
                    event_this_month = true;
                    w.x = static_cast<double>(m) + (lat.x0 - base) / r_draw;
                }
            } else if (!event_realized && spec_.kind == ScenarioKind::markov) {
                const double hz = mk_l == 0 ? spec_.mk_h0 : spec_.mk_h1;
                if (CounterRng(spec_.seed, i, mm, kHazard).bernoulli(hz)) {
                    event_this_month = true;
                    death_this_month = true;
                    w.x = static_cast<double>(m) +
                          CounterRng(spec_.seed, i, mm, kFrac).uniform();
                    a_draw = 0.0;
                    xi_draw = false;
                    p0 = kNaN;
                }
            }

            w.a_rec[mm] = a_draw;
            w.xi_rec[mm] = xi_draw ? 1 : 0;
            w.p0[mm] = p0;
            b_prefix[mm + 1] = b_prefix[mm] + rate_used;

            // record BMI(m+1)
            if (event_this_month && death_this_month) {
                dead = true;
                for (std::size_t t = static_cast<std::size_t>(
                         std::max(0, static_cast<int>(std::ceil(w.x))));
                     t <= hs; ++t) {
                    w.alive[t] = 0;
                }
                w.event_death = true;
            }
            if (!dead || w.alive[mm + 1]) {
                if (xi_draw || a_draw > 0.0)
                    w.bmi[mm + 1] = w.bmi_max + a_draw;
                else
                    w.bmi[mm + 1] = next_below_max(i, m, w);
                w.bmi_max = std::max(w.bmi_max, w.bmi[mm + 1]);
            }
            if (event_this_month) event_realized = true;
        }

        // markov kind: no-gain counterfactual equals the realized time (psi*=0)
        if (spec_.kind == ScenarioKind::markov) {
            const double xt = event_realized ? w.x : kInf;
            for (int m = 0; m <= h; ++m) w.x_m[static_cast<std::size_t>(m)] = xt;
        } else {
            if (!event_realized) w.x = x_if_stopped(h, lat.x0, b_prefix, w);
            w.x_m[hs] = w.x <= static_cast<double>(h) ? w.x
                                                      : x_if_stopped(h, lat.x0, b_prefix, w);
        }
        if (spec_.kind == ScenarioKind::markov && !event_realized) {
            // survivor past end of follow-up; X0 = X conceptually infinite here,
            // record the horizon walk value
            w.x = static_cast<double>(h) + 1.0 +
                  CounterRng(spec_.seed, i, hs, kFrac).uniform();
            for (int m = 0; m <= h; ++m) w.x_m[static_cast<std::size_t>(m)] = w.x;
        }

        emit_subject(i, lat, w, out);
    }

    double month_rate(int m, double a_now, const WorldState& w) const {
        const std::size_t mm = static_cast<std::size_t>(m);
        if (spec_.mlp_chi > 0) {
            const int src = m - spec_.mlp_chi;
            const double a = src >= 0 ? w.a_rec[static_cast<std::size_t>(src)] : 0.0;
            return omega_rate(a, w.cov[mm]);
        }
        return omega_rate(a_now, w.cov[mm]);
    }

    void draw_exposure(std::uint64_t i, int m, const WorldState& w, bool u_now, int mk_l,
                       bool& xi_draw, double& a_draw, double& p0) const {
        using namespace detail;
        const std::size_t mm = static_cast<std::size_t>(m);
        switch (spec_.kind) {
            case ScenarioKind::latent: {
                const double xi_p = u_now ? spec_.xi_prob_u : spec_.xi_prob;
                xi_draw = CounterRng(spec_.seed, i, mm, kXi).bernoulli(xi_p);
                if (!xi_draw) return;
                p0 = u_now ? spec_.p_zero_u : spec_.p_zero;
                if (CounterRng(spec_.seed, i, mm, kAzero).bernoulli(p0)) return;
                double mean_gain = spec_.gain_c0 + spec_.gain_cl * w.cov[mm][0];
                if (u_now) mean_gain *= spec_.gain_scale_u;
                mean_gain = std::max(0.05, mean_gain);
                a_draw = CounterRng(spec_.seed, i, mm, kAgain)
                             .lognormal(std::log(mean_gain) -
                                            0.5 * spec_.gain_sigma * spec_.gain_sigma,
                                        spec_.gain_sigma);
                break;
            }
            case ScenarioKind::markov: {
                xi_draw = CounterRng(spec_.seed, i, mm, kXi).bernoulli(spec_.xi_prob);
                if (!xi_draw) return;
                p0 = detail::sigmoid(spec_.mk_pzero_b0 +
                                     spec_.mk_pzero_b1 * static_cast<double>(mk_l));
                if (CounterRng(spec_.seed, i, mm, kAzero).bernoulli(p0)) return;
                const double mu = mk_l == 0 ? spec_.mk_gain_mu0 : spec_.mk_gain_mu1;
                a_draw = CounterRng(spec_.seed, i, mm, kAgain)
                             .lognormal(std::log(mu) - 0.5 * spec_.gain_sigma * spec_.gain_sigma,
                                        spec_.gain_sigma);
                break;
            }
            case ScenarioKind::paradigmatic:
            case ScenarioKind::optreg: {
                const auto& probs = u_now ? spec_.level_probs_u : spec_.level_probs;
                const std::size_t k = CounterRng(spec_.seed, i, mm, kLevel).categorical(probs);
                a_draw = spec_.levels.at(k);
                xi_draw = a_draw > 0.0
                              ? true
                              : CounterRng(spec_.seed, i, mm, kXi).bernoulli(spec_.pd_xi_zero);
                if (!xi_draw) a_draw = 0.0;
                // P(A=0 | Xi=1): renormalize the zero arm by its Xi share
                const double q = probs.at(0);
                p0 = spec_.pd_xi_zero * q / (spec_.pd_xi_zero * q + (1.0 - q));
                if (!xi_draw) p0 = kNaN;
                break;
            }
        }
    }

    double next_below_max(std::uint64_t i, int m, const WorldState& w) const {
        using namespace detail;
        const double drop =
            0.05 + std::fabs(0.1 * CounterRng(spec_.seed, i, static_cast<std::uint64_t>(m),
                                              kBmiDrop)
                                       .normal());
        return std::max(10.0, w.bmi_max - drop);
    }

    detail::SubjectLatents draw_latents(std::uint64_t i) const {
        using namespace detail;
        SubjectLatents lat;
        lat.h = CounterRng(spec_.seed, i, 0, kH).normal();
        const double zx = CounterRng(spec_.seed, i, 0, kZx).normal();
        const double g = spec_.x_rho * lat.h +
                         std::sqrt(std::max(0.0, 1.0 - spec_.x_rho * spec_.x_rho)) * zx;
        switch (spec_.kind) {
            case ScenarioKind::latent: {
                const double bound =
                    static_cast<double>(spec_.horizon) + (spec_.censor ? spec_.censor_slack : 0.0);
                lat.x0 = bound * sigmoid(spec_.x_mu + spec_.x_sigma * g);
                break;
            }
            case ScenarioKind::markov:
                lat.x0 = kNaN;  // generated by the hazard walk
                break;
            case ScenarioKind::paradigmatic:
                lat.x0 = spec_.pd_x_lo +
                         (spec_.pd_x_hi - spec_.pd_x_lo) * sigmoid(spec_.x_mu + spec_.x_sigma * g);
                break;
            case ScenarioKind::optreg: {
                const double bound = static_cast<double>(spec_.horizon);
                lat.x0 = bound * sigmoid(spec_.x_mu + spec_.x_sigma * g);
                break;
            }
        }
        lat.bmi0 = spec_.bmi0_mean + spec_.bmi0_sd * CounterRng(spec_.seed, i, 0, kBmi0).normal();
        lat.y0 = 0.0;  // assembled in emit_subject once U(0)/L(0) are known
        return lat;
    }

    Subject snapshot_subject(const WorldState& w, int upto_month) const {
        Subject s;
        s.bmi = w.bmi;
        s.cov = w.cov;
        s.alive = w.alive;
        if (w.x <= static_cast<double>(upto_month)) s.event_time = w.x;
        s.censored = !s.event_time.has_value();
        return s;
    }

    void emit_subject(std::uint64_t i, const detail::SubjectLatents& lat, WorldState& w,
                      Output& out) const;

    void finalize_utilities(Output& out) const;
    void finalize_optreg(Output& out, const Regime* regime) const;

    // optreg: optimal-gain tables from the observed world, fixed across
    // replays so intervention worlds evaluate the same regime.
    mutable bool og_ready_ = false;
    mutable std::map<std::string, double> og_gstar_cache_;  // "m:cell" -> g*
};

}  // namespace gsnm

#include "gsnm/simlab_impl.hpp"
