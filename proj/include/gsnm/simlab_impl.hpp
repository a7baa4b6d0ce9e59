// Simulator internals: subject emission, utility assembly under the
// structural models, optimal-regime table construction, and the empirical
// quantile-quantile oracle.
#pragma once

#include "gsnm/simlab.hpp"

namespace gsnm {

inline void Simulator::emit_subject(std::uint64_t i, const detail::SubjectLatents& lat,
                                    WorldState& w, Output& out) const {
    using namespace detail;
    const int h = spec_.horizon;
    const std::size_t hs = static_cast<std::size_t>(h);

    Subject s;
    s.id = "s" + std::to_string(i + 1);
    s.bmi = w.bmi;
    s.cov = w.cov;
    s.alive = w.alive;
    if (w.x <= static_cast<double>(h)) {
        s.event_time = w.x;
        s.censored = false;
    } else {
        s.censored = true;
    }

    // Optional measurement error on the recorded BMI only; the structural
    // models below keep using the true exposures.
    if (spec_.bmi_noise_sd > 0.0 || spec_.bmi_round) {
        for (std::size_t t = 0; t <= hs; ++t) {
            if (!s.alive[t]) continue;
            double b = s.bmi[t];
            if (spec_.bmi_noise_sd > 0.0)
                b += spec_.bmi_noise_sd * CounterRng(spec_.seed, i, t, kBmiNoise).normal();
            if (spec_.bmi_round) b = std::round(b);
            s.bmi[t] = std::max(10.0, b);
        }
    }

    double y0 = 0.0;
    const double ey = CounterRng(spec_.seed, i, 0, kEy).normal();
    switch (spec_.kind) {
        case ScenarioKind::latent:
            y0 = spec_.y_const + spec_.y_bx * lat.x0 + spec_.y_bh * lat.h +
                 spec_.y_bu * static_cast<double>(w.u[0]) + spec_.y_sigma * ey;
            break;
        case ScenarioKind::markov:
            y0 = spec_.y_const + spec_.y_bx * std::min(w.x, static_cast<double>(h)) +
                 spec_.y_bl * w.cov[0][0] + spec_.y_sigma * ey;
            break;
        case ScenarioKind::paradigmatic:
            y0 = spec_.y_const + spec_.y_bx * lat.x0 +
                 spec_.y_bu * static_cast<double>(w.u[0]) + spec_.y_sigma * ey;
            break;
        case ScenarioKind::optreg:
            y0 = spec_.y_const + spec_.y_bx * lat.x0 + spec_.y_sigma * ey;
            break;
    }

    out.truth.y0[i] = y0;
    out.truth.x0[i] = spec_.kind == ScenarioKind::markov ? w.x : lat.x0;
    out.truth.x_true[i] = w.x;
    out.truth.x_m[i] = w.x_m;
    out.truth.u[i] = w.u;
    out.truth.p_zero_xi[i] = w.p0;
    out.truth.a_rec[i] = w.a_rec;

    // Y = Y0 + sum_j gamma_j(A(j), L(j), X_j; beta*) and the whole Y_m ladder.
    {
        std::vector<double> y_m(hs + 1, 0.0);
        Eigen::VectorXd suffix = Eigen::VectorXd::Zero(spec_.blip.beta_dim());
        std::vector<Eigen::VectorXd> suffixes(hs + 1);
        suffixes[hs] = suffix;
        for (int j = h - 1; j >= 0; --j) {
            const std::size_t jj = static_cast<std::size_t>(j);
            suffix += blip_features(spec_.blip, j, w.a_rec[jj], w.cov[jj],
                                    std::optional<double>(w.x_m[jj]));
            suffixes[jj] = suffix;
        }
        const double y = y0 + spec_.beta_true.dot(suffixes[0]);
        s.utility = y;
        for (std::size_t m = 0; m <= hs; ++m) y_m[m] = y - spec_.beta_true.dot(suffixes[m]);
        out.truth.y_m[i] = std::move(y_m);
    }

    out.cohort.subjects[i] = std::move(s);
}

inline void Simulator::finalize_utilities(Output&) const {}

namespace detail {
inline std::string exposure_cell_key(const std::vector<double>& a, int m) {
    std::string key;
    for (int j = 0; j < m; ++j) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%.6g", a[static_cast<std::size_t>(j)]);
        key += buf;
        key += ',';
    }
    return key;
}
}  // namespace detail

inline void Simulator::finalize_optreg(Output& out, const Regime* regime) const {
    const bool observed_world = regime == nullptr;
    if (!og_ready_ && !observed_world) (void)simulate();  // builds the g* tables

    const int h = spec_.horizon;
    const std::size_t n = out.cohort.subjects.size();
    const bool building = !og_ready_;

    std::vector<std::vector<double>> chain(n, std::vector<double>(static_cast<std::size_t>(h) + 1));
    std::vector<std::vector<double>> assigned(n, std::vector<double>(static_cast<std::size_t>(h), 0.0));
    for (std::size_t i = 0; i < n; ++i) chain[i][static_cast<std::size_t>(h)] = out.truth.x_true[i];

    for (int m = h - 1; m >= 0; --m) {
        const std::size_t mm = static_cast<std::size_t>(m);
        // X^{0(m), g_opt,m+1}(psi*) per subject
        std::vector<double> x0m(n);
        for (std::size_t i = 0; i < n; ++i)
            x0m[i] = shift_exposure_month(spec_.ratio, spec_.psi_true,
                                          out.cohort.subjects[i].cov[mm], m,
                                          out.truth.a_rec[i][mm], 0.0, chain[i][mm + 1]);

        // cell means of gamma(a, x) among subjects with X > m
        std::map<std::string, std::vector<double>> cell_sum;
        std::map<std::string, double> cell_n;
        for (std::size_t i = 0; i < n; ++i) {
            if (out.truth.x_true[i] <= static_cast<double>(m)) continue;
            const std::string key = detail::exposure_cell_key(out.truth.a_rec[i], m);
            auto& acc = cell_sum[key];
            if (acc.empty()) acc.assign(spec_.levels.size(), 0.0);
            for (std::size_t k = 0; k < spec_.levels.size(); ++k)
                acc[k] += blip_eval(spec_.blip, m, spec_.levels[k],
                                    out.cohort.subjects[i].cov[mm], x0m[i], spec_.beta_true);
            cell_n[key] += 1.0;
        }
        std::map<std::string, double> gstar;
        for (auto& [key, acc] : cell_sum) {
            double best = 0.0, best_val = -kInf;
            for (std::size_t k = 0; k < spec_.levels.size(); ++k) {
                const double v = acc[k] / cell_n[key];
                if (v > best_val + 1e-12) {
                    best_val = v;
                    best = spec_.levels[k];
                }
            }
            gstar[key] = best;
            if (building) og_gstar_cache_[std::to_string(m) + ":" + key] = best;
        }

        for (std::size_t i = 0; i < n; ++i) {
            double g = 0.0;
            if (out.truth.x_true[i] <= static_cast<double>(m)) {
                // event already realized: pointwise argmax at the known time
                double best_val = -kInf;
                for (double a : spec_.levels) {
                    const double v = blip_eval(spec_.blip, m, a, out.cohort.subjects[i].cov[mm],
                                               out.truth.x_true[i], spec_.beta_true);
                    if (v > best_val + 1e-12) {
                        best_val = v;
                        g = a;
                    }
                }
            } else {
                const std::string key = detail::exposure_cell_key(out.truth.a_rec[i], m);
                if (building) {
                    g = gstar.at(key);
                } else {
                    auto it = og_gstar_cache_.find(std::to_string(m) + ":" + key);
                    g = it != og_gstar_cache_.end() ? it->second : gstar.at(key);
                }
            }
            assigned[i][mm] = std::min(out.truth.a_rec[i][mm], g);
            chain[i][mm] = shift_exposure_month(spec_.ratio, spec_.psi_true,
                                                out.cohort.subjects[i].cov[mm], m,
                                                out.truth.a_rec[i][mm], assigned[i][mm],
                                                chain[i][mm + 1]);
        }
    }
    if (building) og_ready_ = true;

    out.truth.og_assigned = std::move(assigned);
    out.truth.og_xchain = std::move(chain);
    for (const auto& [k, v] : og_gstar_cache_) out.truth.og_gstar[k] = {v};
}

// ---------------------------------------------------------------------------
// Quantile-quantile oracle
// ---------------------------------------------------------------------------

// Empirical counterfactual quantile map x0(x) = S0^{-1}(S(x)) built from one
// arm's observed and counterfactual samples.
class QqMap {
  public:
    QqMap(std::vector<double> x_samples, std::vector<double> x0_samples)
        : x_(std::move(x_samples)), x0_(std::move(x0_samples)) {
        if (x_.empty() || x0_.empty()) throw EstimationError("qq_oracle: empty arm");
        std::sort(x_.begin(), x_.end());
        std::sort(x0_.begin(), x0_.end());
    }

    double operator()(double v) const {
        // midrank of v in the x sample -> matching quantile of the x0 sample
        const auto lo = std::lower_bound(x_.begin(), x_.end(), v) - x_.begin();
        const auto hi = std::upper_bound(x_.begin(), x_.end(), v) - x_.begin();
        const double rank = 0.5 * (static_cast<double>(lo) + static_cast<double>(hi));
        const double p = rank / static_cast<double>(x_.size());
        const double pos = p * (static_cast<double>(x0_.size()) - 1.0);
        const std::size_t k = static_cast<std::size_t>(
            std::min(std::max(0.0, std::floor(pos)), static_cast<double>(x0_.size()) - 1.0));
        const std::size_t k2 = std::min(k + 1, x0_.size() - 1);
        const double frac = pos - static_cast<double>(k);
        return x0_[k] * (1.0 - frac) + x0_[k2] * std::min(1.0, std::max(0.0, frac));
    }

    std::vector<double> transform(const std::vector<double>& xs) const {
        std::vector<double> out;
        out.reserve(xs.size());
        for (double v : xs) out.push_back((*this)(v));
        return out;
    }

  private:
    std::vector<double> x_;
    std::vector<double> x0_;
};

// Builds the per-arm empirical map and KS-checks that transformed observed
// times match the counterfactual sample.
inline KsResult qq_oracle(const std::vector<double>& x_given_a,
                          const std::vector<double>& x0_given_a) {
    QqMap map(x_given_a, x0_given_a);
    return ks_two_sample(map.transform(x_given_a), x0_given_a);
}

}  // namespace gsnm
