// Maximum-weight-gain dietary regimes: per-month allowed gains over the
// running BMI maximum, residual exposures, and regime eligibility indicators.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"

namespace gsnm {

// Threshold predicate on the measured history at month k, used by dynamic
// regime rules.
struct RegimePredicate {
    enum class Field { covariate, bmi, month, prior_gain };
    enum class Op { lt, le, gt, ge };
    Field field = Field::covariate;
    Op op = Op::ge;
    int cov_index = 0;
    double threshold = 0.0;

    bool holds(const Subject& s, const std::vector<double>& a_hist, int k) const {
        double v = 0.0;
        switch (field) {
            case Field::covariate: {
                const auto& row = s.cov[static_cast<std::size_t>(k)];
                if (cov_index < 0 || cov_index >= static_cast<int>(row.size()))
                    throw ConfigError("regime rule references missing covariate index " +
                                      std::to_string(cov_index));
                v = row[static_cast<std::size_t>(cov_index)];
                break;
            }
            case Field::bmi: v = s.bmi[static_cast<std::size_t>(k)]; break;
            case Field::month: v = static_cast<double>(k); break;
            case Field::prior_gain: {
                // total derived gain before k
                double tot = 0.0;
                for (int j = 0; j < k; ++j) tot += a_hist[static_cast<std::size_t>(j)];
                v = tot;
                break;
            }
        }
        switch (op) {
            case Op::lt: return v < threshold;
            case Op::le: return v <= threshold;
            case Op::gt: return v > threshold;
            case Op::ge: return v >= threshold;
        }
        return false;
    }
};

// Allowed-gain functions g_k(a-history, l-history) >= 0. Static regimes carry
// a constant (or per-month) gain; dynamic regimes evaluate ordered
// (predicate, gain) rules against measured history, first match wins.
struct Regime {
    enum class Kind { static_gain, dynamic };
    Kind kind = Kind::static_gain;
    std::vector<double> gains;  // static: size 1 (constant) or one per month

    struct Rule {
        RegimePredicate predicate;
        double gain = 0.0;
    };
    std::vector<Rule> rules;    // dynamic, ordered
    double default_gain = 0.0;  // dynamic, when no rule matches

    static Regime zero() { return constant(0.0); }

    static Regime constant(double g) {
        Regime r;
        r.kind = Kind::static_gain;
        r.gains = {g};
        return r;
    }

    double allowed_gain(const Subject& s, const std::vector<double>& a_hist, int k) const {
        double g = 0.0;
        if (kind == Kind::static_gain) {
            if (gains.empty()) throw ConfigError("static regime has no gain values");
            g = gains.size() == 1 ? gains[0]
                                  : gains.at(static_cast<std::size_t>(k));
        } else {
            g = default_gain;
            for (const auto& rule : rules) {
                if (rule.predicate.holds(s, a_hist, k)) {
                    g = rule.gain;
                    break;
                }
            }
        }
        if (g < 0.0) throw ConfigError("regime allowed gain must be nonnegative");
        return g;
    }
};

// A_Delta^g(m) = [BMI(m+1) - (BMI_max(m) + g_m)]_+ ; zero everywhere iff the
// observed data are consistent with following the regime from time 0.
inline std::vector<double> residual_exposure(const Subject& s, const DerivedExposure& d,
                                             const Regime& regime, int horizon) {
    std::vector<double> out(static_cast<std::size_t>(horizon), 0.0);
    for (int m = 0; m < horizon; ++m) {
        const std::size_t mm = static_cast<std::size_t>(m);
        if (!s.alive[mm] || !s.alive[mm + 1]) continue;
        const double g = regime.allowed_gain(s, d.a, m);
        out[mm] = positive_part(s.bmi[mm + 1] - (d.bmi_max[mm] + g));
    }
    return out;
}

// Xi^g(m) = 1 iff BMI(m+1) >= BMI_max(m) + g_m.
inline std::vector<unsigned char> regime_indicators(const Subject& s, const DerivedExposure& d,
                                                    const Regime& regime, int horizon) {
    std::vector<unsigned char> out(static_cast<std::size_t>(horizon), 0);
    for (int m = 0; m < horizon; ++m) {
        const std::size_t mm = static_cast<std::size_t>(m);
        if (!s.alive[mm] || !s.alive[mm + 1]) continue;
        const double g = regime.allowed_gain(s, d.a, m);
        if (s.bmi[mm + 1] >= d.bmi_max[mm] + g) out[mm] = 1;
    }
    return out;
}

}  // namespace gsnm
