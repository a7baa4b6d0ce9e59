// Observed-data model: person-month records, subject histories, derived
// exposures over the running BMI maximum, timescale coarsening, and masking of
// intractably confounded subgroups.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gsnm/common.hpp"

namespace gsnm {

// One subject at one month. `month` runs 0..K+1; `bmi` is recorded just before
// the month starts. After death every field other than `event_time`,
// `utility` and the id carries the zero convention.
struct PersonMonthRecord {
    std::string subject_id;
    int month = 0;
    double bmi = 0.0;
    std::vector<double> covariates;
    bool alive = true;
    std::optional<double> event_time;  // X, present iff X <= month
};

// Packed per-subject history. Vectors are indexed by month 0..horizon.
struct Subject {
    std::string id;
    std::vector<double> bmi;                  // size horizon+1
    std::vector<std::vector<double>> cov;     // size horizon+1, each n_cov wide
    std::vector<unsigned char> alive;         // size horizon+1
    std::optional<double> event_time;         // X = min(T, D); absent iff censored
    bool censored = false;
    double utility = 0.0;

    bool alive_at(int m) const { return alive[static_cast<std::size_t>(m)] != 0; }
};

struct Cohort {
    int horizon = 0;  // K+1
    int n_cov = 0;
    std::vector<Subject> subjects;

    std::size_t size() const { return subjects.size(); }
};

// Exposure quantities derived from a BMI history; all vectors sized horizon
// (months 0..K).
struct DerivedExposure {
    std::vector<double> a;        // A(m) = [BMI(m+1) - BMI_max(m)]_+ gated on xi
    std::vector<double> bmi_max;  // running maximum through month m
    std::vector<unsigned char> xi;
    std::vector<double> a_star;   // raw month-over-month BMI change
};

// --------------------------------------------------------------------------
// derive_exposure
// --------------------------------------------------------------------------

inline DerivedExposure derive_exposure(const Subject& s, int horizon) {
    DerivedExposure d;
    const std::size_t h = static_cast<std::size_t>(horizon);
    if (s.bmi.size() != h + 1 || s.alive.size() != h + 1)
        throw DataError("derive_exposure: subject " + s.id + " has wrong record count");
    d.a.assign(h, 0.0);
    d.bmi_max.assign(h, 0.0);
    d.xi.assign(h, 0);
    d.a_star.assign(h, 0.0);
    double running_max = -kInf;
    for (std::size_t m = 0; m < h; ++m) {
        if (s.alive[m]) {
            if (std::isnan(s.bmi[m]))
                throw DataError("derive_exposure: missing BMI for subject " + s.id +
                                " at month " + std::to_string(m));
            running_max = std::max(running_max, s.bmi[m]);
        }
        d.bmi_max[m] = (running_max == -kInf) ? 0.0 : running_max;
        if (!s.alive[m] || !s.alive[m + 1]) continue;  // death convention: A=0, xi=0
        if (std::isnan(s.bmi[m + 1]))
            throw DataError("derive_exposure: missing BMI for subject " + s.id +
                            " at month " + std::to_string(m + 1));
        d.a_star[m] = s.bmi[m + 1] - s.bmi[m];
        if (s.bmi[m + 1] >= running_max) {
            d.xi[m] = 1;
            d.a[m] = s.bmi[m + 1] - running_max;
        }
    }
    return d;
}

inline std::vector<DerivedExposure> derive_exposure(const Cohort& c) {
    std::vector<DerivedExposure> out;
    out.reserve(c.subjects.size());
    for (const auto& s : c.subjects) out.push_back(derive_exposure(s, c.horizon));
    return out;
}

// --------------------------------------------------------------------------
// extract_event_time
// --------------------------------------------------------------------------

struct EventTime {
    std::optional<double> x;
    bool censored = false;
};

// X = min(T, D), censored when it exceeds the end of follow-up. A diagnosis
// marker recorded in the months after a death is flagged by validate(); here
// a later diagnosis time simply loses the min.
inline EventTime extract_event_time(std::optional<double> death_time,
                                    std::optional<double> diagnosis_time, double horizon,
                                    std::optional<int> diagnosis_recorded_month = std::nullopt) {
    if (death_time && diagnosis_recorded_month &&
        static_cast<double>(*diagnosis_recorded_month) > *death_time)
        throw DataError("extract_event_time: diagnosis recorded after death");
    EventTime ev;
    std::optional<double> x;
    if (death_time && diagnosis_time)
        x = std::min(*death_time, *diagnosis_time);
    else if (death_time)
        x = death_time;
    else if (diagnosis_time)
        x = diagnosis_time;
    if (x && *x <= horizon)
        ev.x = x;
    else
        ev.censored = true;
    return ev;
}

// --------------------------------------------------------------------------
// coarsen
// --------------------------------------------------------------------------

// Rebases the analysis timescale to every factor-th month. BMI and covariates
// are subsampled at block starts, the event time is converted to coarse units,
// and a trailing partial block is dropped. Events falling in a dropped tail
// become censored at the coarse horizon.
inline Cohort coarsen(const Cohort& c, int factor) {
    if (factor < 1) throw ConfigError("coarsen: factor must be >= 1");
    if (factor == 1) return c;
    const int coarse_h = c.horizon / factor;
    if (coarse_h < 1) throw ConfigError("coarsen: factor exceeds the horizon");
    Cohort out;
    out.horizon = coarse_h;
    out.n_cov = c.n_cov;
    out.subjects.reserve(c.subjects.size());
    const double kept = static_cast<double>(coarse_h) * factor;
    for (const auto& s : c.subjects) {
        Subject t;
        t.id = s.id;
        t.utility = s.utility;
        t.bmi.resize(static_cast<std::size_t>(coarse_h) + 1);
        t.cov.resize(static_cast<std::size_t>(coarse_h) + 1);
        t.alive.resize(static_cast<std::size_t>(coarse_h) + 1);
        for (int m = 0; m <= coarse_h; ++m) {
            const std::size_t src = static_cast<std::size_t>(m) * factor;
            t.bmi[m] = s.bmi[src];
            t.cov[m] = s.cov[src];
            t.alive[m] = s.alive[src];
        }
        if (s.event_time && *s.event_time <= kept) {
            t.event_time = *s.event_time / factor;
            t.censored = false;
        } else {
            t.event_time.reset();
            t.censored = true;
        }
        out.subjects.push_back(std::move(t));
    }
    return out;
}

// --------------------------------------------------------------------------
// mask_intractable
// --------------------------------------------------------------------------

// Declarative predicate over (month, covariates, bmi, age). Age is derived
// from the month index (+18 years at month 0).
struct MaskRule {
    enum class Field { age, bmi, month, covariate, diagnosed, event_window };
    enum class Op { lt, le, gt, ge };
    Field field = Field::age;
    Op op = Op::gt;
    double threshold = 0.0;
    int cov_index = 0;      // for Field::covariate
    double window = 0.0;    // for Field::event_window: IN(m)=1 iff m < X < m+window

    bool applies(const Subject& s, int m) const {
        switch (field) {
            case Field::age: return compare(18.0 + static_cast<double>(m) / 12.0);
            case Field::bmi: return compare(s.bmi[static_cast<std::size_t>(m)]);
            case Field::month: return compare(static_cast<double>(m));
            case Field::covariate: {
                const auto& row = s.cov[static_cast<std::size_t>(m)];
                if (cov_index < 0 || cov_index >= static_cast<int>(row.size()))
                    throw ConfigError("mask rule references missing covariate index " +
                                      std::to_string(cov_index));
                return compare(row[static_cast<std::size_t>(cov_index)]);
            }
            case Field::diagnosed:
                return s.event_time && *s.event_time < m && s.alive_at(m);
            case Field::event_window:
                return s.event_time && m < *s.event_time && *s.event_time < m + window;
        }
        return false;
    }

  private:
    bool compare(double v) const {
        switch (op) {
            case Op::lt: return v < threshold;
            case Op::le: return v <= threshold;
            case Op::gt: return v > threshold;
            case Op::ge: return v >= threshold;
        }
        return false;
    }
};

struct SubgroupMask {
    std::vector<MaskRule> rules;

    bool in(const Subject& s, int m) const {
        for (const auto& r : rules)
            if (r.applies(s, m)) return true;
        return false;
    }
};

// Per-subject IN(m) flags, months 0..K.
inline std::vector<std::vector<unsigned char>> in_flags(const Cohort& c,
                                                        const SubgroupMask& mask) {
    std::vector<std::vector<unsigned char>> flags(c.subjects.size());
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
        flags[i].assign(static_cast<std::size_t>(c.horizon), 0);
        for (int m = 0; m < c.horizon; ++m)
            flags[i][static_cast<std::size_t>(m)] = mask.in(c.subjects[i], m) ? 1 : 0;
    }
    return flags;
}

// Masked views: (A, xi) where IN(m)=0, (0, 0) where IN(m)=1. Leaves the
// cohort and the plain exposures untouched.
inline std::vector<DerivedExposure> mask_intractable(const Cohort& c,
                                                     const SubgroupMask& mask) {
    auto exposures = derive_exposure(c);
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
        for (int m = 0; m < c.horizon; ++m) {
            if (mask.in(c.subjects[i], m)) {
                exposures[i].a[static_cast<std::size_t>(m)] = 0.0;
                exposures[i].xi[static_cast<std::size_t>(m)] = 0;
            }
        }
    }
    return exposures;
}

// --------------------------------------------------------------------------
// validate
// --------------------------------------------------------------------------

struct ValidationEntry {
    std::string subject;
    int month = -1;
    std::string kind;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationEntry> entries;
    bool clean() const { return entries.empty(); }

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& e : entries) {
            os << e.subject << " month " << e.month << " [" << e.kind << "] " << e.detail
               << '\n';
        }
        return os.str();
    }
};

inline ValidationReport validate(const Cohort& c) {
    ValidationReport rep;
    auto add = [&rep](const std::string& id, int m, const std::string& kind,
                      const std::string& detail) {
        rep.entries.push_back({id, m, kind, detail});
    };
    const std::size_t h = static_cast<std::size_t>(c.horizon);
    for (const auto& s : c.subjects) {
        if (s.bmi.size() != h + 1 || s.alive.size() != h + 1 || s.cov.size() != h + 1) {
            add(s.id, -1, "gap", "expected " + std::to_string(h + 1) + " contiguous months");
            continue;
        }
        if (std::isnan(s.utility)) add(s.id, -1, "utility", "missing utility");
        if (s.event_time.has_value() == s.censored)
            add(s.id, -1, "event", "event_time must be present exactly when uncensored");
        if (s.event_time && (*s.event_time <= 0.0 || *s.event_time > c.horizon))
            add(s.id, -1, "event", "event_time outside (0, horizon]");
        bool dead = false;
        for (std::size_t m = 0; m <= h; ++m) {
            if (static_cast<int>(s.cov[m].size()) != c.n_cov)
                add(s.id, static_cast<int>(m), "cov", "covariate width mismatch");
            if (dead && s.alive[m]) add(s.id, static_cast<int>(m), "alive", "alive after death");
            if (!dead && !s.alive[m]) {
                dead = true;
                if (!s.event_time)
                    add(s.id, static_cast<int>(m), "event", "death without event_time");
                else if (*s.event_time > static_cast<double>(m))
                    add(s.id, static_cast<int>(m), "event", "death precedes recorded X");
            }
            if (!s.alive[m]) {
                // Zero convention after death.
                if (s.bmi[m] != 0.0)
                    add(s.id, static_cast<int>(m), "post-death", "nonzero BMI after death");
                for (double v : s.cov[m])
                    if (v != 0.0) {
                        add(s.id, static_cast<int>(m), "post-death",
                            "nonzero covariate after death");
                        break;
                    }
            } else {
                if (std::isnan(s.bmi[m]))
                    add(s.id, static_cast<int>(m), "bmi", "missing BMI in alive month");
                else if (s.bmi[m] < 0.0)
                    add(s.id, static_cast<int>(m), "bmi", "negative BMI");
            }
        }
    }
    return rep;
}

}  // namespace gsnm
