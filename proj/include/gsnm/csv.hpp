// Person-month CSV format:
//   subject_id,month,bmi,alive,event_time,utility,cov_1..cov_p
// One row per (subject, month); event_time stays empty until the month it
// becomes known; utility is repeated on every row. Doubles are written with
// 17 significant digits so a round trip reproduces values bit-for-bit.
#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsnm/cohort.hpp"
#include "gsnm/common.hpp"

namespace gsnm {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string cohort_to_csv(const Cohort& c) {
    std::ostringstream os;
    os << "subject_id,month,bmi,alive,event_time,utility";
    for (int j = 0; j < c.n_cov; ++j) os << ",cov_" << (j + 1);
    os << '\n';
    for (const auto& s : c.subjects) {
        for (int m = 0; m <= c.horizon; ++m) {
            const std::size_t mm = static_cast<std::size_t>(m);
            os << s.id << ',' << m << ',' << format_double(s.bmi[mm]) << ','
               << (s.alive[mm] ? 1 : 0) << ',';
            if (s.event_time && *s.event_time <= static_cast<double>(m))
                os << format_double(*s.event_time);
            os << ',' << format_double(s.utility);
            for (double v : s.cov[mm]) os << ',' << format_double(v);
            os << '\n';
        }
    }
    return os.str();
}

inline void write_cohort_csv(const Cohort& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << cohort_to_csv(c);
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}
}  // namespace detail

inline Cohort cohort_from_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("csv: empty input");
    auto header = detail::split_csv_line(line);
    if (header.size() < 6 || header[0] != "subject_id" || header[1] != "month" ||
        header[2] != "bmi" || header[3] != "alive" || header[4] != "event_time" ||
        header[5] != "utility")
        throw DataError("csv: unexpected header");
    const int n_cov = static_cast<int>(header.size()) - 6;

    struct Row {
        int month;
        double bmi;
        bool alive;
        std::optional<double> x;
        double utility;
        std::vector<double> cov;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> by_subject;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (static_cast<int>(f.size()) != 6 + n_cov)
            throw DataError("csv: wrong field count at line " + std::to_string(lineno));
        Row r;
        try {
            r.month = std::stoi(f[1]);
            r.bmi = std::stod(f[2]);
            r.alive = std::stoi(f[3]) != 0;
            if (!f[4].empty()) r.x = std::stod(f[4]);
            r.utility = std::stod(f[5]);
            r.cov.reserve(static_cast<std::size_t>(n_cov));
            for (int j = 0; j < n_cov; ++j) r.cov.push_back(std::stod(f[6 + j]));
        } catch (const std::exception&) {
            throw DataError("csv: parse failure at line " + std::to_string(lineno));
        }
        auto it = by_subject.find(f[0]);
        if (it == by_subject.end()) {
            order.push_back(f[0]);
            it = by_subject.emplace(f[0], std::vector<Row>{}).first;
        }
        it->second.push_back(std::move(r));
    }
    if (order.empty()) throw DataError("csv: no data rows");

    Cohort c;
    c.n_cov = n_cov;
    c.horizon = static_cast<int>(by_subject[order[0]].size()) - 1;
    if (c.horizon < 1) throw DataError("csv: horizon must be at least 1");
    for (const auto& id : order) {
        auto& rows = by_subject[id];
        if (static_cast<int>(rows.size()) != c.horizon + 1)
            throw DataError("csv: subject " + id + " does not cover months 0.." +
                            std::to_string(c.horizon));
        Subject s;
        s.id = id;
        s.bmi.resize(rows.size());
        s.cov.resize(rows.size());
        s.alive.resize(rows.size());
        for (std::size_t m = 0; m < rows.size(); ++m) {
            if (rows[m].month != static_cast<int>(m))
                throw DataError("csv: subject " + id + " has a gap at month " +
                                std::to_string(m));
            s.bmi[m] = rows[m].bmi;
            s.cov[m] = rows[m].cov;
            s.alive[m] = rows[m].alive ? 1 : 0;
            if (rows[m].x) s.event_time = rows[m].x;
        }
        s.utility = rows.back().utility;
        s.censored = !s.event_time.has_value();
        c.subjects.push_back(std::move(s));
    }
    return c;
}

inline Cohort read_cohort_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    return cohort_from_csv(f);
}

}  // namespace gsnm
