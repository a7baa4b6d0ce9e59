// Numerical statistics used across the estimators: chi-square tail
// probabilities, Kolmogorov-Smirnov tests, least squares and logistic fits.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gsnm/common.hpp"

namespace gsnm {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

// Regularized lower incomplete gamma P(a, x); series for x < a+1, continued
// fraction otherwise.
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Lentz continued fraction for Q(a,x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    double q = std::exp(-x + a * std::log(x) - gln) * h;
    return 1.0 - q;
}

// Upper tail of the chi-square distribution with k degrees of freedom.
inline double chi2_sf(double x, int k) {
    if (x <= 0.0) return 1.0;
    return 1.0 - gamma_p(0.5 * k, 0.5 * x);
}

// Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 l^2).
inline double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        double term = 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test with asymptotic p-value.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    double ne = std::sqrt(na * nb / (na + nb));
    KsResult r;
    r.statistic = d;
    r.p_value = kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d);
    return r;
}

// ---------------------------------------------------------------------------
// Descriptive helpers
// ---------------------------------------------------------------------------

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (static_cast<double>(v.size()) - 1.0));
}

// Standard error of the mean.
inline double mc_se(const std::vector<double>& v) {
    return sample_sd(v) / std::sqrt(static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

struct OlsFit {
    Eigen::VectorXd coef;
    bool singular = false;
    std::vector<int> collinear_columns;  // populated when singular
};

// Least squares via column-pivoted QR; flags rank deficiency instead of
// silently projecting.
inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    OlsFit fit;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
        fit.singular = true;
        // Columns not among the first rank() pivots are the dependent ones.
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < x.cols(); ++k)
            fit.collinear_columns.push_back(static_cast<int>(perm[k]));
    }
    fit.coef = qr.solve(y);
    return fit;
}

struct LogisticFit {
    Eigen::VectorXd coef;
    bool converged = false;
    int iterations = 0;
};

// Newton-Raphson logistic regression of y in {0,1} on x.
inline LogisticFit logistic_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                int max_iter = 50, double tol = 1e-10) {
    LogisticFit fit;
    const Eigen::Index p = x.cols();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd eta = x * beta;
        Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
        // Levenberg-style ridge keeps the step defined under separation.
        Eigen::MatrixXd h = x.transpose() * w.asDiagonal() * x;
        h.diagonal().array() += 1e-10;
        Eigen::VectorXd g = x.transpose() * (y - mu);
        Eigen::VectorXd step = h.ldlt().solve(g);
        beta += step;
        fit.iterations = it + 1;
        if (step.lpNorm<Eigen::Infinity>() < tol) {
            fit.converged = true;
            break;
        }
    }
    fit.coef = beta;
    return fit;
}

inline double logistic_prob(const Eigen::VectorXd& coef, const Eigen::VectorXd& row) {
    double eta = coef.dot(row);
    return 1.0 / (1.0 + std::exp(-eta));
}

}  // namespace gsnm
