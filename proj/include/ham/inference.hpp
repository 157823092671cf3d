#pragma once

#include "ham/estimators.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace ham {

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against erfc, accurate to ~1e-15 in the central range.
inline double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0)) {
        if (prob == 0.0) return -std::numeric_limits<double>::infinity();
        if (prob == 1.0) return std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double x = 0.0;
    if (prob < plow) {
        const double q = std::sqrt(-2.0 * std::log(prob));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (prob <= 1.0 - plow) {
        const double q = prob - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - prob));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - prob;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Asymptotic covariance
// ---------------------------------------------------------------------------

/// I + c Pi_r {K A(pi_r) - I}, assembled densely (pk x pk).
inline Matrix gradient_expectation(const MetaProblem& problem, const RayScale& ray) {
    const int pk = problem.dim();
    Matrix g = Matrix::Identity(pk, pk);
    if (ray.c == 0.0) return g;
    const ShrinkageVector pi(ray.c * ray.pi_r);
    const MixingStructure mix(problem, ShrinkageVector(ray.pi_r));
    const int p = problem.p();
    for (int i = 0; i < problem.k(); ++i) {
        for (int l = 0; l < problem.k(); ++l) g.block(i * p, l * p, p, p) += pi[i] * mix.a_block(l);
        g.block(i * p, i * p, p, p) -= pi[i] * Matrix::Identity(p, p);
    }
    return g;
}

/// G V G' in block form. With S, T from the mixing structure at pi = c pi_r:
///   block(i, m) = [i = m](1 - pi_i)^2 V_i
///               + pi_i pi_m {(1 - pi_i) + (1 - pi_m)} S^{-1} + pi_i pi_m T.
inline Matrix ham_covariance(const MetaProblem& problem, const RayScale& ray) {
    const int p = problem.p();
    const int k = problem.k();
    Matrix cov = Matrix::Zero(problem.dim(), problem.dim());
    if (ray.c == 0.0) {
        for (int j = 0; j < k; ++j) cov.block(j * p, j * p, p, p) = problem.mle_cov(j);
        return cov;
    }
    const Vector pi = ray.c * ray.pi_r;
    const MixingStructure mix(problem, ShrinkageVector(pi));
    const Matrix& s_inv = mix.pooled_inverse();
    const Matrix& t = mix.mixed_variance();
    for (int i = 0; i < k; ++i) {
        for (int m = 0; m < k; ++m) {
            Matrix block = pi(i) * pi(m) * ((2.0 - pi(i) - pi(m)) * s_inv + t);
            if (i == m) block += (1.0 - pi(i)) * (1.0 - pi(i)) * problem.mle_cov(i);
            cov.block(i * p, m * p, p, p) = block;
        }
    }
    return linalg::symmetrize(cov);
}

// ---------------------------------------------------------------------------
// Interval tables
// ---------------------------------------------------------------------------

struct IntervalRow {
    std::string study_id;
    int covariate = 0;
    double estimate = 0.0;
    double se = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double alpha = 0.05;
    double p_value = std::numeric_limits<double>::quiet_NaN();  // NaN when undefined
    bool significant = false;
};

struct IntervalTable {
    double alpha = 0.05;
    std::vector<IntervalRow> rows;
};

/// Wald intervals and two-sided tests from a stacked estimate and covariance.
inline IntervalTable interval_table(const std::vector<std::string>& study_ids, int p, const Vector& estimate,
                                    const Matrix& covariance, double alpha, const Vector& null_value) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    if (estimate.size() != covariance.rows() || null_value.size() != estimate.size())
        throw InputError("interval_table: dimension mismatch");
    const double z = normal_quantile(1.0 - alpha / 2.0);
    IntervalTable table;
    table.alpha = alpha;
    for (Eigen::Index idx = 0; idx < estimate.size(); ++idx) {
        IntervalRow row;
        row.study_id = study_ids[static_cast<std::size_t>(idx / p)];
        row.covariate = static_cast<int>(idx % p);
        row.estimate = estimate(idx);
        row.se = std::sqrt(std::max(0.0, covariance(idx, idx)));
        row.lower = row.estimate - z * row.se;
        row.upper = row.estimate + z * row.se;
        row.alpha = alpha;
        if (row.se > 0.0) {
            const double stat = (row.estimate - null_value(idx)) / row.se;
            row.p_value = 2.0 * normal_cdf(-std::abs(stat));
            row.significant = null_value(idx) < row.lower || null_value(idx) > row.upper;
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline IntervalTable confidence_intervals(const HamFit& fit, const std::vector<std::string>& study_ids, int p,
                                          double alpha) {
    return interval_table(study_ids, p, fit.beta_hat, fit.covariance, alpha, Vector::Zero(fit.beta_hat.size()));
}

inline IntervalTable wald_tests(const HamFit& fit, const std::vector<std::string>& study_ids, int p,
                                const Vector& null_value, double alpha = 0.05) {
    return interval_table(study_ids, p, fit.beta_hat, fit.covariance, alpha, null_value);
}

inline void write_csv(std::ostream& out, const IntervalTable& table,
                      const std::vector<std::string>& covariate_names = {}) {
    out << "study_id,covariate,estimate,se,lower,upper,p_value,significant\n";
    out.precision(10);
    for (const auto& r : table.rows) {
        out << r.study_id << ',';
        if (static_cast<std::size_t>(r.covariate) < covariate_names.size())
            out << covariate_names[static_cast<std::size_t>(r.covariate)];
        else
            out << r.covariate;
        out << ',' << r.estimate << ',' << r.se << ',' << r.lower << ',' << r.upper << ',';
        if (std::isnan(r.p_value))
            out << "NA";
        else
            out << r.p_value;
        out << ',' << (r.significant ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Heterogeneity diagnostic
// ---------------------------------------------------------------------------

struct HeterogeneityStats {
    double q = 0.0;
    int df = 0;
    double i_squared = 0.0;
};

/// Cochran's Q over the stacked coordinates against the fixed-effect pool.
/// Descriptive only.
inline HeterogeneityStats heterogeneity(const MetaProblem& problem) {
    if (problem.k() < 2) throw NumericError("I^2 is undefined for a single study");
    const Vector fe = fixed_effect(problem);
    HeterogeneityStats h;
    for (int j = 0; j < problem.k(); ++j) {
        const Vector d = problem.study(j).beta_tilde - fe;
        h.q += d.dot(problem.precision(j) * d);
    }
    h.df = problem.p() * (problem.k() - 1);
    h.i_squared = h.q > 0.0 ? std::max(0.0, (h.q - h.df) / h.q) : 0.0;
    return h;
}

inline double i_squared(const MetaProblem& problem) { return heterogeneity(problem).i_squared; }

}  // namespace ham
