#pragma once

#include "ham/estimators.hpp"

#include <algorithm>
#include <optional>

namespace ham {

/// Trace and norm terms of the MSE family at one shrinkage vector.
///
/// With S = sum pi_j W_j, V_j = W_j^{-1} and T = S^{-1}(sum pi_j^2 W_j)S^{-1}:
///   tr_cov = tr(S^{-1}) sum pi_j^2 - sum pi_j tr(V_j)
///   tr_var = sum pi_i^2 { tr(T) - 2 pi_i tr(S^{-1}) + tr(V_i) }
///   bias   = sum pi_i^2 || theta(b) - b_i ||^2
struct RiskTerms {
    double tr_cov = 0.0;
    double tr_var = 0.0;
    double bias_norm2_hat = 0.0;
    std::optional<double> bias_norm2_true;
    double tr_var_mle = 0.0;
};

namespace detail {

inline double weighted_bias_norm2(const MixingStructure& mix, const Vector& stacked) {
    const Vector center = mix.apply_a(stacked);
    const int p = mix.p();
    double total = 0.0;
    for (int j = 0; j < mix.k(); ++j) {
        const double pj = mix.pi()(j);
        total += pj * pj * (center - stacked.segment(j * p, p)).squaredNorm();
    }
    return total;
}

}  // namespace detail

inline RiskTerms risk_terms(const MetaProblem& problem, const ShrinkageVector& pi,
                            const std::optional<Vector>& beta_true = std::nullopt) {
    RiskTerms terms;
    terms.tr_var_mle = problem.tr_mle_cov();
    if (beta_true && beta_true->size() != problem.dim()) throw InputError("beta_true has wrong length");
    if (pi.size() != problem.k()) throw InputError("shrinkage vector length differs from k");
    if (pi.all_zero()) {
        if (beta_true) terms.bias_norm2_true = 0.0;
        return terms;
    }
    const MixingStructure mix(problem, pi);
    const double tr_s_inv = mix.pooled_inverse().trace();
    const double tr_t = mix.mixed_variance().trace();
    double sum_pi2 = 0.0;
    double sum_pi_trv = 0.0;
    double tr_var = 0.0;
    for (int j = 0; j < problem.k(); ++j) {
        const double pj = pi[j];
        const double trv = problem.mle_cov(j).trace();
        sum_pi2 += pj * pj;
        sum_pi_trv += pj * trv;
        tr_var += pj * pj * (tr_t - 2.0 * pj * tr_s_inv + trv);
    }
    terms.tr_cov = tr_s_inv * sum_pi2 - sum_pi_trv;
    terms.tr_var = std::max(0.0, tr_var);
    terms.bias_norm2_hat = detail::weighted_bias_norm2(mix, problem.stacked_beta_tilde());
    if (beta_true) terms.bias_norm2_true = detail::weighted_bias_norm2(mix, *beta_true);
    return terms;
}

/// Exact MSE of beta_hat(pi) for known beta.
inline double true_mse(const RiskTerms& t) {
    if (!t.bias_norm2_true) throw InputError("true_mse requires beta_true");
    return *t.bias_norm2_true + t.tr_var + 2.0 * t.tr_cov + t.tr_var_mle;
}

inline double true_mse(const MetaProblem& problem, const ShrinkageVector& pi, const Vector& beta_true) {
    return true_mse(risk_terms(problem, pi, beta_true));
}

/// MSE(c) = a c^2 + b c + constant along a ray.
struct QuadraticInC {
    double a = 0.0;
    double b = 0.0;
    double constant = 0.0;

    double operator()(double c) const { return (a * c + b) * c + constant; }
};

inline QuadraticInC mse_in_c(const MetaProblem& problem, const RayScale& ray, const Vector& beta_true) {
    const RiskTerms t = risk_terms(problem, ShrinkageVector(ray.pi_r), beta_true);
    return {t.tr_var + *t.bias_norm2_true, 2.0 * t.tr_cov, t.tr_var_mle};
}

/// Clamped optimum with its unclamped ratio kept for diagnostics.
struct ScaleOptimum {
    double value = 0.0;
    double unclamped = 0.0;
};

inline bool is_degenerate_ray(const Vector& pi_r) {
    int ones = 0;
    int nonzero = 0;
    for (Eigen::Index j = 0; j < pi_r.size(); ++j) {
        if (pi_r(j) >= 1.0 - 1e-12) ++ones;
        if (pi_r(j) >= 1e-12) ++nonzero;
    }
    return ones == 1 && nonzero == 1;
}

/// Optimal borrowing scale along pi_r. Throws when the ray reproduces the MLE.
inline ScaleOptimum c_star(const MetaProblem& problem, const Vector& pi_r, const Vector& beta_true) {
    if (is_degenerate_ray(pi_r)) throw NumericError("degenerate ray: estimator equals MLE");
    const RiskTerms t = risk_terms(problem, ShrinkageVector(pi_r), beta_true);
    const double denom = t.tr_var + *t.bias_norm2_true;
    if (!(denom > 0.0)) throw NumericError("degenerate ray: estimator equals MLE");
    const double ratio = -t.tr_cov / denom;
    return {std::clamp(ratio, 0.0, 1.0), ratio};
}

/// MSE-optimal common shrinkage pi_j = pi.
inline ScaleOptimum pi_star_equal(const MetaProblem& problem, const Vector& beta) {
    if (problem.k() < 2) throw NumericError("pi_star_equal requires k >= 2");
    const RiskTerms t = risk_terms(problem, ShrinkageVector::constant(problem.k(), 1.0), beta);
    const double denom = t.tr_var + *t.bias_norm2_true;
    if (!(denom > 0.0)) throw NumericError("pi_star_equal: zero denominator");
    const double ratio = -t.tr_cov / denom;
    return {std::clamp(ratio, 0.0, 1.0), ratio};
}

/// c = max_j pi_j, pi_r = pi / c.
inline RayScale decompose(const ShrinkageVector& pi) {
    if (pi.all_zero()) throw NumericError("cannot decompose pi = 0");
    RayScale r;
    r.c = pi.values().maxCoeff();
    r.pi_r = pi.values() / r.c;
    for (Eigen::Index j = 0; j < r.pi_r.size(); ++j) r.pi_r(j) = std::min(r.pi_r(j), 1.0);
    return r;
}

/// Plug-in MSE estimate (beta_tilde in place of beta).
inline double bmse(const RiskTerms& t) {
    return t.bias_norm2_hat + t.tr_var + 2.0 * t.tr_cov + t.tr_var_mle;
}
inline double bmse(const MetaProblem& problem, const ShrinkageVector& pi) { return bmse(risk_terms(problem, pi)); }

/// Unbiased MSE estimate.
inline double umse(const RiskTerms& t) { return t.bias_norm2_hat + 2.0 * t.tr_cov + t.tr_var_mle; }
inline double umse(const MetaProblem& problem, const ShrinkageVector& pi) { return umse(risk_terms(problem, pi)); }
inline double umse(const MetaProblem& problem, const RayScale& ray) {
    const RiskTerms t = risk_terms(problem, ShrinkageVector(ray.pi_r));
    return ray.c * ray.c * t.bias_norm2_hat + 2.0 * ray.c * t.tr_cov + t.tr_var_mle;
}

/// Sign applied to the correction term of the pseudo-MSE.
enum class PseudoSign {
    Plus,   // + 2 b tr_cov / (tr_var + b); minimizer along a ray is the BMSE root
    Minus,  // - 2 b tr_cov / (tr_var + b)
};

/// Bias-corrected selection objective
///   O(pi) = b + 2 b tr_cov / (tr_var + b),  b = ||Pi B beta_tilde||^2.
inline double pseudo_mse(const RiskTerms& t, PseudoSign sign = PseudoSign::Plus) {
    const double b = t.bias_norm2_hat;
    const double denom = t.tr_var + b;
    if (!(denom > 0.0)) return 0.0;
    const double correction = 2.0 * b * t.tr_cov / denom;
    return sign == PseudoSign::Plus ? b + correction : b - correction;
}

inline double pseudo_mse(const MetaProblem& problem, const ShrinkageVector& pi,
                         PseudoSign sign = PseudoSign::Plus) {
    return pseudo_mse(risk_terms(problem, pi), sign);
}

}  // namespace ham
