#pragma once

#include "ham/model.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ham {

/// Stacked MLE and its block-diagonal covariance.
inline std::pair<Vector, Matrix> mle_stack(const MetaProblem& problem) {
    const int p = problem.p();
    Matrix cov = Matrix::Zero(problem.dim(), problem.dim());
    for (int j = 0; j < problem.k(); ++j) cov.block(j * p, j * p, p, p) = problem.mle_cov(j);
    return {problem.stacked_beta_tilde(), cov};
}

/// Inverse-variance weighted pooled estimate.
inline Vector fixed_effect(const MetaProblem& problem) {
    const int p = problem.p();
    Matrix pooled = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    for (int j = 0; j < problem.k(); ++j) {
        pooled += problem.precision(j);
        rhs += problem.precision(j) * problem.study(j).beta_tilde;
    }
    if (!linalg::is_positive_definite(linalg::symmetrize(pooled)))
        throw NumericError("pooled precision is singular");
    return linalg::spd_solve(pooled, rhs);
}

/// A(pi) and B(pi) = K A(pi) - I held as p x p blocks:
/// block j of A is S^{-1} pi_j W_j with S = sum_j pi_j W_j.
class MixingStructure {
public:
    MixingStructure(const MetaProblem& problem, const ShrinkageVector& pi) : pi_(pi.values()) {
        if (pi.size() != problem.k()) throw InputError("shrinkage vector length differs from k");
        if (pi.all_zero()) throw NumericError("all-zero shrinkage: no centroid defined");
        p_ = problem.p();
        Matrix s = Matrix::Zero(p_, p_);
        Matrix s2 = Matrix::Zero(p_, p_);
        for (int j = 0; j < problem.k(); ++j) {
            s += pi_(j) * problem.precision(j);
            s2 += pi_(j) * pi_(j) * problem.precision(j);
        }
        s = linalg::symmetrize(s);
        if (!linalg::is_positive_definite(s)) throw NumericError("weighted pooled precision is singular");
        s_inv_ = linalg::symmetrize(linalg::spd_inverse(s));
        blocks_.reserve(static_cast<std::size_t>(problem.k()));
        for (int j = 0; j < problem.k(); ++j) blocks_.push_back(pi_(j) * s_inv_ * problem.precision(j));
        t_ = linalg::symmetrize(s_inv_ * s2 * s_inv_);
    }

    int k() const { return static_cast<int>(blocks_.size()); }
    int p() const { return p_; }
    const Vector& pi() const { return pi_; }

    /// (sum_j pi_j W_j)^{-1}
    const Matrix& pooled_inverse() const { return s_inv_; }
    /// S^{-1} (sum_j pi_j^2 W_j) S^{-1} = sum_j A_j W_j^{-1} A_j'
    const Matrix& mixed_variance() const { return t_; }
    const Matrix& a_block(int j) const { return blocks_[static_cast<std::size_t>(j)]; }

    /// A v for a stacked pk vector.
    Vector apply_a(const Vector& stacked) const {
        Vector out = Vector::Zero(p_);
        for (int j = 0; j < k(); ++j) out += a_block(j) * stacked.segment(j * p_, p_);
        return out;
    }

    /// B v = K A v - v.
    Vector apply_b(const Vector& stacked) const {
        const Vector mixed = apply_a(stacked);
        Vector out(stacked.size());
        for (int j = 0; j < k(); ++j) out.segment(j * p_, p_) = mixed - stacked.segment(j * p_, p_);
        return out;
    }

    Matrix a_dense() const {
        Matrix a(p_, p_ * k());
        for (int j = 0; j < k(); ++j) a.middleCols(j * p_, p_) = a_block(j);
        return a;
    }

    Matrix b_dense() const {
        const Matrix a = a_dense();
        Matrix b(p_ * k(), p_ * k());
        for (int i = 0; i < k(); ++i) b.middleRows(i * p_, p_) = a;
        b -= Matrix::Identity(p_ * k(), p_ * k());
        return b;
    }

private:
    Vector pi_;
    int p_ = 0;
    Matrix s_inv_;
    Matrix t_;
    std::vector<Matrix> blocks_;
};

inline MixingStructure mixing_matrix(const MetaProblem& problem, const ShrinkageVector& pi) {
    return MixingStructure(problem, pi);
}

/// theta_hat(pi)
inline Vector centroid(const MetaProblem& problem, const ShrinkageVector& pi) {
    return MixingStructure(problem, pi).apply_a(problem.stacked_beta_tilde());
}

/// beta_hat_j(pi) = (1 - pi_j) beta_tilde_j + pi_j theta_hat(pi); the MLE when pi = 0.
inline Vector ham_beta(const MetaProblem& problem, const ShrinkageVector& pi) {
    if (pi.size() != problem.k()) throw InputError("shrinkage vector length differs from k");
    Vector beta = problem.stacked_beta_tilde();
    if (pi.all_zero()) return beta;
    const Vector theta = centroid(problem, pi);
    const int p = problem.p();
    for (int j = 0; j < problem.k(); ++j)
        beta.segment(j * p, p) = (1.0 - pi[j]) * beta.segment(j * p, p) + pi[j] * theta;
    return beta;
}

/// Penalized log-likelihood evaluated from sufficient statistics. The data
/// term is -(RSS_j + (b_j - b~_j)' G_j (b_j - b~_j)) / (2 sigma2_j); RSS_j is
/// taken as 0 when the study does not record it.
inline double objective_value(const MetaProblem& problem, const Vector& beta, const Vector& theta,
                              const ShrinkageVector& pi) {
    const int p = problem.p();
    if (beta.size() != problem.dim() || theta.size() != p || pi.size() != problem.k())
        throw InputError("objective_value: dimension mismatch");
    double value = 0.0;
    for (int j = 0; j < problem.k(); ++j) {
        if (pi[j] >= 1.0) throw NumericError("objective_value: pi_j = 1 gives an infinite penalty");
        const auto& s = problem.study(j);
        const Matrix& w = problem.precision(j);
        const Vector d = beta.segment(j * p, p) - s.beta_tilde;
        const Vector e = beta.segment(j * p, p) - theta;
        value -= 0.5 * s.rss.value_or(0.0) / s.sigma2;
        value -= 0.5 * d.dot(w * d);
        value -= 0.5 * (pi[j] / (1.0 - pi[j])) * e.dot(w * e);
    }
    return value;
}

/// Selected estimate with its inference ingredients.
struct HamFit {
    Vector beta_hat;
    std::optional<Vector> theta_hat;  // absent when pi = 0
    ShrinkageVector pi;
    std::optional<RayScale> ray;
    Matrix gradient;    // d E[beta_hat] / d beta
    Matrix covariance;  // gradient * Var(beta_tilde) * gradient'

    struct Diagnostics {
        double objective = 0.0;
        int iterations = 0;
        int evaluations = 0;
        bool converged = true;
        std::vector<std::string> notes;
    } meta;
};

// ---------------------------------------------------------------------------
// Ridge-like comparator
// ---------------------------------------------------------------------------

struct RidgeFit {
    double lambda = 0.0;
    Vector beta_r;
    Matrix r;  // R(lambda)
};

/// Block-diagonal X' Sigma^-1 X (projected in the subset case).
inline Matrix stacked_precision(const MetaProblem& problem) {
    const int p = problem.p();
    Matrix w = Matrix::Zero(problem.dim(), problem.dim());
    for (int j = 0; j < problem.k(); ++j) w.block(j * p, j * p, p, p) = problem.precision(j);
    return w;
}

/// CC' (x) I_p with CC' = k I - 1 1', the Gram of all pairwise contrasts.
inline Matrix contrast_penalty(int k, int p) {
    const Matrix cct = static_cast<double>(k) * Matrix::Identity(k, k) - Matrix::Ones(k, k);
    Matrix out(k * p, k * p);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) out.block(a * p, b * p, p, p) = cct(a, b) * Matrix::Identity(p, p);
    return out;
}

inline RidgeFit ridge_fit(const MetaProblem& problem, double lambda) {
    if (!(lambda >= 0.0)) throw InputError("ridge lambda must be nonnegative");
    const Matrix w = stacked_precision(problem);
    const Matrix system = w + 2.0 * lambda * contrast_penalty(problem.k(), problem.p());
    Eigen::LLT<Matrix> llt(system);
    if (llt.info() != Eigen::Success) throw NumericError("ridge system is not positive definite");
    RidgeFit fit;
    fit.lambda = lambda;
    fit.r = llt.solve(w);
    fit.beta_r = fit.r * problem.stacked_beta_tilde();
    return fit;
}

}  // namespace ham
