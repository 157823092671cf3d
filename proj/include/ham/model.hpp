#pragma once

#include "ham/linalg.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ham {

/// Denominator used for the per-study error variance.
enum class SigmaConvention {
    Mle,       // RSS / n
    Unbiased,  // RSS / (n - q)
};

/// Per-study sufficient statistics for the shared-covariate coefficients.
struct StudySummary {
    std::string study_id;
    int p = 0;
    int q = 0;
    long n = 0;
    double sigma2 = 0.0;
    Vector beta_tilde;
    Matrix gram_proj;  // X'MX; X'X when q == p
    std::optional<Vector> covariate_sds;
    std::optional<int> intercept_index;
    std::optional<double> rss;  // only needed for absolute objective values
};

inline void validate(const StudySummary& s) {
    auto fail = [&](const std::string& what) {
        throw InputError("study '" + s.study_id + "': " + what);
    };
    if (s.p < 1) fail("p must be >= 1");
    if (s.q < s.p) fail("q must be >= p");
    if (s.n < s.q + 1) fail("n must be >= q + 1");
    if (!(s.sigma2 > 0.0) || !std::isfinite(s.sigma2)) fail("sigma2 must be positive");
    if (s.beta_tilde.size() != s.p) fail("beta_tilde length differs from p");
    if (s.gram_proj.rows() != s.p || s.gram_proj.cols() != s.p) fail("gram_proj is not p x p");
    if (!s.beta_tilde.allFinite() || !s.gram_proj.allFinite()) fail("non-finite entries");
    if (!linalg::is_symmetric(s.gram_proj)) fail("gram_proj is not symmetric");
    double min_eig = 0.0;
    if (!linalg::is_positive_definite(s.gram_proj, &min_eig)) {
        std::ostringstream os;
        os << "gram_proj is not positive definite (smallest eigenvalue " << min_eig << ")";
        fail(os.str());
    }
    if (s.covariate_sds && s.covariate_sds->size() != s.p) fail("covariate_sds length differs from p");
    if (s.intercept_index && (*s.intercept_index < 0 || *s.intercept_index >= s.p))
        fail("intercept_index out of range");
}

/// Validated collection of studies sharing p covariates, with the per-study
/// precision W_j = gram_proj / sigma2 and its inverse cached.
class MetaProblem {
public:
    explicit MetaProblem(std::vector<StudySummary> studies) : studies_(std::move(studies)) {
        if (studies_.empty()) throw InputError("meta problem needs at least one study");
        p_ = studies_.front().p;
        for (const auto& s : studies_) {
            validate(s);
            if (s.p != p_) {
                std::ostringstream os;
                os << "study '" << s.study_id << "': p = " << s.p << " but first study has p = " << p_;
                throw InputError(os.str());
            }
        }
        precision_.reserve(studies_.size());
        mle_cov_.reserve(studies_.size());
        for (const auto& s : studies_) {
            Matrix w = linalg::symmetrize(s.gram_proj / s.sigma2);
            Matrix v = linalg::symmetrize(linalg::spd_inverse(w));
            tr_mle_cov_ += v.trace();
            precision_.push_back(std::move(w));
            mle_cov_.push_back(std::move(v));
        }
    }

    int k() const { return static_cast<int>(studies_.size()); }
    int p() const { return p_; }
    int dim() const { return p_ * k(); }

    const StudySummary& study(int j) const { return studies_[static_cast<std::size_t>(j)]; }
    const std::vector<StudySummary>& studies() const { return studies_; }

    /// W_j
    const Matrix& precision(int j) const { return precision_[static_cast<std::size_t>(j)]; }
    /// W_j^{-1} = Var(beta_tilde_j)
    const Matrix& mle_cov(int j) const { return mle_cov_[static_cast<std::size_t>(j)]; }
    /// tr{(X' Sigma^-1 X)^-1}
    double tr_mle_cov() const { return tr_mle_cov_; }

    Vector stacked_beta_tilde() const {
        Vector out(dim());
        for (int j = 0; j < k(); ++j) out.segment(j * p_, p_) = study(j).beta_tilde;
        return out;
    }

    /// Same studies with beta_tilde replaced by the stacked vector `beta`.
    MetaProblem with_beta_tilde(const Vector& beta) const {
        if (beta.size() != dim()) throw InputError("stacked beta has wrong length");
        std::vector<StudySummary> copy = studies_;
        for (int j = 0; j < k(); ++j) copy[static_cast<std::size_t>(j)].beta_tilde = beta.segment(j * p_, p_);
        return MetaProblem(std::move(copy));
    }

private:
    std::vector<StudySummary> studies_;
    int p_ = 0;
    std::vector<Matrix> precision_;
    std::vector<Matrix> mle_cov_;
    double tr_mle_cov_ = 0.0;
};

/// pi in [0, 1]^k.
class ShrinkageVector {
public:
    ShrinkageVector() = default;
    explicit ShrinkageVector(Vector pi) : pi_(std::move(pi)) {
        for (Eigen::Index j = 0; j < pi_.size(); ++j) {
            if (!(pi_(j) >= 0.0 && pi_(j) <= 1.0))
                throw InputError("shrinkage parameters must lie in [0, 1]");
        }
    }
    static ShrinkageVector constant(int k, double value) {
        return ShrinkageVector(Vector::Constant(k, value));
    }

    const Vector& values() const { return pi_; }
    double operator[](int j) const { return pi_(j); }
    int size() const { return static_cast<int>(pi_.size()); }
    bool all_zero() const { return pi_.size() == 0 || pi_.maxCoeff() <= 0.0; }

private:
    Vector pi_;
};

/// pi = c * pi_r with max(pi_r) = 1.
struct RayScale {
    double c = 0.0;
    Vector pi_r;

    ShrinkageVector recompose() const { return ShrinkageVector(c * pi_r); }
};

// ---------------------------------------------------------------------------
// Raw data and reported covariance entry paths
// ---------------------------------------------------------------------------

inline Vector column_sds(const Matrix& x) {
    const double n = static_cast<double>(x.rows());
    Vector sds(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double mean = x.col(c).mean();
        sds(c) = std::sqrt((x.col(c).array() - mean).square().sum() / (n - 1.0));
    }
    return sds;
}

/// Least squares on [X | Z]; returns the summary for the X coefficients.
inline StudySummary summarize_raw_study(const Matrix& x, const std::optional<Matrix>& z, const Vector& y,
                                        std::string study_id = "study",
                                        SigmaConvention convention = SigmaConvention::Mle,
                                        std::optional<int> intercept_index = std::nullopt) {
    const long n = static_cast<long>(x.rows());
    const int p = static_cast<int>(x.cols());
    const int extra = z ? static_cast<int>(z->cols()) : 0;
    const int q = p + extra;
    if (y.size() != n || (z && z->rows() != n)) throw InputError("study '" + study_id + "': row counts differ");
    if (n <= q) throw InputError("study '" + study_id + "': need n > q");

    Matrix design(n, q);
    design.leftCols(p) = x;
    if (z) design.rightCols(extra) = *z;

    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < q) throw InputError("study '" + study_id + "': design matrix is rank deficient");
    const Vector coef = qr.solve(y);
    const double rss = (y - design * coef).squaredNorm();

    StudySummary s;
    s.study_id = std::move(study_id);
    s.p = p;
    s.q = q;
    s.n = n;
    s.rss = rss;
    s.sigma2 = convention == SigmaConvention::Mle ? rss / static_cast<double>(n)
                                                   : rss / static_cast<double>(n - q);
    s.beta_tilde = coef.head(p);
    Matrix xx = x.transpose() * x;
    if (z) {
        const Matrix xz = x.transpose() * (*z);
        const Matrix zz = z->transpose() * (*z);
        xx -= xz * linalg::spd_solve(zz, xz.transpose());
    }
    s.gram_proj = linalg::symmetrize(xx);
    s.covariate_sds = column_sds(x);
    s.intercept_index = intercept_index;
    return s;
}

/// X'MX from the blocks X'X, X'Z, Z'Z.
inline Matrix gram_from_blocks(const Matrix& xx, const Matrix& xz, const Matrix& zz) {
    if (xz.cols() == 0) return xx;
    return linalg::symmetrize(xx - xz * linalg::spd_solve(zz, xz.transpose()));
}

/// Var(beta_tilde_j) = sigma2 (X'MX)^{-1}, so X'MX = sigma2 * (top-left block)^{-1}.
inline Matrix precision_from_covariance(const Matrix& cov_full, double sigma2, int p) {
    if (cov_full.rows() != cov_full.cols() || cov_full.rows() < p || p < 1)
        throw InputError("cov_full must be square with at least p rows");
    const Matrix block = linalg::symmetrize(cov_full.topLeftCorner(p, p));
    Eigen::FullPivLU<Matrix> lu(block);
    if (!lu.isInvertible()) throw InputError("top-left block of cov_full is singular");
    double min_eig = 0.0;
    if (!linalg::is_positive_definite(block, &min_eig)) throw InputError("top-left block of cov_full is singular");
    return linalg::symmetrize(sigma2 * linalg::spd_inverse(block));
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

enum class StandardizeMode { PerStudy, Pooled };

/// Scale factors s_jl with beta' = s * beta and gram' = D^-1 gram D^-1.
class StandardizationRecord {
public:
    StandardizationRecord() = default;
    explicit StandardizationRecord(std::vector<Vector> scales) : scales_(std::move(scales)) {}

    const Vector& scales(int j) const { return scales_[static_cast<std::size_t>(j)]; }
    int k() const { return static_cast<int>(scales_.size()); }

    StudySummary apply(int j, const StudySummary& s) const {
        const Vector& sc = scales(j);
        StudySummary out = s;
        out.beta_tilde = s.beta_tilde.cwiseProduct(sc);
        const Vector inv = sc.cwiseInverse();
        out.gram_proj = inv.asDiagonal() * s.gram_proj * inv.asDiagonal();
        if (s.covariate_sds) out.covariate_sds = s.covariate_sds->cwiseProduct(inv);
        return out;
    }

    StudySummary invert(int j, const StudySummary& s) const {
        const Vector& sc = scales(j);
        StudySummary out = s;
        out.beta_tilde = s.beta_tilde.cwiseQuotient(sc);
        out.gram_proj = sc.asDiagonal() * s.gram_proj * sc.asDiagonal();
        if (s.covariate_sds) out.covariate_sds = s.covariate_sds->cwiseProduct(sc);
        return out;
    }

    /// Stacked standardized-scale estimate back to the original scale.
    Vector back_transform(const Vector& stacked) const {
        Vector out = stacked;
        const int p = static_cast<int>(scales_.front().size());
        for (int j = 0; j < k(); ++j) out.segment(j * p, p) = stacked.segment(j * p, p).cwiseQuotient(scales(j));
        return out;
    }

    /// Original-scale stacked vector to the standardized scale.
    Vector forward_transform(const Vector& stacked) const {
        Vector out = stacked;
        const int p = static_cast<int>(scales_.front().size());
        for (int j = 0; j < k(); ++j) out.segment(j * p, p) = stacked.segment(j * p, p).cwiseProduct(scales(j));
        return out;
    }

    /// pk x pk covariance back to the original scale.
    Matrix back_transform_covariance(const Matrix& cov) const {
        const int p = static_cast<int>(scales_.front().size());
        Vector d(k() * p);
        for (int j = 0; j < k(); ++j) d.segment(j * p, p) = scales(j).cwiseInverse();
        return d.asDiagonal() * cov * d.asDiagonal();
    }

private:
    std::vector<Vector> scales_;
};

/// Rescale every non-intercept covariate to unit sample SD.
inline std::pair<MetaProblem, StandardizationRecord> standardize(
    const MetaProblem& problem, StandardizeMode mode = StandardizeMode::PerStudy) {
    const int p = problem.p();
    std::optional<int> intercept;
    for (const auto& s : problem.studies()) {
        if (!s.covariate_sds) throw InputError("study '" + s.study_id + "': covariate_sds missing, cannot standardize");
        if (s.intercept_index != problem.study(0).intercept_index)
            throw InputError("study '" + s.study_id + "': intercept_index inconsistent across studies");
    }
    intercept = problem.study(0).intercept_index;

    std::vector<Vector> scales;
    Vector pooled = Vector::Zero(p);
    if (mode == StandardizeMode::Pooled) {
        double dof = 0.0;
        for (const auto& s : problem.studies()) {
            pooled += static_cast<double>(s.n - 1) * s.covariate_sds->array().square().matrix();
            dof += static_cast<double>(s.n - 1);
        }
        pooled = (pooled / dof).array().sqrt().matrix();
    }
    for (const auto& s : problem.studies()) {
        Vector sc = mode == StandardizeMode::Pooled ? pooled : *s.covariate_sds;
        for (int l = 0; l < p; ++l) {
            if (intercept && *intercept == l) {
                sc(l) = 1.0;
            } else if (!(sc(l) > 0.0)) {
                std::ostringstream os;
                os << "study '" << s.study_id << "': covariate " << l << " has zero SD";
                throw InputError(os.str());
            }
        }
        scales.push_back(std::move(sc));
    }
    StandardizationRecord record(std::move(scales));
    std::vector<StudySummary> out;
    out.reserve(static_cast<std::size_t>(problem.k()));
    for (int j = 0; j < problem.k(); ++j) out.push_back(record.apply(j, problem.study(j)));
    return {MetaProblem(std::move(out)), std::move(record)};
}

}  // namespace ham
