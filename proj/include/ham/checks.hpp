#pragma once

#include "ham/io.hpp"
#include "ham/optimize.hpp"
#include "ham/rng.hpp"
#include "ham/selection.hpp"

#include <chrono>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace ham::checks {

/// A random problem built from raw data, with the coefficients that generated it.
struct Instance {
    MetaProblem problem;
    Vector beta_true;
};

struct InstanceOptions {
    int k_min = 2, k_max = 4;
    int p_min = 1, p_max = 3;
    long n_min = 15, n_max = 60;
    double max_spread = 1.0;   // heterogeneity SD drawn from U(0, max_spread)
    bool homogeneous = false;
    bool allow_nuisance = true;
};

inline Instance random_instance(std::mt19937_64& g, const InstanceOptions& o = {}) {
    std::uniform_int_distribution<int> kd(o.k_min, o.k_max), pd(o.p_min, o.p_max), zd(0, o.allow_nuisance ? 2 : 0);
    std::uniform_int_distribution<long> nd(o.n_min, o.n_max);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nz(0.0, 1.0);
    const int k = kd(g);
    const int p = pd(g);
    const double spread = o.homogeneous ? 0.0 : o.max_spread * u(g);
    Vector centre(p);
    for (int l = 0; l < p; ++l) centre(l) = 2.0 * nz(g);
    Vector beta(k * p);
    std::vector<StudySummary> studies;
    for (int j = 0; j < k; ++j) {
        for (int l = 0; l < p; ++l) beta(j * p + l) = centre(l) + spread * nz(g);
        const long n = nd(g);
        const int extra = zd(g);
        const double sigma = 0.5 + 1.5 * u(g);
        Matrix x(n, p);
        for (long i = 0; i < n; ++i) {
            x(i, 0) = 1.0;
            for (int l = 1; l < p; ++l) x(i, l) = nz(g) * (0.5 + u(g));
        }
        std::optional<Matrix> z;
        Vector y = x * beta.segment(j * p, p);
        if (extra > 0) {
            z = Matrix(n, extra);
            for (long i = 0; i < n; ++i)
                for (int c = 0; c < extra; ++c) (*z)(i, c) = nz(g) + 0.3 * (p > 1 ? x(i, 1) : 0.0);
            for (int c = 0; c < extra; ++c) y += nz(g) * z->col(c);
        }
        for (long i = 0; i < n; ++i) y(i) += sigma * nz(g);
        studies.push_back(summarize_raw_study(x, z, y, "s" + std::to_string(j + 1), SigmaConvention::Mle, 0));
    }
    return {MetaProblem(std::move(studies)), std::move(beta)};
}

/// Random ray with max = 1 and at least two entries strictly inside (0, 1).
inline Vector random_ray(std::mt19937_64& g, int k) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::uniform_int_distribution<int> pick(0, k - 1);
    Vector r(k);
    for (int j = 0; j < k; ++j) r(j) = u(g);
    r(pick(g)) = 1.0;
    return r;
}

struct SuiteResult {
    std::string name;
    int instances = 0;
    int failures = 0;
    double seconds = 0.0;
    std::string detail;          // summary numbers
    std::string counterexample;  // first failure, JSON

    bool passed() const { return failures == 0 && instances > 0; }
};

struct CheckOptions {
    int instances = 100;
    std::uint64_t seed = 20240601;
    long mc_replicates = 100000;
    // Test hook: flips the sign of tr_cov inside the c* prediction of the
    // ray suite. The suite must then report a counterexample.
    bool mutate_tr_cov_sign = false;
};

namespace detail {

inline std::string counterexample(const Instance& inst, const std::string& what, const Vector* pi = nullptr) {
    io::Json j = io::to_json(inst.problem);
    j["beta_true"] = io::detail::vector_json(inst.beta_true);
    if (pi) j["pi"] = io::detail::vector_json(*pi);
    j["failure"] = what;
    return j.dump();
}

template <typename F>
SuiteResult timed(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r = body();
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline std::mt19937_64 suite_stream(const CheckOptions& o, const char* name) {
    return rng::stream(o.seed, rng::label_hash(name), 0);
}

}  // namespace detail

/// Closed-form (beta_hat, theta_hat) against generic numeric maximization of
/// the penalized log-likelihood at fixed pi in (0, 1)^k.
inline SuiteResult oracle_suite(const CheckOptions& o, double tol = 1e-6) {
    return detail::timed("oracle", [&] {
        SuiteResult r;
        auto g = detail::suite_stream(o, "oracle");
        std::uniform_real_distribution<double> u(0.05, 0.95);
        double worst = 0.0;
        for (int i = 0; i < o.instances; ++i) {
            Instance inst = random_instance(g);
            const MetaProblem& prob = inst.problem;
            const int k = prob.k(), p = prob.p();
            Vector pv(k);
            for (int j = 0; j < k; ++j) pv(j) = u(g);
            const ShrinkageVector pi(pv);
            auto neg = [&](const Vector& x) {
                return -objective_value(prob, x.head(k * p), x.tail(p), pi);
            };
            Vector start(k * p + p);
            start.head(k * p) = prob.stacked_beta_tilde();
            start.tail(p) = fixed_effect(prob) + Vector::Constant(p, 0.5);
            const auto res = optimize::bfgs_minimize(neg, start, 1e-12, 2000);
            Vector closed(k * p + p);
            closed.head(k * p) = ham_beta(prob, pi);
            closed.tail(p) = centroid(prob, pi);
            const double err = (res.x - closed).lpNorm<Eigen::Infinity>();
            worst = std::max(worst, err);
            ++r.instances;
            if (!(err <= tol)) {
                if (r.failures++ == 0) {
                    std::ostringstream os;
                    os << "max-norm gap " << err;
                    r.counterexample = detail::counterexample(inst, os.str(), &pv);
                }
            }
        }
        std::ostringstream os;
        os << "worst max-norm gap " << worst;
        r.detail = os.str();
        return r;
    });
}

/// MSE at the common optimal shrinkage beats the MLE.
inline SuiteResult equal_shrinkage_suite(const CheckOptions& o) {
    return detail::timed("common-shrinkage", [&] {
        SuiteResult r;
        auto g = detail::suite_stream(o, "equal");
        for (int i = 0; i < o.instances; ++i) {
            Instance inst = random_instance(g);
            const auto ps = pi_star_equal(inst.problem, inst.beta_true);
            const double m_star = true_mse(inst.problem, ShrinkageVector::constant(inst.problem.k(), ps.value), inst.beta_true);
            const double m_zero = inst.problem.tr_mle_cov();
            ++r.instances;
            if (!(ps.value > 0.0 && m_star < m_zero) && r.failures++ == 0) {
                std::ostringstream os;
                os << "pi*=" << ps.value << " mse(pi*)=" << m_star << " mse(0)=" << m_zero;
                r.counterexample = detail::counterexample(inst, os.str());
            }
        }
        return r;
    });
}

/// Along random rays: c* > 0, MSE(c) < MSE(0) iff c < 2c* on a 100-point
/// grid, and MSE(c) is exactly quadratic.
inline SuiteResult ray_suite(const CheckOptions& o) {
    return detail::timed("ray-scale", [&] {
        SuiteResult r;
        auto g = detail::suite_stream(o, "ray");
        std::uniform_real_distribution<double> uc(0.0, 1.0);
        double worst_resid = 0.0;
        for (int i = 0; i < o.instances; ++i) {
            Instance inst = random_instance(g);
            const MetaProblem& prob = inst.problem;
            const Vector ray = random_ray(g, prob.k());
            ++r.instances;
            auto fail = [&](const std::string& why) {
                if (r.failures++ == 0) r.counterexample = detail::counterexample(inst, why, &ray);
            };

            RiskTerms t = risk_terms(prob, ShrinkageVector(ray), inst.beta_true);
            if (o.mutate_tr_cov_sign) t.tr_cov = -t.tr_cov;
            const double ratio = -t.tr_cov / (t.tr_var + *t.bias_norm2_true);
            if (!(ratio > 0.0)) {
                std::ostringstream os;
                os << "c* = " << ratio << " is not positive";
                fail(os.str());
                continue;
            }
            const double m0 = prob.tr_mle_cov();
            bool ok = true;
            for (int s = 1; s <= 100 && ok; ++s) {
                const double c = 0.01 * s;
                const double m = true_mse(prob, ShrinkageVector(c * ray), inst.beta_true);
                if (std::abs(m - m0) <= 1e-10 || std::abs(c - 2.0 * ratio) <= 1e-10) continue;
                if ((m < m0) != (c < 2.0 * ratio)) {
                    std::ostringstream os;
                    os << "c=" << c << " mse(c)=" << m << " mse(0)=" << m0 << " 2c*=" << 2.0 * ratio;
                    fail(os.str());
                    ok = false;
                }
            }
            if (!ok) continue;

            Matrix design(20, 3);
            Vector values(20);
            for (int s = 0; s < 20; ++s) {
                const double c = uc(g);
                design.row(s) << c * c, c, 1.0;
                values(s) = true_mse(prob, ShrinkageVector(c * ray), inst.beta_true);
            }
            const Vector coef = design.colPivHouseholderQr().solve(values);
            const double resid = (design * coef - values).lpNorm<Eigen::Infinity>() / std::max(1.0, values.cwiseAbs().maxCoeff());
            worst_resid = std::max(worst_resid, resid);
            if (!(resid < 1e-10)) {
                std::ostringstream os;
                os << "quadratic residual " << resid;
                fail(os.str());
            }
        }
        std::ostringstream os;
        os << "worst quadratic residual " << worst_resid;
        r.detail = os.str();
        return r;
    });
}

/// tr_cov < 0 whenever at least two pi_j lie strictly inside (0, 1).
inline SuiteResult sign_suite(const CheckOptions& o, int draws = 1000) {
    return detail::timed("trace-sign", [&] {
        SuiteResult r;
        auto g = detail::suite_stream(o, "sign");
        std::uniform_real_distribution<double> u(0.01, 0.99);
        std::bernoulli_distribution edge(0.2);
        for (int i = 0; i < draws; ++i) {
            Instance inst = random_instance(g);
            const int k = inst.problem.k();
            Vector pv(k);
            for (int j = 0; j < k; ++j) pv(j) = j >= 2 && edge(g) ? (edge(g) ? 1.0 : 0.0) : u(g);
            const RiskTerms t = risk_terms(inst.problem, ShrinkageVector(pv));
            ++r.instances;
            if (!(t.tr_cov < 0.0) && r.failures++ == 0) {
                std::ostringstream os;
                os << "tr_cov = " << t.tr_cov;
                r.counterexample = detail::counterexample(inst, os.str(), &pv);
            }
        }
        return r;
    });
}

// ---------------------------------------------------------------------------
// Monte-Carlo calibration on a fixed design
// ---------------------------------------------------------------------------

/// Fixed raw designs with known error variances; beta_tilde is regenerated
/// from fresh noise each replicate.
struct FixedDesign {
    std::vector<Matrix> x;
    std::vector<Matrix> solve;  // (X'X)^{-1} X'
    std::vector<double> sigma2;
    Vector beta;
    MetaProblem problem;  // known-variance summaries (beta_tilde placeholder)

    int p() const { return static_cast<int>(x.front().cols()); }

    Vector draw_beta_tilde(std::mt19937_64& g) const {
        std::normal_distribution<double> nz(0.0, 1.0);
        const int p = this->p();
        Vector out(static_cast<Eigen::Index>(x.size()) * p);
        for (std::size_t j = 0; j < x.size(); ++j) {
            Vector y = x[j] * beta.segment(static_cast<Eigen::Index>(j) * p, p);
            const double sd = std::sqrt(sigma2[j]);
            for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += sd * nz(g);
            out.segment(static_cast<Eigen::Index>(j) * p, p) = solve[j] * y;
        }
        return out;
    }
};

inline FixedDesign make_fixed_design(std::uint64_t seed, const std::vector<long>& n, int p, double spread) {
    auto g = rng::stream(seed, rng::label_hash("fixed-design"), rng::kFrozen);
    std::normal_distribution<double> nz(0.0, 1.0);
    const int k = static_cast<int>(n.size());
    std::vector<Matrix> xs, solves;
    std::vector<double> s2;
    std::vector<StudySummary> studies;
    Vector beta(k * p);
    Vector centre(p);
    for (int l = 0; l < p; ++l) centre(l) = 1.0 + nz(g);
    for (int j = 0; j < k; ++j) {
        for (int l = 0; l < p; ++l) beta(j * p + l) = centre(l) + spread * nz(g);
        Matrix x(n[static_cast<std::size_t>(j)], p);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            x(i, 0) = 1.0;
            for (int l = 1; l < p; ++l) x(i, l) = nz(g);
        }
        const Matrix xtx = x.transpose() * x;
        const double sigma2 = 1.0 + 0.5 * j;
        StudySummary s;
        s.study_id = "s" + std::to_string(j + 1);
        s.p = s.q = p;
        s.n = x.rows();
        s.sigma2 = sigma2;
        s.beta_tilde = beta.segment(j * p, p);
        s.gram_proj = xtx;
        studies.push_back(s);
        solves.push_back(linalg::spd_solve(xtx, x.transpose()));
        xs.push_back(std::move(x));
        s2.push_back(sigma2);
    }
    return {std::move(xs), std::move(solves), std::move(s2), std::move(beta), MetaProblem(std::move(studies))};
}

struct CalibrationResult {
    double true_mse = 0.0;
    double empirical_mse = 0.0;
    double mean_umse = 0.0;
    double mean_bmse = 0.0;
    double tr_var = 0.0;
    double cov_rel_error = 0.0;  // Frobenius, empirical vs closed-form HAM covariance
    long replicates = 0;
};

/// Replicate beta_tilde at a fixed design and fixed pi; average the risk
/// estimators and the realized loss.
inline CalibrationResult calibrate(const FixedDesign& d, const ShrinkageVector& pi, long replicates, std::uint64_t seed) {
    CalibrationResult out;
    out.replicates = replicates;
    const RiskTerms truth = risk_terms(d.problem, pi, d.beta);
    out.true_mse = true_mse(truth);
    out.tr_var = truth.tr_var;
    const MixingStructure mix(d.problem, pi);
    auto g = rng::stream(seed, rng::label_hash("calibration"), 0);
    const int p = d.p();
    const int k = d.problem.k();
    const Eigen::Index dim = d.problem.dim();
    Vector mean = Vector::Zero(dim);
    Matrix second = Matrix::Zero(dim, dim);
    double sum_loss = 0.0, sum_umse = 0.0, sum_bmse = 0.0;
    for (long r = 0; r < replicates; ++r) {
        const Vector bt = d.draw_beta_tilde(g);
        const Vector theta = mix.apply_a(bt);
        Vector est(dim);
        double bias_hat = 0.0;
        for (int j = 0; j < k; ++j) {
            const Vector bj = bt.segment(j * p, p);
            est.segment(j * p, p) = (1.0 - pi[j]) * bj + pi[j] * theta;
            bias_hat += pi[j] * pi[j] * (theta - bj).squaredNorm();
        }
        sum_loss += (est - d.beta).squaredNorm();
        sum_umse += bias_hat + 2.0 * truth.tr_cov + truth.tr_var_mle;
        sum_bmse += bias_hat + truth.tr_var + 2.0 * truth.tr_cov + truth.tr_var_mle;
        mean += est;
        second.noalias() += est * est.transpose();
    }
    const double R = static_cast<double>(replicates);
    out.empirical_mse = sum_loss / R;
    out.mean_umse = sum_umse / R;
    out.mean_bmse = sum_bmse / R;
    mean /= R;
    const Matrix emp = (second - R * mean * mean.transpose()) / (R - 1.0);
    const Matrix closed = ham_covariance(d.problem, decompose(pi));
    out.cov_rel_error = (emp - closed).norm() / closed.norm();
    return out;
}

inline SuiteResult calibration_suite(const CheckOptions& o, double rel_tol = 0.02) {
    return detail::timed("risk-calibration", [&] {
        SuiteResult r;
        const FixedDesign d = make_fixed_design(o.seed, {30, 40, 50}, 2, 0.15);
        Vector pv(3);
        pv << 0.6, 0.8, 0.4;
        const CalibrationResult c = calibrate(d, ShrinkageVector(pv), o.mc_replicates, o.seed);
        const double umse_gap = std::abs(c.mean_umse - c.true_mse) / c.true_mse;
        const double bmse_gap = std::abs((c.mean_bmse - c.true_mse) - c.tr_var) / c.tr_var;
        const double loss_gap = std::abs(c.empirical_mse - c.true_mse) / c.true_mse;
        r.instances = 1;
        std::ostringstream os;
        os << "E[UMSE] rel gap " << umse_gap << ", E[BMSE]-MSE vs tr_var rel gap " << bmse_gap
           << ", empirical loss rel gap " << loss_gap << ", covariance rel gap " << c.cov_rel_error;
        r.detail = os.str();
        if (!(umse_gap < rel_tol && bmse_gap < rel_tol && loss_gap < rel_tol && c.cov_rel_error < 0.05)) {
            r.failures = 1;
            r.counterexample = detail::counterexample({d.problem, d.beta}, os.str(), &pv);
        }
        return r;
    });
}

// ---------------------------------------------------------------------------
// Consistency trend
// ---------------------------------------------------------------------------

struct TrendPoint {
    long n = 0;
    double mean_loss = 0.0;
    double mean_c = 0.0;
    double mean_effective = 0.0;
};

/// max_j pi_j (1 - tr(A_j) / p): the share of study j's own estimate handed to
/// the other studies. Unlike max(pi) it vanishes on one-hot anchor rays, where
/// pi_j = 1 leaves beta_hat_j at the MLE.
inline double effective_borrowing(const MetaProblem& problem, const ShrinkageVector& pi) {
    if (pi.all_zero()) return 0.0;
    const MixingStructure mix(problem, pi);
    double out = 0.0;
    for (int j = 0; j < problem.k(); ++j)
        out = std::max(out, pi[j] * (1.0 - mix.a_block(j).trace() / problem.p()));
    return out;
}

/// Fixed heterogeneous coefficients; mean HAM loss, mean c = max(pi_HAM) and
/// mean effective borrowing as the per-study sample size grows.
inline std::vector<TrendPoint> consistency_trend(const std::vector<long>& sizes, int replicates, std::uint64_t seed) {
    constexpr int k = 3, p = 3;
    Vector beta(k * p);
    beta << 1.0, 0.5, -0.5, 1.3, 0.2, -0.4, 0.8, 0.7, -0.8;
    std::vector<TrendPoint> out;
    for (long n : sizes) {
        TrendPoint tp;
        tp.n = n;
        for (int rep = 0; rep < replicates; ++rep) {
            auto g = rng::stream(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep));
            std::normal_distribution<double> nz(0.0, 1.0);
            std::vector<StudySummary> studies;
            for (int j = 0; j < k; ++j) {
                Matrix x(n, p);
                for (long i = 0; i < n; ++i) {
                    x(i, 0) = 1.0;
                    for (int l = 1; l < p; ++l) x(i, l) = nz(g);
                }
                Vector y = x * beta.segment(j * p, p);
                for (long i = 0; i < n; ++i) y(i) += nz(g);
                studies.push_back(summarize_raw_study(x, std::nullopt, y, "s" + std::to_string(j + 1)));
            }
            const MetaProblem prob(std::move(studies));
            SelectionOptions opts;
            opts.seed = rng::stream_seed(seed, 7, static_cast<std::uint64_t>(rep));
            const auto sel = select_pi_ham(prob, opts);
            tp.mean_loss += (ham_beta(prob, sel.pi) - beta).squaredNorm();
            tp.mean_c += sel.pi.values().maxCoeff();
            tp.mean_effective += effective_borrowing(prob, sel.pi);
        }
        tp.mean_loss /= replicates;
        tp.mean_c /= replicates;
        tp.mean_effective /= replicates;
        out.push_back(tp);
    }
    return out;
}

inline SuiteResult consistency_suite(const CheckOptions& o, int replicates = 200) {
    return detail::timed("consistency", [&] {
        SuiteResult r;
        const auto trend = consistency_trend({100, 400, 1600, 6400}, replicates, o.seed);
        std::ostringstream os;
        r.instances = static_cast<int>(trend.size());
        for (std::size_t i = 0; i < trend.size(); ++i) {
            os << (i ? "; " : "") << "n=" << trend[i].n << " loss=" << trend[i].mean_loss << " c=" << trend[i].mean_c
               << " eff=" << trend[i].mean_effective;
            if (i > 0 && !(trend[i].mean_loss < trend[i - 1].mean_loss &&
                           trend[i].mean_effective < trend[i - 1].mean_effective))
                ++r.failures;
        }
        r.detail = os.str();
        if (r.failures) r.counterexample = "{\"trend\": \"" + os.str() + "\"}";
        return r;
    });
}

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"oracle", "equal", "ray", "sign", "calibration", "consistency"};
    return names;
}

inline SuiteResult run_suite(const std::string& name, const CheckOptions& o) {
    if (name == "oracle") return oracle_suite(o);
    if (name == "equal") return equal_shrinkage_suite(o);
    if (name == "ray") return ray_suite(o);
    if (name == "sign") return sign_suite(o);
    if (name == "calibration") return calibration_suite(o);
    if (name == "consistency") return consistency_suite(o);
    throw InputError("unknown suite '" + name + "'");
}

}  // namespace ham::checks
