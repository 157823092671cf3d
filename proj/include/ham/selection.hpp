#pragma once

#include "ham/inference.hpp"
#include "ham/optimize.hpp"
#include "ham/risk.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ham {

/// Criterion minimized over pi. PseudoMse is the default; the others exist for
/// the selection-mechanism comparison (TrueMse needs beta_true).
enum class Criterion { PseudoMse, Umse, Bmse, TrueMse };

inline const char* to_string(Criterion c) {
    switch (c) {
        case Criterion::PseudoMse: return "pseudo-mse";
        case Criterion::Umse: return "umse";
        case Criterion::Bmse: return "bmse";
        case Criterion::TrueMse: return "true-mse";
    }
    return "?";
}

struct SelectionOptions {
    double tolerance = 1e-8;
    int max_iterations = 0;  // per start; 0 means max(2000, 500 k)
    int restarts = 4;
    double upper = 1.0 - 1e-9;
    std::optional<std::uint64_t> seed;
    Criterion criterion = Criterion::PseudoMse;
    PseudoSign sign = PseudoSign::Plus;
    std::optional<Vector> beta_true;  // TrueMse only

    void check() const {
        if (!(tolerance > 0.0)) throw InputError("selection tolerance must be positive");
        if (max_iterations < 0) throw InputError("max_iterations must be nonnegative");
        if (restarts < 0) throw InputError("restarts must be nonnegative");
        if (!(upper > 0.0 && upper <= 1.0)) throw InputError("box upper bound must lie in (0, 1]");
    }
};

struct SelectionResult {
    ShrinkageVector pi;
    double objective = 0.0;
    double start_objective = 0.0;
    double pi_star_unclamped = std::numeric_limits<double>::quiet_NaN();
    std::vector<Vector> starts;
    int iterations = 0;
    int evaluations = 0;
    bool converged = true;
    std::vector<std::string> notes;
};

inline double criterion_value(const MetaProblem& problem, const ShrinkageVector& pi, const SelectionOptions& opts) {
    const bool need_truth = opts.criterion == Criterion::TrueMse;
    if (need_truth && !opts.beta_true) throw InputError("true-mse selection needs beta_true");
    const RiskTerms t = risk_terms(problem, pi, need_truth ? opts.beta_true : std::nullopt);
    switch (opts.criterion) {
        case Criterion::PseudoMse: return pseudo_mse(t, opts.sign);
        case Criterion::Umse: return umse(t);
        case Criterion::Bmse: return bmse(t);
        case Criterion::TrueMse: return true_mse(t);
    }
    return 0.0;
}

/// Minimize the selection criterion over [0, upper]^k. Starts at the plug-in
/// common shrinkage pi* 1 and adds `restarts` uniformly jittered starts.
inline SelectionResult select_pi_ham(const MetaProblem& problem, const SelectionOptions& opts = {}) {
    opts.check();
    const int k = problem.k();
    SelectionResult out;
    if (k == 1) {
        out.pi = ShrinkageVector(Vector::Zero(1));
        out.notes.emplace_back("nothing to borrow: single study, returning the MLE");
        return out;
    }

    auto objective = [&](const Vector& x) {
        try {
            return criterion_value(problem, ShrinkageVector(x), opts);
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    double start_value = 0.5;
    try {
        const ScaleOptimum ps = pi_star_equal(problem, problem.stacked_beta_tilde());
        out.pi_star_unclamped = ps.unclamped;
        start_value = ps.value;
    } catch (const NumericError&) {
        out.notes.emplace_back("plug-in pi* undefined; starting at 0.5");
    }
    start_value = std::clamp(start_value, 0.0, opts.upper);
    out.starts.push_back(Vector::Constant(k, start_value));

    std::mt19937_64 rng(opts.seed.value_or(0x5eed5eedULL));
    std::uniform_real_distribution<double> unif(0.0, opts.upper);
    for (int r = 0; r < opts.restarts; ++r) {
        Vector s(k);
        for (int j = 0; j < k; ++j) s(j) = unif(rng);
        out.starts.push_back(std::move(s));
    }

    optimize::NelderMeadOptions nm;
    nm.tolerance = opts.tolerance;
    nm.max_iterations = opts.max_iterations > 0 ? opts.max_iterations : std::max(2000, 500 * k);
    nm.lower = Vector::Zero(k);
    nm.upper = Vector::Constant(k, opts.upper);

    bool have = false;
    bool any_converged = false;
    for (std::size_t i = 0; i < out.starts.size(); ++i) {
        const auto res = optimize::nelder_mead_box(objective, out.starts[i], nm);
        if (i == 0) out.start_objective = objective(out.starts[0]);
        out.iterations += res.iterations;
        out.evaluations += res.evaluations;
        any_converged = any_converged || res.converged;
        const bool better = !have || res.value < out.objective ||
                            (res.value == out.objective && res.x.lpNorm<1>() < out.pi.values().lpNorm<1>());
        if (better) {
            out.pi = ShrinkageVector(res.x);
            out.objective = res.value;
            have = true;
        }
    }
    // The start itself is a candidate so the result never loses to it.
    if (out.start_objective < out.objective) {
        out.pi = ShrinkageVector(out.starts[0]);
        out.objective = out.start_objective;
    }
    // pi = 0 (the MLE) wins ties within the optimizer tolerance; one-hot rays
    // reproduce the MLE exactly and would otherwise report spurious borrowing.
    const double zero_value = objective(Vector::Zero(k));
    if (zero_value <= out.objective + opts.tolerance * (std::abs(out.objective) + opts.tolerance)) {
        out.pi = ShrinkageVector(Vector::Zero(k));
        out.objective = zero_value;
    }
    out.converged = any_converged;
    if (!any_converged) out.notes.emplace_back("warning: optimizer did not converge from any start");
    return out;
}

// ---------------------------------------------------------------------------
// Ridge-like comparator
// ---------------------------------------------------------------------------

/// ||(R - I) beta_tilde||^2 + tr{(2R - I) V}
inline double ridge_umse(const MetaProblem& problem, double lambda) {
    const RidgeFit fit = ridge_fit(problem, lambda);
    const Vector beta = problem.stacked_beta_tilde();
    const auto [ignored, v] = mle_stack(problem);
    (void)ignored;
    return (fit.beta_r - beta).squaredNorm() + 2.0 * (fit.r * v).trace() - v.trace();
}

struct LambdaSelection {
    double lambda = 0.0;
    double objective = 0.0;
    int evaluations = 0;
};

/// Log-spaced grid over a precision-relative range, refined by golden section
/// in log lambda. lambda = 0 competes directly.
inline LambdaSelection select_lambda_ridge(const MetaProblem& problem, int grid_points = 81) {
    LambdaSelection out;
    out.objective = problem.tr_mle_cov();
    if (problem.k() < 2) return out;
    double scale = 0.0;
    for (int j = 0; j < problem.k(); ++j) scale += problem.precision(j).trace();
    scale /= static_cast<double>(problem.dim());
    const double lo = std::log(scale) - 6.0 * std::log(10.0);
    const double hi = std::log(scale) + 6.0 * std::log(10.0);
    auto f = [&](double log_lambda) {
        ++out.evaluations;
        return ridge_umse(problem, std::exp(log_lambda));
    };
    int best = -1;
    double best_value = out.objective;
    std::vector<double> grid(static_cast<std::size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i) {
        grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (grid_points - 1);
        const double v = f(grid[static_cast<std::size_t>(i)]);
        if (v < best_value) {
            best_value = v;
            best = i;
        }
    }
    if (best < 0) return out;
    const double a = grid[static_cast<std::size_t>(std::max(best - 1, 0))];
    const double b = grid[static_cast<std::size_t>(std::min(best + 1, grid_points - 1))];
    const auto [x, fx] = optimize::golden_section(f, a, b, 1e-10);
    if (fx < best_value) {
        out.lambda = std::exp(x);
        out.objective = fx;
    } else {
        out.lambda = std::exp(grid[static_cast<std::size_t>(best)]);
        out.objective = best_value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full fit
// ---------------------------------------------------------------------------

/// Package an estimate at a given pi with its plug-in inference.
inline HamFit fit_at(const MetaProblem& problem, const ShrinkageVector& pi) {
    HamFit fit;
    fit.pi = pi;
    fit.beta_hat = ham_beta(problem, pi);
    if (pi.all_zero()) {
        fit.gradient = Matrix::Identity(problem.dim(), problem.dim());
        fit.covariance = mle_stack(problem).second;
        fit.meta.notes.emplace_back("no centroid: pi = 0");
        return fit;
    }
    fit.theta_hat = centroid(problem, pi);
    fit.ray = decompose(pi);
    fit.gradient = gradient_expectation(problem, *fit.ray);
    fit.covariance = ham_covariance(problem, *fit.ray);
    return fit;
}

inline HamFit fit_ham(const MetaProblem& problem, const SelectionOptions& opts = {}) {
    const SelectionResult sel = select_pi_ham(problem, opts);
    HamFit fit = fit_at(problem, sel.pi);
    if (problem.k() == 1) fit.meta.notes.clear();
    fit.meta.objective = sel.objective;
    fit.meta.iterations = sel.iterations;
    fit.meta.evaluations = sel.evaluations;
    fit.meta.converged = sel.converged;
    fit.meta.notes.insert(fit.meta.notes.end(), sel.notes.begin(), sel.notes.end());
    return fit;
}

}  // namespace ham
