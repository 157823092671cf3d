#pragma once

#include "ham/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace ham::optimize {

struct NelderMeadOptions {
    double tolerance = 1e-8;  // relative spread of simplex values
    int max_iterations = 2000;
    double initial_step = 0.1;
    Vector lower;
    Vector upper;
};

struct NelderMeadResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Nelder-Mead on a box; trial points are projected onto the box.
inline NelderMeadResult nelder_mead_box(const std::function<double(const Vector&)>& f, const Vector& start,
                                        const NelderMeadOptions& opts) {
    const Eigen::Index n = start.size();
    auto project = [&](Vector x) {
        for (Eigen::Index i = 0; i < n; ++i) x(i) = std::clamp(x(i), opts.lower(i), opts.upper(i));
        return x;
    };

    NelderMeadResult result;
    auto eval = [&](const Vector& x) {
        ++result.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<Vector> simplex(static_cast<std::size_t>(n + 1));
    std::vector<double> values(static_cast<std::size_t>(n + 1));
    auto build = [&](const Vector& base, double step) {
        simplex[0] = project(base);
        values[0] = eval(simplex[0]);
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector v = simplex[0];
            const double up = v(i) + step;
            v(i) = up <= opts.upper(i) ? up : v(i) - step;
            simplex[static_cast<std::size_t>(i + 1)] = project(v);
            values[static_cast<std::size_t>(i + 1)] = eval(simplex[static_cast<std::size_t>(i + 1)]);
        }
    };

    std::vector<std::size_t> order(static_cast<std::size_t>(n + 1));
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        std::vector<Vector> s2(simplex.size());
        std::vector<double> v2(values.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            s2[i] = std::move(simplex[order[i]]);
            v2[i] = values[order[i]];
        }
        simplex.swap(s2);
        values.swap(v2);
    };

    // Dimension-adaptive coefficients (Gao and Han); standard values when n = 2.
    const double dn = static_cast<double>(std::max<Eigen::Index>(n, 2));
    const double kReflect = 1.0, kExpand = 1.0 + 2.0 / dn, kContract = 0.75 - 0.5 / dn, kShrink = 1.0 - 1.0 / dn;
    const auto worst = static_cast<std::size_t>(n);

    // One restart from the converged vertex guards against premature collapse.
    int rounds = 0;
    build(start, opts.initial_step);
    while (result.iterations < opts.max_iterations) {
        sort_simplex();
        const double spread = std::abs(values[worst] - values[0]);
        if (spread <= opts.tolerance * (std::abs(values[0]) + opts.tolerance)) {
            if (rounds++ == 0) {
                const Vector best = simplex[0];
                build(best, 0.5 * opts.initial_step);
                continue;
            }
            result.converged = true;
            break;
        }
        ++result.iterations;

        Vector centroid = Vector::Zero(n);
        for (std::size_t i = 0; i < worst; ++i) centroid += simplex[i];
        centroid /= static_cast<double>(n);

        const Vector xr = project(centroid + kReflect * (centroid - simplex[worst]));
        const double fr = eval(xr);
        if (fr < values[0]) {
            const Vector xe = project(centroid + kExpand * (xr - centroid));
            const double fe = eval(xe);
            if (fe < fr) {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
        } else if (fr < values[worst - 1]) {
            simplex[worst] = xr;
            values[worst] = fr;
        } else {
            const bool outside = fr < values[worst];
            const Vector xc = outside ? project(centroid + kContract * (xr - centroid))
                                      : project(centroid + kContract * (simplex[worst] - centroid));
            const double fc = eval(xc);
            if (fc < (outside ? fr : values[worst])) {
                simplex[worst] = xc;
                values[worst] = fc;
            } else {
                for (std::size_t i = 1; i <= worst; ++i) {
                    simplex[i] = project(simplex[0] + kShrink * (simplex[i] - simplex[0]));
                    values[i] = eval(simplex[i]);
                }
            }
        }
    }
    sort_simplex();
    result.x = simplex[0];
    result.value = values[0];
    return result;
}

/// Golden-section minimization of a unimodal scalar function on [a, b].
inline std::pair<double, double> golden_section(const std::function<double(double)>& f, double a, double b,
                                                double tol = 1e-10, int max_iter = 200) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < max_iter && std::abs(b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return fc < fd ? std::make_pair(c, fc) : std::make_pair(d, fd);
}

struct QuasiNewtonResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Central-difference gradient.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
    Vector g(x.size());
    Vector t = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double step = h * std::max(1.0, std::abs(x(i)));
        t(i) = x(i) + step;
        const double up = f(t);
        t(i) = x(i) - step;
        const double down = f(t);
        t(i) = x(i);
        g(i) = (up - down) / (2.0 * step);
    }
    return g;
}

/// Unconstrained BFGS with finite-difference gradients and Armijo backtracking.
inline QuasiNewtonResult bfgs_minimize(const std::function<double(const Vector&)>& f, const Vector& start,
                                       double grad_tol = 1e-10, int max_iterations = 500) {
    const Eigen::Index n = start.size();
    QuasiNewtonResult r;
    r.x = start;
    r.value = f(r.x);
    Vector g = numeric_gradient(f, r.x);
    Matrix h = Matrix::Identity(n, n);
    for (; r.iterations < max_iterations; ++r.iterations) {
        if (g.norm() <= grad_tol * (1.0 + std::abs(r.value))) {
            r.converged = true;
            break;
        }
        Vector d = -h * g;
        if (d.dot(g) >= 0.0) {
            h.setIdentity();
            d = -g;
        }
        double step = 1.0;
        double fx = f(r.x + step * d);
        while (fx > r.value + 1e-4 * step * d.dot(g) && step > 1e-20) {
            step *= 0.5;
            fx = f(r.x + step * d);
        }
        if (step <= 1e-20) break;
        const Vector s = step * d;
        const Vector x_new = r.x + s;
        const Vector g_new = numeric_gradient(f, x_new);
        const Vector y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-300) {
            const double rho = 1.0 / sy;
            const Matrix i_n = Matrix::Identity(n, n);
            h = (i_n - rho * s * y.transpose()) * h * (i_n - rho * y * s.transpose()) + rho * s * s.transpose();
        }
        r.x = x_new;
        r.value = fx;
        g = g_new;
    }
    return r;
}

}  // namespace ham::optimize
