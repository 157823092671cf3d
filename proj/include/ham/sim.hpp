#pragma once

#include "ham/rng.hpp"
#include "ham/selection.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ham::sim {

enum class Setting { S1, S2, S3, S4, Selection, Custom };
enum class Heterogeneity { None, Mild, Moderate, Mixture };
enum class Estimator { Mle, Fe, Ham, Ridge, HamTrueMse, HamUmse, HamBmse };

inline const char* to_string(Setting s) {
    switch (s) {
        case Setting::S1: return "1";
        case Setting::S2: return "2";
        case Setting::S3: return "3";
        case Setting::S4: return "4";
        case Setting::Selection: return "selection";
        case Setting::Custom: return "custom";
    }
    return "?";
}

inline const char* to_string(Heterogeneity h) {
    switch (h) {
        case Heterogeneity::None: return "none";
        case Heterogeneity::Mild: return "mild";
        case Heterogeneity::Moderate: return "moderate";
        case Heterogeneity::Mixture: return "mixture";
    }
    return "?";
}

inline const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::Mle: return "MLE";
        case Estimator::Fe: return "FE";
        case Estimator::Ham: return "HAM";
        case Estimator::Ridge: return "Ridge";
        case Estimator::HamTrueMse: return "HAM-true-MSE";
        case Estimator::HamUmse: return "HAM-UMSE";
        case Estimator::HamBmse: return "HAM-BMSE";
    }
    return "?";
}

inline Setting parse_setting(const std::string& s) {
    if (s == "1") return Setting::S1;
    if (s == "2") return Setting::S2;
    if (s == "3") return Setting::S3;
    if (s == "4") return Setting::S4;
    if (s == "selection") return Setting::Selection;
    if (s == "custom") return Setting::Custom;
    throw InputError("unknown setting '" + s + "'");
}

inline Heterogeneity parse_heterogeneity(const std::string& s) {
    if (s == "none") return Heterogeneity::None;
    if (s == "mild") return Heterogeneity::Mild;
    if (s == "moderate") return Heterogeneity::Moderate;
    if (s == "mixture") return Heterogeneity::Mixture;
    throw InputError("unknown heterogeneity condition '" + s + "'");
}

inline Estimator parse_estimator(const std::string& s) {
    for (auto e : {Estimator::Mle, Estimator::Fe, Estimator::Ham, Estimator::Ridge, Estimator::HamTrueMse,
                   Estimator::HamUmse, Estimator::HamBmse}) {
        std::string name = to_string(e);
        std::string lower;
        for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (s == name || s == lower) return e;
    }
    throw InputError("unknown estimator '" + s + "'");
}

/// One Monte-Carlo cell.
///   S1: n (3 sizes), p in {2, 4, 10, 20}
///   S2: k, heterogeneity (n = 200, p = 4)
///   S3: scenario 1 = single distribution, 2 = two distributions
///   S4: scenario 1..4 = (i)..(iv), n = common size
///   Selection: n (3 sizes)
///   Custom: k, p, n, heterogeneity on the S2 design
struct CellSpec {
    std::vector<long> n;
    int k = 3;
    int p = 2;
    Heterogeneity heterogeneity = Heterogeneity::None;
    int scenario = 1;

    std::string label(Setting s) const {
        std::ostringstream os;
        os << "S" << to_string(s);
        switch (s) {
            case Setting::S2:
            case Setting::Custom: os << "-" << to_string(heterogeneity) << "-k" << k; break;
            case Setting::S3: os << "-" << (scenario == 1 ? "single" : "two"); break;
            case Setting::S4: {
                static const char* roman[] = {"i", "ii", "iii", "iv"};
                os << "-" << roman[std::clamp(scenario, 1, 4) - 1];
                break;
            }
            default: break;
        }
        if (s == Setting::Custom) os << "-p" << p;
        if (!n.empty()) {
            os << "-n";
            for (std::size_t i = 0; i < n.size(); ++i) os << (i ? "_" : "") << n[i];
        }
        if (s == Setting::S1) os << "-p" << p;
        return os.str();
    }
};

struct SimConfig {
    Setting setting = Setting::S2;
    std::vector<CellSpec> cells;
    int replicate_count = 1000;
    double alpha = 0.05;
    std::uint64_t master_seed = 1;
    std::vector<Estimator> estimators{Estimator::Mle, Estimator::Ham, Estimator::Ridge};
    bool standardize = false;
    int threads = 1;
    SelectionOptions selection;

    void check() const {
        if (replicate_count < 1) throw InputError("replicate_count must be >= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
        if (cells.empty()) throw InputError("no simulation cells selected");
        if (estimators.empty()) throw InputError("no estimators selected");
        if (threads < 1) throw InputError("threads must be >= 1");
        selection.check();
    }
};

/// Every cell reported for a setting.
inline std::vector<CellSpec> grid_cells(Setting s) {
    std::vector<CellSpec> out;
    switch (s) {
        case Setting::S1:
            for (int p : {2, 4, 10, 20})
                for (long a : {100L, 200L, 300L})
                    for (long b : {100L, 200L, 300L})
                        for (long c : {100L, 200L, 300L})
                            if (a <= b && b <= c) out.push_back({{a, b, c}, 3, p});
            break;
        case Setting::S2:
            for (auto h : {Heterogeneity::None, Heterogeneity::Mild, Heterogeneity::Moderate, Heterogeneity::Mixture})
                for (int k : {5, 10, 15}) out.push_back({{}, k, 4, h});
            break;
        case Setting::S3:
            for (int sc : {1, 2}) out.push_back({{}, 20, 1, Heterogeneity::None, sc});
            break;
        case Setting::S4:
            for (int sc = 1; sc <= 4; ++sc)
                for (long n : {20L, 50L, 100L, 200L, 500L}) out.push_back({{n}, 3, 4, Heterogeneity::None, sc});
            break;
        case Setting::Selection:
            for (auto n : std::vector<std::vector<long>>{{100, 100, 100}, {100, 100, 500}, {100, 500, 500}, {500, 500, 500}})
                out.push_back({n, 3, 4});
            break;
        case Setting::Custom: out.push_back({{200}, 5, 4}); break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// One replicate. `oracle` is the same design with the true error variances
/// (used for analytic MSE and true-MSE selection).
struct Replicate {
    MetaProblem problem;
    Vector beta_true;
    MetaProblem oracle;
};

using Generator = std::function<Replicate(std::uint64_t replicate)>;

namespace detail {

inline double round_to(double x, int decimals) {
    const double f = std::pow(10.0, decimals);
    return std::round(x * f) / f;
}

inline double round_significant(double x, int digits) {
    if (x == 0.0) return 0.0;
    const int mag = static_cast<int>(std::floor(std::log10(std::abs(x))));
    return round_to(x, digits - 1 - mag);
}

inline Vector normals(std::mt19937_64& g, Eigen::Index n, double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> d(mean, sd);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = d(g);
    return v;
}

/// Intercept, N(0,1), Bern(.5), interaction, then N(0,1) columns up to p.
inline Matrix base_design(std::mt19937_64& g, long n, int p) {
    Matrix x(n, p);
    x.col(0).setOnes();
    if (p >= 2) x.col(1) = normals(g, n);
    if (p >= 3) {
        std::bernoulli_distribution bern(0.5);
        for (long i = 0; i < n; ++i) x(i, 2) = bern(g) ? 1.0 : 0.0;
    }
    if (p >= 4) x.col(3) = x.col(1).cwiseProduct(x.col(2));
    for (int c = 4; c < p; ++c) x.col(c) = normals(g, n);
    return x;
}

/// Draw y and summarize; returns the plug-in summary and its known-variance twin.
inline std::pair<StudySummary, StudySummary> observe(std::mt19937_64& g, const Matrix& x,
                                                     const std::optional<Matrix>& z, const Vector& coef,
                                                     double sigma2, const std::string& id) {
    Matrix design = x;
    if (z) {
        design.resize(x.rows(), x.cols() + z->cols());
        design << x, *z;
    }
    const Vector y = design * coef + normals(g, x.rows(), 0.0, std::sqrt(sigma2));
    StudySummary s = summarize_raw_study(x, z, y, id, SigmaConvention::Mle, 0);
    StudySummary known = s;
    known.sigma2 = sigma2;
    return {std::move(s), std::move(known)};
}

inline Replicate assemble(std::vector<std::pair<StudySummary, StudySummary>> studies, Vector beta_true) {
    std::vector<StudySummary> data, oracle;
    for (auto& [s, o] : studies) {
        data.push_back(std::move(s));
        oracle.push_back(std::move(o));
    }
    return {MetaProblem(std::move(data)), std::move(beta_true), MetaProblem(std::move(oracle))};
}

inline std::string study_name(int j) { return "study" + std::to_string(j + 1); }

}  // namespace detail

/// Study-specific coefficients used for setting 1, rows = coefficient index.
inline Matrix setting1_beta(int p) {
    static const double b2[2][3] = {{3.53, 3.37, 3.27}, {4.50, 4.49, 4.52}};
    static const double b4[4][3] = {{3.37, 3.18, 3.59}, {4.49, 4.53, 4.30}, {2.17, 2.16, 2.41}, {0.14, -0.13, 0.26}};
    static const double b10[10][3] = {{3.26, 3.24, 3.42},   {4.26, 4.24, 4.36},   {2.48, 2.09, 2.30},
                                      {-0.08, 0.18, 0.05},  {-0.92, -1.18, -0.85}, {0.15, 0.22, -0.01},
                                      {-2.97, -2.93, -2.95}, {0.46, 0.43, 0.46},   {-4.49, -4.64, -4.52},
                                      {0.66, 0.65, 0.69}};
    static const double b20[20][3] = {
        {3.24, 3.23, 3.17},    {4.24, 4.69, 4.74},    {2.09, 2.52, 2.06},    {0.18, 0.08, 0.10},
        {-1.18, -1.13, -0.89}, {0.22, 0.06, 0.23},    {-2.93, -2.80, -2.63}, {0.43, 0.68, 0.37},
        {-4.64, -4.61, -4.60}, {0.65, 0.77, 1.06},    {-3.07, -3.21, -3.22}, {-4.82, -4.55, -4.85},
        {3.44, 3.30, 3.40},    {-3.87, -3.68, -3.98}, {2.07, 1.68, 2.01},    {3.13, 3.09, 3.37},
        {-2.40, -2.31, -2.35}, {-2.61, -2.49, -2.61}, {3.12, 3.12, 3.07},    {-3.70, -3.50, -3.49}};
    Matrix b(p, 3);
    for (int r = 0; r < p; ++r)
        for (int c = 0; c < 3; ++c) {
            switch (p) {
                case 2: b(r, c) = b2[r][c]; break;
                case 4: b(r, c) = b4[r][c]; break;
                case 10: b(r, c) = b10[r][c]; break;
                case 20: b(r, c) = b20[r][c]; break;
                default: throw InputError("setting 1 supports p in {2, 4, 10, 20}");
            }
        }
    return b;
}

/// Common mean for draws around a shared coefficient vector (settings 2 and
/// the selection study). Estimators are translation equivariant, so only the
/// rounding in the selection study depends on it.
inline Vector shared_mean(int p) {
    static const double base[] = {3.4, 4.4, 2.2, 0.1};
    Vector m(p);
    for (int i = 0; i < p; ++i) m(i) = base[i % 4];
    return m;
}

inline Generator generate_setting1(const CellSpec& cell, std::uint64_t seed, std::uint64_t cell_key) {
    if (cell.n.size() != 3) throw InputError("setting 1 needs three sample sizes");
    const Matrix b = setting1_beta(cell.p);
    Vector beta(3 * cell.p);
    for (int j = 0; j < 3; ++j) beta.segment(j * cell.p, cell.p) = b.col(j);
    return [=](std::uint64_t rep) {
        auto g = rng::stream(seed, cell_key, rep);
        std::vector<std::pair<StudySummary, StudySummary>> st;
        for (int j = 0; j < 3; ++j) {
            const Matrix x = detail::base_design(g, cell.n[static_cast<std::size_t>(j)], cell.p);
            st.push_back(detail::observe(g, x, std::nullopt, b.col(j), 1.0, detail::study_name(j)));
        }
        return detail::assemble(std::move(st), beta);
    };
}

inline Generator generate_setting2(const CellSpec& cell, std::uint64_t seed, std::uint64_t cell_key) {
    const int k = cell.k;
    const int p = cell.p;
    const long n = cell.n.empty() ? 200 : cell.n.front();
    if (k < 1 || p < 1) throw InputError("setting 2 needs k >= 1 and p >= 1");
    if (cell.heterogeneity == Heterogeneity::Mixture && k < 4) throw InputError("mixture condition needs k >= 4");
    const Vector bm = shared_mean(p);
    const Heterogeneity het = cell.heterogeneity;
    return [=](std::uint64_t rep) {
        auto g = rng::stream(seed, cell_key, rep);
        Vector beta(k * p);
        for (int j = 0; j < k; ++j) {
            double var = 0.0;
            switch (het) {
                case Heterogeneity::None: var = 0.0; break;
                case Heterogeneity::Mild: var = 0.1; break;
                case Heterogeneity::Moderate: var = 0.5; break;
                case Heterogeneity::Mixture: var = j < 3 ? 0.0 : 1.0; break;
            }
            beta.segment(j * p, p) = var > 0.0 ? Vector(bm + detail::normals(g, p, 0.0, std::sqrt(var))) : bm;
        }
        std::vector<std::pair<StudySummary, StudySummary>> st;
        for (int j = 0; j < k; ++j) {
            const Matrix x = detail::base_design(g, n, p);
            st.push_back(detail::observe(g, x, std::nullopt, beta.segment(j * p, p), 1.0, detail::study_name(j)));
        }
        return detail::assemble(std::move(st), beta);
    };
}

/// k = 20, n = 200, shared intercept, three study-specific N(0,1) nuisance
/// covariates with frozen coefficients.
inline Generator generate_setting3(const CellSpec& cell, std::uint64_t seed, std::uint64_t cell_key) {
    constexpr int k = 20;
    constexpr int nuisance = 3;
    const long n = cell.n.empty() ? 200 : cell.n.front();
    auto g = rng::stream(seed, cell_key, rng::kFrozen);
    std::uniform_real_distribution<double> u(-0.25, 0.25);
    Vector beta(k);
    for (int j = 0; j < k; ++j) {
        const double centre = (cell.scenario == 2 && j < 5) ? 0.0 : 3.47;
        beta(j) = detail::round_to(centre + u(g), 2);
    }
    std::vector<Vector> gamma;
    for (int j = 0; j < k; ++j) {
        Vector gj = detail::normals(g, nuisance);
        for (Eigen::Index i = 0; i < gj.size(); ++i) gj(i) = detail::round_to(gj(i), 2);
        gamma.push_back(std::move(gj));
    }
    return [=](std::uint64_t rep) {
        auto gr = rng::stream(seed, cell_key, rep);
        std::vector<std::pair<StudySummary, StudySummary>> st;
        for (int j = 0; j < k; ++j) {
            const Matrix x = Matrix::Ones(n, 1);
            Matrix z(n, nuisance);
            for (int c = 0; c < nuisance; ++c) z.col(c) = detail::normals(gr, n);
            Vector coef(1 + nuisance);
            coef << beta(j), gamma[static_cast<std::size_t>(j)];
            st.push_back(detail::observe(gr, x, z, coef, 1.0, detail::study_name(j)));
        }
        return detail::assemble(std::move(st), beta);
    };
}

/// Scenario (mu, sigma2) grids for setting 4.
inline std::pair<std::array<double, 3>, std::array<double, 3>> setting4_scenario(int scenario) {
    switch (scenario) {
        case 1: return {{0, 0, 0}, {1, 1, 1}};
        case 2: return {{10, 10, 10}, {100, 100, 100}};
        case 3: return {{0, 1, 2}, {1, 1, 4}};
        case 4: return {{0, 5, 10}, {1, 25, 100}};
        default: throw InputError("setting 4 scenario must be 1..4");
    }
}

inline Generator generate_setting4(const CellSpec& cell, std::uint64_t seed, std::uint64_t cell_key) {
    constexpr int k = 3;
    constexpr int p = 4;
    const long n = cell.n.empty() ? 100 : cell.n.front();
    const auto [mu, s2] = setting4_scenario(cell.scenario);
    auto g = rng::stream(seed, cell_key, rng::kFrozen);
    std::uniform_real_distribution<double> u(-0.25, 0.25);
    Vector beta(k * p);
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = detail::round_to(u(g), 2);
    return [=](std::uint64_t rep) {
        auto gr = rng::stream(seed, cell_key, rep);
        std::vector<std::pair<StudySummary, StudySummary>> st;
        for (int j = 0; j < k; ++j) {
            const double m = mu[static_cast<std::size_t>(j)];
            const double b = m == 0.0 ? 1.0 : m;
            Matrix x(n, p);
            x.col(0).setOnes();
            for (int c = 1; c < p; ++c) x.col(c) = detail::normals(gr, n, m, b);
            st.push_back(detail::observe(gr, x, std::nullopt, beta.segment(j * p, p), s2[static_cast<std::size_t>(j)],
                                         detail::study_name(j)));
        }
        return detail::assemble(std::move(st), beta);
    };
}

/// Selection-mechanism study: k = 3, p = 4, designs and coefficients frozen,
/// coefficients N(beta_m, 0.1 I) rounded to two significant digits, error
/// variance 0.25.
inline Generator generate_selection_study(const CellSpec& cell, std::uint64_t seed, std::uint64_t cell_key) {
    constexpr int k = 3;
    constexpr int p = 4;
    if (cell.n.size() != 3) throw InputError("selection study needs three sample sizes");
    auto g = rng::stream(seed, cell_key, rng::kFrozen);
    const Vector bm = shared_mean(p);
    Vector beta(k * p);
    for (int j = 0; j < k; ++j) {
        const Vector d = detail::normals(g, p, 0.0, std::sqrt(0.1));
        for (int l = 0; l < p; ++l) beta(j * p + l) = detail::round_significant(bm(l) + d(l), 2);
    }
    std::vector<Matrix> designs;
    for (int j = 0; j < k; ++j) designs.push_back(detail::base_design(g, cell.n[static_cast<std::size_t>(j)], p));
    return [=](std::uint64_t rep) {
        auto gr = rng::stream(seed, cell_key, rep);
        std::vector<std::pair<StudySummary, StudySummary>> st;
        for (int j = 0; j < k; ++j)
            st.push_back(detail::observe(gr, designs[static_cast<std::size_t>(j)], std::nullopt,
                                         beta.segment(j * p, p), 0.25, detail::study_name(j)));
        return detail::assemble(std::move(st), beta);
    };
}

inline Generator make_generator(Setting s, const CellSpec& cell, std::uint64_t seed) {
    const std::uint64_t key = rng::label_hash(cell.label(s).c_str());
    switch (s) {
        case Setting::S1: return generate_setting1(cell, seed, key);
        case Setting::S2:
        case Setting::Custom: return generate_setting2(cell, seed, key);
        case Setting::S3: return generate_setting3(cell, seed, key);
        case Setting::S4: return generate_setting4(cell, seed, key);
        case Setting::Selection: return generate_selection_study(cell, seed, key);
    }
    throw InputError("unknown setting");
}

// ---------------------------------------------------------------------------
// Synthetic multi-site corpus
// ---------------------------------------------------------------------------

struct Corpus {
    MetaProblem problem;
    Vector beta_true;
    std::vector<std::string> covariates;
};

/// 29 sites, 7 shared covariates on a unit scale. Most sites scatter mildly
/// around a common vector; four sites are displaced.
inline Corpus generate_corpus(std::uint64_t seed, int sites = 29) {
    const std::vector<std::string> names{"Intercept", "Gender", "Admission from ED", "Severity score",
                                         "Age",       "Diastolic BP", "Systolic BP"};
    constexpr int p = 7;
    Vector bm(p);
    bm << 0.50, 0.012, -0.08, 0.36, -0.075, 0.04, -0.036;
    auto g = rng::stream(seed, rng::label_hash("corpus"), rng::kFrozen);
    std::uniform_int_distribution<long> size(150, 1500);
    std::bernoulli_distribution bern_gender(0.5), bern_ed(0.4);
    std::normal_distribution<double> nz(0.0, 1.0);
    Vector beta(sites * p);
    std::vector<StudySummary> studies;
    for (int j = 0; j < sites; ++j) {
        const double tau = j % 7 == 3 && j < 28 ? 0.12 : 0.02;
        const Vector bj = bm + detail::normals(g, p, 0.0, tau);
        beta.segment(j * p, p) = bj;
        const long n = size(g);
        Matrix x(n, p);
        for (long i = 0; i < n; ++i) {
            const double dbp = nz(g);
            x(i, 0) = 1.0;
            x(i, 1) = bern_gender(g) ? 1.0 : 0.0;
            x(i, 2) = bern_ed(g) ? 1.0 : 0.0;
            x(i, 3) = nz(g);
            x(i, 4) = nz(g);
            x(i, 5) = dbp;
            x(i, 6) = 0.6 * dbp + 0.8 * nz(g);
        }
        const Vector y = x * bj + detail::normals(g, n, 0.0, 0.8);
        char id[16];
        std::snprintf(id, sizeof id, "site%02d", j + 1);
        studies.push_back(summarize_raw_study(x, std::nullopt, y, id, SigmaConvention::Mle, 0));
    }
    return {MetaProblem(std::move(studies)), std::move(beta), names};
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

struct Quartiles {
    double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double prob) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct EstimatorSummary {
    Estimator estimator = Estimator::Mle;
    int used = 0;
    int excluded = 0;
    double emse = 0.0;                   // mean ||estimate - beta||^2 over all studies
    std::vector<double> coverage;        // per study, percent; empty when no intervals
    double coverage_avg = std::numeric_limits<double>::quiet_NaN();
    std::vector<Quartiles> pi_quartiles; // per study, HAM-type only
    // Analytic-risk summaries (cells with a known-variance twin).
    double median_mse = std::numeric_limits<double>::quiet_NaN();
    double pl_percent = std::numeric_limits<double>::quiet_NaN();
    double median_ratio = std::numeric_limits<double>::quiet_NaN();
    std::string first_error;
};

struct CellReport {
    std::string label;
    CellSpec spec;
    int replicates = 0;
    double mle_analytic_median = std::numeric_limits<double>::quiet_NaN();
    std::vector<EstimatorSummary> estimators;
    double runtime_seconds = 0.0;
};

struct SimReport {
    Setting setting = Setting::S2;
    double alpha = 0.05;
    std::uint64_t master_seed = 0;
    bool standardize = false;
    std::vector<CellReport> cells;

    const EstimatorSummary* find(const std::string& label, Estimator e) const {
        for (const auto& c : cells)
            if (c.label == label)
                for (const auto& s : c.estimators)
                    if (s.estimator == e) return &s;
        return nullptr;
    }
};

namespace detail {

struct Outcome {
    bool ok = false;
    std::string error;
    double sq_error = 0.0;
    std::vector<double> covered;  // per study, fraction of coordinates covered
    Vector pi;
    double analytic_mse = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicateResult {
    std::vector<Outcome> outcomes;
    double mle_analytic = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<double> coverage_per_study(const Vector& est, const Matrix& cov, const Vector& truth, int p,
                                              double z) {
    const auto k = static_cast<int>(est.size() / p);
    std::vector<double> out(static_cast<std::size_t>(k), 0.0);
    for (int j = 0; j < k; ++j) {
        int hit = 0;
        for (int l = 0; l < p; ++l) {
            const int i = j * p + l;
            const double se = std::sqrt(std::max(0.0, cov(i, i)));
            if (std::abs(est(i) - truth(i)) <= z * se) ++hit;
        }
        out[static_cast<std::size_t>(j)] = static_cast<double>(hit) / p;
    }
    return out;
}

inline Outcome evaluate(Estimator e, const MetaProblem& problem, const MetaProblem& oracle, const Vector& truth,
                        const SimConfig& cfg, std::uint64_t sel_seed, double z) {
    Outcome o;
    const int p = problem.p();
    try {
        Vector est;
        std::optional<Matrix> cov;
        std::optional<ShrinkageVector> pi;
        switch (e) {
            case Estimator::Mle: {
                auto [b, v] = mle_stack(problem);
                est = std::move(b);
                cov = std::move(v);
                break;
            }
            case Estimator::Fe: {
                const Vector fe = fixed_effect(problem);
                Matrix pooled = Matrix::Zero(p, p);
                for (int j = 0; j < problem.k(); ++j) pooled += problem.precision(j);
                const Matrix v = linalg::spd_inverse(linalg::symmetrize(pooled));
                est.resize(problem.dim());
                cov = Matrix::Zero(problem.dim(), problem.dim());
                for (int j = 0; j < problem.k(); ++j) {
                    est.segment(j * p, p) = fe;
                    cov->block(j * p, j * p, p, p) = v;
                }
                break;
            }
            case Estimator::Ridge: {
                est = ridge_fit(problem, select_lambda_ridge(problem).lambda).beta_r;
                break;
            }
            case Estimator::Ham:
            case Estimator::HamUmse:
            case Estimator::HamBmse:
            case Estimator::HamTrueMse: {
                SelectionOptions opts = cfg.selection;
                opts.seed = sel_seed;
                opts.criterion = e == Estimator::Ham       ? opts.criterion
                                 : e == Estimator::HamUmse ? Criterion::Umse
                                 : e == Estimator::HamBmse ? Criterion::Bmse
                                                           : Criterion::TrueMse;
                ShrinkageVector chosen;
                if (opts.criterion == Criterion::TrueMse) {
                    opts.beta_true = truth;
                    chosen = select_pi_ham(oracle, opts).pi;
                } else {
                    chosen = select_pi_ham(problem, opts).pi;
                }
                const HamFit fit = fit_at(problem, chosen);
                est = fit.beta_hat;
                cov = fit.covariance;
                pi = chosen;
                o.analytic_mse = true_mse(oracle, chosen, truth);
                break;
            }
        }
        if (!est.allFinite()) throw NumericError("non-finite estimate");
        o.sq_error = (est - truth).squaredNorm();
        if (cov) o.covered = coverage_per_study(est, *cov, truth, p, z);
        if (pi) o.pi = pi->values();
        o.ok = true;
    } catch (const std::exception& ex) {
        o.ok = false;
        o.error = ex.what();
    }
    return o;
}

inline ReplicateResult run_replicate(const Generator& gen, std::uint64_t rep, const SimConfig& cfg,
                                     std::uint64_t cell_key, double z) {
    ReplicateResult r;
    Replicate data = [&] {
        try {
            return gen(rep);
        } catch (const std::exception& ex) {
            throw NumericError(std::string("data generation failed: ") + ex.what());
        }
    }();
    MetaProblem problem = data.problem;
    MetaProblem oracle = data.oracle;
    Vector truth = data.beta_true;
    if (cfg.standardize) {
        auto [sp, record] = standardize(problem);
        std::vector<StudySummary> twin;
        for (int j = 0; j < oracle.k(); ++j) twin.push_back(record.apply(j, oracle.study(j)));
        problem = std::move(sp);
        oracle = MetaProblem(std::move(twin));
        truth = record.forward_transform(truth);
    }
    r.mle_analytic = oracle.tr_mle_cov();
    const std::uint64_t sel_seed = rng::stream_seed(cfg.master_seed, cell_key ^ 0xa5a5a5a5ULL, rep);
    for (Estimator e : cfg.estimators) r.outcomes.push_back(evaluate(e, problem, oracle, truth, cfg, sel_seed, z));
    return r;
}

}  // namespace detail

/// Run every configured cell. Replicates are distributed over `threads`
/// workers; each replicate writes only its own slot and the reduction runs in
/// replicate order, so output does not depend on the thread count.
inline SimReport run_cells(const SimConfig& cfg) {
    cfg.check();
    SimReport report;
    report.setting = cfg.setting;
    report.alpha = cfg.alpha;
    report.master_seed = cfg.master_seed;
    report.standardize = cfg.standardize;
    const double z = normal_quantile(1.0 - cfg.alpha / 2.0);

    for (const auto& cell : cfg.cells) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string label = cell.label(cfg.setting);
        const std::uint64_t key = rng::label_hash(label.c_str());
        const Generator gen = make_generator(cfg.setting, cell, cfg.master_seed);

        std::vector<detail::ReplicateResult> results(static_cast<std::size_t>(cfg.replicate_count));
        std::vector<std::string> failures(results.size());
        std::atomic<int> next{0};
        auto worker = [&] {
            for (int i = next++; i < cfg.replicate_count; i = next++) {
                try {
                    results[static_cast<std::size_t>(i)] =
                        detail::run_replicate(gen, static_cast<std::uint64_t>(i), cfg, key, z);
                } catch (const std::exception& ex) {
                    failures[static_cast<std::size_t>(i)] = ex.what();
                }
            }
        };
        const int nthreads = std::min(cfg.threads, cfg.replicate_count);
        if (nthreads <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }

        CellReport cr;
        cr.label = label;
        cr.spec = cell;
        cr.replicates = cfg.replicate_count;
        std::vector<double> mle_analytic;
        for (const auto& r : results)
            if (std::isfinite(r.mle_analytic)) mle_analytic.push_back(r.mle_analytic);
        if (!mle_analytic.empty()) cr.mle_analytic_median = sim::quantile(mle_analytic, 0.5);

        for (std::size_t ei = 0; ei < cfg.estimators.size(); ++ei) {
            EstimatorSummary s;
            s.estimator = cfg.estimators[ei];
            double sse = 0.0;
            std::vector<double> cover_sum;
            int cover_n = 0;
            std::vector<std::vector<double>> pis;
            std::vector<double> analytic, ratio;
            int losses = 0;
            for (std::size_t ri = 0; ri < results.size(); ++ri) {
                const auto& r = results[ri];
                if (r.outcomes.size() <= ei || !r.outcomes[ei].ok) {
                    ++s.excluded;
                    if (s.first_error.empty())
                        s.first_error = r.outcomes.size() > ei ? r.outcomes[ei].error : failures[ri];
                    continue;
                }
                const auto& o = r.outcomes[ei];
                ++s.used;
                sse += o.sq_error;
                if (!o.covered.empty()) {
                    if (cover_sum.empty()) cover_sum.assign(o.covered.size(), 0.0);
                    for (std::size_t j = 0; j < o.covered.size(); ++j) cover_sum[j] += o.covered[j];
                    ++cover_n;
                }
                if (o.pi.size() > 0) {
                    if (pis.empty()) pis.resize(static_cast<std::size_t>(o.pi.size()));
                    for (Eigen::Index j = 0; j < o.pi.size(); ++j) pis[static_cast<std::size_t>(j)].push_back(o.pi(j));
                }
                if (std::isfinite(o.analytic_mse)) {
                    analytic.push_back(o.analytic_mse);
                    ratio.push_back(o.analytic_mse / r.mle_analytic);
                    if (o.analytic_mse > r.mle_analytic) ++losses;
                }
            }
            if (s.used > 0) s.emse = sse / s.used;
            if (cover_n > 0) {
                double total = 0.0;
                for (double c : cover_sum) {
                    s.coverage.push_back(100.0 * c / cover_n);
                    total += 100.0 * c / cover_n;
                }
                s.coverage_avg = total / static_cast<double>(cover_sum.size());
            }
            for (auto& v : pis) s.pi_quartiles.push_back({quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)});
            if (!analytic.empty()) {
                s.median_mse = quantile(analytic, 0.5);
                s.median_ratio = quantile(ratio, 0.5);
                s.pl_percent = 100.0 * losses / static_cast<double>(analytic.size());
            }
            cr.estimators.push_back(std::move(s));
        }
        cr.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.cells.push_back(std::move(cr));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt(double v, int prec = 4) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}
}  // namespace detail

/// One row per cell x estimator. Runtime is left out so reruns compare equal.
inline void write_csv(std::ostream& out, const SimReport& r) {
    out << "cell,estimator,replicates,used,excluded,emse_x100,coverage_pct,median_mse_x100,pl_pct,median_ratio\n";
    for (const auto& c : r.cells)
        for (const auto& s : c.estimators)
            out << c.label << ',' << to_string(s.estimator) << ',' << c.replicates << ',' << s.used << ','
                << s.excluded << ',' << detail::fmt(100.0 * s.emse) << ',' << detail::fmt(s.coverage_avg) << ','
                << detail::fmt(100.0 * s.median_mse) << ',' << detail::fmt(s.pl_percent) << ','
                << detail::fmt(s.median_ratio) << '\n';
}

/// Long-format per-study values for external plotting.
inline void write_plot_data(std::ostream& out, const SimReport& r) {
    out << "cell,estimator,study,metric,value\n";
    for (const auto& c : r.cells)
        for (const auto& s : c.estimators) {
            for (std::size_t j = 0; j < s.coverage.size(); ++j)
                out << c.label << ',' << to_string(s.estimator) << ',' << j + 1 << ",coverage_pct,"
                    << detail::fmt(s.coverage[j]) << '\n';
            for (std::size_t j = 0; j < s.pi_quartiles.size(); ++j) {
                const auto& q = s.pi_quartiles[j];
                out << c.label << ',' << to_string(s.estimator) << ',' << j + 1 << ",pi_q1," << detail::fmt(q.q1) << '\n';
                out << c.label << ',' << to_string(s.estimator) << ',' << j + 1 << ",pi_median," << detail::fmt(q.median)
                    << '\n';
                out << c.label << ',' << to_string(s.estimator) << ',' << j + 1 << ",pi_q3," << detail::fmt(q.q3) << '\n';
            }
        }
}

/// Aligned text: eMSE x 100 per estimator and coverage of the interval-producing ones.
inline void write_table(std::ostream& out, const SimReport& r) {
    if (r.cells.empty()) return;
    const auto& ests = r.cells.front().estimators;
    const bool analytic = r.setting == Setting::Selection;
    out << std::left << std::setw(28) << "cell";
    for (const auto& s : ests) out << std::right << std::setw(14) << (std::string(to_string(s.estimator)));
    out << "   coverage%";
    if (analytic) out << "   PL% per estimator";
    out << '\n';
    for (const auto& c : r.cells) {
        out << std::left << std::setw(28) << c.label;
        for (const auto& s : c.estimators) out << std::right << std::setw(14) << detail::fmt(100.0 * s.emse, 1);
        out << "  ";
        for (const auto& s : c.estimators)
            if (std::isfinite(s.coverage_avg)) out << ' ' << to_string(s.estimator) << '=' << detail::fmt(s.coverage_avg, 1);
        if (analytic) {
            out << "  ";
            for (const auto& s : c.estimators)
                if (std::isfinite(s.pl_percent)) out << ' ' << to_string(s.estimator) << '=' << detail::fmt(s.pl_percent, 1);
        }
        out << '\n';
        for (const auto& s : c.estimators)
            if (s.excluded > 0)
                out << "    " << to_string(s.estimator) << ": " << s.excluded << " replicate(s) excluded ("
                    << s.first_error << ")\n";
    }
}

}  // namespace ham::sim
