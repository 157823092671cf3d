#include "commands.hpp"

#include "ham/ham.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace ham::cli {
namespace {

struct Shared {
    std::string input;
    std::string output_dir = ".";
    std::uint64_t seed = 1;
    int threads = 0;  // 0: HAM_THREADS or 1
    double alpha = 0.05;
    bool standardize = false;
    bool pooled_sd = false;
};

void add_shared(CLI::App* sub, Shared& s, bool with_input) {
    sub->configurable();
    if (with_input) sub->add_option("--input", s.input, "Input document (JSON)")->required();
    sub->add_option("--output-dir", s.output_dir, "Directory for artifacts")->capture_default_str();
    sub->add_option("--seed", s.seed, "Master seed")->capture_default_str();
    sub->add_option("--threads", s.threads, "Worker threads, 0 defers to HAM_THREADS")->capture_default_str();
    sub->add_option("--alpha", s.alpha, "Interval level 1 - alpha")->capture_default_str()->check(CLI::Range(1e-12, 1.0 - 1e-12));
    sub->add_flag("--standardize", s.standardize, "Rescale non-intercept covariates to unit SD before fitting");
    sub->add_flag("--pooled-sd", s.pooled_sd, "Standardize with pooled rather than per-study SDs");
}

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("HAM_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
    }
    return 1;
}

fs::path prepare_dir(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
    return p;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw InputError("cannot write '" + p.string() + "'");
    f << std::setprecision(10);
    return f;
}

std::string fmt(double v, int prec = 6) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

std::vector<std::string> covariate_labels(const io::InputDocument& doc) {
    if (!doc.covariates.empty()) return doc.covariates;
    std::vector<std::string> names;
    for (int l = 0; l < doc.problem.p(); ++l) names.push_back("x" + std::to_string(l + 1));
    return names;
}

std::vector<std::string> study_ids(const MetaProblem& m) {
    std::vector<std::string> ids;
    for (const auto& s : m.studies()) ids.push_back(s.study_id);
    return ids;
}

io::Json vec_json(const Vector& v) { return io::detail::vector_json(v); }

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
    Shared shared;
    std::string estimator = "ham";
    std::string criterion = "pseudo-mse";
    std::string sign = "plus";
    int restarts = 4;
    int max_iterations = 0;
    double tolerance = 1e-8;
};

SelectionOptions selection_from(const FitOptions& o) {
    SelectionOptions s;
    s.restarts = o.restarts;
    s.max_iterations = o.max_iterations;
    s.tolerance = o.tolerance;
    s.seed = o.shared.seed;
    s.sign = o.sign == "minus" ? PseudoSign::Minus : PseudoSign::Plus;
    if (o.criterion == "umse") s.criterion = Criterion::Umse;
    else if (o.criterion == "bmse") s.criterion = Criterion::Bmse;
    else s.criterion = Criterion::PseudoMse;
    return s;
}

/// The working problem (standardized when requested) and the map back.
struct Prepared {
    MetaProblem work;
    std::optional<StandardizationRecord> record;
};

Prepared prepare(const MetaProblem& m, const Shared& s) {
    if (!s.standardize) return {m, std::nullopt};
    auto [p, rec] = standardize(m, s.pooled_sd ? StandardizeMode::Pooled : StandardizeMode::PerStudy);
    return {std::move(p), std::move(rec)};
}

io::Json heterogeneity_json(const MetaProblem& m) {
    io::Json j;
    if (m.k() < 2) {
        j["i_squared"] = nullptr;
        j["note"] = "undefined for a single study";
        return j;
    }
    const auto h = heterogeneity(m);
    j["cochran_q"] = h.q;
    j["df"] = h.df;
    j["i_squared"] = h.i_squared;
    j["note"] = "descriptive only: coordinate-stacked Cochran Q against the fixed-effect pool";
    return j;
}

int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
    const io::InputDocument doc = io::load_document_file(o.shared.input);
    const MetaProblem& problem = doc.problem;
    const auto names = covariate_labels(doc);
    const auto ids = study_ids(problem);
    const int p = problem.p();
    const int k = problem.k();
    const fs::path dir = prepare_dir(o.shared.output_dir);
    const Prepared prep = prepare(problem, o.shared);

    io::Json diag;
    diag["estimator"] = o.estimator;
    diag["k"] = k;
    diag["p"] = p;
    diag["alpha"] = o.shared.alpha;
    diag["standardized"] = o.shared.standardize;
    diag["heterogeneity"] = heterogeneity_json(problem);
    std::vector<std::string> warnings;

    auto fit_csv = open_out(dir / "fit.csv");
    if (o.estimator == "fe") {
        const Vector fe = fixed_effect(prep.work);
        Matrix pooled = Matrix::Zero(p, p);
        for (int j = 0; j < k; ++j) pooled += prep.work.precision(j);
        const Matrix cov = linalg::spd_inverse(linalg::symmetrize(pooled));
        fit_csv << "covariate,estimate\n";
        for (int l = 0; l < p; ++l) fit_csv << names[static_cast<std::size_t>(l)] << ',' << fe(l) << '\n';
        const auto table = interval_table({"pooled"}, p, fe, cov, o.shared.alpha, Vector::Zero(p));
        auto f = open_out(dir / "intervals.csv");
        write_csv(f, table, names);
        if (o.shared.standardize) warnings.emplace_back("fixed-effect estimate reported on the standardized scale");
        out << "fixed-effect estimate\n";
        for (int l = 0; l < p; ++l)
            out << "  " << std::left << std::setw(24) << names[static_cast<std::size_t>(l)] << std::right
                << std::setw(14) << fmt(fe(l)) << '\n';
    } else if (o.estimator == "ridge") {
        const auto sel = select_lambda_ridge(prep.work);
        Vector beta = ridge_fit(prep.work, sel.lambda).beta_r;
        if (prep.record) beta = prep.record->back_transform(beta);
        fit_csv << "study_id,covariate,estimate,mle,lambda\n";
        for (int j = 0; j < k; ++j)
            for (int l = 0; l < p; ++l)
                fit_csv << ids[static_cast<std::size_t>(j)] << ',' << names[static_cast<std::size_t>(l)] << ','
                        << beta(j * p + l) << ',' << problem.study(j).beta_tilde(l) << ',' << sel.lambda << '\n';
        diag["lambda"] = sel.lambda;
        diag["ridge_umse"] = sel.objective;
        diag["intervals"] = "not produced: the ridge-like comparator has no interval procedure";
        out << "ridge-like estimate, lambda = " << fmt(sel.lambda) << '\n';
    } else if (o.estimator == "ham" || o.estimator == "mle") {
        HamFit fit;
        if (o.estimator == "mle") {
            fit = fit_at(prep.work, ShrinkageVector(Vector::Zero(k)));
            fit.meta.notes.clear();
        } else {
            const SelectionOptions sopts = selection_from(o);
            const SelectionResult sel = select_pi_ham(prep.work, sopts);
            fit = fit_at(prep.work, sel.pi);
            if (k == 1) fit.meta.notes.clear();
            fit.meta.objective = sel.objective;
            fit.meta.iterations = sel.iterations;
            fit.meta.evaluations = sel.evaluations;
            fit.meta.converged = sel.converged;
            fit.meta.notes.insert(fit.meta.notes.end(), sel.notes.begin(), sel.notes.end());
            io::Json sj;
            sj["criterion"] = to_string(sopts.criterion);
            sj["objective"] = sel.objective;
            sj["start_objective"] = sel.start_objective;
            sj["pi_star_unclamped"] = std::isfinite(sel.pi_star_unclamped) ? io::Json(sel.pi_star_unclamped) : io::Json();
            sj["iterations"] = sel.iterations;
            sj["evaluations"] = sel.evaluations;
            sj["converged"] = sel.converged;
            sj["restarts"] = sopts.restarts;
            io::Json starts = io::Json::array();
            for (const auto& s : sel.starts) starts.push_back(vec_json(s));
            sj["starts"] = starts;
            diag["selection"] = sj;
            if (k == 1) warnings.emplace_back("nothing to borrow: single study, reporting the MLE");
            if (!sel.converged) warnings.emplace_back("optimizer did not converge; best point found is reported");
        }
        Vector beta = fit.beta_hat;
        Matrix cov = fit.covariance;
        if (prep.record) {
            beta = prep.record->back_transform(beta);
            cov = prep.record->back_transform_covariance(cov);
        }
        diag["pi"] = vec_json(fit.pi.values());
        if (fit.ray) {
            diag["ray"] = {{"c", fit.ray->c}, {"pi_r", vec_json(fit.ray->pi_r)}};
            diag["centroid"] = vec_json(*fit.theta_hat);
        }
        diag["notes"] = fit.meta.notes;

        fit_csv << "study_id,covariate,estimate,mle,centroid,pi\n";
        for (int j = 0; j < k; ++j)
            for (int l = 0; l < p; ++l) {
                fit_csv << ids[static_cast<std::size_t>(j)] << ',' << names[static_cast<std::size_t>(l)] << ','
                        << beta(j * p + l) << ',' << problem.study(j).beta_tilde(l) << ',';
                if (fit.theta_hat) {
                    const double scale = prep.record ? prep.record->scales(j)(l) : 1.0;
                    fit_csv << (*fit.theta_hat)(l) / scale;
                } else {
                    fit_csv << "NA";
                }
                fit_csv << ',' << fit.pi[j] << '\n';
            }
        const auto table = interval_table(ids, p, beta, cov, o.shared.alpha, Vector::Zero(beta.size()));
        auto f = open_out(dir / "intervals.csv");
        write_csv(f, table, names);

        out << (o.estimator == "mle" ? "study-specific MLE" : "HAM estimate") << " (k = " << k << ", p = " << p << ")\n";
        out << "  " << std::left << std::setw(16) << "study" << std::right << std::setw(10) << "pi" << '\n';
        for (int j = 0; j < k; ++j)
            out << "  " << std::left << std::setw(16) << ids[static_cast<std::size_t>(j)] << std::right << std::setw(10)
                << fmt(fit.pi[j], 4) << '\n';
    } else {
        throw InputError("unknown estimator '" + o.estimator + "'");
    }

    diag["warnings"] = warnings;
    auto d = open_out(dir / "diagnostics.json");
    d << diag.dump(2) << '\n';
    for (const auto& w : warnings) err << "warning: " << w << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

int cmd_compare(const FitOptions& o, std::ostream& out, std::ostream& err) {
    const io::InputDocument doc = io::load_document_file(o.shared.input);
    const MetaProblem& problem = doc.problem;
    if (problem.k() < 2) throw InputError("compare needs at least two studies");
    const auto names = covariate_labels(doc);
    const auto ids = study_ids(problem);
    const int p = problem.p();
    const int k = problem.k();
    const double alpha = o.shared.alpha;
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const fs::path dir = prepare_dir(o.shared.output_dir);
    const Prepared prep = prepare(problem, o.shared);
    const MetaProblem& work = prep.work;

    const SelectionResult sel = select_pi_ham(work, selection_from(o));
    HamFit ham = fit_at(work, sel.pi);
    HamFit mle = fit_at(work, ShrinkageVector(Vector::Zero(k)));

    // Meta-level estimators on the working scale.
    const Vector fe = fixed_effect(work);
    Matrix pooled = Matrix::Zero(p, p);
    for (int j = 0; j < k; ++j) pooled += work.precision(j);
    const Matrix fe_cov = linalg::spd_inverse(linalg::symmetrize(pooled));
    Vector theta = Vector::Constant(p, std::numeric_limits<double>::quiet_NaN());
    Matrix theta_cov = Matrix::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    if (!sel.pi.all_zero()) {
        const MixingStructure mix(work, sel.pi);
        theta = mix.apply_a(work.stacked_beta_tilde());
        theta_cov = mix.mixed_variance();
    }

    auto meta_csv = open_out(dir / "compare.csv");
    meta_csv << "covariate,estimator,estimate,se,lower,upper\n";
    out << "Meta-level " << 100.0 * (1.0 - alpha) << "% intervals"
        << (o.shared.standardize ? " (standardized scale)" : "") << '\n';
    out << "  " << std::left << std::setw(22) << "covariate" << std::right << std::setw(12) << "FE lower"
        << std::setw(12) << "FE upper" << std::setw(14) << "centroid lo" << std::setw(14) << "centroid up" << '\n';
    for (int l = 0; l < p; ++l) {
        const double fse = std::sqrt(fe_cov(l, l));
        const double tse = std::sqrt(theta_cov(l, l));
        const std::string& nm = names[static_cast<std::size_t>(l)];
        meta_csv << nm << ",fixed-effect," << fe(l) << ',' << fse << ',' << fe(l) - z * fse << ',' << fe(l) + z * fse << '\n';
        meta_csv << nm << ",centroid," << fmt(theta(l), 10) << ',' << fmt(tse, 10) << ',' << fmt(theta(l) - z * tse, 10)
                 << ',' << fmt(theta(l) + z * tse, 10) << '\n';
        out << "  " << std::left << std::setw(22) << nm << std::right << std::setw(12) << fmt(fe(l) - z * fse, 4)
            << std::setw(12) << fmt(fe(l) + z * fse, 4) << std::setw(14) << fmt(theta(l) - z * tse, 4) << std::setw(14)
            << fmt(theta(l) + z * tse, 4) << '\n';
    }
    out << "  note: the centroid is a pi-weighted anchor and is not necessarily equal to a common mean "
           "coefficient when studies are heterogeneous.\n";

    Vector bh = ham.beta_hat, bm = mle.beta_hat;
    Matrix ch = ham.covariance, cm = mle.covariance;
    if (prep.record) {
        bh = prep.record->back_transform(bh);
        bm = prep.record->back_transform(bm);
        ch = prep.record->back_transform_covariance(ch);
        cm = prep.record->back_transform_covariance(cm);
    }
    const auto th = interval_table(ids, p, bh, ch, alpha, Vector::Zero(bh.size()));
    const auto tm = interval_table(ids, p, bm, cm, alpha, Vector::Zero(bm.size()));

    auto st = open_out(dir / "compare_studies.csv");
    st << "study_id,covariate,pi,mle,mle_lower,mle_upper,mle_p,ham,ham_lower,ham_upper,ham_p\n";
    // [covariate] -> {HAM sig & MLE sig, HAM sig & MLE ns, HAM ns & MLE sig, HAM ns & MLE ns}
    std::vector<std::array<int, 4>> cross(static_cast<std::size_t>(p), {0, 0, 0, 0});
    auto pval = [](double v) { return std::isnan(v) ? std::string("NA") : fmt(v, 10); };
    for (std::size_t i = 0; i < th.rows.size(); ++i) {
        const auto& h = th.rows[i];
        const auto& m = tm.rows[i];
        const int j = static_cast<int>(i) / p;
        st << h.study_id << ',' << names[static_cast<std::size_t>(h.covariate)] << ',' << sel.pi[j] << ',' << m.estimate
           << ',' << m.lower << ',' << m.upper << ',' << pval(m.p_value) << ',' << h.estimate << ',' << h.lower << ','
           << h.upper << ',' << pval(h.p_value) << '\n';
        const bool hs = h.p_value <= alpha;
        const bool ms = m.p_value <= alpha;
        auto& c = cross[static_cast<std::size_t>(h.covariate)];
        ++c[hs ? (ms ? 0 : 1) : (ms ? 2 : 3)];
    }

    auto sig = open_out(dir / "significance.csv");
    sig << "covariate,ham_sig_mle_sig,ham_sig_mle_ns,ham_ns_mle_sig,ham_ns_mle_ns\n";
    out << "\nHypothesis tests against 0 across k = " << k << " studies (alpha = " << alpha << ")\n";
    out << "  " << std::left << std::setw(22) << "" << std::right << std::setw(22) << "p_HAM <= alpha" << std::setw(22)
        << "p_HAM > alpha" << '\n';
    out << "  " << std::left << std::setw(22) << "covariate" << std::right << std::setw(11) << "MLE sig" << std::setw(11)
        << "MLE ns" << std::setw(11) << "MLE sig" << std::setw(11) << "MLE ns" << '\n';
    for (int l = 0; l < p; ++l) {
        const auto& c = cross[static_cast<std::size_t>(l)];
        sig << names[static_cast<std::size_t>(l)] << ',' << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3] << '\n';
        out << "  " << std::left << std::setw(22) << names[static_cast<std::size_t>(l)] << std::right << std::setw(11)
            << c[0] << std::setw(11) << c[1] << std::setw(11) << c[2] << std::setw(11) << c[3] << '\n';
    }

    io::Json diag;
    diag["k"] = k;
    diag["p"] = p;
    diag["heterogeneity"] = heterogeneity_json(problem);
    diag["pi"] = vec_json(sel.pi.values());
    diag["objective"] = sel.objective;
    diag["converged"] = sel.converged;
    diag["notes"] = sel.notes;
    auto d = open_out(dir / "diagnostics.json");
    d << diag.dump(2) << '\n';
    if (!sel.converged) err << "warning: optimizer did not converge; best point found is reported\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
    Shared shared;
    std::string setting = "2";
    std::string het = "none";
    int k = 5;
    int p = 0;  // 0: setting default
    std::vector<long> n;
    int scenario = 1;
    int reps = 1000;
    std::string cells = "default";
    std::vector<std::string> estimators;
    bool emit_plot_data = false;
    int restarts = 4;
    int sites = 29;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out, std::ostream& err) {
    const fs::path dir = prepare_dir(o.shared.output_dir);
    if (o.setting == "corpus") {
        if (o.sites < 2) throw InputError("--sites must be >= 2");
        const auto corpus = sim::generate_corpus(o.shared.seed, o.sites);
        auto f = open_out(dir / "corpus.json");
        f << std::setprecision(17) << io::to_json(corpus.problem, corpus.covariates).dump(1) << '\n';
        out << "wrote " << (dir / "corpus.json").string() << " (" << corpus.problem.k() << " studies, p = "
            << corpus.problem.p() << ")\n";
        return kOk;
    }

    sim::SimConfig cfg;
    cfg.setting = sim::parse_setting(o.setting);
    cfg.replicate_count = o.reps;
    cfg.alpha = o.shared.alpha;
    cfg.master_seed = o.shared.seed;
    cfg.standardize = o.shared.standardize;
    cfg.threads = resolve_threads(o.shared.threads);
    cfg.selection.restarts = o.restarts;

    if (o.cells == "all") {
        cfg.cells = sim::grid_cells(cfg.setting);
    } else if (o.cells == "default") {
        sim::CellSpec c;
        c.heterogeneity = sim::parse_heterogeneity(o.het);
        c.scenario = o.scenario;
        c.k = o.k;
        switch (cfg.setting) {
            case sim::Setting::S1:
                c.k = 3;
                c.p = o.p > 0 ? o.p : 2;
                c.n = o.n.empty() ? std::vector<long>{100, 100, 100} : o.n;
                break;
            case sim::Setting::S2:
                c.p = 4;
                c.n = {o.n.empty() ? 200L : o.n.front()};
                break;
            case sim::Setting::S3:
                c.k = 20;
                c.p = 1;
                c.n = {o.n.empty() ? 200L : o.n.front()};
                break;
            case sim::Setting::S4:
                c.k = 3;
                c.p = 4;
                c.n = {o.n.empty() ? 100L : o.n.front()};
                break;
            case sim::Setting::Selection:
                c.k = 3;
                c.p = 4;
                c.n = o.n.empty() ? std::vector<long>{100, 100, 100} : o.n;
                break;
            case sim::Setting::Custom:
                c.p = o.p > 0 ? o.p : 4;
                c.n = {o.n.empty() ? 200L : o.n.front()};
                break;
        }
        cfg.cells = {c};
    } else {
        throw InputError("--cells must be 'default' or 'all'");
    }

    if (!o.estimators.empty()) {
        cfg.estimators.clear();
        for (const auto& e : o.estimators) cfg.estimators.push_back(sim::parse_estimator(e));
    } else if (cfg.setting == sim::Setting::S4) {
        cfg.estimators = {sim::Estimator::Mle, sim::Estimator::Ham, sim::Estimator::Ridge};
    } else if (cfg.setting == sim::Setting::Selection) {
        cfg.estimators = {sim::Estimator::Mle, sim::Estimator::HamTrueMse, sim::Estimator::HamUmse,
                          sim::Estimator::HamBmse, sim::Estimator::Ham};
    }

    const sim::SimReport report = sim::run_cells(cfg);
    {
        auto f = open_out(dir / "sim_report.csv");
        sim::write_csv(f, report);
    }
    {
        auto f = open_out(dir / "sim_table.txt");
        sim::write_table(f, report);
    }
    if (o.emit_plot_data) {
        auto f = open_out(dir / "plot_data.csv");
        sim::write_plot_data(f, report);
    }
    sim::write_table(out, report);
    for (const auto& c : report.cells)
        err << "cell " << c.label << ": " << std::fixed << std::setprecision(2) << c.runtime_seconds << " s\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

struct CheckCmdOptions {
    Shared shared;
    std::vector<std::string> suites;
    int instances = 100;
    long mc_reps = 100000;
    bool inject_sign_flip = false;
};

int cmd_check(const CheckCmdOptions& o, std::ostream& out, std::ostream& err) {
    checks::CheckOptions co;
    co.instances = o.instances;
    co.seed = o.shared.seed;
    co.mc_replicates = o.mc_reps;
    co.mutate_tr_cov_sign = o.inject_sign_flip;
    const auto suites = o.suites.empty() ? checks::suite_names() : o.suites;
    for (const auto& s : suites) {
        const auto& all = checks::suite_names();
        if (std::find(all.begin(), all.end(), s) == all.end())
            throw InputError("unknown suite '" + s + "'");
    }
    const fs::path dir = prepare_dir(o.shared.output_dir);

    bool all_ok = true;
    std::string first_counterexample;
    auto report = open_out(dir / "check_report.csv");
    report << "suite,instances,failures,status,detail\n";
    out << std::left << std::setw(18) << "suite" << std::right << std::setw(10) << "instances" << std::setw(10)
        << "failures" << std::setw(10) << "seconds" << "  status\n";
    for (const auto& name : suites) {
        const auto r = checks::run_suite(name, co);
        const bool ok = r.passed();
        all_ok = all_ok && ok;
        if (!ok && first_counterexample.empty()) first_counterexample = r.counterexample;
        out << std::left << std::setw(18) << name << std::right << std::setw(10) << r.instances << std::setw(10)
            << r.failures << std::setw(10) << std::fixed << std::setprecision(2) << r.seconds << "  "
            << (ok ? "PASS" : "FAIL") << (r.detail.empty() ? "" : "  (" + r.detail + ")") << '\n';
        out.unsetf(std::ios::fixed);
        report << name << ',' << r.instances << ',' << r.failures << ',' << (ok ? "pass" : "fail") << ",\""
               << r.detail << "\"\n";
    }
    if (!all_ok) {
        auto f = open_out(dir / "counterexample.json");
        f << first_counterexample << '\n';
        err << "verification failed; first counterexample:\n" << first_counterexample << '\n';
        return kVerificationFailure;
    }
    return kOk;
}

// `ham --config effective_config.toml` reproduces the run.
void echo_config(const CLI::App* sub, const std::string& output_dir) {
    const fs::path dir = prepare_dir(output_dir);
    std::ofstream f(dir / "effective_config.toml");
    f << '[' << sub->get_name() << "]\n" << sub->config_to_str(true, false);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Heterogeneity-adaptive meta-analysis for linear models", "ham"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML config file with a [command] section; flags override it");

    FitOptions fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit one estimator to a summary-statistics document");
    add_shared(fit_cmd, fit.shared, true);
    fit_cmd->add_option("--estimator", fit.estimator, "ham, mle, fe or ridge")
        ->capture_default_str()
        ->check(CLI::IsMember({"ham", "mle", "fe", "ridge"}));
    fit_cmd->add_option("--criterion", fit.criterion, "Selection criterion: pseudo-mse, umse or bmse")
        ->capture_default_str()
        ->check(CLI::IsMember({"pseudo-mse", "umse", "bmse"}));
    fit_cmd->add_option("--pseudo-sign", fit.sign, "plus or minus")
        ->capture_default_str()
        ->check(CLI::IsMember({"plus", "minus"}));
    fit_cmd->add_option("--restarts", fit.restarts, "Jittered optimizer restarts")->capture_default_str()->check(CLI::NonNegativeNumber);
    fit_cmd->add_option("--max-iterations", fit.max_iterations, "Optimizer iteration cap per start (0: scale with k)")->capture_default_str()->check(CLI::NonNegativeNumber);
    fit_cmd->add_option("--tolerance", fit.tolerance, "Optimizer tolerance")->capture_default_str()->check(CLI::PositiveNumber);

    FitOptions cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "Side-by-side FE, centroid, MLE and HAM inference");
    add_shared(cmp_cmd, cmp.shared, true);
    cmp_cmd->add_option("--restarts", cmp.restarts, "Jittered optimizer restarts")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmp_cmd->add_option("--pseudo-sign", cmp.sign, "plus or minus")
        ->capture_default_str()
        ->check(CLI::IsMember({"plus", "minus"}));

    SimulateOptions simo;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo harness");
    add_shared(sim_cmd, simo.shared, false);
    sim_cmd->add_option("--setting", simo.setting, "1, 2, 3, 4, selection, custom or corpus")
        ->capture_default_str()
        ->check(CLI::IsMember({"1", "2", "3", "4", "selection", "custom", "corpus"}));
    sim_cmd->add_option("--het", simo.het, "none, mild, moderate or mixture")
        ->capture_default_str()
        ->check(CLI::IsMember({"none", "mild", "moderate", "mixture"}));
    sim_cmd->add_option("--k", simo.k, "Number of studies (settings 2 and custom)")->capture_default_str()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--p", simo.p, "Shared covariates (setting 1 and custom), 0 for the default")->capture_default_str();
    sim_cmd->add_option("--n", simo.n, "Sample size(s)")->delimiter(',');
    sim_cmd->add_option("--scenario", simo.scenario, "Scenario (setting 3: 1-2, setting 4: 1-4)")->capture_default_str();
    sim_cmd->add_option("--reps", simo.reps, "Monte-Carlo replicates")->capture_default_str()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--cells", simo.cells, "default (one cell from flags) or all")
        ->capture_default_str()
        ->check(CLI::IsMember({"default", "all"}));
    sim_cmd->add_option("--estimators", simo.estimators, "Subset of MLE, FE, HAM, Ridge, HAM-true-MSE, HAM-UMSE, HAM-BMSE")
        ->delimiter(',');
    sim_cmd->add_option("--restarts", simo.restarts, "Jittered optimizer restarts")->capture_default_str()->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--sites", simo.sites, "Studies in the synthetic corpus")->capture_default_str();
    sim_cmd->add_flag("--emit-plot-data", simo.emit_plot_data, "Write long-format plot_data.csv");

    CheckCmdOptions chk;
    auto* chk_cmd = app.add_subcommand("check", "Run the oracle and property suites");
    add_shared(chk_cmd, chk.shared, false);
    chk_cmd->add_option("--suite", chk.suites, "oracle, equal, ray, sign, calibration, consistency")->delimiter(',');
    chk_cmd->add_option("--instances", chk.instances, "Random instances per suite")->capture_default_str()->check(CLI::PositiveNumber);
    chk_cmd->add_option("--mc-reps", chk.mc_reps, "Monte-Carlo replicates for calibration")->capture_default_str()->check(CLI::PositiveNumber);
    chk_cmd->add_flag("--inject-sign-flip", chk.inject_sign_flip, "Test hook: corrupt the c* prediction");

    std::vector<const char*> argv{"ham"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInputError;
    }

    try {
        if (fit_cmd->parsed()) {
            echo_config(fit_cmd, fit.shared.output_dir);
            return cmd_fit(fit, out, err);
        }
        if (cmp_cmd->parsed()) {
            echo_config(cmp_cmd, cmp.shared.output_dir);
            return cmd_compare(cmp, out, err);
        }
        if (sim_cmd->parsed()) {
            echo_config(sim_cmd, simo.shared.output_dir);
            return cmd_simulate(simo, out, err);
        }
        if (chk_cmd->parsed()) {
            echo_config(chk_cmd, chk.shared.output_dir);
            return cmd_check(chk, out, err);
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }
    return kInputError;
}

}  // namespace ham::cli
