#include "helpers.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ham;
using testing::vec;
using Catch::Approx;

namespace {

io::InputDocument parse(const std::string& text) {
    std::istringstream in(text);
    return io::load_document(in);
}

}  // namespace

TEST_CASE("single-study document gives W = gram / sigma2", "[model][io]") {
    const auto doc = parse(R"({"studies":[{"id":"only","p":1,"q":1,"n":10,"sigma2":1,
                                          "beta_tilde":[2],"gram_proj":[[5]]}]})");
    REQUIRE(doc.problem.k() == 1);
    CHECK(doc.problem.precision(0)(0, 0) == Approx(5.0));
    CHECK(doc.problem.mle_cov(0)(0, 0) == Approx(0.2));
}

TEST_CASE("studies disagreeing on p are rejected", "[model][io]") {
    const std::string text = R"({"studies":[
        {"id":"a","p":2,"q":2,"n":10,"sigma2":1,"beta_tilde":[1,2],"gram_proj":[[2,0],[0,2]]},
        {"id":"b","p":3,"q":3,"n":10,"sigma2":1,"beta_tilde":[1,2,3],"gram_proj":[[2,0,0],[0,2,0],[0,0,2]]}]})";
    CHECK_THROWS_AS(parse(text), InputError);
    try {
        parse(text);
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
}

TEST_CASE("indefinite gram is rejected with its smallest eigenvalue", "[model][io]") {
    // eigenvalues of [[1,2],[2,1]] are 3 and -1
    const std::string text = R"({"studies":[{"id":"bad","p":2,"q":2,"n":10,"sigma2":1,
                                           "beta_tilde":[0,0],"gram_proj":[[1,2],[2,1]]}]})";
    try {
        parse(text);
        FAIL("expected an InputError");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("positive definite") != std::string::npos);
        CHECK(msg.find("-1") != std::string::npos);
    }
}

TEST_CASE("document validation errors", "[model][io]") {
    CHECK_THROWS_AS(parse("not json"), InputError);
    CHECK_THROWS_AS(parse(R"({"studies":[]})"), InputError);
    CHECK_THROWS_AS(parse(R"({"studies":[{"id":"x","p":1,"q":1,"n":1,"sigma2":1,"beta_tilde":[0],"gram_proj":[[1]]}]})"),
                    InputError);  // n < q + 1
    CHECK_THROWS_AS(parse(R"({"studies":[{"id":"x","p":1,"q":1,"n":5,"sigma2":0,"beta_tilde":[0],"gram_proj":[[1]]}]})"),
                    InputError);
    CHECK_THROWS_AS(parse(R"({"studies":[{"id":"x","p":2,"q":2,"n":5,"sigma2":1,"beta_tilde":[0],"gram_proj":[[1,0],[0,1]]}]})"),
                    InputError);
    CHECK_THROWS_AS(parse(R"({"studies":[{"id":"x","p":2,"q":2,"n":5,"sigma2":1,"beta_tilde":[0,0],"gram_proj":[[1,0.5],[0,1]]}]})"),
                    InputError);  // asymmetric
}

TEST_CASE("covariance entry path inverts to the gram", "[model][io]") {
    const auto doc = parse(R"({"studies":[{"id":"c","p":1,"q":1,"n":10,"sigma2":2,
                                          "beta_tilde":[1],"cov_full":[[0.5]]}]})");
    CHECK(doc.problem.study(0).gram_proj(0, 0) == Approx(4.0));
}

TEST_CASE("json round trip preserves the problem", "[model][io]") {
    const auto inst = testing::random_instance(11);
    std::istringstream in(io::to_json(inst.problem).dump());
    const MetaProblem back = io::load_meta_problem(in);
    REQUIRE(back.k() == inst.problem.k());
    for (int j = 0; j < back.k(); ++j) {
        CHECK(testing::max_abs(back.study(j).gram_proj - inst.problem.study(j).gram_proj) < 1e-9);
        CHECK(testing::max_abs(back.study(j).beta_tilde - inst.problem.study(j).beta_tilde) < 1e-12);
    }
}

TEST_CASE("intercept-only raw study", "[model]") {
    const Matrix x = Matrix::Ones(4, 1);
    const Vector y = vec({1, 2, 3, 4});
    const StudySummary s = summarize_raw_study(x, std::nullopt, y, "m");
    CHECK(s.beta_tilde(0) == Approx(2.5));
    CHECK(s.sigma2 == Approx(1.25));  // RSS / n = 5 / 4
    CHECK(s.gram_proj(0, 0) == Approx(4.0));
    const StudySummary u = summarize_raw_study(x, std::nullopt, y, "u", SigmaConvention::Unbiased);
    CHECK(u.sigma2 == Approx(5.0 / 3.0));
}

TEST_CASE("nuisance columns orthogonal to X leave the gram unchanged", "[model]") {
    Matrix x(4, 1);
    x << 1, 1, 1, 1;
    Matrix z(4, 1);
    z << 1, -1, 1, -1;
    const Vector y = vec({1, 3, 2, 5});
    const StudySummary s = summarize_raw_study(x, z, y);
    CHECK(s.gram_proj(0, 0) == Approx(4.0).epsilon(1e-14));
    CHECK(s.q == 2);
}

TEST_CASE("collinear nuisance column is rank deficient", "[model]") {
    const Matrix x = testing::vec({1, 2, 3, 4, 5});
    const Matrix z = x;
    CHECK_THROWS_AS(summarize_raw_study(x, z, vec({1, 0, 1, 0, 2})), InputError);
}

TEST_CASE("projected gram agrees with the reported-covariance path", "[model]") {
    std::mt19937_64 g(3);
    std::normal_distribution<double> nz;
    const long n = 40;
    Matrix x(n, 2), z(n, 1);
    Vector y(n);
    for (long i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = nz(g);
        z(i, 0) = 0.4 * x(i, 1) + nz(g);
        y(i) = 1.0 + 0.5 * x(i, 1) - z(i, 0) + nz(g);
    }
    const StudySummary s = summarize_raw_study(x, z, y);
    Matrix full(n, 3);
    full << x, z;
    const Matrix cov_full = s.sigma2 * linalg::spd_inverse(full.transpose() * full);
    const Matrix g2 = precision_from_covariance(cov_full, s.sigma2, 2);
    CHECK(testing::max_abs(g2 - s.gram_proj) / testing::max_abs(s.gram_proj) < 1e-8);
    // q = p: sigma2 (X'X)^-1 maps back to X'X
    const Matrix xx = x.transpose() * x;
    CHECK(testing::max_abs(precision_from_covariance(2.0 * linalg::spd_inverse(xx), 2.0, 2) - xx) < 1e-8);
}

TEST_CASE("singular reported covariance is rejected", "[model]") {
    Matrix c(2, 2);
    c << 1, 1, 1, 1;
    CHECK_THROWS(precision_from_covariance(c, 1.0, 2));
}

TEST_CASE("standardize rescales a slope by its SD", "[model]") {
    StudySummary s;
    s.study_id = "s";
    s.p = 2;
    s.q = 2;
    s.n = 50;
    s.sigma2 = 1.0;
    s.beta_tilde = vec({1.0, 0.3});
    const double a = 7.0, b = 900.0;
    s.gram_proj.resize(2, 2);
    s.gram_proj << 50.0, a, a, b;
    s.covariate_sds = vec({0.0, 10.0});
    s.intercept_index = 0;
    const auto [std_problem, record] = standardize(MetaProblem({s}));
    const auto& t = std_problem.study(0);
    CHECK(t.beta_tilde(0) == Approx(1.0));
    CHECK(t.beta_tilde(1) == Approx(3.0));
    CHECK(t.gram_proj(0, 0) == Approx(50.0));
    CHECK(t.gram_proj(0, 1) == Approx(a / 10.0));
    CHECK(t.gram_proj(1, 1) == Approx(b / 100.0));

    const StudySummary back = record.invert(0, t);
    CHECK(testing::max_abs(back.beta_tilde - s.beta_tilde) < 1e-12);
    CHECK(testing::max_abs(back.gram_proj - s.gram_proj) < 1e-10 * b);
    CHECK(testing::max_abs(record.back_transform(std_problem.stacked_beta_tilde()) - s.beta_tilde) < 1e-12);
}

TEST_CASE("standardize is the identity when SDs are already one", "[model]") {
    StudySummary s = testing::scalar_study("s", 3.0, 2.0);
    s.covariate_sds = vec({1.0});
    const auto [p2, rec] = standardize(MetaProblem({s}));
    CHECK(p2.study(0).beta_tilde(0) == 2.0);
    CHECK(p2.study(0).gram_proj(0, 0) == 3.0);
}

TEST_CASE("standardize needs recorded SDs", "[model]") {
    CHECK_THROWS_AS(standardize(testing::two_scalar_studies()), InputError);
}

TEST_CASE("standardized fit is equivariant under rescaling a covariate", "[model]") {
    // Multiplying a raw covariate by 10 in every study must not move the
    // back-transformed HAM fit.
    std::mt19937_64 g(5);
    std::normal_distribution<double> nz;
    std::vector<StudySummary> raw, scaled;
    for (int j = 0; j < 3; ++j) {
        const long n = 60;
        Matrix x(n, 2);
        Vector y(n);
        for (long i = 0; i < n; ++i) {
            x(i, 0) = 1.0;
            x(i, 1) = nz(g);
            y(i) = 1.0 + 0.2 * j + (0.5 - 0.1 * j) * x(i, 1) + nz(g);
        }
        raw.push_back(summarize_raw_study(x, std::nullopt, y, "s", SigmaConvention::Mle, 0));
        Matrix x10 = x;
        x10.col(1) *= 10.0;
        scaled.push_back(summarize_raw_study(x10, std::nullopt, y, "s", SigmaConvention::Mle, 0));
    }
    const auto [a, ra] = standardize(MetaProblem(raw));
    const auto [b, rb] = standardize(MetaProblem(scaled));
    const ShrinkageVector pi(vec({0.3, 0.5, 0.2}));
    const Vector ha = ra.back_transform(ham_beta(a, pi));
    const Vector hb = rb.back_transform(ham_beta(b, pi));
    for (int j = 0; j < 3; ++j) {
        CHECK(ha(2 * j) == Approx(hb(2 * j)).epsilon(1e-10));
        CHECK(ha(2 * j + 1) == Approx(10.0 * hb(2 * j + 1)).epsilon(1e-10));
    }
}

TEST_CASE("shrinkage vectors live in the unit box", "[model]") {
    CHECK_THROWS_AS(ShrinkageVector(vec({0.5, 1.2})), InputError);
    CHECK_THROWS_AS(ShrinkageVector(vec({-0.1})), InputError);
    CHECK(ShrinkageVector(vec({0.0, 0.0})).all_zero());
}

TEST_CASE("csv studies load relative to the manifest", "[model][io]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ham_csv_test";
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "s1.csv");
        f << "y,x,z\n1,0,1\n2,1,0\n2.5,2,1\n4,3,0\n5.5,4,1\n5,5,0\n";
    }
    {
        std::ofstream f(dir / "manifest.json");
        f << R"json({"covariates":["Intercept","x"],"studies":[{"id":"s1","csv":"s1.csv","outcome":"y",
               "shared":["(intercept)","x"],"nuisance":["z"]}]})json";
    }
    const auto doc = io::load_document_file((dir / "manifest.json").string());
    REQUIRE(doc.problem.k() == 1);
    CHECK(doc.problem.p() == 2);
    CHECK(doc.problem.study(0).q == 3);
    CHECK(doc.covariates.size() == 2);
    fs::remove_all(dir);
}
