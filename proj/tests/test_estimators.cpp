#include "helpers.hpp"

using namespace ham;
using testing::vec;
using Catch::Approx;

namespace {

/// Dense A = [A_1 ... A_k] and B = K A - I assembled independently of MixingStructure.
std::pair<Matrix, Matrix> dense_ab(const MetaProblem& m, const Vector& pi) {
    const int p = m.p(), k = m.k();
    Matrix s = Matrix::Zero(p, p);
    for (int j = 0; j < k; ++j) s += pi(j) * m.precision(j);
    const Matrix s_inv = s.inverse();
    Matrix a(p, p * k);
    for (int j = 0; j < k; ++j) a.middleCols(j * p, p) = s_inv * pi(j) * m.precision(j);
    Matrix kmat(p * k, p);
    for (int j = 0; j < k; ++j) kmat.middleRows(j * p, p) = Matrix::Identity(p, p);
    return {a, kmat * a - Matrix::Identity(p * k, p * k)};
}

}  // namespace

TEST_CASE("MLE stack", "[estimators]") {
    const auto m = testing::two_scalar_studies();
    const auto [beta, cov] = mle_stack(m);
    CHECK(beta(0) == 1.0);
    CHECK(beta(1) == 3.0);
    CHECK(cov(0, 0) == Approx(0.5));
    CHECK(cov(1, 1) == Approx(0.25));
    CHECK(cov(0, 1) == 0.0);

    const MetaProblem one({testing::scalar_study("x", 5.0, 2.0)});
    CHECK(mle_stack(one).second(0, 0) == Approx(0.2));
}

TEST_CASE("MLE stack is order equivariant", "[estimators]") {
    const auto inst = testing::random_instance(21, {.k_min = 3, .k_max = 3, .p_min = 2, .p_max = 2});
    auto studies = inst.problem.studies();
    std::swap(studies[0], studies[2]);
    const MetaProblem swapped(studies);
    const auto [b1, c1] = mle_stack(inst.problem);
    const auto [b2, c2] = mle_stack(swapped);
    CHECK(testing::max_abs(b1.segment(0, 2) - b2.segment(4, 2)) == 0.0);
    CHECK(testing::max_abs(c1.block(0, 0, 2, 2) - c2.block(4, 4, 2, 2)) == 0.0);
}

TEST_CASE("fixed effect", "[estimators]") {
    CHECK(fixed_effect(testing::two_scalar_studies())(0) == Approx(7.0 / 3.0));
    const MetaProblem one({testing::scalar_study("x", 5.0, 2.0)});
    CHECK(fixed_effect(one)(0) == 2.0);
    const MetaProblem same({testing::scalar_study("a", 1.0, 4.0), testing::scalar_study("b", 9.0, 4.0)});
    CHECK(fixed_effect(same)(0) == Approx(4.0));
}

TEST_CASE("mixing structure on the scalar pair", "[estimators]") {
    const auto m = testing::two_scalar_studies();
    const MixingStructure mix(m, ShrinkageVector(vec({1, 1})));
    CHECK(mix.a_block(0)(0, 0) == Approx(1.0 / 3.0));
    CHECK(mix.a_block(1)(0, 0) == Approx(2.0 / 3.0));
    const Matrix b = mix.b_dense();
    CHECK(b(0, 0) == Approx(-2.0 / 3.0));
    CHECK(b(0, 1) == Approx(2.0 / 3.0));
    CHECK(b(1, 0) == Approx(1.0 / 3.0));
    CHECK(b(1, 1) == Approx(-1.0 / 3.0));
}

TEST_CASE("mixing structure matches a dense oracle", "[estimators][property]") {
    std::mt19937_64 g(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const auto inst = ham::checks::random_instance(g);
        const int k = inst.problem.k(), p = inst.problem.p();
        Vector pi(k);
        for (int j = 0; j < k; ++j) pi(j) = 0.05 + 0.9 * u(g);
        const MixingStructure mix(inst.problem, ShrinkageVector(pi));
        const auto [a, b] = dense_ab(inst.problem, pi);
        CHECK(testing::max_abs(mix.a_dense() - a) < 1e-10 * (1.0 + testing::max_abs(a)));
        CHECK(testing::max_abs(mix.b_dense() - b) < 1e-10 * (1.0 + testing::max_abs(b)));
        // A K = I
        Matrix ak = Matrix::Zero(p, p);
        for (int j = 0; j < k; ++j) ak += mix.a_block(j);
        CHECK(testing::max_abs(ak - Matrix::Identity(p, p)) < 1e-10);
        // B annihilates stacked copies
        Vector v(p);
        for (int l = 0; l < p; ++l) v(l) = u(g) * 4.0 - 2.0;
        Vector stacked(k * p);
        for (int j = 0; j < k; ++j) stacked.segment(j * p, p) = v;
        CHECK(mix.apply_b(stacked).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + v.norm()));
        // scale cancellation
        const double s = 0.5 / pi.maxCoeff();
        const MixingStructure scaled(inst.problem, ShrinkageVector(s * pi));
        CHECK(testing::max_abs(scaled.a_dense() - mix.a_dense()) < 1e-10);
    }
}

TEST_CASE("one-hot shrinkage centres on that study", "[estimators]") {
    const auto inst = testing::random_instance(5, {.k_min = 3, .k_max = 3});
    const int p = inst.problem.p();
    const ShrinkageVector pi(vec({0.0, 0.7, 0.0}));
    const MixingStructure mix(inst.problem, pi);
    CHECK(testing::max_abs(mix.a_block(1) - Matrix::Identity(p, p)) < 1e-12);
    CHECK(testing::max_abs(mix.a_block(0)) < 1e-12);
    CHECK(testing::max_abs(centroid(inst.problem, pi) - inst.problem.study(1).beta_tilde) < 1e-10);
    const Vector b = mix.apply_b(inst.problem.stacked_beta_tilde());
    CHECK(b.segment(p, p).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("centroid", "[estimators]") {
    const auto m = testing::two_scalar_studies();
    CHECK(centroid(m, ShrinkageVector(vec({0.5, 0.5})))(0) == Approx(7.0 / 3.0));

    const auto inst = testing::random_instance(8);
    const int k = inst.problem.k();
    const Vector fe = fixed_effect(inst.problem);
    CHECK(testing::max_abs(centroid(inst.problem, ShrinkageVector::constant(k, 0.3)) - fe) < 1e-10);

    Vector pi(k);
    for (int j = 0; j < k; ++j) pi(j) = 0.1 + 0.2 * j;
    const Vector c1 = centroid(inst.problem, ShrinkageVector(pi));
    const Vector c2 = centroid(inst.problem, ShrinkageVector(pi / pi.maxCoeff()));
    CHECK(testing::max_abs(c1 - c2) < 1e-12);

    CHECK_THROWS_AS(centroid(m, ShrinkageVector(vec({0, 0}))), NumericError);
}

TEST_CASE("HAM estimate", "[estimators]") {
    const auto m = testing::two_scalar_studies();
    const Vector h = ham_beta(m, ShrinkageVector(vec({0.5, 0.5})));
    CHECK(h(0) == Approx(5.0 / 3.0));
    CHECK(h(1) == Approx(8.0 / 3.0));
    CHECK(ham_beta(m, ShrinkageVector(vec({0, 0}))) == m.stacked_beta_tilde());

    const auto inst = testing::random_instance(13);
    const int k = inst.problem.k(), p = inst.problem.p();
    const Vector full = ham_beta(inst.problem, ShrinkageVector::constant(k, 1.0));
    const Vector fe = fixed_effect(inst.problem);
    for (int j = 0; j < k; ++j) CHECK(testing::max_abs(full.segment(j * p, p) - fe) < 1e-10);
}

TEST_CASE("HAM estimate lies between the MLE and the centroid", "[estimators][property]") {
    std::mt19937_64 g(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const auto inst = ham::checks::random_instance(g);
        const int k = inst.problem.k(), p = inst.problem.p();
        Vector pi(k);
        for (int j = 0; j < k; ++j) pi(j) = u(g);
        const ShrinkageVector sp(pi);
        const Vector h = ham_beta(inst.problem, sp);
        const Vector c = centroid(inst.problem, sp);
        for (int j = 0; j < k; ++j)
            for (int l = 0; l < p; ++l) {
                const double lo = std::min(inst.problem.study(j).beta_tilde(l), c(l));
                const double hi = std::max(inst.problem.study(j).beta_tilde(l), c(l));
                CHECK(h(j * p + l) >= lo - 1e-12);
                CHECK(h(j * p + l) <= hi + 1e-12);
            }
    }
}

TEST_CASE("objective is maximal at the MLE when pi = 0", "[estimators]") {
    const auto inst = testing::random_instance(17);
    const int k = inst.problem.k(), p = inst.problem.p();
    const ShrinkageVector zero(Vector::Zero(k));
    const Vector beta = inst.problem.stacked_beta_tilde();
    const Vector theta = Vector::Constant(p, 42.0);
    const double best = objective_value(inst.problem, beta, theta, zero);
    double rss = 0.0;
    for (const auto& s : inst.problem.studies()) rss += *s.rss / s.sigma2;
    CHECK(best == Approx(-0.5 * rss));
    std::mt19937_64 g(1);
    std::normal_distribution<double> nz(0.0, 0.1);
    for (int t = 0; t < 20; ++t) {
        Vector d(beta.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = nz(g);
        CHECK(objective_value(inst.problem, beta + d, theta, zero) < best);
    }
}

TEST_CASE("closed forms beat random candidates", "[estimators][oracle]") {
    std::mt19937_64 g(7);
    std::normal_distribution<double> nz(0.0, 0.5);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const auto inst = ham::checks::random_instance(g);
    const int k = inst.problem.k(), p = inst.problem.p();
    Vector pi(k);
    for (int j = 0; j < k; ++j) pi(j) = u(g);
    const ShrinkageVector sp(pi);
    const Vector bh = ham_beta(inst.problem, sp);
    const Vector th = centroid(inst.problem, sp);
    const double best = objective_value(inst.problem, bh, th, sp);
    int beaten = 0;
    for (int t = 0; t < 1000; ++t) {
        Vector b = bh, c = th;
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) += nz(g);
        for (int l = 0; l < p; ++l) c(l) += nz(g);
        if (objective_value(inst.problem, b, c, sp) > best) ++beaten;
    }
    CHECK(beaten == 0);
}

TEST_CASE("closed forms match numeric maximization", "[estimators][oracle]") {
    const auto r = ham::checks::oracle_suite({.instances = 20, .seed = 4242});
    INFO(r.detail);
    CHECK(r.passed());
    CHECK(r.instances == 20);
}

TEST_CASE("ridge comparator limits", "[estimators][ridge]") {
    const auto inst = testing::random_instance(23);
    const Vector beta = inst.problem.stacked_beta_tilde();
    CHECK(testing::max_abs(ridge_fit(inst.problem, 0.0).beta_r - beta) < 1e-10);

    const MetaProblem one({testing::scalar_study("x", 5.0, 2.0)});
    CHECK(ridge_fit(one, 1e6).beta_r(0) == Approx(2.0));

    // Equal precisions: a dominant penalty pools every block to the FE estimate.
    auto studies = inst.problem.studies();
    for (auto& s : studies) {
        s.gram_proj = studies.front().gram_proj;
        s.sigma2 = studies.front().sigma2;
    }
    const MetaProblem equal(studies);
    const Vector fe = fixed_effect(equal);
    const Vector r = ridge_fit(equal, 1e9).beta_r;
    const int p = equal.p();
    for (int j = 0; j < equal.k(); ++j) CHECK(testing::max_abs(r.segment(j * p, p) - fe) < 1e-4);
    CHECK_THROWS_AS(ridge_fit(equal, -1.0), InputError);
}

TEST_CASE("contrast penalty is k I - 1 1' per coordinate", "[estimators][ridge]") {
    const Matrix c = contrast_penalty(3, 2);
    CHECK(c(0, 0) == Approx(2.0));
    CHECK(c(0, 2) == Approx(-1.0));
    CHECK(c(0, 1) == 0.0);
    Vector same(6);
    same << 1, 2, 1, 2, 1, 2;
    CHECK((c * same).cwiseAbs().maxCoeff() < 1e-12);
}
