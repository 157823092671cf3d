#include "helpers.hpp"

using namespace ham;
using testing::vec;
using Catch::Approx;

TEST_CASE("worked scalar pair selects equal shrinkage 3/19", "[selection]") {
    const auto m = testing::two_scalar_studies();
    const HamFit fit = fit_ham(m);
    CHECK(fit.pi[0] == Approx(3.0 / 19.0).epsilon(1e-4));
    CHECK(fit.pi[1] == Approx(3.0 / 19.0).epsilon(1e-4));
}

TEST_CASE("single study returns the MLE with a note", "[selection]") {
    const MetaProblem one({testing::scalar_study("x", 5.0, 2.0)});
    const HamFit fit = fit_ham(one);
    CHECK(fit.pi[0] == 0.0);
    CHECK(fit.beta_hat(0) == 2.0);
    CHECK_FALSE(fit.theta_hat.has_value());
    REQUIRE(fit.meta.notes.size() == 1);
    CHECK(fit.meta.notes.front().find("nothing to borrow") != std::string::npos);
}

TEST_CASE("exchangeable studies get equal shrinkage", "[selection]") {
    ham::StudySummary a = testing::scalar_study("a", 3.0, 1.0);
    ham::StudySummary b = testing::scalar_study("b", 3.0, 1.0);
    ham::StudySummary c = testing::scalar_study("c", 6.0, 1.8);
    const MetaProblem twins({a, b, c});
    const SelectionResult sel = select_pi_ham(twins);
    CHECK(std::abs(sel.pi[0] - sel.pi[1]) < 1e-4);
}

TEST_CASE("optimizer matches an exhaustive grid", "[selection][oracle]") {
    std::mt19937_64 g(314);
    for (int t = 0; t < 5; ++t) {
        const auto inst = ham::checks::random_instance(g, {.k_min = 2, .k_max = 2, .p_min = 1, .p_max = 1});
        const MetaProblem& m = inst.problem;
        const SelectionResult sel = select_pi_ham(m);
        double best = std::numeric_limits<double>::infinity();
        const SelectionOptions opts;
        for (int i = 0; i <= 200; ++i)
            for (int j = 0; j <= 200; ++j) {
                const Vector pi = vec({std::min(0.005 * i, opts.upper), std::min(0.005 * j, opts.upper)});
                best = std::min(best, criterion_value(m, ShrinkageVector(pi), opts));
            }
        INFO("grid " << best << " optimizer " << sel.objective);
        CHECK(sel.objective <= best + 1e-5);
        CHECK(sel.objective >= best - 1e-3);
    }
}

TEST_CASE("selection never loses to its start or to pi = 0", "[selection][property]") {
    std::mt19937_64 g(2718);
    for (int t = 0; t < 30; ++t) {
        const auto inst = ham::checks::random_instance(g);
        const SelectionResult sel = select_pi_ham(inst.problem);
        CHECK(sel.objective <= sel.start_objective);
        CHECK(sel.objective <= 0.0);  // pseudo-MSE is 0 at pi = 0
        for (int j = 0; j < inst.problem.k(); ++j) {
            CHECK(sel.pi[j] >= 0.0);
            CHECK(sel.pi[j] < 1.0);
        }
    }
}

TEST_CASE("selection is deterministic given the seed", "[selection]") {
    const auto inst = testing::random_instance(9, {.k_min = 4, .k_max = 4});
    SelectionOptions o;
    o.seed = 17;
    const SelectionResult a = select_pi_ham(inst.problem, o);
    const SelectionResult b = select_pi_ham(inst.problem, o);
    CHECK(a.pi.values() == b.pi.values());
    CHECK(a.starts.size() == static_cast<std::size_t>(1 + o.restarts));
}

TEST_CASE("criteria variants select sensibly", "[selection]") {
    const auto inst = testing::random_instance(31);
    SelectionOptions o;
    o.criterion = Criterion::TrueMse;
    CHECK_THROWS_AS(select_pi_ham(inst.problem, o), InputError);
    o.beta_true = inst.beta_true;
    const SelectionResult t = select_pi_ham(inst.problem, o);
    CHECK(true_mse(inst.problem, t.pi, inst.beta_true) <= inst.problem.tr_mle_cov() + 1e-12);

    SelectionOptions u;
    u.criterion = Criterion::Umse;
    const SelectionResult su = select_pi_ham(inst.problem, u);
    CHECK(su.objective <= umse(inst.problem, ShrinkageVector::constant(inst.problem.k(), 0.0)) + 1e-12);

    SelectionOptions bad;
    bad.restarts = -1;
    CHECK_THROWS_AS(select_pi_ham(inst.problem, bad), InputError);
}

TEST_CASE("ridge lambda selection", "[selection][ridge]") {
    const MetaProblem one({testing::scalar_study("x", 5.0, 2.0)});
    CHECK(select_lambda_ridge(one).lambda == 0.0);

    const auto inst = testing::random_instance(61, {.k_min = 3, .k_max = 3});
    const MetaProblem& m = inst.problem;
    CHECK(ridge_umse(m, 0.0) == Approx(m.tr_mle_cov()).epsilon(1e-10));

    const LambdaSelection sel = select_lambda_ridge(m);
    // dense log grid over the same range
    double scale = 0.0;
    for (int j = 0; j < m.k(); ++j) scale += m.precision(j).trace();
    scale /= m.dim();
    double best = ridge_umse(m, 0.0);
    for (int i = 0; i < 1000; ++i) {
        const double l = scale * std::pow(10.0, -6.0 + 12.0 * i / 999.0);
        best = std::min(best, ridge_umse(m, l));
    }
    CHECK(sel.objective <= best * (1.0 + 1e-4) + 1e-12);
    CHECK(std::abs(sel.objective - best) <= 1e-4 * std::abs(best));
}

TEST_CASE("fit at pi = 0 reproduces MLE inference", "[selection]") {
    const auto inst = testing::random_instance(71);
    const HamFit fit = fit_at(inst.problem, ShrinkageVector(Vector::Zero(inst.problem.k())));
    CHECK(fit.beta_hat == inst.problem.stacked_beta_tilde());
    CHECK(testing::max_abs(fit.covariance - mle_stack(inst.problem).second) == 0.0);
}
