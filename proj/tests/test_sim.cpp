#include "helpers.hpp"

#include <sstream>

using namespace ham;
using Catch::Approx;

namespace {

sim::SimConfig small_config(sim::Setting s, sim::CellSpec cell, int reps) {
    sim::SimConfig cfg;
    cfg.setting = s;
    cfg.cells = {std::move(cell)};
    cfg.replicate_count = reps;
    cfg.master_seed = 99;
    return cfg;
}

std::string csv(const sim::SimReport& r) {
    std::ostringstream os;
    sim::write_csv(os, r);
    return os.str();
}

}  // namespace

TEST_CASE("setting 1 coefficient table for p = 2", "[sim]") {
    const Matrix b = sim::setting1_beta(2);
    CHECK(b(0, 0) == 3.53);
    CHECK(b(0, 1) == 3.37);
    CHECK(b(0, 2) == 3.27);
    CHECK(b(1, 0) == 4.50);
    CHECK(b(1, 1) == 4.49);
    CHECK(b(1, 2) == 4.52);
    CHECK_THROWS_AS(sim::setting1_beta(3), InputError);
}

TEST_CASE("replicates are reproducible and independent of order", "[sim]") {
    const sim::CellSpec cell{{100, 200, 300}, 3, 2};
    const auto g1 = sim::make_generator(sim::Setting::S1, cell, 5);
    const auto g2 = sim::make_generator(sim::Setting::S1, cell, 5);
    const auto late = g2(7);
    const auto early = g1(7);
    CHECK(early.problem.stacked_beta_tilde() == late.problem.stacked_beta_tilde());
    CHECK(g1(3).problem.stacked_beta_tilde() != g1(4).problem.stacked_beta_tilde());
    const auto other_seed = sim::make_generator(sim::Setting::S1, cell, 6);
    CHECK(other_seed(7).problem.stacked_beta_tilde() != early.problem.stacked_beta_tilde());
}

TEST_CASE("no-heterogeneity cells carry no bias", "[sim]") {
    const sim::CellSpec cell{{}, 5, 4, sim::Heterogeneity::None};
    const auto gen = sim::make_generator(sim::Setting::S2, cell, 1);
    for (std::uint64_t rep = 0; rep < 5; ++rep) {
        const auto r = gen(rep);
        const RiskTerms t = risk_terms(r.problem, ShrinkageVector::constant(5, 0.4), r.beta_true);
        CHECK(*t.bias_norm2_true == Approx(0.0).margin(1e-20));
    }
}

TEST_CASE("frozen coefficients stay fixed across replicates", "[sim]") {
    const sim::CellSpec s3{{}, 20, 1, sim::Heterogeneity::None, 2};
    const auto gen = sim::make_generator(sim::Setting::S3, s3, 3);
    const Vector b0 = gen(0).beta_true;
    CHECK(gen(9).beta_true == b0);
    int near_zero = 0;
    for (int j = 0; j < 20; ++j) near_zero += std::abs(b0(j)) < 1.0 ? 1 : 0;
    CHECK(near_zero == 5);

    const sim::CellSpec s2{{}, 5, 4, sim::Heterogeneity::Moderate};
    const auto g2 = sim::make_generator(sim::Setting::S2, s2, 3);
    CHECK(g2(0).beta_true != g2(1).beta_true);  // redrawn per replicate
}

TEST_CASE("single replicate eMSE is that replicate's squared error", "[sim]") {
    auto cfg = small_config(sim::Setting::S2, {{}, 5, 4}, 1);
    cfg.estimators = {sim::Estimator::Mle};
    const auto rep = sim::run_cells(cfg);
    const auto r = sim::make_generator(sim::Setting::S2, cfg.cells[0], cfg.master_seed)(0);
    const double err = (r.problem.stacked_beta_tilde() - r.beta_true).squaredNorm();
    CHECK(rep.cells[0].estimators[0].emse == Approx(err).epsilon(1e-14));
    CHECK(rep.cells[0].estimators[0].used == 1);
}

TEST_CASE("MLE eMSE tracks the analytic trace", "[sim][mc]") {
    const sim::CellSpec cell{{}, 5, 4};
    const auto gen = sim::make_generator(sim::Setting::S2, cell, 11);
    double emse = 0.0, trace = 0.0;
    const int reps = 3000;
    for (int i = 0; i < reps; ++i) {
        const auto r = gen(static_cast<std::uint64_t>(i));
        emse += (r.problem.stacked_beta_tilde() - r.beta_true).squaredNorm();
        trace += r.oracle.tr_mle_cov();
    }
    CHECK(emse / reps == Approx(trace / reps).epsilon(0.02));
}

TEST_CASE("MLE intervals cover at the nominal rate", "[sim][mc]") {
    auto cfg = small_config(sim::Setting::S2, {{}, 5, 4}, 1000);
    cfg.estimators = {sim::Estimator::Mle};
    const auto rep = sim::run_cells(cfg);
    const auto& s = rep.cells[0].estimators[0];
    CHECK(s.coverage_avg == Approx(95.0).margin(1.0));
    for (double c : s.coverage) {
        CHECK(c >= 0.0);
        CHECK(c <= 100.0);
    }
}

TEST_CASE("thread count does not change the report", "[sim]") {
    auto cfg = small_config(sim::Setting::S2, {{}, 5, 4, sim::Heterogeneity::Mild}, 24);
    cfg.threads = 1;
    const std::string one = csv(sim::run_cells(cfg));
    cfg.threads = 3;
    const std::string three = csv(sim::run_cells(cfg));
    CHECK(one == three);
    CHECK(csv(sim::run_cells(cfg)) == three);
}

TEST_CASE("homogeneous studies borrow more in a mixed cell", "[sim]") {
    auto cfg = small_config(sim::Setting::S2, {{}, 15, 4, sim::Heterogeneity::Mixture}, 40);
    cfg.estimators = {sim::Estimator::Ham};
    const auto rep = sim::run_cells(cfg);
    const auto& q = rep.cells[0].estimators[0].pi_quartiles;
    REQUIRE(q.size() == 15);
    double homo = 0.0, het = 0.0;
    for (int j = 0; j < 3; ++j) homo += q[static_cast<std::size_t>(j)].median / 3.0;
    for (int j = 3; j < 15; ++j) het += q[static_cast<std::size_t>(j)].median / 12.0;
    CHECK(homo > het);
}

TEST_CASE("invalid simulation configs are rejected", "[sim]") {
    auto cfg = small_config(sim::Setting::S2, {{}, 5, 4}, 0);
    CHECK_THROWS_AS(sim::run_cells(cfg), InputError);
    cfg.replicate_count = 1;
    cfg.estimators.clear();
    CHECK_THROWS_AS(sim::run_cells(cfg), InputError);
    CHECK_THROWS_AS(sim::parse_setting("9"), InputError);
    CHECK_THROWS_AS(sim::parse_heterogeneity("extreme"), InputError);
    CHECK(sim::parse_estimator("ham-umse") == sim::Estimator::HamUmse);
}

TEST_CASE("full grids enumerate every cell", "[sim]") {
    CHECK(sim::grid_cells(sim::Setting::S1).size() == 40);
    CHECK(sim::grid_cells(sim::Setting::S2).size() == 12);
    CHECK(sim::grid_cells(sim::Setting::S3).size() == 2);
    CHECK(sim::grid_cells(sim::Setting::S4).size() == 20);
    CHECK(sim::grid_cells(sim::Setting::Selection).size() == 4);
}

TEST_CASE("synthetic corpus shape", "[sim]") {
    const auto c = sim::generate_corpus(29);
    CHECK(c.problem.k() == 29);
    CHECK(c.problem.p() == 7);
    CHECK(c.covariates.size() == 7);
    CHECK(c.problem.study(0).study_id == "site01");
    const auto again = sim::generate_corpus(29);
    CHECK(again.problem.stacked_beta_tilde() == c.problem.stacked_beta_tilde());
}
