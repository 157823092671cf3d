#pragma once

#include "ham/ham.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

namespace testing {

using ham::Matrix;
using ham::Vector;

inline ham::StudySummary scalar_study(const std::string& id, double w, double beta, long n = 10) {
    ham::StudySummary s;
    s.study_id = id;
    s.p = 1;
    s.q = 1;
    s.n = n;
    s.sigma2 = 1.0;
    s.beta_tilde = Vector::Constant(1, beta);
    s.gram_proj = Matrix::Constant(1, 1, w);
    return s;
}

/// k = 2, p = 1, W = (2, 4), beta_tilde = (1, 3).
inline ham::MetaProblem two_scalar_studies() {
    return ham::MetaProblem({scalar_study("a", 2.0, 1.0), scalar_study("b", 4.0, 3.0)});
}

inline Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

inline ham::checks::Instance random_instance(std::uint64_t seed, ham::checks::InstanceOptions o = {}) {
    std::mt19937_64 g(seed);
    return ham::checks::random_instance(g, o);
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace testing
