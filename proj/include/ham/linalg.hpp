#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace ham {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown for malformed or inconsistent input (schema, dimensions, definiteness).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical precondition fails at evaluation time.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace linalg {

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPdRelTol = 1e-12;

inline bool is_symmetric(const Matrix& m, double rel_tol = kSymmetryTol) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline Eigen::VectorXd sym_eigenvalues(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

/// Smallest eigenvalue > kPdRelTol * largest.
inline bool is_positive_definite(const Matrix& m, double* min_eig = nullptr) {
    const Vector ev = sym_eigenvalues(m);
    if (min_eig) *min_eig = ev(0);
    const double top = ev(ev.size() - 1);
    return top > 0.0 && ev(0) > kPdRelTol * top;
}

/// Solve m x = rhs for symmetric m. Cholesky first; pivoted LU when the
/// factorization reports the matrix is not numerically PD.
template <typename Rhs>
Matrix spd_solve(const Matrix& m, const Rhs& rhs) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
    Eigen::FullPivLU<Matrix> lu(m);
    if (!lu.isInvertible()) throw NumericError("singular system in spd_solve");
    return lu.solve(rhs);
}

inline Matrix spd_inverse(const Matrix& m) {
    return spd_solve(m, Matrix::Identity(m.rows(), m.cols()));
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace linalg
}  // namespace ham
