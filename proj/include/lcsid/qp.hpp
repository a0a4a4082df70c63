#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace lcsid {

/// min  0.5 z^T Q z + g^T z + constant   subject to  z >= 0
struct NonnegQp {
    Eigen::MatrixXd Q;
    Eigen::VectorXd g;
    double constant = 0.0;

    double objective(const Eigen::VectorXd& z) const;
};

struct QpOptions {
    /// KKT tolerance, relative to the problem scale max(1, |g|_inf, |Qz|_inf).
    double tolerance = 1e-10;
    /// Active-set pivots before switching to projected gradient; 0 means 10 * n.
    int max_iterations = 0;
    int fallback_iterations = 100000;
};

struct QpSolution {
    Eigen::VectorXd z;
    /// Bit i set iff z[i] is held at its bound.
    std::uint64_t active_mask = 0;
    /// max_i |min(z_i, (Qz+g)_i)| divided by the problem scale.
    double kkt_residual = 0.0;
    int iterations = 0;
    bool used_fallback = false;
    double objective = 0.0;
};

/// Solver bound to one Hessian. Construction validates symmetry and strict
/// definiteness once; solve() can then be called for many linear terms.
class NonnegQpSolver {
public:
    explicit NonnegQpSolver(Eigen::MatrixXd Q, QpOptions options = {});

    /// Throws SolverError on non-convergence. A start point, if given, is
    /// projected onto the orthant and its zero pattern seeds the working set.
    QpSolution solve(const Eigen::VectorXd& g,
                     const std::optional<Eigen::VectorXd>& start = std::nullopt) const;

    const Eigen::MatrixXd& hessian() const { return Q_; }
    double min_eigenvalue() const { return min_eig_; }
    double max_eigenvalue() const { return max_eig_; }
    int dimension() const { return static_cast<int>(Q_.rows()); }

private:
    bool active_set(const Eigen::VectorXd& g, Eigen::VectorXd& z, std::uint64_t& fixed, int& iterations) const;
    void projected_gradient(const Eigen::VectorXd& g, Eigen::VectorXd& z, int& iterations) const;
    Eigen::VectorXd solve_free(const Eigen::VectorXd& g, std::uint64_t fixed) const;
    double scale(const Eigen::VectorXd& g, const Eigen::VectorXd& z) const;

    Eigen::MatrixXd Q_;
    QpOptions options_;
    double min_eig_ = 0.0;
    double max_eig_ = 0.0;
};

QpSolution solve_nonneg_qp(const NonnegQp& problem, double tolerance = 1e-10, int max_iterations = 0);

/// Exact minimizer by enumerating every candidate free set (2^n linear
/// solves). Reference implementation for tests; n <= 20.
QpSolution enumerate_oracle(const NonnegQp& problem);

/// Smallest eigenvalue of a symmetric matrix (symmetrized first).
double min_symmetric_eigenvalue(const Eigen::MatrixXd& S);

}  // namespace lcsid
