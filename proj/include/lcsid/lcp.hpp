#pragma once

#include "lcsid/qp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace lcsid {

/// Solution of 0 <= lambda _|_ F lambda + q >= 0.
struct LcpSolution {
    Eigen::VectorXd lambda;
    /// Slack F lambda + q.
    Eigen::VectorXd phi;
    /// Bit i set iff lambda[i] > phi[i].
    std::uint64_t mode = 0;
    bool strict = true;
    /// min_i max(lambda[i], phi[i]); +inf when n_lambda = 0.
    double min_gap = 0.0;
    /// max_i lambda[i] * phi[i].
    double comp_residual = 0.0;
};

inline constexpr double kDefaultStrictness = 1e-6;

/// LCP solver bound to one F. Solves through the proxy-variable QP
///   min_{lambda, phi >= 0}  lambda^T phi + 1/(2 gamma) |F lambda + q - phi|^2
/// which is strongly convex for 0 < gamma < min eig(F + F^T), and whose
/// minimizer is the LCP solution.
class LcpSolver {
public:
    /// gamma defaults to half of min eig(F + F^T).
    explicit LcpSolver(Eigen::MatrixXd F, std::optional<double> gamma = std::nullopt,
                       double strictness = kDefaultStrictness);

    LcpSolution solve(const Eigen::VectorXd& q) const;

    double gamma() const { return gamma_; }
    double stiffness() const { return stiffness_; }
    const Eigen::MatrixXd& F() const { return F_; }

private:
    Eigen::MatrixXd F_;
    double gamma_ = 0.0;
    double stiffness_ = 0.0;
    double strictness_ = kDefaultStrictness;
    std::optional<NonnegQpSolver> qp_;
};

LcpSolution solve_lcp(const Eigen::MatrixXd& F, const Eigen::VectorXd& q,
                      std::optional<double> gamma = std::nullopt);

/// True iff max(lambda[i], phi[i]) > threshold for every i.
bool classify_strict(const LcpSolution& sol, double threshold = kDefaultStrictness);

/// J = d lambda / d q = -S^{-1} diag(lambda) with S = diag(F lambda + q) + diag(lambda) F.
/// Requires a strictly complementary solution; throws SolverError when S has
/// condition number above 1e12.
Eigen::MatrixXd lcp_sensitivity(const Eigen::MatrixXd& F, const Eigen::VectorXd& q, const LcpSolution& sol);

/// Fills the derived fields (phi, mode, strict, gaps) from lambda.
LcpSolution make_lcp_solution(const Eigen::MatrixXd& F, const Eigen::VectorXd& q, Eigen::VectorXd lambda,
                              double strictness = kDefaultStrictness);

}  // namespace lcsid
