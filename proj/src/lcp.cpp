#include "lcsid/lcp.hpp"

#include "lcsid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace lcsid {

LcpSolution make_lcp_solution(const Eigen::MatrixXd& F, const Eigen::VectorXd& q, Eigen::VectorXd lambda,
                              double strictness)
{
    LcpSolution sol;
    sol.phi = F * lambda + q;
    sol.lambda = std::move(lambda);
    sol.mode = 0;
    sol.min_gap = std::numeric_limits<double>::infinity();
    sol.comp_residual = 0.0;
    for (Eigen::Index i = 0; i < sol.lambda.size(); ++i) {
        if (sol.lambda[i] > sol.phi[i]) {
            sol.mode |= std::uint64_t{1} << i;
        }
        sol.min_gap = std::min(sol.min_gap, std::max(sol.lambda[i], sol.phi[i]));
        sol.comp_residual = std::max(sol.comp_residual, std::abs(sol.lambda[i] * sol.phi[i]));
    }
    sol.strict = sol.min_gap > strictness;
    return sol;
}

LcpSolver::LcpSolver(Eigen::MatrixXd F, std::optional<double> gamma, double strictness)
    : F_(std::move(F)), strictness_(strictness)
{
    if (F_.rows() != F_.cols()) {
        throw ValidationError("LCP matrix must be square");
    }
    if (F_.rows() > 32) {
        throw ValidationError("LCP dimension exceeds 32");
    }
    const auto m = F_.rows();
    if (m == 0) {
        stiffness_ = std::numeric_limits<double>::infinity();
        gamma_ = gamma.value_or(1.0);
        return;
    }
    stiffness_ = min_symmetric_eigenvalue(F_ + F_.transpose());
    if (!(stiffness_ > 0.0)) {
        throw SolverError("F + F^T is not positive definite (min eigenvalue " + std::to_string(stiffness_) + ")");
    }
    gamma_ = gamma.value_or(0.5 * stiffness_);
    if (!(gamma_ > 0.0 && gamma_ < stiffness_)) {
        throw SolverError("gamma " + std::to_string(gamma_) + " outside (0, " + std::to_string(stiffness_) +
                          ") = (0, min eig(F + F^T))");
    }

    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    Eigen::MatrixXd Q(2 * m, 2 * m);
    Q.topLeftCorner(m, m) = F_.transpose() * F_ / gamma_;
    Q.topRightCorner(m, m) = I - F_.transpose() / gamma_;
    Q.bottomLeftCorner(m, m) = I - F_ / gamma_;
    Q.bottomRightCorner(m, m) = I / gamma_;
    qp_.emplace(std::move(Q));
}

LcpSolution LcpSolver::solve(const Eigen::VectorXd& q) const
{
    const auto m = F_.rows();
    if (q.size() != m) {
        throw ValidationError("LCP vector has wrong dimension");
    }
    if (m == 0) {
        return make_lcp_solution(F_, q, Eigen::VectorXd(0), strictness_);
    }

    Eigen::VectorXd g(2 * m);
    g.head(m) = F_.transpose() * q / gamma_;
    g.tail(m) = -q / gamma_;
    const QpSolution qp = qp_->solve(g);
    Eigen::VectorXd lambda = qp.z.head(m).cwiseMax(0.0);
    const Eigen::VectorXd phi = qp.z.tail(m);

    // Re-solve the identified principal system so the active branch is exact.
    std::vector<int> basis;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (lambda[i] > phi[i]) {
            basis.push_back(static_cast<int>(i));
        }
    }
    Eigen::VectorXd polished = Eigen::VectorXd::Zero(m);
    const int k = static_cast<int>(basis.size());
    if (k > 0) {
        Eigen::MatrixXd sub(k, k);
        Eigen::VectorXd rhs(k);
        for (int a = 0; a < k; ++a) {
            rhs[a] = -q[basis[a]];
            for (int b = 0; b < k; ++b) {
                sub(a, b) = F_(basis[a], basis[b]);
            }
        }
        const Eigen::VectorXd x = sub.partialPivLu().solve(rhs);
        for (int a = 0; a < k; ++a) {
            polished[basis[a]] = x[a];
        }
    }
    const double tol = 1e-9 * std::max(1.0, q.cwiseAbs().maxCoeff());
    const Eigen::VectorXd slack = F_ * polished + q;
    bool accept = polished.allFinite();
    for (Eigen::Index i = 0; accept && i < m; ++i) {
        if (polished[i] < -tol || slack[i] < -tol) {
            accept = false;
        }
    }
    if (accept) {
        lambda = polished.cwiseMax(0.0);
    }
    return make_lcp_solution(F_, q, std::move(lambda), strictness_);
}

LcpSolution solve_lcp(const Eigen::MatrixXd& F, const Eigen::VectorXd& q, std::optional<double> gamma)
{
    return LcpSolver(F, gamma).solve(q);
}

bool classify_strict(const LcpSolution& sol, double threshold)
{
    for (Eigen::Index i = 0; i < sol.lambda.size(); ++i) {
        if (!(std::max(sol.lambda[i], sol.phi[i]) > threshold)) {
            return false;
        }
    }
    return true;
}

Eigen::MatrixXd lcp_sensitivity(const Eigen::MatrixXd& F, const Eigen::VectorXd& q, const LcpSolution& sol)
{
    const auto m = F.rows();
    if (F.cols() != m || q.size() != m || sol.lambda.size() != m) {
        throw ValidationError("LCP sensitivity: dimension mismatch");
    }
    if (m == 0) {
        return Eigen::MatrixXd(0, 0);
    }
    // Zero the complementary partner of each index so the structure is exact.
    Eigen::VectorXd lambda = sol.lambda;
    Eigen::VectorXd slack = F * sol.lambda + q;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (lambda[i] > slack[i]) {
            slack[i] = 0.0;
        } else {
            lambda[i] = 0.0;
        }
    }
    Eigen::MatrixXd S = slack.asDiagonal();
    S += lambda.asDiagonal() * F;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cond = sv[m - 1] > 0.0 ? sv[0] / sv[m - 1] : std::numeric_limits<double>::infinity();
    if (!(cond <= 1e12)) {
        throw SolverError("LCP sensitivity system is singular (condition number " + std::to_string(cond) + ")");
    }
    const Eigen::MatrixXd rhs = lambda.asDiagonal().toDenseMatrix();
    return -svd.solve(rhs);
}

}  // namespace lcsid
