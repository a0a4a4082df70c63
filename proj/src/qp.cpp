#include "lcsid/qp.hpp"

#include "lcsid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace lcsid {

namespace {

constexpr int kMaxDimension = 64;

bool is_fixed(std::uint64_t mask, int i) { return (mask >> i) & 1U; }

std::vector<int> free_indices(int n, std::uint64_t fixed)
{
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (!is_fixed(fixed, i)) {
            idx.push_back(i);
        }
    }
    return idx;
}

// KKT residual of z for the orthant QP, relative to the given scale.
double kkt_residual(const Eigen::VectorXd& z, const Eigen::VectorXd& w, double scale)
{
    double r = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        r = std::max(r, std::abs(std::min(z[i], w[i])));
    }
    return r / scale;
}

}  // namespace

double NonnegQp::objective(const Eigen::VectorXd& z) const
{
    return 0.5 * z.dot(Q * z) + g.dot(z) + constant;
}

double min_symmetric_eigenvalue(const Eigen::MatrixXd& S)
{
    if (S.rows() == 0) {
        return std::numeric_limits<double>::infinity();
    }
    const Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[0];
}

NonnegQpSolver::NonnegQpSolver(Eigen::MatrixXd Q, QpOptions options)
    : Q_(std::move(Q)), options_(options)
{
    if (Q_.rows() != Q_.cols()) {
        throw ValidationError("QP Hessian must be square");
    }
    if (Q_.rows() > kMaxDimension) {
        throw ValidationError("QP dimension exceeds 64");
    }
    if (options_.tolerance <= 0.0) {
        throw ValidationError("QP tolerance must be positive");
    }
    if (Q_.rows() == 0) {
        return;
    }
    const double magnitude = std::max(1.0, Q_.cwiseAbs().maxCoeff());
    if ((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * magnitude) {
        throw ValidationError("QP Hessian is not symmetric");
    }
    Q_ = 0.5 * (Q_ + Q_.transpose());
    if (!Q_.allFinite()) {
        throw SolverError("QP Hessian has non-finite entries");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q_, Eigen::EigenvaluesOnly);
    min_eig_ = es.eigenvalues()[0];
    max_eig_ = es.eigenvalues()[Q_.rows() - 1];
    if (!(max_eig_ > 0.0) || min_eig_ < 1e-12 * max_eig_) {
        throw SolverError("QP Hessian is not positive definite (min eigenvalue " +
                          std::to_string(min_eig_) + ", max " + std::to_string(max_eig_) + ")");
    }
}

double NonnegQpSolver::scale(const Eigen::VectorXd& g, const Eigen::VectorXd& z) const
{
    double s = 1.0;
    if (g.size() > 0) {
        s = std::max(s, g.cwiseAbs().maxCoeff());
        s = std::max(s, (Q_ * z).cwiseAbs().maxCoeff());
    }
    return s;
}

Eigen::VectorXd NonnegQpSolver::solve_free(const Eigen::VectorXd& g, std::uint64_t fixed) const
{
    const int n = dimension();
    const std::vector<int> idx = free_indices(n, fixed);
    const int k = static_cast<int>(idx.size());
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    if (k == 0) {
        return z;
    }
    Eigen::MatrixXd sub(k, k);
    Eigen::VectorXd rhs(k);
    for (int a = 0; a < k; ++a) {
        rhs[a] = -g[idx[a]];
        for (int b = 0; b < k; ++b) {
            sub(a, b) = Q_(idx[a], idx[b]);
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) {
        throw SolverError("QP free-set factorization failed");
    }
    Eigen::VectorXd x = llt.solve(rhs);
    x += llt.solve(rhs - sub * x);
    for (int a = 0; a < k; ++a) {
        z[idx[a]] = x[a];
    }
    return z;
}

bool NonnegQpSolver::active_set(const Eigen::VectorXd& g, Eigen::VectorXd& z, std::uint64_t& fixed,
                                int& iterations) const
{
    const int n = dimension();
    const int limit = options_.max_iterations > 0 ? options_.max_iterations : 10 * n;
    for (int pivots = 0; pivots <= limit; ++pivots, ++iterations) {
        const Eigen::VectorXd target = solve_free(g, fixed);

        double step = 1.0;
        int blocking = -1;
        for (int i = 0; i < n; ++i) {
            if (is_fixed(fixed, i) || target[i] >= 0.0) {
                continue;
            }
            const double ratio = z[i] / (z[i] - target[i]);
            if (ratio < step) {
                step = ratio;
                blocking = i;
            }
        }

        if (blocking < 0) {
            z = target;
            const Eigen::VectorXd w = Q_ * z + g;
            const double threshold = -options_.tolerance * scale(g, z);
            int release = -1;
            double most_negative = threshold;
            for (int i = 0; i < n; ++i) {
                if (is_fixed(fixed, i) && w[i] < most_negative) {
                    most_negative = w[i];
                    release = i;
                }
            }
            if (release < 0) {
                return true;
            }
            fixed &= ~(std::uint64_t{1} << release);
        } else {
            z += step * (target - z);
            z[blocking] = 0.0;
            z = z.cwiseMax(0.0);
            fixed |= std::uint64_t{1} << blocking;
        }
    }
    return false;
}

void NonnegQpSolver::projected_gradient(const Eigen::VectorXd& g, Eigen::VectorXd& z, int& iterations) const
{
    const double step = 1.0 / max_eig_;
    for (int it = 0; it < options_.fallback_iterations; ++it, ++iterations) {
        const Eigen::VectorXd w = Q_ * z + g;
        if (kkt_residual(z, w, scale(g, z)) <= options_.tolerance) {
            return;
        }
        z = (z - step * w).cwiseMax(0.0);
    }
}

QpSolution NonnegQpSolver::solve(const Eigen::VectorXd& g, const std::optional<Eigen::VectorXd>& start) const
{
    const int n = dimension();
    if (g.size() != n) {
        throw ValidationError("QP linear term has wrong dimension");
    }
    if (!g.allFinite()) {
        throw SolverError("QP linear term has non-finite entries");
    }

    QpSolution sol;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    if (start) {
        if (start->size() != n) {
            throw ValidationError("QP start point has wrong dimension");
        }
        z = start->cwiseMax(0.0);
    }
    std::uint64_t fixed = 0;
    for (int i = 0; i < n; ++i) {
        if (z[i] == 0.0) {
            fixed |= std::uint64_t{1} << i;
        }
    }

    int iterations = 0;
    if (!active_set(g, z, fixed, iterations)) {
        // Cycling or stalling: fall back, then polish on the identified face.
        sol.used_fallback = true;
        projected_gradient(g, z, iterations);
        fixed = 0;
        for (int i = 0; i < n; ++i) {
            if (z[i] == 0.0) {
                fixed |= std::uint64_t{1} << i;
            }
        }
        Eigen::VectorXd polished = z;
        std::uint64_t polished_fixed = fixed;
        if (active_set(g, polished, polished_fixed, iterations)) {
            z = polished;
            fixed = polished_fixed;
        }
    }

    const Eigen::VectorXd w = Q_ * z + g;
    const double s = scale(g, z);
    sol.kkt_residual = kkt_residual(z, w, s);
    const double dual_violation = n > 0 ? std::max(0.0, -w.minCoeff()) / s : 0.0;
    if (sol.kkt_residual > options_.tolerance || dual_violation > options_.tolerance) {
        throw SolverError("QP did not converge: KKT residual " + std::to_string(sol.kkt_residual) +
                          " after " + std::to_string(iterations) + " iterations");
    }
    sol.active_mask = 0;
    for (int i = 0; i < n; ++i) {
        if (z[i] == 0.0) {
            sol.active_mask |= std::uint64_t{1} << i;
        }
    }
    sol.iterations = iterations;
    sol.objective = 0.5 * z.dot(Q_ * z) + g.dot(z);
    sol.z = std::move(z);
    return sol;
}

QpSolution solve_nonneg_qp(const NonnegQp& problem, double tolerance, int max_iterations)
{
    QpOptions options;
    options.tolerance = tolerance;
    options.max_iterations = max_iterations;
    NonnegQpSolver solver(problem.Q, options);
    QpSolution sol = solver.solve(problem.g);
    sol.objective += problem.constant;
    return sol;
}

QpSolution enumerate_oracle(const NonnegQp& problem)
{
    const auto n = static_cast<int>(problem.Q.rows());
    if (n > 20) {
        throw ValidationError("enumeration oracle limited to n <= 20");
    }
    if (problem.Q.cols() != n || problem.g.size() != n) {
        throw ValidationError("QP dimensions inconsistent");
    }
    const double s = std::max(1.0, n > 0 ? problem.g.cwiseAbs().maxCoeff() : 0.0);

    QpSolution best;
    double best_objective = std::numeric_limits<double>::infinity();
    const std::uint64_t count = std::uint64_t{1} << n;
    for (std::uint64_t free_mask = 0; free_mask < count; ++free_mask) {
        std::vector<int> idx;
        for (int i = 0; i < n; ++i) {
            if ((free_mask >> i) & 1U) {
                idx.push_back(i);
            }
        }
        const int k = static_cast<int>(idx.size());
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
        if (k > 0) {
            Eigen::MatrixXd sub(k, k);
            Eigen::VectorXd rhs(k);
            for (int a = 0; a < k; ++a) {
                rhs[a] = -problem.g[idx[a]];
                for (int b = 0; b < k; ++b) {
                    sub(a, b) = problem.Q(idx[a], idx[b]);
                }
            }
            const Eigen::VectorXd x = sub.fullPivLu().solve(rhs);
            for (int a = 0; a < k; ++a) {
                z[idx[a]] = x[a];
            }
        }
        if (n > 0 && z.minCoeff() < -1e-12 * s) {
            continue;
        }
        z = z.cwiseMax(0.0);
        const Eigen::VectorXd w = problem.Q * z + problem.g;
        bool dual_ok = true;
        for (int i = 0; i < n; ++i) {
            if (!((free_mask >> i) & 1U) && w[i] < -1e-9 * s) {
                dual_ok = false;
                break;
            }
        }
        if (!dual_ok) {
            continue;
        }
        const double obj = problem.objective(z);
        if (obj < best_objective) {
            best_objective = obj;
            best.z = z;
            best.kkt_residual = kkt_residual(z, w, s);
            best.active_mask = ~free_mask & (count - 1);
        }
    }
    if (!std::isfinite(best_objective)) {
        throw SolverError("enumeration found no KKT point");
    }
    best.objective = best_objective;
    best.iterations = static_cast<int>(count);
    return best;
}

}  // namespace lcsid
