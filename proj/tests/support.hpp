// Shared helpers for the unit and acceptance tests: independent oracles,
// random instance builders and finite differences.
#pragma once

#include "lcsid/data.hpp"
#include "lcsid/lcp.hpp"
#include "lcsid/loss.hpp"
#include "lcsid/model.hpp"
#include "lcsid/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace lcsid::testing {

inline Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = rng.uniform(lo, hi);
    }
    return v;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Eigen::MatrixXd M(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) {
            M(i, j) = rng.uniform(lo, hi);
        }
    }
    return M;
}

// F with min-eig(F + F^T) == sigma, built with a self-adjoint solver
// independent of the library's construction.
inline Eigen::MatrixXd random_f(int m, double sigma, Rng& rng)
{
    const Eigen::MatrixXd raw = random_matrix(m, m, rng);
    const Eigen::MatrixXd sym = 0.5 * (raw + raw.transpose());
    const Eigen::MatrixXd skew = 0.5 * (raw - raw.transpose());
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues()(0);
    return sym + (0.5 * sigma - lo) * Eigen::MatrixXd::Identity(m, m) + skew;
}

inline double min_eig_sym(const Eigen::MatrixXd& F)
{
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(F + F.transpose()).eigenvalues()(0);
}

// Brute-force LCP: for every index set S solve F_SS lambda_S = -q_S with
// lambda zero elsewhere and keep the candidate with the smallest sign violation.
inline Eigen::VectorXd brute_force_lcp(const Eigen::MatrixXd& F, const Eigen::VectorXd& q)
{
    const int m = static_cast<int>(q.size());
    Eigen::VectorXd best = Eigen::VectorXd::Zero(m);
    double best_violation = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        std::vector<int> idx;
        for (int i = 0; i < m; ++i) {
            if (mask & (1u << i)) {
                idx.push_back(i);
            }
        }
        Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
        if (!idx.empty()) {
            const auto k = static_cast<Eigen::Index>(idx.size());
            Eigen::MatrixXd Fs(k, k);
            Eigen::VectorXd qs(k);
            for (Eigen::Index a = 0; a < k; ++a) {
                qs(a) = q(idx[a]);
                for (Eigen::Index b = 0; b < k; ++b) {
                    Fs(a, b) = F(idx[a], idx[b]);
                }
            }
            const Eigen::VectorXd ls = Fs.fullPivLu().solve(-qs);
            for (Eigen::Index a = 0; a < k; ++a) {
                lambda(idx[a]) = ls(a);
            }
        }
        const Eigen::VectorXd w = F * lambda + q;
        double violation = 0.0;
        for (int i = 0; i < m; ++i) {
            violation = std::max({violation, -lambda(i), -w(i), std::abs(lambda(i) * w(i))});
        }
        if (violation < best_violation) {
            best_violation = violation;
            best = lambda;
        }
    }
    return best;
}

// ||a - b||_inf / max(||b||_inf, floor)
inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-8)
{
    if (a.size() == 0) {
        return 0.0;
    }
    return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

// Central differences of a scalar function of a flat vector.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h)
{
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x;
        Eigen::VectorXd xm = x;
        xp(i) += h;
        xm(i) -= h;
        g(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

// Central differences of a vector function; column i is d f / d x_i.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h)
{
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x;
        Eigen::VectorXd xm = x;
        xp(i) += h;
        xm(i) -= h;
        J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

// Random system with min-eig(F + F^T) == stiffness, plus transitions drawn from a
// second, unrelated system so that losses and residuals are nonzero.
struct Instance {
    LcsSystem theta;
    std::vector<Transition> data;
};

inline Instance random_instance(const Dims& dims, double stiffness, std::size_t n, std::uint64_t seed)
{
    Instance inst;
    inst.theta = random_lcs(dims, StiffnessSpec{stiffness}, derive_seed(seed, 0)).system();
    const LcsSystem other = random_lcs(dims, StiffnessSpec{1.0}, derive_seed(seed, 1)).system();
    const Dataset ds = sample_dataset(other, n, SamplingRanges{}, 0.0, derive_seed(seed, 2));
    inst.data = ds.transitions;
    return inst;
}

}  // namespace lcsid::testing
