#pragma once

#include "lcsid/data.hpp"
#include "lcsid/lcp.hpp"
#include "lcsid/model.hpp"
#include "lcsid/qp.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace lcsid {

/// Minimizer (lambda, phi) of one sample's violation objective
///   0.5 |A x + B u + C lambda + d - x+|^2
///     + (1/eps) (lambda^T phi + 1/(2 gamma) |D x + E u + F lambda + c - phi|^2)
/// over lambda, phi >= 0.
struct InnerSolution {
    Eigen::VectorXd lambda;
    Eigen::VectorXd phi;
    /// A x + B u + C lambda + d - x+
    Eigen::VectorXd dyn_residual;
    /// D x + E u + F lambda + c - phi
    Eigen::VectorXd lcp_gap;
    double comp_value = 0.0;
    double objective = 0.0;
};

/// Derivative blocks shaped like the system; dG, dH are the pullback of dF
/// through F = G G^T + delta I + H - H^T (filled by pull_back).
struct LossGradient {
    Eigen::MatrixXd dA, dB, dC;
    Eigen::VectorXd dd;
    Eigen::MatrixXd dD, dE, dF;
    Eigen::VectorXd dc;
    Eigen::MatrixXd dG, dH;

    static LossGradient zeros(const Dims& dims);
    LossGradient& operator+=(const LossGradient& other);
    LossGradient& operator*=(double s);

    /// dG = (dF + dF^T) G,  dH = dF - dF^T.
    void pull_back(const FParam& fparam);
    /// Canonical order A,B,C,d,D,E,F,c (column-major blocks).
    Eigen::VectorXd flat() const;
    /// Trainable order A,B,C,d,D,E,G,H,c; requires pull_back first.
    Eigen::VectorXd flat_trainable() const;
};

/// Dense Hessian over the canonical flattening A,B,C,d,D,E,F,c.
struct LossHessian {
    Dims dims;
    Eigen::MatrixXd matrix;
};

/// The violation inner problem for a fixed system. Its Hessian does not
/// depend on the sample, so it is validated once and reused.
class InnerProblem {
public:
    /// With enforce_window the constructor rejects gamma >= min eig(F + F^T);
    /// otherwise only positive definiteness of the inner Hessian is required.
    InnerProblem(const LcsSystem& theta, double epsilon, double gamma, bool enforce_window = true);

    InnerSolution solve(const Transition& t) const;
    /// Gradient of the inner objective with respect to z = (lambda, phi).
    Eigen::VectorXd z_gradient(const InnerSolution& s) const;

    const LcsSystem& theta() const { return theta_; }
    const NonnegQpSolver& qp() const { return *qp_; }
    double epsilon() const { return epsilon_; }
    double gamma() const { return gamma_; }

private:
    LcsSystem theta_;
    double epsilon_;
    double gamma_;
    std::optional<NonnegQpSolver> qp_;
};

struct PredictionLoss {
    double loss = 0.0;
    std::vector<Eigen::VectorXd> predictions;
};

struct PredictionGradient {
    LossGradient gradient;
    double loss = 0.0;
    std::size_t degenerate_count = 0;
};

struct ViolationGradient {
    LossGradient gradient;
    double loss = 0.0;
};

/// sum_t 0.5 |x_pred - x+|^2 with lambda from the exact LCP solve.
PredictionLoss prediction_loss(const LcsSystem& theta, std::span<const Transition> data,
                               std::optional<double> gamma = std::nullopt);
PredictionLoss prediction_loss(const LcsSystem& theta, const Dataset& data, std::optional<double> gamma = std::nullopt);

/// Implicit-differentiation gradient. Samples that are not strictly
/// complementary (or whose sensitivity system is singular) are skipped and
/// counted. Throws SolverError if every sample is skipped.
PredictionGradient prediction_loss_grad(const LcsSystem& theta, std::span<const Transition> data,
                                        std::optional<double> gamma = std::nullopt,
                                        double strictness = kDefaultStrictness);
PredictionGradient prediction_loss_grad(const LcsSystem& theta, const Dataset& data,
                                        std::optional<double> gamma = std::nullopt,
                                        double strictness = kDefaultStrictness);

InnerSolution inner_solve(const LcsSystem& theta, const Transition& t, double epsilon, double gamma);

double violation_loss(const LcsSystem& theta, std::span<const Transition> data, double epsilon, double gamma);
double violation_loss(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma);

/// Envelope-theorem gradient:
///   e_dyn = A x + B u + C lambda + d - x+,
///   e_lcp = (D x + E u + F lambda + c - phi) / (eps gamma),
///   dA = sum e_dyn x^T, ..., dF = sum e_lcp lambda^T, dc = sum e_lcp.
ViolationGradient violation_loss_grad(const InnerProblem& problem, std::span<const Transition> data);
ViolationGradient violation_loss_grad(const LcsSystem& theta, std::span<const Transition> data, double epsilon,
                                      double gamma);
ViolationGradient violation_loss_grad(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma);

/// Second derivative over the canonical flattening. Per sample:
///   L_tt - L_tz (diag(L_z) + diag(z) L_zz)^{-1} diag(z) L_zt,  z = (lambda, phi).
/// Throws SolverError if any inner solution is not strictly complementary.
LossHessian violation_loss_hessian(const LcsSystem& theta, std::span<const Transition> data, double epsilon,
                                   double gamma, double strictness = kDefaultStrictness);
LossHessian violation_loss_hessian(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma,
                                   double strictness = kDefaultStrictness);

struct Regularization {
    double value = 0.0;
    LossGradient gradient;
};

/// omega |C|_F^2; only dC is non-zero.
Regularization regularizer(const LcsSystem& theta, double omega);

}  // namespace lcsid
