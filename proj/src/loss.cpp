#include "lcsid/loss.hpp"

#include "lcsid/errors.hpp"

#include <cmath>
#include <string>

namespace lcsid {

namespace {

void check_data(const LcsSystem& theta, std::span<const Transition> data)
{
    const Dims dm = theta.dims();
    for (const Transition& t : data) {
        if (t.x.size() != dm.n_x || t.u.size() != dm.n_u || t.x_next.size() != dm.n_x) {
            throw ValidationError("transition dimensions do not match the system");
        }
    }
}

void put_flat(Eigen::VectorXd& out, Eigen::Index& pos, const Eigen::MatrixXd& M)
{
    out.segment(pos, M.size()) = Eigen::Map<const Eigen::VectorXd>(M.data(), M.size());
    pos += M.size();
}

// Column offsets of each block in the canonical flattening.
struct Layout {
    Eigen::Index A, B, C, d, D, E, F, c, p, lambda, phi, total;

    explicit Layout(const Dims& dm)
    {
        const Eigen::Index nx = dm.n_x, nu = dm.n_u, m = dm.n_lambda;
        A = 0;
        B = A + nx * nx;
        C = B + nx * nu;
        d = C + nx * m;
        D = d + nx;
        E = D + m * nx;
        F = E + m * nu;
        c = F + m * m;
        p = c + m;
        lambda = p;
        phi = p + m;
        total = p + 2 * m;
    }
};

}  // namespace

LossGradient LossGradient::zeros(const Dims& dm)
{
    LossGradient g;
    g.dA = Eigen::MatrixXd::Zero(dm.n_x, dm.n_x);
    g.dB = Eigen::MatrixXd::Zero(dm.n_x, dm.n_u);
    g.dC = Eigen::MatrixXd::Zero(dm.n_x, dm.n_lambda);
    g.dd = Eigen::VectorXd::Zero(dm.n_x);
    g.dD = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_x);
    g.dE = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_u);
    g.dF = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_lambda);
    g.dc = Eigen::VectorXd::Zero(dm.n_lambda);
    g.dG = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_lambda);
    g.dH = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_lambda);
    return g;
}

LossGradient& LossGradient::operator+=(const LossGradient& o)
{
    dA += o.dA;
    dB += o.dB;
    dC += o.dC;
    dd += o.dd;
    dD += o.dD;
    dE += o.dE;
    dF += o.dF;
    dc += o.dc;
    dG += o.dG;
    dH += o.dH;
    return *this;
}

LossGradient& LossGradient::operator*=(double s)
{
    dA *= s;
    dB *= s;
    dC *= s;
    dd *= s;
    dD *= s;
    dE *= s;
    dF *= s;
    dc *= s;
    dG *= s;
    dH *= s;
    return *this;
}

void LossGradient::pull_back(const FParam& fparam)
{
    dG = (dF + dF.transpose()) * fparam.G;
    dH = dF - dF.transpose();
}

Eigen::VectorXd LossGradient::flat() const
{
    Eigen::VectorXd out(dA.size() + dB.size() + dC.size() + dd.size() + dD.size() + dE.size() + dF.size() +
                        dc.size());
    Eigen::Index pos = 0;
    put_flat(out, pos, dA);
    put_flat(out, pos, dB);
    put_flat(out, pos, dC);
    put_flat(out, pos, dd);
    put_flat(out, pos, dD);
    put_flat(out, pos, dE);
    put_flat(out, pos, dF);
    put_flat(out, pos, dc);
    return out;
}

Eigen::VectorXd LossGradient::flat_trainable() const
{
    Eigen::VectorXd out(dA.size() + dB.size() + dC.size() + dd.size() + dD.size() + dE.size() + dG.size() +
                        dH.size() + dc.size());
    Eigen::Index pos = 0;
    put_flat(out, pos, dA);
    put_flat(out, pos, dB);
    put_flat(out, pos, dC);
    put_flat(out, pos, dd);
    put_flat(out, pos, dD);
    put_flat(out, pos, dE);
    put_flat(out, pos, dG);
    put_flat(out, pos, dH);
    put_flat(out, pos, dc);
    return out;
}

InnerProblem::InnerProblem(const LcsSystem& theta, double epsilon, double gamma, bool enforce_window)
    : theta_(theta), epsilon_(epsilon), gamma_(gamma)
{
    theta_.validate();
    if (!(epsilon > 0.0)) {
        throw ValidationError("epsilon must be positive");
    }
    if (!(gamma > 0.0)) {
        throw ValidationError("gamma must be positive");
    }
    const Eigen::Index m = theta_.F.rows();
    if (enforce_window && m > 0) {
        const double stiffness = stiffness_of(theta_.F);
        if (!(gamma < stiffness)) {
            throw SolverError("gamma " + std::to_string(gamma) + " is not below min eig(F + F^T) = " +
                              std::to_string(stiffness));
        }
    }
    const double w = 1.0 / (epsilon * gamma);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    Eigen::MatrixXd Q(2 * m, 2 * m);
    Q.topLeftCorner(m, m) = theta_.C.transpose() * theta_.C + w * theta_.F.transpose() * theta_.F;
    Q.topRightCorner(m, m) = (I - theta_.F.transpose() / gamma) / epsilon;
    Q.bottomLeftCorner(m, m) = (I - theta_.F / gamma) / epsilon;
    Q.bottomRightCorner(m, m) = w * I;
    qp_.emplace(std::move(Q));
}

InnerSolution InnerProblem::solve(const Transition& t) const
{
    const LcsSystem& th = theta_;
    const Eigen::Index m = th.F.rows();
    const Eigen::VectorXd r0 = th.A * t.x + th.B * t.u + th.d - t.x_next;
    const Eigen::VectorXd s0 = th.D * t.x + th.E * t.u + th.c;
    const double w = 1.0 / (epsilon_ * gamma_);

    Eigen::VectorXd g(2 * m);
    g.head(m) = th.C.transpose() * r0 + w * th.F.transpose() * s0;
    g.tail(m) = -w * s0;
    const QpSolution qp = qp_->solve(g);

    InnerSolution s;
    s.lambda = qp.z.head(m);
    s.phi = qp.z.tail(m);
    s.dyn_residual = r0 + th.C * s.lambda;
    s.lcp_gap = s0 + th.F * s.lambda - s.phi;
    s.comp_value = s.lambda.dot(s.phi);
    s.objective = 0.5 * s.dyn_residual.squaredNorm() +
                  (s.comp_value + s.lcp_gap.squaredNorm() / (2.0 * gamma_)) / epsilon_;
    return s;
}

Eigen::VectorXd InnerProblem::z_gradient(const InnerSolution& s) const
{
    const Eigen::Index m = theta_.F.rows();
    const double w = 1.0 / (epsilon_ * gamma_);
    Eigen::VectorXd gz(2 * m);
    gz.head(m) = theta_.C.transpose() * s.dyn_residual + s.phi / epsilon_ + w * theta_.F.transpose() * s.lcp_gap;
    gz.tail(m) = s.lambda / epsilon_ - w * s.lcp_gap;
    return gz;
}

PredictionLoss prediction_loss(const LcsSystem& theta, std::span<const Transition> data, std::optional<double> gamma)
{
    theta.validate();
    check_data(theta, data);
    const LcpSolver lcp(theta.F, gamma);
    PredictionLoss out;
    out.predictions.reserve(data.size());
    for (const Transition& t : data) {
        const LcpSolution sol = lcp.solve(theta.D * t.x + theta.E * t.u + theta.c);
        Eigen::VectorXd pred = theta.A * t.x + theta.B * t.u + theta.C * sol.lambda + theta.d;
        out.loss += 0.5 * (pred - t.x_next).squaredNorm();
        out.predictions.push_back(std::move(pred));
    }
    return out;
}

PredictionLoss prediction_loss(const LcsSystem& theta, const Dataset& data, std::optional<double> gamma)
{
    return prediction_loss(theta, std::span<const Transition>(data.transitions), gamma);
}

PredictionGradient prediction_loss_grad(const LcsSystem& theta, std::span<const Transition> data,
                                        std::optional<double> gamma, double strictness)
{
    theta.validate();
    check_data(theta, data);
    const Dims dm = theta.dims();
    const LcpSolver lcp(theta.F, gamma, strictness);
    PredictionGradient out;
    out.gradient = LossGradient::zeros(dm);
    LossGradient& g = out.gradient;
    for (const Transition& t : data) {
        const Eigen::VectorXd q = theta.D * t.x + theta.E * t.u + theta.c;
        const LcpSolution sol = lcp.solve(q);
        const Eigen::VectorXd e = theta.A * t.x + theta.B * t.u + theta.C * sol.lambda + theta.d - t.x_next;
        out.loss += 0.5 * e.squaredNorm();

        Eigen::MatrixXd J;
        if (!classify_strict(sol, strictness)) {
            ++out.degenerate_count;
            continue;
        }
        try {
            J = lcp_sensitivity(theta.F, q, sol);
        } catch (const SolverError&) {
            ++out.degenerate_count;
            continue;
        }
        g.dA.noalias() += e * t.x.transpose();
        g.dB.noalias() += e * t.u.transpose();
        g.dC.noalias() += e * sol.lambda.transpose();
        g.dd += e;
        // dL/dq = J^T C^T e; q moves with D x + E u + F lambda + c.
        const Eigen::VectorXd w = J.transpose() * (theta.C.transpose() * e);
        g.dD.noalias() += w * t.x.transpose();
        g.dE.noalias() += w * t.u.transpose();
        g.dF.noalias() += w * sol.lambda.transpose();
        g.dc += w;
    }
    if (!data.empty() && out.degenerate_count == data.size()) {
        throw SolverError("every sample is degenerate; prediction gradient undefined");
    }
    return out;
}

PredictionGradient prediction_loss_grad(const LcsSystem& theta, const Dataset& data, std::optional<double> gamma,
                                        double strictness)
{
    return prediction_loss_grad(theta, std::span<const Transition>(data.transitions), gamma, strictness);
}

InnerSolution inner_solve(const LcsSystem& theta, const Transition& t, double epsilon, double gamma)
{
    check_data(theta, std::span<const Transition>(&t, 1));
    return InnerProblem(theta, epsilon, gamma).solve(t);
}

double violation_loss(const LcsSystem& theta, std::span<const Transition> data, double epsilon, double gamma)
{
    check_data(theta, data);
    const InnerProblem problem(theta, epsilon, gamma);
    double total = 0.0;
    for (const Transition& t : data) {
        total += problem.solve(t).objective;
    }
    return total;
}

double violation_loss(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma)
{
    return violation_loss(theta, std::span<const Transition>(data.transitions), epsilon, gamma);
}

ViolationGradient violation_loss_grad(const InnerProblem& problem, std::span<const Transition> data)
{
    ViolationGradient out;
    out.gradient = LossGradient::zeros(problem.theta().dims());
    const double w = 1.0 / (problem.epsilon() * problem.gamma());
    for (const Transition& t : data) {
        const InnerSolution s = problem.solve(t);
        LossGradient& g = out.gradient;
        out.loss += s.objective;
        const Eigen::VectorXd& e_dyn = s.dyn_residual;
        const Eigen::VectorXd e_lcp = w * s.lcp_gap;
        g.dA.noalias() += e_dyn * t.x.transpose();
        g.dB.noalias() += e_dyn * t.u.transpose();
        g.dC.noalias() += e_dyn * s.lambda.transpose();
        g.dd += e_dyn;
        g.dD.noalias() += e_lcp * t.x.transpose();
        g.dE.noalias() += e_lcp * t.u.transpose();
        g.dF.noalias() += e_lcp * s.lambda.transpose();
        g.dc += e_lcp;
    }
    return out;
}

ViolationGradient violation_loss_grad(const LcsSystem& theta, std::span<const Transition> data, double epsilon,
                                      double gamma)
{
    check_data(theta, data);
    const InnerProblem problem(theta, epsilon, gamma);
    return violation_loss_grad(problem, data);
}

ViolationGradient violation_loss_grad(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma)
{
    return violation_loss_grad(theta, std::span<const Transition>(data.transitions), epsilon, gamma);
}

LossHessian violation_loss_hessian(const LcsSystem& theta, std::span<const Transition> data, double epsilon,
                                   double gamma, double strictness)
{
    check_data(theta, data);
    const InnerProblem problem(theta, epsilon, gamma);
    const Dims dm = theta.dims();
    const Layout at(dm);
    const Eigen::Index nx = dm.n_x, nu = dm.n_u, m = dm.n_lambda;
    const double inv_eps = 1.0 / epsilon;
    const double w = inv_eps / gamma;

    LossHessian out;
    out.dims = dm;
    out.matrix = Eigen::MatrixXd::Zero(at.p, at.p);

    Eigen::MatrixXd Jr(nx, at.total);
    Eigen::MatrixXd Js(m, at.total);
    Eigen::MatrixXd full(at.total, at.total);
    std::size_t index = 0;
    for (const Transition& t : data) {
        const InnerSolution s = problem.solve(t);
        const Eigen::VectorXd& r = s.dyn_residual;
        const Eigen::VectorXd& sg = s.lcp_gap;

        // Jacobians of the dynamics residual r and the LCP gap s over (theta, lambda, phi).
        Jr.setZero();
        Js.setZero();
        for (Eigen::Index i = 0; i < nx; ++i) {
            for (Eigen::Index j = 0; j < nx; ++j) {
                Jr(i, at.A + j * nx + i) = t.x[j];
            }
            for (Eigen::Index j = 0; j < nu; ++j) {
                Jr(i, at.B + j * nx + i) = t.u[j];
            }
            for (Eigen::Index j = 0; j < m; ++j) {
                Jr(i, at.C + j * nx + i) = s.lambda[j];
                Jr(i, at.lambda + j) = theta.C(i, j);
            }
            Jr(i, at.d + i) = 1.0;
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < nx; ++j) {
                Js(i, at.D + j * m + i) = t.x[j];
            }
            for (Eigen::Index j = 0; j < nu; ++j) {
                Js(i, at.E + j * m + i) = t.u[j];
            }
            for (Eigen::Index j = 0; j < m; ++j) {
                Js(i, at.F + j * m + i) = s.lambda[j];
                Js(i, at.lambda + j) = theta.F(i, j);
            }
            Js(i, at.c + i) = 1.0;
            Js(i, at.phi + i) = -1.0;
        }

        full.noalias() = Jr.transpose() * Jr;
        full.noalias() += w * (Js.transpose() * Js);
        // Bilinear terms C lambda and F lambda, and lambda^T phi.
        for (Eigen::Index i = 0; i < nx; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                full(at.C + j * nx + i, at.lambda + j) += r[i];
                full(at.lambda + j, at.C + j * nx + i) += r[i];
            }
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                full(at.F + j * m + i, at.lambda + j) += w * sg[i];
                full(at.lambda + j, at.F + j * m + i) += w * sg[i];
            }
            full(at.lambda + i, at.phi + i) += inv_eps;
            full(at.phi + i, at.lambda + i) += inv_eps;
        }

        if (m == 0) {
            out.matrix += full.topLeftCorner(at.p, at.p);
            ++index;
            continue;
        }

        Eigen::VectorXd z(2 * m);
        z << s.lambda, s.phi;
        Eigen::VectorXd gz = problem.z_gradient(s);
        for (Eigen::Index i = 0; i < 2 * m; ++i) {
            if (!(std::max(z[i], gz[i]) > strictness)) {
                throw SolverError("sample " + std::to_string(index) +
                                  ": inner solution is not strictly complementary; Hessian undefined");
            }
            if (z[i] > gz[i]) {
                gz[i] = 0.0;
            } else {
                z[i] = 0.0;
            }
        }
        const auto Lzz = full.bottomRightCorner(2 * m, 2 * m);
        const auto Lzt = full.bottomLeftCorner(2 * m, at.p);
        Eigen::MatrixXd M = z.asDiagonal() * Lzz;
        M.diagonal() += gz;
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
        if (!(lu.rcond() > 1e-14)) {
            throw SolverError("sample " + std::to_string(index) + ": inner sensitivity matrix is singular");
        }
        const Eigen::MatrixXd dz = lu.solve(z.asDiagonal() * Lzt);
        out.matrix += full.topLeftCorner(at.p, at.p);
        out.matrix.noalias() -= full.topRightCorner(at.p, 2 * m) * dz;
        ++index;
    }
    return out;
}

LossHessian violation_loss_hessian(const LcsSystem& theta, const Dataset& data, double epsilon, double gamma,
                                   double strictness)
{
    return violation_loss_hessian(theta, std::span<const Transition>(data.transitions), epsilon, gamma, strictness);
}

Regularization regularizer(const LcsSystem& theta, double omega)
{
    if (!(omega >= 0.0)) {
        throw ValidationError("omega must be non-negative");
    }
    Regularization out;
    out.value = omega * theta.C.squaredNorm();
    out.gradient = LossGradient::zeros(theta.dims());
    out.gradient.dC = 2.0 * omega * theta.C;
    return out;
}

}  // namespace lcsid
