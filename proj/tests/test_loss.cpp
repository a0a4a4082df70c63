#include "lcsid/errors.hpp"
#include "lcsid/loss.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace lcsid;
using namespace lcsid::testing;

namespace {

std::vector<Transition> noiseless(const LcsSystem& truth, std::size_t n, std::uint64_t seed)
{
    return sample_dataset(truth, n, SamplingRanges{}, 0.0, seed).transitions;
}

// Prediction loss of an arbitrary system, written out without the library loss code.
double direct_prediction_loss(const LcsSystem& th, const std::vector<Transition>& data)
{
    double total = 0.0;
    for (const Transition& t : data) {
        const Eigen::VectorXd lambda = brute_force_lcp(th.F, th.D * t.x + th.E * t.u + th.c);
        total += 0.5 * (th.A * t.x + th.B * t.u + th.C * lambda + th.d - t.x_next).squaredNorm();
    }
    return total;
}

// True if every inner solution is strictly complementary with a margin.
bool inner_margin(const InnerProblem& problem, const std::vector<Transition>& data, double margin)
{
    for (const Transition& t : data) {
        const InnerSolution s = problem.solve(t);
        const Eigen::Index m = s.lambda.size();
        Eigen::VectorXd z(2 * m);
        z << s.lambda, s.phi;
        const Eigen::VectorXd gz = problem.z_gradient(s);
        const double z_scale = std::max(1.0, z.cwiseAbs().maxCoeff());
        const double g_scale = std::max(1.0, gz.cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < 2 * m; ++i) {
            if (z[i] < margin * z_scale && gz[i] < margin * g_scale) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("loss: prediction loss vanishes at the ground truth")
{
    const LcsSystem truth = random_lcs({4, 2, 4}, StiffnessSpec{1.0}, 1).system();
    const auto data = noiseless(truth, 300, 2);
    const PredictionLoss pl = prediction_loss(truth, data);
    CHECK(pl.loss <= 1e-10 * 300);
    CHECK(pl.predictions.size() == 300);
    const PredictionGradient pg = prediction_loss_grad(truth, data);
    CHECK(pg.gradient.flat().cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("loss: prediction loss with C = 0 is the affine residual")
{
    Instance inst = random_instance({3, 2, 3}, 1.0, 100, 4);
    inst.theta.C.setZero();
    double expect = 0.0;
    LossGradient affine = LossGradient::zeros(inst.theta.dims());
    for (const Transition& t : inst.data) {
        const Eigen::VectorXd r = inst.theta.A * t.x + inst.theta.B * t.u + inst.theta.d - t.x_next;
        expect += 0.5 * r.squaredNorm();
        affine.dA += r * t.x.transpose();
        affine.dB += r * t.u.transpose();
        affine.dd += r;
    }
    CHECK(prediction_loss(inst.theta, inst.data).loss == doctest::Approx(expect).epsilon(1e-13));
    const PredictionGradient pg = prediction_loss_grad(inst.theta, inst.data);
    CHECK(rel_error(pg.gradient.dA, affine.dA) <= 1e-13);
    CHECK(rel_error(pg.gradient.dB, affine.dB) <= 1e-13);
    CHECK(rel_error(pg.gradient.dd, affine.dd) <= 1e-13);
    CHECK(pg.gradient.dD.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss: scalar prediction loss by hand")
{
    // q = x - 1 = -1 at x = 0, so lambda = 1 and the prediction is 1.
    LcsSystem sys = LcsSystem::zeros({1, 0, 1});
    sys.A(0, 0) = 1.0;
    sys.C(0, 0) = 1.0;
    sys.D(0, 0) = 1.0;
    sys.c(0) = -1.0;
    sys.F(0, 0) = 1.0;
    const Transition t{Eigen::VectorXd::Zero(1), Eigen::VectorXd(0), Eigen::VectorXd::Constant(1, 0.25)};
    const std::vector<Transition> data{t};
    CHECK(prediction_loss(sys, data).loss == doctest::Approx(0.5 * 0.75 * 0.75).epsilon(1e-14));
    // d loss / d c = e * C * d lambda / d q = 0.75 * 1 * (-1)
    const PredictionGradient pg = prediction_loss_grad(sys, data);
    CHECK(pg.gradient.dc(0) == doctest::Approx(-0.75).epsilon(1e-13));
    CHECK(pg.gradient.dC(0, 0) == doctest::Approx(0.75).epsilon(1e-13));
}

TEST_CASE("loss: prediction loss matches an independent evaluation")
{
    const Instance inst = random_instance({4, 2, 4}, 0.5, 50, 7);
    CHECK(prediction_loss(inst.theta, inst.data).loss ==
          doctest::Approx(direct_prediction_loss(inst.theta, inst.data)).epsilon(1e-9));
}

TEST_CASE("loss: prediction gradient matches finite differences")
{
    int tested = 0;
    for (std::uint64_t seed = 100; tested < 10; ++seed) {
        const Instance inst = random_instance({4, 2, 4}, 1.0, 5, seed);
        const PredictionGradient pg = prediction_loss_grad(inst.theta, inst.data);
        if (pg.degenerate_count > 0) {
            continue;
        }
        bool margin = true;
        for (const Transition& t : inst.data) {
            margin = margin && solve_lcp(inst.theta.F, inst.theta.D * t.x + inst.theta.E * t.u + inst.theta.c)
                                       .min_gap > 1e-3;
        }
        if (!margin) {
            continue;
        }
        ++tested;
        const Dims dims = inst.theta.dims();
        const auto f = [&](const Eigen::VectorXd& v) { return prediction_loss(unflatten(dims, v), inst.data).loss; };
        const Eigen::VectorXd fd = fd_gradient(f, flatten(inst.theta), 1e-5);
        CHECK(rel_error(pg.gradient.flat(), fd) <= 1e-4);
    }
}

TEST_CASE("loss: prediction gradient skips degenerate samples")
{
    LcsSystem sys = LcsSystem::zeros({1, 0, 1});
    sys.F(0, 0) = 1.0;
    sys.C(0, 0) = 1.0;
    const std::vector<Transition> data{
        {Eigen::VectorXd::Ones(1), Eigen::VectorXd(0), Eigen::VectorXd::Ones(1)}};
    CHECK_THROWS_AS(prediction_loss_grad(sys, data), SolverError);
    sys.c(0) = -1.0;
    std::vector<Transition> mixed = data;
    LcsSystem sys2 = sys;
    sys2.D(0, 0) = 1.0;
    // x = 1 gives q = 0 (degenerate), x = 3 gives q = 2 (strict).
    mixed.push_back({Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd(0), Eigen::VectorXd::Ones(1)});
    const PredictionGradient pg = prediction_loss_grad(sys2, mixed);
    CHECK(pg.degenerate_count == 1);
}

TEST_CASE("loss: inner problem at the ground truth")
{
    const LcsSystem truth = random_lcs({4, 2, 4}, StiffnessSpec{1.0}, 3).system();
    const auto data = noiseless(truth, 50, 4);
    for (const Transition& t : data) {
        const InnerSolution s = inner_solve(truth, t, 1e-4, 1e-2);
        const LcpSolution exact = solve_lcp(truth.F, truth.D * t.x + truth.E * t.u + truth.c);
        CHECK(s.objective <= 1e-10);
        CHECK((s.lambda - exact.lambda).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((s.phi - exact.phi).cwiseAbs().maxCoeff() <= 1e-8);
    }
    CHECK(violation_loss(truth, data, 1e-4, 1e-2) <= 1e-10 * 50);
    // The LCP blocks multiply the gap by 1 / (eps gamma) = 1e6, so "zero" is measured against
    // the size of the individual terms, sum_t w |q_t| (|x_t| + |u_t| + 1).
    double scale = 0.0;
    for (const Transition& t : data) {
        const Eigen::VectorXd q = truth.D * t.x + truth.E * t.u + truth.c;
        scale += 1e6 * q.cwiseAbs().maxCoeff() * (t.x.cwiseAbs().maxCoeff() + t.u.cwiseAbs().maxCoeff() + 1.0);
    }
    const LossGradient g = violation_loss_grad(truth, data, 1e-4, 1e-2).gradient;
    CHECK(g.dA.cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(g.dd.cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(g.flat().cwiseAbs().maxCoeff() <= 1e-8 * scale * 1e-8);
}

TEST_CASE("loss: scalar inner problem with an inactive constraint")
{
    LcsSystem sys = LcsSystem::zeros({2, 1, 1});
    sys.A << 0.5, 0.1, -0.2, 0.3;
    sys.B << 1.0, -1.0;
    sys.d << 0.1, 0.2;
    sys.c(0) = 1.0;
    sys.F(0, 0) = 1.0;
    const Transition t{Eigen::Vector2d(1.0, -2.0), Eigen::VectorXd::Constant(1, 0.5), Eigen::Vector2d(3.0, 1.0)};
    const InnerSolution s = inner_solve(sys, t, 1e-3, 0.5);
    CHECK(s.lambda(0) == 0.0);
    CHECK(s.phi(0) == doctest::Approx(1.0).epsilon(1e-12));
    const double r = 0.5 * (sys.A * t.x + sys.B * t.u + sys.d - t.x_next).squaredNorm();
    CHECK(s.objective == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("loss: inner solution objective decomposes")
{
    const Instance inst = random_instance({4, 2, 4}, 1.0, 30, 5);
    for (double eps : {1e-1, 1e-3, 1e-5}) {
        for (const Transition& t : inst.data) {
            const InnerSolution s = inner_solve(inst.theta, t, eps, 1e-2);
            const double expect = 0.5 * s.dyn_residual.squaredNorm() +
                                  (s.comp_value + s.lcp_gap.squaredNorm() / (2.0 * 1e-2)) / eps;
            CHECK(std::abs(s.objective - expect) <= 1e-10 * std::max(1.0, expect));
            CHECK(s.lambda.minCoeff() >= 0.0);
            CHECK(s.phi.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("loss: inner quadratic is positive definite inside the window")
{
    Rng rng(6);
    for (int k = 0; k < 20; ++k) {
        const LcsSystem th = random_lcs({3, 1, 1 + static_cast<int>(rng.below(6))},
                                        StiffnessSpec{rng.uniform(0.1, 2.0)}, 70 + k)
                                 .system();
        const double gamma = 0.5 * stiffness_of(th.F);
        for (double eps : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) {
            const InnerProblem p(th, eps, gamma);
            CHECK(p.qp().min_eigenvalue() > 0.0);
        }
    }
}

TEST_CASE("loss: gamma window and argument checks")
{
    const LcsSystem th = random_lcs({2, 1, 2}, StiffnessSpec{0.5}, 1).system();
    CHECK_THROWS_AS(InnerProblem(th, 1e-4, 0.6), SolverError);
    // Without the window check the QP's own definiteness test still rejects it.
    CHECK_THROWS_AS(InnerProblem(th, 1e-4, 0.6, false), SolverError);
    CHECK_NOTHROW(InnerProblem(th, 1e-4, 0.4, false));
    CHECK_THROWS_AS(InnerProblem(th, 0.0, 0.1), ValidationError);
    CHECK_THROWS_AS(InnerProblem(th, 1e-4, -0.1), ValidationError);
    const std::vector<Transition> bad{{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(3)}};
    CHECK_THROWS_AS(violation_loss(th, bad, 1e-4, 1e-2), ValidationError);
    CHECK_THROWS_AS(prediction_loss(th, bad), ValidationError);
}

TEST_CASE("loss: violation loss grows as epsilon shrinks")
{
    const Instance inst = random_instance({4, 2, 4}, 1.0, 40, 8);
    double previous = -1.0;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
        const double v = violation_loss(inst.theta, inst.data, eps, 0.5);
        CHECK(v >= previous * (1.0 - 1e-12));
        previous = v;
    }
    CHECK(previous <= prediction_loss(inst.theta, inst.data).loss * (1.0 + 1e-12));
}

TEST_CASE("loss: violation gradient matches finite differences")
{
    for (std::uint64_t seed = 200; seed < 210; ++seed) {
        const Instance inst = random_instance({4, 2, 4}, 1.0, 5, seed);
        const ViolationGradient vg = violation_loss_grad(inst.theta, inst.data, 1e-4, 1e-2);
        const Dims dims = inst.theta.dims();
        const auto f = [&](const Eigen::VectorXd& v) {
            return violation_loss(unflatten(dims, v), inst.data, 1e-4, 1e-2);
        };
        CHECK(vg.loss == doctest::Approx(violation_loss(inst.theta, inst.data, 1e-4, 1e-2)).epsilon(1e-14));
        CHECK(rel_error(vg.gradient.flat(), fd_gradient(f, flatten(inst.theta), 1e-5)) <= 1e-4);

        // The d block is the plain sum of dynamics residuals.
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(dims.n_x);
        for (const Transition& t : inst.data) {
            sum += inner_solve(inst.theta, t, 1e-4, 1e-2).dyn_residual;
        }
        CHECK(rel_error(vg.gradient.dd, sum) <= 1e-14);
    }
}

TEST_CASE("loss: gradient pull-back to (G, H) matches finite differences")
{
    for (std::uint64_t seed = 300; seed < 305; ++seed) {
        const Dims dims{3, 2, 3};
        LcsParams p = random_lcs(dims, StiffnessSpec{1.0}, seed);
        p.fparam.delta = 1e-4;
        const Instance inst = random_instance(dims, 1.0, 5, seed);
        ViolationGradient vg = violation_loss_grad(p.system(), inst.data, 1e-3, 1e-2);
        vg.gradient.pull_back(p.fparam);
        const auto f = [&](const Eigen::VectorXd& v) {
            return violation_loss(unflatten_params(dims, 1e-4, v).system(), inst.data, 1e-3, 1e-2);
        };
        CHECK(rel_error(vg.gradient.flat_trainable(), fd_gradient(f, flatten_params(p), 1e-6)) <= 1e-4);
    }
}

TEST_CASE("loss: LCP block gradient scales like 1 / epsilon at fixed inner solutions")
{
    const Instance inst = random_instance({4, 2, 4}, 1.0, 20, 9);
    const double gamma = 1e-2;
    for (double eps : {1e-2, 1e-3}) {
        // Library gradient at eps against the same inner solutions weighted with 10 eps.
        const LossGradient g = violation_loss_grad(inst.theta, inst.data, eps, gamma).gradient;
        Eigen::MatrixXd dD = Eigen::MatrixXd::Zero(4, 4);
        Eigen::VectorXd dc = Eigen::VectorXd::Zero(4);
        for (const Transition& t : inst.data) {
            const InnerSolution s = inner_solve(inst.theta, t, eps, gamma);
            const Eigen::VectorXd e = s.lcp_gap / (10.0 * eps * gamma);
            dD += e * t.x.transpose();
            dc += e;
        }
        const double ratio = std::sqrt(g.dD.squaredNorm() + g.dc.squaredNorm()) /
                             std::sqrt(dD.squaredNorm() + dc.squaredNorm());
        CHECK(ratio >= 10.0 / 2.0);
        CHECK(ratio <= 10.0 * 2.0);
    }
}

TEST_CASE("loss: Hessian without complementarity is the Gauss-Newton matrix")
{
    const Instance inst = random_instance({3, 2, 0}, 1.0, 20, 10);
    const LossHessian h = violation_loss_hessian(inst.theta, inst.data, 1e-4, 1e-2);
    const int k = 3 + 2 + 1;
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(3 * k, 3 * k);
    for (const Transition& t : inst.data) {
        Eigen::VectorXd phi(k);
        phi << t.x, t.u, 1.0;
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                expect.block(3 * a, 3 * b, 3, 3) += phi(a) * phi(b) * Eigen::MatrixXd::Identity(3, 3);
            }
        }
    }
    CHECK(rel_error(h.matrix, expect) <= 1e-14);
}

TEST_CASE("loss: Hessian matches finite differences of the gradient and is symmetric")
{
    int tested = 0;
    for (std::uint64_t seed = 400; tested < 8; ++seed) {
        const Dims dims{2, 1, 2};
        const Instance inst = random_instance(dims, 1.0, 5, seed);
        const InnerProblem problem(inst.theta, 1e-3, 1e-2);
        if (!inner_margin(problem, inst.data, 1e-3)) {
            continue;
        }
        ++tested;
        const LossHessian h = violation_loss_hessian(inst.theta, inst.data, 1e-3, 1e-2);
        CHECK(h.matrix.rows() == dims.param_count());
        const auto g = [&](const Eigen::VectorXd& v) {
            return violation_loss_grad(unflatten(dims, v), inst.data, 1e-3, 1e-2).gradient.flat();
        };
        const Eigen::MatrixXd fd = fd_jacobian(g, flatten(inst.theta), 1e-6);
        CHECK(rel_error(h.matrix, fd) <= 1e-3);
        CHECK((h.matrix - h.matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * h.matrix.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("loss: Hessian restricted to blocks other than C and F is positive semidefinite")
{
    int tested = 0;
    for (std::uint64_t seed = 500; tested < 5; ++seed) {
        const Dims dims{2, 1, 2};
        const Instance inst = random_instance(dims, 1.0, 5, seed);
        const InnerProblem problem(inst.theta, 1e-3, 1e-2);
        if (!inner_margin(problem, inst.data, 1e-3)) {
            continue;
        }
        ++tested;
        const Eigen::MatrixXd H = violation_loss_hessian(inst.theta, inst.data, 1e-3, 1e-2).matrix;
        // Canonical layout: A(4) B(2) C(4) d(2) D(4) E(2) F(4) c(2).
        std::vector<int> keep;
        for (int i = 0; i < H.rows(); ++i) {
            const bool in_c = i >= 6 && i < 10;
            const bool in_f = i >= 18 && i < 22;
            if (!in_c && !in_f) {
                keep.push_back(i);
            }
        }
        Eigen::MatrixXd R(keep.size(), keep.size());
        for (std::size_t a = 0; a < keep.size(); ++a) {
            for (std::size_t b = 0; b < keep.size(); ++b) {
                R(a, b) = H(keep[a], keep[b]);
            }
        }
        const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (R + R.transpose())).eigenvalues()(0);
        CHECK(lo >= -1e-8 * std::max(1.0, R.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("loss: Hessian refuses degenerate inner solutions")
{
    LcsSystem sys = LcsSystem::zeros({1, 0, 1});
    sys.F(0, 0) = 1.0;
    const std::vector<Transition> data{{Eigen::VectorXd::Zero(1), Eigen::VectorXd(0), Eigen::VectorXd::Zero(1)}};
    CHECK_THROWS_AS(violation_loss_hessian(sys, data, 1e-3, 0.5), SolverError);
}

TEST_CASE("loss: inner solutions stay strictly complementary for small epsilon")
{
    const LcsSystem truth = random_lcs({4, 2, 4}, StiffnessSpec{1.0}, 11).system();
    const Dataset ds = sample_dataset(truth, 400, SamplingRanges{}, 0.01, 12);
    const LcsSystem th = random_lcs({4, 2, 4}, StiffnessSpec{1.0}, 13).system();
    std::vector<Transition> strict_samples;
    for (const Transition& t : ds.transitions) {
        if (solve_lcp(th.F, th.D * t.x + th.E * t.u + th.c).strict) {
            strict_samples.push_back(t);
        }
    }
    REQUIRE(strict_samples.size() > 300);
    for (double eps : {1e-2, 1e-3, 1e-4, 1e-5}) {
        const InnerProblem problem(th, eps, 1e-2);
        std::size_t strict = 0;
        for (const Transition& t : strict_samples) {
            const InnerSolution s = problem.solve(t);
            if (make_lcp_solution(th.F, th.D * t.x + th.E * t.u + th.c, s.lambda).min_gap > 1e-6) {
                ++strict;
            }
        }
        CHECK(static_cast<double>(strict) >= 0.95 * static_cast<double>(strict_samples.size()));
    }
}

TEST_CASE("loss: regularizer")
{
    LcsSystem th = LcsSystem::zeros({1, 0, 2});
    Regularization r0 = regularizer(th, 0.5);
    CHECK(r0.value == 0.0);
    CHECK(r0.gradient.flat().cwiseAbs().maxCoeff() == 0.0);
    th.C << 1, 2;
    const Regularization r = regularizer(th, 0.5);
    CHECK(r.value == 2.5);
    CHECK(r.gradient.dC(0, 0) == 1.0);
    CHECK(r.gradient.dC(0, 1) == 2.0);
    CHECK(r.gradient.dA.cwiseAbs().maxCoeff() == 0.0);
    CHECK(regularizer(th, 1e-5).value == doctest::Approx(5e-5));
    CHECK_THROWS_AS(regularizer(th, -1.0), ValidationError);
}

TEST_CASE("loss: gradient container arithmetic")
{
    LossGradient a = LossGradient::zeros({2, 1, 2});
    a.dA.setOnes();
    a.dF.setConstant(2.0);
    LossGradient b = a;
    b += a;
    b *= 0.5;
    CHECK(b.flat() == a.flat());
    CHECK(a.flat().size() == Dims{2, 1, 2}.param_count());
    CHECK(a.flat_trainable().size() == trainable_count({2, 1, 2}));
}
