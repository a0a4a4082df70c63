#include "lcsid/train.hpp"

#include "lcsid/errors.hpp"
#include "lcsid/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

namespace lcsid {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Stopwatch {
public:
    explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
    double seconds() const
    {
        if (!enabled_) {
            return 0.0;
        }
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool enabled_;
    std::chrono::steady_clock::time_point start_;
};

// Epoch-wise shuffling without replacement.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed), pos_(n)
    {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }

    void next(std::size_t batch, const std::vector<Transition>& data, std::vector<Transition>& out)
    {
        out.clear();
        for (std::size_t k = 0; k < batch; ++k) {
            if (pos_ == order_.size()) {
                reshuffle();
            }
            out.push_back(data[order_[pos_++]]);
        }
    }

private:
    void reshuffle()
    {
        for (std::size_t i = order_.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng_.below(i));
            std::swap(order_[i - 1], order_[j]);
        }
        pos_ = 0;
    }

    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_;
};

void write_number(std::ostream& os, double v)
{
    if (std::isfinite(v)) {
        os << format_double(v);
    }
}

}  // namespace

std::string to_string(LossMethod method)
{
    return method == LossMethod::prediction ? "prediction" : "violation";
}

std::string to_string(GammaPolicy policy)
{
    return policy == GammaPolicy::fixed ? "fixed" : "clamp";
}

LossMethod parse_method(const std::string& text)
{
    if (text == "prediction") {
        return LossMethod::prediction;
    }
    if (text == "violation") {
        return LossMethod::violation;
    }
    throw ValidationError("unknown method '" + text + "' (expected prediction or violation)");
}

GammaPolicy parse_gamma_policy(const std::string& text)
{
    if (text == "fixed") {
        return GammaPolicy::fixed;
    }
    if (text == "clamp") {
        return GammaPolicy::clamp;
    }
    throw ValidationError("unknown gamma policy '" + text + "' (expected fixed or clamp)");
}

void TrainConfig::validate() const
{
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in (0, 1)");
    }
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning rate must be positive");
    }
    if (!(adam_epsilon > 0.0)) {
        throw ValidationError("Adam epsilon must be positive");
    }
    if (batch_size < 1) {
        throw ValidationError("batch size must be at least 1");
    }
    if (max_iterations < 0) {
        throw ValidationError("iteration count must be non-negative");
    }
    if (checkpoint_interval < 0) {
        throw ValidationError("checkpoint interval must be non-negative");
    }
    if (!(epsilon > 0.0)) {
        throw ValidationError("epsilon must be positive");
    }
    if (!(gamma > 0.0)) {
        throw ValidationError("gamma must be positive");
    }
    if (!(omega >= 0.0)) {
        throw ValidationError("omega must be non-negative");
    }
    if (!(delta >= 0.0)) {
        throw ValidationError("delta must be non-negative");
    }
    if (!(strictness > 0.0)) {
        throw ValidationError("strictness threshold must be positive");
    }
}

void TrainHistory::write_csv(std::ostream& os) const
{
    os << "iteration,method,batch_loss,full_loss,effective_gamma,stiffness,gamma_violation,skipped,degenerate,"
          "wall_seconds\n";
    for (const IterationRecord& r : records) {
        os << r.iteration << ',' << to_string(method) << ',';
        write_number(os, r.batch_loss);
        os << ',';
        write_number(os, r.full_loss);
        os << ',';
        write_number(os, r.effective_gamma);
        os << ',';
        write_number(os, r.stiffness);
        os << ',' << (r.gamma_violation ? 1 : 0) << ',' << (r.skipped ? 1 : 0) << ',' << r.degenerate << ','
           << format_double(r.wall_seconds) << '\n';
    }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const
{
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    write_csv(os);
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

LcsParams init_params(const Dims& dims, std::uint64_t seed, double delta)
{
    dims.validate();
    if (!(delta >= 0.0)) {
        throw ValidationError("delta must be non-negative");
    }
    Rng rng(seed);
    Eigen::VectorXd flat(trainable_count(dims));
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
        flat[i] = rng.uniform(-1.0, 1.0);
    }
    return unflatten_params(dims, delta, flat);
}

AdamState AdamState::zeros(Eigen::Index n)
{
    return AdamState{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const TrainConfig& config)
{
    if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValidationError("Adam: parameter, gradient and moment sizes differ");
    }
    if (!grad.allFinite()) {
        throw SolverError("Adam: non-finite gradient at step " + std::to_string(state.step + 1));
    }
    state.step += 1;
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    params.array() -=
        config.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + config.adam_epsilon);
}

double method_loss(const LcsSystem& theta, const Dataset& data, const TrainConfig& config)
{
    try {
        if (config.method == LossMethod::prediction) {
            return prediction_loss(theta, data).loss;
        }
        double gamma = config.gamma;
        if (config.gamma_policy == GammaPolicy::clamp && theta.F.rows() > 0) {
            gamma = std::min(gamma, 0.9 * stiffness_of(theta.F));
        }
        const InnerProblem problem(theta, config.epsilon, gamma, false);
        double total = 0.0;
        for (const Transition& t : data.transitions) {
            total += problem.solve(t).objective;
        }
        return total;
    } catch (const SolverError&) {
        return kNaN;
    }
}

TrainResult train(const Dataset& data, const TrainConfig& config, const std::optional<LcsParams>& init)
{
    config.validate();
    data.validate();
    const Dims dims = data.dims;
    LcsParams params = init ? *init : init_params(dims, config.init_seed, config.delta);
    params.validate();
    if (params.dims() != dims) {
        throw ValidationError("initial parameters do not match dataset dimensions");
    }
    const double delta = params.fparam.delta;

    TrainResult result;
    TrainHistory& h = result.history;
    h.method = config.method;
    const Stopwatch clock(config.record_timing);

    Eigen::VectorXd flat = flatten_params(params);
    AdamState adam = AdamState::zeros(flat.size());
    BatchSampler sampler(data.size(), config.shuffle_seed);
    const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), data.size());
    std::vector<Transition> batch;
    batch.reserve(batch_size);

    h.initial_loss = method_loss(params.system(), data, config);
    {
        IterationRecord r0;
        r0.iteration = 0;
        r0.batch_loss = kNaN;
        r0.full_loss = h.initial_loss;
        r0.stiffness = dims.n_lambda > 0 ? stiffness_of(params.system().F) : std::numeric_limits<double>::infinity();
        r0.effective_gamma = config.gamma;
        if (config.gamma_policy == GammaPolicy::clamp && dims.n_lambda > 0) {
            r0.effective_gamma = std::min(config.gamma, 0.9 * r0.stiffness);
        }
        if (config.method == LossMethod::prediction) {
            r0.effective_gamma = kNaN;
        }
        h.records.push_back(r0);
    }

    std::size_t updates = 0;
    for (int it = 1; it <= config.max_iterations; ++it) {
        sampler.next(batch_size, data.transitions, batch);
        const LcsSystem sys = params.system();

        IterationRecord rec;
        rec.iteration = it;
        rec.full_loss = kNaN;
        rec.batch_loss = kNaN;
        rec.stiffness = dims.n_lambda > 0 ? stiffness_of(sys.F) : std::numeric_limits<double>::infinity();
        if (dims.n_lambda > 0 && rec.stiffness < 2.0 * delta * (1.0 - 1e-8)) {
            throw SolverError("F reparameterization lost its stiffness floor at iteration " + std::to_string(it));
        }

        LossGradient grad;
        bool have_grad = false;
        if (config.method == LossMethod::violation) {
            rec.effective_gamma = config.gamma;
            if (config.gamma_policy == GammaPolicy::clamp && dims.n_lambda > 0) {
                rec.effective_gamma = std::min(config.gamma, 0.9 * rec.stiffness);
            }
            rec.gamma_violation = dims.n_lambda > 0 && !(rec.effective_gamma < rec.stiffness);
            try {
                const InnerProblem problem(sys, config.epsilon, rec.effective_gamma, false);
                ViolationGradient vg = violation_loss_grad(problem, batch);
                rec.batch_loss = vg.loss;
                grad = std::move(vg.gradient);
                have_grad = true;
            } catch (const SolverError&) {
                rec.skipped = true;
            }
        } else {
            rec.effective_gamma = kNaN;
            try {
                PredictionGradient pg = prediction_loss_grad(sys, batch, std::nullopt, config.strictness);
                rec.batch_loss = pg.loss;
                rec.degenerate = pg.degenerate_count;
                grad = std::move(pg.gradient);
                have_grad = true;
            } catch (const SolverError&) {
                rec.skipped = true;
                rec.degenerate = batch.size();
            }
        }

        if (have_grad) {
            const Regularization reg = regularizer(sys, config.omega);
            rec.batch_loss += reg.value;
            grad += reg.gradient;
            grad.pull_back(params.fparam);
            adam_step(flat, grad.flat_trainable(), adam, config);
            params = unflatten_params(dims, delta, flat);
            ++updates;
        }

        h.gamma_violations += rec.gamma_violation ? 1 : 0;
        h.skipped_batches += rec.skipped ? 1 : 0;
        h.degenerate_samples += rec.degenerate;
        if (config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0) {
            rec.full_loss = method_loss(params.system(), data, config);
        }
        rec.wall_seconds = clock.seconds();
        h.records.push_back(rec);
    }
    if (config.max_iterations > 0 && updates == 0) {
        throw SolverError("no minibatch produced a usable gradient");
    }

    h.final_loss = method_loss(params.system(), data, config);
    h.train_seconds = clock.seconds();
    result.params = std::move(params);
    return result;
}

}  // namespace lcsid
