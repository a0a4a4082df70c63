#pragma once

#include "lcsid/data.hpp"
#include "lcsid/loss.hpp"
#include "lcsid/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lcsid {

enum class LossMethod { prediction, violation };
enum class GammaPolicy { fixed, clamp };

std::string to_string(LossMethod method);
std::string to_string(GammaPolicy policy);
LossMethod parse_method(const std::string& text);
GammaPolicy parse_gamma_policy(const std::string& text);

struct TrainConfig {
    LossMethod method = LossMethod::violation;
    double epsilon = 1e-4;
    double gamma = 1e-2;
    double omega = 1e-5;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double adam_epsilon = 1e-6;
    int batch_size = 200;
    int max_iterations = 20000;
    /// Full-data loss is recorded every this many iterations; 0 disables.
    int checkpoint_interval = 500;
    std::uint64_t init_seed = 0;
    std::uint64_t shuffle_seed = 0;
    GammaPolicy gamma_policy = GammaPolicy::fixed;
    /// Stiffness floor of the F reparameterization.
    double delta = 1e-4;
    double strictness = kDefaultStrictness;
    /// When false every wall-clock column is written as 0 so outputs are byte-reproducible.
    bool record_timing = true;

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    /// Selected loss plus regularizer on the minibatch; NaN if the batch was skipped.
    double batch_loss = 0.0;
    /// Selected loss on the full dataset at checkpoints, NaN elsewhere.
    double full_loss = 0.0;
    double effective_gamma = 0.0;
    double stiffness = 0.0;
    bool gamma_violation = false;
    bool skipped = false;
    std::size_t degenerate = 0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    LossMethod method = LossMethod::violation;
    std::vector<IterationRecord> records;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t gamma_violations = 0;
    std::size_t skipped_batches = 0;
    std::size_t degenerate_samples = 0;
    double train_seconds = 0.0;

    void write_csv(std::ostream& os) const;
    void write_csv(const std::filesystem::path& path) const;
};

/// Every block, including G and H, i.i.d. uniform on [-1, 1].
/// Draw order: A, B, C, d, D, E, G, H, c, each column-major.
LcsParams init_params(const Dims& dims, std::uint64_t seed, double delta = 1e-4);

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;

    static AdamState zeros(Eigen::Index n);
};

/// Bias-corrected Adam update in place. Throws SolverError on a non-finite gradient.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const TrainConfig& config);

/// Selected loss on a full dataset, without the regularizer. NaN if the inner
/// problem cannot be built (for example, gamma outside the window under fixed policy).
double method_loss(const LcsSystem& theta, const Dataset& data, const TrainConfig& config);

struct TrainResult {
    LcsParams params;
    TrainHistory history;
};

/// Adam over (G, H)-reparameterized parameters on shuffled minibatches
/// (without replacement, reshuffled each epoch from shuffle_seed).
TrainResult train(const Dataset& data, const TrainConfig& config, const std::optional<LcsParams>& init = std::nullopt);

}  // namespace lcsid
