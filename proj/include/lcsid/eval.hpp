#pragma once

#include "lcsid/config.hpp"
#include "lcsid/data.hpp"
#include "lcsid/model.hpp"
#include "lcsid/train.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lcsid {

struct EvalReport {
    /// sum |x_pred - x_true|^2 / sum |x_true|^2 over evaluated points.
    double e_test = 0.0;
    std::size_t n_test = 0;
    std::vector<double> squared_errors;
    std::vector<double> squared_norms;
    std::optional<std::size_t> mode_count;
    /// Fraction of evaluated points whose LCP solution is not strictly complementary.
    double degenerate_fraction = 0.0;
    /// Points dropped because the LCP solve failed.
    std::size_t excluded = 0;

    void write_csv(std::ostream& os) const;
};

/// One-step prediction error on a (noiseless) test set.
EvalReport evaluate(const LcsSystem& theta, const Dataset& testset);

/// Least-squares affine model x+ ~ A x + B u + d (C = 0); the LCP blocks are
/// set so lambda is identically zero.
LcsSystem fit_affine(const Dataset& data);

enum class SweepVariable { n_lambda, n_x, stiffness, gamma, epsilon };

std::string to_string(SweepVariable v);
SweepVariable parse_sweep(const std::string& text);

struct ExperimentGrid {
    SweepVariable sweep = SweepVariable::gamma;
    std::vector<double> values;
    int rounds = 30;
    std::vector<LossMethod> methods{LossMethod::violation, LossMethod::prediction};
    Dims base_dims{4, 2, 4};
    double stiffness = 1.0;
    std::size_t n_train = 5000;
    std::size_t n_test = 1000;
    double noise_sigma = 1e-2;
    NoiseTarget noise_target = NoiseTarget::all;
    SamplingRanges ranges;
    TrainConfig base_config;
    std::uint64_t seed = 0;

    void validate() const;
    static ExperimentGrid from_config(const Config& cfg);
};

/// Reads the [train] section (or keys with the given prefix) onto base.
TrainConfig train_config_from(const Config& cfg, TrainConfig base, const std::string& prefix = "train.");

struct SummaryRow {
    std::string sweep_name;
    double sweep_value = 0.0;
    int round = 0;
    std::uint64_t seed = 0;
    LossMethod method = LossMethod::violation;
    double e_test = 0.0;
    std::size_t mode_count = 0;
    double train_seconds = 0.0;
    double degenerate_fraction = 0.0;
    std::size_t gamma_violations = 0;
};

struct FailedRound {
    double sweep_value = 0.0;
    int round = 0;
    LossMethod method = LossMethod::violation;
    std::string error;
};

struct ExperimentResult {
    std::vector<SummaryRow> rows;
    std::vector<FailedRound> failures;
};

/// Seeds of one round, derived from (grid seed, round) only, so every sweep
/// value of a round sees the same draws.
struct RoundSeeds {
    std::uint64_t round = 0, truth = 0, train_data = 0, test_data = 0, init = 0, shuffle = 0;
    static RoundSeeds derive(std::uint64_t grid_seed, int round);
};

/// Runs every (sweep value, round, method) cell. With an output directory,
/// writes summary.csv, aggregate.csv, failures.csv and plot_summary.py.
/// Cells run on up to `jobs` threads; output order is independent of jobs.
ExperimentResult run_experiment(const ExperimentGrid& grid, const std::optional<std::filesystem::path>& output_dir,
                                int jobs = 1);

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
/// Median and quartiles of e_test per (sweep value, method).
void write_aggregate_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

/// Linear-interpolation quantile of unsorted values (p in [0, 1]).
double quantile(std::vector<double> values, double p);

}  // namespace lcsid
