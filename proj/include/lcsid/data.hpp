#pragma once

#include "lcsid/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lcsid {

struct Transition {
    Eigen::VectorXd x;
    Eigen::VectorXd u;
    Eigen::VectorXd x_next;
};

enum class NoiseTarget { all, next_state_only };

struct Dataset {
    Dims dims;
    std::vector<Transition> transitions;
    double noise_sigma = 0.0;
    NoiseTarget noise_target = NoiseTarget::all;
    std::uint64_t seed = 0;
    /// Path or label of the generating parameter file; empty if unknown.
    std::string ground_truth_ref;

    std::size_t size() const { return transitions.size(); }
    void validate() const;
};

struct SamplingRanges {
    double x_low = -10.0;
    double x_high = 10.0;
    double u_low = -5.0;
    double u_high = 5.0;

    void validate() const;
};

/// i.i.d. transitions: x, u uniform in the ranges, x_next from the clean
/// (x, u), then Gaussian noise on the stored fields selected by noise_target.
/// Per transition the draws are x, u, then noise on x, u, x_next in that order.
Dataset sample_dataset(const LcsParams& truth, std::size_t n, const SamplingRanges& ranges, double noise_sigma,
                       std::uint64_t seed, NoiseTarget noise_target = NoiseTarget::all);
Dataset sample_dataset(const LcsSystem& truth, std::size_t n, const SamplingRanges& ranges, double noise_sigma,
                       std::uint64_t seed, NoiseTarget noise_target = NoiseTarget::all);

/// Number of distinct LCP modes hit by the dataset's (x, u) under theta.
std::size_t count_modes(const LcsSystem& theta, const Dataset& dataset);

/// CSV with header x0..,u0..,xn0.. and a sidecar "<path>.meta" holding
/// n_x=..,n_u=..,n_lambda=..,noise_sigma=..,noise_target=..,seed=..,ground_truth=..
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

std::filesystem::path metadata_path(const std::filesystem::path& csv_path);
std::string format_metadata(const Dataset& dataset);
/// Parses a metadata line into the dataset's non-transition fields.
void parse_metadata(const std::string& line, Dataset& dataset);

}  // namespace lcsid
