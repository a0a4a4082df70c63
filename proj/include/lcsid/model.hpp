#pragma once

#include "lcsid/lcp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace lcsid {

struct Dims {
    int n_x = 1;
    int n_u = 0;
    int n_lambda = 0;

    void validate() const;
    /// Length of the canonical flattening of {A,B,C,d,D,E,F,c}.
    int param_count() const;
    friend bool operator==(const Dims&, const Dims&) = default;
};

/// F = G G^T + delta I + H - H^T. The symmetric part of F is G G^T + delta I,
/// so F + F^T >= 2 delta I for every (G, H).
struct FParam {
    Eigen::MatrixXd G;
    Eigen::MatrixXd H;
    double delta = 1e-4;
};

Eigen::MatrixXd materialize_f(const FParam& fparam);

/// A linear complementarity system in raw form:
///   x+ = A x + B u + C lambda + d,   0 <= lambda  _|_  D x + E u + F lambda + c >= 0
struct LcsSystem {
    Eigen::MatrixXd A, B, C;
    Eigen::VectorXd d;
    Eigen::MatrixXd D, E, F;
    Eigen::VectorXd c;

    Dims dims() const;
    /// Throws ValidationError when block shapes disagree.
    void validate() const;
    static LcsSystem zeros(const Dims& dims);
};

/// Trainable parameter set; F is carried through FParam.
struct LcsParams {
    Eigen::MatrixXd A, B, C;
    Eigen::VectorXd d;
    Eigen::MatrixXd D, E;
    FParam fparam;
    Eigen::VectorXd c;

    Dims dims() const;
    void validate() const;
    LcsSystem system() const;
};

/// Smallest eigenvalue of F + F^T.
double stiffness_of(const Eigen::MatrixXd& F);

struct StiffnessSpec {
    double sigma_min_target = 1.0;
};

struct StepResult {
    Eigen::VectorXd x_next;
    LcpSolution lcp;
};

/// One step of the system. Without gamma the LCP uses half the stiffness.
StepResult simulate_step(const LcsSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         std::optional<double> gamma = std::nullopt);

/// Ground-truth system with all blocks uniform on [-1, 1] except F, whose
/// symmetric part is spectrally shifted so min eig(F + F^T) equals the target.
/// Draw order: A, B, C, d, D, E, raw F, c, each column-major.
LcsParams random_lcs(const Dims& dims, const StiffnessSpec& stiffness, std::uint64_t seed);

// Canonical flattening of the raw system: A,B,C,d,D,E,F,c, each column-major.
Eigen::VectorXd flatten(const LcsSystem& sys);
LcsSystem unflatten(const Dims& dims, const Eigen::VectorXd& flat);

// Trainable flattening: A,B,C,d,D,E,G,H,c, each column-major. delta is fixed.
int trainable_count(const Dims& dims);
Eigen::VectorXd flatten_params(const LcsParams& params);
LcsParams unflatten_params(const Dims& dims, double delta, const Eigen::VectorXd& flat);

// Text format: header "lcs n_x n_u n_lambda delta", then blocks
// "name rows cols" followed by one line per row, 17 significant digits.
void write_params(std::ostream& os, const LcsParams& params);
LcsParams read_params(std::istream& is);
void save_params(const std::filesystem::path& path, const LcsParams& params);
LcsParams load_params(const std::filesystem::path& path);

/// Shortest text that is at least 17 significant digits and round-trips.
std::string format_double(double value);

}  // namespace lcsid
