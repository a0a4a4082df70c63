#include "lcsid/eval.hpp"

#include "lcsid/errors.hpp"
#include "lcsid/lcp.hpp"
#include "lcsid/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace lcsid {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    return os;
}

bool is_integer_sweep(SweepVariable v)
{
    return v == SweepVariable::n_lambda || v == SweepVariable::n_x;
}

constexpr const char* kPlotScript = R"PY(#!/usr/bin/env python3
"""Box plots of e_test per sweep value and method, read from summary.csv.

Usage: python3 plot_summary.py [summary.csv] [output.png]
"""
import collections
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

summary = sys.argv[1] if len(sys.argv) > 1 else "summary.csv"
output = sys.argv[2] if len(sys.argv) > 2 else "summary.png"

groups = collections.defaultdict(list)
sweep_name = "sweep"
with open(summary, newline="") as fh:
    for row in csv.DictReader(fh):
        sweep_name = row["sweep_name"]
        groups[(float(row["sweep_value"]), row["method"])].append(float(row["e_test"]))

values = sorted({v for v, _ in groups})
methods = sorted({m for _, m in groups})
fig, ax = plt.subplots(figsize=(7, 4))
width = 0.8 / max(len(methods), 1)
for k, method in enumerate(methods):
    data = [groups.get((v, method), [float("nan")]) for v in values]
    positions = [i + (k - (len(methods) - 1) / 2) * width for i in range(len(values))]
    bp = ax.boxplot(data, positions=positions, widths=width * 0.9, patch_artist=True)
    for patch in bp["boxes"]:
        patch.set_facecolor("C%d" % k)
    ax.plot([], [], color="C%d" % k, label=method, linewidth=6)
ax.set_xticks(range(len(values)))
ax.set_xticklabels(["%g" % v for v in values])
ax.set_xlabel(sweep_name)
ax.set_ylabel("e_test")
ax.set_yscale("log")
ax.legend()
fig.tight_layout()
fig.savefig(output, dpi=150)
)PY";

}  // namespace

void EvalReport::write_csv(std::ostream& os) const
{
    os << "index,squared_error,squared_norm\n";
    for (std::size_t i = 0; i < squared_errors.size(); ++i) {
        os << i << ',' << format_double(squared_errors[i]) << ',' << format_double(squared_norms[i]) << '\n';
    }
}

EvalReport evaluate(const LcsSystem& theta, const Dataset& testset)
{
    theta.validate();
    testset.validate();
    if (theta.dims() != testset.dims) {
        throw ValidationError("evaluate: system and test set dimensions differ");
    }
    const LcpSolver lcp(theta.F);
    EvalReport rep;
    std::set<std::uint64_t> modes;
    std::size_t degenerate = 0;
    double err = 0.0;
    double norm = 0.0;
    for (const Transition& t : testset.transitions) {
        LcpSolution sol;
        try {
            sol = lcp.solve(theta.D * t.x + theta.E * t.u + theta.c);
        } catch (const SolverError&) {
            ++rep.excluded;
            continue;
        }
        const Eigen::VectorXd pred = theta.A * t.x + theta.B * t.u + theta.C * sol.lambda + theta.d;
        const double e = (pred - t.x_next).squaredNorm();
        const double n = t.x_next.squaredNorm();
        rep.squared_errors.push_back(e);
        rep.squared_norms.push_back(n);
        err += e;
        norm += n;
        modes.insert(sol.mode);
        degenerate += sol.strict ? 0 : 1;
    }
    rep.n_test = rep.squared_errors.size();
    if (rep.n_test == 0) {
        throw SolverError("evaluate: every test point failed");
    }
    if (!(norm > 0.0)) {
        throw ValidationError("evaluate: test targets are all zero; relative error undefined");
    }
    rep.e_test = err / norm;
    rep.mode_count = modes.size();
    rep.degenerate_fraction = static_cast<double>(degenerate) / static_cast<double>(rep.n_test);
    return rep;
}

LcsSystem fit_affine(const Dataset& data)
{
    data.validate();
    const Dims dm = data.dims;
    const auto n = static_cast<Eigen::Index>(data.size());
    const Eigen::Index k = dm.n_x + dm.n_u + 1;
    Eigen::MatrixXd X(n, k);
    Eigen::MatrixXd Y(n, dm.n_x);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Transition& t = data.transitions[static_cast<std::size_t>(i)];
        X.row(i).head(dm.n_x) = t.x.transpose();
        X.row(i).segment(dm.n_x, dm.n_u) = t.u.transpose();
        X(i, k - 1) = 1.0;
        Y.row(i) = t.x_next.transpose();
    }
    const Eigen::MatrixXd W = X.colPivHouseholderQr().solve(Y);  // k x n_x
    LcsSystem sys = LcsSystem::zeros(dm);
    sys.A = W.topRows(dm.n_x).transpose();
    sys.B = W.middleRows(dm.n_x, dm.n_u).transpose();
    sys.d = W.row(k - 1).transpose();
    sys.F = Eigen::MatrixXd::Identity(dm.n_lambda, dm.n_lambda);
    sys.c = Eigen::VectorXd::Ones(dm.n_lambda);
    return sys;
}

std::string to_string(SweepVariable v)
{
    switch (v) {
    case SweepVariable::n_lambda:
        return "n_lambda";
    case SweepVariable::n_x:
        return "n_x";
    case SweepVariable::stiffness:
        return "stiffness";
    case SweepVariable::gamma:
        return "gamma";
    case SweepVariable::epsilon:
        return "epsilon";
    }
    return "unknown";
}

SweepVariable parse_sweep(const std::string& text)
{
    for (SweepVariable v : {SweepVariable::n_lambda, SweepVariable::n_x, SweepVariable::stiffness,
                            SweepVariable::gamma, SweepVariable::epsilon}) {
        if (to_string(v) == text) {
            return v;
        }
    }
    throw ValidationError("unknown sweep variable '" + text + "'");
}

void ExperimentGrid::validate() const
{
    if (values.empty()) {
        throw ValidationError("grid needs at least one sweep value");
    }
    if (rounds < 1) {
        throw ValidationError("grid rounds must be at least 1");
    }
    if (methods.empty()) {
        throw ValidationError("grid needs at least one method");
    }
    if (n_train < 1 || n_test < 1) {
        throw ValidationError("grid needs n_train >= 1 and n_test >= 1");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ValidationError("noise must be non-negative");
    }
    if (!(stiffness > 0.0)) {
        throw ValidationError("stiffness target must be positive");
    }
    base_dims.validate();
    ranges.validate();
    base_config.validate();
    for (double v : values) {
        if (is_integer_sweep(sweep)) {
            if (v != std::floor(v) || v < (sweep == SweepVariable::n_x ? 1.0 : 0.0) || v > 32.0) {
                throw ValidationError("sweep value " + format_double(v) + " is not a valid dimension");
            }
        } else if (!(v > 0.0)) {
            throw ValidationError("sweep values must be positive");
        }
    }
}

TrainConfig train_config_from(const Config& cfg, TrainConfig c, const std::string& prefix)
{
    const auto key = [&prefix](const char* name) { return prefix + name; };
    if (cfg.has(key("method"))) {
        c.method = parse_method(cfg.get_string(key("method"), ""));
    }
    c.epsilon = cfg.get_double(key("epsilon"), c.epsilon);
    c.gamma = cfg.get_double(key("gamma"), c.gamma);
    c.omega = cfg.get_double(key("omega"), c.omega);
    c.learning_rate = cfg.get_double(key("learning_rate"), c.learning_rate);
    c.beta1 = cfg.get_double(key("beta1"), c.beta1);
    c.beta2 = cfg.get_double(key("beta2"), c.beta2);
    c.adam_epsilon = cfg.get_double(key("adam_epsilon"), c.adam_epsilon);
    c.batch_size = static_cast<int>(cfg.get_int(key("batch_size"), c.batch_size));
    c.max_iterations = static_cast<int>(cfg.get_int(key("max_iterations"), c.max_iterations));
    c.checkpoint_interval = static_cast<int>(cfg.get_int(key("checkpoint_interval"), c.checkpoint_interval));
    c.init_seed = cfg.get_seed(key("init_seed"), c.init_seed);
    c.shuffle_seed = cfg.get_seed(key("shuffle_seed"), c.shuffle_seed);
    if (cfg.has(key("gamma_policy"))) {
        c.gamma_policy = parse_gamma_policy(cfg.get_string(key("gamma_policy"), ""));
    }
    c.delta = cfg.get_double(key("delta"), c.delta);
    c.strictness = cfg.get_double(key("strictness"), c.strictness);
    c.record_timing = cfg.get_bool(key("record_timing"), c.record_timing);
    return c;
}

ExperimentGrid ExperimentGrid::from_config(const Config& cfg)
{
    std::set<std::string> allowed{"grid.sweep",       "grid.values",        "grid.rounds",     "grid.methods",
                                  "grid.seed",        "system.n_x",         "system.n_u",      "system.n_lambda",
                                  "system.stiffness", "data.n_train",       "data.n_test",     "data.noise",
                                  "data.noise_target", "data.x_low",        "data.x_high",     "data.u_low",
                                  "data.u_high"};
    for (const char* k : {"method", "epsilon", "gamma", "omega", "learning_rate", "beta1", "beta2", "adam_epsilon",
                          "batch_size", "max_iterations", "checkpoint_interval", "init_seed", "shuffle_seed",
                          "gamma_policy", "delta", "strictness", "record_timing"}) {
        allowed.insert(std::string("train.") + k);
    }
    cfg.check_keys(allowed);

    ExperimentGrid g;
    if (!cfg.has("grid.sweep")) {
        throw ValidationError("grid config needs grid.sweep");
    }
    g.sweep = parse_sweep(cfg.get_string("grid.sweep", ""));
    g.values = cfg.get_list("grid.values");
    g.rounds = static_cast<int>(cfg.get_int("grid.rounds", g.rounds));
    g.seed = cfg.get_seed("grid.seed", 0);
    if (cfg.has("grid.methods")) {
        g.methods.clear();
        std::istringstream is(cfg.get_string("grid.methods", ""));
        std::string item;
        while (std::getline(is, item, ',')) {
            g.methods.push_back(parse_method(trim(item)));
        }
    }
    g.base_dims.n_x = static_cast<int>(cfg.get_int("system.n_x", g.base_dims.n_x));
    g.base_dims.n_u = static_cast<int>(cfg.get_int("system.n_u", g.base_dims.n_u));
    g.base_dims.n_lambda = static_cast<int>(cfg.get_int("system.n_lambda", g.base_dims.n_lambda));
    g.stiffness = cfg.get_double("system.stiffness", g.stiffness);
    const long long n_train = cfg.get_int("data.n_train", static_cast<long long>(g.n_train));
    const long long n_test = cfg.get_int("data.n_test", static_cast<long long>(g.n_test));
    if (n_train < 1 || n_test < 1) {
        throw ValidationError("grid needs n_train >= 1 and n_test >= 1");
    }
    g.n_train = static_cast<std::size_t>(n_train);
    g.n_test = static_cast<std::size_t>(n_test);
    g.noise_sigma = cfg.get_double("data.noise", g.noise_sigma);
    if (cfg.has("data.noise_target")) {
        const std::string t = cfg.get_string("data.noise_target", "all");
        if (t == "all") {
            g.noise_target = NoiseTarget::all;
        } else if (t == "next_state_only") {
            g.noise_target = NoiseTarget::next_state_only;
        } else {
            throw ValidationError("unknown noise_target '" + t + "'");
        }
    }
    g.ranges.x_low = cfg.get_double("data.x_low", g.ranges.x_low);
    g.ranges.x_high = cfg.get_double("data.x_high", g.ranges.x_high);
    g.ranges.u_low = cfg.get_double("data.u_low", g.ranges.u_low);
    g.ranges.u_high = cfg.get_double("data.u_high", g.ranges.u_high);
    g.base_config = train_config_from(cfg, g.base_config);
    g.validate();
    return g;
}

RoundSeeds RoundSeeds::derive(std::uint64_t grid_seed, int round)
{
    RoundSeeds s;
    s.round = derive_seed(grid_seed, static_cast<std::uint64_t>(round));
    s.truth = derive_seed(s.round, 0);
    s.train_data = derive_seed(s.round, 1);
    s.test_data = derive_seed(s.round, 2);
    s.init = derive_seed(s.round, 3);
    s.shuffle = derive_seed(s.round, 4);
    return s;
}

double quantile(std::vector<double> values, double p)
{
    if (values.empty()) {
        return std::nan("");
    }
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows)
{
    os << "sweep_name,sweep_value,round,seed,method,e_test,mode_count,train_seconds,degenerate_fraction,"
          "gamma_violations\n";
    for (const SummaryRow& r : rows) {
        os << r.sweep_name << ',' << format_double(r.sweep_value) << ',' << r.round << ',' << r.seed << ','
           << to_string(r.method) << ',' << format_double(r.e_test) << ',' << r.mode_count << ','
           << format_double(r.train_seconds) << ',' << format_double(r.degenerate_fraction) << ','
           << r.gamma_violations << '\n';
    }
}

void write_aggregate_csv(std::ostream& os, const std::vector<SummaryRow>& rows)
{
    std::map<std::pair<double, std::string>, std::vector<double>> groups;
    std::string name;
    for (const SummaryRow& r : rows) {
        groups[{r.sweep_value, to_string(r.method)}].push_back(r.e_test);
        name = r.sweep_name;
    }
    os << "sweep_name,sweep_value,method,count,q1,median,q3,min,max\n";
    for (const auto& [key, vals] : groups) {
        os << name << ',' << format_double(key.first) << ',' << key.second << ',' << vals.size() << ','
           << format_double(quantile(vals, 0.25)) << ',' << format_double(quantile(vals, 0.5)) << ','
           << format_double(quantile(vals, 0.75)) << ',' << format_double(quantile(vals, 0.0)) << ','
           << format_double(quantile(vals, 1.0)) << '\n';
    }
}

ExperimentResult run_experiment(const ExperimentGrid& grid, const std::optional<std::filesystem::path>& output_dir,
                                int jobs)
{
    grid.validate();
    if (jobs < 1) {
        throw ValidationError("jobs must be at least 1");
    }

    struct Cell {
        std::vector<SummaryRow> rows;
        std::vector<FailedRound> failures;
    };
    const std::size_t n_values = grid.values.size();
    const std::size_t n_cells = n_values * static_cast<std::size_t>(grid.rounds);
    std::vector<Cell> cells(n_cells);

    const auto run_cell = [&grid, &cells, n_values](std::size_t index) {
        const double value = grid.values[index % n_values];
        const int round = static_cast<int>(index / n_values);
        Cell& cell = cells[index];
        const RoundSeeds seeds = RoundSeeds::derive(grid.seed, round);

        Dims dims = grid.base_dims;
        double stiffness = grid.stiffness;
        TrainConfig config = grid.base_config;
        switch (grid.sweep) {
        case SweepVariable::n_lambda:
            dims.n_lambda = static_cast<int>(value);
            break;
        case SweepVariable::n_x:
            dims.n_x = static_cast<int>(value);
            break;
        case SweepVariable::stiffness:
            stiffness = value;
            break;
        case SweepVariable::gamma:
            config.gamma = value;
            break;
        case SweepVariable::epsilon:
            config.epsilon = value;
            break;
        }
        config.init_seed = seeds.init;
        config.shuffle_seed = seeds.shuffle;

        try {
            const LcsParams truth = random_lcs(dims, StiffnessSpec{stiffness}, seeds.truth);
            const Dataset train_set = sample_dataset(truth, grid.n_train, grid.ranges, grid.noise_sigma,
                                                     seeds.train_data, grid.noise_target);
            const Dataset test_set = sample_dataset(truth, grid.n_test, grid.ranges, 0.0, seeds.test_data);
            const std::size_t modes = count_modes(truth.system(), train_set);
            for (LossMethod method : grid.methods) {
                config.method = method;
                try {
                    const TrainResult trained = train(train_set, config);
                    const EvalReport rep = evaluate(trained.params.system(), test_set);
                    SummaryRow row;
                    row.sweep_name = to_string(grid.sweep);
                    row.sweep_value = value;
                    row.round = round;
                    row.seed = seeds.round;
                    row.method = method;
                    row.e_test = rep.e_test;
                    row.mode_count = modes;
                    row.train_seconds = trained.history.train_seconds;
                    row.degenerate_fraction = rep.degenerate_fraction;
                    row.gamma_violations = trained.history.gamma_violations;
                    cell.rows.push_back(row);
                } catch (const std::exception& e) {
                    cell.failures.push_back(FailedRound{value, round, method, e.what()});
                }
            }
        } catch (const std::exception& e) {
            for (LossMethod method : grid.methods) {
                cell.failures.push_back(FailedRound{value, round, method, e.what()});
            }
        }
    };

    if (jobs == 1) {
        for (std::size_t i = 0; i < n_cells; ++i) {
            run_cell(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n_cells);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n_cells; i = next++) {
                    run_cell(i);
                }
            });
        }
        for (std::thread& t : workers) {
            t.join();
        }
    }

    // Order rows by (sweep value index, round, method order).
    ExperimentResult result;
    for (std::size_t v = 0; v < n_values; ++v) {
        for (int r = 0; r < grid.rounds; ++r) {
            Cell& cell = cells[static_cast<std::size_t>(r) * n_values + v];
            result.rows.insert(result.rows.end(), cell.rows.begin(), cell.rows.end());
            result.failures.insert(result.failures.end(), cell.failures.begin(), cell.failures.end());
        }
    }

    if (output_dir) {
        std::filesystem::create_directories(*output_dir);
        {
            std::ofstream os = open_out(*output_dir / "summary.csv");
            write_summary_csv(os, result.rows);
        }
        {
            std::ofstream os = open_out(*output_dir / "aggregate.csv");
            write_aggregate_csv(os, result.rows);
        }
        {
            std::ofstream os = open_out(*output_dir / "failures.csv");
            os << "sweep_value,round,method,error\n";
            for (const FailedRound& f : result.failures) {
                std::string msg = f.error;
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                os << format_double(f.sweep_value) << ',' << f.round << ',' << to_string(f.method) << ',' << msg
                   << '\n';
            }
        }
        {
            std::ofstream os = open_out(*output_dir / "plot_summary.py");
            os << kPlotScript;
        }
    }
    return result;
}

}  // namespace lcsid
