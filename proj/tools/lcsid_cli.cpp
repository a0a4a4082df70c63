// Command-line front end: generate, train, eval, experiment.
//
// Exit codes: 0 success, 1 validation or usage error, 2 solver failure, 3 I/O error.

#include "lcsid/config.hpp"
#include "lcsid/data.hpp"
#include "lcsid/errors.hpp"
#include "lcsid/eval.hpp"
#include "lcsid/model.hpp"
#include "lcsid/rng.hpp"
#include "lcsid/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace lcsid;

namespace {

// A flag that, when given, overrides one config key.
struct Binding {
    CLI::Option* option = nullptr;
    std::string key;
};

class Overrides {
public:
    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help,
             const std::string& fallback)
    {
        CLI::Option* opt = app->add_option(flag, storage_[key], help)->default_str(fallback);
        bindings_.push_back({opt, key});
    }

    void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                  const std::string& help)
    {
        CLI::Option* opt = app->add_flag(flag, help);
        bindings_.push_back({opt, key});
        storage_[key] = value;
    }

    // Config file first, then every flag the user actually passed.
    Config merge(const std::string& config_path) const
    {
        Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
        for (const Binding& b : bindings_) {
            if (b.option->count() > 0) {
                cfg.set(b.key, storage_.at(b.key));
            }
        }
        return cfg;
    }

private:
    std::map<std::string, std::string> storage_;
    std::vector<Binding> bindings_;
};

// Help-text display only; parsed values never pass through here.
std::string str(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}
std::string str(long long v) { return std::to_string(v); }

void add_train_flags(CLI::App* app, Overrides& ov)
{
    const TrainConfig d;
    ov.add(app, "--method", "train.method", "Loss: violation or prediction", to_string(d.method));
    ov.add(app, "--epsilon", "train.epsilon", "Complementarity penalty weight 1/epsilon", str(d.epsilon));
    ov.add(app, "--gamma", "train.gamma", "Proxy QP constant gamma", str(d.gamma));
    ov.add(app, "--omega", "train.omega", "Regularizer weight on ||C||_F^2", str(d.omega));
    ov.add(app, "--lr,--learning-rate", "train.learning_rate", "Adam learning rate", str(d.learning_rate));
    ov.add(app, "--beta1", "train.beta1", "Adam beta1", str(d.beta1));
    ov.add(app, "--beta2", "train.beta2", "Adam beta2", str(d.beta2));
    ov.add(app, "--adam-epsilon", "train.adam_epsilon", "Adam denominator epsilon", str(d.adam_epsilon));
    ov.add(app, "--batch-size", "train.batch_size", "Minibatch size", str(static_cast<long long>(d.batch_size)));
    ov.add(app, "--max-iterations", "train.max_iterations", "Number of Adam steps",
           str(static_cast<long long>(d.max_iterations)));
    ov.add(app, "--checkpoint-interval", "train.checkpoint_interval", "Full-data loss every N steps (0 = off)",
           str(static_cast<long long>(d.checkpoint_interval)));
    ov.add(app, "--init-seed", "train.init_seed", "Seed for the random initial parameters",
           std::to_string(d.init_seed));
    ov.add(app, "--shuffle-seed", "train.shuffle_seed", "Seed for minibatch shuffling",
           std::to_string(d.shuffle_seed));
    ov.add(app, "--gamma-policy", "train.gamma_policy", "fixed or clamp", to_string(d.gamma_policy));
    ov.add(app, "--delta", "train.delta", "Diagonal shift in F = GG^T + delta I + H - H^T", str(d.delta));
    ov.add(app, "--strictness", "train.strictness", "Strict complementarity threshold", str(d.strictness));
    ov.add_flag(app, "--no-timing", "train.record_timing", "false", "Write zero wall times (reproducible CSV)");
}

int cmd_generate(const Config& cfg, const fs::path& out)
{
    Dims dims;
    dims.n_x = static_cast<int>(cfg.get_int("system.n_x", 4));
    dims.n_u = static_cast<int>(cfg.get_int("system.n_u", 2));
    dims.n_lambda = static_cast<int>(cfg.get_int("system.n_lambda", 4));
    const double stiffness = cfg.get_double("system.stiffness", 1.0);
    const long long n_train = cfg.get_int("data.n_train", 5000);
    const long long n_test = cfg.get_int("data.n_test", 1000);
    const double noise = cfg.get_double("data.noise", 1e-2);
    const std::string target_text = cfg.get_string("data.noise_target", "all");
    SamplingRanges ranges;
    ranges.x_low = cfg.get_double("data.x_low", ranges.x_low);
    ranges.x_high = cfg.get_double("data.x_high", ranges.x_high);
    ranges.u_low = cfg.get_double("data.u_low", ranges.u_low);
    ranges.u_high = cfg.get_double("data.u_high", ranges.u_high);
    const auto seed = cfg.get_seed("seed", 0);

    dims.validate();
    ranges.validate();
    if (n_train < 1 || n_test < 1) {
        throw ValidationError("ntrain and ntest must be at least 1");
    }
    if (!(noise >= 0.0)) {
        throw ValidationError("noise must be non-negative");
    }
    if (!(stiffness > 0.0)) {
        throw ValidationError("stiffness must be positive");
    }
    NoiseTarget target = NoiseTarget::all;
    if (target_text == "next_state_only") {
        target = NoiseTarget::next_state_only;
    } else if (target_text != "all") {
        throw ValidationError("unknown noise target '" + target_text + "'");
    }

    const LcsParams truth = random_lcs(dims, StiffnessSpec{stiffness}, derive_seed(seed, 0));
    Dataset train_set =
        sample_dataset(truth, static_cast<std::size_t>(n_train), ranges, noise, derive_seed(seed, 1), target);
    Dataset test_set = sample_dataset(truth, static_cast<std::size_t>(n_test), ranges, 0.0, derive_seed(seed, 2));
    train_set.ground_truth_ref = "truth.lcs";
    test_set.ground_truth_ref = "truth.lcs";
    const std::size_t modes = count_modes(truth.system(), train_set);

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create " + out.string() + ": " + ec.message());
    }
    save_params(out / "truth.lcs", truth);
    write_dataset(train_set, out / "train.csv");
    write_dataset(test_set, out / "test.csv");
    std::cout << "wrote " << (out / "truth.lcs").string() << ", " << (out / "train.csv").string() << ", "
              << (out / "test.csv").string() << "\n";
    std::cout << "modes " << modes << "\n";
    return 0;
}

int cmd_train(const Config& cfg, const fs::path& data_path, const fs::path& out, const fs::path& history_path,
              const std::string& init_path)
{
    const TrainConfig config = train_config_from(cfg, TrainConfig{});
    config.validate();
    const Dataset data = read_dataset(data_path);
    std::optional<LcsParams> init;
    if (!init_path.empty()) {
        init = load_params(init_path);
        if (init->dims() != data.dims) {
            throw ValidationError("initial parameters do not match dataset dimensions");
        }
    }
    const TrainResult result = train(data, config, init);
    save_params(out, result.params);
    result.history.write_csv(history_path);
    std::cout << "method " << to_string(config.method) << "\n";
    std::cout << "initial_loss " << format_double(result.history.initial_loss) << "\n";
    std::cout << "final_loss " << format_double(result.history.final_loss) << "\n";
    std::cout << "gamma_violations " << result.history.gamma_violations << "\n";
    std::cout << "skipped_batches " << result.history.skipped_batches << "\n";
    std::cout << "wrote " << out.string() << ", " << history_path.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& params_path, const fs::path& test_path, const std::string& report_path)
{
    const LcsParams params = load_params(params_path);
    const Dataset test_set = read_dataset(test_path);
    const EvalReport rep = evaluate(params.system(), test_set);
    if (!report_path.empty()) {
        std::ofstream os(report_path);
        if (!os) {
            throw IoError("cannot open " + report_path + " for writing");
        }
        rep.write_csv(os);
    }
    std::cout << "e_test " << format_double(rep.e_test) << "\n";
    std::cout << "n_test " << rep.n_test << "\n";
    std::cout << "excluded " << rep.excluded << "\n";
    if (rep.mode_count) {
        std::cout << "modes " << *rep.mode_count << "\n";
    }
    std::cout << "degenerate_fraction " << format_double(rep.degenerate_fraction) << "\n";
    return 0;
}

int cmd_experiment(const fs::path& grid_path, const fs::path& out, int jobs)
{
    const ExperimentGrid grid = ExperimentGrid::from_config(Config::load(grid_path));
    if (jobs < 1) {
        throw ValidationError("jobs must be at least 1");
    }
    const ExperimentResult result = run_experiment(grid, out, jobs);
    std::cout << "rows " << result.rows.size() << "\n";
    std::cout << "failures " << result.failures.size() << "\n";
    std::cout << "wrote " << (out / "summary.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Identify linear complementarity systems from transition data"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // generate
    CLI::App* gen = app.add_subcommand("generate", "Draw a ground-truth system and train/test datasets");
    Overrides gen_ov;
    std::string gen_config;
    std::string gen_out = "data";
    gen_ov.add(gen, "--nx", "system.n_x", "State dimension", "4");
    gen_ov.add(gen, "--nu", "system.n_u", "Input dimension", "2");
    gen_ov.add(gen, "--nlambda", "system.n_lambda", "Number of complementarity constraints", "4");
    gen_ov.add(gen, "--stiffness", "system.stiffness", "Target min eigenvalue of F + F^T", "1");
    gen_ov.add(gen, "--ntrain", "data.n_train", "Training samples", "5000");
    gen_ov.add(gen, "--ntest", "data.n_test", "Test samples (noiseless)", "1000");
    gen_ov.add(gen, "--noise", "data.noise", "Gaussian noise standard deviation", "0.01");
    gen_ov.add(gen, "--noise-target", "data.noise_target", "all or next_state_only", "all");
    gen_ov.add(gen, "--seed", "seed", "Master seed", "0");
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
    gen->add_option("--config", gen_config, "Config file ([system], [data], seed)");

    // train
    CLI::App* tr = app.add_subcommand("train", "Fit an LCS to a dataset with Adam");
    Overrides tr_ov;
    std::string tr_config;
    std::string tr_data;
    std::string tr_out = "learned.lcs";
    std::string tr_history = "history.csv";
    std::string tr_init;
    tr->add_option("--data", tr_data, "Training CSV")->required();
    tr->add_option("--out", tr_out, "Learned parameter file")->capture_default_str();
    tr->add_option("--history", tr_history, "Training history CSV")->capture_default_str();
    tr->add_option("--init", tr_init, "Start from this parameter file instead of a random draw");
    tr->add_option("--config", tr_config, "Config file ([train] section)");
    add_train_flags(tr, tr_ov);

    // eval
    CLI::App* ev = app.add_subcommand("eval", "Relative one-step prediction error on a test set");
    std::string ev_params;
    std::string ev_test;
    std::string ev_report;
    ev->add_option("--params", ev_params, "Parameter file")->required();
    ev->add_option("--test", ev_test, "Test CSV")->required();
    ev->add_option("--report", ev_report, "Per-sample CSV report");

    // experiment
    CLI::App* ex = app.add_subcommand("experiment", "Run a sweep grid and write summary CSVs");
    std::string ex_grid;
    std::string ex_out = "results";
    int ex_jobs = 1;
    ex->add_option("--grid", ex_grid, "Grid config file")->required();
    ex->add_option("--out", ex_out, "Output directory")->capture_default_str();
    ex->add_option("--jobs", ex_jobs, "Worker threads")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(gen_ov.merge(gen_config), gen_out);
        }
        if (tr->parsed()) {
            return cmd_train(tr_ov.merge(tr_config), tr_data, tr_out, tr_history, tr_init);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_params, ev_test, ev_report);
        }
        if (ex->parsed()) {
            return cmd_experiment(ex_grid, ex_out, ex_jobs);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
