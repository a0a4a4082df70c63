#include "lcsid/data.hpp"

#include "lcsid/errors.hpp"
#include "lcsid/lcp.hpp"
#include "lcsid/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lcsid {

namespace {

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) {
        out.push_back(item);
    }
    if (!s.empty() && s.back() == sep) {
        out.emplace_back();
    }
    return out;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& token)
{
    const std::string t = trim(token);
    double value = 0.0;
    const char* first = t.data();
    const char* last = first + t.size();
    if (!t.empty() && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (t.empty() || ec != std::errc{} || ptr != last) {
        throw IoError("cannot parse number '" + t + "'");
    }
    return value;
}

long long to_integer(const std::string& token)
{
    const std::string t = trim(token);
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
        throw IoError("cannot parse integer '" + t + "'");
    }
    return value;
}

std::uint64_t to_unsigned(const std::string& token)
{
    const std::string t = trim(token);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
        throw IoError("cannot parse integer '" + t + "'");
    }
    return value;
}

void add_noise(Eigen::VectorXd& v, double sigma, Rng& rng)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] += sigma * rng.normal();
    }
}

}  // namespace

void Dataset::validate() const
{
    dims.validate();
    if (transitions.empty()) {
        throw ValidationError("dataset has no transitions");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ValidationError("noise_sigma must be non-negative");
    }
    for (const Transition& t : transitions) {
        if (t.x.size() != dims.n_x || t.u.size() != dims.n_u || t.x_next.size() != dims.n_x) {
            throw ValidationError("transition dimensions do not match dataset dims");
        }
        if (!t.x.allFinite() || !t.u.allFinite() || !t.x_next.allFinite()) {
            throw ValidationError("transition has non-finite entries");
        }
    }
}

void SamplingRanges::validate() const
{
    if (!(x_low < x_high) || !(u_low < u_high)) {
        throw ValidationError("sampling ranges need low < high");
    }
}

Dataset sample_dataset(const LcsSystem& truth, std::size_t n, const SamplingRanges& ranges, double noise_sigma,
                       std::uint64_t seed, NoiseTarget noise_target)
{
    truth.validate();
    ranges.validate();
    if (n == 0) {
        throw ValidationError("dataset size must be at least 1");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ValidationError("noise_sigma must be non-negative");
    }
    const Dims dm = truth.dims();
    const LcpSolver lcp(truth.F);
    // Separate streams: the clean (x, u) draws do not depend on the noise level.
    Rng rng(seed);
    Rng noise_rng(derive_seed(seed, 1));

    Dataset ds;
    ds.dims = dm;
    ds.noise_sigma = noise_sigma;
    ds.noise_target = noise_target;
    ds.seed = seed;
    ds.transitions.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Transition t;
        t.x.resize(dm.n_x);
        t.u.resize(dm.n_u);
        for (int i = 0; i < dm.n_x; ++i) {
            t.x[i] = rng.uniform(ranges.x_low, ranges.x_high);
        }
        for (int i = 0; i < dm.n_u; ++i) {
            t.u[i] = rng.uniform(ranges.u_low, ranges.u_high);
        }
        const LcpSolution sol = lcp.solve(truth.D * t.x + truth.E * t.u + truth.c);
        t.x_next = truth.A * t.x + truth.B * t.u + truth.C * sol.lambda + truth.d;
        if (noise_sigma > 0.0) {
            if (noise_target == NoiseTarget::all) {
                add_noise(t.x, noise_sigma, noise_rng);
                add_noise(t.u, noise_sigma, noise_rng);
            }
            add_noise(t.x_next, noise_sigma, noise_rng);
        }
        ds.transitions.push_back(std::move(t));
    }
    return ds;
}

Dataset sample_dataset(const LcsParams& truth, std::size_t n, const SamplingRanges& ranges, double noise_sigma,
                       std::uint64_t seed, NoiseTarget noise_target)
{
    return sample_dataset(truth.system(), n, ranges, noise_sigma, seed, noise_target);
}

std::size_t count_modes(const LcsSystem& theta, const Dataset& dataset)
{
    theta.validate();
    if (theta.dims() != dataset.dims) {
        throw ValidationError("count_modes: system and dataset dimensions differ");
    }
    const LcpSolver lcp(theta.F);
    std::set<std::uint64_t> modes;
    for (const Transition& t : dataset.transitions) {
        modes.insert(lcp.solve(theta.D * t.x + theta.E * t.u + theta.c).mode);
    }
    return modes.size();
}

std::filesystem::path metadata_path(const std::filesystem::path& csv_path)
{
    return std::filesystem::path(csv_path.string() + ".meta");
}

std::string format_metadata(const Dataset& ds)
{
    std::ostringstream os;
    os << "n_x=" << ds.dims.n_x << ",n_u=" << ds.dims.n_u << ",n_lambda=" << ds.dims.n_lambda
       << ",noise_sigma=" << format_double(ds.noise_sigma)
       << ",noise_target=" << (ds.noise_target == NoiseTarget::all ? "all" : "next_state_only")
       << ",seed=" << ds.seed << ",ground_truth=" << ds.ground_truth_ref;
    return os.str();
}

void parse_metadata(const std::string& line, Dataset& ds)
{
    bool have_nx = false, have_nu = false, have_nl = false;
    for (const std::string& field : split(trim(line), ',')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) {
            throw IoError("metadata field without '=': " + field);
        }
        const std::string key = trim(field.substr(0, eq));
        const std::string value = trim(field.substr(eq + 1));
        if (key == "n_x") {
            ds.dims.n_x = static_cast<int>(to_integer(value));
            have_nx = true;
        } else if (key == "n_u") {
            ds.dims.n_u = static_cast<int>(to_integer(value));
            have_nu = true;
        } else if (key == "n_lambda") {
            ds.dims.n_lambda = static_cast<int>(to_integer(value));
            have_nl = true;
        } else if (key == "noise_sigma") {
            ds.noise_sigma = to_double(value);
        } else if (key == "noise_target") {
            if (value == "all") {
                ds.noise_target = NoiseTarget::all;
            } else if (value == "next_state_only") {
                ds.noise_target = NoiseTarget::next_state_only;
            } else {
                throw IoError("unknown noise_target '" + value + "'");
            }
        } else if (key == "seed") {
            ds.seed = to_unsigned(value);
        } else if (key == "ground_truth") {
            ds.ground_truth_ref = value;
        } else {
            throw IoError("unknown metadata key '" + key + "'");
        }
    }
    if (!have_nx || !have_nu || !have_nl) {
        throw IoError("metadata must define n_x, n_u and n_lambda");
    }
    try {
        ds.dims.validate();
    } catch (const ValidationError& e) {
        throw IoError(std::string("metadata: ") + e.what());
    }
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path)
{
    ds.validate();
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    const Dims& dm = ds.dims;
    std::string sep;
    for (int i = 0; i < dm.n_x; ++i, sep = ",") {
        os << sep << 'x' << i;
    }
    for (int i = 0; i < dm.n_u; ++i) {
        os << ",u" << i;
    }
    for (int i = 0; i < dm.n_x; ++i) {
        os << ",xn" << i;
    }
    os << '\n';
    for (const Transition& t : ds.transitions) {
        sep.clear();
        for (Eigen::Index i = 0; i < t.x.size(); ++i, sep = ",") {
            os << sep << format_double(t.x[i]);
        }
        for (Eigen::Index i = 0; i < t.u.size(); ++i) {
            os << ',' << format_double(t.u[i]);
        }
        for (Eigen::Index i = 0; i < t.x_next.size(); ++i) {
            os << ',' << format_double(t.x_next[i]);
        }
        os << '\n';
    }
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
    std::ofstream meta(metadata_path(path));
    if (!meta) {
        throw IoError("cannot open " + metadata_path(path).string() + " for writing");
    }
    meta << format_metadata(ds) << '\n';
}

Dataset read_dataset(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    std::string header;
    if (!std::getline(is, header)) {
        throw IoError("dataset file is empty: " + path.string());
    }
    const std::vector<std::string> columns = split(trim(header), ',');
    int nx = 0, nu = 0, nxn = 0;
    for (const std::string& col : columns) {
        const std::string c = trim(col);
        if (c.rfind("xn", 0) == 0) {
            ++nxn;
        } else if (c.rfind('x', 0) == 0) {
            ++nx;
        } else if (c.rfind('u', 0) == 0) {
            ++nu;
        } else {
            throw IoError("unexpected column '" + c + "'");
        }
    }
    if (nx != nxn || nx < 1) {
        throw IoError("dataset header must have matching x and xn columns");
    }

    Dataset ds;
    ds.dims = Dims{nx, nu, 0};
    std::ifstream meta(metadata_path(path));
    if (meta) {
        std::string line;
        if (std::getline(meta, line)) {
            parse_metadata(line, ds);
        }
        if (ds.dims.n_x != nx || ds.dims.n_u != nu) {
            throw IoError("metadata dimensions disagree with CSV header");
        }
    }

    std::string line;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() != columns.size()) {
            throw IoError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns.size()) +
                          " values");
        }
        Transition t;
        t.x.resize(nx);
        t.u.resize(nu);
        t.x_next.resize(nx);
        std::size_t k = 0;
        for (int i = 0; i < nx; ++i) {
            t.x[i] = to_double(cells[k++]);
        }
        for (int i = 0; i < nu; ++i) {
            t.u[i] = to_double(cells[k++]);
        }
        for (int i = 0; i < nx; ++i) {
            t.x_next[i] = to_double(cells[k++]);
        }
        ds.transitions.push_back(std::move(t));
    }
    if (ds.transitions.empty()) {
        throw IoError("dataset has no transitions: " + path.string());
    }
    try {
        ds.validate();
    } catch (const ValidationError& e) {
        throw IoError(std::string("dataset: ") + e.what());
    }
    return ds;
}

}  // namespace lcsid
