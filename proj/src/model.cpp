#include "lcsid/model.hpp"

#include "lcsid/errors.hpp"
#include "lcsid/rng.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>

namespace lcsid {

namespace {

void expect_shape(const Eigen::MatrixXd& M, Eigen::Index rows, Eigen::Index cols, const char* name)
{
    if (M.rows() != rows || M.cols() != cols) {
        std::ostringstream os;
        os << "block " << name << " is " << M.rows() << "x" << M.cols() << ", expected " << rows << "x" << cols;
        throw ValidationError(os.str());
    }
}

void fill_uniform(Eigen::MatrixXd& M, Rng& rng)
{
    // Column-major fill.
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            M(i, j) = rng.uniform(-1.0, 1.0);
        }
    }
}

void fill_uniform(Eigen::VectorXd& v, Rng& rng)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] = rng.uniform(-1.0, 1.0);
    }
}

class FlatWriter {
public:
    explicit FlatWriter(Eigen::Index size) : out_(size) {}
    void put(const Eigen::MatrixXd& M)
    {
        out_.segment(pos_, M.size()) = Eigen::Map<const Eigen::VectorXd>(M.data(), M.size());
        pos_ += M.size();
    }
    Eigen::VectorXd take() { return std::move(out_); }

private:
    Eigen::VectorXd out_;
    Eigen::Index pos_ = 0;
};

class FlatReader {
public:
    explicit FlatReader(const Eigen::VectorXd& flat) : flat_(flat) {}
    Eigen::MatrixXd get(Eigen::Index rows, Eigen::Index cols)
    {
        Eigen::MatrixXd M = Eigen::Map<const Eigen::MatrixXd>(flat_.data() + pos_, rows, cols);
        pos_ += rows * cols;
        return M;
    }
    Eigen::VectorXd get(Eigen::Index rows)
    {
        Eigen::VectorXd v = flat_.segment(pos_, rows);
        pos_ += rows;
        return v;
    }

private:
    const Eigen::VectorXd& flat_;
    Eigen::Index pos_ = 0;
};

double parse_double(const std::string& token)
{
    double value = 0.0;
    const char* first = token.data();
    const char* last = first + token.size();
    if (!token.empty() && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw IoError("cannot parse number '" + token + "'");
    }
    return value;
}

}  // namespace

void Dims::validate() const
{
    if (n_x < 1 || n_u < 0 || n_lambda < 0) {
        throw ValidationError("invalid dimensions: need n_x >= 1, n_u >= 0, n_lambda >= 0");
    }
    if (n_lambda > 32) {
        throw ValidationError("n_lambda above 32 is not supported");
    }
}

int Dims::param_count() const
{
    return n_x * (n_x + n_u + n_lambda + 1) + n_lambda * (n_x + n_u + n_lambda + 1);
}

Eigen::MatrixXd materialize_f(const FParam& fparam)
{
    const auto m = fparam.G.rows();
    if (fparam.G.cols() != m || fparam.H.rows() != m || fparam.H.cols() != m) {
        throw ValidationError("G and H must be square matrices of equal size");
    }
    if (!(fparam.delta >= 0.0)) {
        throw ValidationError("delta must be non-negative");
    }
    Eigen::MatrixXd F = fparam.G * fparam.G.transpose() + fparam.H - fparam.H.transpose();
    F.diagonal().array() += fparam.delta;
    return F;
}

double stiffness_of(const Eigen::MatrixXd& F)
{
    return min_symmetric_eigenvalue(F + F.transpose());
}

Dims LcsSystem::dims() const
{
    return Dims{static_cast<int>(A.rows()), static_cast<int>(B.cols()), static_cast<int>(F.rows())};
}

void LcsSystem::validate() const
{
    const Dims dm = dims();
    dm.validate();
    expect_shape(A, dm.n_x, dm.n_x, "A");
    expect_shape(B, dm.n_x, dm.n_u, "B");
    expect_shape(C, dm.n_x, dm.n_lambda, "C");
    expect_shape(d, dm.n_x, 1, "d");
    expect_shape(D, dm.n_lambda, dm.n_x, "D");
    expect_shape(E, dm.n_lambda, dm.n_u, "E");
    expect_shape(F, dm.n_lambda, dm.n_lambda, "F");
    expect_shape(c, dm.n_lambda, 1, "c");
}

LcsSystem LcsSystem::zeros(const Dims& dm)
{
    dm.validate();
    LcsSystem s;
    s.A = Eigen::MatrixXd::Zero(dm.n_x, dm.n_x);
    s.B = Eigen::MatrixXd::Zero(dm.n_x, dm.n_u);
    s.C = Eigen::MatrixXd::Zero(dm.n_x, dm.n_lambda);
    s.d = Eigen::VectorXd::Zero(dm.n_x);
    s.D = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_x);
    s.E = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_u);
    s.F = Eigen::MatrixXd::Zero(dm.n_lambda, dm.n_lambda);
    s.c = Eigen::VectorXd::Zero(dm.n_lambda);
    return s;
}

Dims LcsParams::dims() const
{
    return Dims{static_cast<int>(A.rows()), static_cast<int>(B.cols()), static_cast<int>(fparam.G.rows())};
}

void LcsParams::validate() const
{
    const Dims dm = dims();
    dm.validate();
    expect_shape(A, dm.n_x, dm.n_x, "A");
    expect_shape(B, dm.n_x, dm.n_u, "B");
    expect_shape(C, dm.n_x, dm.n_lambda, "C");
    expect_shape(d, dm.n_x, 1, "d");
    expect_shape(D, dm.n_lambda, dm.n_x, "D");
    expect_shape(E, dm.n_lambda, dm.n_u, "E");
    expect_shape(fparam.G, dm.n_lambda, dm.n_lambda, "G");
    expect_shape(fparam.H, dm.n_lambda, dm.n_lambda, "H");
    expect_shape(c, dm.n_lambda, 1, "c");
    if (!(fparam.delta >= 0.0)) {
        throw ValidationError("delta must be non-negative");
    }
}

LcsSystem LcsParams::system() const
{
    return LcsSystem{A, B, C, d, D, E, materialize_f(fparam), c};
}

StepResult simulate_step(const LcsSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         std::optional<double> gamma)
{
    sys.validate();
    if (x.size() != sys.A.rows() || u.size() != sys.B.cols()) {
        throw ValidationError("state or input has wrong dimension");
    }
    const LcpSolver lcp(sys.F, gamma);
    StepResult out;
    out.lcp = lcp.solve(sys.D * x + sys.E * u + sys.c);
    out.x_next = sys.A * x + sys.B * u + sys.C * out.lcp.lambda + sys.d;
    return out;
}

LcsParams random_lcs(const Dims& dims, const StiffnessSpec& stiffness, std::uint64_t seed)
{
    dims.validate();
    if (!(stiffness.sigma_min_target > 0.0)) {
        throw ValidationError("stiffness target must be positive");
    }
    const int nx = dims.n_x, nu = dims.n_u, m = dims.n_lambda;
    Rng rng(seed);
    LcsParams p;
    p.A.resize(nx, nx);
    p.B.resize(nx, nu);
    p.C.resize(nx, m);
    p.d.resize(nx);
    p.D.resize(m, nx);
    p.E.resize(m, nu);
    Eigen::MatrixXd raw(m, m);
    p.c.resize(m);
    fill_uniform(p.A, rng);
    fill_uniform(p.B, rng);
    fill_uniform(p.C, rng);
    fill_uniform(p.d, rng);
    fill_uniform(p.D, rng);
    fill_uniform(p.E, rng);
    fill_uniform(raw, rng);
    fill_uniform(p.c, rng);

    p.fparam.delta = 0.0;
    p.fparam.G = Eigen::MatrixXd::Zero(m, m);
    p.fparam.H = Eigen::MatrixXd::Zero(m, m);
    if (m > 0) {
        const Eigen::MatrixXd sym = 0.5 * (raw + raw.transpose());
        const Eigen::MatrixXd skew = 0.5 * (raw - raw.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
        Eigen::VectorXd eig = es.eigenvalues();
        eig.array() += 0.5 * stiffness.sigma_min_target - eig[0];
        const Eigen::MatrixXd shifted = es.eigenvectors() * eig.asDiagonal() * es.eigenvectors().transpose();
        const Eigen::MatrixXd shifted_sym = 0.5 * (shifted + shifted.transpose());
        Eigen::LLT<Eigen::MatrixXd> llt(shifted_sym);
        if (llt.info() != Eigen::Success) {
            throw SolverError("stiffness construction: Cholesky factorization failed");
        }
        p.fparam.G = llt.matrixL();
        p.fparam.H = 0.5 * skew;
    }
    return p;
}

Eigen::VectorXd flatten(const LcsSystem& sys)
{
    FlatWriter w(sys.dims().param_count());
    w.put(sys.A);
    w.put(sys.B);
    w.put(sys.C);
    w.put(sys.d);
    w.put(sys.D);
    w.put(sys.E);
    w.put(sys.F);
    w.put(sys.c);
    return w.take();
}

LcsSystem unflatten(const Dims& dims, const Eigen::VectorXd& flat)
{
    dims.validate();
    if (flat.size() != dims.param_count()) {
        throw ValidationError("flat parameter vector has wrong length");
    }
    const int nx = dims.n_x, nu = dims.n_u, m = dims.n_lambda;
    FlatReader r(flat);
    LcsSystem s;
    s.A = r.get(nx, nx);
    s.B = r.get(nx, nu);
    s.C = r.get(nx, m);
    s.d = r.get(nx);
    s.D = r.get(m, nx);
    s.E = r.get(m, nu);
    s.F = r.get(m, m);
    s.c = r.get(m);
    return s;
}

int trainable_count(const Dims& dims)
{
    return dims.param_count() + dims.n_lambda * dims.n_lambda;
}

Eigen::VectorXd flatten_params(const LcsParams& params)
{
    FlatWriter w(trainable_count(params.dims()));
    w.put(params.A);
    w.put(params.B);
    w.put(params.C);
    w.put(params.d);
    w.put(params.D);
    w.put(params.E);
    w.put(params.fparam.G);
    w.put(params.fparam.H);
    w.put(params.c);
    return w.take();
}

LcsParams unflatten_params(const Dims& dims, double delta, const Eigen::VectorXd& flat)
{
    dims.validate();
    if (flat.size() != trainable_count(dims)) {
        throw ValidationError("flat trainable vector has wrong length");
    }
    const int nx = dims.n_x, nu = dims.n_u, m = dims.n_lambda;
    FlatReader r(flat);
    LcsParams p;
    p.A = r.get(nx, nx);
    p.B = r.get(nx, nu);
    p.C = r.get(nx, m);
    p.d = r.get(nx);
    p.D = r.get(m, nx);
    p.E = r.get(m, nu);
    p.fparam.G = r.get(m, m);
    p.fparam.H = r.get(m, m);
    p.fparam.delta = delta;
    p.c = r.get(m);
    return p;
}

std::string format_double(double value)
{
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::general, 17);
    (void)ec;
    return std::string(buf.data(), ptr);
}

void write_params(std::ostream& os, const LcsParams& params)
{
    params.validate();
    const Dims dm = params.dims();
    os << "lcs " << dm.n_x << ' ' << dm.n_u << ' ' << dm.n_lambda << ' ' << format_double(params.fparam.delta)
       << '\n';
    const auto block = [&os](const char* name, const Eigen::MatrixXd& M) {
        os << name << ' ' << M.rows() << ' ' << M.cols() << '\n';
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            for (Eigen::Index j = 0; j < M.cols(); ++j) {
                if (j > 0) {
                    os << ' ';
                }
                os << format_double(M(i, j));
            }
            os << '\n';
        }
    };
    block("A", params.A);
    block("B", params.B);
    block("C", params.C);
    block("d", params.d);
    block("D", params.D);
    block("E", params.E);
    block("G", params.fparam.G);
    block("H", params.fparam.H);
    block("c", params.c);
}

LcsParams read_params(std::istream& is)
{
    std::string tag;
    Dims dm;
    std::string delta_token;
    if (!(is >> tag >> dm.n_x >> dm.n_u >> dm.n_lambda >> delta_token) || tag != "lcs") {
        throw IoError("parameter file: missing 'lcs n_x n_u n_lambda delta' header");
    }
    try {
        dm.validate();
    } catch (const ValidationError& e) {
        throw IoError(std::string("parameter file: ") + e.what());
    }
    const int nx = dm.n_x, nu = dm.n_u, m = dm.n_lambda;
    const auto block = [&is](const char* name, Eigen::Index rows, Eigen::Index cols) {
        std::string got;
        Eigen::Index r = 0, c = 0;
        if (!(is >> got >> r >> c) || got != name || r != rows || c != cols) {
            throw IoError(std::string("parameter file: bad header for block ") + name);
        }
        Eigen::MatrixXd M(rows, cols);
        std::string token;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                if (!(is >> token)) {
                    throw IoError(std::string("parameter file: truncated block ") + name);
                }
                M(i, j) = parse_double(token);
            }
        }
        return M;
    };
    LcsParams p;
    p.fparam.delta = parse_double(delta_token);
    p.A = block("A", nx, nx);
    p.B = block("B", nx, nu);
    p.C = block("C", nx, m);
    p.d = block("d", nx, 1);
    p.D = block("D", m, nx);
    p.E = block("E", m, nu);
    p.fparam.G = block("G", m, m);
    p.fparam.H = block("H", m, m);
    p.c = block("c", m, 1);
    return p;
}

void save_params(const std::filesystem::path& path, const LcsParams& params)
{
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    write_params(os, params);
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

LcsParams load_params(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    return read_params(is);
}

}  // namespace lcsid
