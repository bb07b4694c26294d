#include "lvinv/spectral.hpp"

#include "lvinv/error.hpp"
#include "lvinv/io.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace lvinv::spectral {

Grid1D::Grid1D(double L, int N) : L_(L), N_(N), dx_(0.0) {
    if (!(L > 0.0) || !std::isfinite(L)) fail(ErrorKind::InvalidParam, "domain length L must be positive");
    if (N < 8) fail(ErrorKind::InvalidParam, "grid needs at least 8 cells");
    dx_ = L / N;
    nodes_.resize(static_cast<std::size_t>(N) + 1);
    weights_.assign(nodes_.size(), dx_);
    for (int i = 0; i <= N; ++i) nodes_[i] = L * i / N;
    weights_.front() = 0.5 * dx_;
    weights_.back() = 0.5 * dx_;
}

SpaceField sample(const Grid1D& grid, const std::function<double(double)>& fn) {
    SpaceField out(grid.size());
    const auto x = grid.nodes();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(x[i]);
    return out;
}

EigenMode neumann_mode(const Grid1D& grid, int k) {
    if (k < 0) fail(ErrorKind::InvalidParam, "mode index must be non-negative");
    if (2 * k > grid.cells()) {
        fail(ErrorKind::TooManyModes, "mode " + std::to_string(k) + " exceeds N/2 = " +
                                          std::to_string(grid.cells() / 2));
    }
    const double L = grid.length();
    const double kappa = k * std::numbers::pi / L;
    EigenMode mode;
    mode.k = k;
    mode.mu = kappa * kappa;
    const double s = std::sin(0.5 * kappa * grid.dx());
    mode.mu_discrete = 4.0 * s * s / (grid.dx() * grid.dx());
    const double scale = k == 0 ? 1.0 / std::sqrt(L) : std::sqrt(2.0 / L);
    mode.phi = sample(grid, [&](double x) { return scale * std::cos(kappa * x); });
    return mode;
}

std::vector<EigenMode> neumann_eigenpairs(const Grid1D& grid, int K) {
    if (K < 0) fail(ErrorKind::InvalidParam, "mode count must be non-negative");
    if (2 * K > grid.cells()) {
        fail(ErrorKind::TooManyModes,
             "requested " + std::to_string(K) + " modes but at most N/2 = " +
                 std::to_string(grid.cells() / 2) + " are resolved");
    }
    std::vector<EigenMode> out;
    out.reserve(static_cast<std::size_t>(K) + 1);
    for (int k = 0; k <= K; ++k) out.push_back(neumann_mode(grid, k));
    return out;
}

double inner(const Grid1D& grid, std::span<const double> a, std::span<const double> b) {
    if (a.size() != grid.size() || b.size() != grid.size()) {
        fail(ErrorKind::GridMismatch, "field length does not match the grid");
    }
    const auto w = grid.weights();
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += w[i] * a[i] * b[i];
    return sum;
}

double project(const Grid1D& grid, std::span<const double> field, const EigenMode& mode) {
    return inner(grid, field, mode.phi);
}

void apply_neumann_laplacian(const Grid1D& grid, std::span<const double> in, std::span<double> out) {
    const std::size_t n = grid.size();
    if (in.size() != n || out.size() != n) fail(ErrorKind::GridMismatch, "field length does not match the grid");
    const double inv = 1.0 / (grid.dx() * grid.dx());
    out[0] = 2.0 * (in[1] - in[0]) * inv;
    for (std::size_t i = 1; i + 1 < n; ++i) out[i] = (in[i - 1] - 2.0 * in[i] + in[i + 1]) * inv;
    out[n - 1] = 2.0 * (in[n - 2] - in[n - 1]) * inv;
}

template <typename T>
BasicSpaceTimeField<T>::BasicSpaceTimeField(Grid1D grid, double T_final, int steps)
    : grid_(std::move(grid)), T_(T_final), steps_(steps) {
    if (!(T_final > 0.0)) fail(ErrorKind::InvalidParam, "final time T must be positive");
    if (steps < 1) fail(ErrorKind::InvalidParam, "step count must be >= 1");
    values_.assign((static_cast<std::size_t>(steps) + 1) * grid_.size(), T{});
}

template class BasicSpaceTimeField<double>;
template class BasicSpaceTimeField<std::complex<double>>;

void require_finite(const SpaceTimeField& field, const char* what) {
    for (double x : field.values()) {
        if (!std::isfinite(x)) fail(ErrorKind::NonFiniteState, std::string(what) + " contains non-finite values");
    }
}

double sup_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double sup_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorKind::GridMismatch, "sup_diff on fields of different size");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

namespace {

SpaceTimeField exponential_mode(const Grid1D& grid, const EigenMode& mode, double rate, double T, int steps) {
    if (mode.phi.size() != grid.size()) fail(ErrorKind::GridMismatch, "mode sampled on a different grid");
    SpaceTimeField out(grid, T, steps);
    for (int n = 0; n <= steps; ++n) {
        const double amp = std::exp(rate * out.time(n));
        auto row = out.row(n);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = amp * mode.phi[i];
    }
    return out;
}

}  // namespace

SpaceTimeField separated_solution(const Grid1D& grid, const EigenMode& mode, double d, double c,
                                  double T, int steps) {
    if (!(d > 0.0)) fail(ErrorKind::InvalidParam, "diffusion must be positive");
    return exponential_mode(grid, mode, c - d * mode.mu, T, steps);
}

SpaceTimeField adjoint_test_function(const Grid1D& grid, const EigenMode& mode, double d, double c,
                                     double T, int steps) {
    if (!(d > 0.0)) fail(ErrorKind::InvalidParam, "diffusion must be positive");
    return exponential_mode(grid, mode, d * mode.mu - c, T, steps);
}

ComplexSpaceTimeField cgo_plane_wave(const Grid1D& grid, double xi, double d, double c, double T,
                                     int steps) {
    if (!(d > 0.0)) fail(ErrorKind::InvalidParam, "diffusion must be positive");
    ComplexSpaceTimeField out(grid, T, steps);
    const auto x = grid.nodes();
    const double wave = xi / std::sqrt(d);
    for (int n = 0; n <= steps; ++n) {
        const double amp = std::exp((xi * xi - c) * out.time(n));
        auto row = out.row(n);
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] = amp * std::complex<double>(std::cos(wave * x[i]), -std::sin(wave * x[i]));
        }
    }
    return out;
}

void write_csv(const SpaceTimeField& field, std::ostream& os) {
    os << "t";
    for (double x : field.grid().nodes()) os << ',' << io::format_number(x);
    os << '\n';
    for (int n = 0; n <= field.steps(); ++n) {
        os << io::format_number(field.time(n));
        for (double v : field.row(n)) os << ',' << io::format_number(v);
        os << '\n';
    }
}

SpaceTimeField read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) fail(ErrorKind::IoError, "empty field CSV");
    const auto header = io::split_csv_line(line);
    if (header.size() < 10 || header[0] != "t") fail(ErrorKind::IoError, "malformed field CSV header");
    const int N = static_cast<int>(header.size()) - 2;
    const double L = io::parse_number(header.back(), "field CSV header");

    std::vector<std::vector<double>> rows;
    std::vector<double> times;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = io::split_csv_line(line);
        if (cells.size() != header.size()) fail(ErrorKind::IoError, "field CSV row has wrong width");
        times.push_back(io::parse_number(cells[0], "field CSV time column"));
        std::vector<double> row;
        row.reserve(cells.size() - 1);
        for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(io::parse_number(cells[i], "field CSV"));
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) fail(ErrorKind::IoError, "field CSV needs at least two time rows");
    SpaceTimeField out(Grid1D(L, N), times.back(), static_cast<int>(rows.size()) - 1);
    for (int n = 0; n <= out.steps(); ++n) {
        auto dst = out.row(n);
        std::copy(rows[n].begin(), rows[n].end(), dst.begin());
    }
    return out;
}

}  // namespace lvinv::spectral
