#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace lvinv::spectral {

/// Node-based uniform grid on (0, L) with trapezoid weights.
class Grid1D {
public:
    Grid1D(double L, int N);

    double length() const noexcept { return L_; }
    int cells() const noexcept { return N_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double dx() const noexcept { return dx_; }
    std::span<const double> nodes() const noexcept { return nodes_; }
    std::span<const double> weights() const noexcept { return weights_; }

    bool operator==(const Grid1D& other) const noexcept { return L_ == other.L_ && N_ == other.N_; }

private:
    double L_;
    int N_;
    double dx_;
    std::vector<double> nodes_;
    std::vector<double> weights_;
};

using SpaceField = std::vector<double>;

/// Samples fn at every grid node.
SpaceField sample(const Grid1D& grid, const std::function<double(double)>& fn);

/// Neumann eigenpair of -d^2/dx^2 on (0, L).
struct EigenMode {
    int k = 0;
    double mu = 0.0;           ///< (k pi / L)^2
    double mu_discrete = 0.0;  ///< eigenvalue of the mirror-node stencil, (4/dx^2) sin^2(k pi dx / 2L)
    SpaceField phi;            ///< cos(k pi x / L), unit discrete L2 norm
};

/// Modes k = 0..K. Throws TooManyModes when K > N/2.
std::vector<EigenMode> neumann_eigenpairs(const Grid1D& grid, int K);
EigenMode neumann_mode(const Grid1D& grid, int k);

/// Trapezoid inner product <a, b>.
double inner(const Grid1D& grid, std::span<const double> a, std::span<const double> b);

/// Trapezoid quadrature of field * phi. Throws GridMismatch on size mismatch.
double project(const Grid1D& grid, std::span<const double> field, const EigenMode& mode);

/// Second-order Neumann Laplacian with mirror ghost nodes.
void apply_neumann_laplacian(const Grid1D& grid, std::span<const double> in, std::span<double> out);

/// Field sampled on (time grid) x (space grid), row-major by time step.
template <typename T>
class BasicSpaceTimeField {
public:
    BasicSpaceTimeField(Grid1D grid, double T_final, int steps);

    const Grid1D& grid() const noexcept { return grid_; }
    double final_time() const noexcept { return T_; }
    int steps() const noexcept { return steps_; }
    double dt() const noexcept { return T_ / steps_; }
    double time(int n) const noexcept { return T_ * n / steps_; }
    std::size_t width() const noexcept { return grid_.size(); }

    T& operator()(int n, std::size_t i) { return values_[static_cast<std::size_t>(n) * width() + i]; }
    const T& operator()(int n, std::size_t i) const { return values_[static_cast<std::size_t>(n) * width() + i]; }

    std::span<T> row(int n) { return {values_.data() + static_cast<std::size_t>(n) * width(), width()}; }
    std::span<const T> row(int n) const {
        return {values_.data() + static_cast<std::size_t>(n) * width(), width()};
    }
    std::span<const T> terminal() const { return row(steps_); }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    bool same_layout(const BasicSpaceTimeField& other) const noexcept {
        return grid_ == other.grid_ && T_ == other.T_ && steps_ == other.steps_;
    }

private:
    Grid1D grid_;
    double T_;
    int steps_;
    std::vector<T> values_;
};

using SpaceTimeField = BasicSpaceTimeField<double>;
using ComplexSpaceTimeField = BasicSpaceTimeField<std::complex<double>>;

extern template class BasicSpaceTimeField<double>;
extern template class BasicSpaceTimeField<std::complex<double>>;

/// Throws NonFiniteState if any sample is NaN or infinite.
void require_finite(const SpaceTimeField& field, const char* what);

double sup_norm(std::span<const double> v);
double sup_diff(std::span<const double> a, std::span<const double> b);

/// e^{(c - d mu) t} phi(x): solves w_t - d w_xx - c w = 0 with Neumann data.
SpaceTimeField separated_solution(const Grid1D& grid, const EigenMode& mode, double d, double c,
                                  double T, int steps);

/// e^{(d mu - c) t} phi(x): solves -w_t - d w_xx - c w = 0 with Neumann data.
SpaceTimeField adjoint_test_function(const Grid1D& grid, const EigenMode& mode, double d, double c,
                                     double T, int steps);

/// e^{(xi^2 - c) t - i xi x / sqrt(d)}. Solves the adjoint equation in the
/// interior only; it does not satisfy the Neumann condition.
ComplexSpaceTimeField cgo_plane_wave(const Grid1D& grid, double xi, double d, double c, double T,
                                     int steps);

/// CSV: header "t,x_0,...,x_N", then one row per time step led by the time.
void write_csv(const SpaceTimeField& field, std::ostream& os);
SpaceTimeField read_csv(std::istream& is);

}  // namespace lvinv::spectral
