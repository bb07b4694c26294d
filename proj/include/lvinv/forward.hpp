#pragma once

#include "lvinv/model.hpp"
#include "lvinv/spectral.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lvinv::forward {

using spectral::Grid1D;
using spectral::SpaceField;
using spectral::SpaceTimeField;

enum class Scheme { backward_euler_imex, crank_nicolson_imex };

std::string_view to_string(Scheme scheme);
Scheme scheme_from_string(std::string_view name);

struct SolverConfig {
    Scheme scheme = Scheme::backward_euler_imex;
    int steps = 2000;
    bool positivity_clip = false;
};

/// Reaction at time level n: writes R_u, R_v for the state (u, v).
using ReactionFn = std::function<void(int n, std::span<const double> u, std::span<const double> v,
                                      std::span<double> ru, std::span<double> rv)>;

/// Upper bound on the Lipschitz constant of the reaction near the state (u, v).
using LipschitzFn = std::function<double(int n, std::span<const double> u, std::span<const double> v)>;

/// Two-component IMEX integrator with implicit Neumann diffusion.
///
/// backward_euler_imex: theta = 1, explicit Euler reaction.
/// crank_nicolson_imex: theta = 1/2, Adams-Bashforth 2 reaction with an Euler
/// first step.
class ImexIntegrator {
public:
    ImexIntegrator(Grid1D grid, double d1, double d2, double T, SolverConfig config);

    const Grid1D& grid() const noexcept { return grid_; }
    double final_time() const noexcept { return T_; }
    const SolverConfig& config() const noexcept { return config_; }
    double dt() const noexcept { return T_ / config_.steps; }

    struct Result {
        SpaceTimeField u;
        SpaceTimeField v;
        double min_value;
    };

    Result run(const SpaceField& u_init, const SpaceField& v_init, const ReactionFn& reaction,
               const LipschitzFn& lipschitz = {}) const;

private:
    struct Factored {
        double r = 0.0;
        std::vector<double> upper;
        std::vector<double> inv_pivot;
    };

    Factored factor(double d) const;
    void diffuse(const Factored& fac, std::span<const double> prev, std::span<const double> react,
                 std::span<double> next, std::vector<double>& work) const;

    Grid1D grid_;
    double d1_;
    double d2_;
    double T_;
    SolverConfig config_;
    double theta_;
};

struct NegativeStateWarning {
    double min_value = 0.0;
};

struct ForwardSolution {
    SpaceTimeField u;
    SpaceTimeField v;
    std::optional<NegativeStateWarning> warning;
};

/// Throws NegativeData for negative initial data, NonFiniteState on blow-up or
/// when the reaction Lipschitz estimate exceeds 2/dt.
ForwardSolution solve_forward(const model::ModelPreset& preset, const Grid1D& grid, const SpaceField& f,
                              const SpaceField& g, double T, const SolverConfig& config);

/// Boundary traces and terminal snapshots of a solution pair.
struct MeasurementRecord {
    double epsilon = 0.0;
    double length = 0.0;
    int cells = 0;
    double final_time = 0.0;
    std::vector<double> times;
    std::vector<double> u_left, u_right;
    std::vector<double> v_left, v_right;
    SpaceField terminal_u;
    SpaceField terminal_v;

    Grid1D grid() const { return Grid1D(length, cells); }
    int steps() const noexcept { return static_cast<int>(times.size()) - 1; }
};

MeasurementRecord measure(const SpaceTimeField& u, const SpaceTimeField& v, double epsilon);

/// Sup-norm over all traces and both terminal snapshots.
double measurement_distance(const MeasurementRecord& a, const MeasurementRecord& b);
double measurement_norm(const MeasurementRecord& m);

/// Long format: kind,epsilon,t,x,u,v with kind in {boundary, terminal}.
void write_measurement_csv(const MeasurementRecord& m, std::ostream& os);
MeasurementRecord read_measurement_csv(std::istream& is);

/// Linear problem w_t = d w_xx + c w on (0, L) with Neumann data.
struct ProbeProblem {
    double L = 1.0;
    double T = 1.0;
    double d = 0.1;
    double c = 0.5;
};

struct ProbeLevels {
    std::vector<int> steps{1024, 2048, 4096};
    int steps_cells = 512;
    std::vector<int> cells{128, 256, 512};
    int cells_steps = 4096;
};

struct ProbeResult {
    std::vector<double> temporal_diffs;
    std::vector<double> spatial_diffs;
    double temporal_order = 0.0;
    double spatial_order = 0.0;
};

/// Observed orders from successive self-differences. Throws InvalidParam for
/// fewer than three levels or levels that are not successive doublings.
ProbeResult convergence_probe(const ProbeProblem& problem, Scheme scheme, const ProbeLevels& levels = {});

}  // namespace lvinv::forward
