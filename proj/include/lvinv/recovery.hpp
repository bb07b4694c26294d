#pragma once

#include "lvinv/forward.hpp"
#include "lvinv/model.hpp"
#include "lvinv/spectral.hpp"
#include "lvinv/variation.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lvinv::recovery {

using forward::MeasurementRecord;
using forward::SolverConfig;
using model::BasePoint;
using model::Diffusion;
using model::MultiIndex;
using model::TaylorTable;
using spectral::EigenMode;
using spectral::Grid1D;
using spectral::SpaceField;
using spectral::SpaceTimeField;
using variation::VariationStack;

/// How the adjoint test function is discretised in the projection identities.
/// `scheme` propagates the adjoint of the time stepper itself, which makes the
/// identity exact for solver output; `continuous` samples
/// e^{(d mu - c) t} phi and integrates with the trapezoid rule.
enum class Weighting { scheme, continuous };

std::string_view to_string(Weighting w);
Weighting weighting_from_string(std::string_view name);

/// terminal * <w_T, phi> - initial * <w_0, phi> - sum_n source[n] <S(t_n), phi> = 0
struct IdentityWeights {
    double terminal = 1.0;
    double initial = 1.0;
    std::vector<double> source;
};

IdentityWeights continuous_weights(const EigenMode& mode, double d, double c, double T, int steps);

/// Uses the discrete eigenvalue of the stencil, for which phi is an exact
/// eigenvector.
IdentityWeights scheme_weights(const EigenMode& mode, double d, double c, double T, const SolverConfig& config);

IdentityWeights identity_weights(Weighting weighting, const EigenMode& mode, double d, double c, double T,
                                 const SolverConfig& config);

/// Residual of the projected Duhamel identity for w_t - d w_xx - c w = S with
/// the continuous adjoint e^{(d mu - c) t} phi. Throws GridMismatch.
double duhamel_projection(const Grid1D& grid, const SpaceField& w_T, const SpaceField& w_0, const SpaceTimeField& S,
                          const EigenMode& mode, double d, double c, double T);
double duhamel_projection(const Grid1D& grid, const SpaceField& w_T, const SpaceField& w_0, const SpaceTimeField& S,
                          const EigenMode& mode, const IdentityWeights& weights);

/// Per-experiment first-order data: the initial perturbation and the
/// epsilon-derivative of the terminal snapshot.
struct FirstOrderSample {
    SpaceField initial;
    SpaceField terminal;
};

struct FirstOrderResult {
    double estimate = 0.0;
    std::vector<double> per_mode;
    double spread = 0.0;
};

/// Rate c of w_t - d w_xx = c w from each (sample, mode) pair with nonzero
/// projections, averaged. Throws SignLoss or DegenerateData.
FirstOrderResult recover_first_order(const std::vector<FirstOrderSample>& samples, const std::vector<int>& modes,
                                     double d, const Grid1D& grid, double T, Weighting weighting,
                                     const SolverConfig& config = {});

/// Inputs for one experiment at order k.
struct OrderKExperiment {
    VariationStack lower;  ///< known orders 1..k-1
    SpaceField fk;         ///< f_k of the data family
    SpaceField gk;
    SpaceField uk_terminal;  ///< measured u^(k)(., T)
    SpaceField vk_terminal;
};

struct RecoveryOptions {
    Weighting weighting = Weighting::scheme;
    SolverConfig solver;
    std::vector<int> modes{0, 1, 2, 3, 4};
    double tikhonov = 0.0;
    double rank_tol = 1e-10;
};

/// One least-squares system per species; column i belongs to unknowns[i].
struct OrderKSystem {
    int order = 0;
    std::vector<MultiIndex> unknowns;
    Eigen::MatrixXd A_F, A_G;
    Eigen::VectorXd b_F, b_G;
};

/// Throws UnsupportedCoupling when F01 or G10 of the known first-order table is
/// nonzero, MissingLowerOrder for incomplete stacks.
OrderKSystem assemble_order_k(int k, const std::vector<OrderKExperiment>& experiments, const TaylorTable& knownF,
                              const TaylorTable& knownG, Diffusion diffusion, const Grid1D& grid, double T,
                              const RecoveryOptions& options);

struct LeastSquaresSolution {
    Eigen::VectorXd x;
    double residual = 0.0;  ///< ||A x - b|| / ||b||
    double condition = 0.0;  ///< of the row- and column-equilibrated matrix
    std::vector<int> unidentifiable;
};

/// Column-pivoted QR after row and column equilibration. Unknowns with a
/// component in the numerical null space are listed as unidentifiable.
LeastSquaresSolution solve_least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tikhonov,
                                         double rank_tol);

struct CoefficientEstimate {
    char target = 'F';
    int m = 0;
    int n = 0;
    double estimate = 0.0;
};

struct OrderKResult {
    int order = 0;
    std::vector<CoefficientEstimate> coefficients;
    double residual_F = 0.0;
    double residual_G = 0.0;
    double cond_F = 0.0;
    double cond_G = 0.0;
};

/// Throws RankDeficient naming every unidentifiable coefficient (e.g. "F11").
OrderKResult recover_order_k(int k, const std::vector<OrderKExperiment>& experiments, const TaylorTable& knownF,
                             const TaylorTable& knownG, Diffusion diffusion, const Grid1D& grid, double T,
                             const RecoveryOptions& options);

/// Data perturbations of one experiment.
struct ExperimentSpec {
    std::vector<SpaceField> f;
    std::vector<SpaceField> g;
};

struct ExperimentDesign {
    std::vector<ExperimentSpec> experiments;
    std::vector<int> modes{0, 1, 2, 3, 4};
    std::vector<double> epsilons;
};

/// phi_k shifted by max|phi_k| so it is nonnegative.
SpaceField shifted_mode(const Grid1D& grid, int k);

/// (1, phi_0), (phi_1+, phi_0 + 0.5 phi_3+), (1 + phi_2+, phi_1+) on modes 0..4,
/// each field scaled to unit sup norm.
ExperimentDesign default_design(const Grid1D& grid, std::vector<double> epsilons);

variation::EpsilonFamily family_for(const ExperimentSpec& spec, BasePoint base, const std::vector<double>& epsilons);

/// Measurement records of every experiment over the epsilon ladder, produced by
/// forward solves of `truth`.
std::vector<std::vector<MeasurementRecord>> generate_measurements(const model::ModelPreset& truth, BasePoint base,
                                                                  const ExperimentDesign& design, const Grid1D& grid,
                                                                  double T, const SolverConfig& config);

struct ReportEntry {
    int order = 0;
    char target = 'F';
    int m = 0;
    int n = 0;
    double estimate = 0.0;
    std::optional<double> truth;
    double residual = 0.0;
    std::optional<double> cond;
};

struct RecoveryReport {
    int max_order = 0;
    TaylorTable F;
    TaylorTable G;
    std::vector<ReportEntry> entries;

    /// Fills the truth column from exact tables.
    void attach_truth(const TaylorTable& trueF, const TaylorTable& trueG);

    /// Largest |estimate - truth| / max(|truth|, 1) over entries with truth.
    double max_scaled_error() const;

    /// Columns: order,target,m,n,estimate,truth,abs_error,residual,cond.
    void write_csv(std::ostream& os) const;
    std::string summary() const;
};

/// What the inversion is told besides the measurements.
struct PriorKnowledge {
    BasePoint base;
    Diffusion diffusion;
    /// Declared first-order coefficients of F (relaxed mode); zero under the
    /// strict admissible classes.
    double F10 = 0.0;
    double F01 = 0.0;
    /// When set, G01 is taken as known and first-order recovery is skipped.
    std::optional<double> G01;
};

/// Order-by-order recovery consuming only measurement records and the design.
RecoveryReport recover_from_measurements(const std::vector<std::vector<MeasurementRecord>>& measurements,
                                         const ExperimentDesign& design, const PriorKnowledge& prior, int max_order,
                                         const RecoveryOptions& options);

struct FalsificationResult {
    double distance = 0.0;
    double noise_floor = 0.0;
};

/// Sup over experiments of the measurement distance between the two models at
/// a single epsilon, and the identical-configuration noise floor.
FalsificationResult falsify_uniqueness(const model::ModelPreset& a, const model::ModelPreset& b, BasePoint base,
                                       const ExperimentDesign& design, double eps, const Grid1D& grid, double T,
                                       const SolverConfig& config);

struct StructuralFit {
    std::map<std::string, double> params;
    double residual = 0.0;
};

/// Parameters of a preset family from recovered tables. `uncertainty` is the
/// relative accuracy of the tables; InconsistentTable is raised when the fit
/// residual exceeds ten times max(uncertainty, 1e-9).
StructuralFit fit_structural_params(model::PresetKind kind, const TaylorTable& F, const TaylorTable& G,
                                    double uncertainty = 0.0);

}  // namespace lvinv::recovery
