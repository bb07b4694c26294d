#pragma once

#include "lvinv/error.hpp"
#include "lvinv/forward.hpp"
#include "lvinv/model.hpp"
#include "lvinv/recovery.hpp"
#include "lvinv/spectral.hpp"
#include "lvinv/variation.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lvinv::harness {

namespace fs = std::filesystem;

/// constant + sum amp * phi_k (or phi_k shifted to be nonnegative), optionally
/// rescaled to unit sup norm.
struct FieldSpec {
    double constant = 0.0;
    std::vector<std::pair<int, double>> modes;
    bool shift_nonnegative = true;
    bool normalize = true;
};

spectral::SpaceField build_field(const spectral::Grid1D& grid, const FieldSpec& spec);

struct ExperimentConfig {
    std::vector<FieldSpec> f;  ///< f_1, f_2, ...
    std::vector<FieldSpec> g;
};

struct ModelSection {
    model::PresetKind kind = model::PresetKind::bazykin;
    std::map<std::string, double> params;
    model::Diffusion diffusion;
    model::BasePoint base;
    std::vector<model::Monomial> F;  ///< custom models only
    std::vector<model::Monomial> G;
};

struct GridSection {
    double L = 6.283185307179586;
    int N = 256;
};

struct SolverSection {
    double T = 1.0;
    forward::SolverConfig config;
};

struct DesignSection {
    bool use_default = true;
    std::vector<ExperimentConfig> experiments;
    std::vector<int> modes{0, 1, 2, 3, 4};
    /// Relative amplitude of seeded random jitter applied to mode amplitudes.
    double perturbation = 0.0;
};

struct RecoverySection {
    int max_order = 2;
    /// Highest order max_order may reach. Raising it above the default only
    /// warns: finite-difference noise grows like eps^-k times the solver error.
    int order_cap = variation::kDefaultOrderCap;
    std::vector<double> ladder{1e-2, 2e-2, 4e-2};
    int richardson_levels = 1;
    recovery::Weighting weighting = recovery::Weighting::scheme;
    /// Declares F10 from the model instead of requiring it to vanish.
    bool relaxed = false;
    /// Known G01; skips first-order recovery.
    std::optional<double> declared_G01;
    double tikhonov = 0.0;
    /// Bound on |estimate - truth| / max(|truth|, 1).
    double tolerance = 5e-2;
    bool compare_truth = true;
    bool structural_fit = false;
    /// Relative parameter error allowed by the structural fit.
    double fit_tolerance = 5e-2;
};

struct VariationSection {
    int check_orders = 0;
    std::vector<double> tolerance{1e-3, 1e-3, 1e-2};
};

struct OutputSection {
    fs::path dir = "out";
    int time_stride = 50;
};

struct RunConfig {
    ModelSection model;
    GridSection grid;
    SolverSection solver;
    DesignSection design;
    RecoverySection recovery;
    VariationSection variation;
    OutputSection output;
    std::uint64_t seed = 0;
};

/// Parses a YAML document. Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& text);

/// Reads `path`; LVINV_OUT_DIR, when set, replaces output.dir.
RunConfig load_config(const fs::path& path);

/// Pieces of a run that every subcommand needs.
struct Setup {
    model::ModelPreset model;
    spectral::Grid1D grid;
    recovery::ExperimentDesign design;
    std::vector<double> epsilons;  ///< ladder with Richardson levels
    std::vector<std::string> warnings;
};

/// Builds and validates model, grid, design and ladder before any solve.
/// Errors carry the stage "config" or "variation/assemble_initial". Without
/// `recovery_checks` the first-order coupling and F10 rules are skipped.
Setup prepare(const RunConfig& config, bool recovery_checks = true);

struct AgreementEntry {
    int experiment = 0;
    int order = 0;
    char species = 'u';
    double rel_sup_diff = 0.0;
    double tolerance = 0.0;

    bool ok() const noexcept { return rel_sup_diff <= tolerance; }
};

struct PipelineResult {
    int exit_code = 0;
    std::optional<recovery::RecoveryReport> report;
    std::vector<AgreementEntry> agreement;
    std::optional<recovery::StructuralFit> fit;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
    std::vector<fs::path> artifacts;
};

/// Synthetic truth, measurements, variation check, recovery and reports.
/// Module errors propagate with their stage set; tolerance misses give exit
/// code 4.
PipelineResult run_pipeline(const RunConfig& config);

/// 0 success, 2 validation failure, 3 numerical failure.
int exit_code_for(ErrorKind kind);

/// Copy of the time levels 0, stride, 2 stride, ... T. The stride is lowered
/// to the nearest divisor of the step count.
spectral::SpaceTimeField subsample(const spectral::SpaceTimeField& field, int stride);

struct NamedField {
    std::string series;
    const spectral::SpaceTimeField* field = nullptr;
};

/// fields_long.csv (x,t,value,series) when `fields` is nonempty and
/// recovery_plot.csv (order,coeff,estimate,truth,error) when `report` is set.
std::vector<fs::path> emit_plot_data(const std::vector<NamedField>& fields,
                                     const recovery::RecoveryReport* report, const fs::path& dir);

/// Writes each measurement record as dir/exp<e>_eps<j>.csv.
std::vector<fs::path> write_measurements(const std::vector<std::vector<forward::MeasurementRecord>>& records,
                                         const fs::path& dir);

/// Reads the layout written by write_measurements.
std::vector<std::vector<forward::MeasurementRecord>> read_measurements(const fs::path& dir, std::size_t experiments,
                                                                       std::size_t ladder);

}  // namespace lvinv::harness
