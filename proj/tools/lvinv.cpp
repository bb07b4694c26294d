// lvinv: forward simulation, variation extraction and coefficient recovery
// for predator-prey reaction-diffusion systems.

#include "lvinv/harness.hpp"
#include "lvinv/io.hpp"
#include "lvinv/variation.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace lvinv;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
};

struct ModelFlags {
    std::string model;
    std::string params;
    std::optional<double> L, T;
    std::optional<int> N, steps;
    std::string scheme;
};

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, sep)) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_list(const std::string& text, std::string_view what) {
    std::vector<double> out;
    for (const auto& s : split(text, ',')) out.push_back(io::parse_number(s, what));
    return out;
}

harness::RunConfig base_config(const CommonFlags& common) {
    harness::RunConfig cfg;
    if (!common.config.empty()) cfg = harness::load_config(common.config);
    else if (const char* dir = std::getenv("LVINV_OUT_DIR"); dir != nullptr && *dir != '\0') cfg.output.dir = dir;
    if (!common.out.empty()) cfg.output.dir = common.out;
    return cfg;
}

void apply(const ModelFlags& flags, harness::RunConfig& cfg) {
    try {
        if (!flags.model.empty()) {
            const auto kind = model::preset_kind_from_string(flags.model);
            if (kind != cfg.model.kind) cfg.model.params.clear();
            cfg.model.kind = kind;
        }
        for (const auto& kv : split(flags.params, ',')) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) fail(ErrorKind::ConfigError, "--params expects name=value pairs");
            cfg.model.params[kv.substr(0, eq)] = io::parse_number(kv.substr(eq + 1), "--params");
        }
        if (!flags.scheme.empty()) cfg.solver.config.scheme = forward::scheme_from_string(flags.scheme);
    } catch (Error& e) {
        e.set_stage("config");
        throw;
    }
    if (flags.L) cfg.grid.L = *flags.L;
    if (flags.N) cfg.grid.N = *flags.N;
    if (flags.T) cfg.solver.T = *flags.T;
    if (flags.steps) cfg.solver.config.steps = *flags.steps;
}

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_option("--model", flags.model, "hydra, holling_tanner, bazykin or custom");
    cmd->add_option("--params", flags.params, "comma-separated name=value overrides");
    cmd->add_option("--L", flags.L, "domain length");
    cmd->add_option("--N", flags.N, "grid cells");
    cmd->add_option("--T", flags.T, "final time");
    cmd->add_option("--steps", flags.steps, "time steps");
    cmd->add_option("--scheme", flags.scheme, "backward_euler_imex or crank_nicolson_imex");
}

void add_common(CLI::App* cmd, CommonFlags& common, bool config_required) {
    auto* opt = cmd->add_option("--config", common.config, "YAML run configuration");
    if (config_required) opt->required();
    cmd->add_option("--out", common.out, "output directory");
}

std::ofstream open(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
    return os;
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int run_forward(const CommonFlags& common, const ModelFlags& mf, std::optional<double> eps_flag, int experiment) {
    auto cfg = base_config(common);
    apply(mf, cfg);
    const auto setup = harness::prepare(cfg, false);
    print_warnings(setup.warnings);
    if (experiment < 0 || static_cast<std::size_t>(experiment) >= setup.design.experiments.size()) {
        fail(ErrorKind::InvalidParam, "--experiment out of range");
    }
    const double eps = eps_flag.value_or(setup.epsilons.back());
    const auto family = recovery::family_for(setup.design.experiments[static_cast<std::size_t>(experiment)],
                                             cfg.model.base, {eps});
    const auto [f, g] = variation::assemble_initial(family, eps);
    const auto sol = forward::solve_forward(setup.model, setup.grid, f, g, cfg.solver.T, cfg.solver.config);
    fs::create_directories(cfg.output.dir);
    const auto u = harness::subsample(sol.u, cfg.output.time_stride);
    const auto v = harness::subsample(sol.v, cfg.output.time_stride);
    {
        auto os = open(cfg.output.dir / "u.csv");
        spectral::write_csv(u, os);
    }
    {
        auto os = open(cfg.output.dir / "v.csv");
        spectral::write_csv(v, os);
    }
    {
        auto os = open(cfg.output.dir / "measurement.csv");
        forward::write_measurement_csv(forward::measure(sol.u, sol.v, eps), os);
    }
    harness::emit_plot_data({{"u", &u}, {"v", &v}}, nullptr, cfg.output.dir);
    std::cout << "forward " << model::to_string(setup.model.kind) << " eps = " << eps << ", T = " << cfg.solver.T
              << ", steps = " << cfg.solver.config.steps << "\n";
    std::cout << "min u = " << *std::min_element(sol.u.values().begin(), sol.u.values().end())
              << ", min v = " << *std::min_element(sol.v.values().begin(), sol.v.values().end()) << "\n";
    if (sol.warning) std::cout << "warning: negative state " << sol.warning->min_value << "\n";
    std::cout << "wrote " << cfg.output.dir.string() << "\n";
    return 0;
}

int run_variation(const CommonFlags& common, const ModelFlags& mf, std::optional<int> order,
                  std::optional<double> eps, const std::string& ladder, std::optional<int> richardson,
                  const std::string& mode) {
    auto cfg = base_config(common);
    apply(mf, cfg);
    if (!ladder.empty()) cfg.recovery.ladder = parse_list(ladder, "--ladder");
    else if (eps) cfg.recovery.ladder = variation::geometric_ladder(*eps, 3);
    if (richardson) cfg.recovery.richardson_levels = *richardson;
    const int K = order.value_or(std::max(cfg.variation.check_orders, cfg.recovery.max_order));
    cfg.recovery.max_order = K;
    if (mode != "fd" && mode != "direct" && mode != "both") fail(ErrorKind::ConfigError, "--mode must be fd, direct or both");
    if (mode == "both" && static_cast<std::size_t>(K) > cfg.variation.tolerance.size()) {
        fail(ErrorKind::ConfigError, "variation.tolerance needs one entry per order");
    }
    const auto setup = harness::prepare(cfg, false);
    print_warnings(setup.warnings);
    const auto& base = cfg.model.base;
    const auto TF = model::taylor_at(setup.model.F, base, K);
    const auto TG = model::taylor_at(setup.model.G, base, K);
    fs::create_directories(cfg.output.dir);

    std::vector<spectral::SpaceTimeField> keep;
    std::vector<std::string> names;
    std::ofstream agreement;
    if (mode == "both") {
        agreement = open(cfg.output.dir / "variation_agreement.csv");
        agreement << "experiment,order,species,rel_sup_diff,tolerance,pass\n";
    }
    bool ok = true;
    for (std::size_t e = 0; e < setup.design.experiments.size(); ++e) {
        const auto family = recovery::family_for(setup.design.experiments[e], base, setup.epsilons);
        std::optional<variation::VariationStack> fd, direct;
        if (mode != "direct") {
            const auto lad = variation::solve_ladder(setup.model, setup.grid, family, cfg.solver.T, cfg.solver.config);
            fd = variation::fd_stack(lad, setup.epsilons, base, K);
        }
        if (mode != "fd") {
            direct = variation::direct_stack(K, TF, TG, family, setup.grid, cfg.solver.T, setup.model.diffusion,
                                             cfg.solver.config);
        }
        const auto& shown = fd ? *fd : *direct;
        for (int k = 1; k <= K; ++k) {
            for (char s : {'u', 'v'}) {
                keep.push_back(harness::subsample(s == 'u' ? shown.u(k) : shown.v(k), cfg.output.time_stride));
                names.push_back("exp" + std::to_string(e) + "_" + s + std::to_string(k));
                if (mode == "both") {
                    const auto& a = s == 'u' ? fd->u(k) : fd->v(k);
                    const auto& b = s == 'u' ? direct->u(k) : direct->v(k);
                    const double scale = spectral::sup_norm(b.values());
                    const double rel = spectral::sup_diff(a.values(), b.values()) / (scale > 0.0 ? scale : 1.0);
                    const double tol = cfg.variation.tolerance[static_cast<std::size_t>(k) - 1];
                    ok = ok && rel <= tol;
                    agreement << e << ',' << k << ',' << s << ',' << io::format_number(rel) << ','
                              << io::format_number(tol) << ',' << (rel <= tol ? "true" : "false") << '\n';
                    std::cout << "exp " << e << " order " << k << " " << s << ": fd vs direct " << rel
                              << (rel <= tol ? "" : "  FAIL") << "\n";
                }
            }
        }
    }
    std::vector<harness::NamedField> fields;
    for (std::size_t i = 0; i < keep.size(); ++i) fields.push_back({names[i], &keep[i]});
    harness::emit_plot_data(fields, nullptr, cfg.output.dir);
    std::cout << "wrote " << cfg.output.dir.string() << "\n";
    return ok ? 0 : 4;
}

int run_recover(const CommonFlags& common, std::optional<int> max_order, const std::string& eps_ladder,
                const std::string& truth, const std::string& report_path, const std::string& measurements) {
    auto cfg = base_config(common);
    if (max_order) cfg.recovery.max_order = *max_order;
    if (!eps_ladder.empty()) cfg.recovery.ladder = parse_list(eps_ladder, "--eps-ladder");
    const auto setup = harness::prepare(cfg);
    print_warnings(setup.warnings);
    const auto& base = cfg.model.base;

    std::vector<std::vector<forward::MeasurementRecord>> records;
    if (!measurements.empty()) {
        records = harness::read_measurements(measurements, setup.design.experiments.size(), setup.epsilons.size());
    } else {
        try {
            records = recovery::generate_measurements(setup.model, base, setup.design, setup.grid, cfg.solver.T,
                                                      cfg.solver.config);
        } catch (Error& e) {
            if (e.stage().empty()) e.set_stage("forward");
            throw;
        }
    }
    const auto firstF = model::taylor_at(setup.model.F, base, 1);
    recovery::PriorKnowledge prior{base, setup.model.diffusion, cfg.recovery.relaxed ? firstF(1, 0) : 0.0, 0.0,
                                   cfg.recovery.declared_G01};
    recovery::RecoveryOptions options;
    options.weighting = cfg.recovery.weighting;
    options.solver = cfg.solver.config;
    options.modes = cfg.design.modes;
    options.tikhonov = cfg.recovery.tikhonov;
    auto report = recovery::recover_from_measurements(records, setup.design, prior, cfg.recovery.max_order, options);

    int code = 0;
    if (!truth.empty()) {
        model::ModelPreset reference = setup.model;
        if (truth != "model") {
            const auto kind = model::preset_kind_from_string(truth);
            if (kind != setup.model.kind) {
                reference = model::preset(kind, {}, setup.model.diffusion);
            }
        }
        report.attach_truth(model::taylor_at(reference.F, base, cfg.recovery.max_order),
                            model::taylor_at(reference.G, base, cfg.recovery.max_order));
        if (report.max_scaled_error() > cfg.recovery.tolerance) code = 4;
    }
    const fs::path csv = report_path.empty() ? cfg.output.dir / "recovery_report.csv" : fs::path(report_path);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    {
        auto os = open(csv);
        report.write_csv(os);
    }
    fs::path txt = csv;
    txt.replace_extension(".txt");
    {
        auto os = open(txt);
        os << report.summary();
    }
    std::cout << report.summary();
    if (code == 4) std::cout << "max scaled error " << report.max_scaled_error() << " exceeds " << cfg.recovery.tolerance << "\n";
    std::cout << "wrote " << csv.string() << "\n";
    return code;
}

int run_pipeline_cmd(const CommonFlags& common) {
    const auto cfg = base_config(common);
    const auto result = harness::run_pipeline(cfg);
    print_warnings(result.warnings);
    if (result.report) std::cout << result.report->summary();
    for (const auto& a : result.agreement) {
        if (!a.ok()) std::cout << "variation exp " << a.experiment << " order " << a.order << " " << a.species
                               << " disagreement " << a.rel_sup_diff << "\n";
    }
    if (result.fit) {
        std::cout << "structural fit:";
        for (const auto& [name, value] : result.fit->params) std::cout << ' ' << name << " = " << value;
        std::cout << "\n";
    }
    for (const auto& f : result.failures) std::cout << "tolerance miss: " << f << "\n";
    std::cout << "wrote " << cfg.output.dir.string() << " (exit " << result.exit_code << ")\n";
    return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coefficient recovery for predator-prey reaction-diffusion systems"};
    app.require_subcommand(1);

    CommonFlags fwd_common, var_common, rec_common, pipe_common;
    ModelFlags fwd_model, var_model;

    auto* fwd = app.add_subcommand("forward", "solve one forward problem and write fields and measurements");
    add_common(fwd, fwd_common, false);
    add_model_flags(fwd, fwd_model);
    std::optional<double> fwd_eps;
    int fwd_experiment = 0;
    fwd->add_option("--eps", fwd_eps, "epsilon of the initial data (default: largest ladder entry)");
    fwd->add_option("--experiment", fwd_experiment, "design experiment supplying the initial data");

    auto* var = app.add_subcommand("variation", "extract variation fields by differencing and/or direct solves");
    add_common(var, var_common, false);
    add_model_flags(var, var_model);
    std::optional<int> var_order, var_richardson;
    std::optional<double> var_eps;
    std::string var_ladder, var_mode = "both";
    var->add_option("--order", var_order, "highest variation order");
    var->add_option("--eps", var_eps, "smallest epsilon of a doubling ladder of three");
    var->add_option("--ladder", var_ladder, "explicit comma-separated epsilon ladder");
    var->add_option("--richardson", var_richardson, "Richardson levels");
    var->add_option("--mode", var_mode, "fd, direct or both")->check(CLI::IsMember({"fd", "direct", "both"}));

    auto* rec = app.add_subcommand("recover", "recover Taylor coefficients from measurements");
    rec->add_option("--design,--config", rec_common.config, "YAML run configuration")->required();
    rec->add_option("--out", rec_common.out, "output directory");
    std::optional<int> rec_order;
    std::string rec_ladder, rec_truth, rec_report, rec_measurements;
    rec->add_option("--max-order", rec_order, "highest recovered order");
    rec->add_option("--eps-ladder", rec_ladder, "comma-separated epsilon ladder");
    rec->add_option("--truth", rec_truth, "'model' or a preset name to compare against");
    rec->add_option("--report", rec_report, "report CSV path; the summary goes next to it as .txt");
    rec->add_option("--measurements", rec_measurements, "directory of exp<e>_eps<j>.csv files");

    auto* pipe = app.add_subcommand("pipeline", "generate truth, recover and report");
    add_common(pipe, pipe_common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*fwd) return run_forward(fwd_common, fwd_model, fwd_eps, fwd_experiment);
        if (*var) return run_variation(var_common, var_model, var_order, var_eps, var_ladder, var_richardson, var_mode);
        if (*rec) return run_recover(rec_common, rec_order, rec_ladder, rec_truth, rec_report, rec_measurements);
        return run_pipeline_cmd(pipe_common);
    } catch (const Error& e) {
        std::cerr << "error";
        if (!e.stage().empty()) std::cerr << " [" << e.stage() << "]";
        std::cerr << " " << to_string(e.kind()) << ": " << e.what() << "\n";
        for (const auto& name : e.unidentifiable()) std::cerr << "  unidentifiable: " << name << "\n";
        return harness::exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error IoError: " << e.what() << "\n";
        return 2;
    }
}
