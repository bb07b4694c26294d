#include "lvinv/harness.hpp"

#include "lvinv/io.hpp"
#include "lvinv/variation.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace lvinv::harness {

namespace {

[[noreturn]] void config_error(const std::string& message) {
    Error err(ErrorKind::ConfigError, message);
    err.set_stage("config");
    throw err;
}

template <typename T>
T as(const YAML::Node& node, const std::string& path) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        config_error("'" + path + "' has the wrong type");
    }
}

template <typename T>
void read(const YAML::Node& parent, const std::string& key, const std::string& path, T& out) {
    if (const YAML::Node node = parent[key]) out = as<T>(node, path + key);
}

void allow_keys(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> keys) {
    if (!node.IsMap()) config_error("'" + (path.empty() ? std::string("<root>") : path) + "' must be a map");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.contains(key)) config_error("unknown key '" + path + key + "'");
    }
}

std::vector<model::Monomial> read_terms(const YAML::Node& node, const std::string& path) {
    if (!node.IsSequence()) config_error("'" + path + "' must be a list of [m, n, h, coeff]");
    std::vector<model::Monomial> out;
    for (std::size_t i = 0; i < node.size(); ++i) {
        const auto row = as<std::vector<double>>(node[i], path);
        if (row.size() != 4) config_error("'" + path + "' entries must be [m, n, h, coeff]");
        out.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), static_cast<int>(row[2]), row[3]});
    }
    return out;
}

FieldSpec read_field(const YAML::Node& node, const std::string& path) {
    FieldSpec spec;
    if (node.IsScalar()) {
        spec.constant = as<double>(node, path);
        spec.normalize = false;
        return spec;
    }
    allow_keys(node, path + ".", {"constant", "modes", "shift_nonnegative", "normalize"});
    read(node, "constant", path + ".", spec.constant);
    read(node, "shift_nonnegative", path + ".", spec.shift_nonnegative);
    read(node, "normalize", path + ".", spec.normalize);
    if (const YAML::Node modes = node["modes"]) {
        for (const auto& row : as<std::vector<std::vector<double>>>(modes, path + ".modes")) {
            if (row.size() != 2) config_error("'" + path + ".modes' entries must be [k, amplitude]");
            spec.modes.emplace_back(static_cast<int>(row[0]), row[1]);
        }
    }
    return spec;
}

std::vector<FieldSpec> read_fields(const YAML::Node& node, const std::string& path) {
    if (!node) return {};
    if (!node.IsSequence()) config_error("'" + path + "' must list one field per order");
    std::vector<FieldSpec> out;
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(read_field(node[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (Error& e) {
        if (e.stage().empty()) e.set_stage(stage);
        throw;
    }
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        Error err(ErrorKind::IoError, "cannot write " + path.string());
        err.set_stage("output");
        throw err;
    }
    return os;
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        Error err(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
        err.set_stage("output");
        throw err;
    }
}

}  // namespace

spectral::SpaceField build_field(const spectral::Grid1D& grid, const FieldSpec& spec) {
    spectral::SpaceField out(grid.size(), spec.constant);
    for (const auto& [k, amp] : spec.modes) {
        const auto phi = spec.shift_nonnegative ? recovery::shifted_mode(grid, k) : spectral::neumann_mode(grid, k).phi;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += amp * phi[i];
    }
    if (spec.normalize) {
        const double s = spectral::sup_norm(out);
        if (s > 0.0) {
            for (auto& x : out) x /= s;
        }
    }
    return out;
}

RunConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        config_error(std::string("malformed config: ") + e.what());
    }
    RunConfig cfg;
    if (root.IsNull()) return cfg;
    allow_keys(root, "", {"model", "grid", "solver", "design", "recovery", "variation", "output", "seed"});

    if (const YAML::Node m = root["model"]) {
        allow_keys(m, "model.", {"kind", "params", "diffusion", "base", "F", "G"});
        std::string kind = "bazykin";
        read(m, "kind", "model.", kind);
        try {
            cfg.model.kind = model::preset_kind_from_string(kind);
        } catch (const Error&) {
            config_error("unknown model.kind '" + kind + "'");
        }
        read(m, "params", "model.", cfg.model.params);
        if (const YAML::Node d = m["diffusion"]) {
            const auto v = as<std::vector<double>>(d, "model.diffusion");
            if (v.size() != 2) config_error("'model.diffusion' must be [d1, d2]");
            cfg.model.diffusion = {v[0], v[1]};
        }
        if (const YAML::Node b = m["base"]) {
            const auto v = as<std::vector<double>>(b, "model.base");
            if (v.size() != 2) config_error("'model.base' must be [u0, v0]");
            cfg.model.base = {v[0], v[1]};
        }
        if (const YAML::Node f = m["F"]) cfg.model.F = read_terms(f, "model.F");
        if (const YAML::Node g = m["G"]) cfg.model.G = read_terms(g, "model.G");
    }
    if (const YAML::Node g = root["grid"]) {
        allow_keys(g, "grid.", {"L", "N"});
        read(g, "L", "grid.", cfg.grid.L);
        read(g, "N", "grid.", cfg.grid.N);
    }
    if (const YAML::Node s = root["solver"]) {
        allow_keys(s, "solver.", {"T", "steps", "scheme", "positivity_clip"});
        read(s, "T", "solver.", cfg.solver.T);
        read(s, "steps", "solver.", cfg.solver.config.steps);
        read(s, "positivity_clip", "solver.", cfg.solver.config.positivity_clip);
        if (const YAML::Node sc = s["scheme"]) {
            try {
                cfg.solver.config.scheme = forward::scheme_from_string(as<std::string>(sc, "solver.scheme"));
            } catch (const Error& e) {
                config_error(e.what());
            }
        }
    }
    if (const YAML::Node d = root["design"]) {
        allow_keys(d, "design.", {"preset", "modes", "experiments", "perturbation"});
        std::string preset = "default";
        read(d, "preset", "design.", preset);
        read(d, "modes", "design.", cfg.design.modes);
        read(d, "perturbation", "design.", cfg.design.perturbation);
        if (const YAML::Node ex = d["experiments"]) {
            if (!ex.IsSequence()) config_error("'design.experiments' must be a list");
            for (std::size_t i = 0; i < ex.size(); ++i) {
                const std::string path = "design.experiments[" + std::to_string(i) + "]";
                allow_keys(ex[i], path + ".", {"f", "g"});
                cfg.design.experiments.push_back({read_fields(ex[i]["f"], path + ".f"), read_fields(ex[i]["g"], path + ".g")});
            }
            preset = "custom";
        }
        if (preset != "default" && preset != "custom") config_error("'design.preset' must be default or custom");
        cfg.design.use_default = preset == "default";
    }
    if (const YAML::Node r = root["recovery"]) {
        allow_keys(r, "recovery.", {"max_order", "ladder", "richardson_levels", "weighting", "relaxed", "tikhonov",
                                    "tolerance", "compare_truth", "structural_fit", "fit_tolerance",
                                    "declared_G01", "order_cap"});
        read(r, "max_order", "recovery.", cfg.recovery.max_order);
        read(r, "order_cap", "recovery.", cfg.recovery.order_cap);
        read(r, "ladder", "recovery.", cfg.recovery.ladder);
        read(r, "richardson_levels", "recovery.", cfg.recovery.richardson_levels);
        read(r, "relaxed", "recovery.", cfg.recovery.relaxed);
        read(r, "tikhonov", "recovery.", cfg.recovery.tikhonov);
        read(r, "tolerance", "recovery.", cfg.recovery.tolerance);
        read(r, "compare_truth", "recovery.", cfg.recovery.compare_truth);
        read(r, "structural_fit", "recovery.", cfg.recovery.structural_fit);
        read(r, "fit_tolerance", "recovery.", cfg.recovery.fit_tolerance);
        if (const YAML::Node g = r["declared_G01"]) cfg.recovery.declared_G01 = as<double>(g, "recovery.declared_G01");
        if (const YAML::Node w = r["weighting"]) {
            try {
                cfg.recovery.weighting = recovery::weighting_from_string(as<std::string>(w, "recovery.weighting"));
            } catch (const Error& e) {
                config_error(e.what());
            }
        }
    }
    if (const YAML::Node v = root["variation"]) {
        allow_keys(v, "variation.", {"check_orders", "tolerance"});
        read(v, "check_orders", "variation.", cfg.variation.check_orders);
        read(v, "tolerance", "variation.", cfg.variation.tolerance);
    }
    if (const YAML::Node o = root["output"]) {
        if (o.IsScalar()) {
            cfg.output.dir = as<std::string>(o, "output");
        } else {
            allow_keys(o, "output.", {"dir", "time_stride"});
            std::string dir = cfg.output.dir.string();
            read(o, "dir", "output.", dir);
            cfg.output.dir = dir;
            read(o, "time_stride", "output.", cfg.output.time_stride);
        }
    }
    read(root, "seed", "", cfg.seed);
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) {
        Error err(ErrorKind::IoError, "cannot read config " + path.string());
        err.set_stage("config");
        throw err;
    }
    std::ostringstream text;
    text << is.rdbuf();
    RunConfig cfg = parse_config(text.str());
    if (const char* dir = std::getenv("LVINV_OUT_DIR"); dir != nullptr && *dir != '\0') cfg.output.dir = dir;
    return cfg;
}

Setup prepare(const RunConfig& config, bool recovery_checks) {
    auto setup = staged("config", [&] {
        if (config.recovery.max_order < 1) config_error("recovery.max_order must be >= 1");
        if (config.recovery.order_cap < 1) config_error("recovery.order_cap must be >= 1");
        const int highest = std::max(config.recovery.max_order, config.variation.check_orders);
        if (highest > config.recovery.order_cap) {
            config_error("order " + std::to_string(highest) + " exceeds recovery.order_cap = " +
                         std::to_string(config.recovery.order_cap));
        }
        if (config.recovery.richardson_levels < 0) config_error("recovery.richardson_levels must be >= 0");
        if (!(config.recovery.tolerance > 0.0)) config_error("recovery.tolerance must be > 0");
        if (config.variation.check_orders < 0 ||
            static_cast<std::size_t>(config.variation.check_orders) > config.variation.tolerance.size()) {
            config_error("variation.tolerance needs one entry per checked order");
        }
        if (config.output.time_stride < 1) config_error("output.time_stride must be >= 1");
        if (!(config.solver.T > 0.0)) config_error("solver.T must be > 0");
        if (config.solver.config.steps < 1) config_error("solver.steps must be >= 1");
        if (config.design.modes.empty()) config_error("design.modes must not be empty");
        if (config.design.perturbation < 0.0) config_error("design.perturbation must be >= 0");

        const spectral::Grid1D grid(config.grid.L, config.grid.N);
        model::ModelPreset mdl;
        if (config.model.kind == model::PresetKind::custom) {
            mdl = model::custom_model(model::RationalTaylorTerm(config.model.F), model::RationalTaylorTerm(config.model.G),
                                      {config.model.base}, config.model.diffusion);
        } else {
            if (!config.model.F.empty() || !config.model.G.empty()) config_error("model.F and model.G are for custom models");
            mdl = model::preset(config.model.kind, config.model.params, config.model.diffusion);
            const auto& b = config.model.base;
            const bool known = std::any_of(mdl.base_solutions.begin(), mdl.base_solutions.end(), [&](const auto& s) {
                return std::abs(s.u0 - b.u0) <= 1e-12 && std::abs(s.v0 - b.v0) <= 1e-12;
            });
            if (!known) {
                std::ostringstream msg;
                msg << "model.base (" << b.u0 << ", " << b.v0 << ") is not a base solution of " << model::to_string(mdl.kind);
                config_error(msg.str());
            }
        }
        const auto TF = model::taylor_at(mdl.F, config.model.base, 1);
        const auto TG = model::taylor_at(mdl.G, config.model.base, 1);
        if (recovery_checks && (TF(0, 1) != 0.0 || TG(1, 0) != 0.0)) {
            fail(ErrorKind::UnsupportedCoupling, "recovery needs F01 = G10 = 0 at the base solution");
        }
        if (recovery_checks && !config.recovery.relaxed && TF(1, 0) != 0.0) {
            config_error("model has F10 = " + io::format_number(TF(1, 0)) +
                         " at the base; set recovery.relaxed: true to declare it");
        }

        const int max_mode = *std::max_element(config.design.modes.begin(), config.design.modes.end());
        if (*std::min_element(config.design.modes.begin(), config.design.modes.end()) < 0) {
            config_error("design.modes must be nonnegative");
        }
        spectral::neumann_eigenpairs(grid, max_mode);

        const auto epsilons = variation::with_richardson(config.recovery.ladder, config.recovery.richardson_levels);
        variation::fd_stencil(epsilons, std::max(config.recovery.max_order, config.variation.check_orders));

        recovery::ExperimentDesign design;
        if (config.design.use_default) {
            design = recovery::default_design(grid, epsilons);
        } else {
            if (config.design.experiments.empty()) config_error("design.experiments must not be empty");
            std::mt19937_64 rng(config.seed);
            std::uniform_real_distribution<double> jitter(-1.0, 1.0);
            auto perturbed = [&](FieldSpec spec) {
                if (config.design.perturbation > 0.0) {
                    for (auto& [k, amp] : spec.modes) amp *= 1.0 + config.design.perturbation * jitter(rng);
                }
                return build_field(grid, spec);
            };
            for (const auto& ex : config.design.experiments) {
                recovery::ExperimentSpec spec;
                for (const auto& f : ex.f) spec.f.push_back(perturbed(f));
                for (const auto& g : ex.g) spec.g.push_back(perturbed(g));
                design.experiments.push_back(std::move(spec));
            }
            design.epsilons = epsilons;
        }
        design.modes = config.design.modes;
        return Setup{std::move(mdl), grid, std::move(design), epsilons, {}};
    });
    if (config.recovery.order_cap > variation::kDefaultOrderCap) {
        setup.warnings.push_back("recovery.order_cap = " + std::to_string(config.recovery.order_cap) +
                                 " exceeds " + std::to_string(variation::kDefaultOrderCap) +
                                 "; finite-difference noise grows like eps^-k times the solver error");
    }

    staged("variation/assemble_initial", [&] {
        for (const auto& spec : setup.design.experiments) {
            const auto family = recovery::family_for(spec, config.model.base, setup.epsilons);
            variation::validate(family, setup.grid);
            for (double eps : setup.epsilons) variation::assemble_initial(family, eps);
        }
        return 0;
    });
    return setup;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidParam:
        case ErrorKind::TooManyModes:
        case ErrorKind::GridMismatch:
        case ErrorKind::NegativeData:
        case ErrorKind::UnsupportedCoupling:
        case ErrorKind::ConfigError:
        case ErrorKind::IoError:
            return 2;
        case ErrorKind::DenominatorZero:
        case ErrorKind::NonFiniteState:
        case ErrorKind::IllConditionedStencil:
        case ErrorKind::MissingLowerOrder:
        case ErrorKind::SignLoss:
        case ErrorKind::DegenerateData:
        case ErrorKind::RankDeficient:
        case ErrorKind::InconsistentTable:
            return 3;
    }
    return 3;
}

spectral::SpaceTimeField subsample(const spectral::SpaceTimeField& field, int stride) {
    stride = std::clamp(stride, 1, field.steps());
    while (field.steps() % stride != 0) --stride;
    spectral::SpaceTimeField out(field.grid(), field.final_time(), field.steps() / stride);
    for (int n = 0; n <= out.steps(); ++n) {
        const auto src = field.row(n * stride);
        std::copy(src.begin(), src.end(), out.row(n).begin());
    }
    return out;
}

std::vector<fs::path> emit_plot_data(const std::vector<NamedField>& fields, const recovery::RecoveryReport* report,
                                     const fs::path& dir) {
    using io::format_number;
    make_dir(dir);
    std::vector<fs::path> out;
    if (!fields.empty()) {
        const fs::path path = dir / "fields_long.csv";
        auto os = open_out(path);
        os << "x,t,value,series\n";
        for (const auto& nf : fields) {
            const auto& f = *nf.field;
            const auto nodes = f.grid().nodes();
            for (int n = 0; n <= f.steps(); ++n) {
                const std::string t = format_number(f.time(n));
                for (std::size_t i = 0; i < f.width(); ++i) {
                    os << format_number(nodes[i]) << ',' << t << ',' << format_number(f(n, i)) << ',' << nf.series << '\n';
                }
            }
        }
        out.push_back(path);
    }
    if (report != nullptr) {
        const fs::path path = dir / "recovery_plot.csv";
        auto os = open_out(path);
        os << "order,coeff,estimate,truth,error\n";
        for (const auto& e : report->entries) {
            os << e.order << ',' << e.target << e.m << e.n << ',' << format_number(e.estimate) << ',';
            if (e.truth) os << format_number(*e.truth) << ',' << format_number(std::abs(e.estimate - *e.truth));
            else os << ',';
            os << '\n';
        }
        out.push_back(path);
    }
    return out;
}

std::vector<fs::path> write_measurements(const std::vector<std::vector<forward::MeasurementRecord>>& records,
                                         const fs::path& dir) {
    make_dir(dir);
    std::vector<fs::path> out;
    for (std::size_t e = 0; e < records.size(); ++e) {
        for (std::size_t j = 0; j < records[e].size(); ++j) {
            const fs::path path = dir / ("exp" + std::to_string(e) + "_eps" + std::to_string(j) + ".csv");
            auto os = open_out(path);
            forward::write_measurement_csv(records[e][j], os);
            out.push_back(path);
        }
    }
    return out;
}

std::vector<std::vector<forward::MeasurementRecord>> read_measurements(const fs::path& dir, std::size_t experiments,
                                                                       std::size_t ladder) {
    std::vector<std::vector<forward::MeasurementRecord>> out(experiments);
    for (std::size_t e = 0; e < experiments; ++e) {
        for (std::size_t j = 0; j < ladder; ++j) {
            const fs::path path = dir / ("exp" + std::to_string(e) + "_eps" + std::to_string(j) + ".csv");
            std::ifstream is(path);
            if (!is) fail(ErrorKind::IoError, "missing measurement file " + path.string());
            out[e].push_back(forward::read_measurement_csv(is));
        }
    }
    return out;
}

PipelineResult run_pipeline(const RunConfig& config) {
    using io::format_number;
    const Setup setup = prepare(config);
    const auto& base = config.model.base;
    const auto& grid = setup.grid;
    const double T = config.solver.T;
    const auto& solver = config.solver.config;
    const fs::path& out_dir = config.output.dir;
    PipelineResult result;
    result.warnings = setup.warnings;

    make_dir(out_dir / "forward");
    const int check = config.variation.check_orders;
    model::TaylorTable checkF, checkG;
    if (check > 0) {
        checkF = model::taylor_at(setup.model.F, base, check);
        checkG = model::taylor_at(setup.model.G, base, check);
    }

    std::vector<std::vector<forward::MeasurementRecord>> measurements;
    std::vector<spectral::SpaceTimeField> plot_fields;
    for (std::size_t e = 0; e < setup.design.experiments.size(); ++e) {
        const auto family = recovery::family_for(setup.design.experiments[e], base, setup.epsilons);
        const auto ladder = staged("forward", [&] { return variation::solve_ladder(setup.model, grid, family, T, solver); });
        std::vector<forward::MeasurementRecord> records;
        for (std::size_t j = 0; j < ladder.size(); ++j) {
            records.push_back(forward::measure(ladder[j].u, ladder[j].v, setup.epsilons[j]));
        }
        measurements.push_back(std::move(records));

        const auto& top = ladder.back();
        for (const auto& [name, field] : {std::pair{"u", &top.u}, std::pair{"v", &top.v}}) {
            const auto coarse = subsample(*field, config.output.time_stride);
            const fs::path path = out_dir / "forward" / ("exp" + std::to_string(e) + "_" + name + ".csv");
            auto os = open_out(path);
            spectral::write_csv(coarse, os);
            result.artifacts.push_back(path);
            if (e == 0) plot_fields.push_back(coarse);
        }

        if (check > 0) {
            staged("variation/check", [&] {
                const auto fd = variation::fd_stack(ladder, setup.epsilons, base, check);
                const auto direct = variation::direct_stack(check, checkF, checkG, family, grid, T,
                                                            setup.model.diffusion, solver);
                for (int k = 1; k <= check; ++k) {
                    for (char species : {'u', 'v'}) {
                        const auto& a = species == 'u' ? fd.u(k) : fd.v(k);
                        const auto& b = species == 'u' ? direct.u(k) : direct.v(k);
                        const double scale = spectral::sup_norm(b.values());
                        const double diff = spectral::sup_diff(a.values(), b.values());
                        result.agreement.push_back({static_cast<int>(e), k, species,
                                                    scale > 0.0 ? diff / scale : diff,
                                                    config.variation.tolerance[static_cast<std::size_t>(k) - 1]});
                    }
                }
                return 0;
            });
        }
    }
    const auto mfiles = write_measurements(measurements, out_dir / "measurements");
    result.artifacts.insert(result.artifacts.end(), mfiles.begin(), mfiles.end());

    if (check > 0) {
        const fs::path path = out_dir / "variation_agreement.csv";
        auto os = open_out(path);
        os << "experiment,order,species,rel_sup_diff,tolerance,pass\n";
        for (const auto& a : result.agreement) {
            os << a.experiment << ',' << a.order << ',' << a.species << ',' << format_number(a.rel_sup_diff) << ','
               << format_number(a.tolerance) << ',' << (a.ok() ? "true" : "false") << '\n';
            if (!a.ok()) {
                result.failures.push_back("variation order " + std::to_string(a.order) + " experiment " +
                                          std::to_string(a.experiment) + " species " + a.species + ": " +
                                          format_number(a.rel_sup_diff) + " > " + format_number(a.tolerance));
            }
        }
        result.artifacts.push_back(path);
    }

    const auto firstF = model::taylor_at(setup.model.F, base, 1);
    recovery::PriorKnowledge prior{base, setup.model.diffusion, config.recovery.relaxed ? firstF(1, 0) : 0.0, 0.0,
                                   config.recovery.declared_G01};
    recovery::RecoveryOptions options;
    options.weighting = config.recovery.weighting;
    options.solver = solver;
    options.modes = config.design.modes;
    options.tikhonov = config.recovery.tikhonov;
    auto report = recovery::recover_from_measurements(measurements, setup.design, prior, config.recovery.max_order, options);

    if (config.recovery.compare_truth) {
        const int order = config.recovery.max_order;
        report.attach_truth(model::taylor_at(setup.model.F, base, order), model::taylor_at(setup.model.G, base, order));
        for (const auto& e : report.entries) {
            const double err = std::abs(e.estimate - *e.truth) / std::max(std::abs(*e.truth), 1.0);
            if (err > config.recovery.tolerance) {
                result.failures.push_back(std::string(1, e.target) + std::to_string(e.m) + std::to_string(e.n) +
                                          " scaled error " + format_number(err) + " > " +
                                          format_number(config.recovery.tolerance));
            }
        }
    }

    if (config.recovery.structural_fit) {
        result.fit = staged("recovery/fit", [&] {
            return recovery::fit_structural_params(setup.model.kind, report.F, report.G, config.recovery.tolerance);
        });
        if (config.recovery.compare_truth) {
            for (const auto& [name, value] : result.fit->params) {
                const double truth = setup.model.params.at(name);
                const double err = std::abs(value - truth) / std::max(std::abs(truth), 1.0);
                if (err > config.recovery.fit_tolerance) {
                    result.failures.push_back("parameter " + name + " relative error " + format_number(err) + " > " +
                                              format_number(config.recovery.fit_tolerance));
                }
            }
        }
    }

    {
        const fs::path path = out_dir / "recovery_report.csv";
        auto os = open_out(path);
        report.write_csv(os);
        result.artifacts.push_back(path);
    }
    std::vector<NamedField> named;
    for (std::size_t i = 0; i < plot_fields.size(); ++i) named.push_back({i == 0 ? "u" : "v", &plot_fields[i]});
    const auto plots = emit_plot_data(named, &report, out_dir);
    result.artifacts.insert(result.artifacts.end(), plots.begin(), plots.end());

    result.exit_code = result.failures.empty() ? 0 : 4;
    {
        const fs::path path = out_dir / "summary.txt";
        auto os = open_out(path);
        os << "model " << model::to_string(setup.model.kind) << " at (" << base.u0 << ", " << base.v0 << ")\n";
        os << "grid L = " << grid.length() << ", N = " << grid.cells() << "; T = " << T << ", steps = " << solver.steps
           << ", scheme " << forward::to_string(solver.scheme) << "\n";
        os << "epsilon ladder";
        for (double eps : setup.epsilons) os << ' ' << eps;
        os << "\n";
        for (const auto& a : result.agreement) {
            os << "variation exp " << a.experiment << " order " << a.order << " " << a.species << ": " << a.rel_sup_diff
               << (a.ok() ? "" : "  FAIL") << "\n";
        }
        os << report.summary();
        if (result.fit) {
            os << "structural fit (residual " << result.fit->residual << "):";
            for (const auto& [name, value] : result.fit->params) os << ' ' << name << " = " << value;
            os << "\n";
        }
        for (const auto& w : result.warnings) os << "warning: " << w << "\n";
        for (const auto& f : result.failures) os << "tolerance miss: " << f << "\n";
        os << "status " << (result.exit_code == 0 ? "ok" : "tolerance failure") << "\n";
        result.artifacts.push_back(path);
    }
    result.report = std::move(report);
    return result;
}

}  // namespace lvinv::harness
