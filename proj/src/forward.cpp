#include "lvinv/forward.hpp"

#include "lvinv/error.hpp"
#include "lvinv/io.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace lvinv::forward {

std::string_view to_string(Scheme scheme) {
    switch (scheme) {
        case Scheme::backward_euler_imex: return "backward_euler_imex";
        case Scheme::crank_nicolson_imex: return "crank_nicolson_imex";
    }
    return "unknown";
}

Scheme scheme_from_string(std::string_view name) {
    if (name == "backward_euler_imex") return Scheme::backward_euler_imex;
    if (name == "crank_nicolson_imex") return Scheme::crank_nicolson_imex;
    fail(ErrorKind::InvalidParam, "unknown scheme '" + std::string(name) +
                                      "' (expected backward_euler_imex or crank_nicolson_imex)");
}

ImexIntegrator::ImexIntegrator(Grid1D grid, double d1, double d2, double T, SolverConfig config)
    : grid_(std::move(grid)), d1_(d1), d2_(d2), T_(T), config_(config),
      theta_(config.scheme == Scheme::backward_euler_imex ? 1.0 : 0.5) {
    if (!(d1 > 0.0) || !(d2 > 0.0)) fail(ErrorKind::InvalidParam, "diffusion coefficients must be positive");
    if (!(T > 0.0) || !std::isfinite(T)) fail(ErrorKind::InvalidParam, "final time T must be positive");
    if (config.steps < 1) fail(ErrorKind::InvalidParam, "step count must be >= 1");
}

ImexIntegrator::Factored ImexIntegrator::factor(double d) const {
    const std::size_t n = grid_.size();
    Factored fac;
    fac.r = d * dt() / (grid_.dx() * grid_.dx());
    const double off = -theta_ * fac.r;
    const double diag = 1.0 + 2.0 * theta_ * fac.r;
    fac.upper.assign(n, 0.0);
    fac.inv_pivot.assign(n, 0.0);

    auto lower_of = [&](std::size_t i) { return i + 1 == n ? 2.0 * off : off; };
    auto upper_of = [&](std::size_t i) { return i == 0 ? 2.0 * off : off; };

    double pivot = diag;
    fac.inv_pivot[0] = 1.0 / pivot;
    fac.upper[0] = upper_of(0) / pivot;
    for (std::size_t i = 1; i < n; ++i) {
        pivot = diag - lower_of(i) * fac.upper[i - 1];
        fac.inv_pivot[i] = 1.0 / pivot;
        fac.upper[i] = i + 1 < n ? upper_of(i) / pivot : 0.0;
    }
    return fac;
}

void ImexIntegrator::diffuse(const Factored& fac, std::span<const double> prev, std::span<const double> react,
                             std::span<double> next, std::vector<double>& work) const {
    const std::size_t n = prev.size();
    const double ex = (1.0 - theta_) * fac.r;
    const double h = dt();
    work.resize(n);
    work[0] = prev[0] + ex * 2.0 * (prev[1] - prev[0]) + h * react[0];
    for (std::size_t i = 1; i + 1 < n; ++i) {
        work[i] = prev[i] + ex * (prev[i - 1] - 2.0 * prev[i] + prev[i + 1]) + h * react[i];
    }
    work[n - 1] = prev[n - 1] + ex * 2.0 * (prev[n - 2] - prev[n - 1]) + h * react[n - 1];

    const double off = -theta_ * fac.r;
    next[0] = work[0] * fac.inv_pivot[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double lower = i + 1 == n ? 2.0 * off : off;
        next[i] = (work[i] - lower * next[i - 1]) * fac.inv_pivot[i];
    }
    for (std::size_t i = n - 1; i-- > 0;) next[i] -= fac.upper[i] * next[i + 1];
}

ImexIntegrator::Result ImexIntegrator::run(const SpaceField& u_init, const SpaceField& v_init,
                                           const ReactionFn& reaction, const LipschitzFn& lipschitz) const {
    const std::size_t n = grid_.size();
    if (u_init.size() != n || v_init.size() != n) {
        fail(ErrorKind::GridMismatch, "initial data length does not match the grid");
    }
    const int steps = config_.steps;
    Result out{SpaceTimeField(grid_, T_, steps), SpaceTimeField(grid_, T_, steps),
               std::numeric_limits<double>::infinity()};
    std::copy(u_init.begin(), u_init.end(), out.u.row(0).begin());
    std::copy(v_init.begin(), v_init.end(), out.v.row(0).begin());
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(u_init[i]) || !std::isfinite(v_init[i])) {
            fail(ErrorKind::NonFiniteState, "initial data contains non-finite values");
        }
        out.min_value = std::min({out.min_value, u_init[i], v_init[i]});
    }

    const Factored fu = factor(d1_);
    const Factored fv = factor(d2_);
    const bool multistep = config_.scheme == Scheme::crank_nicolson_imex;
    const double limit = 2.0 / dt();

    std::vector<double> ru(n), rv(n), ru_prev(n), rv_prev(n), cu(n), cv(n), work;
    for (int step = 0; step < steps; ++step) {
        auto u = out.u.row(step);
        auto v = out.v.row(step);
        if (lipschitz) {
            const double lip = lipschitz(step, u, v);
            if (!(lip <= limit)) {
                std::ostringstream msg;
                msg << "explicit reaction Lipschitz estimate " << lip << " exceeds 2/dt = " << limit
                    << " at step " << step << "; increase the step count";
                fail(ErrorKind::NonFiniteState, msg.str());
            }
        }
        reaction(step, u, v, ru, rv);
        if (multistep && step > 0) {
            for (std::size_t i = 0; i < n; ++i) {
                cu[i] = 1.5 * ru[i] - 0.5 * ru_prev[i];
                cv[i] = 1.5 * rv[i] - 0.5 * rv_prev[i];
            }
        } else {
            cu = ru;
            cv = rv;
        }
        auto u_next = out.u.row(step + 1);
        auto v_next = out.v.row(step + 1);
        diffuse(fu, u, cu, u_next, work);
        diffuse(fv, v, cv, v_next, work);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(u_next[i]) || !std::isfinite(v_next[i])) {
                std::ostringstream msg;
                msg << "state became non-finite at step " << step + 1 << " (t = " << out.u.time(step + 1)
                    << "); the time step is likely too large";
                fail(ErrorKind::NonFiniteState, msg.str());
            }
            if (config_.positivity_clip) {
                u_next[i] = std::max(u_next[i], 0.0);
                v_next[i] = std::max(v_next[i], 0.0);
            }
            out.min_value = std::min({out.min_value, u_next[i], v_next[i]});
        }
        std::swap(ru, ru_prev);
        std::swap(rv, rv_prev);
    }
    return out;
}

ForwardSolution solve_forward(const model::ModelPreset& preset, const Grid1D& grid, const SpaceField& f,
                              const SpaceField& g, double T, const SolverConfig& config) {
    if (f.size() != grid.size() || g.size() != grid.size()) {
        fail(ErrorKind::GridMismatch, "initial data length does not match the grid");
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] < 0.0 || g[i] < 0.0) {
            fail(ErrorKind::NegativeData, "initial data must be nonnegative (node " + std::to_string(i) + ")");
        }
    }
    const ImexIntegrator integrator(grid, preset.diffusion.d1, preset.diffusion.d2, T, config);
    const auto& F = preset.F;
    const auto& G = preset.G;
    auto reaction = [&](int, std::span<const double> u, std::span<const double> v, std::span<double> ru,
                        std::span<double> rv) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            ru[i] = F(u[i], v[i]);
            rv[i] = G(u[i], v[i]);
        }
    };
    auto lipschitz = [&](int, std::span<const double> u, std::span<const double> v) {
        double lip = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const auto gf = F.gradient(u[i], v[i]);
            const auto gg = G.gradient(u[i], v[i]);
            lip = std::max({lip, std::abs(gf.du) + std::abs(gf.dv), std::abs(gg.du) + std::abs(gg.dv)});
        }
        return lip;
    };
    auto result = integrator.run(f, g, reaction, lipschitz);
    ForwardSolution out{std::move(result.u), std::move(result.v), std::nullopt};
    if (!config.positivity_clip && result.min_value < -1e-8) {
        out.warning = NegativeStateWarning{result.min_value};
    }
    return out;
}

MeasurementRecord measure(const SpaceTimeField& u, const SpaceTimeField& v, double epsilon) {
    if (!u.same_layout(v)) fail(ErrorKind::GridMismatch, "u and v live on different grids");
    if (epsilon < 0.0) fail(ErrorKind::InvalidParam, "epsilon tag must be nonnegative");
    MeasurementRecord m;
    m.epsilon = epsilon;
    m.length = u.grid().length();
    m.cells = u.grid().cells();
    m.final_time = u.final_time();
    const std::size_t last = u.width() - 1;
    for (int n = 0; n <= u.steps(); ++n) {
        m.times.push_back(u.time(n));
        m.u_left.push_back(u(n, 0));
        m.u_right.push_back(u(n, last));
        m.v_left.push_back(v(n, 0));
        m.v_right.push_back(v(n, last));
    }
    m.terminal_u.assign(u.terminal().begin(), u.terminal().end());
    m.terminal_v.assign(v.terminal().begin(), v.terminal().end());
    return m;
}

namespace {

void require_same_layout(const MeasurementRecord& a, const MeasurementRecord& b) {
    if (a.length != b.length || a.cells != b.cells || a.times.size() != b.times.size() ||
        a.final_time != b.final_time) {
        fail(ErrorKind::GridMismatch, "measurement records have different layouts");
    }
}

}  // namespace

double measurement_distance(const MeasurementRecord& a, const MeasurementRecord& b) {
    require_same_layout(a, b);
    using spectral::sup_diff;
    return std::max({sup_diff(a.u_left, b.u_left), sup_diff(a.u_right, b.u_right), sup_diff(a.v_left, b.v_left),
                     sup_diff(a.v_right, b.v_right), sup_diff(a.terminal_u, b.terminal_u),
                     sup_diff(a.terminal_v, b.terminal_v)});
}

double measurement_norm(const MeasurementRecord& m) {
    using spectral::sup_norm;
    return std::max({sup_norm(m.u_left), sup_norm(m.u_right), sup_norm(m.v_left), sup_norm(m.v_right),
                     sup_norm(m.terminal_u), sup_norm(m.terminal_v)});
}

void write_measurement_csv(const MeasurementRecord& m, std::ostream& os) {
    using io::format_number;
    const std::string eps = format_number(m.epsilon);
    const std::string x0 = format_number(0.0);
    const std::string xL = format_number(m.length);
    os << "kind,epsilon,t,x,u,v\n";
    for (std::size_t n = 0; n < m.times.size(); ++n) {
        const std::string t = format_number(m.times[n]);
        os << "boundary," << eps << ',' << t << ',' << x0 << ',' << format_number(m.u_left[n]) << ','
           << format_number(m.v_left[n]) << '\n';
        os << "boundary," << eps << ',' << t << ',' << xL << ',' << format_number(m.u_right[n]) << ','
           << format_number(m.v_right[n]) << '\n';
    }
    const Grid1D grid = m.grid();
    const auto x = grid.nodes();
    const std::string T = format_number(m.final_time);
    for (std::size_t i = 0; i < x.size(); ++i) {
        os << "terminal," << eps << ',' << T << ',' << format_number(x[i]) << ','
           << format_number(m.terminal_u[i]) << ',' << format_number(m.terminal_v[i]) << '\n';
    }
}

MeasurementRecord read_measurement_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || io::split_csv_line(line) !=
                                       std::vector<std::string>{"kind", "epsilon", "t", "x", "u", "v"}) {
        fail(ErrorKind::IoError, "measurement CSV must start with header kind,epsilon,t,x,u,v");
    }
    MeasurementRecord m;
    bool have_eps = false;
    double length = 0.0;
    bool left_next = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = io::split_csv_line(line);
        if (cells.size() != 6) fail(ErrorKind::IoError, "measurement CSV row must have 6 columns");
        const double eps = io::parse_number(cells[1], "measurement epsilon");
        if (have_eps && eps != m.epsilon) fail(ErrorKind::IoError, "measurement CSV mixes epsilon tags");
        m.epsilon = eps;
        have_eps = true;
        const double t = io::parse_number(cells[2], "measurement time");
        const double x = io::parse_number(cells[3], "measurement x");
        const double u = io::parse_number(cells[4], "measurement u");
        const double v = io::parse_number(cells[5], "measurement v");
        if (cells[0] == "boundary") {
            if (left_next) {
                m.times.push_back(t);
                m.u_left.push_back(u);
                m.v_left.push_back(v);
            } else {
                m.u_right.push_back(u);
                m.v_right.push_back(v);
            }
            left_next = !left_next;
        } else if (cells[0] == "terminal") {
            m.final_time = t;
            m.terminal_u.push_back(u);
            m.terminal_v.push_back(v);
            length = std::max(length, x);
        } else {
            fail(ErrorKind::IoError, "unknown measurement row kind '" + cells[0] + "'");
        }
    }
    if (m.times.size() < 2 || m.u_right.size() != m.times.size() || m.terminal_u.size() < 9) {
        fail(ErrorKind::IoError, "measurement CSV is incomplete");
    }
    m.length = length;
    m.cells = static_cast<int>(m.terminal_u.size()) - 1;
    return m;
}

namespace {

SpaceTimeField solve_probe(const ProbeProblem& p, Scheme scheme, int cells, int steps) {
    const Grid1D grid(p.L, cells);
    const ImexIntegrator integrator(grid, p.d, p.d, p.T, SolverConfig{scheme, steps, false});
    const double k = std::numbers::pi / p.L;
    const SpaceField f = spectral::sample(grid, [&](double x) {
        return 1.0 + std::cos(k * x) + 0.5 * std::cos(2.0 * k * x) + 0.25 * std::cos(5.0 * k * x);
    });
    const double c = p.c;
    auto reaction = [c](int, std::span<const double> u, std::span<const double> v, std::span<double> ru,
                        std::span<double> rv) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            ru[i] = c * u[i];
            rv[i] = c * v[i];
        }
    };
    return std::move(integrator.run(f, f, reaction).u);
}

double order_from(const std::vector<double>& diffs) {
    const std::size_t n = diffs.size();
    return std::log2(diffs[n - 2] / diffs[n - 1]);
}

void require_doubling(const std::vector<int>& levels, const char* what) {
    if (levels.size() < 3) fail(ErrorKind::InvalidParam, std::string(what) + " needs at least three levels");
    for (std::size_t j = 1; j < levels.size(); ++j) {
        if (levels[j] != 2 * levels[j - 1]) {
            fail(ErrorKind::InvalidParam, std::string(what) + " levels must double successively");
        }
    }
}

}  // namespace

ProbeResult convergence_probe(const ProbeProblem& problem, Scheme scheme, const ProbeLevels& levels) {
    require_doubling(levels.steps, "temporal refinement");
    require_doubling(levels.cells, "spatial refinement");
    ProbeResult out;

    std::vector<SpaceField> temporal;
    for (int steps : levels.steps) {
        const auto u = solve_probe(problem, scheme, levels.steps_cells, steps);
        temporal.emplace_back(u.terminal().begin(), u.terminal().end());
    }
    for (std::size_t j = 0; j + 1 < temporal.size(); ++j) {
        out.temporal_diffs.push_back(spectral::sup_diff(temporal[j], temporal[j + 1]));
    }

    std::vector<SpaceField> spatial;
    for (int cells : levels.cells) {
        const auto u = solve_probe(problem, scheme, cells, levels.cells_steps);
        spatial.emplace_back(u.terminal().begin(), u.terminal().end());
    }
    for (std::size_t j = 0; j + 1 < spatial.size(); ++j) {
        const auto& coarse = spatial[j];
        const auto& fine = spatial[j + 1];
        double diff = 0.0;
        for (std::size_t i = 0; i < coarse.size(); ++i) diff = std::max(diff, std::abs(coarse[i] - fine[2 * i]));
        out.spatial_diffs.push_back(diff);
    }

    out.temporal_order = order_from(out.temporal_diffs);
    out.spatial_order = order_from(out.spatial_diffs);
    return out;
}

}  // namespace lvinv::forward
