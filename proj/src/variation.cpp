#include "lvinv/variation.hpp"

#include "lvinv/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <sstream>

namespace lvinv::variation {

namespace {

double factorial(int k) {
    double out = 1.0;
    for (int i = 2; i <= k; ++i) out *= i;
    return out;
}

void require_size(const SpaceField& field, std::size_t n, const char* what) {
    if (field.size() != n) fail(ErrorKind::GridMismatch, std::string(what) + " length does not match the grid");
}

}  // namespace

SpaceField family_term(const std::vector<SpaceField>& terms, int k, std::size_t size) {
    if (k >= 1 && static_cast<std::size_t>(k) <= terms.size()) return terms[static_cast<std::size_t>(k) - 1];
    return SpaceField(size, 0.0);
}

std::pair<SpaceField, SpaceField> assemble_initial(const EpsilonFamily& family, double eps) {
    if (family.f.empty() && family.g.empty()) fail(ErrorKind::InvalidParam, "epsilon family has no terms");
    const std::size_t n = !family.f.empty() ? family.f.front().size() : family.g.front().size();
    SpaceField f(n, family.base.u0);
    SpaceField g(n, family.base.v0);
    double power = 1.0;
    const std::size_t orders = std::max(family.f.size(), family.g.size());
    for (std::size_t i = 0; i < orders; ++i) {
        power *= eps;
        if (i < family.f.size()) {
            require_size(family.f[i], n, "f_i");
            for (std::size_t j = 0; j < n; ++j) f[j] += power * family.f[i][j];
        }
        if (i < family.g.size()) {
            require_size(family.g[i], n, "g_i");
            for (std::size_t j = 0; j < n; ++j) g[j] += power * family.g[i][j];
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (f[j] < 0.0 || g[j] < 0.0) {
            std::ostringstream msg;
            msg << "assembled initial data is negative at node " << j << " for eps = " << eps
                << " (f = " << f[j] << ", g = " << g[j] << "); reduce eps";
            fail(ErrorKind::NegativeData, msg.str());
        }
    }
    return {std::move(f), std::move(g)};
}

void validate(const EpsilonFamily& family, const Grid1D& grid) {
    if (family.base.u0 < 0.0 || family.base.v0 < 0.0) fail(ErrorKind::InvalidParam, "base solution must be nonnegative");
    for (const auto& f : family.f) require_size(f, grid.size(), "f_i");
    for (const auto& g : family.g) require_size(g, grid.size(), "g_i");
    const SpaceField f1 = family_term(family.f, 1, grid.size());
    const SpaceField g1 = family_term(family.g, 1, grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (family.base.u0 == 0.0 && f1[j] < 0.0) {
            fail(ErrorKind::NegativeData, "f_1 must be nonnegative where u0 = 0 (node " + std::to_string(j) + ")");
        }
        if (family.base.v0 == 0.0 && g1[j] < 0.0) {
            fail(ErrorKind::NegativeData, "g_1 must be nonnegative where v0 = 0 (node " + std::to_string(j) + ")");
        }
    }
    if (family.epsilons.empty()) fail(ErrorKind::InvalidParam, "epsilon family lists no samples");
    for (double eps : family.epsilons) {
        if (!(eps > 0.0)) fail(ErrorKind::InvalidParam, "epsilon samples must be strictly positive");
        assemble_initial(family, eps);
    }
}

std::vector<double> geometric_ladder(double eps, int count) {
    if (!(eps > 0.0) || count < 1) fail(ErrorKind::InvalidParam, "ladder needs eps > 0 and count >= 1");
    std::vector<double> out;
    for (int j = 0; j < count; ++j) out.push_back(eps * std::ldexp(1.0, j));
    return out;
}

std::vector<double> with_richardson(std::vector<double> ladder, int levels) {
    if (ladder.empty()) fail(ErrorKind::InvalidParam, "empty epsilon ladder");
    if (levels < 0) fail(ErrorKind::InvalidParam, "Richardson levels must be >= 0");
    for (int j = 0; j < levels; ++j) {
        const double smallest = *std::min_element(ladder.begin(), ladder.end());
        ladder.insert(ladder.begin(), 0.5 * smallest);
    }
    return ladder;
}

FdStencil fd_stencil(const std::vector<double>& epsilons, int order) {
    const int M = static_cast<int>(epsilons.size());
    if (order < 1) fail(ErrorKind::InvalidParam, "derivative order must be >= 1");
    if (M < order) {
        fail(ErrorKind::InvalidParam, "order-" + std::to_string(order) + " extraction needs at least " +
                                          std::to_string(order) + " nonzero epsilon samples");
    }
    for (int i = 0; i < M; ++i) {
        if (!(epsilons[i] > 0.0)) fail(ErrorKind::InvalidParam, "epsilon samples must be strictly positive");
        for (int j = 0; j < i; ++j) {
            if (epsilons[i] == epsilons[j]) fail(ErrorKind::InvalidParam, "epsilon samples must be distinct");
        }
    }
    const double scale = *std::max_element(epsilons.begin(), epsilons.end());
    Eigen::MatrixXd V(M, M);
    for (int i = 0; i < M; ++i) {
        const double s = epsilons[i] / scale;
        double p = 1.0;
        for (int j = 0; j < M; ++j) {
            p *= s;
            V(i, j) = p;
        }
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(V);
    const auto& sv = svd.singularValues();
    FdStencil out;
    out.order = order;
    out.epsilons = epsilons;
    out.condition = sv(M - 1) > 0.0 ? sv(0) / sv(M - 1) : std::numeric_limits<double>::infinity();
    if (!(out.condition <= 1e12)) {
        std::ostringstream msg;
        msg << "epsilon stencil Vandermonde condition number " << out.condition << " exceeds 1e12";
        fail(ErrorKind::IllConditionedStencil, msg.str());
    }
    const Eigen::MatrixXd inv = V.fullPivLu().inverse();
    const double factor = factorial(order) / std::pow(scale, order);
    out.weights.resize(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) out.weights[static_cast<std::size_t>(i)] = factor * inv(order - 1, i);
    return out;
}

std::vector<double> apply_stencil(const FdStencil& stencil, const std::vector<std::span<const double>>& samples,
                                  double base) {
    if (samples.size() != stencil.weights.size()) {
        fail(ErrorKind::InvalidParam, "sample count does not match the stencil");
    }
    const std::size_t n = samples.front().size();
    std::vector<double> out(n, 0.0);
    for (std::size_t j = 0; j < samples.size(); ++j) {
        if (samples[j].size() != n) fail(ErrorKind::GridMismatch, "ladder samples have different sizes");
        const double w = stencil.weights[j];
        for (std::size_t i = 0; i < n; ++i) out[i] += w * (samples[j][i] - base);
    }
    return out;
}

SpaceTimeField extract_variation_fd(const std::vector<const SpaceTimeField*>& fields,
                                    const std::vector<double>& epsilons, double base, int order) {
    const FdStencil stencil = fd_stencil(epsilons, order);
    if (fields.size() != epsilons.size()) fail(ErrorKind::InvalidParam, "one field per epsilon required");
    std::vector<std::span<const double>> samples;
    for (const auto* field : fields) {
        if (!field->same_layout(*fields.front())) fail(ErrorKind::GridMismatch, "ladder fields differ in layout");
        samples.push_back(field->values());
    }
    const auto values = apply_stencil(stencil, samples, base);
    SpaceTimeField out(fields.front()->grid(), fields.front()->final_time(), fields.front()->steps());
    std::copy(values.begin(), values.end(), out.values().begin());
    return out;
}

MeasurementRecord extract_variation_fd(const std::vector<MeasurementRecord>& records, BasePoint base, int order) {
    if (records.empty()) fail(ErrorKind::InvalidParam, "no measurement records");
    std::vector<double> eps;
    for (const auto& r : records) {
        if (r.length != records.front().length || r.cells != records.front().cells ||
            r.times.size() != records.front().times.size() || r.final_time != records.front().final_time) {
            fail(ErrorKind::GridMismatch, "measurement records differ in layout");
        }
        eps.push_back(r.epsilon);
    }
    const FdStencil stencil = fd_stencil(eps, order);
    auto extract = [&](auto member, double b) {
        std::vector<std::span<const double>> samples;
        for (const auto& r : records) samples.emplace_back(r.*member);
        return apply_stencil(stencil, samples, b);
    };
    MeasurementRecord out;
    out.epsilon = 0.0;
    out.length = records.front().length;
    out.cells = records.front().cells;
    out.final_time = records.front().final_time;
    out.times = records.front().times;
    out.u_left = extract(&MeasurementRecord::u_left, base.u0);
    out.u_right = extract(&MeasurementRecord::u_right, base.u0);
    out.v_left = extract(&MeasurementRecord::v_left, base.v0);
    out.v_right = extract(&MeasurementRecord::v_right, base.v0);
    out.terminal_u = extract(&MeasurementRecord::terminal_u, base.u0);
    out.terminal_v = extract(&MeasurementRecord::terminal_v, base.v0);
    return out;
}

TruncatedSeries::TruncatedSeries(int degree) : degree_(degree) {
    if (degree < 0 || degree > kMaxDegree) {
        fail(ErrorKind::InvalidParam, "series degree must be in [0, " + std::to_string(kMaxDegree) + "]");
    }
}

TruncatedSeries& TruncatedSeries::operator+=(const TruncatedSeries& other) {
    const int d = std::min(degree_, other.degree_);
    for (int i = 0; i <= d; ++i) c_[i] += other.c_[i];
    return *this;
}

TruncatedSeries& TruncatedSeries::operator*=(double s) {
    for (int i = 0; i <= degree_; ++i) c_[i] *= s;
    return *this;
}

TruncatedSeries operator*(const TruncatedSeries& a, const TruncatedSeries& b) {
    TruncatedSeries out(std::min(a.degree_, b.degree_));
    for (int i = 0; i <= out.degree_; ++i) {
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) sum += a.c_[j] * b.c_[i - j];
        out.c_[i] = sum;
    }
    return out;
}

void VariationStack::push(SpaceTimeField u, SpaceTimeField v, Provenance provenance) {
    if (!u.same_layout(v)) fail(ErrorKind::GridMismatch, "variation fields u and v differ in layout");
    if (!u_.empty() && !u.same_layout(u_.front())) {
        fail(ErrorKind::GridMismatch, "variation order differs in layout from order 1");
    }
    u_.push_back(std::move(u));
    v_.push_back(std::move(v));
    provenance_.push_back(provenance);
}

namespace {

void require_order(const VariationStack& stack, int k) {
    if (k < 1 || k > stack.max_order()) {
        fail(ErrorKind::MissingLowerOrder, "variation order " + std::to_string(k) + " is not in the stack (holds 1.." +
                                               std::to_string(stack.max_order()) + ")");
    }
}

struct ScaledCoeff {
    int m;
    int n;
    double value;
};

std::vector<ScaledCoeff> source_coeffs(int k, const TaylorTable& table) {
    std::vector<ScaledCoeff> out;
    for (int j = 2; j <= k; ++j) {
        for (const auto& [m, n] : TaylorTable::indices_of_order(j)) {
            const double c = table(m, n);
            if (c != 0.0) out.push_back({m, n, c / (factorial(m) * factorial(n))});
        }
    }
    return out;
}

struct SourceEvaluator {
    int k;
    std::vector<ScaledCoeff> cf;
    std::vector<ScaledCoeff> cg;

    std::pair<double, double> operator()(std::span<const double> uo, std::span<const double> vo) const {
        TruncatedSeries du(k), dv(k);
        for (int i = 1; i < k; ++i) {
            du[i] = uo[static_cast<std::size_t>(i) - 1] / factorial(i);
            dv[i] = vo[static_cast<std::size_t>(i) - 1] / factorial(i);
        }
        std::array<TruncatedSeries, TruncatedSeries::kMaxDegree + 1> pu, pv;
        std::fill(pu.begin(), pu.end(), TruncatedSeries(k));
        std::fill(pv.begin(), pv.end(), TruncatedSeries(k));
        pu[0][0] = 1.0;
        pv[0][0] = 1.0;
        for (int m = 1; m <= k; ++m) {
            pu[m] = pu[m - 1] * du;
            pv[m] = pv[m - 1] * dv;
        }
        auto top = [&](int m, int n) {
            double sum = 0.0;
            for (int j = m; j <= k - n; ++j) sum += pu[m][j] * pv[n][k - j];
            return sum;
        };
        double sf = 0.0, sg = 0.0;
        for (const auto& c : cf) sf += c.value * top(c.m, c.n);
        for (const auto& c : cg) sg += c.value * top(c.m, c.n);
        const double kf = factorial(k);
        return {kf * sf, kf * sg};
    }
};

}  // namespace

double source_value(int k, const TaylorTable& table, std::span<const double> u_orders,
                    std::span<const double> v_orders) {
    if (k < 1 || k > TruncatedSeries::kMaxDegree) fail(ErrorKind::InvalidParam, "source order out of range");
    if (u_orders.size() + 1 < static_cast<std::size_t>(k) || v_orders.size() + 1 < static_cast<std::size_t>(k)) {
        fail(ErrorKind::MissingLowerOrder, "source of order " + std::to_string(k) + " needs orders 1.." +
                                               std::to_string(k - 1));
    }
    const SourceEvaluator eval{k, source_coeffs(k, table), {}};
    return eval(u_orders, v_orders).first;
}

SourcePair variation_source(int k, const VariationStack& stack, const TaylorTable& tableF,
                            const TaylorTable& tableG) {
    if (k < 2 || k > TruncatedSeries::kMaxDegree) {
        fail(ErrorKind::InvalidParam, "variation sources are defined for orders 2.." +
                                          std::to_string(TruncatedSeries::kMaxDegree));
    }
    for (int j = 1; j < k; ++j) require_order(stack, j);
    const SpaceTimeField& layout = stack.u(1);
    SourcePair out{SpaceTimeField(layout.grid(), layout.final_time(), layout.steps()),
                   SpaceTimeField(layout.grid(), layout.final_time(), layout.steps())};
    const SourceEvaluator eval{k, source_coeffs(k, tableF), source_coeffs(k, tableG)};
    if (eval.cf.empty() && eval.cg.empty()) return out;

    std::vector<std::span<const double>> us, vs;
    for (int j = 1; j < k; ++j) {
        us.push_back(stack.u(j).values());
        vs.push_back(stack.v(j).values());
    }
    std::vector<double> uo(static_cast<std::size_t>(k) - 1), vo(static_cast<std::size_t>(k) - 1);
    auto sf = out.S_F.values();
    auto sg = out.S_G.values();
    for (std::size_t p = 0; p < sf.size(); ++p) {
        for (std::size_t j = 0; j + 1 < static_cast<std::size_t>(k); ++j) {
            uo[j] = us[j][p];
            vo[j] = vs[j][p];
        }
        const auto [a, b] = eval(uo, vo);
        sf[p] = a;
        sg[p] = b;
    }
    return out;
}

namespace {

std::pair<SpaceTimeField, SpaceTimeField> solve_linear(double f10, double f01, double g10, double g01,
                                                       const SourcePair* source, const SpaceField& u_init,
                                                       const SpaceField& v_init, const Grid1D& grid, double T,
                                                       model::Diffusion diffusion, const SolverConfig& config) {
    SolverConfig cfg = config;
    cfg.positivity_clip = false;
    const forward::ImexIntegrator integrator(grid, diffusion.d1, diffusion.d2, T, cfg);
    auto reaction = [&](int n, std::span<const double> u, std::span<const double> v, std::span<double> ru,
                        std::span<double> rv) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            ru[i] = f10 * u[i] + f01 * v[i];
            rv[i] = g10 * u[i] + g01 * v[i];
        }
        if (source) {
            const auto sf = source->S_F.row(n);
            const auto sg = source->S_G.row(n);
            for (std::size_t i = 0; i < u.size(); ++i) {
                ru[i] += sf[i];
                rv[i] += sg[i];
            }
        }
    };
    const double lip = std::max(std::abs(f10) + std::abs(f01), std::abs(g10) + std::abs(g01));
    auto lipschitz = [lip](int, std::span<const double>, std::span<const double>) { return lip; };
    auto result = integrator.run(u_init, v_init, reaction, lipschitz);
    return {std::move(result.u), std::move(result.v)};
}

}  // namespace

std::pair<SpaceTimeField, SpaceTimeField> solve_variation_direct(
    int k, const VariationStack& stack, const TaylorTable& tableF, const TaylorTable& tableG,
    const SpaceField& fk, const SpaceField& gk, const Grid1D& grid, double T, model::Diffusion diffusion,
    const SolverConfig& config) {
    if (k < 1 || k > TruncatedSeries::kMaxDegree) fail(ErrorKind::InvalidParam, "variation order out of range");
    require_size(fk, grid.size(), "f_k");
    require_size(gk, grid.size(), "g_k");
    const double kf = factorial(k);
    SpaceField u_init(fk), v_init(gk);
    for (auto& x : u_init) x *= kf;
    for (auto& x : v_init) x *= kf;

    std::optional<SourcePair> source;
    if (k >= 2) {
        for (int j = 1; j < k; ++j) require_order(stack, j);
        const auto& layout = stack.u(1);
        if (!(layout.grid() == grid) || layout.final_time() != T || layout.steps() != config.steps) {
            fail(ErrorKind::GridMismatch, "variation stack layout differs from the requested solve");
        }
        source = variation_source(k, stack, tableF, tableG);
    }
    return solve_linear(tableF(1, 0), tableF(0, 1), tableG(1, 0), tableG(0, 1), source ? &*source : nullptr, u_init,
                        v_init, grid, T, diffusion, config);
}

std::vector<std::pair<SpaceTimeField, SpaceTimeField>> linearize_first_order(
    const model::ModelPreset& preset, BasePoint base,
    const std::vector<std::pair<SpaceField, SpaceField>>& directions, const Grid1D& grid, double T,
    const SolverConfig& config) {
    const auto jf = preset.F.gradient(base.u0, base.v0);
    const auto jg = preset.G.gradient(base.u0, base.v0);
    std::vector<std::pair<SpaceTimeField, SpaceTimeField>> out;
    for (const auto& [f, g] : directions) {
        require_size(f, grid.size(), "direction f");
        require_size(g, grid.size(), "direction g");
        out.push_back(solve_linear(jf.du, jf.dv, jg.du, jg.dv, nullptr, f, g, grid, T, preset.diffusion, config));
    }
    return out;
}

std::vector<forward::ForwardSolution> solve_ladder(const model::ModelPreset& preset, const Grid1D& grid,
                                                   const EpsilonFamily& family, double T,
                                                   const SolverConfig& config) {
    validate(family, grid);
    std::vector<std::future<forward::ForwardSolution>> jobs;
    for (double eps : family.epsilons) {
        jobs.push_back(std::async(std::launch::async, [&, eps] {
            const auto [f, g] = assemble_initial(family, eps);
            return forward::solve_forward(preset, grid, f, g, T, config);
        }));
    }
    std::vector<forward::ForwardSolution> out;
    for (auto& job : jobs) out.push_back(job.get());
    return out;
}

VariationStack fd_stack(const std::vector<forward::ForwardSolution>& ladder, const std::vector<double>& epsilons,
                        BasePoint base, int max_order) {
    if (ladder.size() != epsilons.size()) fail(ErrorKind::InvalidParam, "one ladder solution per epsilon required");
    std::vector<const SpaceTimeField*> us, vs;
    for (const auto& s : ladder) {
        us.push_back(&s.u);
        vs.push_back(&s.v);
    }
    VariationStack stack;
    for (int k = 1; k <= max_order; ++k) {
        stack.push(extract_variation_fd(us, epsilons, base.u0, k), extract_variation_fd(vs, epsilons, base.v0, k),
                   Provenance::fd);
    }
    return stack;
}

VariationStack direct_stack(int max_order, const TaylorTable& tableF, const TaylorTable& tableG,
                            const EpsilonFamily& family, const Grid1D& grid, double T,
                            model::Diffusion diffusion, const SolverConfig& config) {
    VariationStack stack;
    for (int k = 1; k <= max_order; ++k) {
        auto [u, v] = solve_variation_direct(k, stack, tableF, tableG, family_term(family.f, k, grid.size()),
                                             family_term(family.g, k, grid.size()), grid, T, diffusion, config);
        stack.push(std::move(u), std::move(v), Provenance::direct);
    }
    return stack;
}

const SpaceTimeField& VariationStack::u(int k) const {
    require_order(*this, k);
    return u_[static_cast<std::size_t>(k) - 1];
}

const SpaceTimeField& VariationStack::v(int k) const {
    require_order(*this, k);
    return v_[static_cast<std::size_t>(k) - 1];
}

Provenance VariationStack::provenance(int k) const {
    require_order(*this, k);
    return provenance_[static_cast<std::size_t>(k) - 1];
}

}  // namespace lvinv::variation
