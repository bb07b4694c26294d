#include "lvinv/error.hpp"
#include "lvinv/recovery.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace lvinv;
using namespace lvinv::recovery;
using model::TermBuilder;

namespace {

template <typename Fn>
Error error_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e;
    }
    FAIL("no error raised");
    return Error(ErrorKind::IoError, "");
}

SpaceField terminal_of(const SpaceTimeField& f) { return {f.terminal().begin(), f.terminal().end()}; }

/// Order-k inputs built from directly solved variations, as a noise-free oracle.
std::vector<OrderKExperiment> exact_experiments(int k, const model::ModelPreset& p, BasePoint base,
                                                const ExperimentDesign& design, const Grid1D& grid, double T,
                                                const SolverConfig& cfg) {
    const auto TF = model::taylor_at(p.F, base, k);
    const auto TG = model::taylor_at(p.G, base, k);
    std::vector<OrderKExperiment> out;
    for (const auto& spec : design.experiments) {
        const auto fam = family_for(spec, base, design.epsilons);
        const auto stack = variation::direct_stack(k, TF, TG, fam, grid, T, p.diffusion, cfg);
        OrderKExperiment e;
        for (int j = 1; j < k; ++j) e.lower.push(stack.u(j), stack.v(j), variation::Provenance::direct);
        e.fk = variation::family_term(spec.f, k, grid.size());
        e.gk = variation::family_term(spec.g, k, grid.size());
        e.uk_terminal = terminal_of(stack.u(k));
        e.vk_terminal = terminal_of(stack.v(k));
        out.push_back(std::move(e));
    }
    return out;
}

model::ModelPreset polynomial_bazykin(double G11 = 0.8) {
    return model::custom_model(TermBuilder{}.add(2, 0, 0, -1.0).add(1, 1, 0, -0.5).build(),
                               TermBuilder{}.add(0, 1, 0, -0.5).add(1, 1, 0, G11).add(0, 2, 0, -0.2).build(),
                               {{0.0, 0.0}});
}

}  // namespace

TEST_CASE("first order: closed-form inversion of a separated field") {
    const Grid1D g(std::numbers::pi, 128);
    const auto m0 = spectral::neumann_mode(g, 0);
    FirstOrderSample s{m0.phi, m0.phi};
    for (double& x : s.terminal) x *= std::exp(-0.3);
    const auto r = recover_first_order({s}, {0, 1, 2}, 1.0, g, 1.0, Weighting::continuous);
    CHECK(r.estimate == doctest::Approx(-0.3).epsilon(1e-13));
    CHECK(r.per_mode.size() == 1);

    FirstOrderSample bad = s;
    for (double& x : bad.terminal) x = -x;
    CHECK(error_of([&] { recover_first_order({bad}, {0}, 1.0, g, 1.0, Weighting::continuous); }).kind() ==
          ErrorKind::SignLoss);
    const auto m5 = spectral::neumann_mode(g, 5);
    FirstOrderSample ortho{m5.phi, m5.phi};
    CHECK(error_of([&] { recover_first_order({ortho}, {0, 1, 2}, 1.0, g, 1.0, Weighting::continuous); }).kind() ==
          ErrorKind::DegenerateData);
}

TEST_CASE("first order: exact variation fields of a Bazykin-class model") {
    const Grid1D g(2.0 * std::numbers::pi, 128);
    const SolverConfig cfg{forward::Scheme::backward_euler_imex, 500, false};
    for (double Gv : {-0.5, -0.1, 0.0}) {
        const auto p = model::custom_model(TermBuilder{}.add(2, 0, 0, -1.0).build(),
                                           TermBuilder{}.add(0, 1, 0, Gv).add(1, 1, 0, 0.8).build(), {{0.0, 0.0}});
        const auto design = default_design(g, {1e-2});
        std::vector<FirstOrderSample> samples;
        for (const auto& spec : design.experiments) {
            const auto fam = family_for(spec, {0.0, 0.0}, {1e-2});
            const auto st = variation::direct_stack(1, model::taylor_at(p.F, {0.0, 0.0}, 1),
                                                    model::taylor_at(p.G, {0.0, 0.0}, 1), fam, g, 1.0, p.diffusion,
                                                    cfg);
            samples.push_back({spec.g[0], terminal_of(st.v(1))});
        }
        const auto r = recover_first_order(samples, design.modes, p.diffusion.d2, g, 1.0, Weighting::scheme, cfg);
        CHECK(std::abs(r.estimate - Gv) <= 1e-6 * std::max(std::abs(Gv), 1e-3));
    }
}

TEST_CASE("duhamel_projection") {
    const double L = std::numbers::pi, d = 1.0, T = 1.0;
    const int steps = 2000;
    const Grid1D g(L, 256);
    const auto m1 = spectral::neumann_mode(g, 1);
    const SpaceField zero(g.size(), 0.0);

    SUBCASE("homogeneous evolution") {
        const auto w = spectral::separated_solution(g, m1, d, 0.0, T, steps);
        const spectral::SpaceTimeField S(g, T, steps);
        CHECK(std::abs(duhamel_projection(g, terminal_of(w), m1.phi, S, m1, d, 0.0, T)) <= 1e-10);
    }
    SUBCASE("manufactured source phi_1") {
        // w_t - w_xx = phi_1, w(0) = 0  =>  w(T) = (1 - e^{-mu T}) / mu phi_1
        const double mu = m1.mu;
        SpaceField wT = m1.phi;
        for (double& x : wT) x *= (1.0 - std::exp(-mu * T)) / mu;
        spectral::SpaceTimeField S(g, T, steps);
        for (int n = 0; n <= steps; ++n) {
            for (std::size_t i = 0; i < g.size(); ++i) S(n, i) = m1.phi[i];
        }
        const double r = duhamel_projection(g, wT, zero, S, m1, d, 0.0, T);
        // the closed form of the source integral is (e^{mu T} - 1) / mu
        CHECK(std::abs(r) <= 1e-4);
        const double lhs = std::exp(mu * T) * spectral::inner(g, wT, m1.phi);
        CHECK(lhs == doctest::Approx((std::exp(mu * T) - 1.0) / mu).epsilon(1e-12));
    }
    SUBCASE("orthogonal source") {
        const auto m2 = spectral::neumann_mode(g, 2);
        spectral::SpaceTimeField S(g, T, steps);
        for (int n = 0; n <= steps; ++n) {
            for (std::size_t i = 0; i < g.size(); ++i) S(n, i) = std::sin(n * 1e-3) * m2.phi[i];
        }
        CHECK(std::abs(duhamel_projection(g, zero, zero, S, m1, d, 0.0, T)) <= 1e-12);
    }
    SUBCASE("grid mismatch") {
        const spectral::SpaceTimeField S(Grid1D(L, 128), T, steps);
        CHECK(error_of([&] { duhamel_projection(g, zero, zero, S, m1, d, 0.0, T); }).kind() == ErrorKind::GridMismatch);
    }
}

TEST_CASE("duhamel residual on solver output shrinks with refinement") {
    const Grid1D g(std::numbers::pi, 128);
    const auto p = model::custom_model({}, {}, {{0.0, 0.0}});
    const auto m1 = spectral::neumann_mode(g, 1);
    const auto f = shifted_mode(g, 1);
    double prev = 0.0;
    for (int steps : {100, 200, 400}) {
        const auto sol = forward::solve_forward(p, g, f, f, 1.0, {forward::Scheme::backward_euler_imex, steps, false});
        const spectral::SpaceTimeField S(g, 1.0, steps);
        const double r = std::abs(duhamel_projection(g, terminal_of(sol.u), f, S, m1, 1.0, 0.0, 1.0));
        if (prev > 0.0) CHECK(prev / r >= 1.8);
        prev = r;
        const auto exact = scheme_weights(m1, 1.0, 0.0, 1.0, {forward::Scheme::backward_euler_imex, steps, false});
        CHECK(std::abs(duhamel_projection(g, terminal_of(sol.u), f, S, m1, exact)) <= 1e-12);
    }
}

TEST_CASE("order-2 system entries match closed-form time integrals") {
    const double L = std::numbers::pi, d = 1.0, T = 1.0;
    const int steps = 2000;
    const Grid1D g(L, 256);
    const auto m1 = spectral::neumann_mode(g, 1);
    OrderKExperiment e;
    e.lower.push(spectral::separated_solution(g, m1, d, 0.0, T, steps), spectral::SpaceTimeField(g, T, steps),
                 variation::Provenance::direct);
    e.fk = e.gk = e.uk_terminal = e.vk_terminal = SpaceField(g.size(), 0.0);
    RecoveryOptions opt;
    opt.weighting = Weighting::continuous;
    opt.solver.steps = steps;
    opt.modes = {0, 2};
    const model::TaylorTable known({0.0, 0.0}, 1);
    const auto sys = assemble_order_k(2, {e}, known, known, {d, d}, g, T, opt);
    REQUIRE(sys.unknowns.front() == model::MultiIndex{2, 0});
    // u1^2 = e^{-2 mu t} phi_1^2; <phi_1^2, phi_0> = 1/sqrt(L), <phi_1^2, phi_2> = sqrt(2/L)/2
    const double a0 = -2.0 * m1.mu, a2 = 4.0 * m1.mu - 2.0 * m1.mu;
    const double e0 = (std::exp(a0 * T) - 1.0) / a0 / std::sqrt(L);
    const double e2 = (std::exp(a2 * T) - 1.0) / a2 * 0.5 * std::sqrt(2.0 / L);
    CHECK(std::abs(std::abs(sys.A_F(0, 0)) - e0) <= 1e-6 * e0);
    CHECK(std::abs(std::abs(sys.A_F(1, 0)) - e2) <= 1e-6 * e2);
    for (int c = 1; c < 3; ++c) CHECK(sys.A_F.col(c).norm() == 0.0);
}

TEST_CASE("order 2 from exact variation fields of Bazykin") {
    const Grid1D g(2.0 * std::numbers::pi, 256);
    const SolverConfig cfg{forward::Scheme::backward_euler_imex, 2000, false};
    const auto p = model::preset(model::PresetKind::bazykin);
    const auto design = default_design(g, variation::with_richardson({1e-2, 2e-2, 4e-2}, 1));
    const auto ex = exact_experiments(2, p, {0.0, 0.0}, design, g, 1.0, cfg);
    const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 2);
    const auto TG = model::taylor_at(p.G, {0.0, 0.0}, 2);
    RecoveryOptions opt;
    opt.solver = cfg;
    opt.modes = {0, 1, 2, 3};
    const auto r = recover_order_k(2, ex, TF.restricted(1, 1), TG.restricted(1, 1), p.diffusion, g, 1.0, opt);
    REQUIRE(r.coefficients.size() == 6);
    for (const auto& c : r.coefficients) {
        const double truth = c.target == 'F' ? TF(c.m, c.n) : TG(c.m, c.n);
        CHECK(std::abs(c.estimate - truth) <= 1e-4 * std::max(std::abs(truth), 1.0));
    }
    CHECK(r.cond_F <= 1e6);
    CHECK(r.cond_G <= 1e6);
    CHECK(r.residual_F <= 1e-8);
}

TEST_CASE("order 2 without v excitation is rank deficient") {
    const Grid1D g(2.0 * std::numbers::pi, 64);
    const SolverConfig cfg{forward::Scheme::backward_euler_imex, 200, false};
    const auto p = polynomial_bazykin();
    auto design = default_design(g, {1e-2});
    for (auto& spec : design.experiments) spec.g = {SpaceField(g.size(), 0.0)};
    const auto ex = exact_experiments(2, p, {0.0, 0.0}, design, g, 1.0, cfg);
    RecoveryOptions opt;
    opt.solver = cfg;
    const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 1);
    const auto TG = model::taylor_at(p.G, {0.0, 0.0}, 1);
    const auto err = error_of([&] { recover_order_k(2, ex, TF, TG, p.diffusion, g, 1.0, opt); });
    CHECK(err.kind() == ErrorKind::RankDeficient);
    auto names = err.unidentifiable();
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"F02", "F11", "G02", "G11"});
}

TEST_CASE("order 2 rejects off-diagonal first-order coupling") {
    const Grid1D g(1.0, 16);
    model::TaylorTable F({0.0, 0.0}, 1), G({0.0, 0.0}, 1);
    F.set(0, 1, 0.5);
    OrderKExperiment e;
    e.lower.push(spectral::SpaceTimeField(g, 1.0, 10), spectral::SpaceTimeField(g, 1.0, 10),
                 variation::Provenance::direct);
    RecoveryOptions opt;
    opt.solver.steps = 10;
    CHECK(error_of([&] { assemble_order_k(2, {e}, F, G, {}, g, 1.0, opt); }).kind() == ErrorKind::UnsupportedCoupling);
}

TEST_CASE("least squares diagnostics") {
    Eigen::MatrixXd A(4, 2);
    A << 1, 0, 0, 1, 1, 1, 1e-14, 0;
    Eigen::VectorXd b(4);
    b << 1, 2, 3, 0;
    const auto s = solve_least_squares(A, b, 0.0, 1e-10);
    CHECK(s.x(0) == doctest::Approx(1.0));
    CHECK(s.x(1) == doctest::Approx(2.0));
    CHECK(s.unidentifiable.empty());
    CHECK(s.residual <= 1e-12);

    Eigen::MatrixXd B(3, 2);
    B << 1, 0, 2, 0, 3, 0;
    const auto d = solve_least_squares(B, Eigen::Vector3d(1, 2, 3), 0.0, 1e-10);
    CHECK(d.unidentifiable == std::vector<int>{1});
}

TEST_CASE("end-to-end recovery is invariant under rescaling the data family") {
    const Grid1D g(2.0 * std::numbers::pi, 64);
    const SolverConfig cfg{forward::Scheme::backward_euler_imex, 200, false};
    const auto p = model::preset(model::PresetKind::bazykin);
    const auto eps = variation::with_richardson({1e-2, 2e-2, 4e-2}, 1);
    const PriorKnowledge prior{{0.0, 0.0}, p.diffusion, 1.0, 0.0, {}};
    RecoveryOptions opt;
    opt.solver = cfg;

    const auto design = default_design(g, eps);
    const auto base = recover_from_measurements(generate_measurements(p, {0.0, 0.0}, design, g, 1.0, cfg), design,
                                                prior, 2, opt);
    const double s = 2.0;
    auto scaled = design;
    for (double& e : scaled.epsilons) e /= s;
    for (auto& spec : scaled.experiments) {
        for (auto* list : {&spec.f, &spec.g}) {
            for (auto& field : *list) {
                for (double& x : field) x *= s;
            }
        }
    }
    const auto other = recover_from_measurements(generate_measurements(p, {0.0, 0.0}, scaled, g, 1.0, cfg), scaled,
                                                 prior, 2, opt);
    REQUIRE(base.entries.size() == other.entries.size());
    for (std::size_t i = 0; i < base.entries.size(); ++i) {
        CHECK(other.entries[i].estimate == doctest::Approx(base.entries[i].estimate).epsilon(1e-6));
    }
}

TEST_CASE("falsification separates distinct order-2 coefficients") {
    const Grid1D g(2.0 * std::numbers::pi, 64);
    const SolverConfig cfg{forward::Scheme::backward_euler_imex, 200, false};
    const auto design = default_design(g, {0.05});
    const auto a = polynomial_bazykin(0.8), b = polynomial_bazykin(0.9);
    const auto same = falsify_uniqueness(a, a, {0.0, 0.0}, design, 0.05, g, 1.0, cfg);
    CHECK(same.distance <= 2.0 * same.noise_floor);
    const auto diff = falsify_uniqueness(a, b, {0.0, 0.0}, design, 0.05, g, 1.0, cfg);
    CHECK(diff.distance >= 10.0 * diff.noise_floor);
    CHECK(diff.distance >= 1e-4 * 0.05 * 0.05);

    auto silent = design;
    for (auto& spec : silent.experiments) spec.g = {SpaceField(g.size(), 0.0)};
    const auto neg = falsify_uniqueness(a, b, {0.0, 0.0}, silent, 0.05, g, 1.0, cfg);
    CHECK(neg.distance <= neg.noise_floor);
}

TEST_CASE("structural fits from exact tables") {
    SUBCASE("hydra") {
        const auto p = model::preset(model::PresetKind::hydra);
        const auto fit = fit_structural_params(model::PresetKind::hydra, model::taylor_at(p.F, {0.0, 0.0}, 3),
                                               model::taylor_at(p.G, {0.0, 0.0}, 3));
        CHECK(fit.params.at("p") == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.params.at("lambda") == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(fit.params.at("mu") == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("hydra without cooperation") {
        const auto p = model::preset(model::PresetKind::hydra, {{"lambda", 0.0}});
        const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 3);
        CHECK(TF(1, 2) == 0.0);
        const auto fit = fit_structural_params(model::PresetKind::hydra, TF, model::taylor_at(p.G, {0.0, 0.0}, 3));
        CHECK(std::abs(fit.params.at("lambda")) <= 1e-12);
    }
    SUBCASE("Holling-Tanner") {
        const auto p = model::preset(model::PresetKind::holling_tanner);
        const auto fit = fit_structural_params(model::PresetKind::holling_tanner,
                                               model::taylor_at(p.F, {1.0, 0.0}, 3),
                                               model::taylor_at(p.G, {1.0, 0.0}, 3));
        CHECK(fit.params.at("alpha") == doctest::Approx(1.0).epsilon(5e-2));
        CHECK(fit.params.at("beta") == doctest::Approx(2.0).epsilon(5e-2));
    }
    SUBCASE("inconsistent table") {
        const auto p = model::preset(model::PresetKind::hydra);
        auto TG = model::taylor_at(p.G, {0.0, 0.0}, 3);
        TG.set(1, 2, TG(1, 2) + 0.3);
        CHECK(error_of([&] {
                  fit_structural_params(model::PresetKind::hydra, model::taylor_at(p.F, {0.0, 0.0}, 3), TG, 1e-4);
              }).kind() == ErrorKind::InconsistentTable);
    }
}

TEST_CASE("report CSV") {
    RecoveryReport r;
    r.max_order = 2;
    r.entries.push_back({2, 'F', 2, 0, -0.99, -1.0, 1e-3, 2.5});
    r.entries.push_back({2, 'G', 1, 1, 0.8, std::nullopt, 1e-3, std::nullopt});
    std::ostringstream os;
    r.write_csv(os);
    std::istringstream is(os.str());
    std::string header, row1, row2;
    std::getline(is, header);
    std::getline(is, row1);
    std::getline(is, row2);
    CHECK(header == "order,target,m,n,estimate,truth,abs_error,residual,cond");
    CHECK(row1.rfind("2,F,2,0,", 0) == 0);
    CHECK(std::count(row1.begin(), row1.end(), ',') == 8);
    CHECK(row2.find(",,,") != std::string::npos);
    CHECK(r.max_scaled_error() == doctest::Approx(0.01));
    CHECK(os.str().find('\r') == std::string::npos);
}
