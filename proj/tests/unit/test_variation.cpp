#include "lvinv/error.hpp"
#include "lvinv/recovery.hpp"
#include "lvinv/variation.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace lvinv;
using namespace lvinv::variation;
using model::TermBuilder;
using spectral::Grid1D;
using spectral::SpaceTimeField;

namespace {

model::ModelPreset heat_model(double d = 1.0) { return model::custom_model({}, {}, {{0.0, 0.0}}, {d, d}); }

SpaceTimeField field_of(const Grid1D& g, double T, int steps, const std::function<double(double, double)>& fn) {
    SpaceTimeField out(g, T, steps);
    for (int n = 0; n <= steps; ++n) {
        for (std::size_t i = 0; i < g.size(); ++i) out(n, i) = fn(out.time(n), g.nodes()[i]);
    }
    return out;
}

double rel_sup(const SpaceTimeField& a, const SpaceTimeField& b) {
    const double s = spectral::sup_norm(b.values());
    return spectral::sup_diff(a.values(), b.values()) / (s > 0.0 ? s : 1.0);
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("assemble_initial") {
    const Grid1D g(1.0, 16);
    const std::size_t n = g.size();
    EpsilonFamily fam{{0.3, 0.2}, {SpaceField(n, 1.0)}, {SpaceField(n, 2.0)}, {0.1}};
    auto [f0, g0] = assemble_initial(fam, 0.0);
    for (double x : f0) CHECK(x == 0.3);
    for (double x : g0) CHECK(x == 0.2);

    EpsilonFamily fam2{{0.0, 0.0}, {SpaceField(n, 1.0), SpaceField(n, -5.0)}, {SpaceField(n, 1.0)}, {0.01}};
    auto [f, gg] = assemble_initial(fam2, 0.01);
    for (double x : f) CHECK(x == doctest::Approx(0.0095).epsilon(1e-14));

    SpaceField f1(n, 1.0);
    f1[4] = 0.0;
    EpsilonFamily fam3{{0.0, 0.0}, {f1, SpaceField(n, -1.0)}, {SpaceField(n, 1.0)}, {1e-6}};
    CHECK(kind_of([&] { assemble_initial(fam3, 1e-6); }) == ErrorKind::NegativeData);
}

TEST_CASE("validate: first-order sign rule at a zero base") {
    const Grid1D g(1.0, 16);
    const std::size_t n = g.size();
    EpsilonFamily fam{{0.0, 0.0}, {SpaceField(n, 1.0)}, {SpaceField(n, -1.0)}, {0.1}};
    CHECK(kind_of([&] { validate(fam, g); }) == ErrorKind::NegativeData);
    fam.base.v0 = 1.0;
    CHECK_NOTHROW(validate(fam, g));
    fam.epsilons = {};
    CHECK(kind_of([&] { validate(fam, g); }) == ErrorKind::InvalidParam);
}

TEST_CASE("ladders") {
    const auto lad = geometric_ladder(1e-2, 3);
    REQUIRE(lad.size() == 3);
    CHECK(lad[2] == doctest::Approx(4e-2));
    const auto r = with_richardson(lad, 1);
    REQUIRE(r.size() == 4);
    CHECK(r[0] == doctest::Approx(5e-3));
    CHECK(with_richardson(lad, 0) == lad);
}

TEST_CASE("fd_stencil: polynomial exactness and errors") {
    const Grid1D g(1.0, 8);
    const auto w = field_of(g, 1.0, 4, [](double t, double x) { return std::sin(x + t); });
    const auto z = field_of(g, 1.0, 4, [](double t, double x) { return std::cos(3 * x) * t; });
    const std::vector<double> eps{1e-2, 2e-2, 4e-2};
    std::vector<SpaceTimeField> lin, quad;
    for (double e : eps) {
        lin.push_back(field_of(g, 1.0, 4, [&](double t, double x) { return 0.5 + e * std::sin(x + t); }));
        quad.push_back(field_of(g, 1.0, 4, [&](double t, double x) {
            return 0.5 + e * std::sin(x + t) + e * e * std::cos(3 * x) * t;
        }));
    }
    std::vector<const SpaceTimeField*> pl, pq;
    for (auto& f : lin) pl.push_back(&f);
    for (auto& f : quad) pq.push_back(&f);
    const auto d1 = extract_variation_fd(pl, eps, 0.5, 1);
    CHECK(spectral::sup_diff(d1.values(), w.values()) <= 1e-10);
    const auto d2 = extract_variation_fd(pq, eps, 0.5, 2);
    for (std::size_t i = 0; i < z.values().size(); ++i) CHECK(std::abs(d2.values()[i] - 2.0 * z.values()[i]) <= 1e-8);

    CHECK(kind_of([] { fd_stencil({1e-2, 2e-2}, 3); }) == ErrorKind::InvalidParam);
    CHECK(kind_of([] { fd_stencil({1e-2, 1e-2, 2e-2}, 1); }) == ErrorKind::InvalidParam);
    CHECK(kind_of([] { fd_stencil({0.0, 1e-2}, 1); }) == ErrorKind::InvalidParam);
    CHECK(kind_of([] { fd_stencil({1e-3, 1e-3 * (1 + 1e-11), 2e-3, 3e-3}, 2); }) == ErrorKind::IllConditionedStencil);
    CHECK(fd_stencil(with_richardson({1e-2, 2e-2, 4e-2}, 1), 3).condition < 1e12);
}

TEST_CASE("first variation of the heat equation along a cosine") {
    const double L = 2.0, d = 0.5;
    const Grid1D g(L, 128);
    const auto mode = spectral::neumann_mode(g, 1);
    EpsilonFamily fam{{1.0, 1.0}, {mode.phi}, {SpaceField(g.size(), 0.0)}, {1e-2, 2e-2, 4e-2}};
    const auto lad = solve_ladder(heat_model(d), g, fam, 1.0, forward::SolverConfig{forward::Scheme::crank_nicolson_imex, 400, false});
    const auto stack = fd_stack(lad, fam.epsilons, fam.base, 1);
    const auto exact = spectral::separated_solution(g, mode, d, 0.0, 1.0, 400);
    CHECK(rel_sup(stack.u(1), exact) <= 1e-3);
    CHECK(spectral::sup_norm(stack.v(1).values()) <= 1e-12);
}

TEST_CASE("variation_source: product term") {
    const Grid1D g(1.0, 8);
    const auto u1 = field_of(g, 1.0, 3, [](double t, double x) { return 1.0 + x * t; });
    const auto v1 = field_of(g, 1.0, 3, [](double t, double x) { return std::cos(x) - t; });
    VariationStack stack;
    stack.push(u1, v1, Provenance::direct);
    const auto F = model::taylor_at(TermBuilder{}.add(1, 1, 0, 1.0).build(), {0.0, 0.0}, 2);
    const auto S = variation_source(2, stack, F, F);
    for (std::size_t i = 0; i < u1.values().size(); ++i) {
        CHECK(S.S_F.values()[i] == doctest::Approx(2.0 * u1.values()[i] * v1.values()[i]).epsilon(1e-14));
    }
}

TEST_CASE("variation_source: Bazykin tables against hand assembly") {
    const Grid1D g(1.0, 8);
    const auto u1 = field_of(g, 1.0, 3, [](double t, double x) { return std::exp(-t) * (1.0 + x); });
    const auto v1 = field_of(g, 1.0, 3, [](double t, double x) { return 0.5 + x * x * t; });
    VariationStack stack;
    stack.push(u1, v1, Provenance::direct);
    const auto p = model::preset(model::PresetKind::bazykin);
    const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 2);
    const auto TG = model::taylor_at(p.G, {0.0, 0.0}, 2);
    const auto S = variation_source(2, stack, TF, TG);
    for (std::size_t i = 0; i < u1.values().size(); ++i) {
        const double a = u1.values()[i], b = v1.values()[i];
        CHECK(std::abs(S.S_F.values()[i] - (TF(2, 0) * a * a + 2.0 * TF(1, 1) * a * b + TF(0, 2) * b * b)) <= 1e-12);
        CHECK(std::abs(S.S_G.values()[i] - (TG(2, 0) * a * a + 2.0 * TG(1, 1) * a * b + TG(0, 2) * b * b)) <= 1e-12);
    }
}

TEST_CASE("source_value: third order of u^2 v along a polynomial path") {
    const auto F = model::taylor_at(TermBuilder{}.add(2, 1, 0, 1.0).build(), {0.0, 0.0}, 3);
    const std::vector<double> us{0.7, -1.3, 2.1}, vs{1.1, 0.4, -0.9};
    CHECK(source_value(3, F, us, vs) == doctest::Approx(6.0 * us[0] * us[0] * vs[0]).epsilon(1e-14));

    // with a nonzero base the path enters through lower-order mixed products as well
    const auto term = TermBuilder{}.add(2, 1, 0, 1.0).build();
    const model::BasePoint base{0.4, 0.3};
    const auto T = model::taylor_at(term, base, 3);
    auto path = [&](double e) {
        const double u = base.u0 + us[0] * e + us[1] * e * e / 2 + us[2] * e * e * e / 6;
        const double v = base.v0 + vs[0] * e + vs[1] * e * e / 2 + vs[2] * e * e * e / 6;
        return term(u, v);
    };
    // third derivative of F along the path minus the linear part T10 u3 + T01 v3
    auto third = [&](double h) { return (path(2 * h) - 2 * path(h) + 2 * path(-h) - path(-2 * h)) / (2 * h * h * h); };
    const double d3 = (4.0 * third(5e-3) - third(1e-2)) / 3.0;
    const double nonlinear = d3 - T(1, 0) * us[2] - T(0, 1) * vs[2];
    CHECK(source_value(3, T, us, vs) == doctest::Approx(nonlinear).epsilon(1e-6));
}

TEST_CASE("variation_source: missing order") {
    const Grid1D g(1.0, 8);
    VariationStack stack;
    SpaceTimeField z(g, 1.0, 2);
    stack.push(z, z, Provenance::fd);
    const auto F = model::taylor_at(TermBuilder{}.add(2, 1, 0, 1.0).build(), {0.0, 0.0}, 3);
    CHECK(kind_of([&] { variation_source(3, stack, F, F); }) == ErrorKind::MissingLowerOrder);
    CHECK(kind_of([&] { stack.u(2); }) == ErrorKind::MissingLowerOrder);
    SpaceTimeField other(Grid1D(1.0, 16), 1.0, 2);
    CHECK(kind_of([&] { stack.push(other, other, Provenance::fd); }) == ErrorKind::GridMismatch);
}

TEST_CASE("solve_variation_direct: first-order separated forms") {
    const double L = std::numbers::pi, d = 1.0;
    const Grid1D g(L, 256);
    const int steps = 2000;
    const forward::SolverConfig cfg{forward::Scheme::crank_nicolson_imex, steps, false};
    const auto m1 = spectral::neumann_mode(g, 1);
    const auto m0 = spectral::neumann_mode(g, 0);
    const SpaceField zero(g.size(), 0.0);

    model::TaylorTable TF({0.0, 0.0}, 1), TG({0.0, 0.0}, 1);
    VariationStack empty;
    const auto [u1, v1] = solve_variation_direct(1, empty, TF, TG, m1.phi, zero, g, 1.0, {d, d}, cfg);
    CHECK(rel_sup(u1, spectral::separated_solution(g, m1, d, 0.0, 1.0, steps)) <= 1e-3);
    CHECK(spectral::sup_norm(v1.values()) == 0.0);

    TG.set(0, 1, -0.3);
    const auto [u2, v2] = solve_variation_direct(1, empty, TF, TG, zero, m0.phi, g, 1.0, {d, d}, cfg);
    CHECK(rel_sup(v2, spectral::separated_solution(g, m0, d, -0.3, 1.0, steps)) <= 1e-6);
}

TEST_CASE("solve_variation_direct: vanishing second order") {
    const Grid1D g(1.0, 32);
    const forward::SolverConfig cfg{forward::Scheme::backward_euler_imex, 50, false};
    model::TaylorTable TF({0.0, 0.0}, 2), TG({0.0, 0.0}, 2);
    TG.set(0, 1, -0.5);
    const auto f1 = recovery::shifted_mode(g, 1);
    const auto stack = direct_stack(2, TF, TG, EpsilonFamily{{0.0, 0.0}, {f1}, {f1}, {0.1}}, g, 1.0, {1.0, 1.0}, cfg);
    CHECK(spectral::sup_norm(stack.u(2).values()) == 0.0);
    CHECK(spectral::sup_norm(stack.v(2).values()) == 0.0);
    CHECK(stack.provenance(2) == Provenance::direct);
}

TEST_CASE("linearisation and first variation coincide") {
    const auto p = model::preset(model::PresetKind::holling_tanner);
    const Grid1D g(2.0, 64);
    const forward::SolverConfig cfg{forward::Scheme::backward_euler_imex, 200, false};
    const model::BasePoint base{1.0, 0.0};
    const auto f1 = spectral::neumann_mode(g, 2).phi;
    const auto g1 = recovery::shifted_mode(g, 1);
    const auto lin = linearize_first_order(p, base, {{f1, g1}}, g, 1.0, cfg);
    const auto TF = model::taylor_at(p.F, base, 1);
    const auto TG = model::taylor_at(p.G, base, 1);
    const auto stack = direct_stack(1, TF, TG, EpsilonFamily{base, {f1}, {g1}, {0.1}}, g, 1.0, p.diffusion, cfg);
    CHECK(spectral::sup_diff(lin[0].first.values(), stack.u(1).values()) <= 1e-14);
    CHECK(spectral::sup_diff(lin[0].second.values(), stack.v(1).values()) <= 1e-14);
}

TEST_CASE("first variations inherit positivity") {
    const auto p = model::preset(model::PresetKind::bazykin);
    const Grid1D g(2.0, 64);
    const forward::SolverConfig cfg{forward::Scheme::backward_euler_imex, 400, false};
    const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 1);
    const auto TG = model::taylor_at(p.G, {0.0, 0.0}, 1);
    const auto f1 = recovery::shifted_mode(g, 3);
    const auto g1 = recovery::shifted_mode(g, 2);
    const auto stack = direct_stack(1, TF, TG, EpsilonFamily{{0.0, 0.0}, {f1}, {g1}, {0.1}}, g, 1.0, p.diffusion, cfg);
    CHECK(*std::min_element(stack.u(1).values().begin(), stack.u(1).values().end()) >= -1e-10);
    CHECK(*std::min_element(stack.v(1).values().begin(), stack.v(1).values().end()) >= -1e-10);
}

TEST_CASE("FD and direct variations agree on a coarse Bazykin run") {
    const auto p = model::preset(model::PresetKind::bazykin);
    const Grid1D g(2.0 * std::numbers::pi, 64);
    const forward::SolverConfig cfg{forward::Scheme::backward_euler_imex, 400, false};
    const auto eps = with_richardson({1e-2, 2e-2, 4e-2}, 1);
    const auto design = recovery::default_design(g, eps);
    const auto TF = model::taylor_at(p.F, {0.0, 0.0}, 2);
    const auto TG = model::taylor_at(p.G, {0.0, 0.0}, 2);
    const auto fam = recovery::family_for(design.experiments[2], {0.0, 0.0}, eps);
    const auto lad = solve_ladder(p, g, fam, 1.0, cfg);
    for (std::size_t j = 0; j < eps.size(); ++j) {
        const auto [f, gg] = assemble_initial(fam, eps[j]);
        const auto ref = forward::solve_forward(p, g, f, gg, 1.0, cfg);
        CHECK(spectral::sup_diff(ref.u.values(), lad[j].u.values()) == 0.0);
    }
    const auto fd = fd_stack(lad, eps, {0.0, 0.0}, 2);
    const auto direct = direct_stack(2, TF, TG, fam, g, 1.0, p.diffusion, cfg);
    CHECK(rel_sup(fd.u(1), direct.u(1)) <= 1e-3);
    CHECK(rel_sup(fd.v(1), direct.v(1)) <= 1e-3);
    CHECK(rel_sup(fd.u(2), direct.u(2)) <= 1e-3);
    CHECK(rel_sup(fd.v(2), direct.v(2)) <= 1e-3);
}

TEST_CASE("TruncatedSeries arithmetic") {
    TruncatedSeries a(3), b(3);
    a[1] = 2.0;
    a[2] = 1.0;
    b[1] = 3.0;
    b[3] = 5.0;
    const auto c = a * b;
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    CHECK(c[2] == 6.0);
    CHECK(c[3] == 3.0);
    a += b;
    a *= 2.0;
    CHECK(a[1] == 10.0);
    CHECK(a[3] == 10.0);
}

TEST_CASE("family_term pads missing orders with zeros") {
    const std::vector<SpaceField> terms{SpaceField(4, 1.0)};
    CHECK(family_term(terms, 1, 4) == SpaceField(4, 1.0));
    CHECK(family_term(terms, 2, 4) == SpaceField(4, 0.0));
}
