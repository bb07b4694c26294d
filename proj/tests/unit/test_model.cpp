#include "lvinv/error.hpp"
#include "lvinv/model.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lvinv;
using namespace lvinv::model;

namespace {

double fact(int k) { return k <= 1 ? 1.0 : k * fact(k - 1); }

// Central difference of the next-lower coefficient, step 1e-5.
double fd_coefficient(const RationalTaylorTerm& term, BasePoint base, int m, int n) {
    const double h = 1e-5;
    if (m + n == 1) {
        if (m == 1) return (term(base.u0 + h, base.v0) - term(base.u0 - h, base.v0)) / (2 * h);
        return (term(base.u0, base.v0 + h) - term(base.u0, base.v0 - h)) / (2 * h);
    }
    if (m > 0) {
        const auto hi = taylor_at(term, {base.u0 + h, base.v0}, m + n - 1);
        const auto lo = taylor_at(term, {base.u0 - h, base.v0}, m + n - 1);
        return (hi(m - 1, n) - lo(m - 1, n)) / (2 * h);
    }
    const auto hi = taylor_at(term, {base.u0, base.v0 + h}, m + n - 1);
    const auto lo = taylor_at(term, {base.u0, base.v0 - h}, m + n - 1);
    return (hi(m, n - 1) - lo(m, n - 1)) / (2 * h);
}

double taylor_polynomial(const TaylorTable& t, double du, double dv) {
    double s = 0.0;
    for (const auto& [idx, c] : t.coeffs()) {
        s += c / (fact(idx.first) * fact(idx.second)) * std::pow(du, idx.first) * std::pow(dv, idx.second);
    }
    return s;
}

RationalTaylorTerm random_term(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> expo(0, 3);
    std::uniform_int_distribution<int> hd(0, 1);
    std::uniform_real_distribution<double> coeff(-2.0, 2.0);
    TermBuilder b;
    for (int i = 0; i < 4; ++i) b.add(expo(rng), expo(rng), hd(rng), coeff(rng));
    return b.build();
}

}  // namespace

TEST_CASE("evaluate: logistic zero of the Bazykin prey equation at the carrying capacity") {
    const auto p = preset(PresetKind::bazykin, {{"a", 1.0}, {"K", 2.0}, {"b", 1.0}});
    CHECK(evaluate(p.F, 2.0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("evaluate: cooperative predation term") {
    const auto term = TermBuilder{}.add(1, 1, 0, 1.0).add(1, 2, 0, 0.5).build();
    CHECK(evaluate(term, 2.0, 1.0) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("evaluate: every preset vanishes at its base solutions") {
    for (auto kind : {PresetKind::hydra, PresetKind::holling_tanner, PresetKind::bazykin}) {
        const auto p = preset(kind);
        for (const auto& b : p.base_solutions) {
            CHECK(std::abs(p.F(b.u0, b.v0)) <= 1e-12);
            CHECK(std::abs(p.G(b.u0, b.v0)) <= 1e-12);
        }
    }
}

TEST_CASE("evaluate: denominator outside the physical domain") {
    const auto term = TermBuilder{}.add(1, 1, 1, 1.0).build();
    try {
        evaluate(term, -1.0, 1.0);
        FAIL("expected DenominatorZero");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DenominatorZero);
    }
}

TEST_CASE("RationalTaylorTerm rejects duplicates and bad exponents") {
    CHECK_THROWS_AS(RationalTaylorTerm({{1, 1, 0, 1.0}, {1, 1, 0, 2.0}}), Error);
    CHECK_THROWS_AS(RationalTaylorTerm({{1, 1, 2, 1.0}}), Error);
    CHECK_THROWS_AS(RationalTaylorTerm({{-1, 1, 0, 1.0}}), Error);
    const auto summed = TermBuilder{}.add(1, 1, 0, 1.0).add(1, 1, 0, 2.0).build();
    CHECK(summed.terms().size() == 1);
    CHECK(summed.terms()[0].coeff == 3.0);
}

TEST_CASE("taylor_at: product u v") {
    const auto t = taylor_at(TermBuilder{}.add(1, 1, 0, 1.0).build(), {0.0, 0.0}, 2);
    CHECK(t.coeffs().size() == 5);
    for (const auto& [idx, c] : t.coeffs()) CHECK(c == (idx == MultiIndex{1, 1} ? 1.0 : 0.0));
}

TEST_CASE("taylor_at: hydra predator gain through order 3") {
    const double mu = 2.0, p = 1.0, lam = 0.5;
    const auto G = TermBuilder{}.add(1, 1, 0, mu * p).add(1, 2, 0, mu * lam).build();
    const auto t = taylor_at(G, {0.0, 0.0}, 3);
    for (const auto& [idx, c] : t.coeffs()) {
        if (idx == MultiIndex{1, 1}) CHECK(c == doctest::Approx(2.0));
        else if (idx == MultiIndex{1, 2}) CHECK(c == doctest::Approx(2.0));
        else CHECK(c == 0.0);
    }
}

TEST_CASE("taylor_at: Holling type II response at the prey-only state") {
    const double beta = 2.0;
    const auto F = TermBuilder{}.add(1, 1, 1, beta).build();
    const auto t = taylor_at(F, {1.0, 0.0}, 2);
    CHECK(t(0, 1) == doctest::Approx(beta / 2).epsilon(1e-14));
    CHECK(t(1, 1) == doctest::Approx(beta / 4).epsilon(1e-14));
    CHECK(fd_coefficient(F, {1.0, 0.0}, 0, 1) == doctest::Approx(beta / 2).epsilon(1e-9));
    CHECK(fd_coefficient(F, {1.0, 0.0}, 1, 1) == doctest::Approx(beta / 4).epsilon(1e-9));
}

TEST_CASE("taylor_at agrees with finite differences for random rational terms") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(0.0, 1.5);
    for (int trial = 0; trial < 40; ++trial) {
        const auto term = random_term(rng);
        const BasePoint base{pos(rng), pos(rng)};
        const auto exact = taylor_at(term, base, 3);
        for (const auto& [idx, c] : exact.coeffs()) {
            const double fd = fd_coefficient(term, base, idx.first, idx.second);
            CHECK(std::abs(fd - c) <= 1e-6 * std::max(std::abs(c), 1.0));
        }
    }
}

TEST_CASE("truncated Taylor expansion error decays at order max_order + 1") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto term = random_term(rng);
        const BasePoint base{0.5, 0.3};
        for (int order : {1, 2, 3}) {
            const auto t = taylor_at(term, base, order);
            const double f0 = term(base.u0, base.v0);
            auto err = [&](double d) {
                return std::abs(term(base.u0 + d, base.v0 - 0.7 * d) - f0 - taylor_polynomial(t, d, -0.7 * d));
            };
            const double e1 = err(2e-2), e2 = err(1e-2);
            if (e1 < 1e-13) continue;
            CHECK(std::log2(e1 / e2) >= order + 0.9);
        }
    }
}

TEST_CASE("restricted and indices_of_order") {
    const auto t = taylor_at(TermBuilder{}.add(1, 0, 0, 3.0).add(2, 1, 0, 1.0).build(), {0.0, 0.0}, 3);
    const auto r = t.restricted(2, 3);
    CHECK(r(1, 0) == 0.0);
    CHECK(r(2, 1) == 2.0);
    const auto idx = TaylorTable::indices_of_order(3);
    REQUIRE(idx.size() == 4);
    CHECK(idx.front() == MultiIndex{3, 0});
    CHECK(idx.back() == MultiIndex{0, 3});
}

TEST_CASE("check_admissible: examples") {
    const auto u2v2 = TermBuilder{}.add(2, 2, 0, 1.0).build();
    CHECK(check_admissible(u2v2, AdmissibleClass::A, {0.0, 0.0}).ok());

    const auto g = TermBuilder{}.add(0, 2, 0, 1.0).add(0, 1, 0, -0.3).build();
    CHECK(check_admissible(g, AdmissibleClass::B, {0.0, 0.0}).ok());

    const auto hydra = preset(PresetKind::hydra, {{"a", 2.0}, {"b", 1.0}});
    const auto rep = check_admissible(hydra.F, AdmissibleClass::A, {0.0, 0.0});
    CHECK_FALSE(rep.condition_c_ok);
    CHECK(rep.condition_b_ok);
    CHECK(rep.condition_d_ok);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].find("(1,0)") != std::string::npos);
    CHECK(rep.violations[0].find("1") != std::string::npos);
}

TEST_CASE("check_admissible: mixed monomials are class A at the origin") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> e(1, 3);
    std::uniform_real_distribution<double> c(-1.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        TermBuilder b;
        for (int i = 0; i < 3; ++i) b.add(e(rng), e(rng), 0, c(rng));
        const auto rep = check_admissible(b.build(), AdmissibleClass::A, {0.0, 0.0});
        CHECK(rep.ok());
        CHECK(rep.violations.empty());
    }
}

TEST_CASE("check_admissible: condition (b) away from a zero") {
    const auto term = TermBuilder{}.add(0, 0, 0, 1.0).add(2, 1, 0, 1.0).build();
    const auto rep = check_admissible(term, AdmissibleClass::A, {0.0, 0.0});
    CHECK_FALSE(rep.condition_b_ok);
    CHECK_FALSE(rep.ok());
}

TEST_CASE("presets") {
    const auto hydra = preset(PresetKind::hydra, {{"a", 1.0}, {"b", 1.0}, {"e", 1.0}, {"p", 1.0},
                                                  {"lambda", 0.5}, {"mu", 2.0}, {"m", 0.3}});
    CHECK(hydra.base_solutions.front().u0 == 0.0);
    CHECK(hydra.base_solutions.front().v0 == 0.0);

    const auto ht = preset(PresetKind::holling_tanner, {{"alpha", 1.0}, {"beta", 2.0}, {"gamma", 1.0}, {"delta", 0.3}});
    bool has_prey_state = false;
    for (const auto& b : ht.base_solutions) has_prey_state = has_prey_state || (b.u0 == 1.0 && b.v0 == 0.0);
    CHECK(has_prey_state);
    CHECK(std::abs(ht.F(1.0, 0.0)) <= 1e-12);

    const auto baz = preset(PresetKind::bazykin, {{"a", 1.0}, {"K", 2.0}, {"b", 1.0}, {"A", 1.0},
                                                  {"c", 0.5}, {"d", 1.0}, {"h", 0.2}});
    CHECK(baz.F(0.0, 0.0) == 0.0);
    CHECK(baz.G(0.0, 0.0) == 0.0);

    CHECK_THROWS_AS(preset(PresetKind::bazykin, {{"K", -1.0}}), Error);
    CHECK_THROWS_AS(preset(PresetKind::hydra, {{"nope", 1.0}}), Error);
    CHECK_THROWS_AS(preset(PresetKind::bazykin, {{"A", 2.0}}), Error);
    CHECK_THROWS_AS(custom_model(TermBuilder{}.add(0, 0, 0, 1.0).build(), {}, {{0.0, 0.0}}), Error);
}

TEST_CASE("Bazykin Taylor coefficients at the origin") {
    const auto p = preset(PresetKind::bazykin);
    const auto F = taylor_at(p.F, {0.0, 0.0}, 3);
    const auto G = taylor_at(p.G, {0.0, 0.0}, 3);
    CHECK(F(1, 0) == doctest::Approx(1.0));
    CHECK(F(2, 0) == doctest::Approx(-1.0));
    CHECK(F(1, 1) == doctest::Approx(-0.5));
    CHECK(F(0, 2) == 0.0);
    CHECK(F(2, 1) == doctest::Approx(1.0));
    CHECK(G(0, 1) == doctest::Approx(-0.5));
    CHECK(G(2, 0) == 0.0);
    CHECK(G(1, 1) == doctest::Approx(0.8));
    CHECK(G(0, 2) == doctest::Approx(-0.4));
    CHECK(G(2, 1) == doctest::Approx(-1.6));
}
