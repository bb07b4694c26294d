#include "lvinv/model.hpp"

#include "lvinv/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace lvinv {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::DenominatorZero: return "DenominatorZero";
        case ErrorKind::InvalidParam: return "InvalidParam";
        case ErrorKind::TooManyModes: return "TooManyModes";
        case ErrorKind::GridMismatch: return "GridMismatch";
        case ErrorKind::NonFiniteState: return "NonFiniteState";
        case ErrorKind::NegativeData: return "NegativeData";
        case ErrorKind::IllConditionedStencil: return "IllConditionedStencil";
        case ErrorKind::MissingLowerOrder: return "MissingLowerOrder";
        case ErrorKind::SignLoss: return "SignLoss";
        case ErrorKind::DegenerateData: return "DegenerateData";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::InconsistentTable: return "InconsistentTable";
        case ErrorKind::UnsupportedCoupling: return "UnsupportedCoupling";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace lvinv

namespace lvinv::model {

namespace {

constexpr double kDenominatorFloor = 1e-14;
constexpr double kZeroTol = 1e-12;

double ipow(double x, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
}

double factorial(int k) {
    double r = 1.0;
    for (int i = 2; i <= k; ++i) r *= i;
    return r;
}

double binomial(int n, int k) {
    return factorial(n) / (factorial(k) * factorial(n - k));
}

// d^j/dx^j x^n evaluated at x.
double power_derivative(int n, int j, double x) {
    if (j > n) return 0.0;
    double falling = 1.0;
    for (int i = 0; i < j; ++i) falling *= (n - i);
    return falling * ipow(x, n - j);
}

double denominator(double u, int h) {
    const double den = 1.0 + (h == 1 ? u : 1.0);
    if (h == 0) return 1.0;
    if (std::abs(den) < kDenominatorFloor) {
        std::ostringstream os;
        os << "1 + u vanishes at u = " << u << " (outside the physical domain)";
        fail(ErrorKind::DenominatorZero, os.str());
    }
    return den;
}

// d^i/du^i [u^m / (1+u)^h] at u, via Leibniz with
// d^k (1+u)^{-1} = (-1)^k k! / (1+u)^{k+1}.
double rational_u_derivative(int m, int h, int i, double u) {
    if (h == 0) return power_derivative(m, i, u);
    const double den = denominator(u, 1);
    double sum = 0.0;
    for (int r = 0; r <= i; ++r) {
        const int k = i - r;
        const double inv_deriv = ((k % 2 == 0) ? 1.0 : -1.0) * factorial(k) / ipow(den, k + 1);
        sum += binomial(i, r) * power_derivative(m, r, u) * inv_deriv;
    }
    return sum;
}

std::string fmt_num(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

}  // namespace

RationalTaylorTerm::RationalTaylorTerm(std::vector<Monomial> terms) : terms_(std::move(terms)) {
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& t : terms_) {
        if (t.m < 0 || t.n < 0) fail(ErrorKind::InvalidParam, "monomial exponents must be non-negative");
        if (t.h != 0 && t.h != 1) fail(ErrorKind::InvalidParam, "denominator exponent h must be 0 or 1");
        if (!std::isfinite(t.coeff)) fail(ErrorKind::InvalidParam, "monomial coefficient is not finite");
        if (!seen.insert({t.m, t.n, t.h}).second) {
            std::ostringstream os;
            os << "duplicate monomial (m,n,h) = (" << t.m << "," << t.n << "," << t.h << ")";
            fail(ErrorKind::InvalidParam, os.str());
        }
    }
}

int RationalTaylorTerm::degree() const noexcept {
    int d = 0;
    for (const auto& t : terms_) d = std::max(d, t.m + t.n);
    return d;
}

bool RationalTaylorTerm::has_denominator() const noexcept {
    return std::any_of(terms_.begin(), terms_.end(), [](const Monomial& t) { return t.h == 1; });
}

double RationalTaylorTerm::operator()(double u, double v) const {
    double sum = 0.0;
    for (const auto& t : terms_) {
        sum += t.coeff * ipow(u, t.m) * ipow(v, t.n) / denominator(u, t.h);
    }
    return sum;
}

Gradient RationalTaylorTerm::gradient(double u, double v) const {
    Gradient g;
    for (const auto& t : terms_) {
        g.du += t.coeff * rational_u_derivative(t.m, t.h, 1, u) * ipow(v, t.n);
        g.dv += t.coeff * ipow(u, t.m) / denominator(u, t.h) * power_derivative(t.n, 1, v);
    }
    return g;
}

TermBuilder& TermBuilder::add(int m, int n, int h, double coeff) {
    acc_[{m, n, h}] += coeff;
    return *this;
}

RationalTaylorTerm TermBuilder::build() const {
    std::vector<Monomial> out;
    for (const auto& [key, c] : acc_) {
        if (c == 0.0) continue;
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), c});
    }
    return RationalTaylorTerm(std::move(out));
}

double evaluate(const RationalTaylorTerm& term, double u, double v) { return term(u, v); }

TaylorTable::TaylorTable(BasePoint base, int max_order) : base_(base), max_order_(max_order) {
    if (max_order < 1) fail(ErrorKind::InvalidParam, "TaylorTable max_order must be >= 1");
    for (int k = 1; k <= max_order; ++k) {
        for (const auto& idx : indices_of_order(k)) coeffs_[idx] = 0.0;
    }
}

double TaylorTable::operator()(int m, int n) const {
    const auto it = coeffs_.find({m, n});
    return it == coeffs_.end() ? 0.0 : it->second;
}

void TaylorTable::set(int m, int n, double value) {
    if (m < 0 || n < 0 || m + n < 1 || m + n > max_order_) {
        std::ostringstream os;
        os << "multi-index (" << m << "," << n << ") outside table of order " << max_order_;
        fail(ErrorKind::InvalidParam, os.str());
    }
    coeffs_[{m, n}] = value;
}

std::vector<MultiIndex> TaylorTable::indices_of_order(int k) {
    std::vector<MultiIndex> out;
    for (int m = k; m >= 0; --m) out.emplace_back(m, k - m);
    return out;
}

TaylorTable TaylorTable::restricted(int lo, int hi) const {
    TaylorTable out(base_, max_order_);
    for (const auto& [idx, c] : coeffs_) {
        const int k = idx.first + idx.second;
        if (k >= lo && k <= hi) out.coeffs_[idx] = c;
    }
    return out;
}

TaylorTable taylor_at(const RationalTaylorTerm& term, BasePoint base, int max_order) {
    TaylorTable table(base, max_order);
    for (int k = 1; k <= max_order; ++k) {
        for (const auto& [i, j] : TaylorTable::indices_of_order(k)) {
            double sum = 0.0;
            for (const auto& t : term.terms()) {
                const double dv = power_derivative(t.n, j, base.v0);
                if (dv == 0.0) continue;
                sum += t.coeff * rational_u_derivative(t.m, t.h, i, base.u0) * dv;
            }
            table.set(i, j, sum);
        }
    }
    return table;
}

AdmissibilityReport check_admissible(const RationalTaylorTerm& term, AdmissibleClass cls,
                                     BasePoint base, TraceRule rule) {
    AdmissibilityReport rep;
    rep.cls = cls;
    const std::string fname = cls == AdmissibleClass::A ? "F" : "G";

    const double at_base = term(base.u0, base.v0);
    if (std::abs(at_base) > kZeroTol) {
        rep.condition_b_ok = false;
        rep.violations.push_back("condition (b): " + fname + "(u0,v0) = " + fmt_num(at_base) +
                                 " does not vanish");
    }

    const auto violate_c = [&](const std::string& msg) {
        rep.condition_c_ok = false;
        rep.violations.push_back("condition (c): " + msg);
    };

    if (rule == TraceRule::base_point) {
        const TaylorTable first = taylor_at(term, base, 1);
        const double cu = first(1, 0);
        const double cv = first(0, 1);
        if (std::abs(cu) > kZeroTol) {
            violate_c("coefficient (1,0) = " + fmt_num(cu) + " must vanish");
        }
        if (cls == AdmissibleClass::A && std::abs(cv) > kZeroTol) {
            violate_c("coefficient (0,1) = " + fmt_num(cv) + " must vanish");
        }
    } else {
        // d_u F(u0, v) as a polynomial in v: coefficient of v^n collects
        // coeff * d/du[u^m/(1+u^h)](u0) over summands with that n.
        std::map<int, double> du_poly;
        for (const auto& t : term.terms()) {
            du_poly[t.n] += t.coeff * rational_u_derivative(t.m, t.h, 1, base.u0);
        }
        for (const auto& [n, c] : du_poly) {
            if (std::abs(c) <= kZeroTol) continue;
            std::string msg = "d_u " + fname + "(u0, v) has v^" + std::to_string(n) +
                              " coefficient " + fmt_num(c);
            if (n == 0) msg += " (the (1,0) coefficient)";
            violate_c(msg);
        }
        if (cls == AdmissibleClass::A) {
            // d_v F(u, v0) = sum coeff*n*v0^(n-1) u^m / (1+u^h); multiplying
            // by (1+u) clears the denominator into a polynomial in u.
            std::map<int, double> dv_poly;
            for (const auto& t : term.terms()) {
                const double c = t.coeff * power_derivative(t.n, 1, base.v0);
                if (c == 0.0) continue;
                if (t.h == 0) {
                    dv_poly[t.m] += c;
                    dv_poly[t.m + 1] += c;
                } else {
                    dv_poly[t.m] += c;
                }
            }
            for (const auto& [p, c] : dv_poly) {
                if (std::abs(c) <= kZeroTol) continue;
                violate_c("(1+u) d_v F(u, v0) has u^" + std::to_string(p) + " coefficient " +
                          fmt_num(c));
            }
        }
    }
    rep.condition_d_ok = true;
    return rep;
}

std::string to_string(PresetKind kind) {
    switch (kind) {
        case PresetKind::hydra: return "hydra";
        case PresetKind::holling_tanner: return "holling_tanner";
        case PresetKind::bazykin: return "bazykin";
        case PresetKind::custom: return "custom";
    }
    return "custom";
}

PresetKind preset_kind_from_string(const std::string& name) {
    if (name == "hydra") return PresetKind::hydra;
    if (name == "holling_tanner") return PresetKind::holling_tanner;
    if (name == "bazykin") return PresetKind::bazykin;
    if (name == "custom") return PresetKind::custom;
    fail(ErrorKind::InvalidParam, "unknown model kind '" + name + "'");
}

std::map<std::string, double> default_params(PresetKind kind) {
    switch (kind) {
        case PresetKind::hydra:
            return {{"a", 1.0}, {"b", 1.0}, {"e", 1.0}, {"p", 1.0},
                    {"lambda", 0.5}, {"mu", 2.0}, {"m", 0.3}};
        case PresetKind::holling_tanner:
            return {{"alpha", 1.0}, {"beta", 2.0}, {"gamma", 1.0}, {"delta", 0.3}};
        case PresetKind::bazykin:
            return {{"a", 1.0}, {"K", 2.0}, {"b", 0.5}, {"A", 1.0},
                    {"c", 0.5}, {"d", 0.8}, {"h", 0.2}};
        case PresetKind::custom:
            return {};
    }
    return {};
}

namespace {

void require_positive(const std::map<std::string, double>& p, std::initializer_list<const char*> names) {
    for (const char* name : names) {
        const double value = p.at(name);
        if (!(value > 0.0) || !std::isfinite(value)) {
            fail(ErrorKind::InvalidParam, std::string("parameter '") + name + "' must be strictly positive");
        }
    }
}

void require_unit(const std::map<std::string, double>& p, const char* name) {
    if (p.at(name) != 1.0) {
        fail(ErrorKind::InvalidParam,
             std::string("parameter '") + name +
                 "' must be 1: rational factors are represented over (1 + u) only");
    }
}

void check_base_solutions(const ModelPreset& model) {
    for (const auto& b : model.base_solutions) {
        if (b.u0 < 0.0 || b.v0 < 0.0) {
            fail(ErrorKind::InvalidParam, "base solutions must be non-negative");
        }
        const double f = model.F(b.u0, b.v0);
        const double g = model.G(b.u0, b.v0);
        if (std::abs(f) > kZeroTol || std::abs(g) > kZeroTol) {
            std::ostringstream os;
            os << "(" << b.u0 << "," << b.v0 << ") is not a constant solution: F = " << f
               << ", G = " << g;
            fail(ErrorKind::InvalidParam, os.str());
        }
    }
}

void check_diffusion(Diffusion d) {
    if (!(d.d1 > 0.0) || !(d.d2 > 0.0)) {
        fail(ErrorKind::InvalidParam, "diffusion coefficients must be strictly positive");
    }
}

}  // namespace

ModelPreset preset(PresetKind kind, const std::map<std::string, double>& params, Diffusion diffusion) {
    if (kind == PresetKind::custom) {
        fail(ErrorKind::InvalidParam, "custom models are built from explicit term lists");
    }
    check_diffusion(diffusion);
    ModelPreset out;
    out.kind = kind;
    out.diffusion = diffusion;
    out.params = default_params(kind);
    for (const auto& [name, value] : params) {
        if (!out.params.contains(name)) {
            fail(ErrorKind::InvalidParam, "unknown parameter '" + name + "' for " + to_string(kind));
        }
        if (!std::isfinite(value)) fail(ErrorKind::InvalidParam, "parameter '" + name + "' is not finite");
        out.params[name] = value;
    }
    const auto& p = out.params;

    switch (kind) {
        case PresetKind::hydra: {
            require_positive(p, {"a", "b", "e", "p", "mu", "m"});
            if (p.at("lambda") < 0.0) fail(ErrorKind::InvalidParam, "parameter 'lambda' must be >= 0");
            const double a = p.at("a"), b = p.at("b"), e = p.at("e"), pr = p.at("p");
            const double lam = p.at("lambda"), mu = p.at("mu"), m = p.at("m");
            // F = (a-b)u - e u^2 - (p + lambda v) u v
            out.F = TermBuilder{}.add(1, 0, 0, a - b).add(2, 0, 0, -e).add(1, 1, 0, -pr).add(1, 2, 0, -lam).build();
            // G = mu (p + lambda v) u v - m v
            out.G = TermBuilder{}.add(0, 1, 0, -m).add(1, 1, 0, mu * pr).add(1, 2, 0, mu * lam).build();
            out.base_solutions.push_back({0.0, 0.0});
            if (a > b) out.base_solutions.push_back({(a - b) / e, 0.0});
            break;
        }
        case PresetKind::holling_tanner: {
            require_positive(p, {"alpha", "beta", "gamma"});
            require_unit(p, "alpha");
            const double beta = p.at("beta"), gamma = p.at("gamma"), delta = p.at("delta");
            // F = u(1-u) - beta u v/(1+u),  G = -delta v - v^2 + gamma u v/(1+u)
            out.F = TermBuilder{}.add(1, 0, 0, 1.0).add(2, 0, 0, -1.0).add(1, 1, 1, -beta).build();
            out.G = TermBuilder{}.add(0, 1, 0, -delta).add(0, 2, 0, -1.0).add(1, 1, 1, gamma).build();
            out.base_solutions = {{0.0, 0.0}, {1.0, 0.0}};
            break;
        }
        case PresetKind::bazykin: {
            require_positive(p, {"a", "K", "b", "A", "c", "d", "h"});
            require_unit(p, "A");
            const double a = p.at("a"), K = p.at("K"), b = p.at("b");
            const double c = p.at("c"), d = p.at("d"), h = p.at("h");
            // F = a u (1 - u/K) - b u v/(1+u),  G = -c v + d u v/(1+u) - h v^2
            out.F = TermBuilder{}.add(1, 0, 0, a).add(2, 0, 0, -a / K).add(1, 1, 1, -b).build();
            out.G = TermBuilder{}.add(0, 1, 0, -c).add(1, 1, 1, d).add(0, 2, 0, -h).build();
            out.base_solutions = {{0.0, 0.0}, {K, 0.0}};
            break;
        }
        case PresetKind::custom:
            break;
    }
    check_base_solutions(out);
    return out;
}

ModelPreset custom_model(RationalTaylorTerm F, RationalTaylorTerm G,
                         std::vector<BasePoint> base_solutions, Diffusion diffusion) {
    check_diffusion(diffusion);
    if (base_solutions.empty()) fail(ErrorKind::InvalidParam, "custom model needs at least one base solution");
    ModelPreset out;
    out.kind = PresetKind::custom;
    out.F = std::move(F);
    out.G = std::move(G);
    out.base_solutions = std::move(base_solutions);
    out.diffusion = diffusion;
    check_base_solutions(out);
    return out;
}

}  // namespace lvinv::model
