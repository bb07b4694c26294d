#pragma once

#include <map>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace lvinv::model {

/// One summand coeff * p^m q^n / (1 + p^h).
///
/// h = 0 denotes a plain monomial (no denominator); h = 1 divides by (1 + p).
struct Monomial {
    int m = 0;
    int n = 0;
    int h = 0;
    double coeff = 0.0;
};

struct BasePoint {
    double u0 = 0.0;
    double v0 = 0.0;
};

struct Gradient {
    double du = 0.0;
    double dv = 0.0;
};

/// Interaction term as a finite sum of (optionally rational) monomials.
/// Immutable after construction.
class RationalTaylorTerm {
public:
    RationalTaylorTerm() = default;

    /// Throws InvalidParam on negative exponents, h outside {0,1}, non-finite
    /// coefficients or a repeated (m,n,h) triple.
    explicit RationalTaylorTerm(std::vector<Monomial> terms);

    std::span<const Monomial> terms() const noexcept { return terms_; }
    bool empty() const noexcept { return terms_.empty(); }

    /// Highest total degree m+n over all summands.
    int degree() const noexcept;
    bool has_denominator() const noexcept;

    double operator()(double u, double v) const;
    Gradient gradient(double u, double v) const;

private:
    std::vector<Monomial> terms_;
};

/// Incrementally assembles a term; repeated (m,n,h) triples are summed.
class TermBuilder {
public:
    TermBuilder& add(int m, int n, int h, double coeff);
    RationalTaylorTerm build() const;

private:
    std::map<std::tuple<int, int, int>, double> acc_;
};

double evaluate(const RationalTaylorTerm& term, double u, double v);

using MultiIndex = std::pair<int, int>;

/// Partial derivatives d^m_u d^n_v of a function at a base point, stored for
/// every multi-index with 1 <= m+n <= max_order (zeros included).
class TaylorTable {
public:
    TaylorTable() = default;
    TaylorTable(BasePoint base, int max_order);

    BasePoint base() const noexcept { return base_; }
    int max_order() const noexcept { return max_order_; }

    /// Zero for multi-indices above max_order.
    double operator()(int m, int n) const;
    double at(MultiIndex idx) const { return (*this)(idx.first, idx.second); }
    void set(int m, int n, double value);

    const std::map<MultiIndex, double>& coeffs() const noexcept { return coeffs_; }

    /// Multi-indices with m+n == k, ordered by decreasing m: (k,0), (k-1,1), ...
    static std::vector<MultiIndex> indices_of_order(int k);

    /// Copy keeping only orders in [lo, hi]; other entries become zero.
    TaylorTable restricted(int lo, int hi) const;

private:
    BasePoint base_{};
    int max_order_ = 0;
    std::map<MultiIndex, double> coeffs_;
};

/// Exact derivatives at `base` up to total order `max_order`.
TaylorTable taylor_at(const RationalTaylorTerm& term, BasePoint base, int max_order);

enum class AdmissibleClass { A, B };

/// How condition (c) is read. `base_point` requires the first-order Taylor
/// coefficients at the base to vanish (what the linearised systems use);
/// `full_trace` requires the derivative traces to vanish identically along the
/// lines v = v0 and u = u0.
enum class TraceRule { base_point, full_trace };

struct AdmissibilityReport {
    AdmissibleClass cls = AdmissibleClass::A;
    bool condition_b_ok = true;
    bool condition_c_ok = true;
    bool condition_d_ok = true;
    std::vector<std::string> violations;

    bool ok() const noexcept { return condition_b_ok && condition_c_ok && condition_d_ok; }
};

AdmissibilityReport check_admissible(const RationalTaylorTerm& term, AdmissibleClass cls,
                                     BasePoint base, TraceRule rule = TraceRule::base_point);

enum class PresetKind { hydra, holling_tanner, bazykin, custom };

std::string to_string(PresetKind kind);
PresetKind preset_kind_from_string(const std::string& name);

struct Diffusion {
    double d1 = 1.0;
    double d2 = 1.0;
};

/// Full right-hand sides (growth plus interaction) of a predator-prey system.
struct ModelPreset {
    PresetKind kind = PresetKind::custom;
    std::map<std::string, double> params;
    RationalTaylorTerm F;
    RationalTaylorTerm G;
    std::vector<BasePoint> base_solutions;
    Diffusion diffusion;
};

/// Default parameters of a preset kind, keyed by ASCII name
/// (e.g. "lambda", "mu" for the hydra model).
std::map<std::string, double> default_params(PresetKind kind);

/// Builds a preset, overriding defaults with `params`. Throws InvalidParam on
/// unknown names or violated positivity. The rational factors are represented
/// over (1 + u), so the half-saturation parameters (A for bazykin, alpha for
/// holling_tanner) must equal 1.
ModelPreset preset(PresetKind kind, const std::map<std::string, double>& params = {},
                   Diffusion diffusion = {});

/// Model from explicit term lists. Every base solution must zero both
/// right-hand sides to 1e-12.
ModelPreset custom_model(RationalTaylorTerm F, RationalTaylorTerm G,
                         std::vector<BasePoint> base_solutions, Diffusion diffusion = {});

}  // namespace lvinv::model
