#pragma once

#include "lvinv/forward.hpp"
#include "lvinv/model.hpp"
#include "lvinv/spectral.hpp"

#include <array>
#include <span>
#include <utility>
#include <vector>

namespace lvinv::variation {

using forward::MeasurementRecord;
using forward::SolverConfig;
using model::BasePoint;
using model::TaylorTable;
using spectral::Grid1D;
using spectral::SpaceField;
using spectral::SpaceTimeField;

/// Orders above this need an explicit opt-in; FD noise grows like eps^-k.
inline constexpr int kDefaultOrderCap = 4;

/// Initial data f = u0 + sum eps^i f_i, g = v0 + sum eps^i g_i.
struct EpsilonFamily {
    BasePoint base;
    std::vector<SpaceField> f;  ///< f_1, f_2, ...
    std::vector<SpaceField> g;  ///< g_1, g_2, ...
    std::vector<double> epsilons;
};

/// Checks the first-order sign rule at a zero base value and that every
/// listed epsilon assembles nonnegative data. Throws InvalidParam,
/// GridMismatch or NegativeData.
void validate(const EpsilonFamily& family, const Grid1D& grid);

/// Throws NegativeData if the assembled data is negative at any node.
std::pair<SpaceField, SpaceField> assemble_initial(const EpsilonFamily& family, double eps);

/// {eps, 2 eps, 4 eps, ...}
std::vector<double> geometric_ladder(double eps, int count = 3);

/// Each Richardson level prepends half the current smallest epsilon.
std::vector<double> with_richardson(std::vector<double> ladder, int levels);

/// Weights w with D_k y(0) ~ sum_j w_j (y(eps_j) - y(0)). The samples are fit by
/// sum_{i=1..M} c_i eps^i on nodes scaled by max(eps).
struct FdStencil {
    int order = 0;
    std::vector<double> epsilons;
    std::vector<double> weights;
    double condition = 0.0;
};

/// Throws InvalidParam for fewer samples than `order`, repeated or
/// nonpositive epsilons; IllConditionedStencil when cond > 1e12.
FdStencil fd_stencil(const std::vector<double>& epsilons, int order);

std::vector<double> apply_stencil(const FdStencil& stencil, const std::vector<std::span<const double>>& samples,
                                  double base);

/// k-th epsilon derivative at 0 of full solution fields.
SpaceTimeField extract_variation_fd(const std::vector<const SpaceTimeField*>& fields,
                                    const std::vector<double>& epsilons, double base, int order);

/// k-th epsilon derivative at 0 of measurement data. The epsilon tag of the
/// result is 0.
MeasurementRecord extract_variation_fd(const std::vector<MeasurementRecord>& records, BasePoint base,
                                       int order);

/// Power series in epsilon truncated at a fixed degree.
class TruncatedSeries {
public:
    static constexpr int kMaxDegree = 12;

    TruncatedSeries() = default;
    explicit TruncatedSeries(int degree);

    int degree() const noexcept { return degree_; }
    double& operator[](int i) { return c_[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return c_[static_cast<std::size_t>(i)]; }

    TruncatedSeries& operator+=(const TruncatedSeries& other);
    TruncatedSeries& operator*=(double s);
    friend TruncatedSeries operator*(const TruncatedSeries& a, const TruncatedSeries& b);

private:
    int degree_ = 0;
    std::array<double, kMaxDegree + 1> c_{};
};

enum class Provenance { fd, direct };

/// Variation fields u^(k) = d^k u / d eps^k at eps = 0, k = 1..max_order.
class VariationStack {
public:
    int max_order() const noexcept { return static_cast<int>(u_.size()); }

    /// Appends order max_order()+1. Throws GridMismatch on layout changes.
    void push(SpaceTimeField u, SpaceTimeField v, Provenance provenance);

    const SpaceTimeField& u(int k) const;
    const SpaceTimeField& v(int k) const;
    Provenance provenance(int k) const;

private:
    std::vector<SpaceTimeField> u_;
    std::vector<SpaceTimeField> v_;
    std::vector<Provenance> provenance_;
};

/// k! [eps^k] of sum_{2<=m+n<=k} T_mn/(m! n!) du^m dv^n with du = sum u_i eps^i / i!.
/// `u_orders[i-1]` is u^(i). First-order table entries are not used.
double source_value(int k, const TaylorTable& table, std::span<const double> u_orders,
                    std::span<const double> v_orders);

struct SourcePair {
    SpaceTimeField S_F;
    SpaceTimeField S_G;
};

/// Order-k sources of the variation system. Throws MissingLowerOrder when the
/// stack lacks an order below k.
SourcePair variation_source(int k, const VariationStack& stack, const TaylorTable& tableF,
                            const TaylorTable& tableG);

/// Linear order-k system
///   u_t - d1 u_xx - F10 u - F01 v = S_F,  v_t - d2 v_xx - G10 u - G01 v = S_G
/// with initial data (k! f_k, k! g_k), stepped with the forward scheme.
std::pair<SpaceTimeField, SpaceTimeField> solve_variation_direct(
    int k, const VariationStack& stack, const TaylorTable& tableF, const TaylorTable& tableG,
    const SpaceField& fk, const SpaceField& gk, const Grid1D& grid, double T, model::Diffusion diffusion,
    const SolverConfig& config);

/// First-order linearisation along each direction (f^j, g^j), using the
/// Jacobian of the model right-hand sides at `base`.
std::vector<std::pair<SpaceTimeField, SpaceTimeField>> linearize_first_order(
    const model::ModelPreset& preset, BasePoint base,
    const std::vector<std::pair<SpaceField, SpaceField>>& directions, const Grid1D& grid, double T,
    const SolverConfig& config);

/// Forward solves over family.epsilons, run concurrently; results keep the
/// ladder order.
std::vector<forward::ForwardSolution> solve_ladder(const model::ModelPreset& preset, const Grid1D& grid,
                                                   const EpsilonFamily& family, double T,
                                                   const SolverConfig& config);

/// Stack of orders 1..max_order by FD extraction from ladder solutions.
VariationStack fd_stack(const std::vector<forward::ForwardSolution>& ladder, const std::vector<double>& epsilons,
                        BasePoint base, int max_order);

/// Stack of orders 1..max_order by direct solves.
VariationStack direct_stack(int max_order, const TaylorTable& tableF, const TaylorTable& tableG,
                            const EpsilonFamily& family, const Grid1D& grid, double T,
                            model::Diffusion diffusion, const SolverConfig& config);

/// f_k of the family, or zeros when the family lists fewer orders.
SpaceField family_term(const std::vector<SpaceField>& terms, int k, std::size_t size);

}  // namespace lvinv::variation
