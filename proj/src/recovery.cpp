#include "lvinv/recovery.hpp"

#include "lvinv/error.hpp"
#include "lvinv/io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>

namespace lvinv::recovery {

namespace {

double factorial(int k) {
    double out = 1.0;
    for (int i = 2; i <= k; ++i) out *= i;
    return out;
}

double theta_of(forward::Scheme scheme) { return scheme == forward::Scheme::backward_euler_imex ? 1.0 : 0.5; }

/// Coefficients of a^{n+1} = A a^n + B a^{n-1} + C s^n + D s^{n-1} for the
/// projected scheme at step n.
struct StepCoeffs {
    double A, B, C, D;
};

StepCoeffs step_coeffs(int n, double mu_h, double d, double c, double dt, forward::Scheme scheme) {
    const double theta = theta_of(scheme);
    const double r = d * dt * mu_h;
    const double denom = 1.0 + theta * r;
    const double expl = 1.0 - (1.0 - theta) * r;
    if (scheme == forward::Scheme::backward_euler_imex || n == 0) {
        return {(expl + dt * c) / denom, 0.0, dt / denom, 0.0};
    }
    return {(expl + 1.5 * dt * c) / denom, -0.5 * dt * c / denom, 1.5 * dt / denom, -0.5 * dt / denom};
}

/// log a^N for a^0 = 1 and zero source.
double log_growth(double c, double mu_h, double d, double T, const SolverConfig& config) {
    const int N = config.steps;
    const double dt = T / N;
    double prev = 0.0, cur = 1.0, log_scale = 0.0;
    for (int n = 0; n < N; ++n) {
        const auto s = step_coeffs(n, mu_h, d, c, dt, config.scheme);
        const double next = s.A * cur + s.B * prev;
        if (!(next > 0.0)) return -std::numeric_limits<double>::infinity();
        prev = cur / next;
        cur = 1.0;
        log_scale += std::log(next);
    }
    return log_scale;
}

double invert_growth(double log_ratio, double mu_h, double d, double T, const SolverConfig& config) {
    const double guess = log_ratio / T + d * mu_h;
    auto f = [&](double c) { return log_growth(c, mu_h, d, T, config) - log_ratio; };
    double lo = guess - 1.0, hi = guess + 1.0;
    for (int i = 0; i < 60 && f(lo) > 0.0; ++i) lo -= (hi - lo);
    for (int i = 0; i < 60 && f(hi) < 0.0; ++i) hi += (hi - lo);
    if (!(f(lo) <= 0.0 && f(hi) >= 0.0)) fail(ErrorKind::SignLoss, "cannot bracket the first-order rate");
    for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> project_rows(const SpaceTimeField& field, const EigenMode& mode) {
    std::vector<double> out(static_cast<std::size_t>(field.steps()) + 1);
    for (int n = 0; n <= field.steps(); ++n) out[n] = spectral::inner(field.grid(), field.row(n), mode.phi);
    return out;
}

/// Rows this small relative to the largest carry only roundoff (modes the
/// experiment does not excite) and are left out of the fit.
constexpr double kNegligibleRow = 1e-9;

double weighted_sum(const std::vector<double>& w, const std::vector<double>& p) {
    double sum = 0.0;
    for (std::size_t n = 0; n < w.size(); ++n) sum += w[n] * p[n];
    return sum;
}

std::string label(char target, int m, int n) { return std::string(1, target) + std::to_string(m) + std::to_string(n); }

void require_grid(const SpaceField& field, const Grid1D& grid, const char* what) {
    if (field.size() != grid.size()) fail(ErrorKind::GridMismatch, std::string(what) + " does not match the grid");
}

}  // namespace

std::string_view to_string(Weighting w) { return w == Weighting::scheme ? "scheme" : "continuous"; }

Weighting weighting_from_string(std::string_view name) {
    if (name == "scheme") return Weighting::scheme;
    if (name == "continuous") return Weighting::continuous;
    fail(ErrorKind::InvalidParam, "unknown weighting '" + std::string(name) + "' (expected scheme or continuous)");
}

IdentityWeights continuous_weights(const EigenMode& mode, double d, double c, double T, int steps) {
    if (steps < 1 || !(T > 0.0)) fail(ErrorKind::InvalidParam, "identity weights need T > 0 and steps >= 1");
    const double rate = d * mode.mu - c;
    const double dt = T / steps;
    IdentityWeights w;
    w.terminal = std::exp(rate * T);
    w.initial = 1.0;
    w.source.resize(static_cast<std::size_t>(steps) + 1);
    for (int n = 0; n <= steps; ++n) {
        const double trap = (n == 0 || n == steps) ? 0.5 : 1.0;
        w.source[n] = trap * dt * std::exp(rate * T * n / steps);
    }
    return w;
}

IdentityWeights scheme_weights(const EigenMode& mode, double d, double c, double T, const SolverConfig& config) {
    const int N = config.steps;
    if (N < 1 || !(T > 0.0)) fail(ErrorKind::InvalidParam, "identity weights need T > 0 and steps >= 1");
    const double dt = T / N;
    std::vector<StepCoeffs> coeffs;
    coeffs.reserve(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) coeffs.push_back(step_coeffs(n, mode.mu_discrete, d, c, dt, config.scheme));

    std::vector<double> p(static_cast<std::size_t>(N) + 2, 0.0);
    p[N] = 1.0;
    for (int n = N - 1; n >= 0; --n) {
        const double b_next = n + 1 < N ? coeffs[n + 1].B : 0.0;
        p[n] = p[n + 1] * coeffs[n].A + p[n + 2] * b_next;
    }
    IdentityWeights w;
    const double lambda0 = p[0];
    if (!(std::abs(lambda0) > 0.0) || !std::isfinite(lambda0)) {
        fail(ErrorKind::NonFiniteState, "discrete adjoint underflowed; use fewer modes or a shorter horizon");
    }
    w.terminal = 1.0 / lambda0;
    w.initial = 1.0;
    w.source.assign(static_cast<std::size_t>(N) + 1, 0.0);
    for (int n = 0; n < N; ++n) {
        const double d_next = n + 1 < N ? coeffs[n + 1].D : 0.0;
        w.source[n] = (p[n + 1] * coeffs[n].C + p[n + 2] * d_next) / lambda0;
    }
    return w;
}

IdentityWeights identity_weights(Weighting weighting, const EigenMode& mode, double d, double c, double T,
                                 const SolverConfig& config) {
    return weighting == Weighting::scheme ? scheme_weights(mode, d, c, T, config)
                                          : continuous_weights(mode, d, c, T, config.steps);
}

double duhamel_projection(const Grid1D& grid, const SpaceField& w_T, const SpaceField& w_0, const SpaceTimeField& S,
                          const EigenMode& mode, const IdentityWeights& weights) {
    require_grid(w_T, grid, "terminal snapshot");
    require_grid(w_0, grid, "initial snapshot");
    require_grid(mode.phi, grid, "mode");
    if (!(S.grid() == grid)) fail(ErrorKind::GridMismatch, "source lives on a different grid");
    if (weights.source.size() != static_cast<std::size_t>(S.steps()) + 1) {
        fail(ErrorKind::GridMismatch, "weights and source differ in time levels");
    }
    return weights.terminal * spectral::inner(grid, w_T, mode.phi) - weights.initial * spectral::inner(grid, w_0, mode.phi) -
           weighted_sum(weights.source, project_rows(S, mode));
}

double duhamel_projection(const Grid1D& grid, const SpaceField& w_T, const SpaceField& w_0, const SpaceTimeField& S,
                          const EigenMode& mode, double d, double c, double T) {
    if (S.final_time() != T) fail(ErrorKind::GridMismatch, "source horizon differs from T");
    return duhamel_projection(grid, w_T, w_0, S, mode, continuous_weights(mode, d, c, T, S.steps()));
}

FirstOrderResult recover_first_order(const std::vector<FirstOrderSample>& samples, const std::vector<int>& modes,
                                     double d, const Grid1D& grid, double T, Weighting weighting,
                                     const SolverConfig& config) {
    if (!(d > 0.0)) fail(ErrorKind::InvalidParam, "diffusion must be positive");
    FirstOrderResult out;
    bool any_data = false;
    for (const auto& s : samples) {
        require_grid(s.initial, grid, "first-order initial data");
        require_grid(s.terminal, grid, "first-order terminal data");
        for (int k : modes) {
            const EigenMode mode = spectral::neumann_mode(grid, k);
            const double p0 = spectral::inner(grid, s.initial, mode.phi);
            const double pT = spectral::inner(grid, s.terminal, mode.phi);
            if (std::abs(p0) < 1e-12) continue;
            any_data = true;
            if (std::abs(pT) < 1e-12) continue;
            const double ratio = pT / p0;
            if (!(ratio > 0.0)) {
                std::ostringstream msg;
                msg << "projection ratio " << ratio << " on mode " << k << " is not positive";
                fail(ErrorKind::SignLoss, msg.str());
            }
            const double c = weighting == Weighting::continuous
                                 ? std::log(ratio) / T + d * mode.mu
                                 : invert_growth(std::log(ratio), mode.mu_discrete, d, T, config);
            out.per_mode.push_back(c);
        }
    }
    if (!any_data || out.per_mode.empty()) {
        fail(ErrorKind::DegenerateData, "every first-order data projection vanishes on the supplied modes");
    }
    const double n = static_cast<double>(out.per_mode.size());
    out.estimate = std::accumulate(out.per_mode.begin(), out.per_mode.end(), 0.0) / n;
    double var = 0.0;
    for (double c : out.per_mode) var += (c - out.estimate) * (c - out.estimate);
    out.spread = std::sqrt(var / n);
    return out;
}

OrderKSystem assemble_order_k(int k, const std::vector<OrderKExperiment>& experiments, const TaylorTable& knownF,
                              const TaylorTable& knownG, Diffusion diffusion, const Grid1D& grid, double T,
                              const RecoveryOptions& options) {
    if (k < 2) fail(ErrorKind::InvalidParam, "order-k recovery starts at k = 2");
    if (experiments.empty()) fail(ErrorKind::InvalidParam, "no experiments supplied");
    if (options.modes.empty()) fail(ErrorKind::InvalidParam, "no projection modes supplied");
    if (std::abs(knownF(0, 1)) > 1e-12 || std::abs(knownG(1, 0)) > 1e-12) {
        std::ostringstream msg;
        msg << "off-diagonal first-order coupling (F01 = " << knownF(0, 1) << ", G10 = " << knownG(1, 0)
            << ") is not supported by the projection identities";
        fail(ErrorKind::UnsupportedCoupling, msg.str());
    }
    const double cF = knownF(1, 0);
    const double cG = knownG(0, 1);

    std::vector<EigenMode> modes;
    std::vector<IdentityWeights> wF, wG;
    for (int j : options.modes) {
        modes.push_back(spectral::neumann_mode(grid, j));
        wF.push_back(identity_weights(options.weighting, modes.back(), diffusion.d1, cF, T, options.solver));
        wG.push_back(identity_weights(options.weighting, modes.back(), diffusion.d2, cG, T, options.solver));
    }

    OrderKSystem sys;
    sys.order = k;
    sys.unknowns = TaylorTable::indices_of_order(k);
    const int P = static_cast<int>(sys.unknowns.size());
    const int rows = static_cast<int>(experiments.size() * modes.size());
    sys.A_F.setZero(rows, P);
    sys.A_G.setZero(rows, P);
    sys.b_F.setZero(rows);
    sys.b_G.setZero(rows);

    const double kf = factorial(k);
    const TaylorTable lowF = knownF.restricted(2, k - 1);
    const TaylorTable lowG = knownG.restricted(2, k - 1);
    std::vector<double> basis_scale;
    for (const auto& [m, n] : sys.unknowns) basis_scale.push_back(kf / (factorial(m) * factorial(n)));

    int row = 0;
    for (const auto& ex : experiments) {
        if (ex.lower.max_order() < k - 1) {
            fail(ErrorKind::MissingLowerOrder, "experiment stack lacks orders below " + std::to_string(k));
        }
        const SpaceTimeField& u1 = ex.lower.u(1);
        const SpaceTimeField& v1 = ex.lower.v(1);
        if (!(u1.grid() == grid) || u1.final_time() != T || u1.steps() != options.solver.steps) {
            fail(ErrorKind::GridMismatch, "variation stack layout differs from the recovery grid");
        }
        require_grid(ex.fk, grid, "f_k");
        require_grid(ex.gk, grid, "g_k");
        require_grid(ex.uk_terminal, grid, "u_k terminal");
        require_grid(ex.vk_terminal, grid, "v_k terminal");

        const std::size_t levels = static_cast<std::size_t>(u1.steps()) + 1;
        const std::size_t M = modes.size();
        // proj[(i * M + j) * levels + n] = <basis_i(t_n), phi_j>
        std::vector<double> proj(static_cast<std::size_t>(P) * M * levels, 0.0);
        const auto w = grid.weights();
        std::vector<double> pu(static_cast<std::size_t>(k) + 1), pv(static_cast<std::size_t>(k) + 1);
        for (std::size_t n = 0; n < levels; ++n) {
            const auto ur = u1.row(static_cast<int>(n));
            const auto vr = v1.row(static_cast<int>(n));
            for (std::size_t x = 0; x < ur.size(); ++x) {
                pu[0] = pv[0] = 1.0;
                for (int q = 1; q <= k; ++q) {
                    pu[q] = pu[q - 1] * ur[x];
                    pv[q] = pv[q - 1] * vr[x];
                }
                for (int i = 0; i < P; ++i) {
                    const auto [m, nn] = sys.unknowns[static_cast<std::size_t>(i)];
                    const double val = w[x] * basis_scale[i] * pu[m] * pv[nn];
                    for (std::size_t j = 0; j < M; ++j) proj[(i * M + j) * levels + n] += val * modes[j].phi[x];
                }
            }
        }

        std::optional<variation::SourcePair> known;
        if (k >= 3) known = variation::variation_source(k, ex.lower, lowF, lowG);

        for (std::size_t j = 0; j < M; ++j) {
            for (int i = 0; i < P; ++i) {
                const std::vector<double> pij(proj.begin() + (i * M + j) * levels,
                                              proj.begin() + (i * M + j + 1) * levels);
                sys.A_F(row, i) = weighted_sum(wF[j].source, pij);
                sys.A_G(row, i) = weighted_sum(wG[j].source, pij);
            }
            const double ukT = spectral::inner(grid, ex.uk_terminal, modes[j].phi);
            const double vkT = spectral::inner(grid, ex.vk_terminal, modes[j].phi);
            const double uk0 = kf * spectral::inner(grid, ex.fk, modes[j].phi);
            const double vk0 = kf * spectral::inner(grid, ex.gk, modes[j].phi);
            double bF = wF[j].terminal * ukT - wF[j].initial * uk0;
            double bG = wG[j].terminal * vkT - wG[j].initial * vk0;
            if (known) {
                bF -= weighted_sum(wF[j].source, project_rows(known->S_F, modes[j]));
                bG -= weighted_sum(wG[j].source, project_rows(known->S_G, modes[j]));
            }
            sys.b_F(row) = bF;
            sys.b_G(row) = bG;
            ++row;
        }
    }
    return sys;
}

LeastSquaresSolution solve_least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tikhonov,
                                         double rank_tol) {
    if (A.rows() != b.size() || A.rows() < 1 || A.cols() < 1) fail(ErrorKind::InvalidParam, "malformed least-squares system");
    if (tikhonov < 0.0) fail(ErrorKind::InvalidParam, "Tikhonov damping must be >= 0");
    const Eigen::Index P = A.cols();
    double max_row = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) max_row = std::max(max_row, A.row(i).norm());
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        if (A.row(i).norm() > kNegligibleRow * max_row) kept.push_back(i);
    }
    const Eigen::Index R = static_cast<Eigen::Index>(kept.size());
    Eigen::MatrixXd E(R, P);
    Eigen::VectorXd rhs(R);
    for (Eigen::Index i = 0; i < R; ++i) {
        const double scale = 1.0 / A.row(kept[i]).norm();
        E.row(i) = scale * A.row(kept[i]);
        rhs(i) = scale * b(kept[i]);
    }
    Eigen::VectorXd cs(P);
    for (Eigen::Index j = 0; j < P; ++j) {
        const double nrm = E.col(j).norm();
        cs(j) = nrm > 0.0 ? 1.0 / nrm : 1.0;
    }
    E = E * cs.asDiagonal();

    LeastSquaresSolution out;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv(0) : 0.0;
    const Eigen::Index K = sv.size();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < K; ++i) {
        if (sv(i) > rank_tol * smax) ++rank;
    }
    out.condition = rank == P && K == P ? smax / sv(P - 1) : std::numeric_limits<double>::infinity();
    if (rank < P) {
        const Eigen::MatrixXd& V = svd.matrixV();
        for (Eigen::Index i = 0; i < P; ++i) {
            double weight = 0.0;
            for (Eigen::Index j = rank; j < P; ++j) weight += V(i, j) * V(i, j);
            if (weight > 1e-6) out.unidentifiable.push_back(static_cast<int>(i));
        }
        return out;
    }

    Eigen::MatrixXd M = E;
    if (tikhonov > 0.0) {
        M.conservativeResize(R + P, P);
        M.bottomRows(P) = std::sqrt(tikhonov) * Eigen::MatrixXd::Identity(P, P);
        rhs.conservativeResize(R + P);
        rhs.tail(P).setZero();
    }
    const Eigen::VectorXd y = M.colPivHouseholderQr().solve(rhs);
    out.x = cs.asDiagonal() * y;
    const double bn = b.norm();
    out.residual = bn > 0.0 ? (A * out.x - b).norm() / bn : (A * out.x - b).norm();
    return out;
}

OrderKResult recover_order_k(int k, const std::vector<OrderKExperiment>& experiments, const TaylorTable& knownF,
                             const TaylorTable& knownG, Diffusion diffusion, const Grid1D& grid, double T,
                             const RecoveryOptions& options) {
    const OrderKSystem sys = assemble_order_k(k, experiments, knownF, knownG, diffusion, grid, T, options);
    const auto solF = solve_least_squares(sys.A_F, sys.b_F, options.tikhonov, options.rank_tol);
    const auto solG = solve_least_squares(sys.A_G, sys.b_G, options.tikhonov, options.rank_tol);
    if (!solF.unidentifiable.empty() || !solG.unidentifiable.empty()) {
        std::vector<std::string> names;
        for (int i : solF.unidentifiable) names.push_back(label('F', sys.unknowns[i].first, sys.unknowns[i].second));
        for (int i : solG.unidentifiable) names.push_back(label('G', sys.unknowns[i].first, sys.unknowns[i].second));
        std::string joined;
        for (const auto& s : names) joined += (joined.empty() ? "" : ", ") + s;
        Error err(ErrorKind::RankDeficient, "order-" + std::to_string(k) +
                                                " design cannot identify " + joined +
                                                "; add experiments that excite these products");
        err.set_unidentifiable(std::move(names));
        throw err;
    }
    OrderKResult out;
    out.order = k;
    out.residual_F = solF.residual;
    out.residual_G = solG.residual;
    out.cond_F = solF.condition;
    out.cond_G = solG.condition;
    for (std::size_t i = 0; i < sys.unknowns.size(); ++i) {
        out.coefficients.push_back({'F', sys.unknowns[i].first, sys.unknowns[i].second, solF.x(i)});
    }
    for (std::size_t i = 0; i < sys.unknowns.size(); ++i) {
        out.coefficients.push_back({'G', sys.unknowns[i].first, sys.unknowns[i].second, solG.x(i)});
    }
    return out;
}

SpaceField shifted_mode(const Grid1D& grid, int k) {
    const EigenMode mode = spectral::neumann_mode(grid, k);
    const double shift = spectral::sup_norm(mode.phi);
    SpaceField out = mode.phi;
    for (auto& x : out) x += shift;
    return out;
}

ExperimentDesign default_design(const Grid1D& grid, std::vector<double> epsilons) {
    const std::size_t n = grid.size();
    const SpaceField one(n, 1.0);
    const SpaceField phi0 = spectral::neumann_mode(grid, 0).phi;
    const SpaceField phi1p = shifted_mode(grid, 1);
    const SpaceField phi2p = shifted_mode(grid, 2);
    const SpaceField phi3p = shifted_mode(grid, 3);

    SpaceField mix(n), bump(n);
    for (std::size_t i = 0; i < n; ++i) {
        mix[i] = phi0[i] + 0.5 * phi3p[i];
        bump[i] = 1.0 + phi2p[i];
    }
    auto unit = [](SpaceField f) {
        const double s = spectral::sup_norm(f);
        for (auto& x : f) x /= s;
        return f;
    };
    ExperimentDesign design;
    design.experiments = {{{one}, {unit(phi0)}}, {{unit(phi1p)}, {unit(mix)}}, {{unit(bump)}, {unit(phi1p)}}};
    design.modes = {0, 1, 2, 3, 4};
    design.epsilons = std::move(epsilons);
    return design;
}

variation::EpsilonFamily family_for(const ExperimentSpec& spec, BasePoint base, const std::vector<double>& epsilons) {
    return variation::EpsilonFamily{base, spec.f, spec.g, epsilons};
}

std::vector<std::vector<MeasurementRecord>> generate_measurements(const model::ModelPreset& truth, BasePoint base,
                                                                  const ExperimentDesign& design, const Grid1D& grid,
                                                                  double T, const SolverConfig& config) {
    std::vector<std::vector<MeasurementRecord>> out;
    for (const auto& spec : design.experiments) {
        const auto family = family_for(spec, base, design.epsilons);
        const auto ladder = variation::solve_ladder(truth, grid, family, T, config);
        std::vector<MeasurementRecord> records;
        for (std::size_t j = 0; j < ladder.size(); ++j) {
            records.push_back(forward::measure(ladder[j].u, ladder[j].v, design.epsilons[j]));
        }
        out.push_back(std::move(records));
    }
    return out;
}

void RecoveryReport::attach_truth(const TaylorTable& trueF, const TaylorTable& trueG) {
    for (auto& e : entries) e.truth = e.target == 'F' ? trueF(e.m, e.n) : trueG(e.m, e.n);
}

double RecoveryReport::max_scaled_error() const {
    double worst = 0.0;
    for (const auto& e : entries) {
        if (e.truth) worst = std::max(worst, std::abs(e.estimate - *e.truth) / std::max(std::abs(*e.truth), 1.0));
    }
    return worst;
}

void RecoveryReport::write_csv(std::ostream& os) const {
    using io::format_number;
    os << "order,target,m,n,estimate,truth,abs_error,residual,cond\n";
    for (const auto& e : entries) {
        os << e.order << ',' << e.target << ',' << e.m << ',' << e.n << ',' << format_number(e.estimate) << ',';
        if (e.truth) os << format_number(*e.truth) << ',' << format_number(std::abs(e.estimate - *e.truth));
        else os << ',';
        os << ',' << format_number(e.residual) << ',';
        if (e.cond) os << format_number(*e.cond);
        os << '\n';
    }
}

std::string RecoveryReport::summary() const {
    std::ostringstream os;
    os.precision(6);
    os << "recovered Taylor coefficients through order " << max_order << "\n";
    for (const auto& e : entries) {
        os << "  order " << e.order << "  " << label(e.target, e.m, e.n) << " = " << e.estimate;
        if (e.truth) os << "  (truth " << *e.truth << ", |error| " << std::abs(e.estimate - *e.truth) << ")";
        if (e.cond) os << "  cond " << *e.cond;
        os << "\n";
    }
    return os.str();
}

RecoveryReport recover_from_measurements(const std::vector<std::vector<MeasurementRecord>>& measurements,
                                         const ExperimentDesign& design, const PriorKnowledge& prior, int max_order,
                                         const RecoveryOptions& options) {
    if (max_order < 1) fail(ErrorKind::InvalidParam, "max order must be >= 1");
    if (measurements.size() != design.experiments.size() || measurements.empty()) {
        fail(ErrorKind::InvalidParam, "one measurement ladder per experiment required");
    }
    const MeasurementRecord& ref = measurements.front().front();
    const Grid1D grid = ref.grid();
    const double T = ref.final_time;
    if (ref.steps() != options.solver.steps) {
        fail(ErrorKind::GridMismatch, "measurements have " + std::to_string(ref.steps()) +
                                          " steps but the declared solver uses " +
                                          std::to_string(options.solver.steps));
    }

    auto staged = [](const std::string& stage, auto&& fn) {
        try {
            return fn();
        } catch (Error& e) {
            if (e.stage().empty()) e.set_stage(stage);
            throw;
        }
    };

    std::vector<std::vector<MeasurementRecord>> derivs(measurements.size());
    staged("variation/extract", [&] {
        for (std::size_t e = 0; e < measurements.size(); ++e) {
            for (int k = 1; k <= max_order; ++k) {
                derivs[e].push_back(variation::extract_variation_fd(measurements[e], prior.base, k));
            }
        }
        return 0;
    });

    RecoveryReport report;
    report.max_order = max_order;
    report.F = TaylorTable(prior.base, max_order);
    report.G = TaylorTable(prior.base, max_order);

    const auto first = prior.G01 ? FirstOrderResult{*prior.G01, {}, 0.0} : staged("recovery/order1", [&] {
        std::vector<FirstOrderSample> samples;
        for (std::size_t e = 0; e < measurements.size(); ++e) {
            samples.push_back({variation::family_term(design.experiments[e].g, 1, grid.size()),
                               derivs[e][0].terminal_v});
        }
        return recover_first_order(samples, design.modes, prior.diffusion.d2, grid, T, options.weighting,
                                   options.solver);
    });
    report.F.set(1, 0, prior.F10);
    report.F.set(0, 1, prior.F01);
    report.G.set(0, 1, first.estimate);
    if (!prior.G01) report.entries.push_back({1, 'G', 0, 1, first.estimate, std::nullopt, first.spread, std::nullopt});

    if (max_order == 1) return report;

    std::vector<OrderKExperiment> experiments(measurements.size());
    staged("variation/direct", [&] {
        for (std::size_t e = 0; e < measurements.size(); ++e) {
            const auto& spec = design.experiments[e];
            auto [u, v] = variation::solve_variation_direct(
                1, experiments[e].lower, report.F, report.G, variation::family_term(spec.f, 1, grid.size()),
                variation::family_term(spec.g, 1, grid.size()), grid, T, prior.diffusion, options.solver);
            experiments[e].lower.push(std::move(u), std::move(v), variation::Provenance::direct);
        }
        return 0;
    });

    for (int k = 2; k <= max_order; ++k) {
        const std::string stage = "recovery/order" + std::to_string(k);
        const auto result = staged(stage, [&] {
            for (std::size_t e = 0; e < measurements.size(); ++e) {
                const auto& spec = design.experiments[e];
                experiments[e].fk = variation::family_term(spec.f, k, grid.size());
                experiments[e].gk = variation::family_term(spec.g, k, grid.size());
                experiments[e].uk_terminal = derivs[e][static_cast<std::size_t>(k) - 1].terminal_u;
                experiments[e].vk_terminal = derivs[e][static_cast<std::size_t>(k) - 1].terminal_v;
            }
            RecoveryOptions opts = options;
            opts.modes = design.modes;
            return recover_order_k(k, experiments, report.F, report.G, prior.diffusion, grid, T, opts);
        });
        for (const auto& c : result.coefficients) {
            (c.target == 'F' ? report.F : report.G).set(c.m, c.n, c.estimate);
            const bool isF = c.target == 'F';
            report.entries.push_back({k, c.target, c.m, c.n, c.estimate, std::nullopt,
                                      isF ? result.residual_F : result.residual_G,
                                      isF ? result.cond_F : result.cond_G});
        }
        if (k < max_order) {
            staged("variation/direct", [&] {
                for (std::size_t e = 0; e < measurements.size(); ++e) {
                    auto [u, v] = variation::solve_variation_direct(k, experiments[e].lower, report.F, report.G,
                                                                    experiments[e].fk, experiments[e].gk, grid, T,
                                                                    prior.diffusion, options.solver);
                    experiments[e].lower.push(std::move(u), std::move(v), variation::Provenance::direct);
                }
                return 0;
            });
        }
    }
    return report;
}

FalsificationResult falsify_uniqueness(const model::ModelPreset& a, const model::ModelPreset& b, BasePoint base,
                                       const ExperimentDesign& design, double eps, const Grid1D& grid, double T,
                                       const SolverConfig& config) {
    if (a.diffusion.d1 != b.diffusion.d1 || a.diffusion.d2 != b.diffusion.d2) {
        fail(ErrorKind::InvalidParam, "falsification requires equal diffusion coefficients");
    }
    for (const auto* m : {&a, &b}) {
        if (std::abs(m->F(base.u0, base.v0)) > 1e-12 || std::abs(m->G(base.u0, base.v0)) > 1e-12) {
            fail(ErrorKind::InvalidParam, "both models must share the base solution");
        }
    }
    FalsificationResult out;
    double scale = 0.0;
    for (const auto& spec : design.experiments) {
        const auto family = family_for(spec, base, {eps});
        variation::validate(family, grid);
        const auto [f, g] = variation::assemble_initial(family, eps);
        const auto sa = forward::solve_forward(a, grid, f, g, T, config);
        const auto sa2 = forward::solve_forward(a, grid, f, g, T, config);
        const auto sb = forward::solve_forward(b, grid, f, g, T, config);
        const auto ma = forward::measure(sa.u, sa.v, eps);
        const auto ma2 = forward::measure(sa2.u, sa2.v, eps);
        const auto mb = forward::measure(sb.u, sb.v, eps);
        out.distance = std::max(out.distance, forward::measurement_distance(ma, mb));
        out.noise_floor = std::max(out.noise_floor, forward::measurement_distance(ma, ma2));
        scale = std::max(scale, forward::measurement_norm(ma));
    }
    out.noise_floor = std::max(out.noise_floor, 1e-12 * std::max(1.0, scale));
    return out;
}

namespace {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

Eigen::VectorXd gauss_newton(const ResidualFn& residual, Eigen::VectorXd x) {
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd r = residual(x);
        Eigen::MatrixXd J(r.size(), x.size());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            const double h = 1e-7 * std::max(1.0, std::abs(x(j)));
            Eigen::VectorXd xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            J.col(j) = (residual(xp) - residual(xm)) / (2.0 * h);
        }
        const Eigen::VectorXd step = J.colPivHouseholderQr().solve(-r);
        x += step;
        if (step.norm() <= 1e-15 * std::max(1.0, x.norm())) break;
    }
    return x;
}

double relative_norm(const Eigen::VectorXd& r, const Eigen::VectorXd& data) {
    return r.norm() / std::max(1.0, data.norm());
}

void require_base(const TaylorTable& F, const TaylorTable& G, BasePoint base, int order, const char* family) {
    const auto bf = F.base();
    const auto bg = G.base();
    if (bf.u0 != base.u0 || bf.v0 != base.v0 || bg.u0 != base.u0 || bg.v0 != base.v0) {
        std::ostringstream msg;
        msg << family << " fit expects tables at (" << base.u0 << ", " << base.v0 << ")";
        fail(ErrorKind::InvalidParam, msg.str());
    }
    if (F.max_order() < order || G.max_order() < order) {
        fail(ErrorKind::InvalidParam, std::string(family) + " fit needs tables through order " + std::to_string(order));
    }
}

}  // namespace

StructuralFit fit_structural_params(model::PresetKind kind, const TaylorTable& F, const TaylorTable& G,
                                    double uncertainty) {
    StructuralFit out;
    Eigen::VectorXd data;
    ResidualFn residual;
    Eigen::VectorXd x0;
    std::vector<std::string> names;

    switch (kind) {
        case model::PresetKind::hydra: {
            require_base(F, G, {0.0, 0.0}, 3, "hydra");
            data = Eigen::Vector4d(F(1, 1), F(1, 2), G(1, 1), G(1, 2));
            residual = [data](const Eigen::VectorXd& x) {
                const double p = x(0), lam = x(1), mu = x(2);
                return Eigen::VectorXd(Eigen::Vector4d(data(0) + p, data(1) + 2.0 * lam, data(2) - mu * p,
                                                       data(3) - 2.0 * mu * lam));
            };
            const double p = -F(1, 1);
            if (std::abs(p) < 1e-12) fail(ErrorKind::InconsistentTable, "hydra fit needs a nonzero F11 = -p");
            x0 = Eigen::Vector3d(p, -0.5 * F(1, 2), G(1, 1) / p);
            names = {"p", "lambda", "mu"};
            break;
        }
        case model::PresetKind::holling_tanner: {
            require_base(F, G, {1.0, 0.0}, 3, "holling_tanner");
            data.resize(5);
            data << F(0, 1), F(1, 1), F(2, 1), G(1, 1), G(2, 1);
            residual = [data](const Eigen::VectorXd& x) {
                const double al = x(0), be = x(1), ga = x(2);
                const double s = al + 1.0;
                Eigen::VectorXd r(5);
                r << data(0) + be / s, data(1) + be * al / (s * s), data(2) - 2.0 * be * al / (s * s * s),
                    data(3) - ga * al / (s * s), data(4) + 2.0 * ga * al / (s * s * s);
                return r;
            };
            x0 = Eigen::Vector3d(1.0, -2.0 * F(0, 1), 4.0 * G(1, 1));
            names = {"alpha", "beta", "gamma"};
            break;
        }
        case model::PresetKind::bazykin: {
            require_base(F, G, {0.0, 0.0}, 3, "bazykin");
            data.resize(8);
            data << F(1, 0), F(2, 0), F(1, 1), F(2, 1), G(0, 1), G(1, 1), G(2, 1), G(0, 2);
            residual = [data](const Eigen::VectorXd& x) {
                const double a = x(0), K = x(1), b = x(2), c = x(3), d = x(4), h = x(5);
                Eigen::VectorXd r(8);
                r << data(0) - a, data(1) + 2.0 * a / K, data(2) + b, data(3) - 2.0 * b, data(4) + c,
                    data(5) - d, data(6) + 2.0 * d, data(7) + 2.0 * h;
                return r;
            };
            if (std::abs(F(2, 0)) < 1e-12) fail(ErrorKind::InconsistentTable, "bazykin fit needs a nonzero F20");
            Eigen::VectorXd g(6);
            g << F(1, 0), -2.0 * F(1, 0) / F(2, 0), -F(1, 1), -G(0, 1), G(1, 1), -0.5 * G(0, 2);
            x0 = g;
            names = {"a", "K", "b", "c", "d", "h"};
            break;
        }
        case model::PresetKind::custom:
            fail(ErrorKind::InvalidParam, "custom models have no structural parameters");
    }

    const Eigen::VectorXd x = gauss_newton(residual, x0);
    out.residual = relative_norm(residual(x), data);
    for (std::size_t i = 0; i < names.size(); ++i) out.params[names[i]] = x(static_cast<Eigen::Index>(i));
    const double threshold = 10.0 * std::max(uncertainty, 1e-9);
    if (!(out.residual <= threshold)) {
        std::ostringstream msg;
        msg << to_string(kind) << " fit residual " << out.residual << " exceeds " << threshold
            << "; the recovered table is not consistent with this family";
        fail(ErrorKind::InconsistentTable, msg.str());
    }
    return out;
}

}  // namespace lvinv::recovery
