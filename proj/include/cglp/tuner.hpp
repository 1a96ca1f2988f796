#pragma once

// Constrained grid search over (omega_r, omega_d, omega_t, gamma) for the
// PID + CgLp structure. K_p follows from the crossover, alpha from the gain
// flatness fit; omega_i and omega_f are fixed at omega_c/10 and 8 omega_c.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cglp/error.hpp"
#include "cglp/hbeta.hpp"
#include "cglp/hybrid_sim.hpp"
#include "cglp/lti.hpp"
#include "cglp/parallel.hpp"
#include "cglp/reset.hpp"

namespace cglp {

/// Tuning requirements and search space. Frequencies in rad/s.
struct TuningSpec {
    double omega_c{200.0 * std::numbers::pi};
    double phase_margin_deg{30.0};
    double modulus_margin_db{6.5};
    double omega_l{20.0 * std::numbers::pi};
    /// Bounds on (omega_r, omega_d, omega_t) as multiples of omega_c.
    std::array<double, 3> lower_bounds{0.05, 0.2, 1.0};
    std::array<double, 3> upper_bounds{1.0, 1.0, 8.0};
    std::array<double, 2> gamma_range{0.0, 1.0};
    /// Lattice points for omega_r, omega_d, omega_t, gamma.
    std::array<int, 4> resolutions{12, 12, 12, 11};

    double pm_tolerance_deg{1.0};
    /// Bound on |d(phase)/d(omega)| * omega_c at crossover [rad].
    double iso_damping_tolerance{0.05};
    double tie_tolerance_db{0.01};
    std::size_t hbeta_points{2000};
    std::size_t modulus_points{60};
    std::size_t cost_points{10};
    /// Explicit alpha; when unset alpha comes from fit_alpha.
    std::optional<double> alpha;
    std::optional<double> pade_corner;
    SimConfig sim;

    double omega_i() const { return omega_c / 10.0; }
    double omega_f() const { return 8.0 * omega_c; }

    void validate() const {
        auto bad = [](const std::string& what) { fail(ErrorKind::InvalidArgument, what); };
        if (!(omega_c > 0.0 && std::isfinite(omega_c))) bad("omega_c must be positive");
        if (!(phase_margin_deg > 0.0 && phase_margin_deg < 180.0)) bad("phase_margin must be in (0, 180) deg");
        if (!std::isfinite(modulus_margin_db)) bad("modulus_margin must be finite");
        if (!(omega_l > 0.0 && omega_l <= omega_c)) bad("omega_l must satisfy 0 < omega_l <= omega_c");
        for (std::size_t i = 0; i < 3; ++i) {
            if (!(lower_bounds[i] > 0.0)) bad("lower bounds must be positive");
            if (!(lower_bounds[i] <= upper_bounds[i])) bad("lower bounds must not exceed upper bounds");
        }
        if (!(gamma_range[0] > -1.0 && gamma_range[1] <= 1.0 && gamma_range[0] <= gamma_range[1]))
            bad("gamma_range must lie in (-1, 1]");
        for (int r : resolutions)
            if (r < 1) bad("resolutions must be at least 1");
        if (upper_bounds[0] * omega_c >= omega_f()) bad("omega_r upper bound must stay below omega_f = 8 omega_c");
        if (!(pm_tolerance_deg > 0.0 && iso_damping_tolerance > 0.0)) bad("tolerances must be positive");
        if (hbeta_points < 2 || modulus_points < 1 || cost_points < 1) bad("grid sizes too small");
        if (alpha && !(*alpha > 0.0)) bad("alpha must be positive");
        sim.validate();
    }
};

/// Constraints in evaluation order (cheap first, simulation last).
enum class Constraint { precondition, bounds, crossover, phase_margin, iso_damping, hbeta, modulus_margin, cost };

inline const char* to_string(Constraint c) {
    switch (c) {
        case Constraint::precondition: return "precondition";
        case Constraint::bounds: return "bounds";
        case Constraint::crossover: return "crossover";
        case Constraint::phase_margin: return "phase_margin";
        case Constraint::iso_damping: return "iso_damping";
        case Constraint::hbeta: return "hbeta";
        case Constraint::modulus_margin: return "modulus_margin";
        case Constraint::cost: return "cost";
    }
    return "?";
}

struct CandidateEvaluation {
    CgLpPidParams params;
    std::optional<double> crossover_err;
    std::optional<double> pm_err;
    std::optional<double> iso_damping_residual;
    std::optional<StabilityVerdict> hbeta;
    std::optional<double> modulus_margin_db;
    std::optional<double> cost_j_db;
    bool feasible{false};
    std::optional<Constraint> rejected_by;
    std::string diagnostic;
};

struct TuningResult {
    std::vector<CandidateEvaluation> ranked;
    std::size_t evaluated_count{0};
    std::map<Constraint, std::size_t> eliminated_per_constraint;
};

/// K_p placing the DF open-loop crossover at omega_c.
inline double solve_kp(CgLpPidParams params, Complex plant_at_wc, double omega_c) {
    params.kp = 1.0;
    const auto unit = assemble_controller(params);
    const double magnitude = std::abs(unit.df_at(omega_c) * plant_at_wc);
    if (!(magnitude > 0.0) || !std::isfinite(magnitude)) {
        std::ostringstream msg;
        msg << "unit-gain open-loop DF magnitude at " << omega_c << " rad/s is " << magnitude;
        fail(ErrorKind::CrossoverUnreachable, msg.str());
    }
    return 1.0 / magnitude;
}

/// Phase of an open-loop response at omega, evaluated through a callable.
template <typename Loop>
double iso_damping_slope(Loop&& loop, double omega_c, double relative_step = 1e-3) {
    const double h = relative_step * omega_c;
    double lo = std::arg(loop(omega_c - h));
    const double mid = std::arg(loop(omega_c));
    double hi = std::arg(loop(omega_c + h));
    constexpr double two_pi = 2.0 * std::numbers::pi;
    lo += two_pi * std::round((mid - lo) / two_pi);
    hi += two_pi * std::round((mid - hi) / two_pi);
    if (std::abs(mid - lo) > std::numbers::pi / 2.0 || std::abs(hi - mid) > std::numbers::pi / 2.0)
        fail(ErrorKind::PhaseUnwrapFailed, "open-loop phase jumps near crossover");
    return (hi - lo) / (2.0 * h);
}

/// d(arg N_CgLp PID G)/d omega at omega_c by central difference with step relative_step * omega_c.
inline double iso_damping_residual(const CgLpPidParams& params, const TransferFunction& plant, double omega_c,
                                   double relative_step = 1e-3) {
    const auto controller = assemble_controller(params);
    return iso_damping_slope([&](double w) { return controller.df_at(w) * plant.at(w); }, omega_c, relative_step);
}

/// Default band for the tracking cost: `points` log-spaced frequencies over [omega_l/10, omega_l].
inline FrequencyGrid cost_band(double omega_l, std::size_t points) {
    return FrequencyGrid::logarithmic(omega_l / 10.0, omega_l, points);
}

/// Default modulus-margin grid: `points` log-spaced over [omega_c/100, 4 omega_c].
inline FrequencyGrid modulus_grid(double omega_c, std::size_t points) {
    return FrequencyGrid::logarithmic(omega_c / 100.0, 4.0 * omega_c, points);
}

/// J = max over the band of 20 log10(|S_inf(omega)| / omega).
inline double cost_j(const ClosedLoopSystem& system, double omega_l, const FrequencyGrid& band,
                     const SimConfig& config = {}) {
    require(band.omegas().back() <= omega_l * (1.0 + 1e-12), "cost band must lie in (0, omega_l]");
    double worst = -std::numeric_limits<double>::infinity();
    for (double w : band) {
        const auto p = pseudo_sensitivity(system, w, SensitivityKind::S, 1.0, config);
        if (!p.converged) {
            std::ostringstream msg;
            msg << "pseudo-sensitivity at " << w << " rad/s did not converge (" << p.diagnostic << ")";
            fail(ErrorKind::NotConverged, msg.str());
        }
        worst = std::max(worst, 20.0 * std::log10(p.magnitude() / w));
    }
    return worst;
}

inline double wrap_degrees(double deg) {
    double w = std::remainder(deg, 360.0);
    if (w <= -180.0) w += 360.0;
    return w;
}

namespace detail {

inline bool within_bounds(double value, double lo, double hi) {
    constexpr double slack = 1e-9;
    return value >= lo * (1.0 - slack) && value <= hi * (1.0 + slack);
}

}  // namespace detail

/// Evaluates the constraints in order and stops at the first failure. `params.kp` is
/// recomputed from the crossover; alpha is taken as given.
inline CandidateEvaluation evaluate_candidate(CgLpPidParams params, const TuningSpec& spec,
                                              const TransferFunction& plant) {
    CandidateEvaluation ev;
    ev.params = params;
    auto reject = [&](Constraint c, std::string why) {
        ev.rejected_by = c;
        ev.diagnostic = std::move(why);
        return ev;
    };

    if (!(params.gamma > -1.0 && params.gamma <= 1.0))
        return reject(Constraint::precondition, "gamma outside (-1, 1]");
    const double wc = spec.omega_c;
    const std::array<double, 3> corners{params.omega_r, params.omega_d, params.omega_t};
    static constexpr std::array<const char*, 3> names{"omega_r", "omega_d", "omega_t"};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!detail::within_bounds(corners[i], spec.lower_bounds[i] * wc, spec.upper_bounds[i] * wc))
            return reject(Constraint::bounds, std::string(names[i]) + " outside tuning bounds");
    }

    params.omega_i = spec.omega_i();
    params.omega_f = spec.omega_f();
    params.kp = 1.0;

    try {
        const Complex g_wc = plant.at(wc);
        params.kp = solve_kp(params, g_wc, wc);
        ev.params = params;
        const auto controller = assemble_controller(params);
        const Complex l_wc = controller.df_at(wc) * g_wc;
        ev.crossover_err = std::abs(std::abs(l_wc) - 1.0);
        if (*ev.crossover_err > 1e-6) return reject(Constraint::crossover, "crossover not at omega_c");

        const double pm = wrap_degrees(180.0 + std::arg(l_wc) * 180.0 / std::numbers::pi);
        ev.pm_err = pm - spec.phase_margin_deg;
        if (std::abs(*ev.pm_err) > spec.pm_tolerance_deg) return reject(Constraint::phase_margin, "phase margin");

        ev.iso_damping_residual = iso_damping_residual(params, plant, wc);
        if (std::abs(*ev.iso_damping_residual) * wc > spec.iso_damping_tolerance)
            return reject(Constraint::iso_damping, "phase not flat at crossover");

        const TransferFunction loop_plant = with_pade(plant, spec.pade_corner);
        const FrequencyGrid hgrid = hbeta_grid(wc, spec.hbeta_points);
        ev.hbeta = hbeta_verdict(frequency_response(loop_plant, hgrid), params, hgrid);
        if (!ev.hbeta->passes) return reject(Constraint::hbeta, "NSV angles violate the H-beta bounds");

        ClosedLoopSystem system = detail::assemble_loop(loop_plant, controller);
        system.hbeta = ev.hbeta;
        double peak = 0.0;
        for (double w : modulus_grid(wc, spec.modulus_points)) {
            const auto p = pseudo_sensitivity(system, w, SensitivityKind::S, 1.0, spec.sim);
            if (!p.converged) {
                ev.modulus_margin_db.reset();
                return reject(Constraint::modulus_margin, "pseudo-sensitivity did not converge");
            }
            peak = std::max(peak, p.magnitude());
        }
        ev.modulus_margin_db = 20.0 * std::log10(peak);
        if (!(*ev.modulus_margin_db < spec.modulus_margin_db))
            return reject(Constraint::modulus_margin, "modulus margin exceeded");

        ev.cost_j_db = cost_j(system, spec.omega_l, cost_band(spec.omega_l, spec.cost_points), spec.sim);
    } catch (const Error& err) {
        Constraint stage = Constraint::crossover;
        if (ev.cost_j_db || ev.modulus_margin_db) stage = Constraint::cost;
        else if (ev.hbeta) stage = Constraint::modulus_margin;
        else if (ev.iso_damping_residual) stage = Constraint::hbeta;
        else if (ev.pm_err) stage = Constraint::iso_damping;
        else if (ev.crossover_err) stage = Constraint::phase_margin;
        ev.cost_j_db.reset();
        return reject(stage, err.what());
    }
    ev.feasible = true;
    return ev;
}

/// Lattice values: `n` log-spaced points over [lo, hi] (a single point when lo == hi or n == 1).
inline std::vector<double> lattice_axis(double lo, double hi, int n) {
    if (n == 1 || lo == hi) return {lo};
    return FrequencyGrid::logarithmic(lo, hi, static_cast<std::size_t>(n)).omegas();
}

inline std::vector<double> gamma_axis(double lo, double hi, int n) {
    if (n == 1 || lo == hi) return {hi};
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return g;
}

/// Candidate order: ascending J, ties within tolerance prefer larger gamma then smaller omega_r.
inline bool ranks_before(const CandidateEvaluation& a, const CandidateEvaluation& b, double tie_db) {
    const double ja = *a.cost_j_db;
    const double jb = *b.cost_j_db;
    if (std::abs(ja - jb) > tie_db) return ja < jb;
    if (a.params.gamma != b.params.gamma) return a.params.gamma > b.params.gamma;
    if (a.params.omega_r != b.params.omega_r) return a.params.omega_r < b.params.omega_r;
    if (a.params.omega_d != b.params.omega_d) return a.params.omega_d < b.params.omega_d;
    if (a.params.omega_t != b.params.omega_t) return a.params.omega_t < b.params.omega_t;
    return ja < jb;
}

/// Every lattice point of the spec, in (omega_r, omega_d, omega_t, gamma) lexicographic order.
inline std::vector<CgLpPidParams> lattice(const TuningSpec& spec) {
    const double wc = spec.omega_c;
    const auto wr = lattice_axis(spec.lower_bounds[0] * wc, spec.upper_bounds[0] * wc, spec.resolutions[0]);
    const auto wd = lattice_axis(spec.lower_bounds[1] * wc, spec.upper_bounds[1] * wc, spec.resolutions[1]);
    const auto wt = lattice_axis(spec.lower_bounds[2] * wc, spec.upper_bounds[2] * wc, spec.resolutions[2]);
    const auto gm = gamma_axis(spec.gamma_range[0], spec.gamma_range[1], spec.resolutions[3]);
    std::vector<CgLpPidParams> points;
    points.reserve(wr.size() * wd.size() * wt.size() * gm.size());
    for (double r : wr)
        for (double d : wd)
            for (double t : wt)
                for (double g : gm) {
                    CgLpPidParams p;
                    p.omega_i = spec.omega_i();
                    p.omega_f = spec.omega_f();
                    p.omega_r = r;
                    p.omega_d = d;
                    p.omega_t = t;
                    p.gamma = g;
                    points.push_back(p);
                }
    return points;
}

inline TuningResult rank(std::vector<CandidateEvaluation> evaluations, double tie_db) {
    TuningResult result;
    result.evaluated_count = evaluations.size();
    for (auto& ev : evaluations) {
        if (ev.feasible)
            result.ranked.push_back(std::move(ev));
        else if (ev.rejected_by)
            ++result.eliminated_per_constraint[*ev.rejected_by];
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [tie_db](const auto& a, const auto& b) { return ranks_before(a, b, tie_db); });
    return result;
}

inline TuningResult grid_search(const TuningSpec& spec, const TransferFunction& plant, unsigned workers = 0) {
    spec.validate();
    auto points = lattice(spec);

    // alpha depends only on (omega_r, gamma)
    std::map<std::pair<double, double>, std::optional<double>> alphas;
    std::map<std::pair<double, double>, std::string> alpha_errors;
    for (const auto& p : points) {
        const auto key = std::make_pair(p.omega_r, p.gamma);
        if (alphas.contains(key)) continue;
        if (spec.alpha) {
            alphas[key] = spec.alpha;
            continue;
        }
        try {
            alphas[key] = fit_alpha(p.omega_r, p.omega_f, p.gamma);
        } catch (const Error& err) {
            alphas[key] = std::nullopt;
            alpha_errors[key] = err.what();
        }
    }

    std::vector<CandidateEvaluation> evaluations(points.size());
    parallel_for(
        points.size(),
        [&](std::size_t i) {
            auto& p = points[i];
            const auto key = std::make_pair(p.omega_r, p.gamma);
            if (const auto& a = alphas.at(key)) {
                p.alpha = *a;
                evaluations[i] = evaluate_candidate(p, spec, plant);
            } else {
                evaluations[i].params = p;
                evaluations[i].rejected_by = Constraint::precondition;
                evaluations[i].diagnostic = alpha_errors.at(key);
            }
        },
        workers);
    return rank(std::move(evaluations), spec.tie_tolerance_db);
}

}  // namespace cglp
