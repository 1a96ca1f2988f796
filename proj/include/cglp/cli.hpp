#pragma once

// Command-line front end. `run` parses argv, executes one subcommand and returns
// the exit code plus the artifacts written. Requires CLI11 as "CLI11.hpp".

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cglp/config.hpp"
#include "cglp/error.hpp"
#include "cglp/hbeta.hpp"
#include "cglp/hybrid_sim.hpp"
#include "cglp/lti.hpp"
#include "cglp/reset.hpp"
#include "cglp/tuner.hpp"

namespace cglp::cli {

enum ExitCode : int { ok = 0, config_error = 2, infeasible = 3, numerical_failure = 4 };

struct RunResult {
    int exit_code{ok};
    std::vector<RunArtifact> artifacts;
};

struct Options {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed{42};
    std::optional<std::size_t> grid;

    double fmin_hz{1.0};
    double fmax_hz{1000.0};
    std::vector<std::string> kinds{"S"};

    std::string scenario;
    std::optional<double> freq_hz;
    std::optional<double> amplitude;
    std::optional<double> period;
    std::optional<double> duration;
    double gain_scale{1.0};

    double sample_time{1e-4};
};

namespace detail {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

struct Infeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Session {
public:
    Session(std::string command, const Options& opt, std::ostream& out)
        : command_(std::move(command)), opt_(opt), out_(out) {
        config_ = load_config(opt.config_path);
        if (!opt.out_dir.empty()) config_.output_dir = opt.out_dir;
        hash_ = config_hash(config_);
        stamp_ = utc_timestamp();
        std::filesystem::create_directories(config_.output_dir);
    }

    const ProjectConfig& config() const { return config_; }
    std::ostream& out() { return out_; }
    const Options& options() const { return opt_; }
    std::vector<RunArtifact>& artifacts() { return artifacts_; }

    const TransferFunction& model() const {
        if (!config_.plant.model)
            fail(ErrorKind::Config, "plant: '" + command_ + "' needs plant coefficients, not frf_path");
        return *config_.plant.model;
    }

    /// Plant frequency response on a grid (model with exact delay, or measured data as given).
    std::pair<FrequencyGrid, std::vector<Complex>> plant_response(const FrequencyGrid& grid) const {
        if (config_.plant.model) return {grid, frequency_response(*config_.plant.model, grid)};
        FrfData d = load_frf(resolve(*config_.plant.frf_path));
        return {d.grid, d.values};
    }

    CgLpPidParams controller() {
        if (config_.controller) {
            CgLpPidParams p = *config_.controller;
            p.kp *= opt_.gain_scale;
            return p;
        }
        out_ << "no controller section; tuning first\n";
        const auto result = grid_search(config_.tuning, model());
        if (result.ranked.empty()) throw Infeasible("tuning found no feasible candidate");
        CgLpPidParams p = result.ranked.front().params;
        p.kp *= opt_.gain_scale;
        return p;
    }

    std::ofstream open(ArtifactKind kind, const std::string& name) {
        const auto path = std::filesystem::path(config_.output_dir) / name;
        std::ofstream f(path);
        if (!f) fail(ErrorKind::Config, "cannot write " + path.string());
        artifacts_.push_back({kind, path, command_, hash_, stamp_});
        return f;
    }

    /// Merges this run's artifacts into manifest.json of the output directory.
    void write_manifest() {
        const auto path = std::filesystem::path(config_.output_dir) / "manifest.json";
        json current = manifest_json(artifacts_);
        json merged = json{{"artifacts", json::array()}};
        if (std::ifstream in(path); in) {
            try {
                const json old = json::parse(in);
                for (const auto& a : old.at("artifacts")) {
                    const bool replaced = std::any_of(current["artifacts"].begin(), current["artifacts"].end(),
                                                      [&](const json& c) { return c["path"] == a["path"]; });
                    if (!replaced) merged["artifacts"].push_back(a);
                }
            } catch (const json::exception&) {
                // unreadable manifest: start over
            }
        }
        for (const auto& a : current["artifacts"]) merged["artifacts"].push_back(a);
        std::ofstream f(path);
        f << merged.dump(2) << '\n';
    }

private:
    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        if (path.is_absolute()) return path;
        return std::filesystem::path(opt_.config_path).parent_path() / path;
    }

    std::string command_;
    const Options& opt_;
    std::ostream& out_;
    ProjectConfig config_;
    std::string hash_;
    std::string stamp_;
    std::vector<RunArtifact> artifacts_;
};

inline std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

inline void print_params(std::ostream& out, const CgLpPidParams& p) {
    out << "  kp      " << fmt(p.kp) << '\n'
        << "  omega_i " << fmt(p.omega_i) << " rad/s (" << fmt(p.omega_i / two_pi) << " Hz)\n"
        << "  omega_r " << fmt(p.omega_r) << " rad/s (" << fmt(p.omega_r / two_pi) << " Hz)\n"
        << "  alpha   " << fmt(p.alpha) << '\n'
        << "  omega_f " << fmt(p.omega_f) << " rad/s (" << fmt(p.omega_f / two_pi) << " Hz)\n"
        << "  omega_d " << fmt(p.omega_d) << " rad/s (" << fmt(p.omega_d / two_pi) << " Hz)\n"
        << "  omega_t " << fmt(p.omega_t) << " rad/s (" << fmt(p.omega_t / two_pi) << " Hz)\n"
        << "  gamma   " << fmt(p.gamma) << '\n';
}

inline void print_verdict(std::ostream& out, const StabilityVerdict& v) {
    out << "H-beta condition: " << (v.passes ? "PASS" : "FAIL") << " (checked on a " << v.samples
        << "-point grid, not between grid points)\n"
        << "  theta_1 " << fmt(v.theta_1) << " rad at " << fmt(v.witness_frequencies.first) << " rad/s\n"
        << "  theta_2 " << fmt(v.theta_2) << " rad at " << fmt(v.witness_frequencies.second) << " rad/s\n"
        << "  span    " << fmt(v.theta_2 - v.theta_1) << " rad\n"
        << "  margin  " << fmt(v.margin) << " rad\n";
}

inline FrequencyGrid hz_grid(const Options& opt, std::size_t fallback_points) {
    if (!(opt.fmin_hz > 0.0 && opt.fmax_hz >= opt.fmin_hz))
        fail(ErrorKind::Config, "--fmin/--fmax: need 0 < fmin <= fmax");
    const std::size_t n = opt.grid.value_or(fallback_points);
    if (n < 1) fail(ErrorKind::Config, "--grid: need at least one point");
    return FrequencyGrid::logarithmic(two_pi * opt.fmin_hz, two_pi * opt.fmax_hz, n);
}

inline ClosedLoopSystem closed_loop(const Session& s, const CgLpPidParams& params) {
    const auto& t = s.config().tuning;
    return make_closed_loop(s.model(), params, s.config().plant.pade_corner, hbeta_grid(t.omega_c, t.hbeta_points));
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_tune(Session& s) {
    const auto& spec = s.config().tuning;
    const auto result = grid_search(spec, s.model());
    auto& out = s.out();
    out << "evaluated " << result.evaluated_count << " lattice points, " << result.ranked.size() << " feasible\n";
    for (const auto& [c, n] : result.eliminated_per_constraint) out << "  eliminated by " << to_string(c) << ": " << n << '\n';

    {
        auto f = s.open(ArtifactKind::tuning_report, "tune_ranked.csv");
        f << "rank,kp,omega_r,omega_d,omega_t,gamma,alpha,pm_err_deg,iso_damping_rad,hbeta_margin_rad,"
             "modulus_margin_db,cost_j_db\n";
        for (std::size_t i = 0; i < result.ranked.size(); ++i) {
            const auto& e = result.ranked[i];
            f << i + 1 << ',' << csv::number(e.params.kp) << ',' << csv::number(e.params.omega_r) << ','
              << csv::number(e.params.omega_d) << ',' << csv::number(e.params.omega_t) << ','
              << csv::number(e.params.gamma) << ',' << csv::number(e.params.alpha) << ',' << csv::number(*e.pm_err)
              << ',' << csv::number(*e.iso_damping_residual * spec.omega_c) << ',' << csv::number(e.hbeta->margin)
              << ',' << csv::number(*e.modulus_margin_db) << ',' << csv::number(*e.cost_j_db) << '\n';
        }
    }
    auto report = s.open(ArtifactKind::tuning_report, "tune_report.txt");
    report << "lattice points evaluated: " << result.evaluated_count << '\n'
           << "feasible: " << result.ranked.size() << '\n';
    for (const auto& [c, n] : result.eliminated_per_constraint)
        report << "eliminated by " << to_string(c) << ": " << n << '\n';
    if (result.ranked.empty()) {
        out << "no feasible candidate\n";
        return infeasible;
    }
    const auto& best = result.ranked.front();
    report << "best candidate (J = " << fmt(*best.cost_j_db) << " dB, max |S| = " << fmt(*best.modulus_margin_db)
           << " dB):\n";
    print_params(report, best.params);
    out << "best candidate (J = " << fmt(*best.cost_j_db) << " dB):\n";
    print_params(out, best.params);

    auto tuned = s.open(ArtifactKind::tuning_report, "tuned_controller.json");
    tuned << json{{"controller", emit_controller(best.params)}}.dump(2) << '\n';
    return ok;
}

inline int cmd_analyze(Session& s) {
    const auto params = s.controller();
    const auto [grid, plant] = s.plant_response(hz_grid(s.options(), 1000));
    const auto curve = open_loop_df(params, plant, grid);
    const auto controller = assemble_controller(params);
    std::vector<Complex> base(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) base[k] = controller.base_at(grid[k]) * plant[k];
    {
        auto f = s.open(ArtifactKind::bode_csv, "analyze_open_loop_df.csv");
        csv::write_sweep(f, curve.grid, curve.values);
    }
    {
        auto f = s.open(ArtifactKind::bode_csv, "analyze_open_loop_base.csv");
        csv::write_sweep(f, grid, base);
    }

    auto& out = s.out();
    const double wc = s.config().tuning.omega_c;
    print_params(out, params);
    if (s.config().plant.model) {
        const Complex l = controller.df_at(wc) * s.config().plant.model->at(wc);
        out << "open-loop DF at omega_c = " << fmt(wc) << " rad/s: |L| = " << fmt(std::abs(l))
            << ", phase margin = " << fmt(wrap_degrees(180.0 + std::arg(l) * 180.0 / std::numbers::pi)) << " deg\n";
        const double slope = iso_damping_residual(params, *s.config().plant.model, wc);
        out << "iso-damping residual * omega_c = " << fmt(slope * wc) << " rad\n";
    }
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double a = std::abs(curve.values[k - 1]);
        const double b = std::abs(curve.values[k]);
        if (a >= 1.0 && b < 1.0) {
            out << "DF crossover between " << fmt(grid[k - 1] / two_pi) << " and " << fmt(grid[k] / two_pi) << " Hz\n";
            break;
        }
    }
    return ok;
}

inline int cmd_stability(Session& s) {
    const auto params = s.controller();
    const auto& t = s.config().tuning;
    const std::size_t n = s.options().grid.value_or(t.hbeta_points);
    StabilityVerdict verdict;
    if (s.config().plant.model) {
        const FrequencyGrid grid = hbeta_grid(t.omega_c, n);
        const auto plant = with_pade(*s.config().plant.model, s.config().plant.pade_corner);
        verdict = hbeta_verdict(frequency_response(plant, grid), params, grid);
    } else {
        const auto [grid, plant] = s.plant_response(hbeta_grid(t.omega_c, n));
        verdict = hbeta_verdict(plant, params, grid);
    }
    const auto element = assemble_controller(params).reset_part;
    const auto wd = well_defined(element, t.omega_c);

    auto report = s.open(ArtifactKind::stability_report, "stability_report.txt");
    for (std::ostream* o : {static_cast<std::ostream*>(&report), &s.out()}) {
        print_verdict(*o, verdict);
        *o << "reset element at omega_c: max Re eig(A_r) = " << fmt(wd.max_real_eigenvalue)
           << ", spectral radius of A_rho e^(pi A_r / omega) = " << fmt(wd.jump_spectral_radius) << '\n';
    }
    return ok;
}

inline int cmd_sweep(Session& s) {
    const auto params = s.controller();
    const auto system = closed_loop(s, params);
    const FrequencyGrid grid = hz_grid(s.options(), 60);
    auto& out = s.out();
    auto report = s.open(ArtifactKind::sensitivity_csv, "sweep_report.txt");
    if (system.hbeta) print_verdict(report, *system.hbeta);

    for (const auto& name : s.options().kinds) {
        const auto kind = parse_kind(name);
        if (!kind) fail(ErrorKind::Config, "--kinds: unknown sensitivity '" + name + "' (S, T, CS, PS)");
        const auto curve = sensitivity_sweep(system, grid, *kind, s.config().simulation);
        {
            auto f = s.open(ArtifactKind::sensitivity_csv, "sweep_" + name + ".csv");
            csv::write_pseudo_sensitivity(f, curve);
        }
        {
            auto f = s.open(ArtifactKind::sensitivity_csv, "sweep_" + name + "_df.csv");
            csv::write_sweep(f, grid, curve.df_prediction);
        }
        double worst_gap = -std::numeric_limits<double>::infinity();
        double worst_gap_hz = 0.0;
        std::size_t failed = 0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const auto& p = curve.points[k];
            if (!p.converged) {
                ++failed;
                report << name << " not converged at " << fmt(grid[k] / two_pi) << " Hz: " << p.diagnostic << '\n';
                continue;
            }
            const double gap = p.magnitude_db() - 20.0 * std::log10(std::abs(curve.df_prediction[k]));
            if (gap > worst_gap) {
                worst_gap = gap;
                worst_gap_hz = grid[k] / two_pi;
            }
        }
        std::ostringstream line;
        line << name << ": max |" << name << "_inf| = " << fmt(20.0 * std::log10(curve.max_magnitude()))
             << " dB; largest pseudo minus DF gap " << fmt(worst_gap) << " dB at " << fmt(worst_gap_hz)
             << " Hz; non-converged points " << failed << '\n';
        report << line.str();
        out << line.str();
    }
    return ok;
}

inline double steady_peak(const Trajectory& traj, double from) {
    double peak = 0.0;
    for (std::size_t k = 0; k < traj.times.size(); ++k)
        if (traj.times[k] >= from) peak = std::max(peak, std::abs(traj.e[k]));
    return peak;
}

inline double rms(const Trajectory& traj, double from) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        if (traj.times[k] < from) continue;
        sum += traj.e[k] * traj.e[k];
        ++n;
    }
    return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

inline int cmd_simulate(Session& s) {
    const auto& opt = s.options();
    const auto params = s.controller();
    const auto system = closed_loop(s, params);
    if (system.hbeta && !system.hbeta->passes)
        fail(ErrorKind::StabilityUnverified, "H-beta condition fails; simulation results would not be meaningful");

    Excitation ex;
    double duration = 0.0;
    double settle = 0.0;  // start of the window used for summary statistics
    std::optional<double> period;
    const std::string& sc = opt.scenario;
    if (sc == "step") {
        ex.reference = Signal::step(opt.amplitude.value_or(10e-6));
        duration = opt.duration.value_or(0.1);
    } else if (sc == "sine") {
        const double f = opt.freq_hz.value_or(5.0);
        ex.reference = Signal::sine(opt.amplitude.value_or(111e-6), two_pi * f);
        period = 1.0 / f;
        duration = opt.duration.value_or(std::max(2.0, 10.0 / f));
    } else if (sc == "triangle") {
        const auto p = opt.period ? opt.period : s.config().triangle_period;
        if (!p) fail(ErrorKind::Config, "triangle scenario needs --period or triangle_period in the config");
        if (!(*p > 0.0)) fail(ErrorKind::Config, "--period: must be positive");
        ex.reference = Signal::triangle(opt.amplitude.value_or(400e-6), *p);
        period = *p;
        duration = opt.duration.value_or(std::max(3.0 * *p, 1.0));
    } else if (sc == "noise") {
        duration = opt.duration.value_or(0.5);
        ex.noise = Signal::uniform_noise(opt.amplitude.value_or(5e-6), 1e-4, opt.seed, duration);
        settle = 0.1 * duration;
    } else if (sc == "disturbance") {
        const double f = opt.freq_hz.value_or(7.0);
        ex.disturbance = Signal::sine(opt.amplitude.value_or(190e-6), two_pi * f);
        period = 1.0 / f;
        duration = opt.duration.value_or(std::max(2.0, 10.0 / f));
    } else {
        fail(ErrorKind::Config, "--scenario: expected step, sine, triangle, noise or disturbance");
    }
    if (!(duration > 0.0)) fail(ErrorKind::Config, "--duration: must be positive");
    if (period) settle = std::max(0.0, duration - *period);

    const auto traj = simulate(system, ex, s.config().simulation, duration);
    {
        auto f = s.open(ArtifactKind::trajectory_csv, "simulate_" + sc + ".csv");
        csv::write_trajectory(f, traj);
    }
    auto& out = s.out();
    out << "scenario " << sc << ", " << traj.times.size() << " samples, " << traj.reset_instants.size()
        << " resets\n";
    if (sc == "step") {
        const double r = traj.r.back();
        const double peak = *std::max_element(traj.y.begin(), traj.y.end());
        out << "overshoot " << fmt(100.0 * (peak - r) / r) << " %\n";
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
            if (traj.y[k] >= 0.9 * r) {
                out << "rise time (0 to 90 %) " << fmt(traj.times[k]) << " s\n";
                break;
            }
        }
    } else {
        out << "max |e| after " << fmt(settle) << " s: " << fmt(steady_peak(traj, settle)) << '\n'
            << "rms e after " << fmt(settle) << " s: " << fmt(rms(traj, settle)) << '\n';
    }
    return ok;
}

inline int cmd_export(Session& s) {
    const auto params = s.controller();
    const double ts = s.options().sample_time;
    if (!(ts > 0.0)) fail(ErrorKind::Config, "--sample-time: must be positive");
    auto f = s.open(ArtifactKind::controller_export, "controller_export.txt");
    write_controller_export(f, params, ts, s.config().simulation.reset_holdoff);
    s.out() << "wrote controller_export.txt (T_s = " << fmt(ts) << " s)\n";
    return ok;
}

}  // namespace detail

/// Runs one command line (args excludes the program name).
inline RunResult run(const std::vector<std::string>& args, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
    Options opt;
    CLI::App app{"CgLp reset controller analysis and tuning", "cglp"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.add_option("--config", opt.config_path, "project configuration (JSON)")->required();
    app.add_option("--out", opt.out_dir, "output directory (overrides output_dir)");
    app.add_option("--seed", opt.seed, "seed for the noise scenario");
    app.add_option("--grid", opt.grid, "number of frequency points");

    auto* tune = app.add_subcommand("tune", "grid-search tuning");
    auto* analyze = app.add_subcommand("analyze", "open-loop describing function Bode data");
    analyze->add_option("--fmin", opt.fmin_hz, "lowest frequency [Hz]");
    analyze->add_option("--fmax", opt.fmax_hz, "highest frequency [Hz]");
    auto* stability = app.add_subcommand("stability", "H-beta condition check");
    auto* sweep = app.add_subcommand("sweep", "pseudo-sensitivity sweep");
    sweep->add_option("--fmin", opt.fmin_hz, "lowest frequency [Hz]");
    sweep->add_option("--fmax", opt.fmax_hz, "highest frequency [Hz]");
    sweep->add_option("--kinds", opt.kinds, "sensitivities: S, T, CS, PS")->delimiter(',');
    auto* simulate_cmd = app.add_subcommand("simulate", "closed-loop time simulation");
    simulate_cmd->add_option("--scenario", opt.scenario, "step, sine, triangle, noise, disturbance")->required();
    simulate_cmd->add_option("--freq", opt.freq_hz, "sine or disturbance frequency [Hz]");
    simulate_cmd->add_option("--amp", opt.amplitude, "amplitude [m], or plant-input units for disturbance");
    simulate_cmd->add_option("--period", opt.period, "triangle period [s]");
    simulate_cmd->add_option("--duration", opt.duration, "simulated time [s]");
    simulate_cmd->add_option("--gain-scale", opt.gain_scale, "multiplies kp");
    auto* export_cmd = app.add_subcommand("export", "Tustin-discretized controller file");
    export_cmd->add_option("--sample-time", opt.sample_time, "sample time [s]");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return {ok, {}};
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return {config_error, {}};
    }

    std::string name;
    for (auto* sub : {tune, analyze, stability, sweep, simulate_cmd, export_cmd})
        if (sub->parsed()) name = sub->get_name();

    RunResult result;
    try {
        detail::Session session(name, opt, out);
        if (name == "tune") result.exit_code = detail::cmd_tune(session);
        else if (name == "analyze") result.exit_code = detail::cmd_analyze(session);
        else if (name == "stability") result.exit_code = detail::cmd_stability(session);
        else if (name == "sweep") result.exit_code = detail::cmd_sweep(session);
        else if (name == "simulate") result.exit_code = detail::cmd_simulate(session);
        else result.exit_code = detail::cmd_export(session);
        session.write_manifest();
        result.artifacts = session.artifacts();
    } catch (const detail::Infeasible& e) {
        err << "error: " << e.what() << '\n';
        result.exit_code = infeasible;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        result.exit_code = e.kind() == ErrorKind::Config ? config_error : numerical_failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        result.exit_code = numerical_failure;
    }
    return result;
}

}  // namespace cglp::cli
