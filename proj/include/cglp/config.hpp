#pragma once

// Project configuration (JSON), CSV writers, run manifest and controller export.
// Requires nlohmann/json as "json.hpp" on the include path.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cglp/error.hpp"
#include "cglp/hybrid_sim.hpp"
#include "cglp/lti.hpp"
#include "cglp/reset.hpp"
#include "cglp/tuner.hpp"

namespace cglp {

using json = nlohmann::json;

/// Measured frequency response, one row per frequency.
struct FrfData {
    FrequencyGrid grid;
    std::vector<Complex> values;
};

struct PlantConfig {
    std::optional<TransferFunction> model;
    std::optional<std::string> frf_path;
    std::optional<double> pade_corner;

    friend bool operator==(const PlantConfig&, const PlantConfig&) = default;
};

struct ProjectConfig {
    PlantConfig plant;
    TuningSpec tuning;
    SimConfig simulation;
    std::optional<CgLpPidParams> controller;
    /// Triangle reference period [s]; the experiments need it but no default is assumed.
    std::optional<double> triangle_period;
    std::string output_dir{"out"};
};

inline bool operator==(const TuningSpec& a, const TuningSpec& b) {
    return a.omega_c == b.omega_c && a.phase_margin_deg == b.phase_margin_deg &&
           a.modulus_margin_db == b.modulus_margin_db && a.omega_l == b.omega_l &&
           a.lower_bounds == b.lower_bounds && a.upper_bounds == b.upper_bounds && a.gamma_range == b.gamma_range &&
           a.resolutions == b.resolutions && a.pm_tolerance_deg == b.pm_tolerance_deg &&
           a.iso_damping_tolerance == b.iso_damping_tolerance && a.tie_tolerance_db == b.tie_tolerance_db &&
           a.hbeta_points == b.hbeta_points && a.modulus_points == b.modulus_points &&
           a.cost_points == b.cost_points && a.alpha == b.alpha && a.pade_corner == b.pade_corner && a.sim == b.sim;
}

inline bool operator==(const ProjectConfig& a, const ProjectConfig& b) {
    return a.plant == b.plant && a.tuning == b.tuning && a.simulation == b.simulation &&
           a.controller == b.controller && a.triangle_period == b.triangle_period && a.output_dir == b.output_dir;
}

namespace detail {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(ErrorKind::Config, path_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    std::string at(const char* key) const { return path_ + "." + key; }
    const json& raw(const char* key) const { return j_.at(key); }

    double number(const char* key) const {
        const json& v = need(key);
        if (!v.is_number()) fail(ErrorKind::Config, at(key) + ": expected a number");
        return v.get<double>();
    }

    double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

    int integer(const char* key, int fallback) const {
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_number_integer()) fail(ErrorKind::Config, at(key) + ": expected an integer");
        return v.get<int>();
    }

    /// A frequency: a bare number in rad/s or {"value": x, "unit": "Hz" | "rad/s"}.
    double frequency(const char* key) const {
        const json& v = need(key);
        if (v.is_number()) return v.get<double>();
        if (!v.is_object() || !v.contains("value") || !v.at("value").is_number())
            fail(ErrorKind::Config, at(key) + ": expected rad/s number or {value, unit}");
        const double value = v.at("value").get<double>();
        const std::string unit = v.value("unit", "rad/s");
        if (unit == "rad/s") return value;
        if (unit == "Hz") return 2.0 * std::numbers::pi * value;
        fail(ErrorKind::Config, at(key) + ": unknown unit '" + unit + "' (use Hz or rad/s)");
    }

    double frequency(const char* key, double fallback) const { return has(key) ? frequency(key) : fallback; }

    std::vector<double> numbers(const char* key) const {
        const json& v = need(key);
        if (!v.is_array()) fail(ErrorKind::Config, at(key) + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) fail(ErrorKind::Config, at(key) + ": expected an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    template <std::size_t N>
    std::array<double, N> triple(const char* key, std::array<double, N> fallback) const {
        if (!has(key)) return fallback;
        const auto v = numbers(key);
        if (v.size() != N) fail(ErrorKind::Config, at(key) + ": expected " + std::to_string(N) + " entries");
        std::array<double, N> out{};
        std::copy(v.begin(), v.end(), out.begin());
        return out;
    }

private:
    const json& need(const char* key) const {
        if (!has(key)) fail(ErrorKind::Config, at(key) + ": missing");
        return j_.at(key);
    }

    const json& j_;
    std::string path_;
};

template <typename F>
auto rethrow_as_config(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const Error& err) {
        if (err.kind() == ErrorKind::Config) throw;
        fail(ErrorKind::Config, where + ": " + err.what());
    }
}

}  // namespace detail

inline CgLpPidParams parse_controller(const json& j, const std::string& path = "controller") {
    detail::Reader r(j, path);
    CgLpPidParams p;
    p.kp = r.number("kp");
    p.omega_i = r.frequency("omega_i");
    p.omega_r = r.frequency("omega_r");
    p.alpha = r.number("alpha", 1.0);
    p.omega_f = r.frequency("omega_f");
    p.omega_d = r.frequency("omega_d");
    p.omega_t = r.frequency("omega_t");
    p.gamma = r.number("gamma");
    detail::rethrow_as_config(path, [&] {
        p.validate();
        return 0;
    });
    return p;
}

inline json emit_controller(const CgLpPidParams& p) {
    return json{{"kp", p.kp},         {"omega_i", p.omega_i}, {"omega_r", p.omega_r}, {"alpha", p.alpha},
                {"omega_f", p.omega_f}, {"omega_d", p.omega_d}, {"omega_t", p.omega_t}, {"gamma", p.gamma}};
}

inline SimConfig parse_simulation(const json& j) {
    detail::Reader r(j, "simulation");
    SimConfig s;
    s.step_size = r.number("step_size", s.step_size);
    s.max_periods = r.integer("max_periods", s.max_periods);
    s.convergence_tol = r.number("convergence_tol", s.convergence_tol);
    s.crossing_tol = r.number("crossing_tol", s.crossing_tol);
    s.reset_holdoff = r.integer("reset_holdoff", s.reset_holdoff);
    s.min_steps_per_period = r.integer("min_steps_per_period", s.min_steps_per_period);
    s.divergence_bound = r.number("divergence_bound", s.divergence_bound);
    detail::rethrow_as_config("simulation", [&] {
        s.validate();
        return 0;
    });
    return s;
}

inline json emit_simulation(const SimConfig& s) {
    return json{{"step_size", s.step_size},
                {"max_periods", s.max_periods},
                {"convergence_tol", s.convergence_tol},
                {"crossing_tol", s.crossing_tol},
                {"reset_holdoff", s.reset_holdoff},
                {"min_steps_per_period", s.min_steps_per_period},
                {"divergence_bound", s.divergence_bound}};
}

inline TuningSpec parse_tuning(const json& j, const SimConfig& sim, std::optional<double> pade_corner) {
    detail::Reader r(j, "tuning");
    TuningSpec t;
    t.omega_c = r.frequency("omega_c");
    t.phase_margin_deg = r.number("phase_margin_deg");
    t.modulus_margin_db = r.number("modulus_margin_db");
    t.omega_l = r.frequency("omega_l", t.omega_c / 10.0);
    t.lower_bounds = r.triple<3>("lower_bounds", t.lower_bounds);
    t.upper_bounds = r.triple<3>("upper_bounds", t.upper_bounds);
    t.gamma_range = r.triple<2>("gamma_range", t.gamma_range);
    if (r.has("resolutions")) {
        const auto v = r.numbers("resolutions");
        if (v.size() != 4) fail(ErrorKind::Config, r.at("resolutions") + ": expected 4 entries");
        for (std::size_t i = 0; i < 4; ++i) {
            if (v[i] != std::floor(v[i])) fail(ErrorKind::Config, r.at("resolutions") + ": expected integers");
            t.resolutions[i] = static_cast<int>(v[i]);
        }
    }
    t.pm_tolerance_deg = r.number("pm_tolerance_deg", t.pm_tolerance_deg);
    t.iso_damping_tolerance = r.number("iso_damping_tolerance", t.iso_damping_tolerance);
    t.tie_tolerance_db = r.number("tie_tolerance_db", t.tie_tolerance_db);
    t.hbeta_points = static_cast<std::size_t>(r.integer("hbeta_points", static_cast<int>(t.hbeta_points)));
    t.modulus_points = static_cast<std::size_t>(r.integer("modulus_points", static_cast<int>(t.modulus_points)));
    t.cost_points = static_cast<std::size_t>(r.integer("cost_points", static_cast<int>(t.cost_points)));
    if (r.has("alpha")) t.alpha = r.number("alpha");
    t.pade_corner = pade_corner;
    t.sim = sim;
    detail::rethrow_as_config("tuning", [&] {
        t.validate();
        return 0;
    });
    return t;
}

inline json emit_tuning(const TuningSpec& t) {
    json j{{"omega_c", t.omega_c},
           {"phase_margin_deg", t.phase_margin_deg},
           {"modulus_margin_db", t.modulus_margin_db},
           {"omega_l", t.omega_l},
           {"lower_bounds", t.lower_bounds},
           {"upper_bounds", t.upper_bounds},
           {"gamma_range", t.gamma_range},
           {"resolutions", t.resolutions},
           {"pm_tolerance_deg", t.pm_tolerance_deg},
           {"iso_damping_tolerance", t.iso_damping_tolerance},
           {"tie_tolerance_db", t.tie_tolerance_db},
           {"hbeta_points", t.hbeta_points},
           {"modulus_points", t.modulus_points},
           {"cost_points", t.cost_points}};
    if (t.alpha) j["alpha"] = *t.alpha;
    return j;
}

inline PlantConfig parse_plant(const json& j) {
    detail::Reader r(j, "plant");
    PlantConfig p;
    const bool coeffs = r.has("numerator") || r.has("denominator");
    const bool frf = r.has("frf_path");
    if (coeffs == frf) fail(ErrorKind::Config, "plant: give either numerator/denominator or frf_path, not both");
    if (coeffs) {
        const auto num = r.numbers("numerator");
        const auto den = r.numbers("denominator");
        const double delay = r.number("delay", 0.0);
        p.model = detail::rethrow_as_config("plant", [&] { return TransferFunction(num, den, delay); });
    } else {
        if (!r.raw("frf_path").is_string()) fail(ErrorKind::Config, "plant.frf_path: expected a string");
        p.frf_path = r.raw("frf_path").get<std::string>();
    }
    if (r.has("pade_corner")) {
        p.pade_corner = r.frequency("pade_corner");
        if (!(*p.pade_corner > 0.0)) fail(ErrorKind::Config, "plant.pade_corner: must be positive");
    }
    return p;
}

inline json emit_plant(const PlantConfig& p) {
    json j = json::object();
    if (p.model) {
        j["numerator"] = p.model->numerator();
        j["denominator"] = p.model->denominator();
        j["delay"] = p.model->delay();
    }
    if (p.frf_path) j["frf_path"] = *p.frf_path;
    if (p.pade_corner) j["pade_corner"] = *p.pade_corner;
    return j;
}

inline ProjectConfig parse_config(const json& j) {
    if (!j.is_object()) fail(ErrorKind::Config, "config: expected a JSON object");
    ProjectConfig c;
    if (!j.contains("plant")) fail(ErrorKind::Config, "plant: missing");
    c.plant = parse_plant(j.at("plant"));
    if (j.contains("simulation")) c.simulation = parse_simulation(j.at("simulation"));
    if (!j.contains("tuning")) fail(ErrorKind::Config, "tuning: missing");
    c.tuning = parse_tuning(j.at("tuning"), c.simulation, c.plant.pade_corner);
    if (j.contains("controller") && !j.at("controller").is_null()) c.controller = parse_controller(j.at("controller"));
    if (j.contains("triangle_period")) {
        const json& v = j.at("triangle_period");
        if (!v.is_number() || !(v.get<double>() > 0.0))
            fail(ErrorKind::Config, "triangle_period: expected a positive number of seconds");
        c.triangle_period = v.get<double>();
    }
    if (j.contains("output_dir")) {
        if (!j.at("output_dir").is_string()) fail(ErrorKind::Config, "output_dir: expected a string");
        c.output_dir = j.at("output_dir").get<std::string>();
    }
    return c;
}

inline ProjectConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline ProjectConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Canonical JSON form; frequencies are written in rad/s.
inline json emit_config(const ProjectConfig& c) {
    json j{{"plant", emit_plant(c.plant)},
           {"tuning", emit_tuning(c.tuning)},
           {"simulation", emit_simulation(c.simulation)},
           {"output_dir", c.output_dir}};
    if (c.controller) j["controller"] = emit_controller(*c.controller);
    if (c.triangle_period) j["triangle_period"] = *c.triangle_period;
    return j;
}

/// FNV-1a over the canonical dump, as 16 hex digits.
inline std::string config_hash(const ProjectConfig& c) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : emit_config(c).dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

/// Reads `omega_rad_s,re,im` rows (header line optional).
inline FrfData load_frf(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open FRF file " + path.string());
    std::vector<double> omegas;
    std::vector<Complex> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double w = 0.0, re = 0.0, im = 0.0;
        if (!(row >> w >> re >> im)) {
            if (omegas.empty() && lineno == 1) continue;  // header
            fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": expected omega,re,im");
        }
        omegas.push_back(w);
        values.emplace_back(re, im);
    }
    FrfData d{detail::rethrow_as_config(path.string(), [&] { return FrequencyGrid(omegas, FrequencyGrid::Spacing::logarithmic); }),
              std::move(values)};
    return d;
}

// ---------------------------------------------------------------------------
// CSV output

namespace csv {

inline constexpr const char* sweep_header = "omega_rad_s,freq_hz,magnitude_db,phase_deg";
inline constexpr const char* trajectory_header = "t_s,r,e,u,y,reset_flag";

inline std::string number(double v) {
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
}

inline void write_sweep(std::ostream& out, const FrequencyGrid& grid, std::span<const Complex> values) {
    require(grid.size() == values.size(), "sweep grid and values must have equal length");
    out << sweep_header << '\n';
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double w = grid[k];
        out << number(w) << ',' << number(w / (2.0 * std::numbers::pi)) << ','
            << number(20.0 * std::log10(std::abs(values[k]))) << ','
            << number(std::arg(values[k]) * 180.0 / std::numbers::pi) << '\n';
    }
}

/// Pseudo-sensitivity rows; the phase column is phi_max in degrees.
inline void write_pseudo_sensitivity(std::ostream& out, const PseudoSensitivityCurve& curve) {
    std::vector<Complex> values;
    values.reserve(curve.points.size());
    for (const auto& p : curve.points) values.push_back(std::polar(p.magnitude(), p.phi_max));
    write_sweep(out, curve.grid, values);
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
    out << trajectory_header << '\n';
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        out << number(traj.times[k]) << ',' << number(traj.r[k]) << ',' << number(traj.e[k]) << ','
            << number(traj.u[k]) << ',' << number(traj.y[k]) << ',' << static_cast<int>(traj.reset_flags[k]) << '\n';
    }
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Manifest

enum class ArtifactKind { bode_csv, sensitivity_csv, trajectory_csv, tuning_report, stability_report, controller_export };

inline const char* to_string(ArtifactKind k) {
    switch (k) {
        case ArtifactKind::bode_csv: return "bode_csv";
        case ArtifactKind::sensitivity_csv: return "sensitivity_csv";
        case ArtifactKind::trajectory_csv: return "trajectory_csv";
        case ArtifactKind::tuning_report: return "tuning_report";
        case ArtifactKind::stability_report: return "stability_report";
        case ArtifactKind::controller_export: return "controller_export";
    }
    return "?";
}

struct RunArtifact {
    ArtifactKind kind;
    std::filesystem::path path;
    std::string command;
    std::string config_hash;
    std::string timestamp;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream out;
    out << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

inline json manifest_json(const std::vector<RunArtifact>& artifacts) {
    json list = json::array();
    for (const auto& a : artifacts) {
        list.push_back({{"kind", to_string(a.kind)},
                        {"path", a.path.filename().string()},
                        {"command", a.command},
                        {"config_hash", a.config_hash},
                        {"timestamp", a.timestamp}});
    }
    return json{{"artifacts", list}};
}

// ---------------------------------------------------------------------------
// Controller export

/// Tustin map of a state-space model: (I - A T/2)^-1 based, state-preserving.
inline StateSpaceModel tustin_state_space(const StateSpaceModel& ss, double sample_time) {
    require(sample_time > 0.0, "sample_time must be positive");
    const auto n = ss.states();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix Minv = (I - ss.A * (sample_time / 2.0)).inverse();
    return StateSpaceModel{Minv * (I + ss.A * (sample_time / 2.0)), Minv * ss.B * sample_time, ss.C * Minv,
                           ss.D + ss.C * Minv * ss.B * (sample_time / 2.0)};
}

inline void write_coefficients(std::ostream& out, const char* label, const Poly& p) {
    out << label;
    for (double c : p) out << ' ' << csv::number(c);
    out << '\n';
}

/// Plain-text controller description for a fixed-rate target.
inline void write_controller_export(std::ostream& out, const CgLpPidParams& params, double sample_time,
                                    int reset_holdoff) {
    params.validate();
    const auto controller = assemble_controller(params);
    out << "# CgLp + PID controller, Tustin discretization\n";
    out << "sample_time_s " << csv::number(sample_time) << '\n';
    out << "gamma " << csv::number(params.gamma) << '\n';
    out << "kp " << csv::number(params.kp) << '\n';
    out << "reset_holdoff_samples " << reset_holdoff << '\n';
    out << "reset_rule reset_filter.x <- gamma * reset_filter.x when e[k] * e[k-1] < 0 or "
           "(e[k] == 0 and e[k-1] != 0), skipped if a reset fired within the previous reset_holdoff_samples "
           "samples\n";
    out << "series_order reset_filter cglp_lead pi lead_lag (kp applied to the product)\n";

    struct Factor {
        const char* name;
        TransferFunction tf;
    };
    const std::vector<Factor> factors{
        {"reset_filter", controller.reset_base},
        {"cglp_lead", factors::lead_lag(params.omega_r, params.omega_f)},
        {"pi", factors::pi_factor(params.omega_i)},
        {"lead_lag", factors::lead_lag(params.omega_d, params.omega_t)},
    };
    for (const auto& f : factors) {
        const auto d = tustin_discretize(f.tf, sample_time);
        out << "\nfactor " << f.name << '\n';
        write_coefficients(out, "  continuous_num", f.tf.numerator());
        write_coefficients(out, "  continuous_den", f.tf.denominator());
        write_coefficients(out, "  discrete_num", d.numerator);
        write_coefficients(out, "  discrete_den", d.denominator);
    }

    // The reset acts on a state, so the reset filter is also given in state-space form.
    const auto ss = tustin_state_space(controller.reset_part.base, sample_time);
    out << "\nreset_filter_state_space x[k+1] = ad x[k] + bd e[k]; v[k] = cd x[k] + dd e[k]\n";
    out << "  ad " << csv::number(ss.A(0, 0)) << '\n';
    out << "  bd " << csv::number(ss.B(0, 0)) << '\n';
    out << "  cd " << csv::number(ss.C(0, 0)) << '\n';
    out << "  dd " << csv::number(ss.D(0, 0)) << '\n';
}

}  // namespace cglp
