#pragma once

// Reset elements, their sinusoidal-input describing functions and the
// PID + CgLp controller structure used for tuning.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "cglp/error.hpp"
#include "cglp/lti.hpp"

namespace cglp {

/// Linear base system (A_r, B_r, C_r, D_r) whose state jumps to A_rho * x when its input crosses zero.
struct ResetElement {
    StateSpaceModel base;
    Matrix reset_matrix;

    ResetElement(StateSpaceModel base_system, Matrix reset)
        : base(std::move(base_system)), reset_matrix(std::move(reset)) {
        require(base.siso(), "reset element must be SISO");
        require(reset_matrix.rows() == base.states() && reset_matrix.cols() == base.states(),
                "reset matrix must be square with the state dimension");
    }

    /// First-order reset element p/(s + p) with scalar reset gain.
    static ResetElement fore(double pole, double gamma) {
        require(pole > 0.0, "FORE pole must be positive");
        return {tf_to_state_space(TransferFunction{Poly{pole}, Poly{1.0, pole}}),
                Matrix::Constant(1, 1, gamma)};
    }

    /// Clegg integrator 1/s with scalar reset gain.
    static ResetElement clegg(double gamma) {
        return {StateSpaceModel(Matrix::Zero(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1),
                                Matrix::Zero(1, 1)),
                Matrix::Constant(1, 1, gamma)};
    }

    Eigen::Index states() const { return base.states(); }

    /// Response of the base linear system (no reset).
    Complex base_at(double omega) const { return base.at(omega); }
};

namespace detail {

inline Matrix reset_exponential(const Matrix& A, double omega) {
    return Matrix((std::numbers::pi / omega * A).exp());
}

/// Smallest singular value below 1e-12 of `scale`.
inline bool nearly_singular(const Matrix& M, double scale) {
    if (M.rows() == 0) return false;
    const Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues().minCoeff() <= 1e-12 * scale;
}

}  // namespace detail

/// Theta(omega) of the describing function; real n x n.
inline Matrix theta(const ResetElement& element, double omega) {
    require(std::isfinite(omega) && omega > 0.0, "theta needs omega > 0");
    const Matrix& A = element.base.A;
    const Matrix& Ar = element.reset_matrix;
    const Eigen::Index n = A.rows();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix E = detail::reset_exponential(A, omega);
    const Matrix IE = I + E;

    const Matrix jump_matrix = I + Ar * E;
    if (detail::nearly_singular(jump_matrix, 1.0 + (Ar * E).norm())) {
        std::ostringstream msg;
        msg << "I + A_rho exp(pi A_r / omega) singular at omega = " << omega;
        fail(ErrorKind::ThetaSingularity, msg.str());
    }
    const Matrix resonance_matrix = omega * omega * I + A * A;
    if (detail::nearly_singular(resonance_matrix, omega * omega + (A * A).norm())) {
        std::ostringstream msg;
        msg << "omega^2 I + A_r^2 singular at omega = " << omega;
        fail(ErrorKind::ResonantSystemMatrix, msg.str());
    }
    const Matrix bracket = jump_matrix.fullPivLu().solve(Ar * IE) - I;
    return (-2.0 * omega * omega / std::numbers::pi) * IE * bracket * resonance_matrix.inverse();
}

/// First-harmonic describing function C_r (jwI - A_r)^-1 (I + j Theta) B_r + D_r.
inline Complex describing_function(const ResetElement& element, double omega) {
    const Matrix th = theta(element, omega);
    const auto& sys = element.base;
    const Eigen::Index n = sys.states();
    if (n == 0) return Complex{sys.D(0, 0), 0.0};
    ComplexMatrix M = ComplexMatrix::Identity(n, n) * Complex{0.0, omega} - sys.A.cast<Complex>();
    Eigen::PartialPivLU<ComplexMatrix> lu(M);
    if (std::abs(lu.determinant()) == 0.0) {
        std::ostringstream msg;
        msg << "jwI - A_r singular at omega = " << omega;
        fail(ErrorKind::ImaginaryAxisPole, msg.str());
    }
    ComplexMatrix lift = ComplexMatrix::Identity(n, n) + Complex{0.0, 1.0} * th.cast<Complex>();
    Eigen::VectorXcd x = lu.solve(lift * sys.B.cast<Complex>());
    return (sys.C.cast<Complex>() * x)(0, 0) + sys.D(0, 0);
}

struct WellDefinedness {
    bool well_defined{false};
    double max_real_eigenvalue{0.0};   // of A_r
    double jump_spectral_radius{0.0};  // of A_rho exp(A_r pi / omega)

    explicit operator bool() const { return well_defined; }
};

inline WellDefinedness well_defined(const ResetElement& element, double omega) {
    require(std::isfinite(omega) && omega > 0.0, "well_defined needs omega > 0");
    WellDefinedness out;
    const Matrix& A = element.base.A;
    if (A.rows() == 0) {
        out.max_real_eigenvalue = -std::numeric_limits<double>::infinity();
        out.jump_spectral_radius = 0.0;
        out.well_defined = true;
        return out;
    }
    out.max_real_eigenvalue = Eigen::EigenSolver<Matrix>(A, false).eigenvalues().real().maxCoeff();
    const Matrix jump = element.reset_matrix * detail::reset_exponential(A, omega);
    out.jump_spectral_radius = Eigen::EigenSolver<Matrix>(jump, false).eigenvalues().cwiseAbs().maxCoeff();
    out.well_defined = out.max_real_eigenvalue < 0.0 && out.jump_spectral_radius < 1.0;
    return out;
}

/// Tuning tuple of the K_p * CgLp * PI * lead structure. Frequencies in rad/s.
struct CgLpPidParams {
    double kp{1.0};
    double omega_i{0.0};
    double omega_r{0.0};
    double alpha{1.0};
    double omega_f{0.0};
    double omega_d{0.0};
    double omega_t{0.0};
    double gamma{1.0};

    void validate() const {
        auto check = [](bool ok, const char* field, const char* what) {
            if (!ok) fail(ErrorKind::InvalidArgument, std::string(field) + " " + what);
        };
        check(std::isfinite(kp) && kp > 0.0, "kp", "must be > 0");
        check(std::isfinite(omega_i) && omega_i > 0.0, "omega_i", "must be > 0");
        check(std::isfinite(omega_r) && omega_r > 0.0, "omega_r", "must be > 0");
        check(std::isfinite(alpha) && alpha > 0.0, "alpha", "must be > 0");
        check(std::isfinite(omega_f) && omega_f > 0.0, "omega_f", "must be > 0");
        check(std::isfinite(omega_d) && omega_d > 0.0, "omega_d", "must be > 0");
        check(std::isfinite(omega_t) && omega_t > 0.0, "omega_t", "must be > 0");
        check(std::isfinite(gamma) && gamma > -1.0 && gamma <= 1.0, "gamma", "must satisfy -1 < gamma <= 1");
        check(omega_f > omega_r, "omega_f", "must exceed omega_r");
    }

    friend bool operator==(const CgLpPidParams&, const CgLpPidParams&) = default;
};

/// Reset filter 1/(alpha s / omega_r + 1) feeding K_p * lead * PI * lead-lag.
struct AssembledController {
    ResetElement reset_part;
    TransferFunction reset_base;  // base-linear transfer function of reset_part
    TransferFunction linear_part;
    CgLpPidParams params;

    Complex linear_at(double omega) const { return linear_part.at(omega); }

    /// DF of the whole controller: N_reset(jw) * linear(jw).
    Complex df_at(double omega) const {
        return describing_function(reset_part, omega) * linear_part.at(omega);
    }

    /// Base-linear controller (gamma treated as 1).
    Complex base_at(double omega) const { return reset_base.at(omega) * linear_part.at(omega); }

    TransferFunction base_linear() const { return series_connect({reset_base, linear_part}); }
};

namespace factors {

/// (s/zero + 1)/(s/pole + 1)
inline TransferFunction lead_lag(double zero, double pole) {
    return {Poly{1.0 / zero, 1.0}, Poly{1.0 / pole, 1.0}};
}

/// 1/(s/pole + 1)
inline TransferFunction low_pass(double pole) { return {Poly{1.0}, Poly{1.0 / pole, 1.0}}; }

/// 1 + omega_i/s
inline TransferFunction pi_factor(double omega_i) { return {Poly{1.0, omega_i}, Poly{1.0, 0.0}}; }

}  // namespace factors

inline AssembledController assemble_controller(const CgLpPidParams& params) {
    params.validate();
    const double pole = params.omega_r / params.alpha;
    TransferFunction reset_tf = factors::low_pass(pole);
    ResetElement reset(tf_to_state_space(reset_tf), Matrix::Constant(1, 1, params.gamma));
    TransferFunction linear = series_connect({TransferFunction::gain(params.kp),
                                              factors::lead_lag(params.omega_r, params.omega_f),
                                              factors::pi_factor(params.omega_i),
                                              factors::lead_lag(params.omega_d, params.omega_t)});
    return {std::move(reset), std::move(reset_tf), std::move(linear), params};
}

/// DF of the CgLp block alone: reset filter with pole omega_r/alpha times the (s/omega_r+1)/(s/omega_f+1) lead.
inline Complex cglp_df(double omega, double omega_r, double omega_f, double alpha, double gamma) {
    const ResetElement reset(tf_to_state_space(factors::low_pass(omega_r / alpha)),
                             Matrix::Constant(1, 1, gamma));
    return describing_function(reset, omega) * factors::lead_lag(omega_r, omega_f).at(omega);
}

struct AlphaFitOptions {
    double lower{0.5};
    double upper{1.5};
    double tolerance{1e-6};
    int max_iterations{200};
    std::size_t band_points{200};
};

namespace detail {

inline double cglp_flatness(double alpha, double omega_r, double omega_f, double gamma,
                            const FrequencyGrid& band) {
    double worst = 0.0;
    for (double w : band)
        worst = std::max(worst, std::abs(std::abs(cglp_df(w, omega_r, omega_f, alpha, gamma)) - 1.0));
    return worst;
}

}  // namespace detail

/// Max deviation of |DF(CgLp)| from its unit DC gain over [omega_r/10, 10 omega_r].
inline double cglp_gain_deviation(double alpha, double omega_r, double omega_f, double gamma,
                                  std::size_t band_points = 200) {
    const auto band = FrequencyGrid::logarithmic(omega_r / 10.0, omega_r * 10.0, band_points);
    return detail::cglp_flatness(alpha, omega_r, omega_f, gamma, band);
}

/// Correction factor alpha flattening the CgLp DF gain, by golden-section search.
inline double fit_alpha(double omega_r, double omega_f, double gamma, const AlphaFitOptions& opt = {}) {
    require(omega_r > 0.0 && omega_f > omega_r, "fit_alpha needs 0 < omega_r < omega_f");
    require(gamma > -1.0 && gamma <= 1.0, "fit_alpha needs -1 < gamma <= 1");
    if (gamma == 1.0) return 1.0;

    const auto band = FrequencyGrid::logarithmic(omega_r / 10.0, omega_r * 10.0, opt.band_points);
    auto f = [&](double a) { return detail::cglp_flatness(a, omega_r, omega_f, gamma, band); };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = opt.lower;
    double b = opt.upper;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (b - a <= opt.tolerance) return 0.5 * (a + b);
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    std::ostringstream msg;
    msg << "bracket [" << a << ", " << b << "] after " << opt.max_iterations
        << " iterations, best iterate " << (fc < fd ? c : d);
    fail(ErrorKind::AlphaFitNotConverged, msg.str());
}

struct DescribingFunctionCurve {
    FrequencyGrid grid;
    std::vector<Complex> values;
};

/// N_reset(jw) * linear(jw) * G(jw) on the grid.
inline DescribingFunctionCurve open_loop_df(const CgLpPidParams& params, std::span<const Complex> plant_frf,
                                            const FrequencyGrid& grid) {
    require(plant_frf.size() == grid.size(), "plant response must align with the grid");
    const auto controller = assemble_controller(params);
    std::vector<Complex> values;
    values.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) values.push_back(controller.df_at(grid[k]) * plant_frf[k]);
    return {grid, std::move(values)};
}

}  // namespace cglp
