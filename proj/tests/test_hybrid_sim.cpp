#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>

#include "cglp/benchmark.hpp"
#include "cglp/hybrid_sim.hpp"
#include "oracles.hpp"

using namespace cglp;

namespace {

constexpr double pi = std::numbers::pi;

ClosedLoopSystem published_loop() { return make_closed_loop(benchmark::stage_plant(), benchmark::cglp_controller()); }

ClosedLoopSystem pid_loop() { return make_closed_loop(benchmark::stage_plant(), benchmark::pid_controller()); }

// Step response of e from r = 1 using the exact zero-order-hold discretization of the loop's flow.
std::vector<double> exact_step(const ClosedLoopSystem& sys, double h, std::size_t steps) {
    const Eigen::Index n = sys.A.rows();
    Matrix aug = Matrix::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = sys.A * h;
    aug.topRightCorner(n, 1) = sys.B.col(0) * h;
    const Matrix phi = aug.exp();
    Vector x = Vector::Zero(n);
    std::vector<double> out;
    for (std::size_t k = 0; k <= steps; ++k) {
        out.push_back(sys.Ce.row(0).dot(x) + sys.De(0, 0));
        x = phi.topLeftCorner(n, n) * x + phi.topRightCorner(n, 1);
    }
    return out;
}

}  // namespace

TEST(Simulate, UnitGammaMatchesLinearStep) {
    const auto sys = pid_loop();
    ASSERT_FALSE(sys.resetting());
    SimConfig cfg;
    cfg.step_size = 1e-5;
    const auto traj = simulate(sys, {Signal::step(1.0), {}, {}}, cfg, 0.05);
    const auto ref = exact_step(sys, cfg.step_size, traj.size() - 1);
    double peak = 0.0;
    for (double v : ref) peak = std::max(peak, std::abs(v));
    for (std::size_t k = 0; k < traj.size(); ++k) EXPECT_LT(std::abs(traj.e[k] - ref[k]), 1e-6 * peak) << k;
    EXPECT_TRUE(traj.reset_instants.empty());
}

TEST(Simulate, JumpSemantics) {
    const auto sys = published_loop();
    SimConfig cfg;
    const auto traj = simulate(sys, {Signal::sine(1.0, 10.0 * pi), {}, {}}, cfg, 0.5);
    ASSERT_GT(traj.reset_log.size(), 5u);
    const double g = benchmark::cglp_controller().gamma;
    for (const auto& ev : traj.reset_log) {
        for (Eigen::Index i = 0; i < ev.pre_state.size(); ++i) {
            if (i < sys.reset_states)
                EXPECT_NEAR(ev.post_state(i), g * ev.pre_state(i), 1e-12 * std::max(1.0, std::abs(ev.pre_state(i))));
            else
                EXPECT_EQ(ev.post_state(i), ev.pre_state(i));
        }
    }
}

TEST(Simulate, OpenLoopResetsAtInputZeroCrossings) {
    const double w = 3.0;
    const auto sys = open_loop_system(ResetElement::fore(1.0, 0.3));
    SimConfig cfg;
    cfg.step_size = 1e-3;
    const auto traj = simulate(sys, {Signal::sine(1.0, w), {}, {}}, cfg, 10.0);
    ASSERT_FALSE(traj.reset_instants.empty());
    for (double t : traj.reset_instants) {
        const double k = std::round(t * w / pi);
        EXPECT_NEAR(t, k * pi / w, 2.0 * cfg.crossing_tol + 1e-12) << t;
    }
    for (const auto& ev : traj.reset_log) EXPECT_LE(std::abs(ev.error), w * cfg.crossing_tol * 1.01);
    // One reset per half period.
    EXPECT_EQ(traj.reset_instants.size(), static_cast<std::size_t>(std::floor(10.0 * w / pi)));
}

TEST(Simulate, HoldoffSpacing) {
    const auto sys = published_loop();
    SimConfig cfg;
    cfg.reset_holdoff = 3;
    const Excitation ex{{}, Signal::uniform_noise(5e-6, 2e-5, 1, 0.05), {}};
    const auto traj = simulate(sys, ex, cfg, 0.05);
    ASSERT_GT(traj.reset_instants.size(), 10u);
    for (std::size_t k = 1; k < traj.reset_instants.size(); ++k) {
        EXPECT_GT(traj.reset_instants[k], traj.reset_instants[k - 1]);
        EXPECT_GE(traj.reset_instants[k] - traj.reset_instants[k - 1], 3 * cfg.step_size * (1.0 - 1e-9));
    }
    std::size_t flagged = 0;
    for (auto f : traj.reset_flags) flagged += f;
    EXPECT_EQ(flagged, traj.reset_instants.size());
}

TEST(Simulate, AlignedOutputs) {
    const auto traj = simulate(pid_loop(), {Signal::step(1.0), {}, {}}, SimConfig{}, 0.01);
    EXPECT_EQ(traj.size(), 1001u);
    for (auto* v : {&traj.r, &traj.e, &traj.u, &traj.y}) EXPECT_EQ(v->size(), traj.size());
    EXPECT_EQ(traj.reset_flags.size(), traj.size());
}

TEST(Simulate, DivergenceReported) {
    const ResetElement unstable{StateSpaceModel(Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1),
                                                Matrix::Zero(1, 1)),
                                Matrix::Ones(1, 1)};
    SimConfig cfg;
    cfg.step_size = 1e-3;
    try {
        (void)simulate(open_loop_system(unstable), {Signal::step(1.0), {}, {}}, cfg, 100.0);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Divergence);
        EXPECT_NE(std::string(e.what()).find("t = "), std::string::npos);
    }
}

TEST(Simulate, RejectsBadInput) {
    EXPECT_THROW(simulate(pid_loop(), {}, SimConfig{}, 0.0), Error);
    EXPECT_THROW(Signal::sine(std::nan(""), 1.0), Error);
    SimConfig cfg;
    cfg.reset_holdoff = 0;
    EXPECT_THROW(simulate(pid_loop(), {}, cfg, 1.0), Error);
}

TEST(Simulate, NoiseDeterministic) {
    const auto sys = published_loop();
    auto run = [&](std::uint64_t seed) {
        return simulate(sys, {{}, Signal::uniform_noise(5e-6, 1e-4, seed, 0.02), {}}, SimConfig{}, 0.02);
    };
    const auto a = run(42);
    const auto b = run(42);
    const auto c = run(43);
    EXPECT_EQ(a.e, b.e);
    EXPECT_EQ(a.reset_instants, b.reset_instants);
    EXPECT_NE(a.e, c.e);
}

TEST(Signal, NoiseHeldAndBounded) {
    const auto n = Signal::uniform_noise(2.0, 0.1, 7, 1.0);
    for (int k = 0; k < 10; ++k) {
        const double v = n.value(0.1 * k + 0.01);
        EXPECT_GE(v, -2.0);
        EXPECT_LT(v, 2.0);
        EXPECT_EQ(v, n.value(0.1 * k + 0.09));
    }
}

TEST(Signal, TriangleShape) {
    const auto tri = Signal::triangle(3.0, 2.0);
    EXPECT_NEAR(tri.value(0.0), 0.0, 1e-15);
    EXPECT_NEAR(tri.value(0.5), 3.0, 1e-15);
    EXPECT_NEAR(tri.value(1.0), 0.0, 1e-15);
    EXPECT_NEAR(tri.value(1.5), -3.0, 1e-15);
}

TEST(DescribingFunctionOracle, SimulatedFirstHarmonic) {
    for (double g : {0.0, 0.3, 0.5}) {
        for (double w : {0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0}) {
            const auto el = ResetElement::fore(1.0, g);
            const auto sys = open_loop_system(el);
            const double period = 2.0 * pi / w;
            SimConfig cfg;
            cfg.step_size = period / 4000.0;
            const double settle = std::max(8.0, std::ceil(10.0 / period)) * period;
            auto traj = simulate(sys, {Signal::sine(1.0, w), {}, {}}, cfg, settle + period);
            traj.discard_before(settle);
            const auto fit = oracle::harmonic_fit(traj.times, traj.u, w);
            const Complex df = describing_function(el, w);
            EXPECT_LT(std::abs(fit - df) / std::abs(df), 0.02) << "g=" << g << " w=" << w;
            // The exact periodic solution pins the same value tightly.
            EXPECT_LT(std::abs(oracle::fore_first_harmonic(1.0, g, w) - df) / std::abs(df), 1e-9);
        }
    }
}

TEST(SteadyState, LinearUsesLastPeriod) {
    const auto sys = open_loop_system(ResetElement::fore(5.0, 1.0));
    SimConfig cfg;
    cfg.step_size = 1e-3;
    const double w = 2.0 * pi;
    const auto traj = simulate(sys, {Signal::sine(1.0, w), {}, {}}, cfg, 6.0);
    const auto win = steady_state_window(traj, w, cfg);
    EXPECT_TRUE(win.converged);
    EXPECT_TRUE(win.last_period_fallback);
    EXPECT_NEAR(win.end, 6.0, 1e-9);
    EXPECT_NEAR(win.start, 5.0, 1e-9);
}

TEST(SteadyState, NoResetsDiagnosed) {
    const auto sys = published_loop();
    SimConfig cfg;
    const auto traj = simulate(sys, {}, cfg, 0.01);
    const auto win = steady_state_window(traj, 10.0, cfg);
    EXPECT_FALSE(win.converged);
    EXPECT_EQ(win.diagnostic, "no reset events");
}

TEST(PseudoSensitivity, NonConvergentFlaggedWithoutThrow) {
    // Loop 1/s^2 closed with unity feedback: an undamped mode at 1 rad/s never dies out.
    AssembledController c{ResetElement::clegg(1.0), TransferFunction{{1.0}, {1.0, 0.0}}, TransferFunction::gain(1.0), {}};
    const auto sys = detail::assemble_loop(TransferFunction{{1.0}, {1.0, 0.0}}, std::move(c));
    SimConfig cfg;
    cfg.max_periods = 20;
    const auto p = pseudo_sensitivity(sys, 2.5, SensitivityKind::S, 1.0, cfg);
    EXPECT_FALSE(p.converged);
    EXPECT_EQ(p.periods, 20);
    EXPECT_FALSE(p.diagnostic.empty());
}

TEST(PseudoSensitivity, RefusesUnverifiedStability) {
    auto sys = published_loop();
    sys.hbeta = StabilityVerdict{};
    try {
        (void)pseudo_sensitivity(sys, 10.0 * pi, SensitivityKind::S);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::StabilityUnverified);
    }
    EXPECT_THROW(sensitivity_sweep(sys, FrequencyGrid::logarithmic(10.0, 100.0, 2), SensitivityKind::S), Error);
}

TEST(PseudoSensitivity, LinearLoopMatchesAllKinds) {
    const auto sys = pid_loop();
    for (auto kind : {SensitivityKind::S, SensitivityKind::T, SensitivityKind::CS, SensitivityKind::PS}) {
        for (double hz : {2.0, 40.0, 150.0}) {
            const double w = 2.0 * pi * hz;
            const auto p = pseudo_sensitivity(sys, w, kind);
            ASSERT_TRUE(p.converged) << to_string(kind) << " " << hz;
            const double expect = std::abs(base_linear_response(sys, kind, w));
            EXPECT_LT(std::abs(p.magnitude() - expect) / expect, 0.01) << to_string(kind) << " " << hz;
        }
    }
}

TEST(PseudoSensitivity, PeriodicAtFiveHz) {
    const auto sys = published_loop();
    SimConfig cfg;
    const auto p = pseudo_sensitivity(sys, 10.0 * pi, SensitivityKind::S, 1.0, cfg);
    EXPECT_TRUE(p.converged);
    EXPECT_LE(p.periods, cfg.max_periods);
    EXPECT_LE(p.periodicity_error, cfg.convergence_tol);
    EXPECT_GT(p.magnitude(), 0.0);
}

TEST(PseudoSensitivity, StepHalvingConverges) {
    const auto sys = published_loop();
    SimConfig coarse;
    SimConfig fine;
    fine.step_size = coarse.step_size / 2.0;
    fine.min_steps_per_period = coarse.min_steps_per_period * 2;
    const auto a = pseudo_sensitivity(sys, 10.0 * pi, SensitivityKind::S, 1.0, coarse);
    const auto b = pseudo_sensitivity(sys, 10.0 * pi, SensitivityKind::S, 1.0, fine);
    ASSERT_TRUE(a.converged && b.converged);
    EXPECT_LT(std::abs(a.e_max - b.e_max) / std::abs(b.e_max), 0.005);
}

TEST(PseudoSensitivity, SweepFlagsAndPredicts) {
    const auto sys = pid_loop();
    const auto grid = FrequencyGrid::logarithmic(2.0 * pi * 5.0, 2.0 * pi * 200.0, 4);
    const auto curve = sensitivity_sweep(sys, grid, SensitivityKind::S, SimConfig{}, 1);
    ASSERT_EQ(curve.points.size(), 4u);
    EXPECT_TRUE(curve.all_converged());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double pred = std::abs(curve.df_prediction[k]);
        EXPECT_LT(std::abs(curve.points[k].magnitude() - pred) / pred, 0.01);
    }
}
