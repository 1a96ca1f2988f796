#pragma once

// Reference computations used by the tests. None of them call into the library's
// describing-function or simulation code.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracle {

using cd = std::complex<double>;
inline constexpr double pi = std::numbers::pi;

// Theta of the scalar element p/(s + p) with reset gain g.
inline double fore_theta(double p, double g, double w) {
    const double a = -p;
    const double e = std::exp(pi * a / w);
    const double bracket = g * (1.0 + e) / (1.0 + g * e) - 1.0;
    return (-2.0 * w * w / pi) * (1.0 + e) * bracket / (w * w + a * a);
}

// First harmonic of the exact periodic response of p/(s + p) with reset gain g to sin(w t).
// The flow has a closed form and resets happen at t = k pi / w.
inline cd fore_first_harmonic(double p, double g, double w, int samples = 20000) {
    const double half = pi / w;
    auto xp = [&](double t) { return p / (p * p + w * w) * (p * std::sin(w * t) - w * std::cos(w * t)); };
    const double q = std::exp(-p * half);
    // x(0+) = g x(0-) and x(0-) = -x(half-) by half-wave antisymmetry.
    const double x0 = -g * (xp(half) - xp(0.0) * q) / (1.0 + g * q);
    auto x = [&](double t) { return xp(t) + (x0 - xp(0.0)) * std::exp(-p * t); };

    // Simpson over one half period; the response is half-wave antisymmetric.
    const int n = samples % 2 == 0 ? samples : samples + 1;
    const double h = half / n;
    double s_sin = 0.0, s_cos = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double t = k * h;
        const double wgt = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        s_sin += wgt * x(t) * std::sin(w * t);
        s_cos += wgt * x(t) * std::cos(w * t);
    }
    s_sin *= h / 3.0;
    s_cos *= h / 3.0;
    const double period = 2.0 * half;
    const double b1 = 4.0 / period * s_sin;
    const double a1 = 4.0 / period * s_cos;
    return {b1, a1};
}

// Least-squares fit of y = b sin(w t) + a cos(w t) + c; returns b + j a.
inline cd harmonic_fit(const std::vector<double>& t, const std::vector<double>& y, double w) {
    double m[3][3] = {};
    double r[3] = {};
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double f[3] = {std::sin(w * t[k]), std::cos(w * t[k]), 1.0};
        for (int i = 0; i < 3; ++i) {
            r[i] += f[i] * y[k];
            for (int j = 0; j < 3; ++j) m[i][j] += f[i] * f[j];
        }
    }
    // Cramer's rule on the 3x3 normal equations.
    auto det = [](double a[3][3]) {
        return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
               a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    };
    const double d = det(m);
    double sol[3];
    for (int c = 0; c < 3; ++c) {
        double mc[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) mc[i][j] = j == c ? r[i] : m[i][j];
        sol[c] = det(mc) / d;
    }
    return {sol[0], sol[1]};
}

// Open-loop polynomial evaluation, descending coefficients.
inline cd polyval(const std::vector<double>& c, cd s) {
    cd acc = 0.0;
    for (double v : c) acc = acc * s + v;
    return acc;
}

}  // namespace oracle
