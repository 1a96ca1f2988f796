#pragma once

// Linear time-invariant building blocks: polynomials, rational transfer functions
// with an optional pure delay, state-space realizations, frequency grids and
// Tustin discretization.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cglp/error.hpp"

namespace cglp {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;

/// Real polynomial, coefficients in descending powers.
using Poly = std::vector<double>;

namespace poly {

/// Drops leading zeros, keeping at least one coefficient.
inline Poly trim(Poly p) {
    auto first = std::find_if(p.begin(), p.end(), [](double c) { return c != 0.0; });
    if (first == p.end()) return Poly{0.0};
    p.erase(p.begin(), first);
    return p;
}

inline std::size_t degree(const Poly& p) { return trim(p).size() - 1; }

inline Poly multiply(const Poly& a, const Poly& b) {
    if (a.empty() || b.empty()) return {};
    Poly out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

inline Poly add(const Poly& a, const Poly& b) {
    Poly out(std::max(a.size(), b.size()), 0.0);
    const std::size_t oa = out.size() - a.size();
    const std::size_t ob = out.size() - b.size();
    for (std::size_t i = 0; i < a.size(); ++i) out[oa + i] += a[i];
    for (std::size_t i = 0; i < b.size(); ++i) out[ob + i] += b[i];
    return out;
}

inline Poly scale(Poly p, double k) {
    for (auto& c : p) c *= k;
    return p;
}

inline Poly power(const Poly& p, std::size_t n) {
    Poly out{1.0};
    for (std::size_t i = 0; i < n; ++i) out = multiply(out, p);
    return out;
}

template <typename T>
T evaluate(const Poly& p, T x) {
    T acc{0.0};
    for (double c : p) acc = acc * x + c;
    return acc;
}

}  // namespace poly

/// Strictly increasing list of positive angular frequencies (rad/s).
class FrequencyGrid {
public:
    enum class Spacing { logarithmic, linear };

    FrequencyGrid(std::vector<double> omegas, Spacing spacing)
        : omegas_(std::move(omegas)), spacing_(spacing) {
        require(!omegas_.empty(), "frequency grid must not be empty");
        for (std::size_t i = 0; i < omegas_.size(); ++i) {
            require(std::isfinite(omegas_[i]) && omegas_[i] > 0.0,
                    "frequency grid entries must be positive and finite");
            if (i > 0)
                require(omegas_[i] > omegas_[i - 1], "frequency grid must be strictly increasing");
        }
    }

    static FrequencyGrid logarithmic(double lo, double hi, std::size_t points) {
        require(lo > 0.0 && hi >= lo, "log grid needs 0 < lo <= hi");
        require(points >= 1, "grid needs at least one point");
        if (points == 1 || lo == hi) return FrequencyGrid({lo}, Spacing::logarithmic);
        std::vector<double> w(points);
        const double a = std::log10(lo);
        const double b = std::log10(hi);
        for (std::size_t i = 0; i < points; ++i)
            w[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
        w.front() = lo;
        w.back() = hi;
        return FrequencyGrid(std::move(w), Spacing::logarithmic);
    }

    static FrequencyGrid linear(double lo, double hi, std::size_t points) {
        require(lo > 0.0 && hi >= lo, "linear grid needs 0 < lo <= hi");
        require(points >= 1, "grid needs at least one point");
        if (points == 1 || lo == hi) return FrequencyGrid({lo}, Spacing::linear);
        std::vector<double> w(points);
        for (std::size_t i = 0; i < points; ++i)
            w[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        return FrequencyGrid(std::move(w), Spacing::linear);
    }

    const std::vector<double>& omegas() const { return omegas_; }
    Spacing spacing() const { return spacing_; }
    std::size_t size() const { return omegas_.size(); }
    double operator[](std::size_t i) const { return omegas_[i]; }
    auto begin() const { return omegas_.begin(); }
    auto end() const { return omegas_.end(); }

private:
    std::vector<double> omegas_;
    Spacing spacing_;
};

/// Real-coefficient rational function of s, optionally followed by e^{-s*delay}.
class RationalTransferFunction {
public:
    RationalTransferFunction() : num_{1.0}, den_{1.0} {}

    RationalTransferFunction(Poly numerator, Poly denominator, double delay = 0.0)
        : num_(poly::trim(std::move(numerator))), den_(std::move(denominator)), delay_(delay) {
        require(!den_.empty() && den_.front() != 0.0,
                "denominator leading coefficient must be nonzero");
        for (double c : num_) require(std::isfinite(c), "numerator coefficients must be finite");
        for (double c : den_) require(std::isfinite(c), "denominator coefficients must be finite");
        require(num_.size() <= den_.size(), "transfer function must be proper");
        require(std::isfinite(delay_) && delay_ >= 0.0, "delay must be non-negative");
    }

    static RationalTransferFunction gain(double k) { return {Poly{k}, Poly{1.0}}; }

    const Poly& numerator() const { return num_; }
    const Poly& denominator() const { return den_; }
    double delay() const { return delay_; }
    std::size_t order() const { return den_.size() - 1; }
    bool strictly_proper() const {
        return num_.size() < den_.size() || (num_.size() == 1 && num_.front() == 0.0);
    }

    /// Rational part only; the delay factor is not applied.
    Complex rational_at(Complex s) const {
        return poly::evaluate(num_, s) / poly::evaluate(den_, s);
    }

    /// Value at s = j*omega including the delay factor.
    Complex at(double omega) const {
        const Complex s{0.0, omega};
        const Complex d = poly::evaluate(den_, s);
        if (d == Complex{0.0, 0.0}) {
            std::ostringstream msg;
            msg << "denominator vanishes at omega = " << omega << " rad/s";
            fail(ErrorKind::PoleOnImaginaryAxis, msg.str());
        }
        Complex value = poly::evaluate(num_, s) / d;
        if (delay_ != 0.0) value *= std::polar(1.0, -omega * delay_);
        return value;
    }

    /// The same rational part with the delay dropped.
    RationalTransferFunction without_delay() const { return {num_, den_, 0.0}; }

    friend bool operator==(const RationalTransferFunction&, const RationalTransferFunction&) = default;

private:
    Poly num_;
    Poly den_;
    double delay_{0.0};
};

using TransferFunction = RationalTransferFunction;

inline std::vector<Complex> frequency_response(const TransferFunction& tf, const FrequencyGrid& grid) {
    std::vector<Complex> out;
    out.reserve(grid.size());
    for (double w : grid) out.push_back(tf.at(w));
    return out;
}

/// First-order Pade all-pass (-s + c)/(s + c) with c = 2/delay unless a corner override is given.
inline TransferFunction pade_first_order(double delay, std::optional<double> corner_override = {}) {
    require(std::isfinite(delay) && delay > 0.0, "Pade delay must be positive");
    const double c = corner_override.value_or(2.0 / delay);
    require(c > 0.0, "Pade corner must be positive");
    return {Poly{-1.0, c}, Poly{1.0, c}};
}

inline TransferFunction series_connect(std::span<const TransferFunction> factors) {
    require(!factors.empty(), "series_connect needs at least one factor");
    Poly num{1.0};
    Poly den{1.0};
    double delay = 0.0;
    for (const auto& f : factors) {
        num = poly::multiply(num, f.numerator());
        den = poly::multiply(den, f.denominator());
        delay += f.delay();
    }
    return {std::move(num), std::move(den), delay};
}

inline TransferFunction series_connect(std::initializer_list<TransferFunction> factors) {
    return series_connect(std::span<const TransferFunction>(factors.begin(), factors.size()));
}

/// Replaces the pure delay by its first-order Pade approximant.
inline TransferFunction with_pade(const TransferFunction& tf, std::optional<double> corner_override = {}) {
    if (tf.delay() == 0.0) return tf;
    return series_connect({tf.without_delay(), pade_first_order(tf.delay(), corner_override)});
}

struct StateSpaceModel {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix D;

    StateSpaceModel() : A(0, 0), B(0, 1), C(1, 0), D(Matrix::Zero(1, 1)) {}

    StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d)
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
        require(A.rows() == A.cols(), "A must be square");
        require(B.rows() == A.rows(), "B row count must match A");
        require(C.cols() == A.cols(), "C column count must match A");
        require(D.rows() == C.rows() && D.cols() == B.cols(), "D must be p x m");
    }

    Eigen::Index states() const { return A.rows(); }
    Eigen::Index inputs() const { return B.cols(); }
    Eigen::Index outputs() const { return C.rows(); }
    bool siso() const { return inputs() == 1 && outputs() == 1; }

    /// C (jw I - A)^-1 B + D for a SISO model.
    Complex at(double omega) const {
        require(siso(), "frequency response is defined for SISO models only");
        const Eigen::Index n = states();
        if (n == 0) return Complex{D(0, 0), 0.0};
        ComplexMatrix M = ComplexMatrix::Identity(n, n) * Complex{0.0, omega} - A.cast<Complex>();
        Eigen::PartialPivLU<ComplexMatrix> lu(M);
        if (std::abs(lu.determinant()) == 0.0) {
            std::ostringstream msg;
            msg << "jwI - A singular at omega = " << omega << " rad/s";
            fail(ErrorKind::ImaginaryAxisPole, msg.str());
        }
        Eigen::VectorXcd x = lu.solve(B.cast<Complex>());
        return (C.cast<Complex>() * x)(0, 0) + D(0, 0);
    }
};

/// Controllable canonical realization; the delay field is ignored.
inline StateSpaceModel tf_to_state_space(const TransferFunction& tf) {
    const Poly& den = tf.denominator();
    const std::size_t n = den.size() - 1;
    const double a0 = den.front();
    Poly num(den.size(), 0.0);
    const Poly& raw = tf.numerator();
    std::copy(raw.begin(), raw.end(), num.begin() + static_cast<std::ptrdiff_t>(num.size() - raw.size()));

    const double d = num.front() / a0;
    const auto ni = static_cast<Eigen::Index>(n);
    Matrix A = Matrix::Zero(ni, ni);
    Matrix B = Matrix::Zero(ni, 1);
    Matrix C = Matrix::Zero(1, ni);
    Matrix D = Matrix::Constant(1, 1, d);
    if (n > 0) {
        for (std::size_t i = 0; i < n; ++i) {
            A(0, static_cast<Eigen::Index>(i)) = -den[i + 1] / a0;
            C(0, static_cast<Eigen::Index>(i)) = num[i + 1] / a0 - d * den[i + 1] / a0;
        }
        for (Eigen::Index i = 1; i < ni; ++i) A(i, i - 1) = 1.0;
        B(0, 0) = 1.0;
    }
    return {std::move(A), std::move(B), std::move(C), std::move(D)};
}

namespace detail {

/// Monic characteristic polynomial det(sI - A) from the eigenvalues of A.
inline Poly characteristic_poly(const Matrix& A) {
    if (A.rows() == 0) return Poly{1.0};
    const Eigen::VectorXcd roots = A.eigenvalues();
    std::vector<Complex> acc{Complex(1.0)};
    for (Eigen::Index k = 0; k < roots.size(); ++k) {
        std::vector<Complex> next(acc.size() + 1, Complex(0.0));
        for (std::size_t i = 0; i < acc.size(); ++i) {
            next[i] += acc[i];
            next[i + 1] -= acc[i] * roots(k);
        }
        acc = std::move(next);
    }
    Poly out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = acc[i].real();
    return out;
}

}  // namespace detail

/// SISO state-space model back to a rational function, using
/// C adj(sI - A) B = det(sI - A + BC) - det(sI - A).
inline TransferFunction state_space_to_tf(const StateSpaceModel& ss) {
    require(ss.siso(), "state_space_to_tf needs a SISO model");
    const Poly den = detail::characteristic_poly(ss.A);
    const Poly closed = detail::characteristic_poly(ss.A - ss.B * ss.C);
    Poly num = poly::add(poly::add(closed, poly::scale(den, -1.0)), poly::scale(den, ss.D(0, 0)));
    return {poly::trim(num), den};
}

/// Discrete transfer function in descending powers of z.
struct DiscreteTransferFunction {
    Poly numerator;
    Poly denominator;
    double sample_time{0.0};

    Complex at_z(Complex z) const {
        return poly::evaluate(numerator, z) / poly::evaluate(denominator, z);
    }
};

/// Bilinear substitution s <- (2/T)(z-1)/(z+1); the result is normalized to a monic denominator.
inline DiscreteTransferFunction tustin_discretize(const TransferFunction& tf, double sample_time) {
    require(std::isfinite(sample_time) && sample_time > 0.0, "sample time must be positive");
    require(tf.delay() == 0.0, "tustin_discretize needs a delay-free transfer function");
    const std::size_t n = tf.denominator().size() - 1;
    const double k = 2.0 / sample_time;

    auto map = [&](const Poly& p) {
        Poly padded(n + 1, 0.0);
        std::copy(p.begin(), p.end(), padded.begin() + static_cast<std::ptrdiff_t>(padded.size() - p.size()));
        Poly out(n + 1, 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            const std::size_t s_power = n - i;
            if (padded[i] == 0.0) continue;
            Poly term = poly::multiply(poly::power(Poly{1.0, -1.0}, s_power), poly::power(Poly{1.0, 1.0}, i));
            out = poly::add(out, poly::scale(term, padded[i] * std::pow(k, static_cast<double>(s_power))));
        }
        return out;
    };

    Poly num = map(tf.numerator());
    Poly den = map(tf.denominator());
    // A pole at s = -2/T cancels the leading z power; reported as-is after dropping it.
    while (den.size() > 1 && den.front() == 0.0 && num.front() == 0.0) {
        den.erase(den.begin());
        num.erase(num.begin());
    }
    require(den.front() != 0.0, "bilinear map produced an improper discrete transfer function");
    const double lead = den.front();
    return {poly::scale(num, 1.0 / lead), poly::scale(den, 1.0 / lead), sample_time};
}

inline std::string to_string(const Poly& p) {
    std::ostringstream out;
    out.precision(10);
    out << '[';
    for (std::size_t i = 0; i < p.size(); ++i) out << (i ? ", " : "") << p[i];
    out << ']';
    return out.str();
}

}  // namespace cglp
