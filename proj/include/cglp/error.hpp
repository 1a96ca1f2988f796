#pragma once

#include <stdexcept>
#include <string>

namespace cglp {

enum class ErrorKind {
    InvalidArgument,
    PoleOnImaginaryAxis,
    ThetaSingularity,
    ResonantSystemMatrix,
    ImaginaryAxisPole,
    Precondition,
    AlphaFitNotConverged,
    CrossoverUnreachable,
    PhaseUnwrapFailed,
    Divergence,
    NoResetEvents,
    NotConverged,
    StabilityUnverified,
    Config,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid argument";
        case ErrorKind::PoleOnImaginaryAxis: return "pole on imaginary axis";
        case ErrorKind::ThetaSingularity: return "theta singularity";
        case ErrorKind::ResonantSystemMatrix: return "resonant A_r";
        case ErrorKind::ImaginaryAxisPole: return "imaginary-axis pole";
        case ErrorKind::Precondition: return "precondition violated";
        case ErrorKind::AlphaFitNotConverged: return "alpha fit did not converge";
        case ErrorKind::CrossoverUnreachable: return "crossover unreachable";
        case ErrorKind::PhaseUnwrapFailed: return "phase unwrap failed";
        case ErrorKind::Divergence: return "divergence detected";
        case ErrorKind::NoResetEvents: return "no reset events";
        case ErrorKind::NotConverged: return "steady state not reached";
        case ErrorKind::StabilityUnverified: return "stability unverified";
        case ErrorKind::Config: return "config error";
    }
    return "unknown";
}

/// Every failure raised by the library carries a kind so front ends can map it to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::InvalidArgument, message);
}

}  // namespace cglp
